#include "markov_opt/problems.hpp"

#include <cmath>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "markov_opt/chain.hpp"
#include "markov_opt/errors.hpp"
#include "markov_opt/keyvalue.hpp"

namespace markov_opt {

namespace {

constexpr double kMinGapTolerance = 1e-10;
constexpr double kViGapTolerance = 1e-9;
constexpr double kNaturalResidualTolerance = 1e-12;
constexpr int kReferenceIterationLimit = 1000000;

/// Same set without the entropy floor, for projections onto the true feasible set.
Geometry euclidean_twin(const Geometry& g) {
  if (const auto* s = std::get_if<SimplexProductSet>(&g.set())) {
    return Geometry::simplex_product(s->blocks, MirrorMap::kEuclidean);
  }
  return g;
}

double uniform_pm1(std::mt19937_64& rng) { return 2.0 * uniform01(rng) - 1.0; }

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = uniform_pm1(rng);
  }
  return m;
}

void validate_chain_inputs(int dim, const Matrix& shifts, const Vector& pi) {
  if (shifts.rows() != dim) {
    throw InputError(fmt::format("shifts have {} rows, expected {}", shifts.rows(), dim));
  }
  if (shifts.cols() < 1 || pi.size() != shifts.cols()) {
    throw InputError("need one shift column per chain state and a matching pi");
  }
  if (!pi.allFinite() || pi.minCoeff() < 0.0 || std::abs(pi.sum() - 1.0) > 1e-9) {
    throw InputError("pi is not a probability vector");
  }
  if (!shifts.allFinite()) throw InputError("shifts contain NaN or Inf");
  const double drift = (shifts * pi).cwiseAbs().maxCoeff();
  if (drift > 1e-12) {
    throw InputError(fmt::format("shifts have nonzero stationary mean ({:.3g})", drift));
  }
}

double max_dual_norm(const Matrix& shifts, const NormPair& norms) {
  double worst = 0.0;
  for (Eigen::Index z = 0; z < shifts.cols(); ++z) {
    worst = std::max(worst, norms.dual(shifts.col(z)));
  }
  return worst;
}

/// Stationary point of f restricted to the affine hull of the set (no inequality constraints).
std::optional<Vector> affine_stationary_point(const Geometry& g, const Matrix& a, const Vector& b) {
  const Eigen::Index d = a.rows();
  if (const auto* s = std::get_if<SimplexProductSet>(&g.set())) {
    const Eigen::Index k = static_cast<Eigen::Index>(s->blocks.size());
    Matrix kkt = Matrix::Zero(d + k, d + k);
    Vector rhs(d + k);
    kkt.topLeftCorner(d, d) = a;
    rhs.head(d) = b;
    Eigen::Index offset = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const int block = s->blocks[static_cast<std::size_t>(j)];
      kkt.block(offset, d + j, block, 1).setOnes();
      kkt.block(d + j, offset, 1, block).setOnes();
      rhs[d + j] = 1.0;
      offset += block;
    }
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) return std::nullopt;
    return Vector(lu.solve(rhs).head(d));
  }
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  Vector x = ldlt.solve(b);
  if (!x.allFinite() || (a * x - b).norm() > 1e-10 * (1.0 + b.norm())) return std::nullopt;
  return x;
}

}  // namespace

double operator_norm(const Matrix& m, const NormPair& norms) {
  if (m.size() == 0) return 0.0;
  if (norms.p() == 2.0) {
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()[0];
  }
  if (norms.p() == 1.0) return m.cwiseAbs().maxCoeff();
  throw ConfigError(fmt::format("operator norm for p = {} is not supported", norms.p()));
}

ReferenceSolution reference_minimizer(const Geometry& geometry, const Matrix& a, const Vector& b) {
  const Geometry twin = euclidean_twin(geometry);
  auto value = [&](const Vector& x) { return 0.5 * x.dot(a * x) - b.dot(x); };
  auto fw_gap = [&](const Vector& x) {
    const Vector grad = a * x - b;
    return grad.dot(x) - twin.min_linear(grad).value;
  };

  if (auto x = affine_stationary_point(geometry, a, b)) {
    if (twin.contains(*x, 0.0) && fw_gap(*x) <= kMinGapTolerance) {
      return {*x, value(*x)};
    }
  }

  const double lipschitz = a.size() == 0 ? 0.0 : Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().maxCoeff();
  if (lipschitz <= 0.0) {
    Vector x = twin.min_linear(-b).argmin;
    return {x, value(x)};
  }

  // Accelerated projected gradient with gradient-based momentum restart.
  Vector x = twin.center();
  Vector y = x;
  double t = 1.0;
  for (int k = 1; k <= kReferenceIterationLimit; ++k) {
    const Vector next = twin.project(y - (a * y - b) / lipschitz);
    if ((y - next).dot(next - x) > 0.0) {
      t = 1.0;
      y = next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next + ((t - 1.0) / t_next) * (next - x);
      t = t_next;
    }
    x = next;
    if (k % 25 == 0 && fw_gap(x) <= kMinGapTolerance) return {x, value(x)};
  }
  throw SolverError("reference minimizer did not reach the 1e-10 gap within 1e6 iterations");
}

double affine_skew_gap(const Geometry& geometry, const Matrix& q, const Vector& c, const Vector& x) {
  const Vector field = q * x + c;
  return c.dot(x) - geometry.min_linear(field).value;
}

ReferenceSolution reference_vi_solution(const Geometry& geometry, const Matrix& q, const Vector& c) {
  const Geometry twin = euclidean_twin(geometry);
  const bool skew = (q + q.transpose()).cwiseAbs().maxCoeff() <= 1e-12;
  auto metric = [&](const Vector& x) {
    if (skew) return affine_skew_gap(twin, q, c, x);
    return (x - twin.project(x - (q * x + c))).cwiseAbs().maxCoeff();
  };
  const double tolerance = skew ? kViGapTolerance : kNaturalResidualTolerance;

  const double lipschitz = operator_norm(q, NormPair(2.0));
  if (lipschitz <= 0.0) {
    Vector x = twin.min_linear(c).argmin;
    return {x, metric(x)};
  }
  const double step = 0.9 / lipschitz;
  Vector x = twin.center();
  for (int k = 1; k <= kReferenceIterationLimit; ++k) {
    const Vector half = twin.project(x - step * (q * x + c));
    x = twin.project(x - step * (q * half + c));
    if (k % 20 == 0) {
      const double m = metric(x);
      if (m <= tolerance) return {x, m};
    }
  }
  throw SolverError("reference VI solution did not converge within 1e6 iterations");
}

MinProblem::MinProblem(Geometry geometry, Matrix a, Vector b, Matrix shifts, Vector pi)
    : geometry_(std::move(geometry)),
      a_(std::move(a)),
      b_(std::move(b)),
      shifts_(std::move(shifts)),
      pi_(std::move(pi)) {
  const int d = geometry_.dim();
  if (a_.rows() != d || a_.cols() != d) throw InputError("A has the wrong shape");
  if (b_.size() != d) throw InputError("b has the wrong dimension");
  if (!a_.allFinite() || !b_.allFinite()) throw InputError("A or b contains NaN or Inf");
  const double scale = std::max(1.0, a_.cwiseAbs().maxCoeff());
  if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InputError("A is not symmetric");
  }
  const Vector eigen = Eigen::SelfAdjointEigenSolver<Matrix>(a_).eigenvalues();
  if (eigen.minCoeff() < -1e-10 * scale) throw InputError("A is not positive semidefinite");
  validate_chain_inputs(d, shifts_, pi_);
  smoothness_ = operator_norm(a_, geometry_.norms());
  sigma_ = max_dual_norm(shifts_, geometry_.norms());
  reference_ = reference_minimizer(geometry_, a_, b_);
}

double MinProblem::value(const Vector& x) const { return 0.5 * x.dot(a_ * x) - b_.dot(x); }

Vector MinProblem::gradient(const Vector& x) const {
  if (x.size() != dim()) throw InputError("x has the wrong dimension");
  return a_ * x - b_;
}

Vector MinProblem::grad_oracle(const Vector& x, int state) const {
  Vector out(dim());
  grad_oracle(x, state, out);
  return out;
}

void MinProblem::grad_oracle(const Vector& x, int state, Vector& out) const {
  if (x.size() != dim()) throw InputError("x has the wrong dimension");
  if (state < 0 || state >= n_states()) throw InputError("chain state out of range");
  out.noalias() = a_ * x;
  out -= b_;
  out -= shifts_.col(state);
}

ViProblem::ViProblem(Geometry geometry, Matrix q, Vector c, Matrix shifts, Vector pi)
    : geometry_(std::move(geometry)),
      q_(std::move(q)),
      c_(std::move(c)),
      shifts_(std::move(shifts)),
      pi_(std::move(pi)) {
  const int d = geometry_.dim();
  if (q_.rows() != d || q_.cols() != d) throw InputError("Q has the wrong shape");
  if (c_.size() != d) throw InputError("c has the wrong dimension");
  if (!q_.allFinite() || !c_.allFinite()) throw InputError("Q or c contains NaN or Inf");
  const Matrix sym = 0.5 * (q_ + q_.transpose());
  const double scale = std::max(1.0, q_.cwiseAbs().maxCoeff());
  if (Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff() < -1e-12 * scale) {
    throw InputError("operator is not monotone (symmetric part of Q is indefinite)");
  }
  validate_chain_inputs(d, shifts_, pi_);
  lipschitz_ = operator_norm(q_, geometry_.norms());
  sigma_ = max_dual_norm(shifts_, geometry_.norms());
  reference_ = reference_vi_solution(geometry_, q_, c_);
}

bool ViProblem::is_skew() const { return (q_ + q_.transpose()).cwiseAbs().maxCoeff() <= 1e-12; }

Vector ViProblem::op(const Vector& x) const {
  if (x.size() != dim()) throw InputError("x has the wrong dimension");
  return q_ * x + c_;
}

Vector ViProblem::op_oracle(const Vector& x, int state) const {
  Vector out(dim());
  op_oracle(x, state, out);
  return out;
}

void ViProblem::op_oracle(const Vector& x, int state, Vector& out) const {
  if (x.size() != dim()) throw InputError("x has the wrong dimension");
  if (state < 0 || state >= n_states()) throw InputError("chain state out of range");
  out.noalias() = q_ * x;
  out += c_;
  out += shifts_.col(state);
}

Matrix zero_mean_shifts(int dim, const Vector& pi, double scale, double q, std::uint64_t seed) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw InputError("noise scale must be >= 0");
  const Eigen::Index n = pi.size();
  std::mt19937_64 rng(mix_seed(seed, 0x7368696674ULL));
  Matrix raw = random_matrix(dim, static_cast<int>(n), rng);
  const Vector mean = raw * pi;
  Matrix shifts = raw.colwise() - mean;
  double worst = 0.0;
  for (Eigen::Index z = 0; z < n; ++z) worst = std::max(worst, lp_norm(shifts.col(z), q));
  if (scale == 0.0 || worst == 0.0) return Matrix::Zero(dim, n);
  shifts *= scale / worst;
  return shifts;
}

MinProblem make_min_instance(const MinInstanceSpec& spec, const Vector& pi) {
  const int d = spec.dim;
  if (d < 1) throw ConfigError("problem dimension must be positive");
  if (!(spec.lmax > 0.0)) throw ConfigError("lmax must be positive");
  if (!(spec.min_eig > 0.0 && spec.min_eig <= 1.0)) throw ConfigError("min_eig must be in (0, 1]");
  std::mt19937_64 rng(mix_seed(spec.seed, 0x6d696eULL));

  Geometry geometry = spec.set == SetKind::kBox    ? Geometry::box(d, 0.0, 1.0)
                      : spec.set == SetKind::kBall ? Geometry::ball(Vector::Zero(d), 1.0)
                                                   : Geometry::simplex(d, MirrorMap::kEntropy);

  Vector eigen(d);
  for (int i = 0; i < d; ++i) {
    if (spec.spectrum == Spectrum::kLogSpaced) {
      eigen[i] = d == 1 ? spec.lmax : spec.lmax * std::pow(spec.min_eig, static_cast<double>(i) / (d - 1));
    } else {
      eigen[i] = i == 0 ? spec.lmax : spec.lmax * uniform01(rng);
    }
  }
  const Matrix basis = Eigen::HouseholderQR<Matrix>(random_matrix(d, d, rng)).householderQ();
  Matrix a = basis * eigen.asDiagonal() * basis.transpose();
  a = 0.5 * (a + a.transpose()).eval();

  Vector target(d);
  switch (spec.set) {
    case SetKind::kBox:
      for (int i = 0; i < d; ++i) target[i] = 0.5 + 0.35 * uniform_pm1(rng);
      break;
    case SetKind::kBall: {
      Vector dir(d);
      for (int i = 0; i < d; ++i) dir[i] = uniform_pm1(rng);
      target = dir.normalized() * (0.6 * uniform01(rng));
      break;
    }
    case SetKind::kSimplex:
      for (int i = 0; i < d; ++i) target[i] = 0.5 + uniform01(rng);
      target /= target.sum();
      break;
  }
  Vector b = a * target;
  if (spec.placement == MinimizerPlacement::kRandom) {
    for (int i = 0; i < d; ++i) b[i] += 0.5 * spec.lmax * uniform_pm1(rng);
  }
  Matrix shifts = zero_mean_shifts(d, pi, spec.noise, geometry.norms().q(), spec.seed);
  return MinProblem(std::move(geometry), std::move(a), std::move(b), std::move(shifts), pi);
}

namespace {

Matrix bilinear_operator(const Matrix& payoff) {
  const Eigen::Index m = payoff.rows();
  const Eigen::Index n = payoff.cols();
  Matrix q = Matrix::Zero(m + n, m + n);
  q.topRightCorner(m, n) = payoff;
  q.bottomLeftCorner(n, m) = -payoff.transpose();
  return q;
}

}  // namespace

ViProblem make_vi_instance(const ViInstanceSpec& spec, const Vector& pi) {
  if (spec.rows < 1 || spec.cols < 1) throw ConfigError("game blocks must be positive");
  std::mt19937_64 rng(mix_seed(spec.seed, 0x7669ULL));
  const Matrix payoff = random_matrix(spec.rows, spec.cols, rng);
  const int d = spec.rows + spec.cols;
  Vector c(d);
  for (int i = 0; i < d; ++i) c[i] = spec.affine * uniform_pm1(rng);
  Geometry geometry = spec.set == SetKind::kBox
                          ? Geometry::box(d, -1.0, 1.0)
                          : Geometry::simplex_product({spec.rows, spec.cols}, MirrorMap::kEntropy);
  if (spec.set == SetKind::kBall) throw ConfigError("VI instances support simplex or box sets");
  Matrix shifts = zero_mean_shifts(d, pi, spec.noise, geometry.norms().q(), spec.seed);
  return ViProblem(std::move(geometry), bilinear_operator(payoff), std::move(c), std::move(shifts), pi);
}

ViProblem make_bilinear_game(const Matrix& payoff, const Vector& pi, double noise,
                             std::uint64_t seed, MirrorMap mirror) {
  const int m = static_cast<int>(payoff.rows());
  const int n = static_cast<int>(payoff.cols());
  Geometry geometry = Geometry::simplex_product({m, n}, mirror);
  Matrix shifts = zero_mean_shifts(m + n, pi, noise, geometry.norms().q(), seed);
  return ViProblem(std::move(geometry), bilinear_operator(payoff), Vector::Zero(m + n),
                   std::move(shifts), pi);
}

ViProblem matching_pennies(const Vector& pi, double noise, std::uint64_t seed) {
  Matrix payoff(2, 2);
  payoff << 1.0, -1.0, -1.0, 1.0;
  return make_bilinear_game(payoff, pi, noise, seed);
}

// ---------------------------------------------------------------------------
// Instance files

namespace {

std::string join_row(const auto& row) {
  std::string out;
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    if (i) out += ", ";
    out += format_double(row[i]);
  }
  return out;
}

void write_geometry(std::ostream& out, const Geometry& g) {
  out << "geometry.mirror = " << (g.mirror() == MirrorMap::kEntropy ? "entropy" : "euclidean") << '\n';
  std::visit(
      [&](const auto& set) {
        using T = std::decay_t<decltype(set)>;
        if constexpr (std::is_same_v<T, BoxSet>) {
          out << "geometry.kind = box\ngeometry.dim = " << g.dim() << "\ngeometry.lo = "
              << format_double(set.lo) << "\ngeometry.hi = " << format_double(set.hi) << '\n';
        } else if constexpr (std::is_same_v<T, BallSet>) {
          out << "geometry.kind = ball\ngeometry.center = " << join_row(set.center)
              << "\ngeometry.radius = " << format_double(set.radius) << '\n';
        } else {
          out << "geometry.kind = simplex\ngeometry.blocks = " << fmt::format("{}", fmt::join(set.blocks, ", "))
              << '\n';
        }
      },
      g.set());
}

Geometry read_geometry(const KeyValueDocument& doc) {
  const std::string kind = doc.get_string("geometry.kind");
  const std::string mirror = doc.get_string("geometry.mirror");
  const MirrorMap map = mirror == "entropy" ? MirrorMap::kEntropy : MirrorMap::kEuclidean;
  if (kind == "box") {
    return Geometry::box(static_cast<int>(doc.get_int("geometry.dim")), doc.get_double("geometry.lo"),
                         doc.get_double("geometry.hi"));
  }
  if (kind == "ball") {
    const auto center = doc.get_doubles("geometry.center");
    return Geometry::ball(Eigen::Map<const Vector>(center.data(), static_cast<Eigen::Index>(center.size())),
                          doc.get_double("geometry.radius"));
  }
  if (kind == "simplex") {
    std::vector<int> blocks;
    for (auto b : doc.get_ints("geometry.blocks")) blocks.push_back(static_cast<int>(b));
    return Geometry::simplex_product(std::move(blocks), map);
  }
  doc.fail("geometry.kind", fmt::format("unknown geometry '{}'", kind));
}

void write_body(std::ostream& out, const char* kind, const Geometry& g, const Matrix& m,
                const Vector& v, const Matrix& shifts, const Vector& pi) {
  out << "kind = " << kind << '\n';
  write_geometry(out, g);
  for (Eigen::Index i = 0; i < m.rows(); ++i) out << "matrix." << i << " = " << join_row(m.row(i)) << '\n';
  out << "linear = " << join_row(v) << '\n';
  out << "states = " << shifts.cols() << '\n';
  for (Eigen::Index z = 0; z < shifts.cols(); ++z) {
    out << "shift." << z << " = " << join_row(shifts.col(z)) << '\n';
  }
  out << "pi = " << join_row(pi) << '\n';
}

struct Body {
  Geometry geometry;
  Matrix m;
  Vector v;
  Matrix shifts;
  Vector pi;
};

Vector read_vector(const KeyValueDocument& doc, const std::string& key, Eigen::Index expected) {
  const auto values = doc.get_doubles(key);
  if (static_cast<Eigen::Index>(values.size()) != expected) {
    doc.fail(key, fmt::format("expected {} values, got {}", expected, values.size()));
  }
  return Eigen::Map<const Vector>(values.data(), expected);
}

Body read_body(std::istream& in, const char* expected_kind) {
  const auto doc = KeyValueDocument::parse(in, "<instance>");
  if (doc.get_string("kind") != expected_kind) {
    doc.fail("kind", fmt::format("expected instance kind '{}'", expected_kind));
  }
  Geometry geometry = read_geometry(doc);
  const int d = geometry.dim();
  Matrix m(d, d);
  for (int i = 0; i < d; ++i) m.row(i) = read_vector(doc, fmt::format("matrix.{}", i), d).transpose();
  Vector v = read_vector(doc, "linear", d);
  const auto n = doc.get_int("states");
  Matrix shifts(d, n);
  for (int z = 0; z < n; ++z) shifts.col(z) = read_vector(doc, fmt::format("shift.{}", z), d);
  Vector pi = read_vector(doc, "pi", n);
  doc.require_all_used();
  return {std::move(geometry), std::move(m), std::move(v), std::move(shifts), std::move(pi)};
}

}  // namespace

void write_instance(std::ostream& out, const MinProblem& p) {
  write_body(out, "min", p.geometry(), p.a(), p.b(), p.shifts(), p.pi());
}

void write_instance(std::ostream& out, const ViProblem& p) {
  write_body(out, "vi", p.geometry(), p.q(), p.c(), p.shifts(), p.pi());
}

MinProblem read_min_instance(std::istream& in) {
  Body body = read_body(in, "min");
  return MinProblem(std::move(body.geometry), std::move(body.m), std::move(body.v),
                    std::move(body.shifts), std::move(body.pi));
}

ViProblem read_vi_instance(std::istream& in) {
  Body body = read_body(in, "vi");
  return ViProblem(std::move(body.geometry), std::move(body.m), std::move(body.v),
                   std::move(body.shifts), std::move(body.pi));
}

}  // namespace markov_opt
