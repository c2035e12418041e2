#include "markov_opt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSumTolerance = 1e-12;
constexpr double kGenericKktTolerance = 1e-10;
constexpr int kGenericMaxIterations = 10000;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw InputError(fmt::format("{} contains NaN or Inf", what));
  }
}

void require_dim(const Vector& v, int dim, const char* what) {
  if (v.size() != dim) {
    throw InputError(fmt::format("{} has dimension {}, expected {}", what, v.size(), dim));
  }
}

}  // namespace

NormPair::NormPair(double p) : p_(p) {
  if (!(p >= 1.0 && p <= 2.0)) {
    throw ConfigError(fmt::format("norm exponent p = {} outside [1, 2]", p));
  }
  q_ = (p == 1.0) ? kInf : p / (p - 1.0);
}

double NormPair::primal(const Vector& v) const { return lp_norm(v, p_); }
double NormPair::dual(const Vector& v) const { return lp_norm(v, q_); }

double lp_norm(const Vector& v, double r) {
  if (v.size() == 0) return 0.0;
  if (std::isinf(r)) return v.cwiseAbs().maxCoeff();
  if (r == 1.0) return v.cwiseAbs().sum();
  if (r == 2.0) return v.norm();
  // Scale by the max to avoid overflow in |v|^r.
  const double scale = v.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return scale * std::pow((v.cwiseAbs() / scale).array().pow(r).sum(), 1.0 / r);
}

Vector project_onto_simplex(const Vector& z, double radius) {
  const Eigen::Index n = z.size();
  std::vector<double> sorted(z.data(), z.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - radius) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) theta = candidate;
  }
  return (z.array() - theta).cwiseMax(0.0).matrix();
}

Geometry::Geometry(FeasibleSet set, MirrorMap mirror, int dim)
    : set_(std::move(set)),
      mirror_(mirror),
      norms_(mirror == MirrorMap::kEntropy ? 1.0 : 2.0),
      dim_(dim) {
  center_ = std::visit(
      Overloaded{
          [&](const BoxSet& b) -> Vector { return Vector::Constant(dim_, 0.5 * (b.lo + b.hi)); },
          [&](const BallSet& b) -> Vector { return b.center; },
          [&](const SimplexProductSet& s) -> Vector {
            Vector c(dim_);
            Eigen::Index offset = 0;
            for (int block : s.blocks) {
              c.segment(offset, block).setConstant(1.0 / block);
              offset += block;
            }
            return c;
          },
      },
      set_);
}

Geometry Geometry::box(int dim, double lo, double hi) {
  if (dim < 1) throw ConfigError("box dimension must be positive");
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
    throw ConfigError(fmt::format("invalid box bounds [{}, {}]", lo, hi));
  }
  return Geometry(BoxSet{lo, hi}, MirrorMap::kEuclidean, dim);
}

Geometry Geometry::ball(Vector center, double radius) {
  if (center.size() < 1) throw ConfigError("ball dimension must be positive");
  if (!(std::isfinite(radius) && radius > 0.0) || !center.allFinite()) {
    throw ConfigError("ball needs a finite center and a positive radius");
  }
  const int dim = static_cast<int>(center.size());
  return Geometry(BallSet{std::move(center), radius}, MirrorMap::kEuclidean, dim);
}

Geometry Geometry::simplex(int dim, MirrorMap mirror) { return simplex_product({dim}, mirror); }

Geometry Geometry::simplex_product(std::vector<int> blocks, MirrorMap mirror) {
  if (blocks.empty()) throw ConfigError("simplex product needs at least one block");
  int dim = 0;
  for (int b : blocks) {
    if (b < 1) throw ConfigError("simplex block dimension must be positive");
    dim += b;
  }
  return Geometry(SimplexProductSet{std::move(blocks)}, mirror, dim);
}

std::string Geometry::describe() const {
  const char* mirror = mirror_ == MirrorMap::kEntropy ? "entropy" : "euclidean";
  return std::visit(
      Overloaded{
          [&](const BoxSet& b) { return fmt::format("box[{},{}]^{} {}", b.lo, b.hi, dim_, mirror); },
          [&](const BallSet& b) { return fmt::format("ball(r={}) d={} {}", b.radius, dim_, mirror); },
          [&](const SimplexProductSet& s) {
            return fmt::format("simplex{} {}", fmt::join(s.blocks, "x"), mirror);
          },
      },
      set_);
}

double Geometry::entropy_weight() const {
  const auto* s = std::get_if<SimplexProductSet>(&set_);
  return s ? static_cast<double>(s->blocks.size()) : 1.0;
}

bool Geometry::contains(const Vector& x, double tol) const {
  if (x.size() != dim_ || !x.allFinite()) return false;
  return std::visit(
      Overloaded{
          [&](const BoxSet& b) {
            return x.minCoeff() >= b.lo - tol && x.maxCoeff() <= b.hi + tol;
          },
          [&](const BallSet& b) { return (x - b.center).norm() <= b.radius + tol; },
          [&](const SimplexProductSet& s) {
            Eigen::Index offset = 0;
            for (int block : s.blocks) {
              const auto seg = x.segment(offset, block);
              offset += block;
              if (std::abs(seg.sum() - 1.0) > kSumTolerance) return false;
              const double lower =
                  mirror_ == MirrorMap::kEntropy ? (kSimplexFloor / block) * (1.0 - 1e-6) : -tol;
              if (seg.minCoeff() < lower) return false;
            }
            return true;
          },
      },
      set_);
}

void Geometry::check_interior(const Vector& x) const {
  const auto& s = std::get<SimplexProductSet>(set_);
  Eigen::Index offset = 0;
  for (int block : s.blocks) {
    const double lower = 0.5 * kSimplexFloor / block;
    if (x.segment(offset, block).minCoeff() < lower) {
      throw DomainError("entropy gradient undefined: point is on the simplex boundary");
    }
    offset += block;
  }
}

double Geometry::mirror_value(const Vector& x) const {
  require_dim(x, dim_, "x");
  if (mirror_ == MirrorMap::kEuclidean) return 0.5 * x.squaredNorm();
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) throw DomainError("negative coordinate in entropy mirror map");
    if (x[i] > 0.0) total += x[i] * std::log(x[i]);
  }
  return entropy_weight() * total;
}

double Geometry::bregman(const Vector& x, const Vector& y) const {
  require_dim(x, dim_, "x");
  require_dim(y, dim_, "y");
  if (mirror_ == MirrorMap::kEuclidean) return 0.5 * (y - x).squaredNorm();
  check_interior(x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < dim_; ++i) {
    if (y[i] < 0.0) throw DomainError("negative coordinate in entropy Bregman divergence");
    if (y[i] > 0.0) total += y[i] * std::log(y[i] / x[i]);
    total += x[i] - y[i];
  }
  return std::max(0.0, entropy_weight() * total);
}

Vector Geometry::apply_floor(const Vector& x) const {
  const auto& s = std::get<SimplexProductSet>(set_);
  Vector y = x;
  Eigen::Index offset = 0;
  for (int block : s.blocks) {
    auto seg = y.segment(offset, block);
    offset += block;
    const double floor = kSimplexFloor / block;
    seg /= seg.sum();
    std::vector<bool> clamped(block, false);
    for (int round = 0; round <= block; ++round) {
      int n_clamped = 0;
      bool changed = false;
      for (int i = 0; i < block; ++i) {
        if (!clamped[i] && seg[i] < floor) {
          clamped[i] = true;
          changed = true;
        }
        if (clamped[i]) ++n_clamped;
      }
      if (!changed) break;
      double free_mass = 0.0;
      for (int i = 0; i < block; ++i) {
        if (!clamped[i]) free_mass += seg[i];
      }
      const double scale = (1.0 - n_clamped * floor) / free_mass;
      for (int i = 0; i < block; ++i) seg[i] = clamped[i] ? floor : seg[i] * scale;
    }
  }
  return y;
}

Vector Geometry::prox(const Vector& x, const Vector& xi) const {
  require_dim(x, dim_, "x");
  require_dim(xi, dim_, "xi");
  require_finite(xi, "xi");
  if (mirror_ == MirrorMap::kEuclidean) return project(x - xi);

  check_interior(x);
  const auto& s = std::get<SimplexProductSet>(set_);
  const double weight = entropy_weight();
  Vector y(dim_);
  Eigen::Index offset = 0;
  for (int block : s.blocks) {
    // y_i ∝ x_i exp(-xi_i / weight), computed in the log domain.
    Vector logits = x.segment(offset, block).array().log() - xi.segment(offset, block).array() / weight;
    logits.array() -= logits.maxCoeff();
    Vector w = logits.array().exp();
    y.segment(offset, block) = w / w.sum();
    offset += block;
  }
  return apply_floor(y);
}

Vector Geometry::prox_generic(const Vector& x, const Vector& xi) const {
  require_dim(x, dim_, "x");
  require_dim(xi, dim_, "xi");
  require_finite(xi, "xi");
  if (mirror_ == MirrorMap::kEntropy) check_interior(x);

  const double weight = entropy_weight();
  const Vector log_x = mirror_ == MirrorMap::kEntropy ? Vector(x.array().log()) : Vector();
  auto gradient = [&](const Vector& y) -> Vector {
    if (mirror_ == MirrorMap::kEuclidean) return y - x + xi;
    return weight * (y.array().log().matrix() - log_x) + xi;
  };

  Vector y = center_;
  double step = 1.0;
  for (int it = 0; it < kGenericMaxIterations; ++it) {
    const Vector grad = gradient(y);
    const double residual = (y - project(y - grad)).cwiseAbs().maxCoeff();
    if (residual <= kGenericKktTolerance) return y;

    // Curvature test on gradients; function values cancel badly near the optimum.
    Vector candidate;
    for (int backtrack = 0; backtrack < 80; ++backtrack) {
      candidate = project(y - step * grad);
      const Vector delta = candidate - y;
      const bool inside = mirror_ == MirrorMap::kEuclidean || candidate.minCoeff() > 0.0;
      if (inside && (gradient(candidate) - grad).dot(delta) <= delta.squaredNorm() / step) break;
      step *= 0.5;
    }
    const Vector s = candidate - y;
    const Vector r = gradient(candidate) - grad;
    const double sr = s.dot(r);
    step = sr > 0.0 ? std::clamp(s.squaredNorm() / sr, 1e-12, 1e12) : std::min(step * 2.0, 1e12);
    y = std::move(candidate);
  }
  throw SolverError("generic prox solver did not reach the KKT tolerance");
}

double Geometry::diameter_sq() const {
  return std::visit(
      Overloaded{
          [&](const BoxSet& b) { return dim_ * (b.hi - b.lo) * (b.hi - b.lo) / 8.0; },
          [&](const BallSet& b) { return 0.5 * b.radius * b.radius; },
          [&](const SimplexProductSet& s) {
            double total = 0.0;
            for (int block : s.blocks) {
              total += mirror_ == MirrorMap::kEntropy ? std::log(static_cast<double>(block))
                                                      : (block - 1.0) / (2.0 * block);
            }
            return mirror_ == MirrorMap::kEntropy ? entropy_weight() * total : total;
          },
      },
      set_);
}

Vector Geometry::project(const Vector& z) const {
  require_dim(z, dim_, "z");
  return std::visit(
      Overloaded{
          [&](const BoxSet& b) -> Vector { return z.cwiseMax(b.lo).cwiseMin(b.hi); },
          [&](const BallSet& b) -> Vector {
            const Vector offset = z - b.center;
            const double norm = offset.norm();
            return norm <= b.radius ? z : Vector(b.center + offset * (b.radius / norm));
          },
          [&](const SimplexProductSet& s) -> Vector {
            Vector y(dim_);
            Eigen::Index offset = 0;
            for (int block : s.blocks) {
              const auto seg = z.segment(offset, block);
              if (mirror_ == MirrorMap::kEntropy) {
                const double floor = kSimplexFloor / block;
                y.segment(offset, block) =
                    project_onto_simplex(seg.array() - floor, 1.0 - block * floor).array() + floor;
              } else {
                y.segment(offset, block) = project_onto_simplex(seg, 1.0);
              }
              offset += block;
            }
            return y;
          },
      },
      set_);
}

LinearMin Geometry::min_linear(const Vector& g) const {
  require_dim(g, dim_, "g");
  return std::visit(
      Overloaded{
          [&](const BoxSet& b) {
            Vector u(dim_);
            for (int i = 0; i < dim_; ++i) u[i] = g[i] >= 0.0 ? b.lo : b.hi;
            return LinearMin{g.dot(u), u};
          },
          [&](const BallSet& b) {
            const double norm = g.norm();
            Vector u = norm > 0.0 ? Vector(b.center - g * (b.radius / norm)) : b.center;
            return LinearMin{g.dot(b.center) - b.radius * norm, u};
          },
          [&](const SimplexProductSet& s) {
            Vector u = Vector::Zero(dim_);
            double value = 0.0;
            Eigen::Index offset = 0;
            for (int block : s.blocks) {
              Eigen::Index best = 0;
              value += g.segment(offset, block).minCoeff(&best);
              u[offset + best] = 1.0;
              offset += block;
            }
            return LinearMin{value, u};
          },
      },
      set_);
}

bool prox_nonexpansive_check(const Geometry& g, const Vector& x, const Vector& eta,
                             const Vector& zeta) {
  const Vector a = g.prox(x, eta);
  const Vector b = g.prox(x, zeta);
  return g.norms().primal(a - b) <= g.norms().dual(eta - zeta) + 1e-9;
}

}  // namespace markov_opt
