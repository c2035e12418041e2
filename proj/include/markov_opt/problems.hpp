#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "markov_opt/geometry.hpp"

namespace markov_opt {

struct ReferenceSolution {
  Vector x;
  double value = 0.0;
};

/// ||M||_{p -> q} for the geometry's norm pair: spectral norm for p = 2,
/// max |M_ij| for p = 1.
double operator_norm(const Matrix& m, const NormPair& norms);

/// Convex quadratic f(x) = x'Ax/2 - b'x with Markov-modulated additive noise.
///
/// The noisy gradient in chain state z is A x - b - c_z, where the shifts
/// c_z have zero mean under the stationary distribution pi. L and sigma are
/// exact for the geometry's norm pair.
class MinProblem {
 public:
  /// `shifts` is d x n_states, one column per chain state.
  MinProblem(Geometry geometry, Matrix a, Vector b, Matrix shifts, Vector pi);

  const Geometry& geometry() const { return geometry_; }
  int dim() const { return geometry_.dim(); }
  int n_states() const { return static_cast<int>(shifts_.cols()); }
  const Matrix& a() const { return a_; }
  const Vector& b() const { return b_; }
  const Matrix& shifts() const { return shifts_; }
  const Vector& pi() const { return pi_; }

  double smoothness() const { return smoothness_; }
  double sigma() const { return sigma_; }
  const Vector& x_star() const { return reference_.x; }
  double f_star() const { return reference_.value; }

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
  Vector grad_oracle(const Vector& x, int state) const;
  void grad_oracle(const Vector& x, int state, Vector& out) const;

 private:
  Geometry geometry_;
  Matrix a_;
  Vector b_;
  Matrix shifts_;
  Vector pi_;
  double smoothness_ = 0.0;
  double sigma_ = 0.0;
  ReferenceSolution reference_;
};

/// Affine monotone operator F(x) = Q x + c with Markov-modulated additive noise.
///
/// Generated instances have skew-symmetric Q (bilinear games); general
/// monotone Q is accepted, but the exact Err_VI metric needs skew Q.
class ViProblem {
 public:
  ViProblem(Geometry geometry, Matrix q, Vector c, Matrix shifts, Vector pi);

  const Geometry& geometry() const { return geometry_; }
  int dim() const { return geometry_.dim(); }
  int n_states() const { return static_cast<int>(shifts_.cols()); }
  const Matrix& q() const { return q_; }
  const Vector& c() const { return c_; }
  const Matrix& shifts() const { return shifts_; }
  const Vector& pi() const { return pi_; }
  bool is_skew() const;

  double lipschitz() const { return lipschitz_; }
  /// sup_z Lipschitz constant of F(., z); equals lipschitz() since the noise is x-independent.
  double lipschitz_per_state() const { return lipschitz_; }
  double sigma() const { return sigma_; }
  const Vector& x_star() const { return reference_.x; }

  Vector op(const Vector& x) const;
  Vector op_oracle(const Vector& x, int state) const;
  void op_oracle(const Vector& x, int state, Vector& out) const;

 private:
  Geometry geometry_;
  Matrix q_;
  Vector c_;
  Matrix shifts_;
  Vector pi_;
  double lipschitz_ = 0.0;
  double sigma_ = 0.0;
  ReferenceSolution reference_;
};

/// Accelerated projected gradient (or the closed-form interior minimizer),
/// certified by a Frank-Wolfe gap <= 1e-10.
ReferenceSolution reference_minimizer(const Geometry& geometry, const Matrix& a, const Vector& b);
/// Euclidean extragradient until Err_VI <= 1e-9 (natural residual for non-skew Q).
ReferenceSolution reference_vi_solution(const Geometry& geometry, const Matrix& q, const Vector& c);

/// Err_VI of an affine skew operator: <c, x> - min_{u in X} <Q x + c, u>.
double affine_skew_gap(const Geometry& geometry, const Matrix& q, const Vector& c, const Vector& x);

enum class SetKind { kBox, kBall, kSimplex };
enum class Spectrum { kUniform, kLogSpaced };
enum class MinimizerPlacement { kRandom, kInterior };

struct MinInstanceSpec {
  int dim = 10;
  SetKind set = SetKind::kBox;
  /// Requested max_z ||c_z||_q.
  double noise = 0.0;
  std::uint64_t seed = 1;
  double lmax = 1.0;
  Spectrum spectrum = Spectrum::kUniform;
  /// Smallest eigenvalue relative to lmax for the log-spaced spectrum.
  double min_eig = 1e-6;
  MinimizerPlacement placement = MinimizerPlacement::kRandom;
};

/// Random convex quadratic on [0,1]^d, the unit ball, or the entropy simplex.
MinProblem make_min_instance(const MinInstanceSpec& spec, const Vector& pi);

struct ViInstanceSpec {
  /// Player dimensions (m, n) of the bilinear game.
  int rows = 4;
  int cols = 4;
  /// kSimplex: entropy on the product of simplexes; kBox: Euclidean on [-1, 1]^(m+n).
  SetKind set = SetKind::kSimplex;
  double noise = 0.0;
  std::uint64_t seed = 1;
  /// Scale of the affine term c.
  double affine = 0.0;
};

/// F(x, y) = (A y + c1, -A'x + c2) + e_z with a random payoff matrix A.
ViProblem make_vi_instance(const ViInstanceSpec& spec, const Vector& pi);

/// Bilinear game with the given payoff block on the product of two simplexes.
ViProblem make_bilinear_game(const Matrix& payoff, const Vector& pi, double noise,
                             std::uint64_t seed, MirrorMap mirror = MirrorMap::kEntropy);

/// Matching pennies: payoff [[1, -1], [-1, 1]].
ViProblem matching_pennies(const Vector& pi, double noise = 0.0, std::uint64_t seed = 1);

/// d x n_states shifts with zero pi-mean and max_z ||c_z||_q == scale (0 when scale == 0).
Matrix zero_mean_shifts(int dim, const Vector& pi, double scale, double q, std::uint64_t seed);

/// Structured-text export for exact re-runs; `read_*` reverses `write_instance`.
void write_instance(std::ostream& out, const MinProblem& p);
void write_instance(std::ostream& out, const ViProblem& p);
MinProblem read_min_instance(std::istream& in);
ViProblem read_vi_instance(std::istream& in);

}  // namespace markov_opt
