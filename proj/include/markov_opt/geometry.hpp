#pragma once

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace markov_opt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Primal norm ||.||_p and its conjugate ||.||_q with 1/p + 1/q = 1, for p in [1, 2].
class NormPair {
 public:
  explicit NormPair(double p);

  double p() const { return p_; }
  /// Dual exponent; +inf when p == 1.
  double q() const { return q_; }

  double primal(const Vector& v) const;
  double dual(const Vector& v) const;

 private:
  double p_;
  double q_;
};

/// ||v||_r for r in [1, inf].
double lp_norm(const Vector& v, double r);

enum class MirrorMap { kEuclidean, kEntropy };

/// Feasible set variants.
struct BoxSet {
  double lo;
  double hi;
};
struct BallSet {
  Vector center;
  double radius;
};
/// Product of probability simplexes; a single simplex has one block.
struct SimplexProductSet {
  std::vector<int> blocks;
};
using FeasibleSet = std::variant<BoxSet, BallSet, SimplexProductSet>;

/// Minimum coordinate floor on entropy simplexes is kSimplexFloor / block_dim.
inline constexpr double kSimplexFloor = 1e-9;

struct LinearMin {
  double value;
  Vector argmin;
};

/// A compact convex feasible set paired with a mirror map.
///
/// Euclidean geometries use the half-squared-Euclidean mirror map and the
/// (2, 2) norm pair; entropy geometries live on products of simplexes and use
/// the (1, inf) norm pair. For a product of k simplexes the entropy is scaled
/// by k so that it stays 1-strongly convex with respect to ||.||_1.
///
/// Instances are immutable and every method is a pure function.
class Geometry {
 public:
  static Geometry box(int dim, double lo, double hi);
  static Geometry ball(Vector center, double radius);
  static Geometry simplex(int dim, MirrorMap mirror = MirrorMap::kEntropy);
  static Geometry simplex_product(std::vector<int> blocks, MirrorMap mirror = MirrorMap::kEntropy);

  int dim() const { return dim_; }
  MirrorMap mirror() const { return mirror_; }
  const NormPair& norms() const { return norms_; }
  const FeasibleSet& set() const { return set_; }
  std::string describe() const;

  /// argmin of the mirror map over the set; every solver starts here by default.
  const Vector& center() const { return center_; }

  /// Whether x is feasible within `tol` (entropy sets also require the coordinate floor).
  bool contains(const Vector& x, double tol = 1e-10) const;

  double mirror_value(const Vector& x) const;

  /// V(x, y) = w(y) - w(x) - <w'(x), y - x>.
  double bregman(const Vector& x, const Vector& y) const;

  /// argmin_{y in X} { V(x, y) + <xi, y> } in closed form.
  Vector prox(const Vector& x, const Vector& xi) const;

  /// Same minimizer computed by projected gradient with backtracking, to a KKT
  /// residual of 1e-10 (at most 1e4 iterations).
  Vector prox_generic(const Vector& x, const Vector& xi) const;

  /// max_y V(center, y).
  double diameter_sq() const;

  /// Euclidean projection onto the set (entropy sets: onto the floored simplexes).
  Vector project(const Vector& z) const;

  /// min_{u in X} <g, u> with a minimizing vertex (or boundary point for a ball).
  LinearMin min_linear(const Vector& g) const;

  /// Renormalizes an entropy-simplex point onto {x_i >= floor, sum x = 1} per block.
  Vector apply_floor(const Vector& x) const;

 private:
  Geometry(FeasibleSet set, MirrorMap mirror, int dim);

  double entropy_weight() const;
  void check_interior(const Vector& x) const;

  FeasibleSet set_;
  MirrorMap mirror_;
  NormPair norms_;
  int dim_;
  Vector center_;
};

/// ||P_x(eta) - P_x(zeta)|| <= ||eta - zeta||_* + 1e-9.
bool prox_nonexpansive_check(const Geometry& g, const Vector& x, const Vector& eta,
                             const Vector& zeta);

/// Euclidean projection onto {w >= 0, sum w = radius}.
Vector project_onto_simplex(const Vector& z, double radius = 1.0);

}  // namespace markov_opt
