#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace markov_opt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-stochastic transition matrix of a finite Markov chain.
///
/// Construction validates stochasticity only (rows sum to 1 within 1e-12,
/// nonnegative entries). Irreducibility and aperiodicity are checked by
/// `is_ergodic()`; diagnostics and samplers that depend on them call
/// `require_ergodic()`.
class TransitionKernel {
 public:
  explicit TransitionKernel(Matrix transition);

  int n_states() const { return static_cast<int>(p_.rows()); }
  const Matrix& matrix() const { return p_; }

  /// Some power P^k with k <= n^2 is entrywise positive.
  bool is_ergodic() const;
  void require_ergodic() const;

  /// Row `from` of P^steps; uses cached dyadic powers.
  Vector step_distribution(int from, std::uint64_t steps) const;

  /// Inverse-CDF draw of the successor of `from` given a uniform `u` in [0, 1).
  int sample_next(int from, double u) const;

 private:
  struct PowerCache;

  Matrix p_;
  std::vector<double> cumulative_;  // row-major cumulative row sums
  std::shared_ptr<PowerCache> powers_;
};

/// Worst-start total-variation profile of a kernel.
struct ChainDiagnostics {
  Vector pi;
  int tau_mix = 0;
  /// (t, max_{z0} TV(P^t(z0, .), pi)) for t = 0, 1, ..., horizon.
  std::vector<std::pair<int, double>> tv_curve;
};

/// Stationary distribution by power iteration (tolerance 1e-12, at most 1e6 iterations).
Vector stationary(const TransitionKernel& k);

/// Smallest t >= 1 with max_{z0} TV(P^t(z0, .), pi) <= threshold.
int mixing_time(const TransitionKernel& k, double threshold = 0.25);

/// Stationary distribution, mixing time, and the TV curve up to max(2 tau_mix, horizon).
ChainDiagnostics diagnose(const TransitionKernel& k, double threshold = 0.25, int horizon = 0);

/// max_{z0} TV(row z0 of m, pi).
double worst_tv(const Matrix& m, const Vector& pi);

/// max over pairs of rows of TV(m(a, .), m(b, .)); submultiplicative in t.
double worst_pairwise_tv(const Matrix& m);

/// alpha I + (1 - alpha) P for alpha in [0, 1).
TransitionKernel make_lazy(const TransitionKernel& k, double alpha);

/// Kernel with every entry >= 0.01, deterministic in `seed`. Requires 2 <= n_states <= 99.
TransitionKernel random_ergodic(int n_states, std::uint64_t seed);

/// splitmix64 finalizer; derives independent stream seeds from one user seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Uniform double in [0, 1) with 53 random bits; platform independent.
double uniform01(std::mt19937_64& rng);

/// Single-owner sampling position on a chain trajectory.
///
/// `consumed()` counts chain transitions taken so far (the N_t of the
/// batched algorithms). Equal seeds and equal advance schedules give equal
/// state sequences on every platform.
class ChainCursor {
 public:
  /// Initial state drawn from `pi`.
  static ChainCursor stationary_start(std::shared_ptr<const TransitionKernel> kernel,
                                      const Vector& pi, std::uint64_t seed);
  static ChainCursor fixed_start(std::shared_ptr<const TransitionKernel> kernel, int state,
                                 std::uint64_t seed);

  int state() const { return state_; }
  std::uint64_t consumed() const { return consumed_; }
  const TransitionKernel& kernel() const { return *kernel_; }

  /// One transition; returns the new state.
  int step();

  /// `steps` transitions; returns the visited states in order.
  std::vector<int> advance(std::uint64_t steps);

  /// Moves `steps` transitions ahead without materializing intermediate states.
  void skip(std::uint64_t steps);

 private:
  ChainCursor(std::shared_ptr<const TransitionKernel> kernel, int state, std::uint64_t seed);

  std::shared_ptr<const TransitionKernel> kernel_;
  int state_;
  std::uint64_t consumed_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace markov_opt
