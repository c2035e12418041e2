#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "markov_opt/chain.hpp"
#include "markov_opt/estimators.hpp"
#include "markov_opt/problems.hpp"

namespace markov_opt {

/// f(x) - f*; values within [-1e-9, 1e-12] report as 0, anything lower means
/// the reference solution is wrong and throws SolverError.
double subopt_gap(const MinProblem& p, const Vector& x);

/// max_u <F(u), x - u> by vertex enumeration; needs skew Q (UnsupportedMetricError otherwise).
double err_vi(const ViProblem& p, const Vector& x);

struct WeakGap {
  /// Across-run mean of <F(u), x_hat - u> for each probe u.
  std::vector<double> per_probe;
  double max = 0.0;
};

/// Probe-wise averaged gap; the max is a lower bound on max_u E<F(u), x_hat - u>.
WeakGap weak_vi_gap(const ViProblem& p, const std::vector<Vector>& runs,
                    const std::vector<Vector>& probes);

/// Every vertex of a box or product of simplexes; throws when there are more than `limit`.
std::vector<Vector> vertex_probes(const Geometry& g, std::size_t limit = 1 << 16);

/// Ordinary least squares slope and intercept of y on x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Mean and standard error from `batches` contiguous batch means.
struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};
MeanEstimate batch_means(const std::vector<double>& samples, int batches = 20);

struct ScalingCell {
  double parameter = 0.0;
  double value = 0.0;
  double se = 0.0;
  std::int64_t trials = 0;
  std::string label;
};

struct ScalingReport {
  std::vector<ScalingCell> cells;
  double exponent = 0.0;
  /// 95% interval on the exponent from cell SEs (delta method, normal approx).
  double exponent_lo = 0.0;
  double exponent_hi = 0.0;
  /// Geometric mean of value * parameter^(-exponent_target).
  double constant = 0.0;
  /// True when every cell is exactly 0 (no noise); fits are then meaningless.
  bool degenerate = false;
};

struct Lemma1Config {
  std::vector<std::int64_t> n_grid = {16, 32, 64, 128, 256, 512, 1024, 2048, 4096};
  std::int64_t trials = 2000;
  double q = 2.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

/// E||N^-1 sum_{t<=N} xi_{Z_t}||_q^2 for each N, from independent stationary trajectories.
/// `noise` is d x n_states with zero pi-mean (else InputError).
ScalingReport lemma1_scaling(std::shared_ptr<const TransitionKernel> kernel, const Vector& pi,
                             const Matrix& noise, const Lemma1Config& cfg);

struct Lemma1Sweep {
  ScalingReport base;
  ScalingReport lazy;
  int tau_base = 0;
  int tau_lazy = 0;
  double laziness = 0.0;
  /// lazy.constant / base.constant.
  double constant_ratio = 0.0;
};

/// Smallest laziness on a 1/64 grid whose mixing time reaches 2 tau_mix.
double laziness_for_tau(const TransitionKernel& k, int target_tau);

/// Runs lemma1_scaling on `kernel` and on a lazy copy with doubled tau_mix.
Lemma1Sweep lemma1_tau_sweep(std::shared_ptr<const TransitionKernel> kernel, const Matrix& noise,
                             const Lemma1Config& cfg);

struct Lemma2Config {
  /// Bias decay grid (at B = bias_batch).
  std::vector<std::uint64_t> bias_m = {4, 16, 64, 256};
  std::uint64_t bias_batch = 1;
  /// Unbiasedness check.
  std::uint64_t paired_m = 64;
  std::uint64_t paired_batch = 1;
  std::int64_t paired_trials = 100000;
  /// Variance grid over (B, M).
  std::vector<std::uint64_t> variance_b = {1, 2, 4};
  std::vector<std::uint64_t> variance_m = {4, 16, 64};
  std::int64_t variance_trials = 4000;
  std::int64_t jensen_trials = 4000;
  double q = 2.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct UnbiasednessCheck {
  Vector mean_difference;
  Vector standard_error;
  /// max_i |mean_difference_i| / standard_error_i (0 when every SE is 0).
  double max_z = 0.0;
  std::int64_t trials = 0;
};

struct Lemma2Report {
  /// Exact worst-start squared bias per M (parameter = M).
  ScalingReport bias;
  /// Worst-start Monte Carlo E||g_K - grad f||_q^2 per M, K = floor(log2 M):
  /// the mean-square error of the level-K batch mean, which decays like 1/M.
  ScalingReport jensen;
  UnbiasednessCheck unbiased;
  /// Stationary-start E||g - grad f||_q^2; parameter = B, label "B=..,M=..".
  std::vector<ScalingCell> variance;
  /// variance / (tau_mix log2(M) / B) per cell, same order as `variance`.
  std::vector<double> variance_constants;
  int tau_mix = 0;
};

/// Bias, unbiasedness and variance diagnostics for the MLMC estimator at a frozen point x.
Lemma2Report lemma2_check(const SampleOracle& oracle, const Vector& x,
                          std::shared_ptr<const TransitionKernel> kernel, const Vector& pi,
                          const Lemma2Config& cfg);

/// Exact E[g | Z_0 = z0] for every start state; columns indexed by z0.
Matrix mlmc_conditional_mean(const Matrix& per_state, const TransitionKernel& kernel,
                             const MlmcConfig& cfg);

struct GapReport {
  std::string metric;
  /// Strictly increasing budgets (T or oracle calls).
  std::vector<double> budgets;
  /// values[i][s]: gap at budgets[i] for seed s.
  std::vector<std::vector<double>> values;
};

struct RateFit {
  double slope = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::vector<double> used_budgets;
  /// Budgets dropped because the median gap hit the 1e-13 floor.
  std::vector<double> floored_budgets;
};

/// Log-log OLS slope of the median gap against budget with a seed bootstrap CI
/// (1000 resamples, deterministic). Budgets below `min_budget` are discarded.
RateFit rate_fit(const GapReport& report, double min_budget = 0.0);

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

}  // namespace markov_opt
