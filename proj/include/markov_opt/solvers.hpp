#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "markov_opt/chain.hpp"
#include "markov_opt/estimators.hpp"
#include "markov_opt/problems.hpp"

namespace markov_opt {

/// Momentum beta_t and stepsize gamma_t tabulated over t = 0..T.
///
/// Construction checks, for every t in range: beta_t >= 1, gamma_t > 0,
/// (beta_{t+1} - 1) gamma_{t+1} <= beta_t gamma_t, beta_t >= 2 gamma_t L,
/// and beta_tau = 1. Violations throw ConfigError.
class MamdSchedule {
 public:
  MamdSchedule(std::vector<double> beta, std::vector<double> gamma, int tau, double smoothness);

  double beta(std::int64_t t) const { return beta_.at(static_cast<std::size_t>(t)); }
  double gamma(std::int64_t t) const { return gamma_.at(static_cast<std::size_t>(t)); }
  int tau() const { return tau_; }
  double smoothness() const { return smoothness_; }
  /// Last tabulated iteration index.
  std::int64_t horizon() const { return static_cast<std::int64_t>(beta_.size()) - 1; }

 private:
  std::vector<double> beta_;
  std::vector<double> gamma_;
  int tau_;
  double smoothness_;
};

/// beta_t = max((t - tau)/2 + 1, 1), gamma_t = beta_t min{1/(2L), D/((T - tau)^{3/2} sigma tau^{3/2})}.
/// `step_override`, when set, replaces the min{} factor.
MamdSchedule corollary1_schedule(double L, double D, double sigma, int tau_mix, std::int64_t T,
                                 std::optional<double> step_override = std::nullopt);

/// beta_t = t/2 + 1, gamma_t = beta_t min{1/(2L), D/(T^{3/2} sigma tau^{1/2})}, with M = T and B = 1.
std::pair<MamdSchedule, MlmcConfig> corollary2_schedule(
    double L, double D, double sigma, int tau_mix, std::int64_t T,
    std::optional<double> step_override = std::nullopt);

/// min{1/(2 L_tilde), D/((T - tau)^{1/2} sigma tau)}.
double corollary3_gamma(double L_tilde, double D, double sigma, int tau_mix, std::int64_t T);

/// gamma = min{1/(2L), D/(T^{1/2} sigma tau^{1/2})}, with M = T and B = 1.
std::pair<double, MlmcConfig> corollary4_params(double L, double D, double sigma, int tau_mix,
                                                std::int64_t T);

struct RunOptions {
  /// Starting point; defaults to the geometry center.
  std::optional<Vector> x0;
  /// Record a row whenever t % stride == 0 (t = 1..T), plus the final t = T.
  std::int64_t stride = 1;
  /// Gap metric on the reported iterate; rows carry NaN when unset.
  std::function<double(const Vector&)> metric;
  bool keep_trajectory = false;
  bool record_wall = false;
};

struct RunRow {
  std::int64_t t = 0;
  std::uint64_t oracle_calls = 0;
  std::uint64_t chain_steps = 0;
  double gap = 0.0;
  double wall_ms = 0.0;
};

struct RunRecord {
  std::vector<RunRow> rows;
  /// x_f^T for minimization, the ergodic average for VI runs.
  Vector final_iterate;
  /// x^t for t = 0..T when keep_trajectory is set.
  std::vector<Vector> iterates;
  /// x^{t+1/2} (MMP) or x_g^t (MAMD) for t = 0..T-1 when keep_trajectory is set.
  std::vector<Vector> auxiliary;
  /// Drawn MLMC levels, batched variants only, when keep_trajectory is set.
  std::vector<int> levels;
  std::uint64_t oracle_calls = 0;
  std::uint64_t chain_steps = 0;
  /// Filled in by callers that echo configuration.
  std::string config_echo;
  std::uint64_t seed = 0;
};

/// Accelerated mirror descent with one fresh sample per iteration.
RunRecord mamd_unbatched(const MinProblem& p, const MamdSchedule& sched, ChainCursor& cursor,
                         std::int64_t T, const RunOptions& opts = {});

/// Accelerated mirror descent with the truncated geometric MLMC gradient.
RunRecord mamd_batched(const MinProblem& p, const MamdSchedule& sched, ChainCursor& cursor,
                       const MlmcConfig& cfg, LevelSampler& levels, std::int64_t T,
                       const RunOptions& opts = {});

/// Mirror-prox where both prox steps share the sample Z_t and the anchor x^t;
/// reports the average of x^{t+1/2} over [tau, T).
RunRecord mmp_unbatched(const ViProblem& p, double gamma, int tau, ChainCursor& cursor,
                        std::int64_t T, const RunOptions& opts = {});

/// Mirror-prox with a B-sample extrapolation and an MLMC update; reports the
/// average of x^{t+1/2} over [0, T).
RunRecord mmp_batched(const ViProblem& p, double gamma, ChainCursor& cursor, const MlmcConfig& cfg,
                      LevelSampler& levels, std::int64_t T, const RunOptions& opts = {});

}  // namespace markov_opt
