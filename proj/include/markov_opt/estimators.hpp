#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include "markov_opt/chain.hpp"

namespace markov_opt {

/// Noisy first-order oracle: writes the gradient (or operator value) at x in chain state z.
using SampleOracle = std::function<void(const Vector& x, int state, Vector& out)>;

struct MlmcConfig {
  std::uint64_t B = 1;
  std::uint64_t M = 1;

  /// Throws ConfigError unless B >= 1 and M >= 1.
  void validate() const;
  /// floor(log2 M).
  int max_level() const;
  /// Expected oracle calls per draw: B * (floor(log2 M) + 2^-floor(log2 M)).
  double expected_oracle_calls() const;
};

struct Estimate {
  Vector g;
  std::uint64_t oracle_calls = 0;
  std::uint64_t chain_steps = 0;
  /// Sampled J, or 0 for the single-sample and batch-mean estimators.
  int level = 0;
};

/// Dedicated stream for the geometric level J, P{J = i} = 2^-i for i >= 1.
class LevelSampler {
 public:
  explicit LevelSampler(std::uint64_t seed) : rng_(seed) {}

  /// Draws J, capped at `cap` (probability 2^-cap of hitting it).
  int draw(int cap = 62);

 private:
  std::mt19937_64 rng_;
};

/// Advances the cursor once and evaluates the oracle at the new state.
Estimate single_sample(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor);

/// Mean of the oracle over the next B states.
Estimate batch_mean(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                    std::uint64_t B);

/// g0 + 2^J (g_J - g_{J-1}) when 2^J <= M, else g0, where g_j is the mean of
/// the first 2^j B samples of one trajectory segment. The cursor always moves
/// 2^J B steps; on truncation only the first B samples are evaluated.
Estimate mlmc_geometric(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                        const MlmcConfig& cfg, LevelSampler& levels);

/// One MLMC draw plus the untruncated level-floor(log2 M) mean on the same samples.
struct PairedEstimate {
  Estimate mlmc;
  Vector top_level_mean;
};

/// Evaluates max(2^J, 2^K) B samples, K = floor(log2 M), and returns both
/// estimators built from the shared prefix. The cursor moves by that many steps.
PairedEstimate mlmc_paired(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                           const MlmcConfig& cfg, LevelSampler& levels);

}  // namespace markov_opt
