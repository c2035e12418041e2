#include "markov_opt/estimators.hpp"

#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

// Keeps 2^J * B representable.
int level_cap(std::uint64_t batch) { return 62 - static_cast<int>(std::bit_width(batch) - 1); }

/// Sum of oracle outputs over the next `count` states, added into `sum`.
void accumulate(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                std::uint64_t count, Vector& sum, Vector& scratch) {
  for (std::uint64_t i = 0; i < count; ++i) {
    oracle(x, cursor.step(), scratch);
    if (scratch.size() != sum.size()) {
      throw InputError(fmt::format("oracle returned dimension {}, expected {}", scratch.size(),
                                   sum.size()));
    }
    sum += scratch;
  }
}

struct LevelSums {
  Vector base;      // sum over the first B samples
  Vector previous;  // sum over the first 2^(J-1) B samples
  Vector full;      // sum over the first 2^J B samples
};

/// Walks 2^level * B samples, keeping the prefix sums the estimator needs.
LevelSums level_sums(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                     std::uint64_t B, int level) {
  const Eigen::Index d = x.size();
  LevelSums s{Vector::Zero(d), Vector::Zero(d), Vector::Zero(d)};
  Vector scratch(d);
  accumulate(oracle, x, cursor, B, s.base, scratch);
  s.previous = s.base;
  for (int j = 1; j < level; ++j) {
    accumulate(oracle, x, cursor, (B << (j - 1)), s.previous, scratch);
  }
  s.full = s.previous;
  if (level >= 1) accumulate(oracle, x, cursor, (B << (level - 1)), s.full, scratch);
  return s;
}

Vector combine(const LevelSums& s, std::uint64_t B, int level) {
  const double n0 = static_cast<double>(B);
  const double n_prev = std::ldexp(n0, level - 1);
  const double n_full = std::ldexp(n0, level);
  const Vector g0 = s.base / n0;
  return g0 + std::ldexp(1.0, level) * (s.full / n_full - s.previous / n_prev);
}

}  // namespace

void MlmcConfig::validate() const {
  if (B < 1) throw ConfigError("MLMC batch size B must be >= 1");
  if (M < 1) throw ConfigError("MLMC truncation M must be >= 1");
  if (B > (1ULL << 40)) throw ConfigError(fmt::format("MLMC batch size B = {} is too large", B));
}

int MlmcConfig::max_level() const { return static_cast<int>(std::bit_width(M)) - 1; }

double MlmcConfig::expected_oracle_calls() const {
  const int k = max_level();
  return static_cast<double>(B) * (k + std::ldexp(1.0, -k));
}

int LevelSampler::draw(int cap) {
  const std::uint64_t bits = rng_();
  const int j = 1 + std::countr_zero(bits);
  return std::min(j, cap);
}

Estimate single_sample(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor) {
  Estimate e;
  e.g.resize(x.size());
  oracle(x, cursor.step(), e.g);
  if (e.g.size() != x.size()) {
    throw InputError(fmt::format("oracle returned dimension {}, expected {}", e.g.size(), x.size()));
  }
  e.oracle_calls = 1;
  e.chain_steps = 1;
  return e;
}

Estimate batch_mean(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                    std::uint64_t B) {
  if (B < 1) throw ConfigError("batch size must be >= 1");
  Estimate e;
  e.g = Vector::Zero(x.size());
  Vector scratch(x.size());
  accumulate(oracle, x, cursor, B, e.g, scratch);
  e.g /= static_cast<double>(B);
  e.oracle_calls = B;
  e.chain_steps = B;
  return e;
}

Estimate mlmc_geometric(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                        const MlmcConfig& cfg, LevelSampler& levels) {
  cfg.validate();
  const int level = levels.draw(level_cap(cfg.B));
  const std::uint64_t steps = cfg.B << level;
  Estimate e;
  e.level = level;
  e.chain_steps = steps;
  if ((1ULL << level) <= cfg.M) {
    const LevelSums s = level_sums(oracle, x, cursor, cfg.B, level);
    e.g = combine(s, cfg.B, level);
    e.oracle_calls = steps;
  } else {
    e.g = Vector::Zero(x.size());
    Vector scratch(x.size());
    accumulate(oracle, x, cursor, cfg.B, e.g, scratch);
    e.g /= static_cast<double>(cfg.B);
    cursor.skip(steps - cfg.B);
    e.oracle_calls = cfg.B;
  }
  return e;
}

PairedEstimate mlmc_paired(const SampleOracle& oracle, const Vector& x, ChainCursor& cursor,
                           const MlmcConfig& cfg, LevelSampler& levels) {
  cfg.validate();
  const int top = cfg.max_level();
  const int level = levels.draw(level_cap(cfg.B));
  const bool used = (1ULL << level) <= cfg.M;
  // Walk far enough for both the drawn level (if used) and the top level.
  const int walk = used ? std::max(level, top) : top;
  const Eigen::Index d = x.size();

  std::vector<Vector> prefix;  // prefix[j] = sum of the first 2^j B samples
  prefix.reserve(static_cast<std::size_t>(walk) + 1);
  Vector sum = Vector::Zero(d);
  Vector scratch(d);
  accumulate(oracle, x, cursor, cfg.B, sum, scratch);
  prefix.push_back(sum);
  for (int j = 1; j <= walk; ++j) {
    accumulate(oracle, x, cursor, cfg.B << (j - 1), sum, scratch);
    prefix.push_back(sum);
  }
  std::uint64_t walked = cfg.B << walk;

  PairedEstimate out;
  out.top_level_mean = prefix[static_cast<std::size_t>(top)] / std::ldexp(static_cast<double>(cfg.B), top);
  out.mlmc.level = level;
  const double n0 = static_cast<double>(cfg.B);
  if (used) {
    const LevelSums s{prefix[0], prefix[static_cast<std::size_t>(level - 1)],
                      prefix[static_cast<std::size_t>(level)]};
    out.mlmc.g = combine(s, cfg.B, level);
    out.mlmc.oracle_calls = cfg.B << level;
  } else {
    out.mlmc.g = prefix[0] / n0;
    out.mlmc.oracle_calls = cfg.B;
    const std::uint64_t steps = cfg.B << level;
    if (steps > walked) {
      cursor.skip(steps - walked);
      walked = steps;
    }
  }
  out.mlmc.chain_steps = walked;
  return out;
}

}  // namespace markov_opt
