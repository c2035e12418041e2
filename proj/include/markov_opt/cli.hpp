#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "markov_opt/chain.hpp"
#include "markov_opt/keyvalue.hpp"

namespace markov_opt {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitRuntime = 3,
  kExitErgodicity = 4,
  kExitStatistics = 5,
};

/// Fully resolved experiment configuration; every default is filled in.
struct ExperimentConfig {
  // problem.*
  std::string problem_kind = "quadratic";  // quadratic | game
  std::string problem_file;                // optional exported instance
  int dim = 10;
  std::string geometry = "box";  // box | ball | simplex
  double noise = 0.0;
  std::uint64_t problem_seed = 1;
  std::string spectrum = "uniform";  // uniform | logspaced
  double min_eig = 1e-6;
  double lmax = 1.0;
  std::string minimizer = "random";  // random | interior
  std::string payoff = "random";     // random | pennies (games)
  int rows = 4;
  int cols = 4;
  double affine = 0.0;

  // chain.*
  std::string chain_kind = "random";  // random | matrix
  int states = 8;
  std::uint64_t chain_seed = 7;
  double laziness = 0.0;
  Matrix chain_matrix;
  std::optional<int> start_state;  // nullopt: stationary start

  std::string algorithm = "mamd-batched";  // mamd | mamd-batched | mmp | mmp-batched
  std::string schedule_source = "corollary";  // corollary | explicit
  std::optional<double> step_override;
  std::optional<int> tau_override;

  std::int64_t T = 100;
  std::optional<std::uint64_t> batch;
  std::optional<std::uint64_t> truncation;
  std::vector<std::uint64_t> seeds = {1};
  std::int64_t stride = 1;

  std::string out_dir = ".";
  bool record_wall = false;
  bool export_instance = false;

  std::vector<std::int64_t> sweep_t;
  std::string sweep_axis = "T";  // T | oracle_calls
  std::optional<std::pair<double, double>> sweep_window;

  std::vector<std::int64_t> lemma1_n;
  std::int64_t lemma1_trials = 2000;
  double lemma1_q = 2.0;

  std::vector<std::uint64_t> lemma2_bias_m;
  std::uint64_t lemma2_paired_m = 64;
  std::int64_t lemma2_paired_trials = 100000;
  std::vector<std::uint64_t> lemma2_variance_b;
  std::vector<std::uint64_t> lemma2_variance_m;
  std::int64_t lemma2_variance_trials = 4000;
  std::int64_t lemma2_jensen_trials = 4000;

  /// Canonical `key = value` echo of every resolved setting, sorted by key.
  std::map<std::string, std::string> echo;
};

/// Resolves and validates every key; unknown keys and bad values throw ConfigError
/// anchored at the offending line.
ExperimentConfig resolve_config(const KeyValueDocument& doc);

/// Builds the configured transition kernel (laziness applied).
TransitionKernel build_kernel(const ExperimentConfig& cfg);

/// FNV-1a over the canonical echo; names output files.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Comment header: version line plus `# key = value` per echoed setting.
std::string config_header(const ExperimentConfig& cfg);

/// Entry point for the `markov-opt` binary; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace markov_opt
