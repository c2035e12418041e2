#include "markov_opt/solvers.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

constexpr double kScheduleSlack = 1e-12;

void require_positive_constants(double L, double D, double sigma) {
  if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError(fmt::format("smoothness L = {} must be positive", L));
  if (!(D > 0.0) || !std::isfinite(D)) throw ConfigError(fmt::format("diameter D = {} must be positive", D));
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError(fmt::format("sigma = {} must be >= 0", sigma));
}

double pick_step(double L, double noise_term, std::optional<double> override_step) {
  if (override_step) {
    if (!(*override_step > 0.0)) throw ConfigError("explicit step factor must be positive");
    return *override_step;
  }
  return std::min(1.0 / (2.0 * L), noise_term);
}

/// Tracks elapsed time and emits rows at the configured stride.
class Recorder {
 public:
  Recorder(const RunOptions& opts, RunRecord& record, std::int64_t horizon)
      : opts_(opts), record_(record), horizon_(horizon) {
    if (opts_.stride < 1) throw ConfigError("record stride must be >= 1");
    start_ = std::chrono::steady_clock::now();
  }

  void maybe_record(std::int64_t t, const Vector& reported) {
    if (t % opts_.stride != 0 && t != horizon_) return;
    RunRow row;
    row.t = t;
    row.oracle_calls = record_.oracle_calls;
    row.chain_steps = record_.chain_steps;
    row.gap = opts_.metric ? opts_.metric(reported) : std::numeric_limits<double>::quiet_NaN();
    if (opts_.record_wall) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }
    record_.rows.push_back(row);
  }

 private:
  const RunOptions& opts_;
  RunRecord& record_;
  std::int64_t horizon_;
  std::chrono::steady_clock::time_point start_;
};

Vector starting_point(const Geometry& g, const RunOptions& opts) {
  if (!opts.x0) return g.center();
  if (opts.x0->size() != g.dim()) throw InputError("x0 has the wrong dimension");
  if (!g.contains(*opts.x0)) throw InputError("x0 is not in the feasible set");
  return *opts.x0;
}

void check_horizon(const MamdSchedule& sched, std::int64_t T) {
  if (T < 1) throw ConfigError("iteration count T must be >= 1");
  if (sched.horizon() < T - 1) {
    throw ConfigError(fmt::format("schedule covers t <= {}, run needs t <= {}", sched.horizon(), T - 1));
  }
}

void check_vi_step(double gamma, double lipschitz, const char* which) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("stepsize gamma must be positive");
  if (lipschitz > 0.0 && gamma > (1.0 + kScheduleSlack) / (2.0 * lipschitz)) {
    throw ConfigError(fmt::format("gamma = {:.6g} exceeds 1/(2 {}) = {:.6g}", gamma, which, 0.5 / lipschitz));
  }
}

/// Shared MAMD loop; `gradient` produces the estimate at x_g.
template <typename GradientFn>
RunRecord run_mamd(const MinProblem& p, const MamdSchedule& sched, std::int64_t T,
                   const RunOptions& opts, GradientFn&& gradient) {
  const Geometry& geo = p.geometry();
  RunRecord record;
  Recorder recorder(opts, record, T);
  Vector x = starting_point(geo, opts);
  Vector x_f = x;
  Vector x_g(x.size());
  if (opts.keep_trajectory) record.iterates.push_back(x);
  for (std::int64_t t = 0; t < T; ++t) {
    const double beta = sched.beta(t);
    const double gamma = sched.gamma(t);
    const double w = 1.0 / beta;
    x_g = w * x + (1.0 - w) * x_f;
    Estimate e = gradient(x_g);
    record.oracle_calls += e.oracle_calls;
    record.chain_steps += e.chain_steps;
    x = geo.prox(x, gamma * e.g);
    x_f = w * x + (1.0 - w) * x_f;
    if (opts.keep_trajectory) {
      record.iterates.push_back(x);
      record.auxiliary.push_back(x_g);
      if (e.level > 0) record.levels.push_back(e.level);
    }
    recorder.maybe_record(t + 1, x_f);
  }
  record.final_iterate = std::move(x_f);
  return record;
}

/// Shared MMP loop; `extrapolate` and `update` return the estimates at x^t and x^{t+1/2}.
template <typename ExtrapolateFn, typename UpdateFn>
RunRecord run_mmp(const ViProblem& p, double gamma, int window_start, std::int64_t T,
                  const RunOptions& opts, ExtrapolateFn&& extrapolate, UpdateFn&& update) {
  const Geometry& geo = p.geometry();
  RunRecord record;
  Recorder recorder(opts, record, T);
  Vector x = starting_point(geo, opts);
  Vector average = Vector::Zero(x.size());
  std::int64_t averaged = 0;
  if (opts.keep_trajectory) record.iterates.push_back(x);
  for (std::int64_t t = 0; t < T; ++t) {
    Estimate first = extrapolate(x);
    const Vector half = geo.prox(x, gamma * first.g);
    Estimate second = update(half);
    record.oracle_calls += first.oracle_calls + second.oracle_calls;
    record.chain_steps += first.chain_steps + second.chain_steps;
    x = geo.prox(x, gamma * second.g);
    if (t >= window_start) {
      ++averaged;
      average += (half - average) / static_cast<double>(averaged);
    }
    if (opts.keep_trajectory) {
      record.iterates.push_back(x);
      record.auxiliary.push_back(half);
      if (second.level > 0) record.levels.push_back(second.level);
    }
    // Before the averaging window opens the latest extrapolation point stands in.
    recorder.maybe_record(t + 1, averaged > 0 ? average : half);
  }
  record.final_iterate = std::move(average);
  return record;
}

}  // namespace

MamdSchedule::MamdSchedule(std::vector<double> beta, std::vector<double> gamma, int tau,
                           double smoothness)
    : beta_(std::move(beta)), gamma_(std::move(gamma)), tau_(tau), smoothness_(smoothness) {
  if (beta_.empty() || beta_.size() != gamma_.size()) {
    throw ConfigError("schedule needs equally many beta and gamma values");
  }
  if (tau_ < 0 || static_cast<std::size_t>(tau_) >= beta_.size()) {
    throw ConfigError(fmt::format("schedule offset tau = {} outside the tabulated range", tau_));
  }
  if (!(smoothness_ >= 0.0)) throw ConfigError("schedule smoothness must be >= 0");
  for (std::size_t t = 0; t < beta_.size(); ++t) {
    const double b = beta_[t];
    const double g = gamma_[t];
    if (!(b >= 1.0) || !std::isfinite(b)) throw ConfigError(fmt::format("beta_{} = {} < 1", t, b));
    if (!(g > 0.0) || !std::isfinite(g)) throw ConfigError(fmt::format("gamma_{} = {} is not positive", t, g));
    if (b < 2.0 * g * smoothness_ * (1.0 - kScheduleSlack)) {
      throw ConfigError(fmt::format("beta_{} = {:.6g} < 2 gamma_{} L = {:.6g}", t, b, t, 2.0 * g * smoothness_));
    }
    if (t + 1 < beta_.size()) {
      const double lhs = (beta_[t + 1] - 1.0) * gamma_[t + 1];
      const double rhs = b * g;
      if (lhs > rhs * (1.0 + kScheduleSlack)) {
        throw ConfigError(fmt::format("(beta_{0} - 1) gamma_{0} = {1:.6g} exceeds beta_{2} gamma_{2} = {3:.6g}",
                                      t + 1, lhs, t, rhs));
      }
    }
  }
  if (beta_[static_cast<std::size_t>(tau_)] != 1.0) {
    throw ConfigError(fmt::format("beta_tau must equal 1, got {}", beta_[static_cast<std::size_t>(tau_)]));
  }
}

MamdSchedule corollary1_schedule(double L, double D, double sigma, int tau_mix, std::int64_t T,
                                 std::optional<double> step_override) {
  require_positive_constants(L, D, sigma);
  if (tau_mix < 1) throw ConfigError("tau_mix must be >= 1");
  if (T <= tau_mix) throw ConfigError(fmt::format("T = {} must exceed tau_mix = {}", T, tau_mix));
  const double noise_term =
      sigma == 0.0 ? std::numeric_limits<double>::infinity()
                   : D / (std::pow(static_cast<double>(T - tau_mix), 1.5) * sigma * std::pow(tau_mix, 1.5));
  const double factor = pick_step(L, noise_term, step_override);
  std::vector<double> beta(static_cast<std::size_t>(T) + 1);
  std::vector<double> gamma(beta.size());
  for (std::int64_t t = 0; t <= T; ++t) {
    const double b = std::max(static_cast<double>(t - tau_mix) / 2.0 + 1.0, 1.0);
    beta[static_cast<std::size_t>(t)] = b;
    gamma[static_cast<std::size_t>(t)] = b * factor;
  }
  return MamdSchedule(std::move(beta), std::move(gamma), tau_mix, L);
}

std::pair<MamdSchedule, MlmcConfig> corollary2_schedule(double L, double D, double sigma,
                                                        int tau_mix, std::int64_t T,
                                                        std::optional<double> step_override) {
  require_positive_constants(L, D, sigma);
  if (tau_mix < 1) throw ConfigError("tau_mix must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  const double noise_term =
      sigma == 0.0 ? std::numeric_limits<double>::infinity()
                   : D / (std::pow(static_cast<double>(T), 1.5) * sigma * std::sqrt(static_cast<double>(tau_mix)));
  const double factor = pick_step(L, noise_term, step_override);
  std::vector<double> beta(static_cast<std::size_t>(T) + 1);
  std::vector<double> gamma(beta.size());
  for (std::int64_t t = 0; t <= T; ++t) {
    const double b = static_cast<double>(t) / 2.0 + 1.0;
    beta[static_cast<std::size_t>(t)] = b;
    gamma[static_cast<std::size_t>(t)] = b * factor;
  }
  MlmcConfig cfg;
  cfg.B = 1;
  cfg.M = static_cast<std::uint64_t>(T);
  return {MamdSchedule(std::move(beta), std::move(gamma), 0, L), cfg};
}

double corollary3_gamma(double L_tilde, double D, double sigma, int tau_mix, std::int64_t T) {
  require_positive_constants(L_tilde, D, sigma);
  if (tau_mix < 1) throw ConfigError("tau_mix must be >= 1");
  if (T <= tau_mix) throw ConfigError(fmt::format("T = {} must exceed tau_mix = {}", T, tau_mix));
  if (sigma == 0.0) return 1.0 / (2.0 * L_tilde);
  return std::min(1.0 / (2.0 * L_tilde),
                  D / (std::sqrt(static_cast<double>(T - tau_mix)) * sigma * tau_mix));
}

std::pair<double, MlmcConfig> corollary4_params(double L, double D, double sigma, int tau_mix,
                                                std::int64_t T) {
  require_positive_constants(L, D, sigma);
  if (tau_mix < 1) throw ConfigError("tau_mix must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  double gamma = 1.0 / (2.0 * L);
  if (sigma > 0.0) {
    gamma = std::min(gamma, D / (std::sqrt(static_cast<double>(T)) * sigma *
                                 std::sqrt(static_cast<double>(tau_mix))));
  }
  MlmcConfig cfg;
  cfg.B = 1;
  cfg.M = static_cast<std::uint64_t>(T);
  return {gamma, cfg};
}

RunRecord mamd_unbatched(const MinProblem& p, const MamdSchedule& sched, ChainCursor& cursor,
                         std::int64_t T, const RunOptions& opts) {
  check_horizon(sched, T);
  if (T < sched.tau()) throw ConfigError(fmt::format("T = {} is below tau_mix = {}", T, sched.tau()));
  const SampleOracle oracle = [&p](const Vector& x, int z, Vector& out) { p.grad_oracle(x, z, out); };
  return run_mamd(p, sched, T, opts, [&](const Vector& x_g) { return single_sample(oracle, x_g, cursor); });
}

RunRecord mamd_batched(const MinProblem& p, const MamdSchedule& sched, ChainCursor& cursor,
                       const MlmcConfig& cfg, LevelSampler& levels, std::int64_t T,
                       const RunOptions& opts) {
  check_horizon(sched, T);
  cfg.validate();
  if (sched.tau() != 0) throw ConfigError("the batched method needs a schedule with beta_0 = 1 (tau = 0)");
  const SampleOracle oracle = [&p](const Vector& x, int z, Vector& out) { p.grad_oracle(x, z, out); };
  return run_mamd(p, sched, T, opts,
                  [&](const Vector& x_g) { return mlmc_geometric(oracle, x_g, cursor, cfg, levels); });
}

RunRecord mmp_unbatched(const ViProblem& p, double gamma, int tau, ChainCursor& cursor,
                        std::int64_t T, const RunOptions& opts) {
  check_vi_step(gamma, p.lipschitz_per_state(), "L_tilde");
  if (tau < 0) throw ConfigError("tau_mix must be >= 0");
  if (T <= tau) throw ConfigError(fmt::format("T = {} must exceed tau_mix = {}", T, tau));
  // One chain state per iteration, shared by both prox steps.
  int state = 0;
  auto extrapolate = [&](const Vector& x) {
    state = cursor.step();
    Estimate e;
    e.g.resize(x.size());
    p.op_oracle(x, state, e.g);
    e.oracle_calls = 1;
    e.chain_steps = 1;
    return e;
  };
  auto update = [&](const Vector& half) {
    Estimate e;
    e.g.resize(half.size());
    p.op_oracle(half, state, e.g);
    e.oracle_calls = 1;
    return e;
  };
  return run_mmp(p, gamma, tau, T, opts, extrapolate, update);
}

RunRecord mmp_batched(const ViProblem& p, double gamma, ChainCursor& cursor, const MlmcConfig& cfg,
                      LevelSampler& levels, std::int64_t T, const RunOptions& opts) {
  check_vi_step(gamma, p.lipschitz(), "L");
  cfg.validate();
  if (T < 1) throw ConfigError("iteration count T must be >= 1");
  const SampleOracle oracle = [&p](const Vector& x, int z, Vector& out) { p.op_oracle(x, z, out); };
  return run_mmp(
      p, gamma, 0, T, opts, [&](const Vector& x) { return batch_mean(oracle, x, cursor, cfg.B); },
      [&](const Vector& half) { return mlmc_geometric(oracle, half, cursor, cfg, levels); });
}

}  // namespace markov_opt
