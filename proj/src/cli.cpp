#include "markov_opt/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "markov_opt/errors.hpp"
#include "markov_opt/estimators.hpp"
#include "markov_opt/problems.hpp"
#include "markov_opt/solvers.hpp"
#include "markov_opt/validation.hpp"

namespace markov_opt {

namespace {

namespace fs = std::filesystem;

/// Reads keys with defaults and records the canonical value of each.
class Resolver {
 public:
  Resolver(const KeyValueDocument& doc, std::map<std::string, std::string>& echo) : doc_(doc), echo_(echo) {}

  std::string choice(const std::string& key, const std::string& fallback, std::set<std::string> allowed) {
    const std::string v = doc_.get_string(key, fallback);
    if (allowed.count(v) == 0) {
      doc_.fail(key, fmt::format("'{}' is not one of {{{}}}", v, fmt::join(allowed, ", ")));
    }
    echo_[key] = v;
    return v;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const std::string v = doc_.get_string(key, fallback);
    if (!v.empty()) echo_[key] = v;
    return v;
  }

  double real(const std::string& key, double fallback, double lo, double hi) {
    const double v = doc_.get_double(key, fallback);
    if (!(v >= lo && v <= hi)) doc_.fail(key, fmt::format("{} outside [{}, {}]", v, lo, hi));
    echo_[key] = fmt::format("{}", v);
    return v;
  }

  std::optional<double> optional_real(const std::string& key, double lo, double hi) {
    if (!doc_.has(key)) return std::nullopt;
    return real(key, 0.0, lo, hi);
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t lo, std::int64_t hi) {
    const std::int64_t v = doc_.get_int(key, fallback);
    if (v < lo || v > hi) doc_.fail(key, fmt::format("{} outside [{}, {}]", v, lo, hi));
    echo_[key] = std::to_string(v);
    return v;
  }

  std::optional<std::int64_t> optional_integer(const std::string& key, std::int64_t lo, std::int64_t hi) {
    if (!doc_.has(key)) return std::nullopt;
    return integer(key, 0, lo, hi);
  }

  std::vector<std::int64_t> integers(const std::string& key, std::vector<std::int64_t> fallback,
                                     std::int64_t lo, std::int64_t hi) {
    std::vector<std::int64_t> v = doc_.has(key) ? doc_.get_ints(key) : std::move(fallback);
    for (auto x : v) {
      if (x < lo || x > hi) doc_.fail(key, fmt::format("item {} outside [{}, {}]", x, lo, hi));
    }
    if (!v.empty()) echo_[key] = fmt::format("{}", fmt::join(v, ", "));
    return v;
  }

  bool flag(const std::string& key, bool fallback) {
    const std::string v = doc_.get_string(key, fallback ? "true" : "false");
    if (v != "true" && v != "false") doc_.fail(key, "expected true or false");
    echo_[key] = v;
    return v == "true";
  }

  const KeyValueDocument& doc() const { return doc_; }

 private:
  const KeyValueDocument& doc_;
  std::map<std::string, std::string>& echo_;
};

std::vector<std::uint64_t> to_unsigned(const std::vector<std::int64_t>& v) {
  return {v.begin(), v.end()};
}

bool strictly_increasing(const std::vector<std::int64_t>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

/// Config text, or the comment header of a CSV this tool wrote.
KeyValueDocument load_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  std::string first;
  std::getline(in, first);
  in.clear();
  in.seekg(0);
  if (first.rfind("# version =", 0) != 0) return KeyValueDocument::parse(in, path);
  std::stringstream header;
  std::string line;
  while (std::getline(in, line) && line.rfind("# ", 0) == 0) header << line.substr(2) << '\n';
  return KeyValueDocument::parse(header, path);
}

struct Context {
  ExperimentConfig cfg;
  std::shared_ptr<const TransitionKernel> kernel;
  ChainDiagnostics diag;
  int tau = 0;
  int jobs = 1;
};

Context prepare(const KeyValueDocument& doc, int jobs) {
  Context ctx;
  ctx.cfg = resolve_config(doc);
  ctx.kernel = std::make_shared<const TransitionKernel>(build_kernel(ctx.cfg));
  ctx.diag = diagnose(*ctx.kernel);
  ctx.tau = ctx.cfg.tau_override.value_or(ctx.diag.tau_mix);
  // The resolved mixing time is part of the echo so a re-run from the header is exact.
  ctx.cfg.echo["schedule.tau_mix"] = std::to_string(ctx.tau);
  ctx.jobs = jobs;
  return ctx;
}

std::string hash_hex(const ExperimentConfig& cfg) { return fmt::format("{:016x}", config_hash(cfg)); }

std::ofstream open_output(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  const fs::path path = fs::path(cfg.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

std::string fmt_double(double v) { return format_double(v); }

// ---------------------------------------------------------------------------
// Problems and runs

struct Instance {
  std::optional<MinProblem> min;
  std::optional<ViProblem> vi;
};

Instance build_instance(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Vector& pi = ctx.diag.pi;
  Instance inst;
  if (!cfg.problem_file.empty()) {
    std::ifstream in(cfg.problem_file);
    if (!in) throw ConfigError(fmt::format("cannot open instance file '{}'", cfg.problem_file));
    if (cfg.problem_kind == "quadratic") {
      inst.min.emplace(read_min_instance(in));
    } else {
      inst.vi.emplace(read_vi_instance(in));
    }
    const Vector& stored = inst.min ? inst.min->pi() : inst.vi->pi();
    if (stored.size() != pi.size() || (stored - pi).cwiseAbs().maxCoeff() > 1e-9) {
      throw ConfigError("instance file was generated for a different chain");
    }
    return inst;
  }
  auto set_kind = [](const std::string& g) {
    return g == "box" ? SetKind::kBox : g == "ball" ? SetKind::kBall : SetKind::kSimplex;
  };
  if (cfg.problem_kind == "quadratic") {
    MinInstanceSpec spec;
    spec.dim = cfg.dim;
    spec.set = set_kind(cfg.geometry);
    spec.noise = cfg.noise;
    spec.seed = cfg.problem_seed;
    spec.lmax = cfg.lmax;
    spec.spectrum = cfg.spectrum == "logspaced" ? Spectrum::kLogSpaced : Spectrum::kUniform;
    spec.min_eig = cfg.min_eig;
    spec.placement = cfg.minimizer == "interior" ? MinimizerPlacement::kInterior : MinimizerPlacement::kRandom;
    inst.min.emplace(make_min_instance(spec, pi));
  } else if (cfg.payoff == "pennies") {
    inst.vi.emplace(matching_pennies(pi, cfg.noise, cfg.problem_seed));
  } else {
    ViInstanceSpec spec;
    spec.rows = cfg.rows;
    spec.cols = cfg.cols;
    spec.set = set_kind(cfg.geometry);
    spec.noise = cfg.noise;
    spec.seed = cfg.problem_seed;
    spec.affine = cfg.affine;
    inst.vi.emplace(make_vi_instance(spec, pi));
  }
  return inst;
}

ChainCursor make_cursor(const Context& ctx, std::uint64_t seed) {
  const std::uint64_t s = mix_seed(seed, 0x636861696eULL);
  if (ctx.cfg.start_state) return ChainCursor::fixed_start(ctx.kernel, *ctx.cfg.start_state, s);
  return ChainCursor::stationary_start(ctx.kernel, ctx.diag.pi, s);
}

MlmcConfig apply_overrides(MlmcConfig base, const ExperimentConfig& cfg) {
  if (cfg.batch) base.B = *cfg.batch;
  if (cfg.truncation) base.M = *cfg.truncation;
  return base;
}

RunRecord run_once(const Context& ctx, const Instance& inst, std::int64_t T, std::uint64_t seed) {
  const ExperimentConfig& cfg = ctx.cfg;
  ChainCursor cursor = make_cursor(ctx, seed);
  LevelSampler levels(mix_seed(seed, 0x6c6576656cULL));
  RunOptions opts;
  opts.stride = cfg.stride;
  opts.record_wall = cfg.record_wall;
  if (inst.min) {
    const MinProblem& p = *inst.min;
    const double D = std::sqrt(p.geometry().diameter_sq());
    opts.metric = [&p](const Vector& x) { return subopt_gap(p, x); };
    if (cfg.algorithm == "mamd") {
      const MamdSchedule sched = corollary1_schedule(p.smoothness(), D, p.sigma(), ctx.tau, T, cfg.step_override);
      return mamd_unbatched(p, sched, cursor, T, opts);
    }
    auto [sched, mlmc] = corollary2_schedule(p.smoothness(), D, p.sigma(), ctx.tau, T, cfg.step_override);
    return mamd_batched(p, sched, cursor, apply_overrides(mlmc, cfg), levels, T, opts);
  }
  const ViProblem& p = *inst.vi;
  const double D = std::sqrt(p.geometry().diameter_sq());
  opts.metric = [&p](const Vector& x) { return err_vi(p, x); };
  if (cfg.algorithm == "mmp") {
    const double gamma = cfg.step_override.value_or(
        corollary3_gamma(p.lipschitz_per_state(), D, p.sigma(), ctx.tau, T));
    return mmp_unbatched(p, gamma, ctx.tau, cursor, T, opts);
  }
  auto [gamma, mlmc] = corollary4_params(p.lipschitz(), D, p.sigma(), ctx.tau, T);
  if (cfg.step_override) gamma = *cfg.step_override;
  return mmp_batched(p, gamma, cursor, apply_overrides(mlmc, cfg), levels, T, opts);
}

double final_gap(const Instance& inst, const RunRecord& r) {
  return inst.min ? subopt_gap(*inst.min, r.final_iterate) : err_vi(*inst.vi, r.final_iterate);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads, rethrowing the first failure.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string run_csv(const ExperimentConfig& cfg, std::uint64_t seed, const RunRecord& r) {
  ExperimentConfig single = cfg;
  single.echo["run.seeds"] = std::to_string(seed);
  std::string out = config_header(single);
  out += "t,oracle_calls,chain_steps,gap,wall_ms\n";
  for (const RunRow& row : r.rows) {
    out += fmt::format("{},{},{},{},{}\n", row.t, row.oracle_calls, row.chain_steps, fmt_double(row.gap),
                       fmt_double(row.wall_ms));
  }
  return out;
}

int cmd_run(const Context& ctx, std::ostream& out) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Instance inst = build_instance(ctx);
  const std::string hash = hash_hex(cfg);
  if (cfg.export_instance) {
    std::ofstream f = open_output(cfg, fmt::format("instance_{}.txt", hash));
    if (inst.min) write_instance(f, *inst.min);
    else write_instance(f, *inst.vi);
  }
  std::vector<RunRecord> records(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), ctx.jobs, [&](std::size_t i) {
    records[i] = run_once(ctx, inst, cfg.T, cfg.seeds[i]);
  });
  std::vector<double> finals;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    std::ofstream f = open_output(cfg, fmt::format("run_{}_seed{}.csv", hash, cfg.seeds[i]));
    f << run_csv(cfg, cfg.seeds[i], records[i]);
    finals.push_back(final_gap(inst, records[i]));
  }
  const double q25 = quantile(finals, 0.25);
  const double q75 = quantile(finals, 0.75);
  const double med = median(finals);
  std::ofstream f = open_output(cfg, fmt::format("summary_{}.csv", hash));
  f << config_header(cfg) << "runs,tau_mix,median_final_gap,q25_final_gap,q75_final_gap,iqr_final_gap\n"
    << fmt::format("{},{},{},{},{},{}\n", finals.size(), ctx.tau, fmt_double(med), fmt_double(q25),
                   fmt_double(q75), fmt_double(q75 - q25));
  out << fmt::format("{} run(s), tau_mix = {}, median final gap = {:.6g} (IQR {:.3g}); outputs in {}\n",
                     finals.size(), ctx.tau, med, q75 - q25, cfg.out_dir);
  return kExitOk;
}

int cmd_sweep(const Context& ctx, std::ostream& out) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.sweep_t.empty()) throw ConfigError("sweep.T must list at least one horizon");
  const Instance inst = build_instance(ctx);
  const std::size_t n_t = cfg.sweep_t.size();
  const std::size_t n_s = cfg.seeds.size();
  std::vector<double> gaps(n_t * n_s);
  std::vector<double> calls(n_t * n_s);
  parallel_for(n_t * n_s, ctx.jobs, [&](std::size_t k) {
    const RunRecord r = run_once(ctx, inst, cfg.sweep_t[k / n_s], cfg.seeds[k % n_s]);
    gaps[k] = final_gap(inst, r);
    calls[k] = static_cast<double>(r.oracle_calls);
  });

  GapReport report;
  report.metric = inst.min ? "subopt_gap" : "err_vi";
  std::string rows = "T,oracle_calls_median,gap_median,gap_q25,gap_q75\n";
  const double warmup = std::max(ctx.tau, 10);
  for (std::size_t i = 0; i < n_t; ++i) {
    std::vector<double> g(gaps.begin() + i * n_s, gaps.begin() + (i + 1) * n_s);
    std::vector<double> c(calls.begin() + i * n_s, calls.begin() + (i + 1) * n_s);
    rows += fmt::format("{},{},{},{},{}\n", cfg.sweep_t[i], fmt_double(median(c)), fmt_double(median(g)),
                        fmt_double(quantile(g, 0.25)), fmt_double(quantile(g, 0.75)));
    if (static_cast<double>(cfg.sweep_t[i]) < warmup) continue;
    report.budgets.push_back(cfg.sweep_axis == "T" ? static_cast<double>(cfg.sweep_t[i]) : median(c));
    report.values.push_back(std::move(g));
  }
  const std::string hash = hash_hex(cfg);
  {
    std::ofstream f = open_output(cfg, fmt::format("sweep_{}.csv", hash));
    f << config_header(cfg) << rows;
  }
  const RateFit fit = rate_fit(report);
  {
    std::ofstream f = open_output(cfg, fmt::format("sweep_fit_{}.csv", hash));
    f << config_header(cfg) << "axis,slope,ci_lo,ci_hi,points,floored\n"
      << fmt::format("{},{},{},{},{},{}\n", cfg.sweep_axis, fmt_double(fit.slope), fmt_double(fit.ci_lo),
                     fmt_double(fit.ci_hi), fit.used_budgets.size(), fit.floored_budgets.size());
  }
  out << fmt::format("slope of {} vs {}: {:.4f} (95% CI [{:.4f}, {:.4f}]), {} points, {} floored\n", report.metric,
                     cfg.sweep_axis, fit.slope, fit.ci_lo, fit.ci_hi, fit.used_budgets.size(),
                     fit.floored_budgets.size());
  if (cfg.sweep_window && (fit.slope < cfg.sweep_window->first || fit.slope > cfg.sweep_window->second)) {
    out << fmt::format("slope outside the window [{}, {}]\n", cfg.sweep_window->first, cfg.sweep_window->second);
    return kExitStatistics;
  }
  return kExitOk;
}

int cmd_diagnose(const Context& ctx, std::ostream& out) {
  out << config_header(ctx.cfg) << "kind,index,value\n";
  out << fmt::format("tau_mix,0,{}\n", ctx.diag.tau_mix);
  for (Eigen::Index z = 0; z < ctx.diag.pi.size(); ++z) out << fmt::format("pi,{},{}\n", z, fmt_double(ctx.diag.pi[z]));
  for (const auto& [t, tv] : ctx.diag.tv_curve) out << fmt::format("tv,{},{}\n", t, fmt_double(tv));
  return kExitOk;
}

std::string report_rows(const std::string& section, const ScalingReport& r) {
  std::string rows;
  for (const auto& c : r.cells) {
    rows += fmt::format("{},{},{},{},{},{}\n", section, c.label, fmt_double(c.parameter), fmt_double(c.value),
                        fmt_double(c.se), c.trials);
  }
  if (!r.degenerate) {
    rows += fmt::format("{},exponent,0,{},0,0\n", section, fmt_double(r.exponent));
    rows += fmt::format("{},exponent_lo,0,{},0,0\n", section, fmt_double(r.exponent_lo));
    rows += fmt::format("{},exponent_hi,0,{},0,0\n", section, fmt_double(r.exponent_hi));
    rows += fmt::format("{},constant,0,{},0,0\n", section, fmt_double(r.constant));
  }
  return rows;
}

constexpr const char* kReportColumns = "section,label,parameter,value,se,trials\n";

int cmd_lemma1(const Context& ctx, std::ostream& out) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Matrix noise = zero_mean_shifts(cfg.dim, ctx.diag.pi, cfg.noise, cfg.lemma1_q, cfg.problem_seed);
  Lemma1Config lc;
  lc.n_grid = cfg.lemma1_n;
  lc.trials = cfg.lemma1_trials;
  lc.q = cfg.lemma1_q;
  lc.seed = cfg.seeds.front();
  lc.jobs = ctx.jobs;
  const Lemma1Sweep sweep = lemma1_tau_sweep(ctx.kernel, noise, lc);

  std::string rows = report_rows("base", sweep.base) + report_rows("lazy", sweep.lazy);
  rows += fmt::format("chain,tau_base,0,{},0,0\nchain,tau_lazy,0,{},0,0\nchain,laziness,0,{},0,0\n", sweep.tau_base,
                      sweep.tau_lazy, fmt_double(sweep.laziness));
  rows += fmt::format("fit,constant_ratio,0,{},0,0\n", fmt_double(sweep.constant_ratio));
  std::ofstream f = open_output(cfg, fmt::format("lemma1_{}.csv", hash_hex(cfg)));
  f << config_header(cfg) << kReportColumns << rows;

  if (sweep.base.degenerate && sweep.lazy.degenerate) {
    out << "lemma1: zero noise, every cell is 0 (trivial pass)\n";
    return kExitOk;
  }
  const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  const bool slope_ok = in(sweep.base.exponent, -1.2, -0.8) && in(sweep.lazy.exponent, -1.2, -0.8);
  const bool ratio_ok = in(sweep.constant_ratio, 1.4, 3.0);
  out << fmt::format("lemma1: exponent {:.3f} (tau {}), {:.3f} (tau {}); constant ratio {:.3f} -> {}\n",
                     sweep.base.exponent, sweep.tau_base, sweep.lazy.exponent, sweep.tau_lazy,
                     sweep.constant_ratio, slope_ok && ratio_ok ? "pass" : "fail");
  return slope_ok && ratio_ok ? kExitOk : kExitStatistics;
}

int cmd_lemma2(const Context& ctx, std::ostream& out) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.problem_kind != "quadratic") throw ConfigError("check-lemma2 needs problem.kind = quadratic");
  const Instance inst = build_instance(ctx);
  const MinProblem& p = *inst.min;
  const SampleOracle oracle = [&p](const Vector& x, int z, Vector& g) { p.grad_oracle(x, z, g); };
  Lemma2Config lc;
  lc.bias_m = cfg.lemma2_bias_m;
  lc.bias_batch = cfg.batch.value_or(1);
  lc.paired_m = cfg.lemma2_paired_m;
  lc.paired_batch = cfg.batch.value_or(1);
  lc.paired_trials = cfg.lemma2_paired_trials;
  lc.variance_b = cfg.lemma2_variance_b;
  lc.variance_m = cfg.lemma2_variance_m;
  lc.variance_trials = cfg.lemma2_variance_trials;
  lc.jensen_trials = cfg.lemma2_jensen_trials;
  lc.q = p.geometry().norms().q();
  lc.seed = cfg.seeds.front();
  lc.jobs = ctx.jobs;
  const Lemma2Report r = lemma2_check(oracle, p.geometry().center(), ctx.kernel, ctx.diag.pi, lc);

  std::string rows = report_rows("bias", r.bias) + report_rows("mean_square", r.jensen);
  for (Eigen::Index k = 0; k < r.unbiased.mean_difference.size(); ++k) {
    rows += fmt::format("unbiased,coord{},{},{},{},{}\n", k, k, fmt_double(r.unbiased.mean_difference[k]),
                        fmt_double(r.unbiased.standard_error[k]), r.unbiased.trials);
  }
  rows += fmt::format("unbiased,max_z,0,{},0,0\n", fmt_double(r.unbiased.max_z));
  for (std::size_t i = 0; i < r.variance.size(); ++i) {
    const auto& c = r.variance[i];
    rows += fmt::format("variance,{},{},{},{},{}\n", c.label, fmt_double(c.parameter), fmt_double(c.value),
                        fmt_double(c.se), c.trials);
    rows += fmt::format("variance_constant,{},{},{},0,0\n", c.label, fmt_double(c.parameter),
                        fmt_double(r.variance_constants[i]));
  }
  std::ofstream f = open_output(cfg, fmt::format("lemma2_{}.csv", hash_hex(cfg)));
  f << config_header(cfg) << kReportColumns << rows;

  if (r.bias.degenerate) {
    out << "lemma2: zero noise, bias and variance are 0 (trivial pass)\n";
    return kExitOk;
  }
  const bool unbiased_ok = r.unbiased.max_z <= 4.0;
  const bool bias_ok = r.bias.exponent >= -1.3 && r.bias.exponent <= -0.7;
  // Variance must not increase with B at fixed M beyond 2 standard errors.
  bool monotone_ok = true;
  const std::size_t nb = cfg.lemma2_variance_b.size();
  for (std::size_t i = 0; i + 1 < r.variance.size(); ++i) {
    if ((i + 1) % nb == 0) continue;
    const auto& a = r.variance[i];
    const auto& b = r.variance[i + 1];
    if (b.value > a.value + 2.0 * std::hypot(a.se, b.se)) monotone_ok = false;
  }
  out << fmt::format(
      "lemma2: unbiased max z = {:.2f} ({}); bias^2 exponent = {:.3f} ({}); mean-square exponent = {:.3f}; "
      "variance monotone in B ({})\n",
      r.unbiased.max_z, unbiased_ok ? "pass" : "fail", r.bias.exponent, bias_ok ? "pass" : "fail",
      r.jensen.exponent, monotone_ok ? "pass" : "fail");
  return unbiased_ok && bias_ok && monotone_ok ? kExitOk : kExitStatistics;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e)) return kExitConfig;
  if (dynamic_cast<const ErgodicityError*>(&e)) return kExitErgodicity;
  if (dynamic_cast<const StatisticsError*>(&e)) return kExitStatistics;
  return kExitRuntime;
}

}  // namespace

ExperimentConfig resolve_config(const KeyValueDocument& doc) {
  ExperimentConfig c;
  Resolver r(doc, c.echo);
  const std::string version = r.text("version", kVersion);
  if (version != kVersion) doc.fail("version", fmt::format("written by version {}, this is {}", version, kVersion));

  c.problem_kind = r.choice("problem.kind", "quadratic", {"quadratic", "game"});
  c.problem_file = r.text("problem.file", "");
  const bool game = c.problem_kind == "game";
  c.geometry = r.choice("problem.geometry", game ? "simplex" : "box",
                        game ? std::set<std::string>{"simplex", "box"} : std::set<std::string>{"box", "ball", "simplex"});
  c.noise = r.real("problem.noise", 0.0, 0.0, 1e6);
  c.problem_seed = static_cast<std::uint64_t>(r.integer("problem.seed", 1, 0, INT64_MAX));
  c.dim = static_cast<int>(r.integer("problem.dim", 10, 1, 2000));
  if (game) {
    c.payoff = r.choice("problem.payoff", "random", {"random", "pennies"});
    if (c.payoff == "random") {
      c.rows = static_cast<int>(r.integer("problem.rows", 4, 1, 1000));
      c.cols = static_cast<int>(r.integer("problem.cols", 4, 1, 1000));
      c.affine = r.real("problem.affine", 0.0, 0.0, 1e6);
    }
  } else {
    c.spectrum = r.choice("problem.spectrum", "uniform", {"uniform", "logspaced"});
    c.min_eig = r.real("problem.min_eig", 1e-6, 1e-300, 1.0);
    c.lmax = r.real("problem.lmax", 1.0, 1e-300, 1e12);
    c.minimizer = r.choice("problem.minimizer", "random", {"random", "interior"});
  }

  c.chain_kind = r.choice("chain.kind", "random", {"random", "matrix"});
  if (c.chain_kind == "random") {
    c.states = static_cast<int>(r.integer("chain.states", 8, 2, 99));
    c.chain_seed = static_cast<std::uint64_t>(r.integer("chain.seed", 7, 0, INT64_MAX));
  } else {
    const auto keys = doc.keys_with_prefix("chain.row.");
    if (keys.empty()) doc.fail("chain.kind", "matrix chains need chain.row.0, chain.row.1, ...");
    const int n = static_cast<int>(keys.size());
    c.chain_matrix.resize(n, n);
    for (int i = 0; i < n; ++i) {
      const std::string key = fmt::format("chain.row.{}", i);
      if (!doc.has(key)) doc.fail(keys.front(), fmt::format("missing {} ({} rows given)", key, n));
      const auto row = doc.get_doubles(key);
      if (static_cast<int>(row.size()) != n) doc.fail(key, fmt::format("expected {} entries, got {}", n, row.size()));
      for (int j = 0; j < n; ++j) c.chain_matrix(i, j) = row[static_cast<std::size_t>(j)];
      std::vector<std::string> text;
      for (double v : row) text.push_back(fmt::format("{}", v));
      c.echo[key] = fmt::format("{}", fmt::join(text, ", "));
    }
    c.states = n;
  }
  c.laziness = r.real("chain.laziness", 0.0, 0.0, 0.999999);
  const std::string start = r.text("chain.start", "stationary");
  if (start != "stationary") {
    const auto s = r.integer("chain.start", 0, 0, c.states - 1);
    c.start_state = static_cast<int>(s);
  }

  c.algorithm = r.choice("algorithm.name", game ? "mmp-batched" : "mamd-batched",
                         game ? std::set<std::string>{"mmp", "mmp-batched"}
                              : std::set<std::string>{"mamd", "mamd-batched"});
  c.schedule_source = r.choice("schedule.source", "corollary", {"corollary", "explicit"});
  c.step_override = r.optional_real("schedule.gamma", 1e-300, 1e12);
  if (c.schedule_source == "explicit" && !c.step_override) {
    doc.fail("schedule.source", "explicit schedules need schedule.gamma");
  }
  if (c.schedule_source == "corollary" && c.step_override) {
    doc.fail("schedule.gamma", "set schedule.source = explicit to override the step");
  }
  if (auto tau = r.optional_integer("schedule.tau_mix", 1, 1000000)) c.tau_override = static_cast<int>(*tau);

  c.T = r.integer("run.T", 100, 1, 100000000);
  if (auto b = r.optional_integer("run.B", 1, 1LL << 40)) c.batch = static_cast<std::uint64_t>(*b);
  if (auto m = r.optional_integer("run.M", 1, 1LL << 40)) c.truncation = static_cast<std::uint64_t>(*m);
  c.seeds = to_unsigned(r.integers("run.seeds", {1}, 0, INT64_MAX));
  if (c.seeds.empty()) doc.fail("run.seeds", "need at least one seed");
  c.stride = r.integer("run.stride", 1, 1, INT64_MAX);

  c.out_dir = r.text("output.dir", ".");
  const std::string metrics = r.text("output.metrics", "gap");
  for (const auto& m : split_list(metrics)) {
    if (m != "gap" && m != "wall") doc.fail("output.metrics", fmt::format("unknown metric '{}'", m));
    if (m == "wall") c.record_wall = true;
  }
  c.export_instance = r.flag("output.instance", false);

  c.sweep_t = r.integers("sweep.T", {}, 1, 100000000);
  if (!strictly_increasing(c.sweep_t)) doc.fail("sweep.T", "horizons must increase strictly");
  c.sweep_axis = r.choice("sweep.axis", "T", {"T", "oracle_calls"});
  if (doc.has("sweep.window")) {
    const auto w = doc.get_doubles("sweep.window");
    if (w.size() != 2 || !(w[0] <= w[1])) doc.fail("sweep.window", "expected 'lo, hi' with lo <= hi");
    c.sweep_window = std::make_pair(w[0], w[1]);
    c.echo["sweep.window"] = fmt::format("{}, {}", w[0], w[1]);
  }

  c.lemma1_n = r.integers("lemma1.N", {16, 32, 64, 128, 256, 512, 1024, 2048, 4096}, 1, 100000000);
  c.lemma1_trials = r.integer("lemma1.trials", 2000, 1, 100000000);
  c.lemma1_q = r.real("lemma1.q", 2.0, 1.0, std::numeric_limits<double>::infinity());

  c.lemma2_bias_m = to_unsigned(r.integers("lemma2.bias_M", {4, 16, 64, 256}, 1, 1LL << 20));
  c.lemma2_paired_m = static_cast<std::uint64_t>(r.integer("lemma2.paired_M", 64, 1, 1LL << 20));
  c.lemma2_paired_trials = r.integer("lemma2.paired_trials", 100000, 1, 100000000);
  c.lemma2_variance_b = to_unsigned(r.integers("lemma2.variance_B", {1, 2, 4}, 1, 1LL << 20));
  c.lemma2_variance_m = to_unsigned(r.integers("lemma2.variance_M", {4, 16, 64}, 1, 1LL << 20));
  c.lemma2_variance_trials = r.integer("lemma2.variance_trials", 4000, 1, 100000000);
  c.lemma2_jensen_trials = r.integer("lemma2.mean_square_trials", 4000, 1, 100000000);

  doc.require_all_used();
  return c;
}

TransitionKernel build_kernel(const ExperimentConfig& cfg) {
  TransitionKernel base = cfg.chain_kind == "random" ? random_ergodic(cfg.states, cfg.chain_seed)
                                                     : TransitionKernel(cfg.chain_matrix);
  return cfg.laziness > 0.0 ? make_lazy(base, cfg.laziness) : base;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : cfg.echo) feed(k + "=" + v + "\n");
  return h;
}

std::string config_header(const ExperimentConfig& cfg) {
  std::string out = fmt::format("# version = {}\n", kVersion);
  for (const auto& [k, v] : cfg.echo) {
    if (k == "version") continue;
    out += fmt::format("# {} = {}\n", k, v);
  }
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mirror descent and mirror-prox under Markovian noise", "markov-opt"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string seeds;
  std::string out_dir;
  int jobs = 1;
  std::int64_t stride = 0;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"run", "run the configured algorithm once per seed"},
      {"sweep", "run over sweep.T and fit the log-log rate"},
      {"diagnose-chain", "print pi, tau_mix and the TV curve"},
      {"check-lemma1", "Monte Carlo scaling of Markov sample means"},
      {"check-lemma2", "bias, unbiasedness and variance of the MLMC estimator"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "config file (or a CSV header this tool wrote)")->required();
    sub->add_option("--seed", seeds, "comma-separated seeds (overrides run.seeds)");
    sub->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--stride", stride, "record every stride-th iteration")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const char* deterministic = std::getenv("MM_DETERMINISTIC");
  if (deterministic && std::string(deterministic) == "1") jobs = 1;

  try {
    KeyValueDocument doc = load_document(config_path);
    if (!seeds.empty()) doc.set("run.seeds", seeds);
    if (!out_dir.empty()) doc.set("output.dir", out_dir);
    if (stride > 0) doc.set("run.stride", std::to_string(stride));
    const Context ctx = prepare(doc, jobs);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "run") return cmd_run(ctx, out);
    if (name == "sweep") return cmd_sweep(ctx, out);
    if (name == "diagnose-chain") return cmd_diagnose(ctx, out);
    if (name == "check-lemma1") return cmd_lemma1(ctx, out);
    return cmd_lemma2(ctx, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace markov_opt
