#include "markov_opt/validation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

constexpr int kMinBatchCount = 20;
constexpr double kGapFloor = 1e-13;
constexpr int kBootstrapResamples = 1000;

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; fn must only touch slot i.
template <typename Fn>
void parallel_trials(std::int64_t n, int jobs, Fn&& fn) {
  const int workers = static_cast<int>(std::clamp<std::int64_t>(jobs, 1, std::max<std::int64_t>(n, 1)));
  if (workers == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::int64_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// `floor`: cells at or below it count as zero (roundoff in an exact computation).
void finish_report(ScalingReport& r, double target_exponent, double floor = 0.0) {
  r.degenerate =
      std::all_of(r.cells.begin(), r.cells.end(), [floor](const ScalingCell& c) { return c.value <= floor; });
  if (r.degenerate || r.cells.size() < 2) return;
  std::vector<double> lx, ly;
  for (const auto& c : r.cells) {
    if (!(c.value > 0.0)) {
      throw StatisticsError(fmt::format("cell {} has a non-positive estimate; cannot fit a power law", c.parameter));
    }
    lx.push_back(std::log(c.parameter));
    ly.push_back(std::log(c.value));
  }
  const LineFit fit = fit_line(lx, ly);
  r.exponent = fit.slope;
  const double mean_x = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
  double sxx = 0.0;
  for (double v : lx) sxx += (v - mean_x) * (v - mean_x);
  double var = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double w = (lx[i] - mean_x) / sxx;
    const double rel = r.cells[i].se / r.cells[i].value;
    var += w * w * rel * rel;
  }
  r.exponent_lo = r.exponent - 1.96 * std::sqrt(var);
  r.exponent_hi = r.exponent + 1.96 * std::sqrt(var);
  double log_sum = 0.0;
  for (const auto& c : r.cells) log_sum += std::log(c.value) - target_exponent * std::log(c.parameter);
  r.constant = std::exp(log_sum / static_cast<double>(r.cells.size()));
}

ScalingCell summarize(double parameter, const std::vector<double>& samples, std::string label = {}) {
  const MeanEstimate m = batch_means(samples, kMinBatchCount);
  return {parameter, m.mean, m.se, static_cast<std::int64_t>(samples.size()), std::move(label)};
}

void require_trials(std::int64_t trials, const char* what) {
  if (trials < kMinBatchCount) {
    throw StatisticsError(
        fmt::format("insufficient trials for {}: {} < {} (one per batch mean)", what, trials, kMinBatchCount));
  }
}

Matrix per_state_outputs(const SampleOracle& oracle, const Vector& x, int n_states) {
  Matrix out(x.size(), n_states);
  Vector scratch(x.size());
  for (int z = 0; z < n_states; ++z) {
    oracle(x, z, scratch);
    out.col(z) = scratch;
  }
  return out;
}

}  // namespace

double subopt_gap(const MinProblem& p, const Vector& x) {
  const double gap = p.value(x) - p.f_star();
  if (gap < -1e-9) {
    throw SolverError(fmt::format("f(x) - f* = {:.3g} < 0: the reference solution is not optimal", gap));
  }
  return gap <= 1e-12 ? 0.0 : gap;
}

double err_vi(const ViProblem& p, const Vector& x) {
  if (!p.is_skew()) {
    throw UnsupportedMetricError("exact Err_VI needs a skew-symmetric affine operator; use weak_vi_gap");
  }
  if (x.size() != p.dim()) throw InputError("x has the wrong dimension");
  return std::max(0.0, affine_skew_gap(p.geometry(), p.q(), p.c(), x));
}

WeakGap weak_vi_gap(const ViProblem& p, const std::vector<Vector>& runs, const std::vector<Vector>& probes) {
  if (runs.empty()) throw InputError("weak_vi_gap needs at least one run");
  if (probes.empty()) throw InputError("weak_vi_gap needs at least one probe");
  Vector mean_x = Vector::Zero(p.dim());
  for (const auto& x : runs) {
    if (x.size() != p.dim()) throw InputError("run iterate has the wrong dimension");
    mean_x += x;
  }
  mean_x /= static_cast<double>(runs.size());
  // <F(u), x - u> is affine in x, so the across-run mean is the value at the mean iterate.
  WeakGap out;
  out.max = -std::numeric_limits<double>::infinity();
  for (const auto& u : probes) {
    const double v = p.op(u).dot(mean_x - u);
    out.per_probe.push_back(v);
    out.max = std::max(out.max, v);
  }
  return out;
}

std::vector<Vector> vertex_probes(const Geometry& g, std::size_t limit) {
  std::vector<Vector> out;
  if (const auto* box = std::get_if<BoxSet>(&g.set())) {
    const int d = g.dim();
    if (d >= 63 || (std::size_t{1} << d) > limit) throw InputError("too many box vertices to enumerate");
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      Vector v(d);
      for (int i = 0; i < d; ++i) v[i] = (mask >> i) & 1U ? box->hi : box->lo;
      out.push_back(std::move(v));
    }
    return out;
  }
  const auto* simplexes = std::get_if<SimplexProductSet>(&g.set());
  if (!simplexes) throw InputError("a ball has no vertices to enumerate");
  std::size_t count = 1;
  for (int b : simplexes->blocks) {
    count *= static_cast<std::size_t>(b);
    if (count > limit) throw InputError("too many simplex vertices to enumerate");
  }
  std::vector<int> index(simplexes->blocks.size(), 0);
  for (std::size_t k = 0; k < count; ++k) {
    Vector v = Vector::Zero(g.dim());
    int offset = 0;
    for (std::size_t b = 0; b < index.size(); ++b) {
      v[offset + index[b]] = 1.0;
      offset += simplexes->blocks[b];
    }
    out.push_back(std::move(v));
    for (std::size_t b = 0; b < index.size(); ++b) {
      if (++index[b] < simplexes->blocks[b]) break;
      index[b] = 0;
    }
  }
  return out;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw StatisticsError("line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw StatisticsError("line fit needs at least two distinct abscissas");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

MeanEstimate batch_means(const std::vector<double>& samples, int batches) {
  if (batches < 2) throw StatisticsError("batch means needs at least two batches");
  if (samples.size() < static_cast<std::size_t>(batches)) {
    throw StatisticsError(fmt::format("{} samples cannot fill {} batches", samples.size(), batches));
  }
  const std::size_t n = samples.size();
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    const std::size_t lo = n * static_cast<std::size_t>(b) / static_cast<std::size_t>(batches);
    const std::size_t hi = n * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(batches);
    means.push_back(std::accumulate(samples.begin() + lo, samples.begin() + hi, 0.0) / (hi - lo));
  }
  MeanEstimate out;
  out.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / batches;
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  out.se = std::sqrt(ss / (batches - 1) / batches);
  return out;
}

ScalingReport lemma1_scaling(std::shared_ptr<const TransitionKernel> kernel, const Vector& pi,
                             const Matrix& noise, const Lemma1Config& cfg) {
  if (!kernel) throw InputError("null kernel");
  if (noise.cols() != kernel->n_states() || pi.size() != kernel->n_states()) {
    throw InputError("noise needs one column per chain state");
  }
  if ((noise * pi).cwiseAbs().maxCoeff() > 1e-10) {
    throw InputError("noise vectors have nonzero stationary mean");
  }
  if (cfg.n_grid.empty()) throw ConfigError("lemma1 N grid is empty");
  require_trials(cfg.trials, "lemma1 cells");
  std::vector<std::int64_t> grid = cfg.n_grid;
  std::sort(grid.begin(), grid.end());
  if (grid.front() < 1 || std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
    throw ConfigError("lemma1 N grid must hold distinct positive sizes");
  }

  // Nested prefixes of one trajectory per trial serve every N.
  std::vector<std::vector<double>> samples(grid.size(), std::vector<double>(static_cast<std::size_t>(cfg.trials)));
  parallel_trials(cfg.trials, cfg.jobs, [&](std::int64_t trial) {
    ChainCursor cursor = ChainCursor::stationary_start(kernel, pi, mix_seed(cfg.seed, static_cast<std::uint64_t>(trial)));
    Vector sum = Vector::Zero(noise.rows());
    std::int64_t walked = 0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
      for (; walked < grid[c]; ++walked) sum += noise.col(cursor.step());
      const double norm = lp_norm(sum / static_cast<double>(grid[c]), cfg.q);
      samples[c][static_cast<std::size_t>(trial)] = norm * norm;
    }
  });

  ScalingReport report;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    report.cells.push_back(summarize(static_cast<double>(grid[c]), samples[c], fmt::format("N={}", grid[c])));
  }
  finish_report(report, -1.0);
  return report;
}

double laziness_for_tau(const TransitionKernel& k, int target_tau) {
  for (int j = 0; j < 64; ++j) {
    const double alpha = j / 64.0;
    if (mixing_time(make_lazy(k, alpha)) >= target_tau) return alpha;
  }
  throw DiagnosticsError(fmt::format("no laziness below 1 reaches tau_mix = {}", target_tau));
}

Lemma1Sweep lemma1_tau_sweep(std::shared_ptr<const TransitionKernel> kernel, const Matrix& noise,
                             const Lemma1Config& cfg) {
  if (!kernel) throw InputError("null kernel");
  Lemma1Sweep out;
  const ChainDiagnostics diag = diagnose(*kernel);
  out.tau_base = diag.tau_mix;
  out.laziness = laziness_for_tau(*kernel, 2 * out.tau_base);
  auto lazy = std::make_shared<const TransitionKernel>(make_lazy(*kernel, out.laziness));
  out.tau_lazy = mixing_time(*lazy);
  out.base = lemma1_scaling(kernel, diag.pi, noise, cfg);
  Lemma1Config lazy_cfg = cfg;
  lazy_cfg.seed = mix_seed(cfg.seed, 0x6c617a79ULL);
  out.lazy = lemma1_scaling(lazy, diag.pi, noise, lazy_cfg);
  out.constant_ratio = out.base.constant > 0.0 ? out.lazy.constant / out.base.constant : 0.0;
  return out;
}

Matrix mlmc_conditional_mean(const Matrix& per_state, const TransitionKernel& kernel, const MlmcConfig& cfg) {
  cfg.validate();
  const int top = cfg.max_level();
  const Matrix& p = kernel.matrix();
  const Eigen::Index n = p.rows();
  // level_means[j] = E[g_j | Z_0 = z0], with sample i distributed as row z0 of P^i.
  std::vector<Matrix> level_means;
  Matrix power = Matrix::Identity(n, n);
  Matrix power_sum = Matrix::Zero(n, n);
  std::uint64_t walked = 0;
  for (int j = 0; j <= top; ++j) {
    const std::uint64_t length = cfg.B << j;
    for (; walked < length; ++walked) {
      power = power * p;
      power_sum += power;
    }
    level_means.push_back(per_state * power_sum.transpose() / static_cast<double>(length));
  }
  // Sum over the level law: levels 1..K use the correction, deeper levels fall back to g_0.
  Matrix expected = std::ldexp(1.0, -top) * level_means[0];
  for (int j = 1; j <= top; ++j) {
    const std::size_t u = static_cast<std::size_t>(j);
    expected += std::ldexp(1.0, -j) *
                (level_means[0] + std::ldexp(1.0, j) * (level_means[u] - level_means[u - 1]));
  }
  return expected;
}

Lemma2Report lemma2_check(const SampleOracle& oracle, const Vector& x,
                          std::shared_ptr<const TransitionKernel> kernel, const Vector& pi,
                          const Lemma2Config& cfg) {
  if (!kernel) throw InputError("null kernel");
  if (pi.size() != kernel->n_states()) throw InputError("pi has the wrong size");
  require_trials(cfg.paired_trials, "the unbiasedness check");
  require_trials(cfg.variance_trials, "lemma2 variance cells");
  require_trials(cfg.jensen_trials, "lemma2 mean-square cells");
  if (cfg.bias_m.empty() || cfg.variance_b.empty() || cfg.variance_m.empty()) {
    throw ConfigError("lemma2 grids must be nonempty");
  }

  Lemma2Report report;
  report.tau_mix = mixing_time(*kernel);
  const Matrix per_state = per_state_outputs(oracle, x, kernel->n_states());
  const Vector mean_field = per_state * pi;
  double sigma_sq = 0.0;
  for (Eigen::Index z = 0; z < per_state.cols(); ++z) {
    sigma_sq = std::max(sigma_sq, std::pow(lp_norm(per_state.col(z) - mean_field, cfg.q), 2));
  }
  const Eigen::Index d = x.size();

  // Exact squared bias from the worst start, and Monte Carlo mean-square error of g_K there.
  for (std::size_t i = 0; i < cfg.bias_m.size(); ++i) {
    const MlmcConfig mc{cfg.bias_batch, cfg.bias_m[i]};
    const Matrix conditional = mlmc_conditional_mean(per_state, *kernel, mc);
    double worst = 0.0;
    int worst_state = 0;
    for (Eigen::Index z = 0; z < conditional.cols(); ++z) {
      const double b = std::pow(lp_norm(conditional.col(z) - mean_field, cfg.q), 2);
      if (b > worst) {
        worst = b;
        worst_state = static_cast<int>(z);
      }
    }
    report.bias.cells.push_back({static_cast<double>(mc.M), worst, 0.0, 0, fmt::format("M={}", mc.M)});

    const std::uint64_t length = mc.B << mc.max_level();
    std::vector<double> sq(static_cast<std::size_t>(cfg.jensen_trials));
    parallel_trials(cfg.jensen_trials, cfg.jobs, [&](std::int64_t trial) {
      ChainCursor cursor = ChainCursor::fixed_start(
          kernel, worst_state, mix_seed(cfg.seed, 0x6a656e00ULL + i * 0x100000000ULL + static_cast<std::uint64_t>(trial)));
      Vector sum = Vector::Zero(d);
      for (std::uint64_t s = 0; s < length; ++s) sum += per_state.col(cursor.step());
      const double e = lp_norm(sum / static_cast<double>(length) - mean_field, cfg.q);
      sq[static_cast<std::size_t>(trial)] = e * e;
    });
    report.jensen.cells.push_back(summarize(static_cast<double>(mc.M), sq, fmt::format("M={}", mc.M)));
  }
  // Squared roundoff of O(1) quantities; anything this small means no noise.
  const double roundoff = 1e-24 * std::max(1.0, per_state.cwiseAbs2().maxCoeff());
  finish_report(report.bias, -1.0, roundoff);
  finish_report(report.jensen, -1.0, roundoff);

  // Paired unbiasedness: MLMC draw vs the level-K mean on the same samples.
  {
    const MlmcConfig mc{cfg.paired_batch, cfg.paired_m};
    std::vector<Vector> diffs(static_cast<std::size_t>(cfg.paired_trials));
    parallel_trials(cfg.paired_trials, cfg.jobs, [&](std::int64_t trial) {
      const std::uint64_t s = mix_seed(cfg.seed, 0x70616972ULL + static_cast<std::uint64_t>(trial));
      ChainCursor cursor = ChainCursor::stationary_start(kernel, pi, s);
      LevelSampler levels(mix_seed(s, 1));
      const PairedEstimate pe = mlmc_paired(oracle, x, cursor, mc, levels);
      diffs[static_cast<std::size_t>(trial)] = pe.mlmc.g - pe.top_level_mean;
    });
    const double n = static_cast<double>(cfg.paired_trials);
    Vector mean = Vector::Zero(d);
    for (const auto& v : diffs) mean += v;
    mean /= n;
    Vector ss = Vector::Zero(d);
    for (const auto& v : diffs) ss += (v - mean).cwiseAbs2();
    report.unbiased.mean_difference = mean;
    report.unbiased.standard_error = (ss / (n - 1.0) / n).cwiseSqrt();
    report.unbiased.trials = cfg.paired_trials;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double se = report.unbiased.standard_error[k];
      if (se > 0.0) report.unbiased.max_z = std::max(report.unbiased.max_z, std::abs(mean[k]) / se);
    }
  }

  // Stationary-start variance grid.
  std::uint64_t cell = 0;
  for (std::uint64_t m : cfg.variance_m) {
    for (std::uint64_t b : cfg.variance_b) {
      const MlmcConfig mc{b, m};
      std::vector<double> sq(static_cast<std::size_t>(cfg.variance_trials));
      parallel_trials(cfg.variance_trials, cfg.jobs, [&](std::int64_t trial) {
        const std::uint64_t s = mix_seed(cfg.seed, 0x76617200ULL + cell * 0x100000000ULL + static_cast<std::uint64_t>(trial));
        ChainCursor cursor = ChainCursor::stationary_start(kernel, pi, s);
        LevelSampler levels(mix_seed(s, 1));
        const Estimate e = mlmc_geometric(oracle, x, cursor, mc, levels);
        const double err = lp_norm(e.g - mean_field, cfg.q);
        sq[static_cast<std::size_t>(trial)] = err * err;
      });
      ScalingCell c = summarize(static_cast<double>(b), sq, fmt::format("B={},M={}", b, m));
      const double shape = report.tau_mix * std::max(1, mc.max_level()) * sigma_sq / static_cast<double>(b);
      report.variance_constants.push_back(shape > 0.0 ? c.value / shape : 0.0);
      report.variance.push_back(std::move(c));
      ++cell;
    }
  }
  return report;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw StatisticsError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

RateFit rate_fit(const GapReport& report, double min_budget) {
  if (report.budgets.size() != report.values.size()) throw InputError("gap report rows do not match budgets");
  for (std::size_t i = 1; i < report.budgets.size(); ++i) {
    if (!(report.budgets[i] > report.budgets[i - 1])) throw InputError("gap report budgets must increase strictly");
  }
  RateFit fit;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < report.budgets.size(); ++i) {
    if (report.budgets[i] < min_budget) continue;
    if (report.values[i].empty()) throw InputError("gap report row has no seeds");
    for (double v : report.values[i]) {
      if (!(v >= 0.0)) throw InputError("gap values must be nonnegative");
    }
    if (median(report.values[i]) <= kGapFloor) {
      fit.floored_budgets.push_back(report.budgets[i]);
      continue;
    }
    rows.push_back(i);
    fit.used_budgets.push_back(report.budgets[i]);
  }
  if (rows.size() < 4) {
    throw StatisticsError(fmt::format("rate fit needs >= 4 budgets above the floor, have {}", rows.size()));
  }
  if (fit.used_budgets.back() < 8.0 * fit.used_budgets.front()) {
    throw StatisticsError("rate fit budgets must span at least a factor of 8");
  }

  auto slope_of = [&](const std::vector<std::size_t>& seeds) -> std::optional<double> {
    std::vector<double> lx, ly;
    for (std::size_t i : rows) {
      std::vector<double> picked;
      for (std::size_t s : seeds) picked.push_back(report.values[i][s]);
      const double m = median(std::move(picked));
      if (m <= kGapFloor) continue;
      lx.push_back(std::log(report.budgets[i]));
      ly.push_back(std::log(m));
    }
    if (lx.size() < 2) return std::nullopt;
    return fit_line(lx, ly).slope;
  };

  const std::size_t n_seeds = report.values[rows.front()].size();
  for (std::size_t i : rows) {
    if (report.values[i].size() != n_seeds) throw InputError("every budget needs the same seeds");
  }
  std::vector<std::size_t> all(n_seeds);
  std::iota(all.begin(), all.end(), 0);
  fit.slope = *slope_of(all);

  std::mt19937_64 rng(0x626f6f74ULL);
  std::vector<double> boot;
  std::vector<std::size_t> pick(n_seeds);
  for (int r = 0; r < kBootstrapResamples; ++r) {
    for (auto& s : pick) s = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n_seeds));
    if (auto s = slope_of(pick)) boot.push_back(*s);
  }
  fit.ci_lo = boot.empty() ? fit.slope : quantile(boot, 0.025);
  fit.ci_hi = boot.empty() ? fit.slope : quantile(boot, 0.975);
  return fit;
}

}  // namespace markov_opt
