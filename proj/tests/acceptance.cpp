// Acceptance gate: one PASS/FAIL line per criterion, tolerances and time limits pinned here.
//
//   acceptance            run every criterion
//   acceptance --only N   run criterion N; exit status reflects that criterion alone

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "markov_opt/chain.hpp"
#include "markov_opt/cli.hpp"
#include "markov_opt/errors.hpp"
#include "markov_opt/solvers.hpp"
#include "markov_opt/validation.hpp"

namespace fs = std::filesystem;
using namespace markov_opt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome()> check;
};

fs::path g_workdir;

// ---- CLI plumbing -------------------------------------------------------

int invoke(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::vector<const char*> argv{"markov-opt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  if (code != kExitOk && code != kExitStatistics) std::cerr << err.str();
  return code;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = g_workdir / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path only_file(const fs::path& dir, const std::string& prefix) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) return e.path();
  throw Error(fmt::format("no {}* file in {}", prefix, dir.string()));
}

std::vector<std::string> last_row(const fs::path& file) {
  std::ifstream in(file);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') last = line;
  std::vector<std::string> cells;
  std::stringstream ss(last);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

// Runs a sweep and returns the fitted slope from its fit file.
double sweep_slope(const std::string& name, const std::string& config) {
  fs::path dir = fresh_dir(name);
  fs::path cfg = dir / "sweep.cfg";
  std::ofstream(cfg) << config << "output.dir = " << dir.string() << "\n";
  std::string text;
  const int code = invoke({"sweep", "--config", cfg.string()}, &text);
  if (code != kExitOk) throw Error(fmt::format("sweep '{}' exited with {}: {}", name, code, text));
  return std::stod(last_row(only_file(dir, "sweep_fit_"))[1]);
}

// Runs `run` and returns the median final gap from the summary file.
double run_median(const std::string& name, const std::string& config) {
  fs::path dir = fresh_dir(name);
  fs::path cfg = dir / "run.cfg";
  std::ofstream(cfg) << config << "output.dir = " << dir.string() << "\n";
  const int code = invoke({"run", "--config", cfg.string()});
  if (code != kExitOk) throw Error(fmt::format("run '{}' exited with {}", name, code));
  return std::stod(last_row(only_file(dir, "summary_"))[2]);
}

std::string grid(std::int64_t lo, std::int64_t hi) {
  std::string s;
  for (std::int64_t t = lo; t <= hi; t *= 2) s += (s.empty() ? "" : ", ") + std::to_string(t);
  return s;
}

const char* kSeeds9 = "run.seeds = 1, 2, 3, 4, 5, 6, 7, 8, 9\n";

// ---- 1-3: rate slopes ---------------------------------------------------

Outcome deterministic_mamd_rate() {
  const double slope = sweep_slope("c1",
                                   "problem.kind = quadratic\nproblem.dim = 20\nproblem.geometry = box\n"
                                   "problem.spectrum = logspaced\nproblem.minimizer = interior\n"
                                   "problem.noise = 0\nalgorithm.name = mamd-batched\nsweep.T = " +
                                       grid(64, 4096) + "\n");
  return {slope >= -2.3 && slope <= -1.7, fmt::format("slope {:.3f}, window [-2.3, -1.7]", slope)};
}

Outcome stochastic_mamd_rate() {
  // Laziness 0.7 puts the default 8-state chain at tau_mix = 4. At T = 4096 the
  // median budget is about 4096 * 12 < 2^16 oracle calls.
  const double slope = sweep_slope("c2", std::string("problem.kind = quadratic\nproblem.dim = 10\n"
                                                     "problem.noise = 1\nchain.laziness = 0.7\n"
                                                     "algorithm.name = mamd-batched\nsweep.axis = oracle_calls\n") +
                                             kSeeds9 + "sweep.T = " + grid(64, 4096) + "\n");
  return {slope >= -0.7 && slope <= -0.35, fmt::format("slope {:.3f} vs oracle calls, window [-0.7, -0.35]", slope)};
}

Outcome deterministic_mmp_rate() {
  const std::string base = "problem.kind = game\nproblem.rows = 4\nproblem.cols = 4\nproblem.noise = 0\nsweep.T = " +
                           grid(64, 4096) + "\n";
  const double plain = sweep_slope("c3a", base + "algorithm.name = mmp\n");
  const double batched = sweep_slope("c3b", base + "algorithm.name = mmp-batched\n");
  auto ok = [](double s) { return s >= -1.25 && s <= -0.8; };
  return {ok(plain) && ok(batched),
          fmt::format("slopes mmp {:.3f}, mmp-batched {:.3f}, window [-1.25, -0.8]", plain, batched)};
}

// ---- 4-6: lemma checks --------------------------------------------------

std::shared_ptr<const TransitionKernel> lazy_default_chain(double laziness) {
  return std::make_shared<const TransitionKernel>(make_lazy(random_ergodic(8, 7), laziness));
}

Outcome markov_mean_scaling() {
  auto k = lazy_default_chain(0.7);
  Matrix noise = zero_mean_shifts(5, stationary(*k), 1.0, 2.0, 1);
  Lemma1Config cfg;
  cfg.trials = 2000;
  cfg.n_grid = {16, 32, 64, 128, 256, 512, 1024, 2048, 4096};
  const Lemma1Sweep s = lemma1_tau_sweep(k, noise, cfg);
  auto ok = [](double e) { return e >= -1.2 && e <= -0.8; };
  const bool pass = ok(s.base.exponent) && ok(s.lazy.exponent) && s.constant_ratio >= 1.4 &&
                    s.constant_ratio <= 3.0;
  return {pass, fmt::format("exponents {:.3f} (tau {}) and {:.3f} (tau {}), window [-1.2, -0.8]; "
                            "constant ratio {:.2f}, window [1.4, 3.0]",
                            s.base.exponent, s.tau_base, s.lazy.exponent, s.tau_lazy, s.constant_ratio)};
}

struct Lemma2Setup {
  std::shared_ptr<const TransitionKernel> kernel;
  Vector pi;
  std::shared_ptr<MinProblem> problem;
  SampleOracle oracle;
};

Lemma2Setup lemma2_setup() {
  Lemma2Setup s;
  s.kernel = std::make_shared<const TransitionKernel>(random_ergodic(8, 7));
  s.pi = stationary(*s.kernel);
  MinInstanceSpec spec;
  spec.dim = 10;
  spec.noise = 1.0;
  s.problem = std::make_shared<MinProblem>(make_min_instance(spec, s.pi));
  auto p = s.problem;
  s.oracle = [p](const Vector& x, int z, Vector& out) { p->grad_oracle(x, z, out); };
  return s;
}

Lemma2Config minimal_lemma2() {
  Lemma2Config c;
  c.paired_trials = 20;
  c.variance_trials = 20;
  c.jensen_trials = 20;
  c.variance_b = {1};
  c.variance_m = {4};
  c.bias_m = {4, 16};
  return c;
}

Outcome mlmc_unbiasedness() {
  Lemma2Setup s = lemma2_setup();
  Lemma2Config cfg = minimal_lemma2();
  cfg.paired_m = 64;
  cfg.paired_batch = 1;
  cfg.paired_trials = 100000;
  const Lemma2Report r = lemma2_check(s.oracle, s.problem->geometry().center(), s.kernel, s.pi, cfg);
  return {r.unbiased.max_z <= 4.0,
          fmt::format("max |mean diff| / SE = {:.2f} over {} coordinates, {} trials, limit 4",
                      r.unbiased.max_z, r.unbiased.mean_difference.size(), r.unbiased.trials)};
}

Outcome mlmc_bias_decay() {
  Lemma2Setup s = lemma2_setup();
  Lemma2Config cfg = minimal_lemma2();
  cfg.bias_m = {4, 16, 64, 256};
  cfg.jensen_trials = 4000;
  const Lemma2Report r = lemma2_check(s.oracle, s.problem->geometry().center(), s.kernel, s.pi, cfg);
  const double e = r.bias.exponent;
  return {e >= -1.3 && e <= -0.7,
          fmt::format("bias^2 exponent {:.3f}, window [-1.3, -0.7] (mean-square error of g_K decays "
                      "with exponent {:.3f})",
                      e, r.jensen.exponent)};
}

// ---- 7: batched vs unbatched at equal budget ----------------------------

// Largest T whose expected MLMC cost (M = T, B = 1) plus `extra` calls per iteration fits the budget.
std::int64_t batched_horizon(double budget, double extra) {
  std::int64_t T = 1;
  while (true) {
    const std::int64_t next = T + 1;
    const MlmcConfig cfg{1, static_cast<std::uint64_t>(next)};
    if (next * (cfg.expected_oracle_calls() + extra) > budget) return T;
    T = next;
  }
}

Outcome batched_dominance() {
  const double budget = 32768;
  const std::int64_t t_min = batched_horizon(budget, 0.0);
  const std::int64_t t_vi = batched_horizon(budget, 1.0);
  // Laziness 0.95 gives tau_mix = 27 on the default chain.
  const std::string chain = std::string("chain.laziness = 0.95\nproblem.noise = 1\nrun.stride = 100000\n") + kSeeds9;
  const std::string quad = chain + "problem.kind = quadratic\nproblem.dim = 10\n";
  const std::string game = chain + "problem.kind = game\n";
  const double mamd = run_median("c7a", quad + "algorithm.name = mamd\nrun.T = 32768\n");
  const double mamd_b = run_median("c7b", quad + fmt::format("algorithm.name = mamd-batched\nrun.T = {}\n", t_min));
  const double mmp = run_median("c7c", game + "algorithm.name = mmp\nrun.T = 16384\n");
  const double mmp_b = run_median("c7d", game + fmt::format("algorithm.name = mmp-batched\nrun.T = {}\n", t_vi));
  return {mamd_b <= mamd && mmp_b <= mmp,
          fmt::format("median gap: mamd {:.4g} vs mamd-batched {:.4g} (T={}); mmp {:.4g} vs mmp-batched {:.4g} "
                      "(T={}); budget 2^15",
                      mamd, mamd_b, t_min, mmp, mmp_b, t_vi)};
}

// ---- 8: exactness suites ------------------------------------------------

Vector random_feasible(const Geometry& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector z(g.dim());
  for (int i = 0; i < g.dim(); ++i) z[i] = 4.0 * u(rng) - 2.0;
  if (g.mirror() == MirrorMap::kEntropy) {
    Vector w = (z.array().exp()).matrix();
    const auto& blocks = std::get<SimplexProductSet>(g.set()).blocks;
    int off = 0;
    for (int b : blocks) {
      w.segment(off, b) /= w.segment(off, b).sum();
      off += b;
    }
    return w;
  }
  return g.project(z);
}

Outcome exactness() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;
  double prox_err = 0.0;
  const std::vector<Geometry> geos = {Geometry::box(4, 0.0, 1.0), Geometry::ball(Vector::Zero(3), 1.0),
                                      Geometry::simplex(4), Geometry::simplex_product({2, 3})};
  for (const auto& g : geos) {
    for (int i = 0; i < 200; ++i) {
      Vector x = random_feasible(g, rng);
      Vector xi(g.dim());
      for (int j = 0; j < g.dim(); ++j) xi[j] = 2.0 * n01(rng);
      prox_err = std::max(prox_err, (g.prox(x, xi) - g.prox_generic(x, xi)).cwiseAbs().maxCoeff());
    }
  }

  // Stationary law and mixing time against a dense eigensolver and explicit matrix powers.
  double pi_err = 0.0;
  bool tau_ok = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TransitionKernel k = make_lazy(random_ergodic(6, seed), 0.1 * static_cast<double>(seed % 9));
    Eigen::EigenSolver<Matrix> es(k.matrix().transpose());
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i)
      if (std::abs(es.eigenvalues()[i] - 1.0) < std::abs(es.eigenvalues()[best] - 1.0)) best = i;
    Vector v = es.eigenvectors().col(best).real();
    v /= v.sum();
    pi_err = std::max(pi_err, (stationary(k) - v).cwiseAbs().maxCoeff());
    Matrix power = Matrix::Identity(6, 6);
    int brute = 0;
    for (int t = 1; t <= 10000; ++t) {
      power = power * k.matrix();
      double worst = 0.0;
      for (int z = 0; z < 6; ++z) worst = std::max(worst, 0.5 * (power.row(z).transpose() - v).cwiseAbs().sum());
      if (worst <= 0.25) {
        brute = t;
        break;
      }
    }
    tau_ok = tau_ok && brute == mixing_time(k);
  }

  // Err_VI on a 2x2 game against a 1e-3 grid over the product of simplexes.
  double vi_err = 0.0;
  Matrix payoff(2, 2);
  payoff << 1.0, -0.5, -1.0, 2.0;
  const ViProblem game = make_bilinear_game(payoff, Vector::Ones(1), 0.0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Vector x = random_feasible(game.geometry(), rng);
    double brute = -1e300;
    for (int i = 0; i <= 1000; ++i) {
      for (int j = 0; j <= 1000; ++j) {
        Vector u(4);
        u << i / 1000.0, 1.0 - i / 1000.0, j / 1000.0, 1.0 - j / 1000.0;
        brute = std::max(brute, game.op(u).dot(x - u));
      }
    }
    vi_err = std::max(vi_err, std::abs(err_vi(game, x) - brute));
  }

  // Accounting: chain steps and oracle calls reconstructed from the drawn levels.
  auto kernel = std::make_shared<const TransitionKernel>(random_ergodic(5, 3));
  const Vector pi = stationary(*kernel);
  MinInstanceSpec spec;
  spec.dim = 4;
  spec.noise = 0.5;
  const MinProblem p = make_min_instance(spec, pi);
  const MlmcConfig cfg{3, 32};
  auto [sched, unused] = corollary2_schedule(p.smoothness(), 1.0, p.sigma(), 2, 300);
  ChainCursor cursor = ChainCursor::stationary_start(kernel, pi, 1);
  LevelSampler levels(2);
  RunOptions opts;
  opts.keep_trajectory = true;
  const RunRecord r = mamd_batched(p, sched, cursor, cfg, levels, 300, opts);
  std::uint64_t steps = 0, calls = 0;
  for (int j : r.levels) {
    steps += (1ULL << j) * cfg.B;
    calls += (1ULL << j) <= cfg.M ? (1ULL << j) * cfg.B : cfg.B;
  }
  const ViProblem vi = make_vi_instance(ViInstanceSpec{}, pi);
  ChainCursor vcursor = ChainCursor::stationary_start(kernel, pi, 1);
  const RunRecord vr = mmp_unbatched(vi, 0.25 / vi.lipschitz(), 3, vcursor, 200, {});
  const bool accounting = r.chain_steps == steps && r.oracle_calls == calls && cursor.consumed() == steps &&
                          vr.oracle_calls == 400 && vr.chain_steps == 200 && vcursor.consumed() == 200;

  const bool pass = prox_err <= 1e-6 && pi_err <= 1e-9 && tau_ok && vi_err <= 2e-3 && accounting;
  return {pass, fmt::format("prox {:.1e} (<= 1e-6), pi {:.1e} (<= 1e-9), tau_mix {}, err_vi {:.1e} (<= 2e-3), "
                            "accounting {}",
                            prox_err, pi_err, tau_ok ? "exact" : "MISMATCH", vi_err, accounting ? "exact" : "MISMATCH")};
}

// ---- 9: reduction identities --------------------------------------------

double max_trajectory_gap(const RunRecord& a, const RunRecord& b) {
  if (a.iterates.size() != b.iterates.size()) return INFINITY;
  double worst = (a.final_iterate - b.final_iterate).cwiseAbs().maxCoeff();
  for (std::size_t t = 0; t < a.iterates.size(); ++t)
    worst = std::max(worst, (a.iterates[t] - b.iterates[t]).cwiseAbs().maxCoeff());
  return worst;
}

Outcome reductions() {
  auto kernel = std::make_shared<const TransitionKernel>(make_lazy(random_ergodic(8, 7), 0.5));
  const Vector pi = stationary(*kernel);
  RunOptions opts;
  opts.keep_trajectory = true;

  MinInstanceSpec spec;
  spec.dim = 10;
  const MinProblem p = make_min_instance(spec, pi);
  auto [sched, unused] = corollary2_schedule(p.smoothness(), std::sqrt(p.geometry().diameter_sq()), 0.0, 1, 500);
  ChainCursor c1 = ChainCursor::stationary_start(kernel, pi, 1);
  ChainCursor c2 = ChainCursor::stationary_start(kernel, pi, 2);
  LevelSampler l1(3);
  const double mamd_gap =
      max_trajectory_gap(mamd_batched(p, sched, c1, {1, 1}, l1, 500, opts), mamd_unbatched(p, sched, c2, 500, opts));

  ViInstanceSpec vspec;
  vspec.affine = 0.3;
  const ViProblem v = make_vi_instance(vspec, pi);
  const double gamma = 0.5 / v.lipschitz();
  ChainCursor c3 = ChainCursor::stationary_start(kernel, pi, 1);
  ChainCursor c4 = ChainCursor::stationary_start(kernel, pi, 2);
  LevelSampler l2(3);
  const double mmp_gap =
      max_trajectory_gap(mmp_batched(v, gamma, c3, {1, 1}, l2, 500, opts), mmp_unbatched(v, gamma, 0, c4, 500, opts));
  return {mamd_gap <= 1e-12 && mmp_gap <= 1e-12,
          fmt::format("max trajectory difference mamd {:.1e}, mmp {:.1e} (<= 1e-12)", mamd_gap, mmp_gap)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
  }
  const std::vector<Criterion> criteria = {
      {1, "deterministic accelerated rate", 10, deterministic_mamd_rate},
      {2, "stochastic batched rate", 120, stochastic_mamd_rate},
      {3, "deterministic mirror-prox rate", 10, deterministic_mmp_rate},
      {4, "Markov sample-mean scaling", 60, markov_mean_scaling},
      {5, "MLMC unbiasedness", 30, mlmc_unbiasedness},
      {6, "MLMC bias decay", 60, mlmc_bias_decay},
      {7, "batched beats unbatched at equal budget", 180, batched_dominance},
      {8, "exactness suites", 30, exactness},
      {9, "reduction identities", 5, reductions},
  };

  g_workdir = fs::temp_directory_path() / fmt::format("markov_opt_acceptance_{}", only);
  fs::create_directories(g_workdir);
  bool all_pass = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = elapsed <= c.limit_s;
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    std::cout << fmt::format("criterion {}: {} - {}: {} [{:.2f} s, limit {:.0f} s{}]\n", c.id,
                             pass ? "PASS" : "FAIL", c.name, o.detail, elapsed, c.limit_s,
                             in_time ? "" : ", over time")
              << std::flush;
  }
  fs::remove_all(g_workdir);
  return all_pass ? 0 : 1;
}
