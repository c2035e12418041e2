#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "markov_opt/chain.hpp"
#include "markov_opt/errors.hpp"
#include "markov_opt/validation.hpp"
#include "test_helpers.hpp"

using namespace markov_opt;
using test_helpers::feasible_point;
using test_helpers::kernel_ptr;

namespace {

SampleOracle table_oracle(const Matrix& table) {
  return [table](const Vector&, int state, Vector& out) { out = table.col(state); };
}

Lemma2Config small_lemma2() {
  Lemma2Config c;
  c.paired_trials = 2000;
  c.variance_trials = 2000;
  c.jensen_trials = 200;
  return c;
}

}  // namespace

TEST(Validation, SuboptimalityGap) {
  MinProblem p(Geometry::box(1, -1.0, 1.0), Matrix::Ones(1, 1), Vector::Zero(1), Matrix::Zero(1, 1),
               Vector::Ones(1));
  EXPECT_EQ(subopt_gap(p, p.x_star()), 0.0);
  EXPECT_DOUBLE_EQ(subopt_gap(p, Vector::Ones(1)), 0.5);

  MinInstanceSpec s;
  s.dim = 6;
  auto q = make_min_instance(s, Vector::Ones(1));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    Vector x = feasible_point(q.geometry(), rng);
    const double direct = 0.5 * x.dot(q.a() * x) - q.b().dot(x) - q.f_star();
    EXPECT_NEAR(subopt_gap(q, x), direct <= 1e-12 ? 0.0 : direct, 1e-12);
  }
}

TEST(Validation, ErrViMatchesGridSearch) {
  auto p = matching_pennies(Vector::Ones(1));
  EXPECT_LE(err_vi(p, p.x_star()), 1e-12);
  Vector x(4);
  x << 1, 0, 1, 0;
  double best = -1e300;
  for (int i = 0; i <= 1000; ++i) {
    for (int j = 0; j <= 1000; ++j) {
      Vector u(4);
      u << i / 1000.0, 1 - i / 1000.0, j / 1000.0, 1 - j / 1000.0;
      best = std::max(best, p.op(u).dot(x - u));
    }
  }
  EXPECT_NEAR(err_vi(p, x), best, 1e-3);
  EXPECT_GT(err_vi(p, x), 0.5);
}

TEST(Validation, ErrViNeedsSkewOperator) {
  ViProblem p(Geometry::box(1, -1.0, 1.0), Matrix::Ones(1, 1), Vector::Zero(1), Matrix::Zero(1, 1),
              Vector::Ones(1));
  EXPECT_THROW(err_vi(p, Vector::Zero(1)), UnsupportedMetricError);
}

TEST(Validation, ErrViIsNonnegativeAndDominatesProbes) {
  ViInstanceSpec s;
  s.rows = 3;
  s.cols = 2;
  s.affine = 0.4;
  auto p = make_vi_instance(s, Vector::Ones(1));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    Vector x = feasible_point(p.geometry(), rng);
    const double e = err_vi(p, x);
    EXPECT_GE(e, 0.0);
    for (int k = 0; k < 5; ++k) {
      Vector u = feasible_point(p.geometry(), rng);
      EXPECT_LE(p.op(u).dot(x - u), e + 1e-12);
    }
  }
}

TEST(Validation, WeakGap) {
  ViInstanceSpec s;
  s.affine = 0.2;
  auto p = make_vi_instance(s, Vector::Ones(1));
  auto probes = vertex_probes(p.geometry());
  EXPECT_EQ(probes.size(), 16u);
  auto at_solution = weak_vi_gap(p, {p.x_star(), p.x_star()}, probes);
  EXPECT_LE(at_solution.max, 1e-8);

  std::mt19937_64 rng(5);
  Vector x = feasible_point(p.geometry(), rng);
  auto single = weak_vi_gap(p, {x}, probes);
  EXPECT_NEAR(single.max, err_vi(p, x), 1e-12);
  for (std::size_t i = 0; i < probes.size(); ++i)
    EXPECT_NEAR(single.per_probe[i], p.op(probes[i]).dot(x - probes[i]), 1e-12);

  Vector y = feasible_point(p.geometry(), rng);
  auto pair = weak_vi_gap(p, {x, y}, probes);
  EXPECT_LE(pair.max, 0.5 * (err_vi(p, x) + err_vi(p, y)) + 1e-12);
}

TEST(Validation, VertexProbes) {
  EXPECT_EQ(vertex_probes(Geometry::box(3, 0.0, 1.0)).size(), 8u);
  EXPECT_EQ(vertex_probes(Geometry::simplex_product({2, 3})).size(), 6u);
  EXPECT_THROW(vertex_probes(Geometry::box(20, 0.0, 1.0), 1000), InputError);
  EXPECT_THROW(vertex_probes(Geometry::ball(Vector::Zero(2), 1.0)), InputError);
}

TEST(Validation, LineFitAndBatchMeans) {
  auto f = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_THROW(fit_line({1}, {1}), StatisticsError);

  std::vector<double> v(200);
  for (int i = 0; i < 200; ++i) v[i] = i % 2;
  auto m = batch_means(v, 20);
  EXPECT_DOUBLE_EQ(m.mean, 0.5);
  EXPECT_NEAR(m.se, 0.0, 1e-15);
  EXPECT_THROW(batch_means(std::vector<double>(10, 1.0), 20), StatisticsError);
}

TEST(Validation, Quantiles) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.25), 2.5);
  EXPECT_THROW(median({}), StatisticsError);
}

TEST(Validation, RateFitOnSyntheticSequences) {
  GapReport quad, root;
  for (double T = 16; T <= 4096; T *= 2) {
    quad.budgets.push_back(T);
    root.budgets.push_back(T);
    quad.values.push_back({1.0 / (T * T), 1.0 / (T * T)});
    root.values.push_back({3.0 / std::sqrt(T), 2.0 / std::sqrt(T), 4.0 / std::sqrt(T)});
  }
  auto fq = rate_fit(quad);
  EXPECT_NEAR(fq.slope, -2.0, 1e-12);
  EXPECT_NEAR(fq.ci_lo, -2.0, 1e-9);
  EXPECT_NEAR(fq.ci_hi, -2.0, 1e-9);
  auto fr = rate_fit(root);
  EXPECT_NEAR(fr.slope, -0.5, 1e-12);
  EXPECT_LE(fr.ci_lo, -0.5 + 1e-12);
  EXPECT_GE(fr.ci_hi, -0.5 - 1e-12);

  auto fmin = rate_fit(quad, 100.0);
  EXPECT_EQ(fmin.used_budgets.front(), 128.0);
}

TEST(Validation, RateFitFloorAndSpan) {
  GapReport r;
  for (double T : {8.0, 16.0, 32.0, 64.0, 128.0, 256.0}) {
    r.budgets.push_back(T);
    r.values.push_back({T < 50 ? 1.0 / T : 1e-15});
  }
  EXPECT_THROW(rate_fit(r), StatisticsError);  // three points survive the floor
  r.budgets = {8, 16, 32, 64, 128, 256, 512};
  r.values = {{1.0 / 8}, {1.0 / 16}, {1.0 / 32}, {1.0 / 64}, {1.0 / 128}, {0.0}, {0.0}};
  auto f = rate_fit(r);
  EXPECT_EQ(f.floored_budgets, (std::vector<double>{256, 512}));
  EXPECT_NEAR(f.slope, -1.0, 1e-12);

  GapReport narrow;
  narrow.budgets = {10, 11, 12, 13, 14};
  narrow.values = {{1}, {0.9}, {0.8}, {0.7}, {0.6}};
  EXPECT_THROW(rate_fit(narrow), StatisticsError);
}

TEST(Validation, Lemma1NoiselessIsDegenerate) {
  auto k = kernel_ptr(random_ergodic(3, 1));
  Lemma1Config cfg;
  cfg.trials = 40;
  cfg.n_grid = {4, 8, 16};
  auto r = lemma1_scaling(k, stationary(*k), Matrix::Zero(2, 3), cfg);
  EXPECT_TRUE(r.degenerate);
  for (const auto& c : r.cells) EXPECT_EQ(c.value, 0.0);
}

TEST(Validation, Lemma1IidChainMatchesVarianceOverN) {
  Vector pi(4);
  pi << 0.1, 0.2, 0.3, 0.4;
  Matrix rows = pi.transpose().replicate(4, 1);
  auto k = kernel_ptr(TransitionKernel(rows));
  Matrix noise = zero_mean_shifts(3, pi, 1.0, 2.0, 8);
  double trace = 0.0;
  for (int z = 0; z < 4; ++z) trace += pi[z] * noise.col(z).squaredNorm();
  Lemma1Config cfg;
  cfg.trials = 4000;
  cfg.n_grid = {4, 16, 64, 256};
  auto r = lemma1_scaling(k, pi, noise, cfg);
  // The SE comes from 20 batch means, so allow a t(19) tail.
  for (const auto& c : r.cells) EXPECT_NEAR(c.value, trace / c.parameter, 4.0 * c.se) << c.parameter;
  EXPECT_NEAR(r.exponent, -1.0, 0.1);
}

TEST(Validation, Lemma1RejectsBiasedNoiseAndTinySamples) {
  auto k = kernel_ptr(random_ergodic(3, 1));
  Vector pi = stationary(*k);
  Lemma1Config cfg;
  cfg.trials = 40;
  EXPECT_THROW(lemma1_scaling(k, pi, Matrix::Ones(2, 3), cfg), InputError);
  cfg.trials = 1;
  EXPECT_THROW(lemma1_scaling(k, pi, zero_mean_shifts(2, pi, 1.0, 2.0, 1), cfg), StatisticsError);
}

TEST(Validation, Lemma1SweepOnLazyChain) {
  auto k = kernel_ptr(make_lazy(random_ergodic(8, 7), 0.7));
  Matrix noise = zero_mean_shifts(5, stationary(*k), 1.0, 2.0, 1);
  Lemma1Config cfg;
  cfg.trials = 1000;
  cfg.n_grid = {32, 64, 128, 256, 512, 1024, 2048};
  auto sweep = lemma1_tau_sweep(k, noise, cfg);
  EXPECT_GE(sweep.tau_lazy, 2 * sweep.tau_base);
  EXPECT_GE(sweep.base.exponent, -1.2);
  EXPECT_LE(sweep.base.exponent, -0.8);
  EXPECT_GE(sweep.lazy.exponent, -1.2);
  EXPECT_LE(sweep.lazy.exponent, -0.8);
  EXPECT_GE(sweep.constant_ratio, 1.4);
  EXPECT_LE(sweep.constant_ratio, 3.0);
}

TEST(Validation, LazinessForTau) {
  auto k = random_ergodic(8, 7);
  const int tau = mixing_time(k);
  const double a = laziness_for_tau(k, 2 * tau);
  EXPECT_GE(mixing_time(make_lazy(k, a)), 2 * tau);
  if (a >= 1.0 / 64) EXPECT_LT(mixing_time(make_lazy(k, a - 1.0 / 64)), 2 * tau);
}

TEST(Validation, Lemma2NoiselessIsDegenerate) {
  auto k = kernel_ptr(random_ergodic(4, 2));
  auto r = lemma2_check(table_oracle(Matrix::Ones(2, 4)), Vector::Zero(2), k, stationary(*k),
                        small_lemma2());
  EXPECT_TRUE(r.bias.degenerate);
  for (const auto& c : r.bias.cells) EXPECT_LE(c.value, 1e-28);
  for (const auto& c : r.variance) EXPECT_LE(c.value, 1e-28);
  EXPECT_EQ(r.unbiased.max_z, 0.0);
}

TEST(Validation, Lemma2BiasHalvesWhenMDoubles) {
  auto k = kernel_ptr(make_lazy(random_ergodic(8, 7), 0.5));
  Vector pi = stationary(*k);
  Matrix noise = zero_mean_shifts(3, pi, 1.0, 2.0, 4);
  Lemma2Config cfg = small_lemma2();
  cfg.bias_m = {8, 16, 32, 64, 128};
  auto r = lemma2_check(table_oracle(noise), Vector::Zero(3), k, pi, cfg);
  for (std::size_t i = 0; i + 1 < r.bias.cells.size(); ++i) {
    const double ratio = std::sqrt(r.bias.cells[i].value / r.bias.cells[i + 1].value);
    EXPECT_GE(ratio, 1.4) << r.bias.cells[i].label;
    EXPECT_LE(ratio, 2.8) << r.bias.cells[i].label;
  }
  // Exact conditional mean agrees with the report's worst-start bias.
  Matrix cond = mlmc_conditional_mean(noise, *k, {1, 8});
  double worst = 0.0;
  for (int z = 0; z < 8; ++z) worst = std::max(worst, cond.col(z).squaredNorm());
  EXPECT_NEAR(r.bias.cells[0].value, worst, 1e-15);
  // The pi-average of the conditional means is the unconditional mean, which is unbiased.
  EXPECT_LE((cond * pi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Validation, Lemma2UnbiasedAndVarianceMonotoneInB) {
  auto k = kernel_ptr(make_lazy(random_ergodic(8, 7), 0.5));
  Vector pi = stationary(*k);
  Matrix noise = zero_mean_shifts(2, pi, 1.0, 2.0, 6);
  Lemma2Config cfg = small_lemma2();
  cfg.paired_trials = 20000;
  auto r = lemma2_check(table_oracle(noise), Vector::Zero(2), k, pi, cfg);
  EXPECT_LE(r.unbiased.max_z, 4.0);
  const std::size_t nb = cfg.variance_b.size();
  for (std::size_t m = 0; m < cfg.variance_m.size(); ++m) {
    for (std::size_t b = 0; b + 1 < nb; ++b) {
      const auto& lo = r.variance[m * nb + b];
      const auto& hi = r.variance[m * nb + b + 1];
      EXPECT_LE(hi.value, lo.value + 2.0 * std::hypot(lo.se, hi.se)) << hi.label;
    }
  }
}
