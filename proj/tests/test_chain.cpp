#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "markov_opt/chain.hpp"
#include "markov_opt/errors.hpp"
#include "test_helpers.hpp"

using namespace markov_opt;
using test_helpers::kernel_ptr;

namespace {

Matrix two_state() {
  Matrix p(2, 2);
  p << 0.9, 0.1, 0.2, 0.8;
  return p;
}

// Left Perron vector from a dense eigensolver.
Vector eigen_stationary(const Matrix& p) {
  Eigen::EigenSolver<Matrix> es(p.transpose());
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()[i] - 1.0) < std::abs(es.eigenvalues()[best] - 1.0)) best = i;
  Vector v = es.eigenvectors().col(best).real();
  return v / v.sum();
}

Matrix matrix_power(const Matrix& p, int t) {
  Matrix r = Matrix::Identity(p.rows(), p.cols());
  for (int i = 0; i < t; ++i) r = r * p;
  return r;
}

}  // namespace

TEST(Chain, StationaryTwoState) {
  Vector pi = stationary(TransitionKernel(two_state()));
  EXPECT_NEAR(pi[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(pi[1], 1.0 / 3.0, 1e-12);
}

TEST(Chain, StationaryUniformRows) {
  Vector pi = stationary(TransitionKernel(Matrix::Constant(3, 3, 1.0 / 3.0)));
  EXPECT_LE((pi.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-12);
}

TEST(Chain, StationaryMatchesEigenvector) {
  for (std::uint64_t seed : {1, 7, 42}) {
    auto k = random_ergodic(8, seed);
    Vector pi = stationary(k);
    EXPECT_LE((pi - eigen_stationary(k.matrix())).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((pi.transpose() * k.matrix() - pi.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Chain, MixingTimeTwoStateClosedForm) {
  // Worst-start TV is (2/3) 0.7^t for this kernel.
  const int expected = static_cast<int>(std::ceil(std::log(0.25 / (2.0 / 3.0)) / std::log(0.7)));
  EXPECT_EQ(expected, 3);
  EXPECT_EQ(mixing_time(TransitionKernel(two_state())), expected);
}

TEST(Chain, MixingTimeUniformRowsIsOne) {
  EXPECT_EQ(mixing_time(TransitionKernel(Matrix::Constant(4, 4, 0.25))), 1);
}

TEST(Chain, PeriodicChainIsRejected) {
  Matrix p(2, 2);
  p << 0, 1, 1, 0;
  TransitionKernel k(p);
  EXPECT_FALSE(k.is_ergodic());
  EXPECT_THROW(stationary(k), ErgodicityError);
  EXPECT_THROW(mixing_time(k), ErgodicityError);
}

TEST(Chain, NonStochasticIsRejected) {
  Matrix p(2, 2);
  p << 0.5, 0.6, 0.5, 0.5;
  EXPECT_THROW(TransitionKernel{p}, InputError);
  p << 1.5, -0.5, 0.5, 0.5;
  EXPECT_THROW(TransitionKernel{p}, InputError);
}

TEST(Chain, LazinessSlowsMixingAndKeepsPi) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto k = random_ergodic(6, seed);
    auto lazy = make_lazy(k, 0.5);
    EXPECT_GE(mixing_time(lazy), mixing_time(k));
    EXPECT_LE((stationary(lazy) - stationary(k)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Chain, LazyKernelEntries) {
  TransitionKernel k(two_state());
  EXPECT_EQ(make_lazy(k, 0.0).matrix(), k.matrix());
  auto near_identity = make_lazy(k, 0.999999);
  EXPECT_LE((near_identity.matrix() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
  // Second eigenvalue 0.7 moves to 0.5 + 0.5 * 0.7.
  Eigen::EigenSolver<Matrix> es(make_lazy(k, 0.5).matrix());
  double second = std::min(es.eigenvalues()[0].real(), es.eigenvalues()[1].real());
  EXPECT_NEAR(second, 0.85, 1e-12);
  EXPECT_THROW(make_lazy(k, 1.0), InputError);
  EXPECT_THROW(make_lazy(k, -0.1), InputError);
}

TEST(Chain, CursorDeterministicCycle) {
  Matrix p(2, 2);
  p << 0, 1, 1, 0;
  auto c = ChainCursor::fixed_start(kernel_ptr(TransitionKernel(p)), 0, 1);
  EXPECT_EQ(c.advance(3), (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(c.consumed(), 3u);
  c.skip(5);
  EXPECT_EQ(c.consumed(), 8u);
  EXPECT_EQ(c.state(), 0);
}

TEST(Chain, CursorSameSeedSameStates) {
  auto k = kernel_ptr(random_ergodic(8, 7));
  Vector pi = stationary(*k);
  auto a = ChainCursor::stationary_start(k, pi, 99);
  auto b = ChainCursor::stationary_start(k, pi, 99);
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(a.advance(1000), b.advance(1000));
  auto c = ChainCursor::stationary_start(k, pi, 100);
  EXPECT_NE(a.advance(1000), c.advance(1000));
}

TEST(Chain, EmpiricalFrequenciesMatchPi) {
  auto k = kernel_ptr(TransitionKernel(Matrix::Constant(4, 4, 0.25)));
  auto c = ChainCursor::fixed_start(k, 0, 5);
  const int n = 100000;
  Vector counts = Vector::Zero(4);
  for (int s : c.advance(n)) counts[s] += 1.0;
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / n, 0.25, 3.0 * se);
}

TEST(Chain, SkipMatchesStepDistribution) {
  auto k = kernel_ptr(make_lazy(random_ergodic(4, 3), 0.6));
  const int trials = 20000;
  const std::uint64_t steps = 5;
  Vector counts = Vector::Zero(4);
  for (int i = 0; i < trials; ++i) {
    auto c = ChainCursor::fixed_start(k, 0, mix_seed(11, i));
    c.skip(steps);
    counts[c.state()] += 1.0;
  }
  Vector row = matrix_power(k->matrix(), steps).row(0).transpose();
  for (int s = 0; s < 4; ++s) {
    const double se = std::sqrt(row[s] * (1 - row[s]) / trials);
    EXPECT_NEAR(counts[s] / trials, row[s], 4.0 * se);
  }
}

TEST(Chain, StepDistributionMatchesMatrixPower) {
  auto k = random_ergodic(5, 13);
  for (int t : {0, 1, 2, 7, 33}) {
    Matrix pt = matrix_power(k.matrix(), t);
    for (int z = 0; z < 5; ++z) {
      EXPECT_LE((k.step_distribution(z, t) - pt.row(z).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Chain, RandomErgodicInvariants) {
  for (int n : {2, 8, 20}) {
    auto k = random_ergodic(n, 7);
    EXPECT_GE(k.matrix().minCoeff(), 0.01);
    EXPECT_LE((k.matrix().rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    // Doeblin: entries >= eps give TV(t) <= (1 - n eps)^t.
    const double contraction = 1.0 - n * 0.01;
    const int bound = static_cast<int>(std::ceil(std::log(0.25) / std::log(contraction)));
    EXPECT_LE(mixing_time(k), bound);
  }
  EXPECT_EQ(random_ergodic(8, 7).matrix(), random_ergodic(8, 7).matrix());
  EXPECT_THROW(random_ergodic(1, 7), InputError);
}

TEST(Chain, TvCurveMonotoneAndSubmultiplicative) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto k = make_lazy(random_ergodic(6, seed), 0.3 + 0.03 * seed);
    auto diag = diagnose(k, 0.25, 40);
    for (std::size_t i = 1; i < diag.tv_curve.size(); ++i)
      ASSERT_LE(diag.tv_curve[i].second, diag.tv_curve[i - 1].second + 1e-15);
    const int tau = diag.tau_mix;
    EXPECT_EQ(tau, mixing_time(k));
    Matrix pt = matrix_power(k.matrix(), tau);
    Matrix p2t = pt * pt;
    const double dbar = worst_pairwise_tv(pt);
    EXPECT_LE(worst_pairwise_tv(p2t), dbar * dbar + 1e-15);
    EXPECT_LE(worst_tv(p2t, diag.pi), worst_pairwise_tv(p2t) + 1e-15);
    EXPECT_LE(worst_tv(p2t, diag.pi), 4.0 * std::pow(worst_tv(pt, diag.pi), 2) + 1e-15);
  }
}

TEST(Chain, MixSeedSeparatesStreams) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  EXPECT_EQ(mix_seed(5, 9), mix_seed(5, 9));
}
