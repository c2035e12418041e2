#include "markov_opt/chain.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

constexpr double kRowSumTolerance = 1e-12;
constexpr int kPowerIterationLimit = 1000000;
constexpr int kMixingTimeLimit = 1000000;
constexpr int kDyadicLevels = 63;
// Below this many steps a skip is cheaper as plain sampling.
constexpr std::uint64_t kSkipDirectLimit = 64;

int inverse_cdf(const double* cumulative, int n, double u) {
  const double* hit = std::upper_bound(cumulative, cumulative + n, u);
  return std::min(static_cast<int>(hit - cumulative), n - 1);
}

}  // namespace

struct TransitionKernel::PowerCache {
  std::once_flag once;
  std::vector<Matrix> dyadic;  // P^(2^i)
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

TransitionKernel::TransitionKernel(Matrix transition)
    : p_(std::move(transition)), powers_(std::make_shared<PowerCache>()) {
  const Eigen::Index n = p_.rows();
  if (n < 1 || p_.cols() != n) {
    throw InputError(fmt::format("transition matrix must be square and nonempty, got {}x{}",
                                 p_.rows(), p_.cols()));
  }
  if (!p_.allFinite()) throw InputError("transition matrix contains NaN or Inf");
  if (p_.minCoeff() < 0.0) throw InputError("transition matrix has a negative entry");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sum = p_.row(i).sum();
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw InputError(fmt::format("row {} of the transition matrix sums to {:.17g}", i, sum));
    }
  }
  cumulative_.resize(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double running = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      running += p_(i, j);
      cumulative_[static_cast<std::size_t>(i * n + j)] = running;
    }
  }
}

bool TransitionKernel::is_ergodic() const {
  // Primitive iff B^m > 0 for m >= (n-1)^2 + 1; squaring reaches such an m.
  const Eigen::Index n = p_.rows();
  Matrix reach = (p_.array() > 0.0).cast<double>().matrix();
  std::uint64_t power = 1;
  const std::uint64_t target = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);
  while (power < target) {
    reach = ((reach * reach).array() > 0.0).cast<double>().matrix();
    power *= 2;
  }
  return reach.minCoeff() > 0.0;
}

void TransitionKernel::require_ergodic() const {
  if (!is_ergodic()) {
    throw ErgodicityError("transition kernel is not irreducible and aperiodic");
  }
}

Vector TransitionKernel::step_distribution(int from, std::uint64_t steps) const {
  std::call_once(powers_->once, [this] {
    powers_->dyadic.reserve(kDyadicLevels);
    powers_->dyadic.push_back(p_);
    for (int i = 1; i < kDyadicLevels; ++i) {
      Matrix sq = powers_->dyadic.back() * powers_->dyadic.back();
      for (Eigen::Index r = 0; r < sq.rows(); ++r) sq.row(r) /= sq.row(r).sum();
      powers_->dyadic.push_back(std::move(sq));
    }
  });
  Eigen::RowVectorXd dist = Eigen::RowVectorXd::Zero(p_.rows());
  dist[from] = 1.0;
  for (int bit = 0; bit < kDyadicLevels && steps != 0; ++bit, steps >>= 1) {
    if (steps & 1ULL) dist = dist * powers_->dyadic[static_cast<std::size_t>(bit)];
  }
  return dist.transpose();
}

int TransitionKernel::sample_next(int from, double u) const {
  const int n = n_states();
  return inverse_cdf(cumulative_.data() + static_cast<std::size_t>(from) * n, n, u);
}

Vector stationary(const TransitionKernel& k) {
  k.require_ergodic();
  const Matrix& p = k.matrix();
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(p.rows(), 1.0 / p.rows());
  for (int it = 0; it < kPowerIterationLimit; ++it) {
    Eigen::RowVectorXd next = pi * p;
    next /= next.sum();
    const double change = (next - pi).cwiseAbs().sum();
    pi = std::move(next);
    if (change <= 1e-12) {
      if ((pi * p - pi).cwiseAbs().sum() > 1e-10) break;
      return pi.transpose();
    }
  }
  throw DiagnosticsError("power iteration for the stationary distribution did not converge");
}

double worst_tv(const Matrix& m, const Vector& pi) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    worst = std::max(worst, 0.5 * (m.row(i).transpose() - pi).cwiseAbs().sum());
  }
  return worst;
}

double worst_pairwise_tv(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < m.rows(); ++b) {
      worst = std::max(worst, 0.5 * (m.row(a) - m.row(b)).cwiseAbs().sum());
    }
  }
  return worst;
}

ChainDiagnostics diagnose(const TransitionKernel& k, double threshold, int horizon) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InputError(fmt::format("mixing threshold {} outside (0, 1)", threshold));
  }
  ChainDiagnostics out;
  out.pi = stationary(k);
  const Matrix& p = k.matrix();
  Matrix power = Matrix::Identity(p.rows(), p.cols());
  out.tv_curve.emplace_back(0, worst_tv(power, out.pi));
  for (int t = 1;; ++t) {
    if (t > kMixingTimeLimit) {
      throw DiagnosticsError("mixing time exceeds 1e6 steps");
    }
    power = power * p;
    const double tv = worst_tv(power, out.pi);
    out.tv_curve.emplace_back(t, tv);
    if (out.tau_mix == 0 && tv <= threshold) out.tau_mix = t;
    if (out.tau_mix != 0 && t >= std::max(2 * out.tau_mix, horizon)) break;
  }
  return out;
}

int mixing_time(const TransitionKernel& k, double threshold) {
  return diagnose(k, threshold).tau_mix;
}

TransitionKernel make_lazy(const TransitionKernel& k, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw InputError(fmt::format("laziness {} outside [0, 1)", alpha));
  }
  const Matrix& p = k.matrix();
  return TransitionKernel(alpha * Matrix::Identity(p.rows(), p.cols()) + (1.0 - alpha) * p);
}

TransitionKernel random_ergodic(int n_states, std::uint64_t seed) {
  if (n_states < 2 || n_states > 99) {
    throw InputError(fmt::format("random_ergodic needs 2 <= n_states <= 99, got {}", n_states));
  }
  constexpr double kEntryFloor = 0.01;
  std::mt19937_64 rng(mix_seed(seed, 0x6b65726eULL));
  Matrix p(n_states, n_states);
  const double free_mass = 1.0 - kEntryFloor * n_states;
  for (int i = 0; i < n_states; ++i) {
    Eigen::RowVectorXd raw(n_states);
    for (int j = 0; j < n_states; ++j) raw[j] = uniform01(rng) + 1e-12;
    p.row(i) = (kEntryFloor + free_mass * (raw / raw.sum()).array()).matrix();
  }
  return TransitionKernel(std::move(p));
}

ChainCursor::ChainCursor(std::shared_ptr<const TransitionKernel> kernel, int state,
                         std::uint64_t seed)
    : kernel_(std::move(kernel)), state_(state), rng_(seed) {}

ChainCursor ChainCursor::stationary_start(std::shared_ptr<const TransitionKernel> kernel,
                                          const Vector& pi, std::uint64_t seed) {
  if (!kernel) throw InputError("null kernel");
  if (pi.size() != kernel->n_states()) throw InputError("stationary vector has wrong size");
  ChainCursor cursor(std::move(kernel), 0, seed);
  std::vector<double> cumulative(static_cast<std::size_t>(pi.size()));
  double running = 0.0;
  for (Eigen::Index i = 0; i < pi.size(); ++i) cumulative[static_cast<std::size_t>(i)] = running += pi[i];
  cursor.state_ = inverse_cdf(cumulative.data(), static_cast<int>(pi.size()), uniform01(cursor.rng_));
  return cursor;
}

ChainCursor ChainCursor::fixed_start(std::shared_ptr<const TransitionKernel> kernel, int state,
                                     std::uint64_t seed) {
  if (!kernel) throw InputError("null kernel");
  if (state < 0 || state >= kernel->n_states()) {
    throw InputError(fmt::format("start state {} out of range", state));
  }
  return ChainCursor(std::move(kernel), state, seed);
}

int ChainCursor::step() {
  state_ = kernel_->sample_next(state_, uniform01(rng_));
  ++consumed_;
  return state_;
}

std::vector<int> ChainCursor::advance(std::uint64_t steps) {
  if (steps == 0) throw InputError("advance needs at least one step");
  std::vector<int> visited;
  visited.reserve(static_cast<std::size_t>(steps));
  for (std::uint64_t i = 0; i < steps; ++i) visited.push_back(step());
  return visited;
}

void ChainCursor::skip(std::uint64_t steps) {
  if (steps <= kSkipDirectLimit) {
    for (std::uint64_t i = 0; i < steps; ++i) step();
    return;
  }
  const Vector dist = kernel_->step_distribution(state_, steps);
  std::vector<double> cumulative(static_cast<std::size_t>(dist.size()));
  double running = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i) cumulative[static_cast<std::size_t>(i)] = running += dist[i];
  state_ = inverse_cdf(cumulative.data(), static_cast<int>(dist.size()), uniform01(rng_) * running);
  consumed_ += steps;
}

}  // namespace markov_opt
