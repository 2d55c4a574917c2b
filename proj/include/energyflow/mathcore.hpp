#pragma once

// Dense arithmetic, counter-based RNG and small statistics helpers shared by
// every other header in the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace energyflow {

using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a caller breaks an API contract that is not a plain bad
/// argument (e.g. asking for a gradient of a non-scalar output).
class contract_violation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical blow-up with the index of the step where it was detected.
class divergence_error : public std::runtime_error {
 public:
  divergence_error(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class training_divergence : public divergence_error {
  using divergence_error::divergence_error;
};
class sampler_divergence : public divergence_error {
  using divergence_error::divergence_error;
};
class rl_divergence : public divergence_error {
  using divergence_error::divergence_error;
};

namespace detail {

constexpr std::uint64_t splitmix(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_position(std::uint64_t key, std::uint64_t position,
                                      std::uint64_t lane) noexcept {
  return splitmix(splitmix(key ^ splitmix(position)) + lane * 0xD1B54A32D192ED03ULL);
}

}  // namespace detail

/// Counter-based generator: the value at stream position p depends only on
/// (seed, stream id, p), so substreams can be handed to independent workers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream), key_(detail::splitmix(seed) ^ detail::splitmix(~stream * 0x2545F4914F6CDD1DULL)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return counter_; }

  /// Independent generator for child `id`; the parent is not advanced.
  Rng substream(std::uint64_t id) const noexcept {
    return Rng(seed_, detail::splitmix(stream_ * 0x9E3779B97F4A7C15ULL + id + 1));
  }

  std::uint64_t next_u64() noexcept { return detail::hash_position(key_, counter_++, 0); }

  /// Uniform on (0, 1), 53-bit resolution.
  double uniform() noexcept { return to_open_unit(detail::hash_position(key_, counter_++, 0)); }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal; consumes exactly one stream position.
  double normal() noexcept {
    const std::uint64_t p = counter_++;
    const double u1 = to_open_unit(detail::hash_position(key_, p, 0));
    const double u2 = to_open_unit(detail::hash_position(key_, p, 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  static double to_open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// `dim` iid standard-normal draws.
inline RealVector gaussian_sample(Rng& rng, int dim) {
  if (dim <= 0) throw std::invalid_argument("gaussian_sample: dim must be >= 1");
  RealVector out(dim);
  for (int i = 0; i < dim; ++i) out[i] = rng.normal();
  return out;
}

inline double frobenius_norm(const RealMatrix& m) { return std::sqrt(m.array().square().sum()); }

/// ||M - M^T||_F / max(1, ||M||_F); zero exactly when M is symmetric.
inline double sym_defect(const RealMatrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("sym_defect: matrix must be square");
  const RealMatrix skew = m - m.transpose();
  return frobenius_norm(skew) / std::max(1.0, frobenius_norm(m));
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// statistics

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("variance: need at least two values");
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

inline double stddev(std::span<const double> xs) { return std::sqrt(variance(xs)); }

/// Population standard deviation (divides by n); zero for a single value.
inline double population_stddev(std::span<const double> xs) {
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median: empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Kendall tau-b between two paired samples; 0 when either side is constant.
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  const std::size_t n = x.size();
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n1 = static_cast<double>(concordant + discordant + ties_x);
  const double n2 = static_cast<double>(concordant + discordant + ties_y);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}

/// Least-squares slope of y against x.
inline double fitted_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fitted_slope: need >= 2 paired points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fitted_slope: x is constant");
  return sxy / sxx;
}

/// Two-sided exact sign test p-value; zero differences are dropped.
inline double sign_test_p_value(std::span<const double> differences) {
  int pos = 0, neg = 0;
  for (double d : differences) {
    if (d > 0) ++pos;
    else if (d < 0) ++neg;
  }
  const int n = pos + neg;
  if (n == 0) return 1.0;
  const int k = std::min(pos, neg);
  double tail = 0.0;
  for (int i = 0; i <= k; ++i) {
    tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

/// Largest singular value by power iteration from a deterministic start.
inline double spectral_norm_estimate(const Eigen::Ref<const Eigen::MatrixXd>& w, int iterations, Rng& rng) {
  if (w.size() == 0) return 0.0;
  Eigen::VectorXd v(w.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd u = w * v;
    const double un = u.norm();
    if (un == 0.0) return 0.0;
    u /= un;
    v = w.transpose() * u;
    sigma = v.norm();
    if (sigma == 0.0) return 0.0;
    v /= sigma;
  }
  return sigma;
}

}  // namespace energyflow
