#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace epoch_active {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Zero-based class label. Ties in every argmax resolve to the lowest index.
using ClassIndex = std::size_t;

/// A point in the input space X.
using Input = Vector;

/// Raised when a restricted distribution D_Q has no usable mass.
class DegenerateRegion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index of the largest entry, lowest index on ties.
inline ClassIndex argmax_lowest(const Vector& v) {
  ClassIndex best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<ClassIndex>(i);
  }
  return best;
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// RNG streams.
//
// Every consumer of randomness gets its own engine derived from (seed, stream,
// index) so that components never share state and results do not depend on
// evaluation order.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

enum class Stream : std::uint64_t {
  marginal = 1,
  labels = 2,
  evaluation = 3,
  oracle = 4,
  search = 5,
  passive = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(stream), index));
}

/// Uniform double in [0, 1) built from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller (platform independent, unlike std::normal_distribution).
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Sample index from a discrete distribution given by probabilities summing to one.
inline ClassIndex sample_categorical(Rng& rng, const Vector& probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<ClassIndex>(i);
  }
  // Rounding left u above the running sum; return the last class with mass.
  for (Eigen::Index i = probs.size() - 1; i > 0; --i) {
    if (probs[i] > 0.0) return static_cast<ClassIndex>(i);
  }
  return 0;
}

/// Estimate with a normal-approximation standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Running mean/variance (Welford) for Monte-Carlo estimates.
class MeanAccumulator {
 public:
  void add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }
  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
  double stderr_of_mean() const {
    return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
  }
  Estimate estimate() const { return {mean(), stderr_of_mean()}; }

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace epoch_active
