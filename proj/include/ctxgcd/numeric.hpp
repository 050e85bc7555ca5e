#pragma once

// Dense double-precision helpers shared by every module: a row-major matrix,
// stable probability transforms, a splittable deterministic RNG and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ctxgcd/error.hpp"

namespace ctxgcd {

using Vec = std::vector<double>;

inline constexpr double kZeroNormThreshold = 1e-30;
inline constexpr double kProbFloor = 1e-300;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool same_shape(const Mat& other) const { return rows == other.rows && cols == other.cols; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline Vec l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kZeroNormThreshold)) fail(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

/// Row-wise l2_normalize. Also returns the original row norms, which the
/// backward pass through the normalization needs.
inline Mat normalize_rows(const Mat& m, Vec* norms = nullptr) {
  Mat out(m.rows, m.cols);
  if (norms) norms->assign(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double n = norm2(m.row(i));
    if (!(n > kZeroNormThreshold)) {
      fail(ErrorCode::ZeroVector, "row " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j) / n;
    if (norms) (*norms)[i] = n;
  }
  return out;
}

/// Pull a gradient on y = v/|v| back onto v: (g - y (y.g)) / |v|.
inline void normalize_backward(std::span<const double> y, double norm, std::span<const double> grad_y,
                               std::span<double> grad_v) {
  const double proj = dot(y, grad_y);
  for (std::size_t i = 0; i < y.size(); ++i) grad_v[i] = (grad_y[i] - y[i] * proj) / norm;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (!(nu > kZeroNormThreshold) || !(nv > kZeroNormThreshold)) {
    fail(ErrorCode::ZeroVector, "cosine of a zero vector");
  }
  return dot(u, v) / (nu * nv);
}

inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  return std::clamp(1.0 - cosine_similarity(u, v), 0.0, 2.0);
}

inline double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline Vec softmax_temp(std::span<const double> logits, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "temperature must be positive");
  Vec out(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v / tau);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / tau - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

inline void check_probability(std::span<const double> p) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::NotAProbabilityVector, "negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) fail(ErrorCode::NotAProbabilityVector, "entries sum to " + std::to_string(s));
}

inline double entropy(std::span<const double> p) {
  check_probability(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(std::max(v, kProbFloor));
  }
  return h;
}

/// Pairwise (tree) summation of equal-length vectors; the reduction order
/// depends only on the count, not on the data.
inline Vec pairwise_sum(const std::vector<std::span<const double>>& items, std::size_t dim) {
  std::function<Vec(std::size_t, std::size_t)> rec = [&](std::size_t lo, std::size_t hi) -> Vec {
    if (hi - lo == 0) return Vec(dim, 0.0);
    if (hi - lo == 1) return Vec(items[lo].begin(), items[lo].end());
    const std::size_t mid = lo + (hi - lo) / 2;
    Vec a = rec(lo, mid);
    const Vec b = rec(mid, hi);
    for (std::size_t i = 0; i < dim; ++i) a[i] += b[i];
    return a;
  };
  return rec(0, items.size());
}

/// Counter-based SplitMix64 stream. The n-th draw is a pure function of
/// (key, n), so equal seeds give equal sequences everywhere and split()
/// derives independent child streams without touching the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  std::uint64_t next_u64() { return mix(key_ + (counter_++) * kGamma); }

  /// Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  Rng split(std::uint64_t child_id) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(child_id + 0x3c6ef372fe94f82bULL));
    return child;
  }

  /// k distinct values from [0, n), uniformly, via partial Fisher-Yates.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
template <class F>
double check_gradient(F&& f, std::span<const double> analytic, Vec x, double h = 1e-5) {
  if (!(h > 0.0)) fail(ErrorCode::NonFiniteEvaluation, "step must be positive");
  if (analytic.size() != x.size()) fail(ErrorCode::ShapeMismatch, "gradient length differs from x");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(std::as_const(x));
    x[i] = xi - h;
    const double fm = f(std::as_const(x));
    x[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorCode::NonFiniteEvaluation, "objective not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

template <class F, class G>
  requires std::is_invocable_r_v<Vec, G, const Vec&>
double check_gradient(F&& f, G&& grad_f, const Vec& x, double h = 1e-5) {
  const Vec g = grad_f(x);
  return check_gradient(std::forward<F>(f), std::span<const double>(g), x, h);
}

}  // namespace ctxgcd
