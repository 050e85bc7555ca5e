#pragma once

// Contextual structure mined from a batch or the whole dataset: k-nearest
// and k-reciprocal neighbor sets, classifier pseudo-labels, the contextual
// pair matrix s_ij and per-class feature prototypes.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "ctxgcd/error.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

using IndexLists = std::vector<std::vector<std::size_t>>;

/// The k indices j != i with the smallest dist(i, j), ascending, ties to the
/// smaller index.
inline IndexLists knn_by_distance(std::size_t n, std::size_t k, const std::function<double(std::size_t, std::size_t)>& dist) {
  if (k < 1 || n < 2 || k > n - 1) {
    fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " needs 1 <= k <= N-1 with N=" + std::to_string(n));
  }
  IndexLists out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(dist(i, j), j);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(cand[r].second);
  }
  return out;
}

inline IndexLists knn(const Mat& embeddings, std::size_t k) {
  return knn_by_distance(embeddings.rows, k, [&](std::size_t i, std::size_t j) {
    return cosine_distance(embeddings.row(i), embeddings.row(j));
  });
}

/// R(i) = { j in N(i) : i in N(j) }, each set sorted ascending.
inline IndexLists k_reciprocal(const IndexLists& knn_lists) {
  const std::size_t n = knn_lists.size();
  std::vector<std::uint8_t> in_list(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : knn_lists[i]) in_list[i * n + j] = 1;
  IndexLists out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : knn_lists[i])
      if (in_list[j * n + i]) out[i].push_back(j);
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

/// argmax of the view-averaged class probabilities, smallest index on ties.
inline std::vector<int> pseudo_labels(const Mat& p_a, const Mat& p_b) {
  if (!p_a.same_shape(p_b)) fail(ErrorCode::ShapeMismatch, "probability matrices differ in shape");
  std::vector<int> out(p_a.rows);
  for (std::size_t i = 0; i < p_a.rows; ++i) {
    int best = 0;
    double best_v = -1.0;
    for (std::size_t k = 0; k < p_a.cols; ++k) {
      const double v = (p_a(i, k) + p_b(i, k)) / 2.0;
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(k);
      }
    }
    out[i] = best;
  }
  return out;
}

/// Dense symmetric 0/1 matrix with a zero diagonal.
struct PairMatrix {
  std::size_t n = 0;
  std::vector<std::uint8_t> bits;

  PairMatrix() = default;
  explicit PairMatrix(std::size_t size) : n(size), bits(size * size, 0) {}

  bool operator()(std::size_t i, std::size_t j) const { return bits[i * n + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits[i * n + j] = v ? 1 : 0; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

  friend bool operator==(const PairMatrix&, const PairMatrix&) = default;
};

/// s_ij = 1 iff j in R(i) and the two pseudo-labels agree.
inline PairMatrix contextual_pairs(const IndexLists& reciprocal, const std::vector<int>& labels) {
  if (reciprocal.size() != labels.size()) fail(ErrorCode::LengthMismatch, "reciprocal sets and pseudo-labels differ in N");
  PairMatrix s(labels.size());
  for (std::size_t i = 0; i < reciprocal.size(); ++i) {
    for (std::size_t j : reciprocal[i]) {
      if (j != i && labels[i] == labels[j]) {
        s.set(i, j, true);
        s.set(j, i, true);
      }
    }
  }
  return s;
}

struct NeighborContext {
  IndexLists knn;
  IndexLists reciprocal;
  PairMatrix pair_labels;
  std::vector<int> pseudo_labels;
};

inline NeighborContext mine_context(const Mat& z, const Mat& p_a, const Mat& p_b, std::size_t k_nn) {
  NeighborContext ctx;
  ctx.knn = knn(z, k_nn);
  ctx.reciprocal = k_reciprocal(ctx.knn);
  ctx.pseudo_labels = pseudo_labels(p_a, p_b);
  ctx.pair_labels = contextual_pairs(ctx.reciprocal, ctx.pseudo_labels);
  return ctx;
}

// ---------------------------------------------------------------------------

/// Normalized per-class sums of the rows pseudo-labeled with that class.
/// Classes with no members, or whose members cancel out, are masked.
struct PrototypeSet {
  Mat mu;                                 // K x d, rows of absent classes are unused
  std::vector<std::uint8_t> present;      // K
  Vec sum_norms;                          // |sum of members| per present class
  std::vector<std::vector<std::size_t>> members;
  std::vector<int> degenerate;            // classes masked because the sum vanished

  std::size_t num_present() const { return static_cast<std::size_t>(std::count(present.begin(), present.end(), 1)); }
};

inline constexpr double kDegenerateSumNorm = 1e-12;

inline PrototypeSet prototypes(const Mat& z, const std::vector<int>& labels, int num_classes) {
  if (num_classes < 1) fail(ErrorCode::ConfigError, "prototypes need K >= 1");
  if (labels.size() != z.rows) fail(ErrorCode::LengthMismatch, "one pseudo-label per row required");
  const auto k = static_cast<std::size_t>(num_classes);
  PrototypeSet ps;
  ps.mu = Mat(k, z.cols);
  ps.present.assign(k, 0);
  ps.sum_norms.assign(k, 0.0);
  ps.members.resize(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) fail(ErrorCode::ShapeMismatch, "pseudo-label out of range");
    ps.members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (ps.members[c].empty()) continue;
    std::vector<std::span<const double>> rows;
    rows.reserve(ps.members[c].size());
    for (std::size_t i : ps.members[c]) rows.push_back(z.row(i));
    const Vec sum = pairwise_sum(rows, z.cols);
    const double n = norm2(sum);
    if (!(n > kDegenerateSumNorm)) {
      spdlog::warn("prototype of class {} masked: member sum has norm {}", c, n);
      ps.degenerate.push_back(static_cast<int>(c));
      continue;
    }
    ps.present[c] = 1;
    ps.sum_norms[c] = n;
    for (std::size_t j = 0; j < z.cols; ++j) ps.mu(c, j) = sum[j] / n;
  }
  return ps;
}

}  // namespace ctxgcd
