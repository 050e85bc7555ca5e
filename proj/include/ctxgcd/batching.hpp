#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctxgcd/error.hpp"
#include "ctxgcd/mining.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

struct BatchConfig {
  int q = 12;        // query instances
  int k_batch = 8;   // group size per query (query + k_batch - 1 neighbors)
  int M = 32;        // uniform fillers

  std::size_t batch_size() const { return static_cast<std::size_t>(q * k_batch + M); }
};

/// Query-anchored batch: q queries, each followed by its nearest unused
/// neighbors, then M uniform fillers. All indices are distinct.
struct BatchPlan {
  std::vector<std::size_t> query_indices;
  std::vector<std::vector<std::size_t>> neighbor_indices;
  std::vector<std::size_t> filler_indices;

  /// Queries, then neighbor groups in query order, then fillers.
  std::vector<std::size_t> order() const {
    std::vector<std::size_t> out(query_indices);
    for (const auto& g : neighbor_indices) out.insert(out.end(), g.begin(), g.end());
    out.insert(out.end(), filler_indices.begin(), filler_indices.end());
    return out;
  }

  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

/// `neighbor_index[i]` lists dataset neighbors of i, nearest first. A neighbor
/// already in the batch is replaced by the next-nearest unused one.
inline BatchPlan build_batch(const IndexLists& neighbor_index, const BatchConfig& cfg, Rng& rng) {
  if (cfg.q < 1 || cfg.k_batch < 1 || cfg.M < 0) fail(ErrorCode::ConfigError, "batch needs q >= 1, k_batch >= 1, M >= 0");
  const std::size_t n = neighbor_index.size();
  const auto q = static_cast<std::size_t>(cfg.q);
  const auto per = static_cast<std::size_t>(cfg.k_batch - 1);
  const auto m = static_cast<std::size_t>(cfg.M);
  if (n < cfg.batch_size()) {
    fail(ErrorCode::DatasetTooSmall, "dataset of " + std::to_string(n) + " rows cannot fill a batch of " +
                                         std::to_string(cfg.batch_size()));
  }

  BatchPlan plan;
  std::vector<std::uint8_t> used(n, 0);
  plan.query_indices = rng.sample_without_replacement(n, q);
  for (std::size_t i : plan.query_indices) used[i] = 1;

  for (std::size_t qi : plan.query_indices) {
    const auto& list = neighbor_index[qi];
    if (list.size() < per) fail(ErrorCode::DatasetTooSmall, "neighbor index shorter than k_batch - 1");
    std::vector<std::size_t> group;
    for (std::size_t j : list) {
      if (group.size() == per) break;
      if (used[j]) continue;
      used[j] = 1;
      group.push_back(j);
    }
    if (group.size() < per) fail(ErrorCode::DatasetTooSmall, "ran out of unused neighbors for query " + std::to_string(qi));
    plan.neighbor_indices.push_back(std::move(group));
  }

  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!used[i]) pool.push_back(i);
  for (std::size_t pick : rng.sample_without_replacement(pool.size(), m)) plan.filler_indices.push_back(pool[pick]);
  return plan;
}

/// Neighbor lists long enough that duplicate replacement can never run dry.
inline std::size_t neighbor_index_depth(std::size_t n, const BatchConfig& cfg) {
  const std::size_t want = static_cast<std::size_t>(cfg.q * cfg.k_batch + cfg.k_batch);
  return std::max<std::size_t>(1, std::min(n - 1, want));
}

}  // namespace ctxgcd
