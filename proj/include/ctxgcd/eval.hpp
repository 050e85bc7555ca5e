#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ctxgcd/error.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

/// Maximum-weight assignment on a rows x cols matrix of nonnegative counts
/// (Kuhn-Munkres with potentials, O(n^3) after padding to square). Returns,
/// for each row, the matched column or -1 when the row landed on padding.
inline std::vector<int> hungarian_match(const Mat& counts) {
  if (counts.rows == 0 || counts.cols == 0) fail(ErrorCode::EmptyInput, "empty contingency matrix");
  const std::size_t n = std::max(counts.rows, counts.cols);
  double top = 0.0;
  for (double v : counts.data) top = std::max(top, v);
  auto cost = [&](std::size_t i, std::size_t j) {
    const double c = (i < counts.rows && j < counts.cols) ? counts(i, j) : 0.0;
    return top - c;
  };

  // 1-based arrays; p[j] is the row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<std::uint8_t> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> match(counts.rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= counts.rows && j <= counts.cols) match[i - 1] = static_cast<int>(j - 1);
  }
  return match;
}

struct GcdMetrics {
  double acc_all = 0.0;
  double acc_old = 0.0;  // 0 when the split is empty
  double acc_new = 0.0;
  std::size_t n_old = 0;
  std::size_t n_new = 0;
  std::size_t n_excluded = 0;      // rows without ground truth
  std::vector<int> permutation;    // cluster id -> class id (-1 if unmatched)

  nlohmann::json to_json() const {
    return {{"all", acc_all}, {"old", acc_old}, {"new", acc_new}, {"n_old", n_old}, {"n_new", n_new}};
  }

  static std::string csv_header() { return "all,old,new,n_old,n_new"; }

  std::string csv_row() const {
    return nlohmann::json(acc_all).dump() + "," + nlohmann::json(acc_old).dump() + "," +
           nlohmann::json(acc_new).dump() + "," + std::to_string(n_old) + "," + std::to_string(n_new);
  }
};

/// One optimal cluster-to-class matching over every evaluated row, then
/// accuracy reported over all rows and over the old/new class splits.
inline GcdMetrics gcd_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                               const std::vector<int>& old_classes) {
  if (pred.size() != truth.size()) {
    fail(ErrorCode::LengthMismatch, std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) + " labels");
  }
  GcdMetrics m;
  std::vector<std::size_t> rows;
  int max_pred = -1, max_truth = -1;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0) {
      ++m.n_excluded;
      continue;
    }
    if (pred[i] < 0) fail(ErrorCode::InvariantViolation, "negative cluster id at row " + std::to_string(i));
    rows.push_back(i);
    max_pred = std::max(max_pred, pred[i]);
    max_truth = std::max(max_truth, truth[i]);
  }
  if (m.n_excluded > 0) spdlog::warn("{} rows without ground truth excluded from evaluation", m.n_excluded);
  if (rows.empty()) fail(ErrorCode::EmptyInput, "no rows with ground truth to evaluate");

  const auto dim = static_cast<std::size_t>(std::max(max_pred, max_truth) + 1);
  Mat counts(dim, dim);
  for (std::size_t i : rows) counts(static_cast<std::size_t>(pred[i]), static_cast<std::size_t>(truth[i])) += 1.0;
  m.permutation = hungarian_match(counts);

  std::size_t hit_old = 0, hit_new = 0;
  for (std::size_t i : rows) {
    const bool hit = m.permutation[static_cast<std::size_t>(pred[i])] == truth[i];
    if (std::find(old_classes.begin(), old_classes.end(), truth[i]) != old_classes.end()) {
      ++m.n_old;
      hit_old += hit;
    } else {
      ++m.n_new;
      hit_new += hit;
    }
  }
  const auto total = static_cast<double>(m.n_old + m.n_new);
  m.acc_all = static_cast<double>(hit_old + hit_new) / total;
  m.acc_old = m.n_old ? static_cast<double>(hit_old) / static_cast<double>(m.n_old) : 0.0;
  m.acc_new = m.n_new ? static_cast<double>(hit_new) / static_cast<double>(m.n_new) : 0.0;
  return m;
}

}  // namespace ctxgcd
