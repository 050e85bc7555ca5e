#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "ctxgcd/eval.hpp"
#include "oracles.hpp"

using namespace ctxgcd;

namespace {

double matched_value(const Mat& counts, const std::vector<int>& match) {
  double s = 0.0;
  for (std::size_t r = 0; r < match.size(); ++r)
    if (match[r] >= 0) s += counts(r, static_cast<std::size_t>(match[r]));
  return s;
}

bool injective(const std::vector<int>& match) {
  std::set<int> seen;
  for (int c : match)
    if (c >= 0 && !seen.insert(c).second) return false;
  return true;
}

}  // namespace

TEST(Hungarian, IdentityContingency) {
  Mat c(4, 4);
  for (std::size_t i = 0; i < 4; ++i) c(i, i) = 5.0 + static_cast<double>(i);
  EXPECT_EQ(hungarian_match(c), (std::vector<int>{0, 1, 2, 3}));
}

TEST(Hungarian, SwapExample) {
  const std::vector<int> pred{0, 0, 1, 1, 2}, truth{1, 1, 0, 0, 2};
  Mat c(3, 3);
  for (std::size_t i = 0; i < pred.size(); ++i) c(pred[i], truth[i]) += 1.0;
  EXPECT_EQ(hungarian_match(c), (std::vector<int>{1, 0, 2}));
  EXPECT_DOUBLE_EQ(gcd_accuracy(pred, truth, {0}).acc_all, 1.0);
}

TEST(Hungarian, RectangularPadding) {
  Mat wide(2, 4);
  wide(0, 3) = 7;
  wide(1, 3) = 2;
  wide(1, 1) = 1;
  const auto m = hungarian_match(wide);
  EXPECT_EQ(m, (std::vector<int>{3, 1}));

  Mat tall(3, 1);
  tall(2, 0) = 4;
  const auto t = hungarian_match(tall);
  EXPECT_EQ(t[2], 0);
  EXPECT_EQ(t[0], -1);
  EXPECT_EQ(t[1], -1);
}

TEST(Hungarian, EmptyInput) {
  try {
    hungarian_match(Mat(0, 0));
    FAIL();
  } catch (const GcdError& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
}

TEST(Hungarian, MatchesBruteForceOnRandomTables) {
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.below(7);
    const std::size_t n = 1 + rng.below(50);
    Mat c(k, k);
    for (std::size_t i = 0; i < n; ++i) c(rng.below(k), rng.below(k)) += 1.0;
    const auto m = hungarian_match(c);
    ASSERT_TRUE(injective(m));
    EXPECT_EQ(matched_value(c, m), oracle::best_assignment_value(c)) << "trial " << t;
  }
}

TEST(GcdAccuracy, WorkedExample) {
  const GcdMetrics m = gcd_accuracy({0, 1, 1}, {0, 0, 1}, {0});
  EXPECT_NEAR(m.acc_all, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.acc_old, 0.5, 1e-15);
  EXPECT_NEAR(m.acc_new, 1.0, 1e-15);
  EXPECT_EQ(m.n_old, 2u);
  EXPECT_EQ(m.n_new, 1u);
}

TEST(GcdAccuracy, PerfectAndRelabeledPredictions) {
  const std::vector<int> truth{0, 1, 2, 3, 3, 2, 1, 0};
  const GcdMetrics p = gcd_accuracy(truth, truth, {0, 1});
  EXPECT_EQ(p.acc_all, 1.0);
  EXPECT_EQ(p.acc_old, 1.0);
  EXPECT_EQ(p.acc_new, 1.0);
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> relabeled;
  for (int y : truth) relabeled.push_back(perm[static_cast<std::size_t>(y)]);
  const GcdMetrics r = gcd_accuracy(relabeled, truth, {0, 1});
  EXPECT_EQ(r.acc_all, 1.0);
  EXPECT_EQ(r.acc_old, 1.0);
  EXPECT_EQ(r.acc_new, 1.0);
}

TEST(GcdAccuracy, MatchesEnumerationAndIsRelabelInvariant) {
  Rng rng(22);
  int compared_splits = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(k));
      pred[i] = rng.bernoulli(0.6) ? truth[i] : static_cast<int>(rng.below(k));
    }
    std::vector<int> old_ids;
    std::set<int> old_set;
    for (int c = 0; c < static_cast<int>(k) / 2; ++c) {
      old_ids.push_back(c);
      old_set.insert(c);
    }
    const GcdMetrics m = gcd_accuracy(pred, truth, old_ids);
    const oracle::Accuracy ref = oracle::accuracy(pred, truth, old_set);
    EXPECT_NEAR(m.acc_all, ref.all, 1e-15) << "trial " << t;
    if (!ref.splits_ambiguous) {
      ++compared_splits;
      EXPECT_NEAR(m.acc_old, ref.old_acc, 1e-15);
      EXPECT_NEAR(m.acc_new, ref.new_acc, 1e-15);
    }
    const double total = static_cast<double>(m.n_old + m.n_new);
    EXPECT_NEAR(m.acc_all, (m.n_old * m.acc_old + m.n_new * m.acc_new) / total, 1e-12);

    // relabeling predicted cluster ids leaves acc_all exactly unchanged
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = k; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<int> relabeled(n);
    for (std::size_t i = 0; i < n; ++i) relabeled[i] = static_cast<int>(perm[static_cast<std::size_t>(pred[i])]);
    EXPECT_EQ(gcd_accuracy(relabeled, truth, old_ids).acc_all, m.acc_all);
  }
  EXPECT_GT(compared_splits, 500);
}

TEST(GcdAccuracy, PermutationIsInjectiveOnUsedClusters) {
  const GcdMetrics m = gcd_accuracy({0, 0, 1, 2, 2, 2}, {1, 1, 1, 0, 0, 2}, {0});
  EXPECT_TRUE(injective(m.permutation));
  EXPECT_EQ(m.permutation[0], 1);
  EXPECT_EQ(m.permutation[2], 0);
}

TEST(GcdAccuracy, EmptySplitReportsZero) {
  const GcdMetrics m = gcd_accuracy({0, 1}, {0, 1}, {});
  EXPECT_EQ(m.n_old, 0u);
  EXPECT_EQ(m.acc_old, 0.0);
  EXPECT_EQ(m.acc_new, 1.0);
}

TEST(GcdAccuracy, ExcludesRowsWithoutGroundTruth) {
  const GcdMetrics m = gcd_accuracy({0, 1, 1, 0}, {0, 0, 1, -1}, {0});
  EXPECT_EQ(m.n_excluded, 1u);
  EXPECT_NEAR(m.acc_all, 2.0 / 3.0, 1e-15);
}

TEST(GcdAccuracy, Errors) {
  try {
    gcd_accuracy({0, 1}, {0}, {0});
    FAIL();
  } catch (const GcdError& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  try {
    gcd_accuracy({0}, {-1}, {0});
    FAIL();
  } catch (const GcdError& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
}

TEST(GcdMetrics, Serialization) {
  const GcdMetrics m = gcd_accuracy({0, 1, 1}, {0, 0, 1}, {0});
  const auto j = m.to_json();
  EXPECT_EQ(j.at("n_old"), 2);
  EXPECT_EQ(GcdMetrics::csv_header(), "all,old,new,n_old,n_new");
  EXPECT_EQ(m.csv_row().substr(m.csv_row().rfind(',') + 1), "1");
}
