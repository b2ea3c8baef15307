#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "cmmd/errors.hpp"
#include "cmmd/metrics.hpp"

namespace cmmd {
namespace {

TEST(ClassificationMetrics, AllCorrect) {
  const std::vector<double> p{0.9, 0.1, 0.7, 0.2};
  const std::vector<int> y{1, 0, 1, 0};
  const auto m = classification_metrics(p, y);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
}

TEST(ClassificationMetrics, PerfectRankingHasUnitAuc) {
  const std::vector<double> p{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_EQ(classification_metrics(p, y).auc, 1.0);
}

TEST(ClassificationMetrics, HandConfusionMatrix) {
  const std::vector<double> p{1, 1, 0, 0};
  const std::vector<int> y{1, 0, 1, 0};
  const auto m = classification_metrics(p, y);
  EXPECT_EQ(m.counts.tp, 1u);
  EXPECT_EQ(m.counts.fp, 1u);
  EXPECT_EQ(m.counts.fn, 1u);
  EXPECT_EQ(m.counts.tn, 1u);
  EXPECT_EQ(m.f1_fake, 0.5);
  EXPECT_EQ(m.f1_real, 0.5);
  EXPECT_EQ(m.accuracy, 0.5);
}

TEST(ClassificationMetrics, AbsentClassHasZeroF1) {
  const std::vector<double> p{0.1, 0.2};
  const std::vector<int> y{0, 0};
  const auto m = classification_metrics(p, y);
  EXPECT_EQ(m.f1_fake, 0.0);
  EXPECT_EQ(m.f1_real, 1.0);
  EXPECT_EQ(m.auc, 0.5);
}

TEST(ClassificationMetrics, EmptyAndInvalidInputs) {
  EXPECT_THROW(classification_metrics({}, {}), InputError);
  const std::vector<double> p{0.5};
  const std::vector<int> bad{2};
  EXPECT_THROW(classification_metrics(p, bad), InputError);
  const std::vector<double> out_of_range{1.5};
  const std::vector<int> y{1};
  EXPECT_THROW(classification_metrics(out_of_range, y), InputError);
}

TEST(ClassificationMetrics, MatchesBruteForceOracleOnRandomCases) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so that ties and threshold hits occur.
      p[i] = static_cast<double>(rng() % 11) / 10.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    const auto m = classification_metrics(p, y);
    const auto o = testing::brute_metrics(p, y);
    EXPECT_EQ(m.counts.tp, o.tp);
    EXPECT_EQ(m.counts.fp, o.fp);
    EXPECT_EQ(m.counts.tn, o.tn);
    EXPECT_EQ(m.counts.fn, o.fn);
    EXPECT_EQ(m.accuracy, o.accuracy);
    EXPECT_DOUBLE_EQ(m.f1_fake, o.f1_fake);
    EXPECT_DOUBLE_EQ(m.f1_real, o.f1_real);
    EXPECT_DOUBLE_EQ(m.macro_f1, o.macro_f1);
    EXPECT_DOUBLE_EQ(m.auc, o.auc);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(30), t(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = std::round(u(rng) * 8) / 8;
      t[i] = std::exp(3 * s[i]) - 7;
      y[i] = u(rng) < 0.5;
    }
    EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
  }
}

TEST(ClassificationMetrics, MacroF1SymmetricUnderClassSwap) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(25), q(25);
    std::vector<int> y(25), z(25);
    for (std::size_t i = 0; i < 25; ++i) {
      const int hard = static_cast<int>(rng() % 2);
      p[i] = hard;
      q[i] = 1 - hard;
      y[i] = static_cast<int>(rng() % 2);
      z[i] = 1 - y[i];
    }
    EXPECT_DOUBLE_EQ(classification_metrics(p, y).macro_f1, classification_metrics(q, z).macro_f1);
  }
}

ForgettingMatrix column(const std::vector<double>& col) {
  ForgettingMatrix m(col.size(), false);
  for (std::size_t k = 0; k < col.size(); ++k) m.set(k + 1, 1, col[k]);
  return m;
}

TEST(ForgettingDrop, ConstantColumnIsZero) { EXPECT_EQ(forgetting_drop(column({0.8, 0.8, 0.8}), 1), 0.0); }

TEST(ForgettingDrop, PeakMinusLast) { EXPECT_NEAR(forgetting_drop(column({0.9, 0.85, 0.8}), 1), 0.10, 1e-15); }

TEST(ForgettingDrop, MonotoneIncreasingIsZero) { EXPECT_EQ(forgetting_drop(column({0.6, 0.7, 0.8}), 1), 0.0); }

TEST(ForgettingDrop, Errors) {
  EXPECT_THROW(forgetting_drop(column({0.5}), 1), InputError);
  ForgettingMatrix m(3, false);
  m.set(1, 1, 0.5);
  EXPECT_THROW(forgetting_drop(m, 2), InputError);
}

TEST(ForgettingMatrix, JsonRoundTripKeepsMissingCells) {
  ForgettingMatrix m(2, true);
  m.set(1, 1, 0.75);
  m.set(1, 3, 0.5);
  m.set(2, 1, 0.625);
  m.set(2, 2, 1.0);
  const ForgettingMatrix back = ForgettingMatrix::from_json(m.to_json());
  EXPECT_EQ(back.rows(), 2u);
  EXPECT_EQ(back.cols(), 3u);
  EXPECT_FALSE(back.get(1, 2).has_value());
  EXPECT_EQ(back.get(2, 1), 0.625);
  EXPECT_EQ(dump_json(back.to_json()), dump_json(m.to_json()));
}

}  // namespace
}  // namespace cmmd
