#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cmmd/json_io.hpp"

namespace cmmd {

// Fake (label 1) is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1_real = 0.0;
  double f1_fake = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.5;
  ConfusionCounts counts;

  Json to_json() const;
  static ClassificationMetrics from_json(const Json& j);
};

constexpr double kDecisionThreshold = 0.5;

ConfusionCounts confusion(std::span<const double> prob_fake, std::span<const int> labels);

// F1 with the 0/0 case reported as 0.
double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);

// Mann-Whitney rank statistic; ties count 1/2. Returns 0.5 when only one
// class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

ClassificationMetrics classification_metrics(std::span<const double> prob_fake, std::span<const int> labels);

// A[k][j]: accuracy on event j's test split after training through event k.
// Rows are training events 1..K, columns are test events 1..K plus an
// optional future column.
class ForgettingMatrix {
 public:
  ForgettingMatrix() = default;
  ForgettingMatrix(std::size_t num_events, bool has_future);

  std::size_t rows() const { return cells_.size(); }
  std::size_t cols() const { return cols_; }

  // One-based indices, matching event numbering.
  void set(std::size_t k, std::size_t j, double accuracy);
  std::optional<double> get(std::size_t k, std::size_t j) const;

  Json to_json() const;
  static ForgettingMatrix from_json(const Json& j);

 private:
  std::size_t cols_ = 0;
  std::vector<std::vector<std::optional<double>>> cells_;
};

// Peak accuracy on event j over rows k >= j minus the final row's accuracy.
double forgetting_drop(const ForgettingMatrix& m, std::size_t j);

}  // namespace cmmd
