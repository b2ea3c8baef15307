#include "cmmd/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw InputError("metrics: no samples");
  if (scores.size() != labels.size()) throw ShapeError("metrics: score and label counts differ");
  for (int y : labels)
    if (y != 0 && y != 1) throw InputError("metrics: labels must be 0 or 1");
}

}  // namespace

ConfusionCounts confusion(std::span<const double> prob_fake, std::span<const int> labels) {
  check_inputs(prob_fake, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = prob_fake[i];
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("metrics: probability outside [0, 1]");
    const bool pred = p >= kDecisionThreshold;
    if (labels[i] == 1) {
      (pred ? c.tp : c.fn) += 1;
    } else {
      (pred ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

ClassificationMetrics classification_metrics(std::span<const double> prob_fake, std::span<const int> labels) {
  ClassificationMetrics m;
  m.counts = confusion(prob_fake, labels);
  const ConfusionCounts& c = m.counts;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.f1_fake = f1_score(c.tp, c.fp, c.fn);
  m.f1_real = f1_score(c.tn, c.fn, c.fp);
  m.macro_f1 = 0.5 * (m.f1_fake + m.f1_real);
  m.auc = roc_auc(prob_fake, labels);
  return m;
}

Json ClassificationMetrics::to_json() const {
  Json j;
  j["accuracy"] = accuracy;
  j["auc"] = auc;
  j["macro_f1"] = macro_f1;
  j["f1_real"] = f1_real;
  j["f1_fake"] = f1_fake;
  j["confusion"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}};
  return j;
}

ClassificationMetrics ClassificationMetrics::from_json(const Json& j) {
  ClassificationMetrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.auc = j.at("auc").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.f1_real = j.at("f1_real").get<double>();
  m.f1_fake = j.at("f1_fake").get<double>();
  const Json& c = j.at("confusion");
  m.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
              c.at("fn").get<std::size_t>()};
  return m;
}

ForgettingMatrix::ForgettingMatrix(std::size_t num_events, bool has_future)
    : cols_(num_events + (has_future ? 1 : 0)),
      cells_(num_events, std::vector<std::optional<double>>(num_events + (has_future ? 1 : 0))) {}

void ForgettingMatrix::set(std::size_t k, std::size_t j, double accuracy) {
  if (k < 1 || k > rows() || j < 1 || j > cols_) throw InputError("forgetting matrix index out of range");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw InputError("forgetting matrix entry outside [0, 1]");
  cells_[k - 1][j - 1] = accuracy;
}

std::optional<double> ForgettingMatrix::get(std::size_t k, std::size_t j) const {
  if (k < 1 || k > rows() || j < 1 || j > cols_) throw InputError("forgetting matrix index out of range");
  return cells_[k - 1][j - 1];
}

Json ForgettingMatrix::to_json() const {
  Json rows_json = Json::array();
  for (const auto& row : cells_) {
    Json r = Json::array();
    for (const auto& v : row) r.push_back(v ? Json(*v) : Json(nullptr));
    rows_json.push_back(std::move(r));
  }
  return rows_json;
}

ForgettingMatrix ForgettingMatrix::from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw InputError("forgetting matrix must be a non-empty array of rows");
  const std::size_t k = j.size();
  const std::size_t cols = j.at(0).size();
  if (cols != k && cols != k + 1) throw InputError("forgetting matrix must be K x K or K x (K+1)");
  ForgettingMatrix m(k, cols == k + 1);
  for (std::size_t r = 0; r < k; ++r) {
    if (j.at(r).size() != cols) throw InputError("forgetting matrix rows differ in length");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j.at(r).at(c).is_null()) m.set(r + 1, c + 1, j.at(r).at(c).get<double>());
    }
  }
  return m;
}

double forgetting_drop(const ForgettingMatrix& m, std::size_t j) {
  if (m.rows() < 2) throw InputError("forgetting_drop needs at least two rows");
  if (j < 1 || j > m.cols()) throw InputError("forgetting_drop: event out of range");
  std::optional<double> peak;
  for (std::size_t k = std::min(j, m.rows()); k <= m.rows(); ++k) {
    if (auto v = m.get(k, j)) peak = peak ? std::max(*peak, *v) : *v;
  }
  const auto last = m.get(m.rows(), j);
  if (!peak || !last) throw InputError("forgetting_drop: event " + std::to_string(j) + " was never evaluated");
  return *peak - *last;
}

}  // namespace cmmd
