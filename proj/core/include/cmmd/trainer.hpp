#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmmd/config.hpp"
#include "cmmd/metrics.hpp"
#include "cmmd/model.hpp"
#include "cmmd/stream.hpp"

namespace cmmd {

struct Batch {
  Tensor xt;  // n x d_t
  Tensor xv;  // n x d_v
  std::vector<int> y;
  double tau = 1.0;  // temporal label shared by the batch

  std::size_t size() const { return y.size(); }
};

Batch make_batch(std::span<const Sample* const> samples, double tau);
Batch make_batch(std::span<const Sample* const> samples, std::span<const std::size_t> rows, double tau);

struct LossBreakdown {
  double vp = 0.0;
  double cl = 0.0;
  double vg = 0.0;
  double dm = 0.0;
  double total = 0.0;
  bool dm_active = false;
};

struct LossVars {
  Var vp, cl, vg, dm, total;
  bool dm_active = false;
  LossBreakdown values() const;
};

// Builds the full objective on the tape for a batch, given the environment
// feature rows (n x d_env) drawn beforehand. Side-effect free on the model;
// expansion and initial-state accumulation happen in train_step.
LossVars compose_loss(Model& model, const Batch& batch, const TrainConfig& config, Tape& tape, const Tensor& env);

struct ExpansionRecord {
  int event = 0;
  int epoch = 0;
  int batch = 0;
  std::vector<double> scores;
  bool created = false;
};

struct StepReport {
  LossBreakdown loss;
  std::optional<ExpansionRecord> expansion;
};

// Fused features z (no gradient).
Tensor fused_features(const Model& model, const Tensor& xt, const Tensor& xv);
// Routed features e. Training mode reads the trainable shared weights, which
// is what the dynamics targets see; evaluation mode reads the shadow.
Tensor routed_features(const Model& model, const Tensor& xt, const Tensor& xv, const TrainConfig& config,
                       bool eval_mode, const Expert* expert = nullptr);

// Environment feature rows for a batch at time tau: zeros when the feature is
// disabled or the initial state is not yet valid.
Tensor env_feature(const Model& model, const TrainConfig& config, double tau, std::size_t rows, Rng& rng);

// One optimizer step: initial-state accumulation (first event only),
// environment draw, responsibility + expansion, loss, backward, clipping,
// Adam, EMA.
StepReport train_step(Model& model, const Batch& batch, const TrainConfig& config, Rng& noise_rng, int event,
                      int epoch, int batch_index);

// Probability of the fake class for every sample, evaluated at time tau.
std::vector<double> predict_proba(const Model& model, std::span<const Sample* const> samples,
                                  const TrainConfig& config, double tau, Rng& rng);
ClassificationMetrics evaluate(const Model& model, std::span<const Sample* const> samples,
                               const TrainConfig& config, double tau, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown mean_loss;
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
};

struct EventHistory {
  int event = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool early_stopped = false;
  std::vector<ExpansionRecord> expansions;
};

// Splits off a validation subset, trains until validation macro-F1 stops
// improving for `patience` epochs or max_epochs is reached, then restores
// the best epoch's model.
EventHistory train_event(Model& model, const EventSplit& data, const TrainConfig& config);

// Recomputes the initial state from all fake-class training rows of the
// first event and freezes it.
void finalize_initial_state(Model& model, const EventSplit& first_event, const TrainConfig& config);

struct RunResult {
  Model model;
  TrainConfig config;
  Json log;
  Json timing;
};

// Resolves d_t / d_v from the stream and checks them against the config.
TrainConfig resolve_config(TrainConfig config, const StreamManifest& manifest);

RunResult train_continual(const StreamData& stream, const TrainConfig& config);

Json checkpoint_to_json(const Model& model, const TrainConfig& config);
std::pair<Model, TrainConfig> checkpoint_from_json(const Json& j);

// Forgetting matrix and per-event metrics of a trained model, recomputed
// from the stream; matches the matrix logged by train_continual for the last
// row.
Json evaluate_model(const Model& model, const TrainConfig& config, const StreamData& stream);

enum class Variant { kFull, kNoDpm, kNoShared, kNoEnv };
const char* to_string(Variant v);
TrainConfig apply_variant(TrainConfig config, Variant v);
inline constexpr Variant kAllVariants[] = {Variant::kFull, Variant::kNoDpm, Variant::kNoShared, Variant::kNoEnv};

struct AblationRun {
  Variant variant;
  std::uint64_t seed;
  RunResult result;
};

std::vector<AblationRun> run_ablations(const StreamData& stream, const TrainConfig& config,
                                       std::span<const std::uint64_t> seeds);

}  // namespace cmmd
