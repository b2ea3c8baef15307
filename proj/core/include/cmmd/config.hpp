#pragma once

#include <cstdint>
#include <string>

#include "cmmd/dopri5.hpp"
#include "cmmd/json_io.hpp"

namespace cmmd {

struct ModelDims {
  std::size_t d_t = 0;  // 0: taken from the stream
  std::size_t d_v = 0;
  std::size_t d_z = 8;
  std::size_t d_e = 8;
  std::size_t d_env = 8;
  std::size_t d_g = 4;
  std::size_t d_h = 16;
  std::size_t r = 4;

  void validate() const;
};

enum class ExpertSelection { kLatest, kMaxResponsibility };

struct TrainConfig {
  // Loss weights: total = L_VP + alpha L_CL + beta L_VG + gamma L_DM.
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 1.0;
  // -log(lambda), the new-expert prior cost.
  double neg_log_lambda = 1.0;
  double epsilon = 0.99;
  double xi = 0.1;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  int patience = 5;
  int max_epochs = 30;
  double validation_fraction = 0.1;
  double grad_clip = 5.0;
  bool use_dpm = true;
  bool use_shared_expert = true;
  bool use_env_feature = true;
  // Freezes the latest expert when its event ends, so later events can only
  // reuse it as is or spawn a new one.
  bool freeze_experts_at_event_end = true;
  int max_expansions_per_event = 1;
  // Roster size of the fixed-expert ablation.
  int fixed_experts = 4;
  ExpertSelection expert_selection = ExpertSelection::kLatest;
  // Time label for the test-only future event; 0 selects K + 1.
  double future_tau = 0.0;
  SolverConfig solver;
  std::uint64_t seed = 1;
  ModelDims dims;

  void validate() const;
  Json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static TrainConfig from_json(const Json& j);
  // Sets one top-level or dims.* key from a number or boolean; used by sweeps.
  void set_value(const std::string& key, double value);
};

const char* to_string(ExpertSelection s);

}  // namespace cmmd
