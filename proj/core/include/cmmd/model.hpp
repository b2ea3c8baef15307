#pragma once

#include <cstdint>
#include <vector>

#include "cmmd/config.hpp"
#include "cmmd/dynamics.hpp"
#include "cmmd/encoder.hpp"
#include "cmmd/moe.hpp"

namespace cmmd {

// Complete learner state. A value type: copying it snapshots every
// parameter together with its optimizer moments.
struct Model {
  ModelDims dims;
  EncoderParams encoder;
  RouterParams router;
  Parameter w_c;  // (d_e + d_env) x 2
  SharedExpert shared;
  DpmState dpm;
  DynamicsParams dynamics;
  InitialState init;
  std::int64_t steps = 0;

  std::vector<Parameter*> parameters();
};

// Dims must be fully resolved (d_t and d_v nonzero). The first
// event-specific expert starts as a copy of the shared expert with count 1,
// unless the fixed-roster ablation is configured.
Model init_model(const TrainConfig& config);

// Adds the next expert of the fixed-roster ablation, freezing the previous one.
void append_random_expert(Model& model, int event, std::uint64_t seed);

Json model_to_json(const Model& m);
Model model_from_json(const Json& j);

}  // namespace cmmd
