#include "cmmd/config.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

void reject_unknown(const Json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown key '" + where + (where.empty() ? "" : ".") + it.key() + "'");
    }
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("field '" + where + key + "' has the wrong type");
  }
}

}  // namespace

const char* to_string(ExpertSelection s) {
  return s == ExpertSelection::kLatest ? "latest" : "max_responsibility";
}

void ModelDims::validate() const {
  if (d_z < 1 || d_e < 1 || d_env < 1 || d_g < 1 || d_h < 1 || r < 1) {
    throw ConfigError("dims: all dimensions must be positive");
  }
  if (!(r < std::min(d_z, d_e))) throw ConfigError("dims.r must be below min(d_z, d_e)");
  if (d_env > d_h) throw ConfigError("dims.d_h must be at least dims.d_env");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (!std::isfinite(neg_log_lambda)) throw ConfigError("neg_log_lambda must be finite");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (!(xi > 0.0)) throw ConfigError("xi must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (max_expansions_per_event < 0) throw ConfigError("max_expansions_per_event must be non-negative");
  if (fixed_experts < 1) throw ConfigError("fixed_experts must be at least 1");
  if (future_tau < 0.0) throw ConfigError("future_tau must be non-negative");
  solver.validate();
  dims.validate();
}

Json TrainConfig::to_json() const {
  Json j;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["gamma"] = gamma;
  j["neg_log_lambda"] = neg_log_lambda;
  j["epsilon"] = epsilon;
  j["xi"] = xi;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["patience"] = patience;
  j["max_epochs"] = max_epochs;
  j["validation_fraction"] = validation_fraction;
  j["grad_clip"] = grad_clip;
  j["use_dpm"] = use_dpm;
  j["use_shared_expert"] = use_shared_expert;
  j["use_env_feature"] = use_env_feature;
  j["freeze_experts_at_event_end"] = freeze_experts_at_event_end;
  j["max_expansions_per_event"] = max_expansions_per_event;
  j["fixed_experts"] = fixed_experts;
  j["expert_selection"] = to_string(expert_selection);
  j["future_tau"] = future_tau;
  j["solver"] = {{"rtol", solver.rtol}, {"atol", solver.atol}, {"max_steps", solver.max_steps}};
  j["seed"] = seed;
  j["dims"] = {{"d_t", dims.d_t}, {"d_v", dims.d_v}, {"d_z", dims.d_z},     {"d_e", dims.d_e},
               {"d_env", dims.d_env}, {"d_g", dims.d_g}, {"d_h", dims.d_h}, {"r", dims.r}};
  return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
  reject_unknown(j,
                 {"alpha", "beta", "gamma", "neg_log_lambda", "epsilon", "xi", "batch_size", "learning_rate",
                  "patience", "max_epochs", "validation_fraction", "grad_clip", "use_dpm", "use_shared_expert",
                  "use_env_feature", "freeze_experts_at_event_end", "max_expansions_per_event", "fixed_experts",
                  "expert_selection", "future_tau", "solver", "seed", "dims"},
                 "");
  TrainConfig c;
  read(j, "alpha", c.alpha, "");
  read(j, "beta", c.beta, "");
  read(j, "gamma", c.gamma, "");
  read(j, "neg_log_lambda", c.neg_log_lambda, "");
  read(j, "epsilon", c.epsilon, "");
  read(j, "xi", c.xi, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "learning_rate", c.learning_rate, "");
  read(j, "patience", c.patience, "");
  read(j, "max_epochs", c.max_epochs, "");
  read(j, "validation_fraction", c.validation_fraction, "");
  read(j, "grad_clip", c.grad_clip, "");
  read(j, "use_dpm", c.use_dpm, "");
  read(j, "use_shared_expert", c.use_shared_expert, "");
  read(j, "use_env_feature", c.use_env_feature, "");
  read(j, "freeze_experts_at_event_end", c.freeze_experts_at_event_end, "");
  read(j, "max_expansions_per_event", c.max_expansions_per_event, "");
  read(j, "fixed_experts", c.fixed_experts, "");
  read(j, "future_tau", c.future_tau, "");
  read(j, "seed", c.seed, "");
  if (j.contains("expert_selection")) {
    std::string mode;
    read(j, "expert_selection", mode, "");
    if (mode == "latest") {
      c.expert_selection = ExpertSelection::kLatest;
    } else if (mode == "max_responsibility") {
      c.expert_selection = ExpertSelection::kMaxResponsibility;
    } else {
      throw ConfigError("field 'expert_selection' must be 'latest' or 'max_responsibility'");
    }
  }
  if (j.contains("solver")) {
    const Json& s = j.at("solver");
    reject_unknown(s, {"rtol", "atol", "max_steps"}, "solver");
    read(s, "rtol", c.solver.rtol, "solver.");
    read(s, "atol", c.solver.atol, "solver.");
    read(s, "max_steps", c.solver.max_steps, "solver.");
  }
  if (j.contains("dims")) {
    const Json& d = j.at("dims");
    reject_unknown(d, {"d_t", "d_v", "d_z", "d_e", "d_env", "d_g", "d_h", "r"}, "dims");
    read(d, "d_t", c.dims.d_t, "dims.");
    read(d, "d_v", c.dims.d_v, "dims.");
    read(d, "d_z", c.dims.d_z, "dims.");
    read(d, "d_e", c.dims.d_e, "dims.");
    read(d, "d_env", c.dims.d_env, "dims.");
    read(d, "d_g", c.dims.d_g, "dims.");
    read(d, "d_h", c.dims.d_h, "dims.");
    read(d, "r", c.dims.r, "dims.");
  }
  c.validate();
  return c;
}

void TrainConfig::set_value(const std::string& key, double value) {
  Json j = to_json();
  const auto dot = key.find('.');
  Json* slot = nullptr;
  if (dot == std::string::npos) {
    if (j.contains(key)) slot = &j[key];
  } else {
    const std::string head = key.substr(0, dot), tail = key.substr(dot + 1);
    if (j.contains(head) && j[head].is_object() && j[head].contains(tail)) slot = &j[head][tail];
  }
  if (!slot || slot->is_string() || slot->is_object()) throw ConfigError("unknown numeric config key '" + key + "'");
  if (slot->is_boolean()) {
    *slot = value != 0.0;
  } else if (slot->is_number_integer() || slot->is_number_unsigned()) {
    if (value != std::floor(value)) throw ConfigError("config key '" + key + "' takes an integer");
    *slot = static_cast<std::int64_t>(value);
  } else {
    *slot = value;
  }
  *this = from_json(j);
}

}  // namespace cmmd
