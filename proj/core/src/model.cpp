#include "cmmd/model.hpp"

#include "cmmd/errors.hpp"
#include "cmmd/init.hpp"
#include "cmmd/param_io.hpp"

namespace cmmd {

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&encoder.theta_t, &encoder.theta_v, &encoder.w_a, &router.w_r, &w_c};
  for (Parameter* p : shared.expert.parameters()) out.push_back(p);
  for (Expert& e : dpm.experts)
    for (Parameter* p : e.parameters()) out.push_back(p);
  for (Parameter* p : dynamics.parameters()) out.push_back(p);
  return out;
}

Model init_model(const TrainConfig& config) {
  config.validate();
  const ModelDims& d = config.dims;
  if (d.d_t == 0 || d.d_v == 0) throw ConfigError("init_model: modality dims are unresolved");
  Rng rng(derive_seed(config.seed, SeedPurpose::kInit));
  Model m;
  m.dims = d;
  m.encoder.theta_t = Parameter("theta_t", he_uniform(d.d_t, d.d_z, rng));
  m.encoder.theta_v = Parameter("theta_v", he_uniform(d.d_v, d.d_z, rng));
  m.encoder.w_a = Parameter("w_a", glorot_uniform(2 * d.d_z, d.d_z, rng));
  m.encoder.xi = config.xi;
  // Zero routing weights start the gate at r = 1/2.
  m.router.w_r = Parameter("w_r", Tensor({d.d_z, 1}));
  m.w_c = Parameter("w_c", glorot_uniform(d.d_e + d.d_env, 2, rng));
  m.shared = make_shared_expert(random_expert(d.d_z, d.r, d.d_e, d.d_g, rng), config.epsilon);
  m.dynamics = make_dynamics_params(d.d_e, d.d_env, d.d_h, rng);
  m.init.reset(d.d_e);
  m.dpm.neg_log_lambda = config.neg_log_lambda;
  m.dpm.max_expansions_per_event = config.max_expansions_per_event;
  if (config.use_dpm) {
    Expert first;
    first.disc_a = Parameter("disc_a", m.shared.expert.disc_a.value);
    first.disc_b = Parameter("disc_b", m.shared.expert.disc_b.value);
    first.gen_enc = Parameter("gen_enc", m.shared.expert.gen_enc.value);
    first.gen_dec = Parameter("gen_dec", m.shared.expert.gen_dec.value);
    first.created_at_event = 1;
    m.dpm.experts.push_back(std::move(first));
    m.dpm.counts.push_back(1.0);
  } else {
    append_random_expert(m, 1, config.seed);
  }
  return m;
}

void append_random_expert(Model& model, int event, std::uint64_t seed) {
  Rng rng(derive_seed(seed, SeedPurpose::kRoster, model.dpm.experts.size()));
  const ModelDims& d = model.dims;
  if (!model.dpm.experts.empty()) model.dpm.latest().set_frozen(true);
  Expert e = random_expert(d.d_z, d.r, d.d_e, d.d_g, rng);
  e.created_at_event = event;
  model.dpm.experts.push_back(std::move(e));
  model.dpm.counts.push_back(1.0);
}

Json model_to_json(const Model& m) {
  Json j;
  j["dims"] = {{"d_t", m.dims.d_t},     {"d_v", m.dims.d_v}, {"d_z", m.dims.d_z}, {"d_e", m.dims.d_e},
               {"d_env", m.dims.d_env}, {"d_g", m.dims.d_g}, {"d_h", m.dims.d_h}, {"r", m.dims.r}};
  j["steps"] = m.steps;
  j["encoder"] = {{"theta_t", parameter_to_json(m.encoder.theta_t)},
                  {"theta_v", parameter_to_json(m.encoder.theta_v)},
                  {"w_a", parameter_to_json(m.encoder.w_a)},
                  {"xi", m.encoder.xi}};
  j["router"] = parameter_to_json(m.router.w_r);
  j["classifier"] = parameter_to_json(m.w_c);
  j["shared"] = {{"expert", expert_to_json(m.shared.expert)},
                 {"shadow_a", tensor_to_json(m.shared.shadow_a)},
                 {"shadow_b", tensor_to_json(m.shared.shadow_b)},
                 {"epsilon", m.shared.epsilon}};
  Json experts = Json::array();
  for (const Expert& e : m.dpm.experts) experts.push_back(expert_to_json(e));
  j["dpm"] = {{"experts", experts},
              {"counts", m.dpm.counts},
              {"neg_log_lambda", m.dpm.neg_log_lambda},
              {"expansions_this_event", m.dpm.expansions_this_event},
              {"max_expansions_per_event", m.dpm.max_expansions_per_event}};
  j["dynamics"] = dynamics_to_json(m.dynamics);
  j["initial_state"] = initial_state_to_json(m.init);
  return j;
}

Model model_from_json(const Json& j) {
  Model m;
  const Json& d = j.at("dims");
  m.dims.d_t = d.at("d_t").get<std::size_t>();
  m.dims.d_v = d.at("d_v").get<std::size_t>();
  m.dims.d_z = d.at("d_z").get<std::size_t>();
  m.dims.d_e = d.at("d_e").get<std::size_t>();
  m.dims.d_env = d.at("d_env").get<std::size_t>();
  m.dims.d_g = d.at("d_g").get<std::size_t>();
  m.dims.d_h = d.at("d_h").get<std::size_t>();
  m.dims.r = d.at("r").get<std::size_t>();
  m.steps = j.at("steps").get<std::int64_t>();
  const Json& enc = j.at("encoder");
  m.encoder.theta_t = parameter_from_json(enc.at("theta_t"));
  m.encoder.theta_v = parameter_from_json(enc.at("theta_v"));
  m.encoder.w_a = parameter_from_json(enc.at("w_a"));
  m.encoder.xi = enc.at("xi").get<double>();
  m.router.w_r = parameter_from_json(j.at("router"));
  m.w_c = parameter_from_json(j.at("classifier"));
  const Json& sh = j.at("shared");
  m.shared.expert = expert_from_json(sh.at("expert"));
  m.shared.shadow_a = tensor_from_json(sh.at("shadow_a"));
  m.shared.shadow_b = tensor_from_json(sh.at("shadow_b"));
  m.shared.epsilon = sh.at("epsilon").get<double>();
  const Json& dpm = j.at("dpm");
  for (const Json& e : dpm.at("experts")) m.dpm.experts.push_back(expert_from_json(e));
  m.dpm.counts = dpm.at("counts").get<std::vector<double>>();
  m.dpm.neg_log_lambda = dpm.at("neg_log_lambda").get<double>();
  m.dpm.expansions_this_event = dpm.at("expansions_this_event").get<int>();
  m.dpm.max_expansions_per_event = dpm.at("max_expansions_per_event").get<int>();
  if (m.dpm.counts.size() != m.dpm.experts.size()) throw ValidationError("expert counts do not match the roster");
  m.dynamics = dynamics_from_json(j.at("dynamics"));
  m.init = initial_state_from_json(j.at("initial_state"));
  return m;
}

}  // namespace cmmd
