#include "cmmd/moe.hpp"

#include <algorithm>
#include <cmath>

#include "cmmd/errors.hpp"
#include "cmmd/init.hpp"
#include "cmmd/param_io.hpp"

namespace cmmd {

void Expert::set_frozen(bool value) {
  frozen = value;
  for (Parameter* p : parameters()) p->trainable = !value;
}

std::vector<Parameter*> Expert::parameters() { return {&disc_a, &disc_b, &gen_enc, &gen_dec}; }

Expert random_expert(std::size_t d_z, std::size_t r, std::size_t d_e, std::size_t d_g, Rng& rng) {
  if (!(r < std::min(d_z, d_e))) throw ConfigError("expert rank must be below min(d_z, d_e)");
  Expert e;
  e.disc_a = Parameter("disc_a", glorot_uniform(d_z, r, rng));
  e.disc_b = Parameter("disc_b", glorot_uniform(r, d_e, rng));
  e.gen_enc = Parameter("gen_enc", glorot_uniform(d_z, d_g, rng));
  e.gen_dec = Parameter("gen_dec", glorot_uniform(d_g, d_z, rng));
  return e;
}

SharedExpert make_shared_expert(Expert expert, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("ema epsilon must lie in [0, 1]");
  SharedExpert s;
  s.shadow_a = expert.disc_a.value;
  s.shadow_b = expert.disc_b.value;
  s.expert = std::move(expert);
  s.epsilon = epsilon;
  return s;
}

Expert& DpmState::latest() {
  if (experts.empty()) throw StateError("no event-specific expert exists");
  return experts.back();
}

const Expert& DpmState::latest() const {
  if (experts.empty()) throw StateError("no event-specific expert exists");
  return experts.back();
}

Var disc_feature(Var z, Var a, Var b) { return matmul(matmul(z, a), b); }

Var disc_feature(Tape& tape, Expert& expert, Var z) {
  return disc_feature(z, tape.param(expert.disc_a), tape.param(expert.disc_b));
}

Tensor disc_feature(const Tensor& z, const Tensor& a, const Tensor& b) { return matmul(matmul(z, a), b); }

Var gen_score(Var z, Var enc, Var dec) {
  const Var diff = sub(matmul(matmul(z, enc), dec), z);
  return scale(sum(square(diff)), 1.0 / static_cast<double>(z.rows()));
}

Var gen_score(Tape& tape, Expert& expert, Var z) {
  return gen_score(z, tape.param(expert.gen_enc), tape.param(expert.gen_dec));
}

double gen_score(const Tensor& z, const Expert& expert) {
  const Tensor diff = matmul(matmul(z, expert.gen_enc.value), expert.gen_dec.value) - z;
  return squared_norm(diff) / static_cast<double>(z.rows());
}

double expert_ce(const Tensor& z, std::span<const int> labels, const Tensor& env, const Tensor& a,
                 const Tensor& b, const Tensor& w_c) {
  Tape tape(GradMode::kDisabled);
  const Tensor logits = matmul(concat_cols(disc_feature(z, a, b), env), w_c);
  return cross_entropy(tape.constant(logits), labels).value().item();
}

std::vector<double> responsibility_scores(const Tensor& z, std::span<const int> labels, const Tensor& env,
                                          const DpmState& state, const SharedExpert& shared,
                                          const Tensor& w_c) {
  if (z.rows() < 1) throw InputError("responsibility_scores: empty batch");
  if (state.counts.size() != state.experts.size()) throw StateError("expert counts out of sync with roster");
  std::vector<double> scores;
  scores.reserve(state.experts.size() + 1);
  for (std::size_t m = 0; m < state.experts.size(); ++m) {
    const Expert& e = state.experts[m];
    if (!(state.counts[m] > 0.0)) throw StateError("expert count must be positive");
    scores.push_back(-std::log(state.counts[m]) + expert_ce(z, labels, env, e.disc_a.value, e.disc_b.value, w_c) +
                     gen_score(z, e));
  }
  scores.push_back(state.neg_log_lambda + expert_ce(z, labels, env, shared.shadow_a, shared.shadow_b, w_c) +
                   gen_score(z, shared.expert));
  return scores;
}

std::vector<double> responsibilities(std::span<const double> scores) {
  std::vector<double> neg(scores.begin(), scores.end());
  for (double& v : neg) v = -v;
  return softmax(neg);
}

ExpansionDecision maybe_expand(std::span<const double> scores, DpmState& state, const SharedExpert& shared,
                               int current_event) {
  const std::size_t m = state.experts.size();
  if (scores.size() != m + 1) throw InputError("maybe_expand: expected one score per expert plus the candidate");
  ExpansionDecision d;
  d.responsibilities = responsibilities(scores);
  const auto best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
  for (std::size_t i = 0; i < m; ++i) state.counts[i] += d.responsibilities[i];
  d.expert_index = best;
  if (best == m && state.expansions_this_event < state.max_expansions_per_event) {
    if (!state.experts.empty()) state.latest().set_frozen(true);
    Expert fresh;
    fresh.disc_a = Parameter("disc_a", shared.shadow_a);
    fresh.disc_b = Parameter("disc_b", shared.shadow_b);
    fresh.gen_enc = Parameter("gen_enc", shared.expert.gen_enc.value);
    fresh.gen_dec = Parameter("gen_dec", shared.expert.gen_dec.value);
    fresh.created_at_event = current_event;
    state.experts.push_back(std::move(fresh));
    state.counts.push_back(d.responsibilities[m]);
    state.expansions_this_event += 1;
    d.created = true;
  } else if (best == m) {
    // Cap reached: the batch stays with the latest expert.
    d.expert_index = m - 1;
  }
  return d;
}

Var route(Var z, Var w_r, Var latest_a, Var latest_b, Var shared_a, Var shared_b) {
  const Var r = sigmoid(matmul(z, w_r));
  const Var one_minus_r = add_scalar(scale(r, -1.0), 1.0);
  return add(mul_col(disc_feature(z, latest_a, latest_b), r), mul_col(disc_feature(z, shared_a, shared_b), one_minus_r));
}

Var route(Tape& tape, Var z, RouterParams& router, Expert& latest, SharedExpert& shared) {
  return route(z, tape.param(router.w_r), tape.param(latest.disc_a), tape.param(latest.disc_b),
               tape.param(shared.expert.disc_a), tape.param(shared.expert.disc_b));
}

Tensor route_eval(const Tensor& z, const RouterParams& router, const Expert& latest, const SharedExpert& shared) {
  Tape tape(GradMode::kDisabled);
  return route(tape.constant(z), tape.constant(router.w_r.value), tape.constant(latest.disc_a.value),
               tape.constant(latest.disc_b.value), tape.constant(shared.shadow_a), tape.constant(shared.shadow_b))
      .value();
}

void ema_update(SharedExpert& shared) {
  const double eps = shared.epsilon;
  if (eps == 1.0) return;
  auto blend = [eps](Tensor& shadow, const Tensor& live) {
    if (!shadow.same_shape(live)) throw ShapeError("ema_update: shadow shape differs from trainable weights");
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = eps * shadow[i] + (1.0 - eps) * live[i];
  };
  blend(shared.shadow_a, shared.expert.disc_a.value);
  blend(shared.shadow_b, shared.expert.disc_b.value);
}

Json expert_to_json(const Expert& e) {
  Json j;
  j["frozen"] = e.frozen;
  j["created_at_event"] = e.created_at_event;
  j["disc_a"] = parameter_to_json(e.disc_a);
  j["disc_b"] = parameter_to_json(e.disc_b);
  j["gen_enc"] = parameter_to_json(e.gen_enc);
  j["gen_dec"] = parameter_to_json(e.gen_dec);
  return j;
}

Expert expert_from_json(const Json& j) {
  Expert e;
  e.disc_a = parameter_from_json(j.at("disc_a"));
  e.disc_b = parameter_from_json(j.at("disc_b"));
  e.gen_enc = parameter_from_json(j.at("gen_enc"));
  e.gen_dec = parameter_from_json(j.at("gen_dec"));
  e.created_at_event = j.at("created_at_event").get<int>();
  e.set_frozen(j.at("frozen").get<bool>());
  return e;
}

}  // namespace cmmd
