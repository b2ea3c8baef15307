#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cmmd/autodiff.hpp"
#include "cmmd/json_io.hpp"
#include "cmmd/rng.hpp"

namespace cmmd {

// Low-rank discriminator A*B plus a linear autoencoder scored by
// reconstruction.
struct Expert {
  Parameter disc_a;   // d_z x r
  Parameter disc_b;   // r x d_e
  Parameter gen_enc;  // d_z x d_g
  Parameter gen_dec;  // d_g x d_z
  bool frozen = false;
  int created_at_event = 0;

  void set_frozen(bool value);
  std::vector<Parameter*> parameters();
};

Expert random_expert(std::size_t d_z, std::size_t r, std::size_t d_e, std::size_t d_g, Rng& rng);

struct SharedExpert {
  Expert expert;
  Tensor shadow_a;
  Tensor shadow_b;
  double epsilon = 0.99;
};

SharedExpert make_shared_expert(Expert expert, double epsilon);

struct DpmState {
  std::vector<Expert> experts;
  std::vector<double> counts;
  double neg_log_lambda = 1.0;
  int expansions_this_event = 0;
  int max_expansions_per_event = 1;

  Expert& latest();
  const Expert& latest() const;
};

struct RouterParams {
  Parameter w_r;  // d_z x 1
};

Var disc_feature(Var z, Var a, Var b);
Var disc_feature(Tape& tape, Expert& expert, Var z);
Tensor disc_feature(const Tensor& z, const Tensor& a, const Tensor& b);

// Mean over rows of |z * enc * dec - z|^2.
Var gen_score(Var z, Var enc, Var dec);
Var gen_score(Tape& tape, Expert& expert, Var z);
double gen_score(const Tensor& z, const Expert& expert);

// Cross-entropy of the classifier on [z*A*B | env] for one candidate
// discriminator, evaluated without gradients.
double expert_ce(const Tensor& z, std::span<const int> labels, const Tensor& env, const Tensor& a,
                 const Tensor& b, const Tensor& w_c);

// Negative log responsibilities, one per existing expert followed by the
// new-expert candidate (scored with the shared shadow discriminator and the
// shared generator).
std::vector<double> responsibility_scores(const Tensor& z, std::span<const int> labels, const Tensor& env,
                                          const DpmState& state, const SharedExpert& shared,
                                          const Tensor& w_c);

// Normalized responsibilities softmax(-scores).
std::vector<double> responsibilities(std::span<const double> scores);

struct ExpansionDecision {
  bool created = false;
  std::size_t expert_index = 0;  // argmin over existing experts, or the new one
  std::vector<double> responsibilities;
};

// Adds softmax(-scores) mass to the existing counts. When the candidate has
// the strictly smallest score and the per-event cap allows, appends a clone
// of the shared shadow, freezes the previous latest expert, and seeds the new
// count with the candidate's mass.
ExpansionDecision maybe_expand(std::span<const double> scores, DpmState& state, const SharedExpert& shared,
                               int current_event);

// Gate r = sigmoid(z * w_r); e = r * (z A_l B_l) + (1 - r) * (z A_s B_s).
Var route(Var z, Var w_r, Var latest_a, Var latest_b, Var shared_a, Var shared_b);
// Training mode: the shared branch reads the trainable shared weights.
Var route(Tape& tape, Var z, RouterParams& router, Expert& latest, SharedExpert& shared);
// Evaluation mode: the shared branch reads the shadow copy.
Tensor route_eval(const Tensor& z, const RouterParams& router, const Expert& latest, const SharedExpert& shared);

// shadow <- epsilon * shadow + (1 - epsilon) * trainable.
void ema_update(SharedExpert& shared);

Json expert_to_json(const Expert& e);
Expert expert_from_json(const Json& j);

}  // namespace cmmd
