#pragma once

#include <optional>

#include "cmmd/autodiff.hpp"
#include "cmmd/dopri5.hpp"
#include "cmmd/json_io.hpp"
#include "cmmd/rng.hpp"

namespace cmmd {

constexpr double kVarianceFloor = 1e-6;

// Diagonal Gaussian; mean and var are 1 x d_env rows.
struct EnvGaussian {
  Tensor mean;
  Tensor var;
  std::size_t sample_count = 0;
};

// The same Gaussian as tape nodes.
struct EnvGaussianVar {
  Var mean;
  Var var;
};

// One vector field: tanh([h | t] * w1 + b1) * w2 + b2.
struct FieldNet {
  Parameter w1;  // (d_h + 1) x d_h
  Parameter b1;  // 1 x d_h
  Parameter w2;  // d_h x d_h, zero at init
  Parameter b2;  // 1 x d_h, zero at init
};

struct DynamicsParams {
  FieldNet mu_field;
  FieldNet sigma_field;
  Parameter w_e;  // d_env x d_h
  Parameter w_d;  // d_h x d_env
  Parameter w_f;  // d_e x d_env

  std::vector<Parameter*> parameters();
};

DynamicsParams make_dynamics_params(std::size_t d_e, std::size_t d_env, std::size_t d_h, Rng& rng);

// Fake-class statistics of the first event, kept in the routed feature space
// so that the environment map W_F stays differentiable.
struct InitialState {
  Tensor sum;    // 1 x d_e
  Tensor outer;  // d_e x d_e, sum of e^T e
  double count = 0.0;
  bool frozen = false;

  void reset(std::size_t d_e);
  // Adds rows of e (m x d_e). Ignored once frozen.
  void accumulate(const Tensor& e);
  bool valid() const { return count >= 2.0; }
  Tensor mean_e() const;
  // Population covariance.
  Tensor cov_e() const;
};

// mu0 = mean_e * W_F, var0 = max(diag(W_F^T C W_F), floor).
EnvGaussianVar initial_distribution(const InitialState& init, Var w_f);

// Rows of e_fake mapped through W_F; column mean and population variance,
// floored. Throws InputError for fewer than two rows.
EnvGaussianVar batch_env_stats(Var e_fake, Var w_f);
EnvGaussian batch_env_stats(const Tensor& e_fake, const Tensor& w_f);

// Field output for hidden state h (1 x d_h) at time t.
Var field_forward(Var h, double t, Var w1, Var b1, Var w2, Var b2);

struct PredictionStats {
  SolverStats mu;
  SolverStats sigma;
};

// Encodes the initial Gaussian with W_E, integrates both hidden states from
// t0 to tau, decodes with W_D (softplus on the variance channel).
EnvGaussianVar predict_distribution(double tau, double t0, const EnvGaussianVar& init, Tape& tape,
                                    DynamicsParams& params, const SolverConfig& solver,
                                    PredictionStats* stats = nullptr);
EnvGaussian predict_distribution(double tau, double t0, const InitialState& init, const DynamicsParams& params,
                                 const SolverConfig& solver);

// |mu_hat - mu|^2 + |var_hat - var|^2.
Var dynamics_loss(const EnvGaussianVar& pred, const EnvGaussianVar& target);
double dynamics_loss(const EnvGaussian& pred, const EnvGaussian& target);

// rows x d_env draws mu + sqrt(var) * N(0, 1), one fresh draw per row.
Tensor sample_env_feature(const EnvGaussian& pred, std::size_t rows, Rng& rng);
Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

Json dynamics_to_json(const DynamicsParams& p);
DynamicsParams dynamics_from_json(const Json& j);
Json initial_state_to_json(const InitialState& s);
InitialState initial_state_from_json(const Json& j);

}  // namespace cmmd
