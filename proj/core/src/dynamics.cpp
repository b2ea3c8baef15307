#include "cmmd/dynamics.hpp"

#include <cmath>

#include "cmmd/errors.hpp"
#include "cmmd/init.hpp"
#include "cmmd/param_io.hpp"

namespace cmmd {
namespace {

struct FieldVars {
  Var w1, b1, w2, b2;
};

struct DynamicsVars {
  FieldVars mu, sigma;
  Var w_e, w_d;
};

FieldVars bind(Tape& tape, FieldNet& f) {
  return {tape.param(f.w1), tape.param(f.b1), tape.param(f.w2), tape.param(f.b2)};
}

FieldVars bind_const(Tape& tape, const FieldNet& f) {
  return {tape.constant(f.w1.value), tape.constant(f.b1.value), tape.constant(f.w2.value),
          tape.constant(f.b2.value)};
}

Var integrate_hidden(Var h0, const FieldVars& f, double t0, double tau, const SolverConfig& solver,
                     SolverStats* stats) {
  if (tau == t0) return h0;
  VarField field = [&f](Var h, double t) { return field_forward(h, t, f.w1, f.b1, f.w2, f.b2); };
  VarOdeResult r = dopri5_integrate(field, h0, t0, tau, solver);
  if (stats) *stats = r.stats;
  return r.state;
}

EnvGaussianVar predict_with(double tau, double t0, const EnvGaussianVar& init, const DynamicsVars& v,
                            const SolverConfig& solver, PredictionStats* stats) {
  if (tau < t0) throw InputError("predict_distribution: tau precedes the initial time");
  const Var h_mu = integrate_hidden(matmul(init.mean, v.w_e), v.mu, t0, tau, solver, stats ? &stats->mu : nullptr);
  const Var h_sigma =
      integrate_hidden(matmul(init.var, v.w_e), v.sigma, t0, tau, solver, stats ? &stats->sigma : nullptr);
  return {matmul(h_mu, v.w_d), softplus(matmul(h_sigma, v.w_d))};
}

FieldNet make_field(std::size_t d_h, Rng& rng) {
  FieldNet f;
  f.w1 = Parameter("w1", glorot_uniform(d_h + 1, d_h, rng));
  f.b1 = Parameter("b1", Tensor({1, d_h}));
  f.w2 = Parameter("w2", Tensor({d_h, d_h}));
  f.b2 = Parameter("b2", Tensor({1, d_h}));
  return f;
}

Json field_to_json(const FieldNet& f) {
  Json j;
  j["w1"] = parameter_to_json(f.w1);
  j["b1"] = parameter_to_json(f.b1);
  j["w2"] = parameter_to_json(f.w2);
  j["b2"] = parameter_to_json(f.b2);
  return j;
}

FieldNet field_from_json(const Json& j) {
  return {parameter_from_json(j.at("w1")), parameter_from_json(j.at("b1")), parameter_from_json(j.at("w2")),
          parameter_from_json(j.at("b2"))};
}

}  // namespace

std::vector<Parameter*> DynamicsParams::parameters() {
  return {&mu_field.w1,    &mu_field.b1,    &mu_field.w2,    &mu_field.b2, &sigma_field.w1,
          &sigma_field.b1, &sigma_field.w2, &sigma_field.b2, &w_e,         &w_d,
          &w_f};
}

DynamicsParams make_dynamics_params(std::size_t d_e, std::size_t d_env, std::size_t d_h, Rng& rng) {
  if (d_env > d_h) throw ConfigError("dynamics hidden width must be at least d_env");
  DynamicsParams p;
  p.mu_field = make_field(d_h, rng);
  p.sigma_field = make_field(d_h, rng);
  // Orthonormal rows make W_E * W_D the identity at initialization.
  const Tensor q = orthonormal_rows(d_env, d_h, rng);
  p.w_e = Parameter("w_e", q);
  p.w_d = Parameter("w_d", transpose(q));
  p.w_f = Parameter("w_f", glorot_uniform(d_e, d_env, rng));
  return p;
}

void InitialState::reset(std::size_t d_e) {
  sum = Tensor({1, d_e});
  outer = Tensor({d_e, d_e});
  count = 0.0;
  frozen = false;
}

void InitialState::accumulate(const Tensor& e) {
  if (frozen) return;
  if (e.cols() != sum.cols()) throw ShapeError("initial state: feature width mismatch");
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const auto row = e.row_span(i);
    for (std::size_t a = 0; a < row.size(); ++a) {
      sum[a] += row[a];
      for (std::size_t b = 0; b < row.size(); ++b) outer(a, b) += row[a] * row[b];
    }
  }
  count += static_cast<double>(e.rows());
}

Tensor InitialState::mean_e() const {
  if (!valid()) throw StateError("initial state has fewer than two samples");
  return sum * (1.0 / count);
}

Tensor InitialState::cov_e() const {
  const Tensor m = mean_e();
  Tensor c = outer * (1.0 / count);
  for (std::size_t a = 0; a < c.rows(); ++a)
    for (std::size_t b = 0; b < c.cols(); ++b) c(a, b) -= m[a] * m[b];
  return c;
}

EnvGaussianVar initial_distribution(const InitialState& init, Var w_f) {
  Tape& tape = w_f.tape();
  const Var mean = matmul(tape.constant(init.mean_e()), w_f);
  const Var projected = matmul(matmul(transpose(w_f), tape.constant(init.cov_e())), w_f);
  const Var var = clamp_min(transpose(diag(projected)), kVarianceFloor);
  return {mean, var};
}

EnvGaussianVar batch_env_stats(Var e_fake, Var w_f) {
  const std::size_t m = e_fake.rows();
  if (m < 2) throw InputError("batch_env_stats needs at least two fake-class rows");
  const Var f = matmul(e_fake, w_f);
  const Var mean = scale(sum_rows(f), 1.0 / static_cast<double>(m));
  const Var centred = add_row(f, scale(mean, -1.0));
  const Var var = clamp_min(scale(sum_rows(square(centred)), 1.0 / static_cast<double>(m)), kVarianceFloor);
  return {mean, var};
}

EnvGaussian batch_env_stats(const Tensor& e_fake, const Tensor& w_f) {
  Tape tape(GradMode::kDisabled);
  const EnvGaussianVar s = batch_env_stats(tape.constant(e_fake), tape.constant(w_f));
  return {s.mean.value(), s.var.value(), e_fake.rows()};
}

Var field_forward(Var h, double t, Var w1, Var b1, Var w2, Var b2) {
  Tensor time({h.rows(), 1}, t);
  const Var input = concat_cols(h, h.tape().constant(std::move(time)));
  return add_row(matmul(tanh(add_row(matmul(input, w1), b1)), w2), b2);
}

EnvGaussianVar predict_distribution(double tau, double t0, const EnvGaussianVar& init, Tape& tape,
                                    DynamicsParams& params, const SolverConfig& solver, PredictionStats* stats) {
  const DynamicsVars v{bind(tape, params.mu_field), bind(tape, params.sigma_field), tape.param(params.w_e),
                       tape.param(params.w_d)};
  return predict_with(tau, t0, init, v, solver, stats);
}

EnvGaussian predict_distribution(double tau, double t0, const InitialState& init, const DynamicsParams& params,
                                 const SolverConfig& solver) {
  Tape tape(GradMode::kDisabled);
  const EnvGaussianVar start = initial_distribution(init, tape.constant(params.w_f.value));
  const DynamicsVars v{bind_const(tape, params.mu_field), bind_const(tape, params.sigma_field),
                       tape.constant(params.w_e.value), tape.constant(params.w_d.value)};
  const EnvGaussianVar out = predict_with(tau, t0, start, v, solver, nullptr);
  return {out.mean.value(), out.var.value(), 0};
}

Var dynamics_loss(const EnvGaussianVar& pred, const EnvGaussianVar& target) {
  if (!pred.mean.value().same_shape(target.mean.value()) || !pred.var.value().same_shape(target.var.value())) {
    throw ShapeError("dynamics_loss: prediction and target shapes differ");
  }
  return add(sum(square(sub(pred.mean, target.mean))), sum(square(sub(pred.var, target.var))));
}

double dynamics_loss(const EnvGaussian& pred, const EnvGaussian& target) {
  if (!pred.mean.same_shape(target.mean) || !pred.var.same_shape(target.var)) {
    throw ShapeError("dynamics_loss: prediction and target shapes differ");
  }
  return squared_norm(pred.mean - target.mean) + squared_norm(pred.var - target.var);
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = normal(rng);
  return t;
}

Tensor sample_env_feature(const EnvGaussian& pred, std::size_t rows, Rng& rng) {
  Tensor out = standard_normal(rows, pred.mean.cols(), rng);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = pred.mean[j] + std::sqrt(pred.var[j]) * out(i, j);
  return out;
}

Json dynamics_to_json(const DynamicsParams& p) {
  Json j;
  j["mu_field"] = field_to_json(p.mu_field);
  j["sigma_field"] = field_to_json(p.sigma_field);
  j["w_e"] = parameter_to_json(p.w_e);
  j["w_d"] = parameter_to_json(p.w_d);
  j["w_f"] = parameter_to_json(p.w_f);
  return j;
}

DynamicsParams dynamics_from_json(const Json& j) {
  DynamicsParams p;
  p.mu_field = field_from_json(j.at("mu_field"));
  p.sigma_field = field_from_json(j.at("sigma_field"));
  p.w_e = parameter_from_json(j.at("w_e"));
  p.w_d = parameter_from_json(j.at("w_d"));
  p.w_f = parameter_from_json(j.at("w_f"));
  return p;
}

Json initial_state_to_json(const InitialState& s) {
  Json j;
  j["frozen"] = s.frozen;
  j["count"] = s.count;
  j["sum"] = tensor_to_json(s.sum);
  j["outer"] = tensor_to_json(s.outer);
  return j;
}

InitialState initial_state_from_json(const Json& j) {
  InitialState s;
  s.frozen = j.at("frozen").get<bool>();
  s.count = j.at("count").get<double>();
  s.sum = tensor_from_json(j.at("sum"));
  s.outer = tensor_from_json(j.at("outer"));
  return s;
}

}  // namespace cmmd
