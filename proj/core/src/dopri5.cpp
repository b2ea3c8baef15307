#include "cmmd/dopri5.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// Fifth-order weights minus embedded fourth-order weights.
constexpr std::array<double, 7> kE = {71.0 / 57600,  0.0,         -71.0 / 16695, 71.0 / 1920,
                                      -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

struct TensorOps {
  const OdeField& field;
  using State = Tensor;

  const Tensor& value(const Tensor& s) const { return s; }
  Tensor eval(const Tensor& y, double t) const {
    Tensor k = field(y, t);
    if (!k.same_shape(y)) throw ShapeError("ode field changed the state shape");
    if (!k.all_finite()) throw NumericalError("ode field returned a non-finite value");
    return k;
  }
  Tensor eval_value(const Tensor& y, double t) const { return eval(y, t); }
  double pin(double v) const { return v; }
  Tensor combine(const Tensor& y, std::span<const Tensor> ks, std::span<const double> w) const {
    Tensor out = y;
    for (std::size_t k = 0; k < ks.size(); ++k) {
      if (w[k] == 0.0) continue;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * ks[k][i];
    }
    return out;
  }
};

struct VarOps {
  const VarField& field;
  Tape& tape;
  using State = Var;

  const Tensor& value(const Var& s) const { return s.value(); }
  Var eval(const Var& y, double t) const {
    Var k = field(y, t);
    if (!k.value().same_shape(y.value())) throw ShapeError("ode field changed the state shape");
    return k;
  }
  // Probe evaluation for the step-size heuristic. It runs on the same tape
  // because the field may close over nodes of that tape; the probe result is
  // never connected to the output.
  Tensor eval_value(const Tensor& y, double t) const { return field(tape.constant(y), t).value(); }
  // Controller decisions go through the tape's detach cache, so a replayed
  // pass takes the recorded step sequence.
  double pin(double v) const { return tape.frozen(Tensor::scalar(v)).value().item(); }
  Var combine(const Var& y, std::span<const Var> ks, std::span<const double> w) const {
    return weighted_sum(y, ks, w);
  }
};

double scaled_rms(const Tensor& v, const Tensor& y, const SolverConfig& cfg) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double sc = cfg.atol + cfg.rtol * std::abs(y[i]);
    acc += (v[i] / sc) * (v[i] / sc);
  }
  return std::sqrt(acc / static_cast<double>(std::max<std::size_t>(1, v.size())));
}

// Hairer-Norsett-Wanner starting step heuristic for a fifth-order method.
template <typename Ops>
double initial_step(const Ops& ops, const Tensor& y0, const Tensor& f0, double t0, double span,
                    const SolverConfig& cfg, SolverStats& stats) {
  const double d0 = scaled_rms(y0, y0, cfg);
  const double d1 = scaled_rms(f0, y0, cfg);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  Tensor y1 = y0;
  for (std::size_t i = 0; i < y1.size(); ++i) y1[i] += h0 * f0[i];
  Tensor f1 = ops.eval_value(y1, t0 + h0);
  stats.evaluations += 1;
  Tensor diff = f1 - f0;
  const double d2 = scaled_rms(diff, y0, cfg) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

template <typename Ops>
std::pair<typename Ops::State, SolverStats> integrate(const Ops& ops, typename Ops::State y,
                                                      double t0, double t1,
                                                      const SolverConfig& cfg) {
  using State = typename Ops::State;
  cfg.validate();
  if (!(t1 >= t0)) throw InputError("ode: end time precedes start time");
  SolverStats stats;
  if (t1 == t0) return {y, stats};

  const double span = t1 - t0;
  State k1 = ops.eval(y, t0);
  stats.evaluations += 1;
  double h = cfg.initial_step > 0 ? cfg.initial_step
                                  : initial_step(ops, ops.value(y), ops.value(k1), t0, span, cfg, stats);
  double t = t0;
  constexpr double kMinFactor = 0.2, kMaxFactor = 10.0;

  while (t < t1) {
    if (stats.accepted + stats.rejected >= cfg.max_steps) {
      throw DivergenceError("ode: exceeded " + std::to_string(cfg.max_steps) + " steps at t=" +
                            std::to_string(t));
    }
    h = ops.pin(h);
    bool last = false;
    if (t + h >= t1) {
      h = t1 - t;
      last = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(t))) throw DivergenceError("ode: step size underflow");

    std::array<State, 7> k;
    k[0] = k1;
    for (int s = 1; s < 7; ++s) {
      std::array<double, 6> w{};
      for (int j = 0; j < s; ++j) w[j] = h * kA[s][j];
      State ys = ops.combine(y, std::span<const State>(k.data(), s), std::span<const double>(w.data(), s));
      if (s == 6) {
        // Stage 7 is evaluated at the candidate solution (FSAL).
        k[6] = ops.eval(ys, t + h);
        stats.evaluations += 1;
        // Error estimate from values only.
        Tensor err(ops.value(y).shape());
        for (int j = 0; j < 7; ++j) {
          const Tensor& kv = ops.value(k[j]);
          for (std::size_t i = 0; i < err.size(); ++i) err[i] += h * kE[j] * kv[i];
        }
        const Tensor& y0v = ops.value(y);
        const Tensor& y1v = ops.value(ys);
        double acc = 0.0;
        for (std::size_t i = 0; i < err.size(); ++i) {
          const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y0v[i]), std::abs(y1v[i]));
          acc += (err[i] / sc) * (err[i] / sc);
        }
        const double err_norm = std::sqrt(acc / static_cast<double>(std::max<std::size_t>(1, err.size())));
        if (!std::isfinite(err_norm)) throw NumericalError("ode: non-finite error estimate");
        const double factor =
            err_norm == 0.0 ? kMaxFactor
                            : std::clamp(cfg.safety * std::pow(err_norm, -1.0 / 5.0), kMinFactor, kMaxFactor);
        if (ops.pin(err_norm <= 1.0 ? 1.0 : 0.0) == 1.0) {
          stats.accepted += 1;
          t = last ? t1 : t + h;
          y = ys;
          k1 = k[6];
          h *= factor;
        } else {
          stats.rejected += 1;
          h *= std::min(1.0, factor);
        }
        break;
      }
      k[s] = ops.eval(ys, t + kC[s] * h);
      stats.evaluations += 1;
    }
  }
  return {y, stats};
}

}  // namespace

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("solver: tolerances must be positive");
  if (max_steps < 1) throw ConfigError("solver: max_steps must be at least 1");
  if (!(safety > 0.0 && safety <= 1.0)) throw ConfigError("solver: safety must lie in (0, 1]");
}

OdeResult dopri5_integrate(const OdeProblem& problem, const SolverConfig& config) {
  TensorOps ops{problem.field};
  auto [state, stats] = integrate(ops, problem.y0, problem.t0, problem.t1, config);
  return {std::move(state), stats};
}

VarOdeResult dopri5_integrate(const VarField& field, Var y0, double t0, double t1,
                              const SolverConfig& config) {
  VarOps ops{field, y0.tape()};
  auto [state, stats] = integrate(ops, y0, t0, t1, config);
  return {state, stats};
}

}  // namespace cmmd
