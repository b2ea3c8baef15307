#pragma once

#include <functional>

#include "cmmd/autodiff.hpp"
#include "cmmd/tensor.hpp"

namespace cmmd {

struct SolverConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  // <= 0 selects the automatic starting step.
  double initial_step = 0.0;
  int max_steps = 10000;
  double safety = 0.9;

  void validate() const;
};

struct SolverStats {
  int accepted = 0;
  int rejected = 0;
  int evaluations = 0;
};

using OdeField = std::function<Tensor(const Tensor& state, double t)>;

// dy/dt = field(y, t), y(t0) = y0, integrated to t1 >= t0.
struct OdeProblem {
  OdeField field;
  Tensor y0;
  double t0 = 0.0;
  double t1 = 0.0;
};

struct OdeResult {
  Tensor state;
  SolverStats stats;
};

// Adaptive Dormand-Prince 5(4) with local extrapolation. Throws
// DivergenceError when the step budget runs out or the step size underflows,
// NumericalError when the field returns a non-finite value.
OdeResult dopri5_integrate(const OdeProblem& problem, const SolverConfig& config = {});

// Field built from tape operations; it must record onto y.tape().
using VarField = std::function<Var(Var state, double t)>;

struct VarOdeResult {
  Var state;
  SolverStats stats;
};

// Same controller, but each accepted stage is recorded on the tape so that a
// loss on the final state backpropagates through the executed steps into y0
// and into any parameter the field touches. Step sizes are treated as
// constants.
VarOdeResult dopri5_integrate(const VarField& field, Var y0, double t0, double t1,
                              const SolverConfig& config = {});

}  // namespace cmmd
