#pragma once

#include "cmmd/autodiff.hpp"

namespace cmmd {

struct EncoderParams {
  Parameter theta_t;  // d_t x d_z
  Parameter theta_v;  // d_v x d_z
  Parameter w_a;      // 2*d_z x d_z
  double xi = 0.1;    // contrastive temperature
};

struct Projected {
  Var zt;
  Var zv;
};

Projected project(Var xt, Var xv, Var theta_t, Var theta_v);
Projected project(Tape& tape, Var xt, Var xv, EncoderParams& p);

// Cross-modal contrastive loss over a batch of n >= 2 aligned pairs with
// cosine similarity s(a, b) / xi:
//   mean_i [ -s(t_i, v_i) + log sum_{j != i} (e^{s(t_i, v_j)} + e^{s(t_j, v_i)}) ]
// Throws InputError for n < 2, NumericalError for a zero-norm row.
Var contrastive_loss(Var zt, Var zv, double xi);

// [zt | zv] * w_a.
Var fuse(Var zt, Var zv, Var w_a);

}  // namespace cmmd
