#pragma once

#include <cstdint>
#include <span>

#include "cmmd/tensor.hpp"

namespace cmmd {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments are lazily shaped on the first step.
struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step = 0;
};

// Bias-corrected Adam update, in place. Throws ShapeError when param and grad
// (or existing moments) disagree.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

struct Parameter;

void adam_step(std::span<Parameter* const> params, const AdamConfig& config);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace cmmd
