#include "cmmd/adam.hpp"

#include <cmath>

#include "cmmd/autodiff.hpp"
#include "cmmd/errors.hpp"

namespace cmmd {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam: parameter " + shape_string(param.shape()) + " vs gradient " +
                     shape_string(grad.shape()));
  }
  if (state.first_moment.empty()) {
    state.first_moment = Tensor(param.shape());
    state.second_moment = Tensor(param.shape());
  } else if (!state.first_moment.same_shape(param) || !state.second_moment.same_shape(param)) {
    throw ShapeError("adam: moment shape differs from parameter");
  }
  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * grad[i];
    v = b2 * v + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    param[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
  for (Parameter* p : params) {
    if (p->trainable) adam_step(p->value, p->grad, p->adam, config);
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double total = 0.0;
  for (const Parameter* p : params) total += squared_norm(p->grad);
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

}  // namespace cmmd
