#include <gtest/gtest.h>

#include <cmath>

#include "cmmd/adam.hpp"
#include "cmmd/autodiff.hpp"
#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = Tensor::row({1.5, -2.0, 0.25});
  const Tensor before = p;
  AdamState state;
  AdamConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(p, Tensor({1, 3}), state, cfg);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.0);
  AdamState state;
  adam_step(p, Tensor::scalar(1.0), state, AdamConfig{});
  // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
  EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p[0], -1e-3, 1e-10);
}

TEST(Adam, TwoStepsMatchHandUnroll) {
  const double g = 0.37, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 0.8, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  Tensor p = Tensor::scalar(0.8);
  AdamState state;
  adam_step(p, Tensor::scalar(g), state, AdamConfig{});
  adam_step(p, Tensor::scalar(g), state, AdamConfig{});
  EXPECT_NEAR(p[0], x, 1e-12);
  EXPECT_EQ(state.step, 2);
}

TEST(Adam, ShapeMismatchIsShapeError) {
  Tensor p({1, 2});
  AdamState state;
  EXPECT_THROW(adam_step(p, Tensor({1, 3}), state, AdamConfig{}), ShapeError);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  Parameter a("a", Tensor::row({0, 0}));
  Parameter b("b", Tensor::scalar(0));
  a.grad = Tensor::row({3, 0});
  b.grad = Tensor::scalar(4);
  std::vector<Parameter*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
}

}  // namespace
}  // namespace cmmd
