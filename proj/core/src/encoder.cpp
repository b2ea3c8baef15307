#include "cmmd/encoder.hpp"

#include "cmmd/errors.hpp"

namespace cmmd {

Projected project(Var xt, Var xv, Var theta_t, Var theta_v) {
  if (xt.rows() != xv.rows()) throw ShapeError("project: modality batch sizes differ");
  return {matmul(xt, theta_t), matmul(xv, theta_v)};
}

Projected project(Tape& tape, Var xt, Var xv, EncoderParams& p) {
  return project(xt, xv, tape.param(p.theta_t), tape.param(p.theta_v));
}

Var contrastive_loss(Var zt, Var zv, double xi) {
  if (!(xi > 0.0)) throw ConfigError("contrastive temperature must be positive");
  if (zt.rows() != zv.rows() || zt.cols() != zv.cols()) throw ShapeError("contrastive_loss: shape mismatch");
  if (zt.rows() < 2) throw InputError("contrastive_loss needs at least two samples");
  // s[i][j] = cos(t_i, v_j) / xi
  const Var s = scale(matmul(row_normalize(zt), transpose(row_normalize(zv))), 1.0 / xi);
  const std::size_t n = zt.rows();
  Tensor off_diag({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag(i, i) = 0.0;
  const Var mask = s.tape().constant(std::move(off_diag));
  const Var e = mul(exp(s), mask);
  const Var denom = add(sum_cols(e), sum_cols(transpose(e)));
  return mean(sub(log(denom), diag(s)));
}

Var fuse(Var zt, Var zv, Var w_a) {
  if (zt.rows() != zv.rows()) throw ShapeError("fuse: modality batch sizes differ");
  return matmul(concat_cols(zt, zv), w_a);
}

}  // namespace cmmd
