#pragma once

#include <cmath>

#include "cmmd/rng.hpp"
#include "cmmd/tensor.hpp"

namespace cmmd {

// Uniform on [-sqrt(6 / fan_in), sqrt(6 / fan_in)].
inline Tensor he_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (double& v : t.storage()) v = u(rng);
  return t;
}

// Uniform on [-sqrt(6 / (fan_in + fan_out)), sqrt(6 / (fan_in + fan_out))];
// keeps activation variance roughly constant through chains of linear maps.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (double& v : t.storage()) v = u(rng);
  return t;
}

// Rows of a (rows x cols) matrix made orthonormal by Gram-Schmidt over a
// Gaussian draw. Requires rows <= cols.
Tensor orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace cmmd
