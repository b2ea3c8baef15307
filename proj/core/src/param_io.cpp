#include "cmmd/param_io.hpp"

#include "cmmd/errors.hpp"
#include "cmmd/init.hpp"

namespace cmmd {

Tensor orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows > cols) throw ShapeError("orthonormal_rows: more rows than columns");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor q({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    while (norm < 1e-6) {
      for (std::size_t c = 0; c < cols; ++c) q(i, c) = normal(rng);
      for (std::size_t k = 0; k < i; ++k) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += q(i, c) * q(k, c);
        for (std::size_t c = 0; c < cols; ++c) q(i, c) -= dot * q(k, c);
      }
      norm = 0.0;
      for (std::size_t c = 0; c < cols; ++c) norm += q(i, c) * q(i, c);
      norm = std::sqrt(norm);
    }
    for (std::size_t c = 0; c < cols; ++c) q(i, c) /= norm;
  }
  return q;
}

Json tensor_to_json(const Tensor& t) {
  Json j;
  j["shape"] = t.shape();
  j["data"] = t.storage();
  return j;
}

Tensor tensor_from_json(const Json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != data.size()) throw ValidationError("tensor data length does not match its shape");
  return Tensor(std::move(shape), std::move(data));
}

Json parameter_to_json(const Parameter& p) {
  Json j;
  j["name"] = p.name;
  j["trainable"] = p.trainable;
  j["value"] = tensor_to_json(p.value);
  Json adam;
  adam["step"] = p.adam.step;
  adam["m"] = p.adam.first_moment.empty() ? Json(nullptr) : tensor_to_json(p.adam.first_moment);
  adam["v"] = p.adam.second_moment.empty() ? Json(nullptr) : tensor_to_json(p.adam.second_moment);
  j["adam"] = std::move(adam);
  return j;
}

Parameter parameter_from_json(const Json& j) {
  Parameter p(j.at("name").get<std::string>(), tensor_from_json(j.at("value")));
  p.trainable = j.at("trainable").get<bool>();
  const Json& adam = j.at("adam");
  p.adam.step = adam.at("step").get<decltype(p.adam.step)>();
  if (!adam.at("m").is_null()) p.adam.first_moment = tensor_from_json(adam.at("m"));
  if (!adam.at("v").is_null()) p.adam.second_moment = tensor_from_json(adam.at("v"));
  if ((!p.adam.first_moment.empty() && !p.adam.first_moment.same_shape(p.value)) ||
      (!p.adam.second_moment.empty() && !p.adam.second_moment.same_shape(p.value))) {
    throw ValidationError("optimizer state shape differs from parameter '" + p.name + "'");
  }
  return p;
}

}  // namespace cmmd
