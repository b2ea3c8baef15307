#pragma once

#include "cmmd/autodiff.hpp"
#include "cmmd/json_io.hpp"

namespace cmmd {

// {"shape": [...], "data": [...]}
Json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const Json& j);

// Value, trainable flag and optimizer moments. Gradients are transient and
// not stored.
Json parameter_to_json(const Parameter& p);
Parameter parameter_from_json(const Json& j);

}  // namespace cmmd
