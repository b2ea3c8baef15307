#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmmd/adam.hpp"
#include "cmmd/tensor.hpp"

namespace cmmd {

// A named trainable tensor with its gradient accumulator and optimizer state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  AdamState adam;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    grad = Tensor(value.shape());
  }

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

enum class GradMode { kEnabled, kDisabled };

// Values produced by stop-gradient points of a computation, recorded on a
// first pass and replayed verbatim on later passes. Finite-difference checks
// use this so that perturbed evaluations see the same detached constants as
// the analytic pass.
class DetachCache {
 public:
  void start_recording() {
    values_.clear();
    cursor_ = 0;
    replay_ = false;
  }
  void start_replay() {
    cursor_ = 0;
    replay_ = true;
  }
  bool replaying() const noexcept { return replay_; }
  Tensor next(Tensor computed);

 private:
  std::vector<Tensor> values_;
  std::size_t cursor_ = 0;
  bool replay_ = false;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(GradMode mode = GradMode::kEnabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  GradMode mode() const noexcept { return mode_; }
  void set_detach_cache(DetachCache* cache) noexcept { cache_ = cache; }

  Var constant(Tensor value);
  // Leaf bound to an external parameter; backward() adds into p.grad.
  // Untrainable parameters and disabled tapes produce constants.
  Var param(Parameter& p);
  Var detach(Var v);
  // A value computed off-tape that must be treated as a stop-gradient constant.
  Var frozen(Tensor value);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Reverse replay from a 1x1 root. Node gradients are reset on entry;
  // parameter accumulators are not, so repeated calls accumulate there.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of an input node, zero-initialized on first touch.
  Tensor& grad_buffer(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_touched = false;
    BackwardFn backward;
    Parameter* sink = nullptr;
  };

  GradMode mode_;
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
  DetachCache* cache_ = nullptr;
};

// Differentiable primitives. Each records onto the tape of its first input.
Var matmul(Var a, Var b);
Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// x[n x d] + b[1 x d] broadcast over rows.
Var add_row(Var x, Var b);
// x[n x d] * c[n x 1] broadcast over columns.
Var mul_col(Var x, Var c);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp_min(Var a, double floor);
Var sum(Var a);
Var mean(Var a);
// Column sums: [n x d] -> [1 x d].
Var sum_rows(Var a);
// Row sums: [n x d] -> [n x 1].
Var sum_cols(Var a);
Var concat_cols(Var a, Var b);
Var transpose(Var a);
Var gather_rows(Var a, std::span<const std::size_t> rows);
// Divides each row by its L2 norm; NumericalError on a (near-)zero row.
Var row_normalize(Var a);
// Diagonal of a square matrix as a column [n x 1].
Var diag(Var a);
Var softmax_rows(Var a);
// base + sum_i weights[i] * terms[i]; all operands share one shape.
Var weighted_sum(Var base, std::span<const Var> terms, std::span<const double> weights);
// Mean over rows of -log softmax(logits_i)[label_i]. Labels must be 0 or 1
// for two-column logits (InputError otherwise).
Var cross_entropy(Var logits, std::span<const int> labels);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace cmmd
