#include "cmmd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) = s;
    }
  }
  return out;
}

// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Tensor out({n, m});
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.data().data() + p * n;
    const double* br = b.data().data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.value().shape()) +
                     " vs " + shape_string(b.value().shape()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(matrix_shape(x.rows(), x.cols()));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {a}, [ia, self, deriv](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Tensor DetachCache::next(Tensor computed) {
  if (!replay_) {
    values_.push_back(computed);
    return computed;
  }
  if (cursor_ >= values_.size()) throw UsageError("detach cache: replay ran past recorded values");
  return values_[cursor_++];
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  if (value.rank() != 2) value = value.reshaped(matrix_shape(value.rows(), value.cols()));
  nodes_.push_back(Node{std::move(value), Tensor(), false, false, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (mode_ == GradMode::kDisabled || !p.trainable) return constant(p.value);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Tensor v = p.value;
  if (v.rank() != 2) v = v.reshaped(matrix_shape(v.rows(), v.cols()));
  nodes_.push_back(Node{std::move(v), Tensor(), true, false, nullptr, &p});
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::detach(Var v) { return frozen(v.value()); }

Var Tape::frozen(Tensor value) {
  if (cache_ != nullptr) value = cache_->next(std::move(value));
  return constant(std::move(value));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool rg = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw UsageError("operation mixes nodes from different tapes");
    rg = rg || nodes_[in.id()].requires_grad;
  }
  if (!value.all_finite()) throw NumericalError("non-finite value produced on tape");
  nodes_.push_back(Node{std::move(value), Tensor(), rg, false, rg ? std::move(backward) : nullptr,
                        nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_touched) {
    n.grad = Tensor(n.value.shape());
    n.grad_touched = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw UsageError("backward: root must be a scalar, got " + shape_string(root.value().shape()));
  }
  for (Node& n : nodes_) {
    n.grad_touched = false;
    n.grad = Tensor();
  }
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_touched) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.sink != nullptr) {
      if (!n.sink->grad.same_shape(n.sink->value)) n.sink->grad = Tensor(n.sink->value.shape());
      add_into(n.sink->grad, n.grad);
    }
  }
  // Untouched nodes report zero gradient.
  for (Node& n : nodes_) {
    if (!n.grad_touched) n.grad = Tensor(n.value.shape());
  }
}

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) add_into(t.grad_buffer(ib), matmul_tn(t.value(ia), g));
  });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  Var out = matmul(x, w);
  return bias ? add_row(out, *bias) : out;
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tensor out = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) add_into(t.grad_buffer(ib), g);
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Tensor out = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor out = hadamard(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), hadamard(g, t.value(ib)));
    if (t.requires_grad(ib)) add_into(t.grad_buffer(ib), hadamard(g, t.value(ia)));
  });
}

Var add_row(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row: bias " + shape_string(bv.shape()) + " vs input " +
                     shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) += bv[j];
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape().record(std::move(out), {x, b}, [ix, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ix)) add_into(t.grad_buffer(ix), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
    }
  });
}

Var mul_col(Var x, Var c) {
  const Tensor& xv = x.value();
  const Tensor& cv = c.value();
  if (cv.cols() != 1 || cv.rows() != xv.rows()) {
    throw ShapeError("mul_col: column " + shape_string(cv.shape()) + " vs input " +
                     shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) *= cv[i];
  const std::size_t ix = x.id(), ic = c.id();
  return x.tape().record(std::move(out), {x, c}, [ix, ic](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& cv2 = t.value(ic);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) * cv2[i];
    }
    if (t.requires_grad(ic)) {
      Tensor& gc = t.grad_buffer(ic);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gc[i] += g(i, j) * xv2(i, j);
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericalError("log: non-positive input");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp_min(Var a, double floor) {
  return unary(
      a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(cmmd::sum(a.value()));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out({1, av.cols()});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j];
  });
}

Var sum_cols(Var a) {
  const Tensor& av = a.value();
  Tensor out({av.rows(), 1});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[i] += av(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[i];
  });
}

Var concat_cols(Var a, Var b) {
  Tensor out = concat_cols(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ca = a.cols();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, ca](Tape& t, const Tensor& g) {
    const std::size_t total = g.cols();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < ca; ++j) ga(i, j) += g(i, j);
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = ca; j < total; ++j) gb(i, j - ca) += g(i, j);
    }
  });
}

Var transpose(Var a) {
  Tensor out = transpose(a.value());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    add_into(t.grad_buffer(ia), transpose(g));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tensor out = gather_rows(a.value(), rows);
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a}, [ia, idx](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(idx[i], j) += g(i, j);
  });
}

Var row_normalize(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  std::vector<double> norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (double v : av.row_span(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] < 1e-12) throw NumericalError("row_normalize: zero-norm row " + std::to_string(i));
    for (double& v : out.row_span(i)) v /= norms[i];
  }
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [ia, self, norms](Tape& t, const Tensor& g) {
    // d(x/|x|) = (g - y (y.g)) / |x|
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
    }
  });
}

Var diag(Var a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw ShapeError("diag: matrix is not square");
  Tensor out({av.rows(), 1});
  for (std::size_t i = 0; i < av.rows(); ++i) out[i] = av(i, i);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) ga(i, i) += g[i];
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto p = softmax(av.row_span(i));
    std::copy(p.begin(), p.end(), out.row_span(i).begin());
  }
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var weighted_sum(Var base, std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
  Tensor out = base.value();
  std::vector<Var> inputs{base};
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const Tensor& tv = terms[k].value();
    if (!tv.same_shape(out)) throw ShapeError("weighted_sum: operand shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * tv[i];
    inputs.push_back(terms[k]);
    ids.push_back(terms[k].id());
  }
  const std::size_t ib = base.id();
  std::vector<double> w(weights.begin(), weights.end());
  return base.tape().record(std::move(out), std::span<const Var>(inputs),
                            [ib, ids, w](Tape& t, const Tensor& g) {
                              if (t.requires_grad(ib)) add_into(t.grad_buffer(ib), g);
                              for (std::size_t k = 0; k < ids.size(); ++k) {
                                if (!t.requires_grad(ids[k]) || w[k] == 0.0) continue;
                                Tensor& gk = t.grad_buffer(ids[k]);
                                for (std::size_t i = 0; i < g.size(); ++i) gk[i] += w[k] * g[i];
                              }
                            });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (n == 0) throw InputError("cross_entropy: empty batch");
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside {0.." +
                       std::to_string(c - 1) + "}");
    }
  }
  Tensor probs({n, c});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = lv.row_span(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    const double log_z = peak + std::log(z);
    total += log_z - row[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < c; ++j) probs(i, j) = std::exp(row[j] - log_z);
  }
  const std::size_t il = logits.id();
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor::scalar(total / static_cast<double>(n)), {logits},
      [il, ys, probs = std::move(probs)](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(il);
        const double w = g[0] / static_cast<double>(ys.size());
        for (std::size_t i = 0; i < ys.size(); ++i)
          for (std::size_t j = 0; j < probs.cols(); ++j)
            gl(i, j) += w * (probs(i, j) - (static_cast<int>(j) == ys[i] ? 1.0 : 0.0));
      });
}

}  // namespace cmmd
