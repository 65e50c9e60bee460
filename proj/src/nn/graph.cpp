#include "planwrite/nn/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "planwrite/error.hpp"

namespace planwrite::nn {

namespace {

std::atomic<bool> g_backward_fault{false};

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void set_backward_fault(bool enabled) { g_backward_fault.store(enabled); }
bool backward_fault() { return g_backward_fault.load(); }

double* Graph::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.rows * n.cols, 0.0);
  return n.grad.data();
}

Var Graph::push(std::vector<double> values, std::size_t rows, std::size_t cols, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.own = std::move(values);
  n.rows = rows;
  n.cols = cols;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::require_same_size(Var a, Var b, const char* op) const {
  if (size(a) != size(b)) {
    throw UsageError(std::string(op) + ": size mismatch " + std::to_string(size(a)) + " vs " +
                     std::to_string(size(b)));
  }
}

std::span<const double> Graph::value(Var v) const { return {val(v.id), size(v)}; }

double Graph::scalar(Var v) const {
  if (size(v) != 1) throw UsageError("scalar(): node is not a scalar");
  return val(v.id)[0];
}

Var Graph::param(const ParamSet& params, const std::string& name) {
  const Tensor* t = &params.at(name);
  if (auto it = param_nodes_.find(t); it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.external = t->data.data();
  n.rows = t->rows();
  n.cols = t->cols();
  n.param_name = name;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(t, id);
  return Var{id};
}

Var Graph::constant(std::vector<double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw UsageError("constant(): shape does not match data");
  return push(std::move(values), rows, cols, "constant");
}

Var Graph::matvec(Var w, Var x) {
  const std::size_t r = rows(w), c = cols(w);
  if (size(x) != c) {
    throw UsageError("matvec: matrix has " + std::to_string(c) + " columns, vector has " +
                     std::to_string(size(x)));
  }
  std::vector<double> y(r, 0.0);
  const double* W = val(w.id);
  const double* X = val(x.id);
  for (std::size_t i = 0; i < r; ++i) {
    const double* wi = W + i * c;
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += wi[j] * X[j];
    y[i] = acc;
  }
  Var out = push(std::move(y), r, 1, "matvec");
  if (record_) {
    nodes_[out.id].backward = [this, w, x, out, r, c] {
      const double* dy = nodes_[out.id].grad.data();
      const double* W = val(w.id);
      const double* X = val(x.id);
      double* dW = grad(w.id);
      double* dX = grad(x.id);
      for (std::size_t i = 0; i < r; ++i) {
        const double g = dy[i];
        if (g == 0.0) continue;
        double* dwi = dW + i * c;
        const double* wi = W + i * c;
        for (std::size_t j = 0; j < c; ++j) {
          dwi[j] += g * X[j];
          dX[j] += g * wi[j];
        }
      }
    };
  }
  return out;
}

Var Graph::matmul_nt(Var x, Var w) {
  const std::size_t t_rows = rows(x), c = cols(x), r = rows(w);
  if (cols(w) != c) throw UsageError("matmul_nt: inner dimensions differ");
  std::vector<double> y(t_rows * r, 0.0);
  const double* X = val(x.id);
  const double* W = val(w.id);
  for (std::size_t t = 0; t < t_rows; ++t) {
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += X[t * c + j] * W[i * c + j];
      y[t * r + i] = acc;
    }
  }
  Var out = push(std::move(y), t_rows, r, "matmul_nt");
  if (record_) {
    nodes_[out.id].backward = [this, x, w, out, t_rows, c, r] {
      const double* dy = nodes_[out.id].grad.data();
      const double* X = val(x.id);
      const double* W = val(w.id);
      double* dX = grad(x.id);
      double* dW = grad(w.id);
      for (std::size_t t = 0; t < t_rows; ++t) {
        for (std::size_t i = 0; i < r; ++i) {
          const double g = dy[t * r + i];
          if (g == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            dX[t * c + j] += g * W[i * c + j];
            dW[i * c + j] += g * X[t * c + j];
          }
        }
      }
    };
  }
  return out;
}

Var Graph::add(Var a, Var b) {
  require_same_size(a, b, "add");
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  const double* B = val(b.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = A[i] + B[i];
  Var out = push(std::move(y), rows(a), cols(a), "add");
  if (record_) {
    nodes_[out.id].backward = [this, a, b, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += dy[i];
      double* dB = grad(b.id);
      for (std::size_t i = 0; i < n; ++i) dB[i] += dy[i];
    };
  }
  return out;
}

Var Graph::add(std::initializer_list<Var> terms) {
  if (terms.size() == 0) throw UsageError("add: no terms");
  auto it = terms.begin();
  Var acc = *it++;
  for (; it != terms.end(); ++it) acc = add(acc, *it);
  return acc;
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
  require_same_size(a, b, "mul");
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  const double* B = val(b.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = A[i] * B[i];
  Var out = push(std::move(y), rows(a), cols(a), "mul");
  if (record_) {
    nodes_[out.id].backward = [this, a, b, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      const double* A = val(a.id);
      const double* B = val(b.id);
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += dy[i] * B[i];
      double* dB = grad(b.id);
      for (std::size_t i = 0; i < n; ++i) dB[i] += dy[i] * A[i];
    };
  }
  return out;
}

Var Graph::one_minus(Var a) {
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 - A[i];
  Var out = push(std::move(y), rows(a), cols(a), "one_minus");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] -= dy[i];
    };
  }
  return out;
}

Var Graph::scale(Var a, double factor) {
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = factor * A[i];
  Var out = push(std::move(y), rows(a), cols(a), "scale");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n, factor] {
      const double* dy = nodes_[out.id].grad.data();
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += factor * dy[i];
    };
  }
  return out;
}

Var Graph::sigmoid(Var a) {
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(A[i]);
  Var out = push(std::move(y), rows(a), cols(a), "sigmoid");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      const double* Y = val(out.id);
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += dy[i] * Y[i] * (1.0 - Y[i]);
    };
  }
  return out;
}

Var Graph::tanh(Var a) {
  const std::size_t n = size(a);
  std::vector<double> y(n);
  const double* A = val(a.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(A[i]);
  Var out = push(std::move(y), rows(a), cols(a), "tanh");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      const double* Y = val(out.id);
      double* dA = grad(a.id);
      const double fault = backward_fault() ? 1.01 : 1.0;
      for (std::size_t i = 0; i < n; ++i) dA[i] += fault * dy[i] * (1.0 - Y[i] * Y[i]);
    };
  }
  return out;
}

Var Graph::concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var Graph::concat(std::span<const Var> parts) {
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::size_t n = 0;
  for (Var p : inputs) n += size(p);
  std::vector<double> y;
  y.reserve(n);
  for (Var p : inputs) {
    const double* P = val(p.id);
    y.insert(y.end(), P, P + size(p));
  }
  Var out = push(std::move(y), n, 1, "concat");
  if (record_) {
    nodes_[out.id].backward = [this, inputs = std::move(inputs), out] {
      const double* dy = nodes_[out.id].grad.data();
      std::size_t off = 0;
      for (Var p : inputs) {
        const std::size_t m = size(p);
        double* dP = grad(p.id);
        for (std::size_t i = 0; i < m; ++i) dP[i] += dy[off + i];
        off += m;
      }
    };
  }
  return out;
}

Var Graph::slice(Var a, std::size_t offset, std::size_t length) {
  if (offset + length > size(a)) throw UsageError("slice out of range");
  const double* A = val(a.id);
  std::vector<double> y(A + offset, A + offset + length);
  Var out = push(std::move(y), length, 1, "slice");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, offset, length] {
      const double* dy = nodes_[out.id].grad.data();
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < length; ++i) dA[offset + i] += dy[i];
    };
  }
  return out;
}

Var Graph::row(Var m, std::size_t r) {
  if (r >= rows(m)) throw UsageError("row index out of range");
  return slice(m, r * cols(m), cols(m));
}

Var Graph::gather_row(Var m, std::size_t r) {
  if (r >= rows(m)) throw UsageError("gather_row: index " + std::to_string(r) + " out of range");
  const std::size_t c = cols(m);
  const double* M = val(m.id);
  std::vector<double> y(M + r * c, M + (r + 1) * c);
  Var out = push(std::move(y), c, 1, "gather_row");
  if (record_) {
    nodes_[out.id].backward = [this, m, out, r] {
      const auto& dy = nodes_[out.id].grad;
      if (!nodes_[m.id].param_name.empty()) {
        sparse_grads_.push_back({m.id, r, dy});
        return;
      }
      double* dM = grad(m.id);
      const std::size_t c = dy.size();
      for (std::size_t i = 0; i < c; ++i) dM[r * c + i] += dy[i];
    };
  }
  return out;
}

Var Graph::stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("stack_rows: no rows");
  std::vector<Var> inputs(parts.begin(), parts.end());
  const std::size_t c = size(inputs[0]);
  std::vector<double> y;
  y.reserve(c * inputs.size());
  for (Var p : inputs) {
    if (size(p) != c) throw UsageError("stack_rows: ragged rows");
    const double* P = val(p.id);
    y.insert(y.end(), P, P + c);
  }
  const std::size_t t_rows = inputs.size();
  Var out = push(std::move(y), t_rows, c, "stack_rows");
  if (record_) {
    nodes_[out.id].backward = [this, inputs = std::move(inputs), out, c] {
      const double* dy = nodes_[out.id].grad.data();
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        double* dP = grad(inputs[t].id);
        for (std::size_t i = 0; i < c; ++i) dP[i] += dy[t * c + i];
      }
    };
  }
  return out;
}

Var Graph::mean_rows(Var m) {
  const std::size_t t_rows = rows(m), c = cols(m);
  const double* M = val(m.id);
  std::vector<double> y(c, 0.0);
  for (std::size_t t = 0; t < t_rows; ++t) {
    for (std::size_t i = 0; i < c; ++i) y[i] += M[t * c + i];
  }
  const double inv = 1.0 / static_cast<double>(t_rows);
  for (auto& v : y) v *= inv;
  Var out = push(std::move(y), c, 1, "mean_rows");
  if (record_) {
    nodes_[out.id].backward = [this, m, out, t_rows, c, inv] {
      const double* dy = nodes_[out.id].grad.data();
      double* dM = grad(m.id);
      for (std::size_t t = 0; t < t_rows; ++t) {
        for (std::size_t i = 0; i < c; ++i) dM[t * c + i] += inv * dy[i];
      }
    };
  }
  return out;
}

Var Graph::sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw UsageError("sum: no terms");
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  double acc = 0.0;
  for (Var s : inputs) {
    if (size(s) != 1) throw UsageError("sum: expects scalars");
    acc += val(s.id)[0];
  }
  Var out = push({acc}, 1, 1, "sum");
  if (record_) {
    nodes_[out.id].backward = [this, inputs = std::move(inputs), out] {
      const double dy = nodes_[out.id].grad[0];
      for (Var s : inputs) grad(s.id)[0] += dy;
    };
  }
  return out;
}

Var Graph::additive_scores(Var q, Var keys, Var v) {
  const std::size_t t_rows = rows(keys), a = cols(keys);
  if (size(q) != a || size(v) != a) throw UsageError("additive_scores: attention dims differ");
  const double* Q = val(q.id);
  const double* K = val(keys.id);
  const double* V = val(v.id);
  std::vector<double> act(t_rows * a);
  std::vector<double> y(t_rows, 0.0);
  for (std::size_t t = 0; t < t_rows; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a; ++i) {
      const double u = std::tanh(Q[i] + K[t * a + i]);
      act[t * a + i] = u;
      acc += V[i] * u;
    }
    y[t] = acc;
  }
  Var out = push(std::move(y), t_rows, 1, "additive_scores");
  if (record_) {
    nodes_[out.id].backward = [this, q, keys, v, out, t_rows, a, act = std::move(act)] {
      const double* dy = nodes_[out.id].grad.data();
      const double* V = val(v.id);
      double* dQ = grad(q.id);
      double* dK = grad(keys.id);
      double* dV = grad(v.id);
      const double fault = backward_fault() ? 1.01 : 1.0;
      for (std::size_t t = 0; t < t_rows; ++t) {
        const double g = dy[t];
        for (std::size_t i = 0; i < a; ++i) {
          const double u = act[t * a + i];
          dV[i] += g * u;
          const double d = fault * g * V[i] * (1.0 - u * u);
          dQ[i] += d;
          dK[t * a + i] += d;
        }
      }
    };
  }
  return out;
}

Var Graph::softmax(Var a) {
  const std::size_t n = size(a);
  const double* A = val(a.id);
  const double mx = *std::max_element(A, A + n);
  std::vector<double> y(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(A[i] - mx);
    z += y[i];
  }
  for (auto& v : y) v /= z;
  Var out = push(std::move(y), rows(a), cols(a), "softmax");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n] {
      const double* dy = nodes_[out.id].grad.data();
      const double* Y = val(out.id);
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += dy[i] * Y[i];
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += Y[i] * (dy[i] - dot);
    };
  }
  return out;
}

Var Graph::weighted_rows(Var weights, Var m) {
  const std::size_t t_rows = rows(m), c = cols(m);
  if (size(weights) != t_rows) throw UsageError("weighted_rows: one weight per row required");
  const double* W = val(weights.id);
  const double* M = val(m.id);
  std::vector<double> y(c, 0.0);
  for (std::size_t t = 0; t < t_rows; ++t) {
    for (std::size_t i = 0; i < c; ++i) y[i] += W[t] * M[t * c + i];
  }
  Var out = push(std::move(y), c, 1, "weighted_rows");
  if (record_) {
    nodes_[out.id].backward = [this, weights, m, out, t_rows, c] {
      const double* dy = nodes_[out.id].grad.data();
      const double* W = val(weights.id);
      const double* M = val(m.id);
      double* dW = grad(weights.id);
      double* dM = grad(m.id);
      for (std::size_t t = 0; t < t_rows; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
          acc += dy[i] * M[t * c + i];
          dM[t * c + i] += W[t] * dy[i];
        }
        dW[t] += acc;
      }
    };
  }
  return out;
}

Var Graph::dropout(Var a, double rate, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) throw UsageError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  const std::size_t n = size(a);
  const double keep = 1.0 - rate;
  std::vector<double> mask(n);
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  const double* A = val(a.id);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = A[i] * mask[i];
  Var out = push(std::move(y), rows(a), cols(a), "dropout");
  if (record_) {
    nodes_[out.id].backward = [this, a, out, n, mask = std::move(mask)] {
      const double* dy = nodes_[out.id].grad.data();
      double* dA = grad(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += dy[i] * mask[i];
    };
  }
  return out;
}

Var Graph::nll(Var logits, std::size_t target) {
  const std::size_t n = size(logits);
  if (target >= n) throw UsageError("nll: target out of range");
  const double* Z = val(logits.id);
  const double mx = *std::max_element(Z, Z + n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(Z[i] - mx);
  const double lse = mx + std::log(sum);
  Var out = push({lse - Z[target]}, 1, 1, "nll");
  if (record_) {
    nodes_[out.id].backward = [this, logits, out, n, target, lse] {
      const double dy = nodes_[out.id].grad[0];
      const double* Z = val(logits.id);
      double* dZ = grad(logits.id);
      for (std::size_t i = 0; i < n; ++i) dZ[i] += dy * std::exp(Z[i] - lse);
      dZ[target] -= dy;
    };
  }
  return out;
}

void Graph::backward(Var loss) {
  if (!record_) throw UsageError("backward() on a graph built without recording");
  if (size(loss) != 1) throw UsageError("backward() needs a scalar loss");
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

void Graph::accumulate_param_grads(ParamSet& params) const {
  for (const auto& [tensor, id] : param_nodes_) {
    const Node& n = nodes_[id];
    Tensor& t = params.at(n.param_name);
    if (!t.has_grad()) t.grad.assign(t.data.size(), 0.0);
    if (!n.grad.empty()) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) t.grad[i] += n.grad[i];
    }
  }
  for (const auto& s : sparse_grads_) {
    const Node& n = nodes_[s.node];
    Tensor& t = params.at(n.param_name);
    if (!t.has_grad()) t.grad.assign(t.data.size(), 0.0);
    const std::size_t c = s.grad.size();
    for (std::size_t i = 0; i < c; ++i) t.grad[s.row * c + i] += s.grad[i];
  }
}

}  // namespace planwrite::nn
