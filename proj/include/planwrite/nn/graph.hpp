#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "planwrite/nn/rng.hpp"
#include "planwrite/nn/tensor.hpp"

namespace planwrite::nn {

/// Handle to a node in a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// reverse creation order is a valid backward schedule. A graph built with
/// record=false evaluates values only.
///
/// Every op checks its output for NaN/Inf and throws NumericError.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  /// Parameter leaf. Values are read in place; repeated calls with the same
  /// name return the same node.
  Var param(const ParamSet& params, const std::string& name);
  Var constant(std::vector<double> values, std::size_t rows, std::size_t cols = 1);
  Var vector(std::vector<double> values) {
    const auto n = values.size();
    return constant(std::move(values), n, 1);
  }

  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::size_t size(Var v) const { return nodes_[v.id].rows * nodes_[v.id].cols; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Linear algebra. Matrices are [rows x cols]; vectors are [n x 1].
  Var matvec(Var w, Var x);       // [r x c] . [c] -> [r]
  Var matmul_nt(Var x, Var w);    // [T x c] . [r x c]^T -> [T x r]

  // Elementwise.
  Var add(Var a, Var b);
  Var add(std::initializer_list<Var> terms);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var one_minus(Var a);
  Var scale(Var a, double factor);
  Var sigmoid(Var a);
  Var tanh(Var a);

  // Structure.
  Var concat(std::initializer_list<Var> parts);
  Var concat(std::span<const Var> parts);
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var row(Var m, std::size_t r);
  Var gather_row(Var m, std::size_t r);  // sparse backward; for embeddings
  Var stack_rows(std::span<const Var> rows);
  Var mean_rows(Var m);
  Var sum(std::span<const Var> scalars);

  // Attention pieces: s_t = v . tanh(q + K_t), softmax, sum_t w_t X_t.
  Var additive_scores(Var q, Var keys, Var v);
  Var softmax(Var a);
  Var weighted_rows(Var weights, Var m);

  /// Inverted dropout with a mask drawn from `rng`.
  Var dropout(Var a, double rate, Rng& rng);

  /// -log softmax(logits)[target].
  Var nll(Var logits, std::size_t target);

  /// Seeds d(loss)=1 and runs every recorded backward step.
  void backward(Var loss);

  /// Adds parameter-node gradients into the matching ParamSet gradients
  /// (allocating buffers as needed).
  void accumulate_param_grads(ParamSet& params) const;

 private:
  struct Node {
    std::vector<double> own;
    const double* external = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> grad;
    std::function<void()> backward;
    std::string param_name;  // non-empty for parameter leaves
  };
  struct SparseRowGrad {
    std::uint32_t node;
    std::size_t row;
    std::vector<double> grad;
  };

  const double* val(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? n.external : n.own.data();
  }
  double* grad(std::uint32_t id);
  Var push(std::vector<double> values, std::size_t rows, std::size_t cols, const char* op);
  void require_same_size(Var a, Var b, const char* op) const;

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> param_nodes_;
  std::vector<SparseRowGrad> sparse_grads_;
};

/// Testing hook: when enabled, tanh's backward pass is scaled by 1.01 so that
/// gradient checks can be shown to fail.
void set_backward_fault(bool enabled);
bool backward_fault();

}  // namespace planwrite::nn
