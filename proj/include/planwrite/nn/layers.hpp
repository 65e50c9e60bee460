#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "planwrite/nn/graph.hpp"
#include "planwrite/nn/tensor.hpp"

namespace planwrite::nn {

enum class CellKind { kGru, kLstm };

/// y = W x (+ b). Parameters: <name>.W [out x in], <name>.b [out].
struct Linear {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  void declare(ParamSet& params) const;
  Var apply(Graph& g, const ParamSet& params, Var x) const;
};

/// Gated recurrent unit:
///   z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r * h) + bn), h' = (1 - z) * h + z * n
struct GruCell {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;

  void declare(ParamSet& params) const;
  Var step(Graph& g, const ParamSet& params, Var x, Var h) const;
};

struct LstmState {
  Var h;
  Var c;
};

/// LSTM with input, forget, candidate and output gates (in that row order).
struct LstmCell {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;

  void declare(ParamSet& params) const;
  LstmState step(Graph& g, const ParamSet& params, Var x, LstmState prev) const;
};

Var zeros(Graph& g, std::size_t n);

/// Forward and backward recurrences over the inputs; row t of the result is
/// [forward_t ; backward_t], shape [T x 2*hidden]. Throws UsageError on T = 0.
struct BiEncoder {
  std::string name;
  CellKind kind = CellKind::kGru;
  std::size_t in = 0;
  std::size_t hidden = 0;

  void declare(ParamSet& params) const;
  Var encode(Graph& g, const ParamSet& params, std::span<const Var> inputs) const;

 private:
  GruCell gru(const char* dir) const { return {name + "." + dir, in, hidden}; }
  LstmCell lstm(const char* dir) const { return {name + "." + dir, in, hidden}; }
};

/// Additive attention: e_t = v . tanh(Wq q + Wk k_t), weights = softmax(e),
/// context = sum_t weights_t k_t.
struct AdditiveAttention {
  std::string name;
  std::size_t query_dim = 0;
  std::size_t key_dim = 0;
  std::size_t attn_dim = 0;

  struct Keys {
    Var keys;       // [T x key_dim]
    Var projected;  // [T x attn_dim]
  };
  struct Result {
    Var context;
    Var weights;
  };

  void declare(ParamSet& params) const;
  /// Projects keys once so repeated queries cost O(T * attn_dim).
  Keys prepare(Graph& g, const ParamSet& params, Var keys) const;
  Result attend(Graph& g, const ParamSet& params, Var query, const Keys& keys) const;
};

/// One tanh hidden layer then a linear map to logits.
struct Mlp {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;

  void declare(ParamSet& params) const;
  Var logits(Graph& g, const ParamSet& params, Var x) const;
};

/// Inverted dropout during training; identity otherwise.
Var dropout(Graph& g, Var x, double rate, Rng& rng, bool training);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

using LossFn = std::function<Var(Graph&, const ParamSet&)>;

/// Compares backprop gradients against central differences. Tensors larger
/// than `max_coords_per_tensor` are sampled with a seeded draw. Relative error
/// is |a - n| / max(|a|, |n|, 1e-6). The loss function must be deterministic.
GradCheckReport grad_check(const LossFn& loss_fn, ParamSet& params, double eps,
                           std::size_t max_coords_per_tensor = 64, std::uint64_t seed = 0);

}  // namespace planwrite::nn
