#include "planwrite/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "planwrite/error.hpp"

namespace planwrite::nn {

void Linear::declare(ParamSet& params) const {
  params.add(name + ".W", {out, in});
  if (bias) params.add(name + ".b", {out});
}

Var Linear::apply(Graph& g, const ParamSet& params, Var x) const {
  Var y = g.matvec(g.param(params, name + ".W"), x);
  if (bias) y = g.add(y, g.param(params, name + ".b"));
  return y;
}

void GruCell::declare(ParamSet& params) const {
  params.add(name + ".W", {3 * hidden, in});
  params.add(name + ".U_zr", {2 * hidden, hidden});
  params.add(name + ".U_n", {hidden, hidden});
  params.add(name + ".b", {3 * hidden});
}

Var GruCell::step(Graph& g, const ParamSet& params, Var x, Var h) const {
  if (g.size(x) != in || g.size(h) != hidden) {
    throw UsageError(name + ": expected input " + std::to_string(in) + " / state " + std::to_string(hidden) +
                     ", got " + std::to_string(g.size(x)) + " / " + std::to_string(g.size(h)));
  }
  Var wx = g.add(g.matvec(g.param(params, name + ".W"), x), g.param(params, name + ".b"));
  Var uh = g.matvec(g.param(params, name + ".U_zr"), h);
  Var z = g.sigmoid(g.add(g.slice(wx, 0, hidden), g.slice(uh, 0, hidden)));
  Var r = g.sigmoid(g.add(g.slice(wx, hidden, hidden), g.slice(uh, hidden, hidden)));
  Var n = g.tanh(g.add(g.slice(wx, 2 * hidden, hidden), g.matvec(g.param(params, name + ".U_n"), g.mul(r, h))));
  return g.add(g.mul(g.one_minus(z), h), g.mul(z, n));
}

void LstmCell::declare(ParamSet& params) const {
  params.add(name + ".W", {4 * hidden, in});
  params.add(name + ".U", {4 * hidden, hidden});
  params.add(name + ".b", {4 * hidden});
}

LstmState LstmCell::step(Graph& g, const ParamSet& params, Var x, LstmState prev) const {
  if (g.size(x) != in || g.size(prev.h) != hidden || g.size(prev.c) != hidden) {
    throw UsageError(name + ": expected input " + std::to_string(in) + " / state " + std::to_string(hidden));
  }
  Var pre = g.add({g.matvec(g.param(params, name + ".W"), x), g.matvec(g.param(params, name + ".U"), prev.h),
                   g.param(params, name + ".b")});
  Var i = g.sigmoid(g.slice(pre, 0, hidden));
  Var f = g.sigmoid(g.slice(pre, hidden, hidden));
  Var cand = g.tanh(g.slice(pre, 2 * hidden, hidden));
  Var o = g.sigmoid(g.slice(pre, 3 * hidden, hidden));
  Var c = g.add(g.mul(f, prev.c), g.mul(i, cand));
  Var h = g.mul(o, g.tanh(c));
  return {h, c};
}

Var zeros(Graph& g, std::size_t n) { return g.vector(std::vector<double>(n, 0.0)); }

void BiEncoder::declare(ParamSet& params) const {
  if (kind == CellKind::kGru) {
    gru("fwd").declare(params);
    gru("bwd").declare(params);
  } else {
    lstm("fwd").declare(params);
    lstm("bwd").declare(params);
  }
}

Var BiEncoder::encode(Graph& g, const ParamSet& params, std::span<const Var> inputs) const {
  const std::size_t steps = inputs.size();
  if (steps == 0) throw UsageError(name + ": cannot encode an empty sequence");
  std::vector<Var> fwd(steps), bwd(steps);
  if (kind == CellKind::kGru) {
    const GruCell f = gru("fwd"), b = gru("bwd");
    Var h = zeros(g, hidden);
    for (std::size_t t = 0; t < steps; ++t) fwd[t] = h = f.step(g, params, inputs[t], h);
    h = zeros(g, hidden);
    for (std::size_t t = steps; t-- > 0;) bwd[t] = h = b.step(g, params, inputs[t], h);
  } else {
    const LstmCell f = lstm("fwd"), b = lstm("bwd");
    LstmState s{zeros(g, hidden), zeros(g, hidden)};
    for (std::size_t t = 0; t < steps; ++t) {
      s = f.step(g, params, inputs[t], s);
      fwd[t] = s.h;
    }
    s = {zeros(g, hidden), zeros(g, hidden)};
    for (std::size_t t = steps; t-- > 0;) {
      s = b.step(g, params, inputs[t], s);
      bwd[t] = s.h;
    }
  }
  std::vector<Var> rows(steps);
  for (std::size_t t = 0; t < steps; ++t) rows[t] = g.concat({fwd[t], bwd[t]});
  return g.stack_rows(rows);
}

void AdditiveAttention::declare(ParamSet& params) const {
  params.add(name + ".Wq", {attn_dim, query_dim});
  params.add(name + ".Wk", {attn_dim, key_dim});
  params.add(name + ".v", {attn_dim});
}

AdditiveAttention::Keys AdditiveAttention::prepare(Graph& g, const ParamSet& params, Var keys) const {
  if (g.cols(keys) != key_dim) throw UsageError(name + ": key width mismatch");
  return {keys, g.matmul_nt(keys, g.param(params, name + ".Wk"))};
}

AdditiveAttention::Result AdditiveAttention::attend(Graph& g, const ParamSet& params, Var query,
                                                    const Keys& keys) const {
  if (g.size(query) != query_dim) throw UsageError(name + ": query width mismatch");
  Var q = g.matvec(g.param(params, name + ".Wq"), query);
  Var weights = g.softmax(g.additive_scores(q, keys.projected, g.param(params, name + ".v")));
  return {g.weighted_rows(weights, keys.keys), weights};
}

void Mlp::declare(ParamSet& params) const {
  Linear{name + ".hidden", in, hidden}.declare(params);
  Linear{name + ".out", hidden, out}.declare(params);
}

Var Mlp::logits(Graph& g, const ParamSet& params, Var x) const {
  Var h = g.tanh(Linear{name + ".hidden", in, hidden}.apply(g, params, x));
  return Linear{name + ".out", hidden, out}.apply(g, params, h);
}

Var dropout(Graph& g, Var x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) throw UsageError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  return g.dropout(x, rate, rng);
}

GradCheckReport grad_check(const LossFn& loss_fn, ParamSet& params, double eps,
                           std::size_t max_coords_per_tensor, std::uint64_t seed) {
  params.zero_grad();
  {
    Graph g(true);
    Var loss = loss_fn(g, params);
    if (!std::isfinite(g.scalar(loss))) throw NumericError("grad_check: non-finite loss");
    g.backward(loss);
    g.accumulate_param_grads(params);
  }
  auto eval = [&] {
    Graph g(false);
    const double v = g.scalar(loss_fn(g, params));
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  Rng rng(seed);
  GradCheckReport report;
  for (auto& [name, t] : params) {
    std::vector<std::size_t> coords;
    if (t.size() <= max_coords_per_tensor) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_coords_per_tensor; ++k) coords.push_back(rng.below(t.size()));
    }
    for (std::size_t i : coords) {
      const double saved = t.data[i];
      t.data[i] = saved + eps;
      const double up = eval();
      t.data[i] = saved - eps;
      const double down = eval();
      t.data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = t.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = name;
          report.worst_index = i;
          report.analytic = analytic;
          report.numeric = numeric;
        }
      }
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace planwrite::nn
