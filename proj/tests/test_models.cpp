#include <doctest.h>

#include <cmath>
#include <numeric>

#include "planwrite/error.hpp"
#include "planwrite/models.hpp"
#include "planwrite/nn/rng.hpp"

using namespace planwrite;

namespace {

using Vec = std::vector<double>;

// Straight-line forward passes over raw parameter arrays.
namespace ref {

const nn::Tensor& P(const Checkpoint& c, const std::string& n) { return c.params.at(n); }

Vec mv(const nn::Tensor& w, const Vec& x, std::size_t r0, std::size_t n) {
  Vec y(n, 0.0);
  const std::size_t cols = w.shape[1];
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r] += w.data[(r0 + r) * cols + c] * x[c];
  return y;
}
double sig(double x) { return 1 / (1 + std::exp(-x)); }
Vec cat(const Vec& a, const Vec& b) {
  Vec o = a;
  o.insert(o.end(), b.begin(), b.end());
  return o;
}
Vec emb(const Checkpoint& c, TokenId id) {
  const auto& e = P(c, "embedding");
  const std::size_t d = e.shape[1];
  return Vec(e.data.begin() + static_cast<long>(id * d), e.data.begin() + static_cast<long>((id + 1) * d));
}
Vec linear(const Checkpoint& c, const std::string& n, const Vec& x, bool bias = true) {
  Vec y = mv(P(c, n + ".W"), x, 0, P(c, n + ".W").shape[0]);
  if (bias)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += P(c, n + ".b").data[i];
  return y;
}
Vec gru(const Checkpoint& c, const std::string& n, const Vec& x, const Vec& h) {
  const std::size_t H = h.size();
  const auto& b = P(c, n + ".b").data;
  Vec wx = mv(P(c, n + ".W"), x, 0, 3 * H), uh = mv(P(c, n + ".U_zr"), h, 0, 2 * H);
  Vec z(H), r(H), rh(H), out(H);
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = sig(wx[i] + b[i] + uh[i]);
    r[i] = sig(wx[H + i] + b[H + i] + uh[H + i]);
    rh[i] = r[i] * h[i];
  }
  Vec un = mv(P(c, n + ".U_n"), rh, 0, H);
  for (std::size_t i = 0; i < H; ++i) out[i] = (1 - z[i]) * h[i] + z[i] * std::tanh(wx[2 * H + i] + b[2 * H + i] + un[i]);
  return out;
}
std::pair<Vec, Vec> lstm(const Checkpoint& c, const std::string& n, const Vec& x, const Vec& h, const Vec& cc) {
  const std::size_t H = h.size();
  const auto& b = P(c, n + ".b").data;
  Vec wx = mv(P(c, n + ".W"), x, 0, 4 * H), uh = mv(P(c, n + ".U"), h, 0, 4 * H);
  Vec h2(H), c2(H);
  for (std::size_t k = 0; k < H; ++k) {
    auto pre = [&](std::size_t g) { return wx[g * H + k] + uh[g * H + k] + b[g * H + k]; };
    c2[k] = sig(pre(1)) * cc[k] + sig(pre(0)) * std::tanh(pre(2));
    h2[k] = sig(pre(3)) * std::tanh(c2[k]);
  }
  return {h2, c2};
}
std::vector<Vec> encode(const Checkpoint& c, const TokenIds& ids, bool use_gru) {
  const std::size_t H = c.config.hidden_dim, T = ids.size();
  std::vector<Vec> f(T), b(T);
  Vec h(H, 0.0), cc(H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (use_gru) h = gru(c, "enc.fwd", emb(c, ids[t]), h);
    else std::tie(h, cc) = lstm(c, "enc.fwd", emb(c, ids[t]), h, cc);
    f[t] = h;
  }
  h.assign(H, 0.0);
  cc.assign(H, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    if (use_gru) h = gru(c, "enc.bwd", emb(c, ids[t]), h);
    else std::tie(h, cc) = lstm(c, "enc.bwd", emb(c, ids[t]), h, cc);
    b[t] = h;
  }
  std::vector<Vec> out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = cat(f[t], b[t]);
  return out;
}
Vec mean(const std::vector<Vec>& rows) {
  Vec m(rows[0].size(), 0.0);
  for (auto& r : rows)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i] / double(rows.size());
  return m;
}
Vec attend(const Checkpoint& c, const Vec& q, const std::vector<Vec>& keys) {
  Vec wq = mv(P(c, "attn.Wq"), q, 0, P(c, "attn.Wq").shape[0]);
  std::vector<double> e;
  for (auto& k : keys) {
    Vec wk = mv(P(c, "attn.Wk"), k, 0, wq.size());
    double s = 0;
    for (std::size_t j = 0; j < wq.size(); ++j) s += P(c, "attn.v").data[j] * std::tanh(wq[j] + wk[j]);
    e.push_back(s);
  }
  const double m = *std::max_element(e.begin(), e.end());
  double z = 0;
  for (auto& x : e) z += std::exp(x - m);
  Vec ctx(keys[0].size(), 0.0);
  for (std::size_t t = 0; t < keys.size(); ++t)
    for (std::size_t j = 0; j < ctx.size(); ++j) ctx[j] += std::exp(e[t] - m) / z * keys[t][j];
  return ctx;
}
Vec softmax_mlp(const Checkpoint& c, const Vec& x) {
  Vec h = linear(c, "out.hidden", x);
  for (auto& v : h) v = std::tanh(v);
  Vec l = linear(c, "out.out", h);
  const double m = *std::max_element(l.begin(), l.end());
  double z = 0;
  for (auto& v : l) z += std::exp(v - m);
  for (auto& v : l) v = std::exp(v - m) / z;
  return l;
}
Vec fuse(const Checkpoint& c, const Vec& hy, const Vec& hw) {
  Vec a = linear(c, "gate.W1", hy, false), b = linear(c, "gate.W2", hw, false);
  for (auto& v : a) v = std::tanh(v);
  for (auto& v : b) v = std::tanh(v);
  Vec k = linear(c, "gate.Wk", cat(a, b), false);
  Vec mix(hy.size());
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double g = sig(k[i]);
    mix[i] = g * hy[i] + (1 - g) * hw[i];
  }
  return softmax_mlp(c, mix);
}
Vec fusion_context(const Checkpoint& c, const TokenIds& ctx) {
  auto keys = encode(c, ctx, true);
  return attend(c, linear(c, "query", mean(keys)), keys);
}
Vec dyn_plan(const Checkpoint& c, const TokenIds& ctx, TokenId prev) {
  const Vec C = fusion_context(c, ctx);
  const Vec zero(c.config.hidden_dim, 0.0);
  const Vec hw = gru(c, "gru_w", cat(emb(c, prev), C), zero);
  const Vec hy = gru(c, "gru_y", cat(emb(c, Vocabulary::kBos), C), zero);
  return fuse(c, hy, hw);
}
Vec dyn_write(const Checkpoint& c, const TokenIds& ctx, TokenId cue, const TokenIds& prefix) {
  const Vec C = fusion_context(c, ctx);
  const Vec zero(c.config.hidden_dim, 0.0);
  const Vec hw = gru(c, "gru_w", cat(emb(c, cue), C), zero);
  Vec h = zero;
  TokenId prev = Vocabulary::kBos;
  for (TokenId t : prefix) {
    h = gru(c, "gru_y", cat(emb(c, prev), C), h);
    prev = t;
  }
  h = gru(c, "gru_y", cat(emb(c, prev), C), h);
  return fuse(c, h, hw);
}
Vec seq2seq(const Checkpoint& c, const TokenIds& src, const TokenIds& prefix) {
  auto keys = encode(c, src, false);
  Vec h = linear(c, "init", mean(keys));
  for (auto& v : h) v = std::tanh(v);
  Vec cc(h.size(), 0.0);
  TokenId prev = Vocabulary::kBos;
  auto step = [&] {
    const Vec ctx = attend(c, h, keys);
    std::tie(h, cc) = lstm(c, "dec", cat(emb(c, prev), ctx), h, cc);
  };
  for (TokenId t : prefix) {
    step();
    prev = t;
  }
  step();
  return softmax_mlp(c, h);
}

}  // namespace ref

Vocabulary toy_vocab() {  // |V| = 12
  return Vocabulary::from_tokens({"a", "b", "c", "d", "e", "."});
}

Checkpoint toy_model(ModelKind kind, std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 4;
  return init_model(cfg, toy_vocab(), seed);
}

void expect_dist(const Distribution& d, std::size_t n) {
  REQUIRE(d.size() == n);
  double s = 0;
  for (double p : d) {
    CHECK(p >= 0.0);
    s += p;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
}

void expect_same(const Distribution& got, const Vec& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

Story toy_story() {
  Story s;
  s.id = "1";
  s.title = {"a", "b"};
  s.sentences = {Tokens{"a", "c", "."}, Tokens{"b", "d", "."}, Tokens{"c", "."}, Tokens{"d", "e", "."},
                 Tokens{"e", "a", "."}};
  return s;
}

Storyline toy_line() { return Storyline{{"a", "b", "c", "d", "e"}}; }

}  // namespace

TEST_CASE("model kind names round trip") {
  for (auto k : kAllModelKinds) CHECK(parse_model_kind(model_kind_name(k)) == k);
  CHECK_THROWS_AS(parse_model_kind("gpt"), UsageError);
  CHECK(uses_storyline(ModelKind::kDynPlan));
  CHECK(uses_storyline(ModelKind::kStaticWrite));
  CHECK_FALSE(uses_storyline(ModelKind::kCondLm));
  CHECK_FALSE(uses_storyline(ModelKind::kIncS2S));
}

TEST_CASE("config validation and published presets") {
  ModelConfig c;
  c.embed_dim = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig{};
  c.hidden_dropout = 0.6;
  CHECK_THROWS_AS(c.validate(), UsageError);
  const auto dyn = ModelConfig::published(ModelKind::kDynPlan);
  CHECK(dyn.embed_dim == 500);
  CHECK(dyn.hidden_dim == 500);
  CHECK(dyn.embed_dropout == 0.0);
  CHECK(dyn.hidden_dropout == 0.5);
  const auto sw = ModelConfig::published(ModelKind::kStaticWrite);
  CHECK(sw.hidden_dim == 1000);
  CHECK(sw.embed_dropout == 0.2);
  CHECK(sw.hidden_dropout == 0.1);
  for (auto k : kAllModelKinds) ModelConfig::published(k).validate();
}

TEST_CASE("step distributions match the straight-line recomputation") {
  const TokenIds ctx{Vocabulary::kBos, 6};  // [BOS, a]
  const TokenId b = 7;
  const auto v = toy_vocab().size();
  REQUIRE(v == 12);

  const auto dp = toy_model(ModelKind::kDynPlan);
  expect_dist(dyn_plan_step(dp, ctx, b), v);
  expect_same(dyn_plan_step(dp, ctx, b), ref::dyn_plan(dp, ctx, b));
  for (double k : dyn_plan_gate(dp, ctx, b)) {
    CHECK(k > 0.0);
    CHECK(k < 1.0);
  }

  const auto dw = toy_model(ModelKind::kDynWrite);
  DynWriteState st;
  TokenIds prefix;
  for (TokenId next : {8, 9, 10}) {
    auto [dist, ns] = dyn_write_step(dw, ctx, b, prefix.empty() ? Vocabulary::kBos : prefix.back(), st);
    expect_dist(dist, v);
    expect_same(dist, ref::dyn_write(dw, ctx, b, prefix));
    st = ns;
    prefix.push_back(next);
  }

  const TokenIds title{6, 7};
  const TokenIds line{6, 7, 8, 9, 10};
  const auto sp = toy_model(ModelKind::kStaticPlan);
  expect_same(static_plan_step(sp, title, {6, 8}), ref::seq2seq(sp, title, {6, 8}));
  const auto sw = toy_model(ModelKind::kStaticWrite);
  expect_same(static_write_step(sw, title, line, {9, Vocabulary::kSep}),
              ref::seq2seq(sw, static_writer_source(title, line), {9, Vocabulary::kSep}));
  const auto is = toy_model(ModelKind::kIncS2S);
  expect_same(incs2s_step(is, ctx, {}), ref::seq2seq(is, ctx, {}));
  const auto cl = toy_model(ModelKind::kCondLm);
  expect_dist(condlm_step(cl, title, {6}), v);
  expect_same(condlm_step(cl, title, {6}), ref::seq2seq(cl, title, {6}));
}

TEST_CASE("zero parameters give a uniform distribution") {
  const auto v = toy_vocab().size();
  for (auto kind : kAllModelKinds) {
    auto m = toy_model(kind);
    m.params.fill(0.0);
    Distribution d;
    switch (kind) {
      case ModelKind::kDynPlan: d = dyn_plan_step(m, {6}, Vocabulary::kBos); break;
      case ModelKind::kDynWrite: d = dyn_write_step(m, {6}, 7, Vocabulary::kBos, {}).first; break;
      case ModelKind::kStaticPlan: d = static_plan_step(m, {6}, {}); break;
      case ModelKind::kStaticWrite: d = static_write_step(m, {6}, {6, 7, 8, 9, 10}, {}); break;
      case ModelKind::kIncS2S: d = incs2s_step(m, {6}, {}); break;
      case ModelKind::kCondLm: d = condlm_step(m, {6}, {}); break;
    }
    for (double p : d) CHECK(p == doctest::Approx(1.0 / double(v)).epsilon(1e-12));
  }
}

TEST_CASE("precondition errors") {
  const auto sp = toy_model(ModelKind::kStaticPlan);
  CHECK_THROWS_AS(static_plan_step(sp, {}, {}), UsageError);
  CHECK_THROWS_AS(dyn_plan_step(toy_model(ModelKind::kDynPlan), {}, Vocabulary::kBos), UsageError);
  CHECK_THROWS_AS(static_write_step(toy_model(ModelKind::kStaticWrite), {6}, {6, 7}, {}), UsageError);
  CHECK_THROWS_AS(condlm_step(sp, {6}, {}), UsageError);
}

TEST_CASE("context and stream layout") {
  const TokenIds title{6, 7};
  const std::vector<TokenIds> s{{8}, {9, 10}};
  CHECK(build_context(title, s, 0) == title);
  CHECK(build_context(title, s, 2) == TokenIds{6, 7, Vocabulary::kSep, 8, Vocabulary::kSep, 9, 10});
  CHECK(story_stream(s) == TokenIds{8, Vocabulary::kSep, 9, 10, Vocabulary::kEos});
  CHECK(static_writer_source(title, {6, 7, 8, 9, 10}) == TokenIds{6, 7, Vocabulary::kEot, 6, 7, 8, 9, 10});
}

TEST_CASE("checkpoint bytes round trip exactly") {
  for (auto kind : kAllModelKinds) {
    auto m = toy_model(kind, 3);
    m.params.round_to_float();
    m.meta.epochs = 4;
    m.meta.final_train_nll = 1.25;
    m.meta.final_valid_nll = std::nan("");
    m.meta.seed = 3;
    const std::string bytes = m.to_bytes();
    const Checkpoint back = Checkpoint::from_bytes(bytes);
    CHECK(back.config.kind == kind);
    CHECK(back.vocab == m.vocab);
    CHECK(back.meta.epochs == 4);
    CHECK(back.to_bytes() == bytes);
  }
}

TEST_CASE("checkpoint with a missing parameter is rejected") {
  auto m = toy_model(ModelKind::kCondLm);
  nn::ParamSet fewer;
  for (auto& [name, t] : m.params)
    if (name != "init.b") fewer.add(name, t.shape).data = t.data;
  m.params = fewer;
  CHECK_THROWS_AS(validate_params(m), DataError);
  CHECK_THROWS_AS(Checkpoint::from_bytes(m.to_bytes()), DataError);
}

TEST_CASE("initial loss is near ln|V|") {
  const Example ex{toy_story(), toy_line()};
  for (auto kind : kAllModelKinds) {
    const auto m = toy_model(kind, 1);
    const double nll = evaluate_nll(m, {ex});
    CHECK(nll >= 0.0);
    CHECK(nll == doctest::Approx(std::log(12.0)).epsilon(0.05));
  }
}

TEST_CASE("training a single story memorizes it and is deterministic") {
  const auto stories = load_corpus(std::string(PLANWRITE_TEST_DATA) + "/stories10.csv");
  const Story& story = stories.front();
  const Example ex{story, extract_storyline(story, Stoplist())};
  const Vocabulary vocab = build_vocab({story});
  ModelConfig cfg;
  cfg.kind = ModelKind::kDynWrite;
  TrainOptions opt;
  opt.epochs = 200;
  opt.lr = 2.0;
  opt.clip = 1.0;
  opt.seed = 4;
  const auto a = train({ex}, {}, cfg, vocab, opt);
  const auto b = train({ex}, {}, cfg, vocab, opt);
  CHECK(a.curve.size() == 201);
  CHECK(a.curve.front().train_nll == doctest::Approx(std::log(double(vocab.size()))).epsilon(0.05));
  CHECK(a.curve.back().train_nll <= 0.1);
  CHECK(evaluate_nll(a.checkpoint, {ex}) <= 0.1);
  CHECK(a.checkpoint.to_bytes() == b.checkpoint.to_bytes());
  CHECK(format_loss_csv(a.curve) == format_loss_csv(b.curve));
  CHECK(format_loss_csv(a.curve).rfind("epoch,train_nll,valid_nll\n0,", 0) == 0);
}

TEST_CASE("validation selects the best epoch and decays the rate") {
  const Example ex{toy_story(), toy_line()};
  Example other = ex;
  other.story.sentences[0] = {"e", "e", "."};
  ModelConfig cfg;
  cfg.kind = ModelKind::kCondLm;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 8;
  TrainOptions opt;
  opt.epochs = 40;
  opt.lr = 2.0;
  const auto r = train({ex}, {other}, cfg, toy_vocab(), opt);
  double best = INFINITY;
  for (const auto& e : r.curve) best = std::min(best, e.valid_nll);
  CHECK(r.checkpoint.meta.final_valid_nll == doctest::Approx(best));
  CHECK(evaluate_nll(r.checkpoint, {other}) == doctest::Approx(best).epsilon(1e-5));
  for (std::size_t i = 1; i < r.curve.size(); ++i) CHECK(r.curve[i].lr <= r.curve[i - 1].lr);
}

TEST_CASE("planning models refuse examples without storylines") {
  ModelConfig cfg;
  cfg.kind = ModelKind::kDynPlan;
  CHECK_THROWS_AS(train({Example{toy_story(), std::nullopt}}, {}, cfg, toy_vocab(), {}), DataError);
  CHECK_THROWS_AS(train({}, {}, cfg, toy_vocab(), {}), DataError);
}
