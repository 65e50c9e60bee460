#include "planwrite/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "planwrite/error.hpp"
#include "planwrite/nn/checkpoint_io.hpp"
#include "planwrite/nn/layers.hpp"
#include "planwrite/text_util.hpp"

namespace planwrite {

using nn::Graph;
using nn::ParamSet;
using nn::Rng;
using nn::Var;

namespace {

constexpr double kInitScale = 0.1;

Var embed(Graph& g, const ParamSet& ps, TokenId id, double rate, bool training, Rng& rng) {
  return nn::dropout(g, g.gather_row(g.param(ps, "embedding"), static_cast<std::size_t>(id)), rate, rng,
                     training);
}

Var encode_tokens(Graph& g, const ParamSet& ps, const nn::BiEncoder& enc, const TokenIds& ids, double e_rate,
                  double h_rate, bool training, Rng& rng) {
  if (ids.empty()) throw UsageError("cannot encode an empty token sequence");
  std::vector<Var> inputs;
  inputs.reserve(ids.size());
  for (TokenId id : ids) inputs.push_back(embed(g, ps, id, e_rate, training, rng));
  return nn::dropout(g, enc.encode(g, ps, inputs), h_rate, rng, training);
}

// GRU encoder, single attention read, and the two-branch fusion gate.
struct FusionNet {
  const ModelConfig& cfg;
  std::size_t vocab;
  nn::BiEncoder encoder{"enc", nn::CellKind::kGru, cfg.embed_dim, cfg.hidden_dim};
  nn::Linear query{"query", 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::AdditiveAttention attention{"attn", cfg.hidden_dim, 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::GruCell decoder{"gru_y", cfg.embed_dim + 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::GruCell cue{"gru_w", cfg.embed_dim + 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::Linear w1{"gate.W1", cfg.hidden_dim, cfg.hidden_dim, false};
  nn::Linear w2{"gate.W2", cfg.hidden_dim, cfg.hidden_dim, false};
  nn::Linear wk{"gate.Wk", 2 * cfg.hidden_dim, cfg.hidden_dim, false};
  nn::Mlp out{"out", cfg.hidden_dim, cfg.hidden_dim, vocab};

  void declare(ParamSet& ps) const {
    ps.add("embedding", {vocab, cfg.embed_dim});
    encoder.declare(ps);
    query.declare(ps);
    attention.declare(ps);
    decoder.declare(ps);
    cue.declare(ps);
    w1.declare(ps);
    w2.declare(ps);
    wk.declare(ps);
    out.declare(ps);
  }

  Var attn_context(Graph& g, const ParamSet& ps, const TokenIds& ctx, bool training, Rng& rng) const {
    Var keys = encode_tokens(g, ps, encoder, ctx, cfg.embed_dropout, cfg.hidden_dropout, training, rng);
    Var q = query.apply(g, ps, g.mean_rows(keys));
    return attention.attend(g, ps, q, attention.prepare(g, ps, keys)).context;
  }

  Var cue_state(Graph& g, const ParamSet& ps, Var context, TokenId word, bool training, Rng& rng) const {
    Var x = g.concat({embed(g, ps, word, cfg.embed_dropout, training, rng), context});
    return cue.step(g, ps, x, nn::zeros(g, cfg.hidden_dim));
  }

  Var decoder_step(Graph& g, const ParamSet& ps, Var context, TokenId prev, Var h, bool training,
                   Rng& rng) const {
    Var x = g.concat({embed(g, ps, prev, cfg.embed_dropout, training, rng), context});
    return decoder.step(g, ps, x, h);
  }

  struct Fused {
    Var logits;
    Var gate;
  };

  Fused fuse(Graph& g, const ParamSet& ps, Var h_y, Var h_w, bool training, Rng& rng) const {
    Var hy = g.tanh(w1.apply(g, ps, h_y));
    Var hw = g.tanh(w2.apply(g, ps, h_w));
    Var k = g.sigmoid(wk.apply(g, ps, g.concat({hy, hw})));
    Var mixed = g.add(g.mul(k, h_y), g.mul(g.one_minus(k), h_w));
    mixed = nn::dropout(g, mixed, cfg.hidden_dropout, rng, training);
    return {out.logits(g, ps, mixed), k};
  }
};

// BiLSTM encoder and an LSTM decoder reading additive attention each step.
struct Seq2SeqNet {
  const ModelConfig& cfg;
  std::size_t vocab;
  nn::BiEncoder encoder{"enc", nn::CellKind::kLstm, cfg.embed_dim, cfg.hidden_dim};
  nn::Linear init{"init", 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::AdditiveAttention attention{"attn", cfg.hidden_dim, 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::LstmCell decoder{"dec", cfg.embed_dim + 2 * cfg.hidden_dim, cfg.hidden_dim};
  nn::Mlp out{"out", cfg.hidden_dim, cfg.hidden_dim, vocab};

  void declare(ParamSet& ps) const {
    ps.add("embedding", {vocab, cfg.embed_dim});
    encoder.declare(ps);
    init.declare(ps);
    attention.declare(ps);
    decoder.declare(ps);
    out.declare(ps);
  }

  struct Encoded {
    nn::AdditiveAttention::Keys keys;
    nn::LstmState state;
  };

  Encoded encode(Graph& g, const ParamSet& ps, const TokenIds& source, bool training, Rng& rng) const {
    Var keys = encode_tokens(g, ps, encoder, source, cfg.embed_dropout, cfg.hidden_dropout, training, rng);
    Var h0 = g.tanh(init.apply(g, ps, g.mean_rows(keys)));
    return {attention.prepare(g, ps, keys), {h0, nn::zeros(g, cfg.hidden_dim)}};
  }

  struct Step {
    nn::LstmState state;
    Var logits;
  };

  Step step(Graph& g, const ParamSet& ps, const nn::AdditiveAttention::Keys& keys, TokenId prev,
            nn::LstmState state, bool training, Rng& rng) const {
    Var context = attention.attend(g, ps, state.h, keys).context;
    Var x = g.concat({embed(g, ps, prev, cfg.embed_dropout, training, rng), context});
    nn::LstmState next = decoder.step(g, ps, x, state);
    Var h = nn::dropout(g, next.h, cfg.hidden_dropout, rng, training);
    return {next, out.logits(g, ps, h)};
  }
};

std::vector<double> to_vec(const Graph& g, Var v) {
  auto s = g.value(v);
  return {s.begin(), s.end()};
}

Distribution softmax_of(Graph& g, Var logits) { return to_vec(g, g.softmax(logits)); }

void require_kind(const Checkpoint& ckpt, std::initializer_list<ModelKind> kinds, const char* op) {
  for (auto k : kinds) {
    if (ckpt.config.kind == k) return;
  }
  throw UsageError(std::string(op) + ": checkpoint holds a " + std::string(model_kind_name(ckpt.config.kind)) +
                   " model");
}

TokenIds encode_storyline(const Vocabulary& vocab, const Storyline& line) {
  TokenIds ids;
  for (const auto& w : line.words) ids.push_back(vocab.id_of(w));
  return ids;
}

std::vector<TokenIds> encode_sentences(const Vocabulary& vocab, const Story& story) {
  std::vector<TokenIds> out;
  for (const auto& s : story.sentences) out.push_back(vocab.encode(s));
  return out;
}

TokenIds with_eos(TokenIds ids) {
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// Teacher-forced decoder NLL over `targets` starting from BOS.
void seq2seq_targets(Graph& g, const ParamSet& ps, const Seq2SeqNet& net, const TokenIds& source,
                     const TokenIds& targets, bool training, Rng& rng, std::vector<Var>& losses) {
  auto enc = net.encode(g, ps, source, training, rng);
  nn::LstmState state = enc.state;
  TokenId prev = Vocabulary::kBos;
  for (TokenId target : targets) {
    auto step = net.step(g, ps, enc.keys, prev, state, training, rng);
    losses.push_back(g.nll(step.logits, static_cast<std::size_t>(target)));
    state = step.state;
    prev = target;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDynPlan: return "dyn_plan";
    case ModelKind::kDynWrite: return "dyn_write";
    case ModelKind::kStaticPlan: return "static_plan";
    case ModelKind::kStaticWrite: return "static_write";
    case ModelKind::kIncS2S: return "inc_s2s";
    case ModelKind::kCondLm: return "cond_lm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : kAllModelKinds) {
    if (model_kind_name(k) == name) return k;
  }
  throw UsageError("unknown model kind '" + std::string(name) +
                   "' (expected dyn_plan, dyn_write, static_plan, static_write, inc_s2s or cond_lm)");
}

bool uses_storyline(ModelKind kind) { return kind != ModelKind::kIncS2S && kind != ModelKind::kCondLm; }

bool is_fusion_model(ModelKind kind) { return kind == ModelKind::kDynPlan || kind == ModelKind::kDynWrite; }

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1) throw UsageError("embedding and hidden dimensions must be >= 1");
  auto check = [](double d, const char* what) {
    if (!(d >= 0.0 && d <= 0.5)) throw UsageError(std::string(what) + " must lie in [0, 0.5]");
  };
  check(embed_dropout, "embedding dropout");
  check(hidden_dropout, "hidden dropout");
}

ModelConfig ModelConfig::published(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.embed_dim = 500;
  switch (kind) {
    case ModelKind::kIncS2S:
    case ModelKind::kDynPlan:
    case ModelKind::kDynWrite:
      c.hidden_dim = 500;
      c.embed_dropout = 0.0;
      c.hidden_dropout = 0.5;
      break;
    case ModelKind::kCondLm:
      c.hidden_dim = 1000;
      c.embed_dropout = 0.4;
      c.hidden_dropout = 0.4;
      break;
    case ModelKind::kStaticPlan:
      c.hidden_dim = 1000;
      c.embed_dropout = 0.4;
      c.hidden_dropout = 0.1;
      break;
    case ModelKind::kStaticWrite:
      c.hidden_dim = 1000;
      c.embed_dropout = 0.2;
      c.hidden_dropout = 0.1;
      break;
  }
  return c;
}

namespace {

ParamSet declared_params(const ModelConfig& config, std::size_t vocab_size) {
  ParamSet ps;
  if (is_fusion_model(config.kind)) {
    FusionNet{config, vocab_size}.declare(ps);
  } else {
    Seq2SeqNet{config, vocab_size}.declare(ps);
  }
  return ps;
}

std::string format_meta(const Checkpoint& c) {
  std::ostringstream out;
  out << "kind=" << model_kind_name(c.config.kind) << "\n"
      << "embed_dim=" << c.config.embed_dim << "\n"
      << "hidden_dim=" << c.config.hidden_dim << "\n"
      << "embed_dropout=" << format_double(c.config.embed_dropout) << "\n"
      << "hidden_dropout=" << format_double(c.config.hidden_dropout) << "\n"
      << "epochs=" << c.meta.epochs << "\n"
      << "final_train_nll=" << format_double(c.meta.final_train_nll) << "\n"
      << "final_valid_nll=" << format_double(c.meta.final_valid_nll) << "\n"
      << "seed=" << c.meta.seed << "\n"
      << "vocab_hash=" << c.vocab.content_hash() << "\n";
  return out.str();
}

std::map<std::string, std::string> parse_meta(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw DataError("checkpoint metadata line without '='");
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return kv;
}

}  // namespace

std::string Checkpoint::to_bytes() const {
  nn::CheckpointPayload payload;
  payload.vocabulary = vocab.tokens();
  payload.metadata = format_meta(*this);
  payload.params = params;
  return nn::encode_checkpoint(payload);
}

Checkpoint Checkpoint::from_bytes(std::string_view bytes) {
  auto payload = nn::decode_checkpoint(bytes);
  const auto& specials = Vocabulary::special_names();
  if (payload.vocabulary.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), payload.vocabulary.begin())) {
    throw DataError("checkpoint vocabulary does not start with the special tokens");
  }
  Checkpoint c;
  c.vocab = Vocabulary::from_tokens(Tokens(payload.vocabulary.begin() + specials.size(), payload.vocabulary.end()));
  const auto kv = parse_meta(payload.metadata);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("checkpoint metadata lacks ") + key);
    return it->second;
  };
  try {
    c.config.kind = parse_model_kind(get("kind"));
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  c.config.embed_dim = parse_uint(get("embed_dim"), "embed_dim");
  c.config.hidden_dim = parse_uint(get("hidden_dim"), "hidden_dim");
  c.config.embed_dropout = parse_double(get("embed_dropout"), "embed_dropout");
  c.config.hidden_dropout = parse_double(get("hidden_dropout"), "hidden_dropout");
  c.meta.epochs = parse_uint(get("epochs"), "epochs");
  c.meta.final_train_nll = parse_double(get("final_train_nll"), "final_train_nll");
  c.meta.final_valid_nll = parse_double(get("final_valid_nll"), "final_valid_nll");
  c.meta.seed = parse_uint(get("seed"), "seed");
  if (parse_uint(get("vocab_hash"), "vocab_hash") != c.vocab.content_hash()) {
    throw DataError("checkpoint vocabulary hash mismatch");
  }
  c.params = std::move(payload.params);
  validate_params(c);
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return from_bytes(read_file(path)); }

Checkpoint init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.vocab = vocab;
  c.params = declared_params(config, vocab.size());
  Rng rng(seed);
  c.params.init_uniform(rng, kInitScale);
  c.meta.seed = seed;
  c.meta.final_valid_nll = std::nan("");
  return c;
}

void validate_params(const Checkpoint& ckpt) {
  const ParamSet expected = declared_params(ckpt.config, ckpt.vocab.size());
  if (expected.size() != ckpt.params.size()) {
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameter tensors, architecture needs " +
                    std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    if (!ckpt.params.contains(name)) throw DataError("checkpoint lacks parameter " + name);
    if (ckpt.params.at(name).shape != t.shape) throw DataError("checkpoint parameter " + name + " has wrong shape");
  }
}

TokenIds build_context(const TokenIds& title, const std::vector<TokenIds>& sentences, std::size_t n_sentences) {
  if (n_sentences > sentences.size()) throw UsageError("build_context: not enough sentences");
  TokenIds ctx = title;
  for (std::size_t i = 0; i < n_sentences; ++i) {
    ctx.push_back(Vocabulary::kSep);
    ctx.insert(ctx.end(), sentences[i].begin(), sentences[i].end());
  }
  return ctx;
}

TokenIds static_writer_source(const TokenIds& title, const TokenIds& storyline) {
  if (storyline.size() != kSentencesPerStory) {
    throw UsageError("storyline must have exactly 5 words, got " + std::to_string(storyline.size()));
  }
  TokenIds src = title;
  src.push_back(Vocabulary::kEot);
  src.insert(src.end(), storyline.begin(), storyline.end());
  return src;
}

TokenIds story_stream(const std::vector<TokenIds>& sentences) {
  TokenIds out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out.push_back(Vocabulary::kSep);
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  out.push_back(Vocabulary::kEos);
  return out;
}

// --- Inference --------------------------------------------------------------

namespace {

struct FusionOutputs {
  Distribution dist;
  std::vector<double> gate;
};

FusionOutputs dyn_plan_forward(const Checkpoint& ckpt, const TokenIds& ctx, TokenId prev_word) {
  require_kind(ckpt, {ModelKind::kDynPlan, ModelKind::kDynWrite}, "dyn_plan_step");
  if (ctx.empty()) throw UsageError("dyn_plan_step: empty context");
  const FusionNet net{ckpt.config, ckpt.vocab.size()};
  Graph g(false);
  Rng rng(0);
  Var c = net.attn_context(g, ckpt.params, ctx, false, rng);
  Var h_w = net.cue_state(g, ckpt.params, c, prev_word, false, rng);
  Var h_y = net.decoder_step(g, ckpt.params, c, Vocabulary::kBos, nn::zeros(g, ckpt.config.hidden_dim), false, rng);
  auto fused = net.fuse(g, ckpt.params, h_y, h_w, false, rng);
  return {softmax_of(g, fused.logits), to_vec(g, fused.gate)};
}

}  // namespace

Distribution dyn_plan_step(const Checkpoint& ckpt, const TokenIds& ctx, TokenId prev_word) {
  return dyn_plan_forward(ckpt, ctx, prev_word).dist;
}

std::vector<double> dyn_plan_gate(const Checkpoint& ckpt, const TokenIds& ctx, TokenId prev_word) {
  return dyn_plan_forward(ckpt, ctx, prev_word).gate;
}

std::pair<Distribution, DynWriteState> dyn_write_step(const Checkpoint& ckpt, const TokenIds& ctx, TokenId cue,
                                                      TokenId prev_out, const DynWriteState& state) {
  require_kind(ckpt, {ModelKind::kDynWrite, ModelKind::kDynPlan}, "dyn_write_step");
  const FusionNet net{ckpt.config, ckpt.vocab.size()};
  const std::size_t hidden = ckpt.config.hidden_dim;
  Graph g(false);
  Rng rng(0);
  DynWriteState next;
  Var c, h_w, h;
  if (state.empty()) {
    if (ctx.empty()) throw UsageError("dyn_write_step: empty context");
    c = net.attn_context(g, ckpt.params, ctx, false, rng);
    h_w = net.cue_state(g, ckpt.params, c, cue, false, rng);
    h = nn::zeros(g, hidden);
    next.attn_context = to_vec(g, c);
    next.cue_state = to_vec(g, h_w);
  } else {
    next.attn_context = state.attn_context;
    next.cue_state = state.cue_state;
    c = g.vector(state.attn_context);
    h_w = g.vector(state.cue_state);
    h = g.vector(state.hidden);
  }
  Var h_y = net.decoder_step(g, ckpt.params, c, prev_out, h, false, rng);
  auto fused = net.fuse(g, ckpt.params, h_y, h_w, false, rng);
  next.hidden = to_vec(g, h_y);
  return {softmax_of(g, fused.logits), std::move(next)};
}

Seq2SeqState seq2seq_encode(const Checkpoint& ckpt, const TokenIds& source) {
  if (is_fusion_model(ckpt.config.kind)) throw UsageError("seq2seq_encode: checkpoint is a fusion model");
  if (source.empty()) throw UsageError("seq2seq_encode: empty source");
  const Seq2SeqNet net{ckpt.config, ckpt.vocab.size()};
  Graph g(false);
  Rng rng(0);
  auto enc = net.encode(g, ckpt.params, source, false, rng);
  Seq2SeqState s;
  s.steps = source.size();
  s.keys = to_vec(g, enc.keys.keys);
  s.projected = to_vec(g, enc.keys.projected);
  s.h = to_vec(g, enc.state.h);
  s.c = to_vec(g, enc.state.c);
  return s;
}

std::pair<Distribution, Seq2SeqState> seq2seq_step(const Checkpoint& ckpt, const Seq2SeqState& state,
                                                   TokenId prev) {
  if (state.empty()) throw UsageError("seq2seq_step: state was not encoded");
  const Seq2SeqNet net{ckpt.config, ckpt.vocab.size()};
  const std::size_t hidden = ckpt.config.hidden_dim;
  Graph g(false);
  Rng rng(0);
  nn::AdditiveAttention::Keys keys{g.constant(state.keys, state.steps, 2 * hidden),
                                   g.constant(state.projected, state.steps, hidden)};
  auto step = net.step(g, ckpt.params, keys, prev, {g.vector(state.h), g.vector(state.c)}, false, rng);
  Seq2SeqState next = state;
  next.h = to_vec(g, step.state.h);
  next.c = to_vec(g, step.state.c);
  return {softmax_of(g, step.logits), std::move(next)};
}

namespace {

Distribution run_prefix(const Checkpoint& ckpt, const TokenIds& source, const TokenIds& prefix) {
  auto state = seq2seq_encode(ckpt, source);
  TokenId prev = Vocabulary::kBos;
  for (TokenId t : prefix) {
    state = seq2seq_step(ckpt, state, prev).second;
    prev = t;
  }
  return seq2seq_step(ckpt, state, prev).first;
}

}  // namespace

Distribution static_plan_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& storyline_prefix) {
  require_kind(ckpt, {ModelKind::kStaticPlan}, "static_plan_step");
  if (title.empty()) throw UsageError("static_plan_step: empty title");
  return run_prefix(ckpt, title, storyline_prefix);
}

Distribution static_write_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& storyline,
                               const TokenIds& story_prefix) {
  require_kind(ckpt, {ModelKind::kStaticWrite}, "static_write_step");
  return run_prefix(ckpt, static_writer_source(title, storyline), story_prefix);
}

Distribution incs2s_step(const Checkpoint& ckpt, const TokenIds& context, const TokenIds& sentence_prefix) {
  require_kind(ckpt, {ModelKind::kIncS2S}, "incs2s_step");
  if (context.empty()) throw UsageError("incs2s_step: empty context");
  return run_prefix(ckpt, context, sentence_prefix);
}

Distribution condlm_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& story_prefix) {
  require_kind(ckpt, {ModelKind::kCondLm}, "condlm_step");
  if (title.empty()) throw UsageError("condlm_step: empty title");
  return run_prefix(ckpt, title, story_prefix);
}

// --- Training ---------------------------------------------------------------

std::vector<Example> make_examples(const std::vector<std::pair<Story, Storyline>>& pairs) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& [s, l] : pairs) out.push_back({s, l});
  return out;
}

std::vector<Example> make_examples(const std::vector<Story>& stories) {
  std::vector<Example> out;
  out.reserve(stories.size());
  for (const auto& s : stories) out.push_back({s, std::nullopt});
  return out;
}

ExampleLoss example_loss(Graph& g, const Checkpoint& ckpt, const ParamSet& ps, const Example& ex, bool training,
                         Rng& rng) {
  const ModelKind kind = ckpt.config.kind;
  if (uses_storyline(kind) && !ex.storyline) {
    throw DataError(std::string(model_kind_name(kind)) + " needs a storyline for every story");
  }
  const Vocabulary& vocab = ckpt.vocab;
  const TokenIds title = vocab.encode(ex.story.title);
  const auto sentences = encode_sentences(vocab, ex.story);
  std::vector<Var> losses;

  if (is_fusion_model(kind)) {
    const FusionNet net{ckpt.config, vocab.size()};
    const TokenIds line = encode_storyline(vocab, *ex.storyline);
    for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
      const TokenIds ctx = build_context(title, sentences, i);
      Var c = net.attn_context(g, ps, ctx, training, rng);
      if (kind == ModelKind::kDynPlan) {
        const TokenId prev = i == 0 ? Vocabulary::kBos : line[i - 1];
        Var h_w = net.cue_state(g, ps, c, prev, training, rng);
        Var h_y = net.decoder_step(g, ps, c, Vocabulary::kBos, nn::zeros(g, ckpt.config.hidden_dim), training, rng);
        losses.push_back(g.nll(net.fuse(g, ps, h_y, h_w, training, rng).logits, static_cast<std::size_t>(line[i])));
      } else {
        Var h_w = net.cue_state(g, ps, c, line[i], training, rng);
        Var h = nn::zeros(g, ckpt.config.hidden_dim);
        TokenId prev = Vocabulary::kBos;
        for (TokenId target : with_eos(sentences[i])) {
          h = net.decoder_step(g, ps, c, prev, h, training, rng);
          losses.push_back(g.nll(net.fuse(g, ps, h, h_w, training, rng).logits, static_cast<std::size_t>(target)));
          prev = target;
        }
      }
    }
  } else {
    const Seq2SeqNet net{ckpt.config, vocab.size()};
    switch (kind) {
      case ModelKind::kStaticPlan:
        seq2seq_targets(g, ps, net, title, encode_storyline(vocab, *ex.storyline), training, rng, losses);
        break;
      case ModelKind::kStaticWrite:
        seq2seq_targets(g, ps, net, static_writer_source(title, encode_storyline(vocab, *ex.storyline)),
                        story_stream(sentences), training, rng, losses);
        break;
      case ModelKind::kIncS2S:
        for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
          seq2seq_targets(g, ps, net, build_context(title, sentences, i), with_eos(sentences[i]), training, rng,
                          losses);
        }
        break;
      case ModelKind::kCondLm:
        seq2seq_targets(g, ps, net, title, story_stream(sentences), training, rng, losses);
        break;
      default:
        break;
    }
  }
  return {g.sum(losses), losses.size()};
}

double evaluate_nll(const Checkpoint& ckpt, const std::vector<Example>& data) {
  if (data.empty()) return std::nan("");
  double total = 0.0;
  std::size_t tokens = 0;
  Rng rng(0);
  for (const auto& ex : data) {
    Graph g(false);
    auto loss = example_loss(g, ckpt, ckpt.params, ex, false, rng);
    total += g.scalar(loss.total);
    tokens += loss.tokens;
  }
  return total / static_cast<double>(tokens);
}

TrainResult train(const std::vector<Example>& train_data, const std::vector<Example>& valid_data,
                  const ModelConfig& config, const Vocabulary& vocab, const TrainOptions& options) {
  if (train_data.empty()) throw DataError("training set is empty");
  if (uses_storyline(config.kind)) {
    for (const auto& ex : train_data) {
      if (!ex.storyline) throw DataError(std::string(model_kind_name(config.kind)) + " requires storylines");
    }
  }
  if (!(options.lr > 0.0)) throw UsageError("learning rate must be positive");

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt = init_model(config, vocab, options.seed);
  Rng order_rng(Rng::mix(options.seed, 1));
  Rng dropout_rng(Rng::mix(options.seed, 2));
  const bool has_valid = !valid_data.empty();

  double lr = options.lr;
  const double train0 = evaluate_nll(ckpt, train_data);
  const double valid0 = has_valid ? evaluate_nll(ckpt, valid_data) : std::nan("");
  result.curve.push_back({0, train0, valid0, lr});
  double best = has_valid ? valid0 : train0;
  ParamSet best_params = ckpt.params;

  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  ckpt.params.zero_grad();

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    order_rng.shuffle(order);
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t idx : order) {
      Graph g(true);
      auto loss = example_loss(g, ckpt, ckpt.params, train_data[idx], true, dropout_rng);
      Var mean = g.scale(loss.total, 1.0 / static_cast<double>(loss.tokens));
      g.backward(mean);
      g.accumulate_param_grads(ckpt.params);
      nn::sgd_step(ckpt.params, lr, options.clip);
      total += g.scalar(loss.total);
      tokens += loss.tokens;
    }
    const double train_nll = total / static_cast<double>(tokens);
    const double valid_nll = has_valid ? evaluate_nll(ckpt, valid_data) : std::nan("");
    result.curve.push_back({epoch, train_nll, valid_nll, lr});
    // Without held-out data the rate stays fixed: per-story SGD makes the
    // running train loss too noisy to detect a plateau.
    if (has_valid) {
      if (valid_nll < best) {
        best = valid_nll;
        best_params = ckpt.params;
      } else {
        lr *= options.lr_decay;
      }
    }
    if (options.stop_below > 0.0 && train_nll < options.stop_below) break;
  }
  if (has_valid) ckpt.params = std::move(best_params);
  for (auto& [name, t] : ckpt.params) t.grad.clear();
  ckpt.params.round_to_float();
  const auto& last = result.curve.back();
  ckpt.meta.epochs = last.epoch;
  ckpt.meta.final_train_nll = last.train_nll;
  ckpt.meta.final_valid_nll = has_valid ? best : std::nan("");
  return result;
}

std::string format_loss_csv(const std::vector<EpochLoss>& curve) {
  std::string out = "epoch,train_nll,valid_nll\n";
  for (const auto& e : curve) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_nll) + "," + format_double(e.valid_nll) + "\n";
  }
  return out;
}

}  // namespace planwrite
