#include "planwrite/decode.hpp"

#include <cmath>
#include <functional>

#include <json.hpp>

#include "planwrite/error.hpp"

namespace planwrite {

namespace {

std::vector<bool> sentence_mask(std::size_t vocab_size) {
  std::vector<bool> allowed(vocab_size, true);
  allowed[Vocabulary::kPad] = false;
  allowed[Vocabulary::kUnk] = false;
  allowed[Vocabulary::kBos] = false;
  allowed[Vocabulary::kEot] = false;
  return allowed;
}

void require_kind(const Checkpoint& c, ModelKind kind, const char* role) {
  if (c.config.kind != kind) {
    throw UsageError(std::string(role) + " checkpoint must be " + std::string(model_kind_name(kind)) + ", got " +
                     std::string(model_kind_name(c.config.kind)));
  }
}

Tokens decode_ids(const Vocabulary& vocab, const TokenIds& ids) { return vocab.decode(ids); }

}  // namespace

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "sample") return DecodeMode::kSample;
  throw UsageError("unknown decode mode '" + std::string(name) + "' (expected greedy or sample)");
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  if (max_sentence_len < 1) throw UsageError("max sentence length must be >= 1");
  if (storyline_len != kSentencesPerStory) throw UsageError("storylines have exactly 5 words");
}

TokenId pick_token(std::span<const double> dist, const std::vector<bool>& allowed, DecodeMode mode,
                   double temperature, nn::Rng& rng) {
  if (allowed.size() != dist.size()) throw UsageError("pick_token: mask size differs from distribution");
  if (mode == DecodeMode::kGreedy) {
    TokenId best = -1;
    double best_p = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (!allowed[i] || !(dist[i] > 0.0)) continue;
      if (best < 0 || dist[i] > best_p) {
        best = static_cast<TokenId>(i);
        best_p = dist[i];
      }
    }
    if (best < 0) throw NumericError("no allowed token has probability mass");
    return best;
  }
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  // p^(1/T) computed in log space relative to the largest allowed entry.
  double max_log = -INFINITY;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (allowed[i] && dist[i] > 0.0) max_log = std::max(max_log, std::log(dist[i]));
  }
  if (max_log == -INFINITY) throw NumericError("no allowed token has probability mass");
  std::vector<double> w(dist.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (allowed[i] && dist[i] > 0.0) {
      w[i] = std::exp((std::log(dist[i]) - max_log) / temperature);
      total += w[i];
    }
  }
  double u = rng.uniform() * total;
  TokenId last = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last = static_cast<TokenId>(i);
    if (u < w[i]) return last;
    u -= w[i];
  }
  return last;
}

TokenId constrained_next(std::span<const double> dist, const std::set<TokenId>& forbidden, DecodeMode mode,
                         double temperature, nn::Rng& rng) {
  std::vector<bool> allowed(dist.size(), true);
  for (std::size_t i = 0; i < Vocabulary::kNumSpecials && i < dist.size(); ++i) allowed[i] = false;
  for (TokenId f : forbidden) {
    if (f >= 0 && static_cast<std::size_t>(f) < dist.size()) allowed[static_cast<std::size_t>(f)] = false;
  }
  return pick_token(dist, allowed, mode, temperature, rng);
}

void require_shared_vocab(const Checkpoint& a, const Checkpoint& b) {
  if (a.vocab.content_hash() != b.vocab.content_hash()) {
    throw DataError("planner and writer vocabularies differ (hash " + std::to_string(a.vocab.content_hash()) +
                    " vs " + std::to_string(b.vocab.content_hash()) + ")");
  }
}

std::array<Tokens, kSentencesPerStory> split_story_stream(const Tokens& stream, std::size_t& repairs) {
  const std::string& sep = Vocabulary::special_names()[Vocabulary::kSep];
  std::vector<Tokens> parts(1);
  for (const auto& t : stream) {
    if (t == sep) {
      parts.emplace_back();
    } else {
      parts.back().push_back(t);
    }
  }
  std::array<Tokens, kSentencesPerStory> out;
  if (parts.size() > kSentencesPerStory) repairs += parts.size() - kSentencesPerStory;
  for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
    if (i < parts.size() && !parts[i].empty()) {
      out[i] = std::move(parts[i]);
    } else {
      out[i] = {"."};
      ++repairs;
    }
  }
  return out;
}

namespace {

// Decodes with `step` until a terminator or `max_len` tokens.
template <typename StepFn>
TokenIds decode_until_end(StepFn&& step, std::size_t vocab_size, std::size_t max_len, const DecodeConfig& cfg,
                          nn::Rng& rng) {
  const auto allowed = sentence_mask(vocab_size);
  TokenIds out;
  TokenId prev = Vocabulary::kBos;
  while (out.size() < max_len) {
    const Distribution dist = step(prev);
    const TokenId next = pick_token(dist, allowed, cfg.mode, cfg.temperature, rng);
    if (next == Vocabulary::kEos || next == Vocabulary::kSep) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

// Decodes a SEP-delimited story stream. A sentence reaching the length cap
// gets a forced SEP (one repair); a sixth sentence or EOS ends the stream.
TokenIds decode_stream(const std::function<Distribution(TokenId)>& step, std::size_t vocab_size,
                       const DecodeConfig& cfg, nn::Rng& rng, std::size_t& repairs) {
  const auto allowed = sentence_mask(vocab_size);
  TokenIds out;
  TokenId prev = Vocabulary::kBos;
  std::size_t current = 0, boundaries = 0;
  while (true) {
    TokenId next = pick_token(step(prev), allowed, cfg.mode, cfg.temperature, rng);
    if (next == Vocabulary::kEos) break;
    if (next != Vocabulary::kSep && current == cfg.max_sentence_len) {
      next = Vocabulary::kSep;
      ++repairs;
    }
    if (next == Vocabulary::kSep) {
      if (boundaries + 1 == kSentencesPerStory) break;
      ++boundaries;
      current = 0;
    } else {
      ++current;
    }
    out.push_back(next);
    prev = next;
  }
  return out;
}

Tokens finish_sentence(const Vocabulary& vocab, const TokenIds& ids, std::size_t& repairs) {
  if (ids.empty()) {
    ++repairs;
    return {"."};
  }
  return decode_ids(vocab, ids);
}

TokenIds plan_storyline_words(const DecodeConfig& cfg, nn::Rng& rng,
                              const std::function<Distribution(const TokenIds& prefix)>& next_dist) {
  TokenIds line;
  std::set<TokenId> forbidden;
  for (std::size_t i = 0; i < cfg.storyline_len; ++i) {
    const TokenId w = constrained_next(next_dist(line), cfg.no_repeat ? forbidden : std::set<TokenId>{}, cfg.mode,
                                       cfg.temperature, rng);
    line.push_back(w);
    forbidden.insert(w);
  }
  return line;
}

}  // namespace

GeneratedStory generate_dynamic(const Tokens& title, const Checkpoint& planner, const Checkpoint& writer,
                                const DecodeConfig& cfg) {
  cfg.validate();
  require_kind(planner, ModelKind::kDynPlan, "planner");
  require_kind(writer, ModelKind::kDynWrite, "writer");
  require_shared_vocab(planner, writer);
  if (title.empty()) throw UsageError("empty title");
  const Vocabulary& vocab = planner.vocab;
  nn::Rng rng(cfg.seed);
  GeneratedStory story;
  story.title = title;
  story.schema = "dynamic";
  const TokenIds title_ids = vocab.encode(title);
  std::vector<TokenIds> written;
  std::set<TokenId> forbidden;
  TokenId prev_word = Vocabulary::kBos;
  for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
    const TokenIds ctx = build_context(title_ids, written, i);
    const TokenId word = constrained_next(dyn_plan_step(planner, ctx, prev_word),
                                          cfg.no_repeat ? forbidden : std::set<TokenId>{}, cfg.mode,
                                          cfg.temperature, rng);
    forbidden.insert(word);
    story.storyline.push_back(vocab.token_of(word));
    DynWriteState state;
    auto step = [&](TokenId prev) {
      auto [dist, next] = dyn_write_step(writer, ctx, word, prev, state);
      state = std::move(next);
      return dist;
    };
    TokenIds sentence = decode_until_end(step, vocab.size(), cfg.max_sentence_len, cfg, rng);
    story.sentences[i] = finish_sentence(vocab, sentence, story.repairs);
    if (sentence.empty()) sentence = vocab.encode(story.sentences[i]);
    written.push_back(std::move(sentence));
    prev_word = word;
  }
  return story;
}

GeneratedStory generate_static(const Tokens& title, const Checkpoint& planner, const Checkpoint& writer,
                               const DecodeConfig& cfg) {
  cfg.validate();
  require_kind(planner, ModelKind::kStaticPlan, "planner");
  require_kind(writer, ModelKind::kStaticWrite, "writer");
  require_shared_vocab(planner, writer);
  if (title.empty()) throw UsageError("empty title");
  const Vocabulary& vocab = planner.vocab;
  nn::Rng rng(cfg.seed);
  GeneratedStory story;
  story.title = title;
  story.schema = "static";
  const TokenIds title_ids = vocab.encode(title);

  Seq2SeqState plan_state = seq2seq_encode(planner, title_ids);
  const TokenIds line = plan_storyline_words(cfg, rng, [&](const TokenIds& prefix) {
    const TokenId prev = prefix.empty() ? Vocabulary::kBos : prefix.back();
    auto [dist, next] = seq2seq_step(planner, plan_state, prev);
    plan_state = std::move(next);
    return dist;
  });
  for (TokenId w : line) story.storyline.push_back(vocab.token_of(w));

  Seq2SeqState state = seq2seq_encode(writer, static_writer_source(title_ids, line));
  auto step = [&](TokenId prev) {
    auto [dist, next] = seq2seq_step(writer, state, prev);
    state = std::move(next);
    return dist;
  };
  const TokenIds stream = decode_stream(step, vocab.size(), cfg, rng, story.repairs);
  story.sentences = split_story_stream(decode_ids(vocab, stream), story.repairs);
  return story;
}

GeneratedStory generate_baseline(const Tokens& title, const Checkpoint& model, const DecodeConfig& cfg) {
  cfg.validate();
  if (title.empty()) throw UsageError("empty title");
  const Vocabulary& vocab = model.vocab;
  nn::Rng rng(cfg.seed);
  GeneratedStory story;
  story.title = title;
  const TokenIds title_ids = vocab.encode(title);
  if (model.config.kind == ModelKind::kIncS2S) {
    story.schema = "inc_s2s";
    std::vector<TokenIds> written;
    for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
      Seq2SeqState state = seq2seq_encode(model, build_context(title_ids, written, i));
      auto step = [&](TokenId prev) {
        auto [dist, next] = seq2seq_step(model, state, prev);
        state = std::move(next);
        return dist;
      };
      TokenIds sentence = decode_until_end(step, vocab.size(), cfg.max_sentence_len, cfg, rng);
      story.sentences[i] = finish_sentence(vocab, sentence, story.repairs);
      if (sentence.empty()) sentence = vocab.encode(story.sentences[i]);
      written.push_back(std::move(sentence));
    }
    return story;
  }
  if (model.config.kind == ModelKind::kCondLm) {
    story.schema = "cond_lm";
    Seq2SeqState state = seq2seq_encode(model, title_ids);
    auto step = [&](TokenId prev) {
      auto [dist, next] = seq2seq_step(model, state, prev);
      state = std::move(next);
      return dist;
    };
    const TokenIds stream = decode_stream(step, vocab.size(), cfg, rng, story.repairs);
    story.sentences = split_story_stream(decode_ids(vocab, stream), story.repairs);
    return story;
  }
  throw UsageError("baseline generation needs an inc_s2s or cond_lm checkpoint, got " +
                   std::string(model_kind_name(model.config.kind)));
}

std::string to_json_line(const GeneratedStory& story) {
  nlohmann::ordered_json j;
  j["title"] = detokenize(story.title);
  j["storyline"] = story.storyline;
  auto sentences = nlohmann::ordered_json::array();
  for (const auto& s : story.sentences) sentences.push_back(detokenize(s));
  j["sentences"] = std::move(sentences);
  j["schema"] = story.schema;
  j["repairs"] = story.repairs;
  return j.dump();
}

GeneratedStory parse_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("story record is not a JSON object");
  GeneratedStory story;
  try {
    story.title = tokenize(j.at("title").get<std::string>());
    if (j.contains("storyline")) story.storyline = j.at("storyline").get<std::vector<std::string>>();
    const auto sentences = j.at("sentences").get<std::vector<std::string>>();
    if (sentences.size() != kSentencesPerStory) {
      throw DataError("story has " + std::to_string(sentences.size()) + " sentences, expected 5");
    }
    for (std::size_t i = 0; i < kSentencesPerStory; ++i) story.sentences[i] = tokenize(sentences[i]);
    if (j.contains("schema")) story.schema = j.at("schema").get<std::string>();
    if (j.contains("repairs")) story.repairs = j.at("repairs").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad story record: ") + e.what());
  }
  if (!story.storyline.empty() && story.storyline.size() != kSentencesPerStory) {
    throw DataError("storyline must have 5 words");
  }
  return story;
}

std::vector<GeneratedStory> parse_jsonl(std::string_view text) {
  std::vector<GeneratedStory> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    ++line_no;
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace planwrite
