#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "planwrite/corpus.hpp"
#include "planwrite/models.hpp"
#include "planwrite/nn/rng.hpp"

namespace planwrite {

enum class DecodeMode { kGreedy, kSample };

DecodeMode parse_decode_mode(std::string_view name);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kGreedy;
  double temperature = 1.0;
  std::size_t max_sentence_len = 20;
  std::size_t storyline_len = kSentencesPerStory;
  std::uint64_t seed = 0;
  bool no_repeat = true;  // forbid a storyline word from appearing twice

  void validate() const;
};

/// Picks a token from `dist` after zeroing every id with mask[id] == false and
/// renormalizing. Greedy ties go to the lowest id. Throws NumericError when
/// no allowed id carries positive mass.
TokenId pick_token(std::span<const double> dist, const std::vector<bool>& allowed, DecodeMode mode,
                   double temperature, nn::Rng& rng);

/// Storyline word choice: specials and `forbidden` are masked out.
TokenId constrained_next(std::span<const double> dist, const std::set<TokenId>& forbidden, DecodeMode mode,
                         double temperature, nn::Rng& rng);

struct GeneratedStory {
  Tokens title;
  std::vector<std::string> storyline;  // empty for baselines
  std::array<Tokens, kSentencesPerStory> sentences;
  std::string schema;
  std::size_t repairs = 0;
};

/// Interleaves planning and writing: word i from the dynamic planner, then
/// sentence i from the dynamic writer cued on it.
GeneratedStory generate_dynamic(const Tokens& title, const Checkpoint& planner, const Checkpoint& writer,
                                const DecodeConfig& cfg);

/// Plans all five words first, then writes one SEP-delimited story stream.
GeneratedStory generate_static(const Tokens& title, const Checkpoint& planner, const Checkpoint& writer,
                               const DecodeConfig& cfg);

/// inc_s2s: five next-sentence decodes; cond_lm: one stream split on SEP.
GeneratedStory generate_baseline(const Tokens& title, const Checkpoint& model, const DecodeConfig& cfg);

/// Splits a decoded stream into exactly five sentences. Extra sentences are
/// dropped, missing or empty ones become ".", and each fix adds one repair.
std::array<Tokens, kSentencesPerStory> split_story_stream(const Tokens& stream, std::size_t& repairs);

/// {"title", "storyline":[..], "sentences":[..], "schema", "repairs"}; text
/// fields hold space-joined tokens.
std::string to_json_line(const GeneratedStory& story);
/// Throws DataError on malformed JSON or a sentence count other than five.
GeneratedStory parse_json_line(std::string_view line);
std::vector<GeneratedStory> parse_jsonl(std::string_view text);

/// Throws DataError when planner and writer vocabularies differ.
void require_shared_vocab(const Checkpoint& a, const Checkpoint& b);

}  // namespace planwrite
