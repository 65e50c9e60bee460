#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace planwrite {

using Tokens = std::vector<std::string>;
using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr std::size_t kSentencesPerStory = 5;

struct Story {
  std::string id;
  Tokens title;
  std::array<Tokens, kSentencesPerStory> sentences;
};

/// Lowercases, splits on whitespace and isolates the marks . , ! ? ' " ; :
/// as single-character tokens. Never produces empty tokens.
Tokens tokenize(std::string_view text);

/// Space-joins tokens.
std::string detokenize(const Tokens& tokens);

/// True when the token contains no letter or digit.
bool is_punctuation(std::string_view token);

/// Parses a CSV with header and seven fields per record:
/// storyid,storytitle,sentence1,...,sentence5 (RFC-4180 quoting).
/// Throws DataError naming the offending line.
std::vector<Story> load_corpus(const std::filesystem::path& path);
std::vector<Story> parse_corpus(std::string_view csv_text);

/// Writes stories back in the same CSV format (tokens space-joined).
std::string format_corpus(const std::vector<Story>& stories);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kEot = 4;
  static constexpr TokenId kSep = 5;
  static constexpr std::size_t kNumSpecials = 6;

  /// Specials only.
  Vocabulary();

  /// Specials followed by `tokens` in order. Throws DataError on duplicates
  /// or on a token spelled like a special.
  static Vocabulary from_tokens(const Tokens& tokens);

  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(kNumSpecials); }
  static const std::array<std::string, kNumSpecials>& special_names();

  /// Id of an ordinary token; UNK when absent. Text spelled like a special
  /// never resolves to that special.
  TokenId id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token_of(TokenId id) const;
  std::size_t size() const { return id_to_token_.size(); }

  TokenIds encode(const Tokens& tokens) const;
  Tokens decode(const TokenIds& ids) const;

  /// FNV-1a 64 over the tokens, each followed by a newline.
  std::uint64_t content_hash() const;

  /// One token per line, specials first; line index equals id.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);

  const Tokens& tokens() const { return id_to_token_; }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  Tokens id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Every title and sentence token with frequency >= min_freq, ids assigned by
/// descending frequency then lexicographic order.
Vocabulary build_vocab(const std::vector<Story>& stories, std::size_t min_freq = 1);

struct CorpusSplit {
  std::vector<Story> train;
  std::vector<Story> valid;
  std::vector<Story> test;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

/// Seeded shuffle then 8:1:1; remainder goes to train. Needs >= 10 items.
SplitIndices split_indices(std::size_t n, std::uint64_t seed);

/// split_indices applied to a story list.
CorpusSplit split_corpus(const std::vector<Story>& stories, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace planwrite
