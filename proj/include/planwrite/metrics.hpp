#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "planwrite/corpus.hpp"

namespace planwrite {

using StorySentences = std::array<Tokens, kSentencesPerStory>;

/// Contiguous n-grams with multiplicity; keys are tokens joined by '\x1f'.
std::unordered_map<std::string, std::size_t> ngrams(const Tokens& tokens, std::size_t n);

/// 1 - distinct/total over the pooled n-grams of every story's sentence at
/// `position` (1-based). Throws DataError when that pool has no n-grams.
double inter_rep(std::span<const StorySentences> stories, std::size_t position, std::size_t n = 3);

/// Mean over stories of sum_{k<i} |D(s_i) & D(s_k)| / ((i-1) |D(s_i)|), with
/// D the distinct n-gram set. Position 1 is 0; a story whose sentence i has
/// no n-grams contributes 0.
double intra_rep(std::span<const StorySentences> stories, std::size_t position, std::size_t n = 3);

struct RepetitionReport {
  std::size_t n = 3;
  std::array<double, kSentencesPerStory> inter{};
  std::array<double, kSentencesPerStory> intra{};
  double inter_agg = 0.0;  // pooled over every sentence of every story
  double intra_agg = 0.0;  // mean of the per-position intra rates
};

RepetitionReport rep_aggregate(std::span<const StorySentences> stories, std::size_t n = 3);

/// Corpus BLEU-1..max_n as percentages: clipped n-gram precision summed over
/// the corpus, geometric mean, brevity penalty exp(1 - r/c) when c < r.
std::vector<double> bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references,
                         std::size_t max_n = 4);

/// Word vectors read from "token v1 ... vd" lines (a two-field word2vec
/// header line is skipped). Unknown tokens map to the "<unk>" vector when
/// the table has one, else to zeros.
class EmbeddingTable {
 public:
  static EmbeddingTable from_text(std::string_view text);
  static EmbeddingTable load(const std::filesystem::path& path);

  void add(const std::string& token, std::vector<double> vec);
  std::span<const double> lookup(const std::string& token) const;
  bool contains(const std::string& token) const { return vectors_.count(token) > 0; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::vector<double> zeros_;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Mean over storyline positions of the best cosine between the word and any
/// token of its sentence; empty sentences score 0.
double greedy_match(std::span<const std::string> storyline, const StorySentences& story,
                    const EmbeddingTable& table);

/// Fraction of storyline words appearing anywhere in the story.
double usage_rate(std::span<const std::string> storyline, const StorySentences& story);

/// Five sentences concatenated.
Tokens flatten(const StorySentences& story);

}  // namespace planwrite
