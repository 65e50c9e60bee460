#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "planwrite/corpus.hpp"

namespace planwrite {

struct Storyline {
  std::array<std::string, kSentencesPerStory> words;

  bool operator==(const Storyline&) const = default;
};

/// Lowercase stopwords. Punctuation tokens are phrase delimiters on their
/// own and may not appear in the set.
class Stoplist {
 public:
  /// The bundled SMART list.
  Stoplist();
  explicit Stoplist(const std::vector<std::string>& words);

  /// One word per line; blank lines and lines starting with '#' ignored.
  static Stoplist from_file(const std::filesystem::path& path);

  bool contains(std::string_view word) const { return words_.count(std::string(word)) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

const std::vector<std::string>& default_stopwords();

/// RAKE word scores deg(w)/freq(w) over the sentence's candidate phrases
/// (maximal runs of non-stopword, non-punctuation tokens). deg(w) counts
/// co-occurrences of w with every word of each phrase it appears in,
/// itself included.
std::map<std::string, double> rake_word_scores(const Tokens& sentence, const Stoplist& stoplist);

/// Highest-scoring word of each sentence; ties go to the earliest position.
/// A sentence with no candidate words contributes its first
/// non-punctuation token (or first token).
Storyline extract_storyline(const Story& story, const Stoplist& stoplist);

std::vector<std::pair<Story, Storyline>> extract_corpus(const std::vector<Story>& stories,
                                                        const Stoplist& stoplist);

// Storyline TSV: "title<TAB>w1 w2 w3 w4 w5", title tokens space-joined.
std::string format_storyline_tsv(const std::vector<std::pair<Story, Storyline>>& pairs);

struct StorylineRecord {
  std::string title;
  Storyline storyline;
};
std::vector<StorylineRecord> parse_storyline_tsv(std::string_view text);

/// Pairs stories with TSV records by position; titles must agree.
std::vector<std::pair<Story, Storyline>> attach_storylines(const std::vector<Story>& stories,
                                                          const std::vector<StorylineRecord>& records);

}  // namespace planwrite
