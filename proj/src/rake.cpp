#include "planwrite/rake.hpp"

#include <algorithm>

#include "planwrite/error.hpp"

namespace planwrite {

Stoplist::Stoplist() : Stoplist(default_stopwords()) {}

Stoplist::Stoplist(const std::vector<std::string>& words) {
  for (const auto& w : words) {
    if (w.empty()) continue;
    if (is_punctuation(w)) throw DataError("stoplist entry is punctuation: " + w);
    for (auto& t : tokenize(w)) {
      if (!is_punctuation(t)) words_.insert(std::move(t));
    }
  }
  if (words_.empty()) throw DataError("stoplist is empty");
}

Stoplist Stoplist::from_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (!line.empty() && line[0] != '#') words.push_back(std::move(line));
    start = end + 1;
  }
  return Stoplist(words);
}

std::map<std::string, double> rake_word_scores(const Tokens& sentence, const Stoplist& stoplist) {
  std::map<std::string, double> degree;
  std::map<std::string, double> freq;
  std::size_t i = 0;
  while (i < sentence.size()) {
    if (is_punctuation(sentence[i]) || stoplist.contains(sentence[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < sentence.size() && !is_punctuation(sentence[j]) && !stoplist.contains(sentence[j])) ++j;
    const auto phrase_len = static_cast<double>(j - i);
    for (std::size_t k = i; k < j; ++k) {
      degree[sentence[k]] += phrase_len;
      freq[sentence[k]] += 1.0;
    }
    i = j;
  }
  std::map<std::string, double> scores;
  for (const auto& [word, deg] : degree) scores[word] = deg / freq[word];
  return scores;
}

Storyline extract_storyline(const Story& story, const Stoplist& stoplist) {
  Storyline line;
  for (std::size_t s = 0; s < kSentencesPerStory; ++s) {
    const Tokens& sentence = story.sentences[s];
    const auto scores = rake_word_scores(sentence, stoplist);
    std::string best;
    double best_score = 0.0;
    for (const auto& tok : sentence) {
      const auto it = scores.find(tok);
      if (it == scores.end()) continue;
      if (best.empty() || it->second > best_score) {
        best = tok;
        best_score = it->second;
      }
    }
    if (best.empty()) {
      const auto it = std::find_if(sentence.begin(), sentence.end(),
                                   [](const std::string& t) { return !is_punctuation(t); });
      best = it != sentence.end() ? *it : sentence.front();
    }
    line.words[s] = std::move(best);
  }
  return line;
}

std::vector<std::pair<Story, Storyline>> extract_corpus(const std::vector<Story>& stories,
                                                        const Stoplist& stoplist) {
  std::vector<std::pair<Story, Storyline>> out;
  out.reserve(stories.size());
  for (const auto& s : stories) out.emplace_back(s, extract_storyline(s, stoplist));
  return out;
}

std::string format_storyline_tsv(const std::vector<std::pair<Story, Storyline>>& pairs) {
  std::string out;
  for (const auto& [story, line] : pairs) {
    out += detokenize(story.title);
    out.push_back('\t');
    for (std::size_t i = 0; i < line.words.size(); ++i) {
      if (i) out.push_back(' ');
      out += line.words[i];
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<StorylineRecord> parse_storyline_tsv(std::string_view text) {
  std::vector<StorylineRecord> records;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    ++line_no;
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw DataError("storylines line " + std::to_string(line_no) + ": missing tab");
    }
    StorylineRecord rec;
    rec.title = std::string(line.substr(0, tab));
    std::vector<std::string> words;
    std::string_view rest = line.substr(tab + 1);
    std::size_t p = 0;
    while (p < rest.size()) {
      while (p < rest.size() && rest[p] == ' ') ++p;
      std::size_t q = p;
      while (q < rest.size() && rest[q] != ' ') ++q;
      if (q > p) words.emplace_back(rest.substr(p, q - p));
      p = q;
    }
    if (words.size() != kSentencesPerStory) {
      throw DataError("storylines line " + std::to_string(line_no) + ": expected 5 words, found " +
                      std::to_string(words.size()));
    }
    std::copy(words.begin(), words.end(), rec.storyline.words.begin());
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<std::pair<Story, Storyline>> attach_storylines(const std::vector<Story>& stories,
                                                          const std::vector<StorylineRecord>& records) {
  if (stories.size() != records.size()) {
    throw DataError("corpus has " + std::to_string(stories.size()) + " stories but storylines file has " +
                    std::to_string(records.size()) + " lines");
  }
  std::vector<std::pair<Story, Storyline>> out;
  out.reserve(stories.size());
  for (std::size_t i = 0; i < stories.size(); ++i) {
    if (detokenize(stories[i].title) != records[i].title) {
      throw DataError("storylines line " + std::to_string(i + 1) + ": title '" + records[i].title +
                      "' does not match story title '" + detokenize(stories[i].title) + "'");
    }
    out.emplace_back(stories[i], records[i].storyline);
  }
  return out;
}

}  // namespace planwrite
