#include "planwrite/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "planwrite/error.hpp"
#include "planwrite/text_util.hpp"

namespace planwrite {

namespace {

void check_order(std::size_t n) {
  if (n < 1) throw UsageError("n-gram order must be >= 1");
}

void check_position(std::size_t position) {
  if (position < 1 || position > kSentencesPerStory) {
    throw UsageError("sentence position must be in 1..5, got " + std::to_string(position));
  }
}

std::string ngram_key(const Tokens& tokens, std::size_t start, std::size_t n) {
  std::string key = tokens[start];
  for (std::size_t k = 1; k < n; ++k) {
    key.push_back('\x1f');
    key += tokens[start + k];
  }
  return key;
}

std::unordered_set<std::string> distinct_ngrams(const Tokens& tokens, std::size_t n) {
  std::unordered_set<std::string> out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) out.insert(ngram_key(tokens, i, n));
  return out;
}

}  // namespace

std::unordered_map<std::string, std::size_t> ngrams(const Tokens& tokens, std::size_t n) {
  check_order(n);
  std::unordered_map<std::string, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[ngram_key(tokens, i, n)];
  return counts;
}

double inter_rep(std::span<const StorySentences> stories, std::size_t position, std::size_t n) {
  check_order(n);
  check_position(position);
  std::unordered_set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& story : stories) {
    const Tokens& s = story[position - 1];
    if (s.size() < n) continue;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      distinct.insert(ngram_key(s, i, n));
      ++total;
    }
  }
  if (total == 0) throw DataError("no " + std::to_string(n) + "-grams at sentence position " + std::to_string(position));
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double intra_rep(std::span<const StorySentences> stories, std::size_t position, std::size_t n) {
  check_order(n);
  check_position(position);
  if (stories.empty()) throw DataError("intra_rep over an empty story set");
  if (position == 1) return 0.0;
  double sum = 0.0;
  for (const auto& story : stories) {
    const auto current = distinct_ngrams(story[position - 1], n);
    if (current.empty()) continue;
    double overlap = 0.0;
    for (std::size_t k = 0; k + 1 < position; ++k) {
      const auto earlier = distinct_ngrams(story[k], n);
      std::size_t shared = 0;
      for (const auto& g : current) shared += earlier.count(g);
      overlap += static_cast<double>(shared);
    }
    sum += overlap / (static_cast<double>(position - 1) * static_cast<double>(current.size()));
  }
  return sum / static_cast<double>(stories.size());
}

RepetitionReport rep_aggregate(std::span<const StorySentences> stories, std::size_t n) {
  check_order(n);
  if (stories.empty()) throw DataError("repetition report over an empty story set");
  RepetitionReport r;
  r.n = n;
  for (std::size_t i = 1; i <= kSentencesPerStory; ++i) {
    r.inter[i - 1] = inter_rep(stories, i, n);
    r.intra[i - 1] = intra_rep(stories, i, n);
  }
  std::unordered_set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& story : stories) {
    for (const auto& s : story) {
      if (s.size() < n) continue;
      for (std::size_t i = 0; i + n <= s.size(); ++i) {
        distinct.insert(ngram_key(s, i, n));
        ++total;
      }
    }
  }
  if (total == 0) throw DataError("corpus has no " + std::to_string(n) + "-grams");
  r.inter_agg = 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
  double intra_sum = 0.0;
  for (double v : r.intra) intra_sum += v;
  r.intra_agg = intra_sum / static_cast<double>(kSentencesPerStory);
  return r;
}

std::vector<double> bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references, std::size_t max_n) {
  check_order(max_n);
  if (hypotheses.empty()) throw DataError("BLEU over an empty corpus");
  if (hypotheses.size() != references.size()) {
    throw DataError("BLEU needs one reference per hypothesis (" + std::to_string(hypotheses.size()) + " vs " +
                    std::to_string(references.size()) + ")");
  }
  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    hyp_len += static_cast<double>(hypotheses[s].size());
    ref_len += static_cast<double>(references[s].size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hyp = ngrams(hypotheses[s], n);
      const auto ref = ngrams(references[s], n);
      for (const auto& [g, count] : hyp) {
        totals[n - 1] += static_cast<double>(count);
        const auto it = ref.find(g);
        if (it != ref.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
      }
    }
  }
  const double bp = hyp_len == 0.0 ? 0.0 : (hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0);
  std::vector<double> scores(max_n, 0.0);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const double p = totals[n - 1] > 0.0 ? matches[n - 1] / totals[n - 1] : 0.0;
    if (p <= 0.0) zero = true;
    if (!zero) log_sum += std::log(p);
    scores[n - 1] = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
  }
  return scores;
}

EmbeddingTable EmbeddingTable::from_text(std::string_view text) {
  EmbeddingTable table;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    ++line_no;
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    std::vector<std::string_view> fields;
    std::size_t p = 0;
    while (p < line.size()) {
      while (p < line.size() && (line[p] == ' ' || line[p] == '\t' || line[p] == '\r')) ++p;
      std::size_t q = p;
      while (q < line.size() && line[q] != ' ' && line[q] != '\t' && line[q] != '\r') ++q;
      if (q > p) fields.push_back(line.substr(p, q - p));
      p = q;
    }
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) {
      // word2vec header "count dim"
      bool numeric = true;
      for (auto f : fields) numeric = numeric && std::all_of(f.begin(), f.end(), [](char c) { return c >= '0' && c <= '9'; });
      if (numeric) continue;
    }
    if (fields.size() < 2) throw DataError("embeddings line " + std::to_string(line_no) + ": no vector");
    std::vector<double> vec;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const double v = parse_double(fields[i], "embeddings line " + std::to_string(line_no));
      if (!std::isfinite(v)) throw DataError("embeddings line " + std::to_string(line_no) + ": non-finite value");
      vec.push_back(v);
    }
    try {
      table.add(std::string(fields[0]), std::move(vec));
    } catch (const DataError& e) {
      throw DataError("embeddings line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (table.size() == 0) throw DataError("embedding file has no vectors");
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

void EmbeddingTable::add(const std::string& token, std::vector<double> vec) {
  if (dim_ == 0) {
    dim_ = vec.size();
    zeros_.assign(dim_, 0.0);
  }
  if (vec.size() != dim_) {
    throw DataError("vector for '" + token + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                    std::to_string(dim_));
  }
  vectors_.insert_or_assign(token, std::move(vec));
}

std::span<const double> EmbeddingTable::lookup(const std::string& token) const {
  if (auto it = vectors_.find(token); it != vectors_.end()) return it->second;
  if (auto it = vectors_.find("<unk>"); it != vectors_.end()) return it->second;
  return zeros_;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double greedy_match(std::span<const std::string> storyline, const StorySentences& story,
                    const EmbeddingTable& table) {
  if (storyline.size() != kSentencesPerStory) throw DataError("greedy_match needs a 5-word storyline");
  double sum = 0.0;
  for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
    if (story[i].empty()) continue;
    const auto word = table.lookup(storyline[i]);
    double best = -INFINITY;
    for (const auto& tok : story[i]) best = std::max(best, cosine(word, table.lookup(tok)));
    sum += best;
  }
  return sum / static_cast<double>(kSentencesPerStory);
}

double usage_rate(std::span<const std::string> storyline, const StorySentences& story) {
  if (storyline.empty()) throw DataError("usage_rate of an empty storyline");
  std::unordered_set<std::string> present;
  for (const auto& s : story) present.insert(s.begin(), s.end());
  std::size_t used = 0;
  for (const auto& w : storyline) used += present.count(w);
  return static_cast<double>(used) / static_cast<double>(storyline.size());
}

Tokens flatten(const StorySentences& story) {
  Tokens out;
  for (const auto& s : story) out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace planwrite
