#pragma once

// Independent brute-force reimplementations used as test oracles. They share
// no code with the library beyond the token containers.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Sentence = std::vector<std::string>;
using Story5 = std::array<Sentence, 5>;

inline std::vector<Sentence> all_ngrams(const Sentence& s, std::size_t n) {
  std::vector<Sentence> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

inline double inter(const std::vector<Story5>& stories, std::size_t pos, std::size_t n) {
  std::vector<Sentence> pooled;
  for (const auto& st : stories) {
    auto g = all_ngrams(st[pos - 1], n);
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  std::set<Sentence> distinct(pooled.begin(), pooled.end());
  return 1.0 - double(distinct.size()) / double(pooled.size());
}

inline double intra(const std::vector<Story5>& stories, std::size_t pos, std::size_t n) {
  if (pos == 1) return 0.0;
  double total = 0.0;
  for (const auto& st : stories) {
    auto cur = all_ngrams(st[pos - 1], n);
    std::set<Sentence> d(cur.begin(), cur.end());
    if (d.empty()) continue;
    double acc = 0.0;
    for (std::size_t k = 1; k < pos; ++k) {
      auto prev = all_ngrams(st[k - 1], n);
      std::set<Sentence> dp(prev.begin(), prev.end());
      std::vector<Sentence> both;
      std::set_intersection(d.begin(), d.end(), dp.begin(), dp.end(), std::back_inserter(both));
      acc += double(both.size());
    }
    total += acc / (double(pos - 1) * double(d.size()));
  }
  return total / double(stories.size());
}

inline double inter_agg(const std::vector<Story5>& stories, std::size_t n) {
  std::vector<Sentence> pooled;
  for (const auto& st : stories)
    for (const auto& s : st) {
      auto g = all_ngrams(s, n);
      pooled.insert(pooled.end(), g.begin(), g.end());
    }
  std::set<Sentence> distinct(pooled.begin(), pooled.end());
  return 1.0 - double(distinct.size()) / double(pooled.size());
}

// Cumulative corpus BLEU in percent.
inline std::vector<double> bleu(const std::vector<Sentence>& hyp, const std::vector<Sentence>& ref,
                                std::size_t max_n) {
  std::vector<double> match(max_n), total(max_n);
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyp.size(); ++s) {
    c += double(hyp[s].size());
    r += double(ref[s].size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<Sentence, int> hc, rc;
      for (auto& g : all_ngrams(hyp[s], n)) hc[g]++;
      for (auto& g : all_ngrams(ref[s], n)) rc[g]++;
      for (auto& [g, k] : hc) {
        total[n - 1] += k;
        match[n - 1] += std::min(k, rc.count(g) ? rc[g] : 0);
      }
    }
  }
  double bp = c == 0 ? 0.0 : (c >= r ? 1.0 : std::exp(1.0 - r / c));
  std::vector<double> out;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double prod_log = 0.0;
    bool zero = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (total[k] == 0 || match[k] == 0) zero = true;
      else prod_log += std::log(match[k] / total[k]);
    }
    out.push_back(zero ? 0.0 : 100.0 * bp * std::exp(prod_log / double(n)));
  }
  return out;
}

inline double cos(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, x = 0, y = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    x += a[i] * a[i];
    y += b[i] * b[i];
  }
  if (x == 0 || y == 0) return 0.0;
  return d / std::sqrt(x * y);
}

inline double greedy(const std::vector<std::string>& line, const Story5& story,
                     const std::map<std::string, std::vector<double>>& emb, std::size_t dim) {
  auto vec = [&](const std::string& w) {
    if (emb.count(w)) return emb.at(w);
    if (emb.count("<unk>")) return emb.at("<unk>");
    return std::vector<double>(dim, 0.0);
  };
  double sum = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (story[i].empty()) continue;
    double best = -2;
    for (auto& t : story[i]) best = std::max(best, cos(vec(line[i]), vec(t)));
    sum += best;
  }
  return sum / 5.0;
}

inline double usage(const std::vector<std::string>& line, const Story5& story) {
  int hit = 0;
  for (auto& w : line) {
    bool found = false;
    for (auto& s : story)
      for (auto& t : s) found = found || t == w;
    hit += found;
  }
  return double(hit) / double(line.size());
}

// RAKE by explicit phrase enumeration and pairwise co-occurrence counting.
inline std::map<std::string, double> rake(const Sentence& s, const std::set<std::string>& stop) {
  auto is_punct = [](const std::string& t) {
    return std::none_of(t.begin(), t.end(), [](char c) { return std::isalnum((unsigned char)c) || (c & 0x80); });
  };
  std::vector<Sentence> phrases;
  Sentence cur;
  for (auto& t : s) {
    if (stop.count(t) || is_punct(t)) {
      if (!cur.empty()) phrases.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(t);
    }
  }
  if (!cur.empty()) phrases.push_back(cur);
  std::map<std::string, double> freq, deg;
  for (auto& p : phrases) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      freq[p[i]] += 1;
      for (std::size_t j = 0; j < p.size(); ++j) deg[p[i]] += 1;
    }
  }
  std::map<std::string, double> out;
  for (auto& [w, f] : freq) out[w] = deg[w] / f;
  return out;
}

inline std::string rake_best(const Sentence& s, const std::set<std::string>& stop) {
  auto scores = rake(s, stop);
  std::string best;
  double best_score = -1;
  for (auto& t : s) {
    auto it = scores.find(t);
    if (it != scores.end() && it->second > best_score) {
      best = t;
      best_score = it->second;
    }
  }
  return best;
}

}  // namespace oracle
