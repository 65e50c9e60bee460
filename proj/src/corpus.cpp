#include "planwrite/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "planwrite/error.hpp"
#include "planwrite/nn/rng.hpp"

namespace planwrite {

namespace {

bool is_split_mark(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case '\'': case '"': case ';': case ':':
      return true;
    default:
      return false;
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Splits one CSV record starting at `pos`; advances pos past the record
// terminator. Tracks physical lines consumed so errors can name them.
std::vector<std::string> next_record(std::string_view text, std::size_t& pos, std::size_t& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  while (pos < text.size()) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
          continue;
        }
        quoted = false;
        ++pos;
        continue;
      }
      if (c == '\n') ++line;
      field.push_back(c);
      ++pos;
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
      ++pos;
      continue;
    }
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      field_started = false;
      ++pos;
      continue;
    }
    if (c == '\r' || c == '\n') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      ++line;
      fields.push_back(std::move(field));
      return fields;
    }
    field.push_back(c);
    field_started = true;
    ++pos;
  }
  if (quoted) throw DataError("line " + std::to_string(line) + ": unterminated quoted field");
  fields.push_back(std::move(field));
  ++line;
  return fields;
}

std::string csv_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_split_mark(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      const auto uc = static_cast<unsigned char>(c);
      current.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : c);
    }
  }
  flush();
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool is_punctuation(std::string_view token) {
  return std::none_of(token.begin(), token.end(), [](char c) {
    const auto uc = static_cast<unsigned char>(c);
    return uc >= 0x80 || std::isalnum(uc);
  });
}

std::vector<Story> parse_corpus(std::string_view text) {
  if (text.empty()) throw DataError("corpus is empty");
  std::size_t pos = 0;
  std::size_t line = 1;
  const auto header = next_record(text, pos, line);
  if (header.size() != 7) {
    throw DataError("line 1: header has " + std::to_string(header.size()) + " fields, expected 7");
  }
  std::vector<Story> stories;
  while (pos < text.size()) {
    const std::size_t record_line = line;
    auto fields = next_record(text, pos, line);
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != 7) {
      throw DataError("line " + std::to_string(record_line) + ": expected 7 fields, found " +
                      std::to_string(fields.size()));
    }
    Story story;
    story.id = fields[0];
    story.title = tokenize(fields[1]);
    if (story.title.empty()) throw DataError("line " + std::to_string(record_line) + ": empty title");
    for (std::size_t i = 0; i < kSentencesPerStory; ++i) {
      story.sentences[i] = tokenize(fields[2 + i]);
      if (story.sentences[i].empty()) {
        throw DataError("line " + std::to_string(record_line) + ": sentence " + std::to_string(i + 1) +
                        " is empty");
      }
    }
    stories.push_back(std::move(story));
  }
  if (stories.empty()) throw DataError("corpus has no stories");
  return stories;
}

std::vector<Story> load_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path)); }

std::string format_corpus(const std::vector<Story>& stories) {
  std::string out = "storyid,storytitle,sentence1,sentence2,sentence3,sentence4,sentence5\n";
  for (const auto& s : stories) {
    out += csv_quote(s.id) + "," + csv_quote(detokenize(s.title));
    for (const auto& sent : s.sentences) out += "," + csv_quote(detokenize(sent));
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::array<std::string, Vocabulary::kNumSpecials>& Vocabulary::special_names() {
  static const std::array<std::string, kNumSpecials> names = {"<pad>", "<unk>", "<bos>",
                                                              "<eos>", "<eot>", "<sep>"};
  return names;
}

Vocabulary::Vocabulary() : id_to_token_(special_names().begin(), special_names().end()) {}

Vocabulary Vocabulary::from_tokens(const Tokens& tokens) {
  Vocabulary v;
  const auto& specials = special_names();
  for (const auto& t : tokens) {
    if (std::find(specials.begin(), specials.end(), t) != specials.end()) {
      throw DataError("vocabulary token collides with special: " + t);
    }
    if (t.empty()) throw DataError("empty vocabulary token");
    const auto id = static_cast<TokenId>(v.id_to_token_.size());
    if (!v.token_to_id_.emplace(t, id).second) throw DataError("duplicate vocabulary token: " + t);
    v.id_to_token_.push_back(t);
  }
  return v;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DataError("token id out of range: " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenIds Vocabulary::encode(const Tokens& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

Tokens Vocabulary::decode(const TokenIds& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token_of(id));
  return out;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : id_to_token_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : id_to_token_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Tokens lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < kNumSpecials) throw DataError("vocabulary file shorter than the special block");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (lines[i] != special_names()[i]) {
      throw DataError("vocabulary line " + std::to_string(i + 1) + ": expected " + special_names()[i]);
    }
  }
  return from_tokens(Tokens(lines.begin() + kNumSpecials, lines.end()));
}

Vocabulary build_vocab(const std::vector<Story>& stories, std::size_t min_freq) {
  if (min_freq < 1) throw UsageError("min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  const auto& specials = Vocabulary::special_names();
  auto add = [&](const Tokens& tokens) {
    for (const auto& t : tokens) {
      if (std::find(specials.begin(), specials.end(), t) != specials.end()) continue;
      ++counts[t];
    }
  };
  for (const auto& s : stories) {
    add(s.title);
    for (const auto& sent : s.sentences) add(sent);
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) entries.emplace_back(tok, n);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokens tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocabulary::from_tokens(tokens);
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw DataError("split needs at least 10 stories, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  nn::Rng rng(seed);
  rng.shuffle(order);
  const std::size_t tenth = n / 10;
  const std::size_t n_train = n - 2 * tenth;
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                   order.begin() + static_cast<std::ptrdiff_t>(n_train + tenth));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + tenth), order.end());
  return out;
}

CorpusSplit split_corpus(const std::vector<Story>& stories, std::uint64_t seed) {
  const SplitIndices idx = split_indices(stories.size(), seed);
  CorpusSplit split;
  split.seed = seed;
  for (auto i : idx.train) split.train.push_back(stories[i]);
  for (auto i : idx.valid) split.valid.push_back(stories[i]);
  for (auto i : idx.test) split.test.push_back(stories[i]);
  return split;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace planwrite
