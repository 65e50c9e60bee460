#include <doctest.h>

#include "oracles.hpp"
#include "planwrite/corpus.hpp"
#include "planwrite/error.hpp"
#include "planwrite/nn/rng.hpp"
#include "planwrite/rake.hpp"

using namespace planwrite;

namespace {

Story make_story(std::vector<std::string> sentences) {
  Story s;
  s.id = "x";
  s.title = {"t"};
  for (std::size_t i = 0; i < 5; ++i) s.sentences[i] = tokenize(sentences[i]);
  return s;
}

}  // namespace

TEST_CASE("rake word scores: hand examples") {
  const Stoplist none(std::vector<std::string>{"zzz"});
  auto s = rake_word_scores({"red", "apples"}, none);
  CHECK(s.at("red") == 2.0);
  CHECK(s.at("apples") == 2.0);

  const Stoplist the(std::vector<std::string>{"the"});
  CHECK(rake_word_scores({"the"}, the).empty());
  s = rake_word_scores({"dog", "the", "dog"}, the);
  CHECK(s.size() == 1);
  CHECK(s.at("dog") == 1.0);

  // [a, big, dog, chased, a, cat] with {a}: phrases (big dog chased), (cat)
  const Stoplist a(std::vector<std::string>{"a"});
  s = rake_word_scores({"a", "big", "dog", "chased", "a", "cat"}, a);
  CHECK(s.at("big") == 3.0);
  CHECK(s.at("dog") == 3.0);
  CHECK(s.at("chased") == 3.0);
  CHECK(s.at("cat") == 1.0);
}

TEST_CASE("punctuation splits phrases without being a stopword") {
  const Stoplist none(std::vector<std::string>{"zzz"});
  const auto s = rake_word_scores({"big", "dog", ",", "cat", "."}, none);
  CHECK(s.size() == 3);
  CHECK(s.at("big") == 2.0);
  CHECK(s.at("cat") == 1.0);
}

TEST_CASE("stoplist validation") {
  CHECK_THROWS_AS(Stoplist(std::vector<std::string>{}), DataError);
  CHECK_THROWS_AS(Stoplist(std::vector<std::string>{"a", "."}), DataError);
  const Stoplist smart;
  CHECK(smart.size() > 500);
  CHECK(smart.contains("the"));
  CHECK(smart.contains("had"));
  CHECK_FALSE(smart.contains("bike"));
}

TEST_CASE("storyline of the bike story") {
  const Story s = make_story({"Carrie had just learned how to ride a bike.", "She didn't have a bike of her own.",
                              "Carrie would sneak rides on her sister's bike.", "She got nervous on a hill and crashed into a wall.",
                              "The bike frame bent and Carrie got a deep gash on her leg."});
  const Storyline line = extract_storyline(s, Stoplist());
  CHECK(line.words[0] == "carrie");
  CHECK(line.words[1] == "bike");
  CHECK(line.words[2] == "sneak");
  CHECK(line.words[3] == "nervous");
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::find(s.sentences[i].begin(), s.sentences[i].end(), line.words[i]) != s.sentences[i].end());
  }
}

TEST_CASE("fallback to first non-punctuation token") {
  const Stoplist smart;
  Story s = make_story({"dog ran.", "cat sat.", "the of.", "sun rose.", "fox hid."});
  CHECK(extract_storyline(s, smart).words[2] == "the");
  s.sentences[2] = {".", "the", "."};
  CHECK(extract_storyline(s, smart).words[2] == "the");
  s.sentences[2] = {"!", "."};
  CHECK(extract_storyline(s, smart).words[2] == "!");
}

TEST_CASE("ties go to the earliest position") {
  const Stoplist a(std::vector<std::string>{"and"});
  Story s = make_story({"cat and dog.", "b.", "c.", "d.", "e."});
  CHECK(extract_storyline(s, a).words[0] == "cat");
}

TEST_CASE("rake matches the brute-force oracle on random sentences") {
  const std::vector<std::string> pool{"the", "a", "dog", "cat", "ran", "big", ".", ",", "and", "red", "of", "sun"};
  const std::vector<std::string> stop{"the", "a", "and", "of"};
  const Stoplist sl(stop);
  const std::set<std::string> stop_set(stop.begin(), stop.end());
  nn::Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Tokens s;
    const auto len = 1 + rng.below(8);
    for (std::uint64_t i = 0; i < len; ++i) s.push_back(pool[rng.below(pool.size())]);
    const auto got = rake_word_scores(s, sl);
    const auto want = oracle::rake(s, stop_set);
    REQUIRE(got.size() == want.size());
    for (const auto& [w, v] : want) CHECK(got.at(w) == v);
  }
}

TEST_CASE("extract_corpus is elementwise and order preserving") {
  const std::vector<Story> stories{make_story({"dog ran.", "cat sat.", "big sun.", "red fox.", "owl hid."}),
                                   make_story({"fox ran.", "owl sat.", "cold sun.", "blue fox.", "cat hid."})};
  CHECK(extract_corpus({}, Stoplist()).empty());
  const auto pairs = extract_corpus(stories, Stoplist());
  REQUIRE(pairs.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(pairs[i].second == extract_storyline(stories[i], Stoplist()));
}

TEST_CASE("storyline TSV round trip and title check") {
  std::vector<std::pair<Story, Storyline>> pairs;
  Story s = make_story({"dog ran.", "cat sat.", "big sun.", "red fox.", "owl hid."});
  s.title = {"a", "title"};
  pairs.emplace_back(s, extract_storyline(s, Stoplist()));
  const std::string tsv = format_storyline_tsv(pairs);
  CHECK(tsv == "a title\tdog cat big red owl\n");
  const auto recs = parse_storyline_tsv(tsv);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].storyline == pairs[0].second);
  CHECK(attach_storylines({s}, recs)[0].second == pairs[0].second);
  Story other = s;
  other.title = {"different"};
  CHECK_THROWS_AS(attach_storylines({other}, recs), DataError);
  CHECK_THROWS_AS(parse_storyline_tsv("t\ta b c\n"), DataError);
  CHECK_THROWS_AS(parse_storyline_tsv("no tab here\n"), DataError);
}
