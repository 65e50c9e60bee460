#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "planwrite/cli.hpp"
#include "planwrite/corpus.hpp"
#include "planwrite/rake.hpp"

using namespace planwrite;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("planwrite_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const std::string kFixture = std::string(PLANWRITE_TEST_DATA) + "/stories10.csv";

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("extract writes one storyline per story in order") {
  TempDir d("extract");
  auto r = run({"extract", "--corpus", kFixture, "--out", d / "lines.tsv"});
  REQUIRE(r.code == 0);
  const auto stories = load_corpus(kFixture);
  CHECK(read_file(d / "lines.tsv") == format_storyline_tsv(extract_corpus(stories, Stoplist())));

  write_file(d / "one.csv", format_corpus({stories[0]}));
  REQUIRE(run({"extract", "--corpus", d / "one.csv", "--out", d / "one.tsv"}).code == 0);
  CHECK(count_lines(read_file(d / "one.tsv")) == 1);

  r = run({"extract", "--corpus", d / "missing.csv", "--out", d / "x.tsv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.csv") != std::string::npos);
  write_file(d / "bad.csv", "storyid,storytitle,sentence1,sentence2,sentence3,sentence4,sentence5\na,b,c\n");
  r = run({"extract", "--corpus", d / "bad.csv", "--out", d / "x.tsv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 2") != std::string::npos);
  CHECK(run({"extract", "--corpus", kFixture, "--out", d / "no/such/dir/x.tsv"}).code == 2);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"extract", "--corpus", kFixture}).code == 1);
  CHECK(run({"extract", "--bogus", "1"}).code == 1);
  CHECK(run({"--help"}).code == 0);
  TempDir d("usage");
  auto r = run({"train", "--corpus", kFixture, "--model", "dyn_write", "--out", d / "m.bin"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--storylines") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "m.bin"));
  REQUIRE(run({"extract", "--corpus", kFixture, "--out", d / "l.tsv"}).code == 0);
  CHECK(run({"train", "--corpus", kFixture, "--storylines", d / "l.tsv", "--model", "cond_lm", "--out", d / "m.bin"})
            .code == 1);
  CHECK(run({"train", "--corpus", kFixture, "--model", "nope", "--out", d / "m.bin"}).code == 1);
  CHECK(run({"train", "--corpus", kFixture, "--model", "cond_lm", "--hidden-dropout", "0.9", "--out", d / "m.bin"})
            .code == 1);
}

TEST_CASE("config files supply flags and reject unknown keys") {
  TempDir d("config");
  write_file(d / "good.ini", "[train]\nepochs=2\nembed-dim=4\nhidden-dim=4\nseed=3\n");
  auto r = run({"--config", d / "good.ini", "train", "--corpus", kFixture, "--model", "cond_lm", "--out",
                d / "m.bin"});
  REQUIRE(r.code == 0);
  const std::string csv = read_file(d / "m.bin.loss.csv");
  CHECK(count_lines(csv) == 4);  // header + epochs 0..2
  write_file(d / "bad.ini", "[train]\nepochs=2\nwidth=9\n");
  CHECK(run({"--config", d / "bad.ini", "train", "--corpus", kFixture, "--model", "cond_lm", "--out", d / "m2.bin"})
            .code == 1);
}

TEST_CASE("train overfits a single story and is reproducible") {
  TempDir d("train");
  write_file(d / "one.csv", format_corpus({load_corpus(kFixture)[0]}));
  const std::vector<std::string> args{"train", "--corpus", d / "one.csv", "--model", "cond_lm", "--epochs", "200",
                                      "--lr", "2", "--clip", "1", "--seed", "5"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", d / "a.bin"});
  b.insert(b.end(), {"--out", d / "b.bin", "--loss-csv", d / "b.csv"});
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  CHECK(read_file(d / "a.bin") == read_file(d / "b.bin"));
  CHECK(read_file(d / "a.bin.loss.csv") == read_file(d / "b.csv"));
  const std::string csv = read_file(d / "b.csv");
  const auto last = csv.substr(csv.rfind('\n', csv.size() - 2) + 1);
  const double final_loss = std::stod(last.substr(last.find(',') + 1));
  CHECK(final_loss <= 0.1);
}

TEST_CASE("generate and evaluate") {
  TempDir d("gen");
  REQUIRE(run({"extract", "--corpus", kFixture, "--out", d / "l.tsv"}).code == 0);
  for (const char* kind : {"dyn_plan", "dyn_write"}) {
    REQUIRE(run({"train", "--corpus", kFixture, "--storylines", d / "l.tsv", "--model", kind, "--epochs", "1",
                 "--embed-dim", "8", "--hidden-dim", "8", "--out", d / (std::string(kind) + ".bin")})
                .code == 0);
  }
  write_file(d / "titles.txt", "The Bike\nRainy Day\n\nSnow Day\n");
  const std::vector<std::string> gen{"generate", "--titles", d / "titles.txt", "--schema", "dynamic", "--planner",
                                     d / "dyn_plan.bin", "--writer", d / "dyn_write.bin"};
  auto g1 = gen, g2 = gen;
  g1.insert(g1.end(), {"--out", d / "a.jsonl"});
  g2.insert(g2.end(), {"--out", d / "b.jsonl"});
  REQUIRE(run(g1).code == 0);
  REQUIRE(run(g2).code == 0);
  const std::string jsonl = read_file(d / "a.jsonl");
  CHECK(count_lines(jsonl) == 3);
  CHECK(jsonl == read_file(d / "b.jsonl"));
  CHECK(jsonl.find("\"title\":\"the bike\"") != std::string::npos);

  // vocabulary mismatch
  write_file(d / "other.csv", format_corpus({load_corpus(kFixture)[0]}));
  write_file(d / "other.tsv", format_storyline_tsv(extract_corpus(load_corpus(d / "other.csv"), Stoplist())));
  REQUIRE(run({"train", "--corpus", d / "other.csv", "--storylines", d / "other.tsv", "--model", "dyn_write",
               "--epochs", "1", "--embed-dim", "8", "--hidden-dim", "8", "--out", d / "w2.bin"})
              .code == 0);
  auto r = run({"generate", "--titles", d / "titles.txt", "--schema", "dynamic", "--planner", d / "dyn_plan.bin",
                "--writer", d / "w2.bin", "--out", d / "c.jsonl"});
  CHECK(r.code == 2);
  CHECK(r.err.find("vocabularies differ") != std::string::npos);
  CHECK(run({"generate", "--titles", d / "titles.txt", "--schema", "cond_lm", "--checkpoint", d / "dyn_plan.bin",
             "--out", d / "c.jsonl"})
            .code == 1);

  // evaluate: repetition always, BLEU against itself, storyline metrics with embeddings
  REQUIRE(run({"evaluate", "--stories", d / "a.jsonl", "--references", d / "a.jsonl", "--out", d / "r.json"}).code ==
          0);
  auto rep = nlohmann::json::parse(read_file(d / "r.json"));
  CHECK(rep["n"] == 3);
  CHECK(rep["inter"].size() == 5);
  for (int n = 1; n <= 4; ++n) CHECK(rep["bleu"]["bleu" + std::to_string(n)].get<double>() == doctest::Approx(100.0));
  CHECK_FALSE(rep.contains("greedy_match"));
  write_file(d / "emb.txt", "the 1 0\nbike 0 1\n");
  REQUIRE(run({"evaluate", "--stories", d / "a.jsonl", "--embeddings", d / "emb.txt", "--out", d / "s.json"}).code ==
          0);
  rep = nlohmann::json::parse(read_file(d / "s.json"));
  CHECK(rep.contains("greedy_match"));
  CHECK(rep["usage_rate"].get<double>() >= 0.0);
  CHECK_FALSE(rep.contains("bleu"));

  write_file(d / "broken.jsonl", read_file(d / "a.jsonl") + "{\"title\": 3}\n");
  r = run({"evaluate", "--stories", d / "broken.jsonl", "--out", d / "x.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 4") != std::string::npos);
}

TEST_CASE("repetition-only report for baseline stories") {
  TempDir d("eval");
  write_file(d / "s.jsonl",
             "{\"title\":\"t\",\"sentences\":[\"a b c d\",\"a b c d\",\"e f g\",\"h i j\",\"k l m\"]}\n"
             "{\"title\":\"u\",\"sentences\":[\"a b c d\",\"x y z\",\"e f g\",\"h i j\",\"k l m\"]}\n");
  REQUIRE(run({"evaluate", "--stories", d / "s.jsonl", "--out", d / "r.json"}).code == 0);
  const auto rep = nlohmann::json::parse(read_file(d / "r.json"));
  CHECK(rep.size() == 5);
  CHECK(rep["inter"][0].get<double>() == doctest::Approx(0.5));
  CHECK(rep["intra"][1].get<double>() == doctest::Approx(0.5));
}

TEST_CASE("gradcheck command") {
  auto r = run({"gradcheck", "--model", "static_plan"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  r = run({"gradcheck", "--model", "static_plan", "--inject-fault"});
  CHECK(r.code != 0);
  CHECK(r.out.find("FAIL") != std::string::npos);
}
