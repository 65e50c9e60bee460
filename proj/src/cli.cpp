#include "planwrite/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "planwrite/corpus.hpp"
#include "planwrite/decode.hpp"
#include "planwrite/error.hpp"
#include "planwrite/metrics.hpp"
#include "planwrite/models.hpp"
#include "planwrite/nn/graph.hpp"
#include "planwrite/nn/layers.hpp"
#include "planwrite/rake.hpp"
#include "planwrite/text_util.hpp"

namespace planwrite {

namespace fs = std::filesystem;

namespace {

void require_input(const std::string& path, const char* what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw DataError(std::string(what) + " not found: " + path);
}

void require_output(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty() && !fs::is_directory(parent, ec)) {
    throw DataError("output directory does not exist: " + parent.string());
  }
}

std::size_t thread_cap() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PLANWRITE_THREADS")) {
    const auto v = parse_uint(env, "PLANWRITE_THREADS");
    if (v < 1) throw UsageError("PLANWRITE_THREADS must be >= 1");
    n = static_cast<std::size_t>(v);
  }
  return n;
}

// Runs fn(i) for i in [0, n) on up to thread_cap() threads. Results land by
// index; the lowest-index failure is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(thread_cap(), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<Tokens> read_titles(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<Tokens> titles;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    ++line_no;
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    Tokens t = tokenize(std::string_view(text).substr(start, end - start));
    start = end + 1;
    if (!t.empty()) titles.push_back(std::move(t));
  }
  if (titles.empty()) throw DataError("titles file has no titles: " + path);
  return titles;
}

// --- extract -----------------------------------------------------------------

struct ExtractArgs {
  std::string corpus, stoplist, out;
};

void cmd_extract(const ExtractArgs& a, std::ostream& out) {
  require_input(a.corpus, "corpus");
  if (!a.stoplist.empty()) require_input(a.stoplist, "stoplist");
  require_output(a.out);
  const auto stories = load_corpus(a.corpus);
  const Stoplist stoplist = a.stoplist.empty() ? Stoplist() : Stoplist::from_file(a.stoplist);
  const auto pairs = extract_corpus(stories, stoplist);
  write_file(a.out, format_storyline_tsv(pairs));
  out << "extracted " << pairs.size() << " storylines -> " << a.out << "\n";
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, storylines, model, out, loss_csv;
  std::optional<std::size_t> embed_dim, hidden_dim;
  std::optional<double> embed_dropout, hidden_dropout;
  bool published_dims = false;
  bool split = false;
  std::size_t min_freq = 1;
  TrainOptions opt;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  const ModelKind kind = parse_model_kind(a.model);
  ModelConfig cfg = a.published_dims ? ModelConfig::published(kind) : ModelConfig{};
  cfg.kind = kind;
  if (a.embed_dim) cfg.embed_dim = *a.embed_dim;
  if (a.hidden_dim) cfg.hidden_dim = *a.hidden_dim;
  if (a.embed_dropout) cfg.embed_dropout = *a.embed_dropout;
  if (a.hidden_dropout) cfg.hidden_dropout = *a.hidden_dropout;
  cfg.validate();
  if (uses_storyline(kind) && a.storylines.empty()) {
    throw UsageError(std::string(model_kind_name(kind)) + " needs --storylines");
  }
  if (!uses_storyline(kind) && !a.storylines.empty()) {
    throw UsageError(std::string(model_kind_name(kind)) + " does not take --storylines");
  }
  require_input(a.corpus, "corpus");
  if (!a.storylines.empty()) require_input(a.storylines, "storylines");
  require_output(a.out);
  const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  require_output(loss_path);

  const auto stories = load_corpus(a.corpus);
  const Vocabulary vocab = build_vocab(stories, a.min_freq);
  std::vector<Example> all;
  if (a.storylines.empty()) {
    all = make_examples(stories);
  } else {
    all = make_examples(attach_storylines(stories, parse_storyline_tsv(read_file(a.storylines))));
  }
  std::vector<Example> train_set, valid_set;
  if (a.split) {
    const auto idx = split_indices(all.size(), a.opt.seed);
    for (auto i : idx.train) train_set.push_back(all[i]);
    for (auto i : idx.valid) valid_set.push_back(all[i]);
  } else {
    train_set = std::move(all);
  }
  const TrainResult result = train(train_set, valid_set, cfg, vocab, a.opt);
  result.checkpoint.save(a.out);
  write_file(loss_path, format_loss_csv(result.curve));
  const auto& last = result.curve.back();
  out << model_kind_name(kind) << ": " << last.epoch << " epochs, train nll " << format_double(last.train_nll);
  if (!valid_set.empty()) out << ", best valid nll " << format_double(result.checkpoint.meta.final_valid_nll);
  out << " -> " << a.out << "\n";
}

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  std::string titles, schema = "dynamic", planner, writer, checkpoint, out, mode = "greedy";
  double temperature = 1.0;
  std::size_t max_len = 20;
  std::uint64_t seed = 0;
  bool allow_repeats = false;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  DecodeConfig base;
  base.mode = parse_decode_mode(a.mode);
  base.temperature = a.temperature;
  base.max_sentence_len = a.max_len;
  base.no_repeat = !a.allow_repeats;
  base.validate();
  const bool planned = a.schema == "dynamic" || a.schema == "static";
  const bool baseline = a.schema == "inc_s2s" || a.schema == "cond_lm";
  if (!planned && !baseline) {
    throw UsageError("unknown schema '" + a.schema + "' (expected dynamic, static, inc_s2s or cond_lm)");
  }
  require_input(a.titles, "titles file");
  if (planned) {
    if (a.planner.empty() || a.writer.empty()) throw UsageError(a.schema + " schema needs --planner and --writer");
    require_input(a.planner, "planner checkpoint");
    require_input(a.writer, "writer checkpoint");
  } else {
    if (a.checkpoint.empty()) throw UsageError(a.schema + " schema needs --checkpoint");
    require_input(a.checkpoint, "checkpoint");
  }
  require_output(a.out);

  const auto titles = read_titles(a.titles);
  std::optional<Checkpoint> planner, writer, model;
  if (planned) {
    planner = Checkpoint::load(a.planner);
    writer = Checkpoint::load(a.writer);
    require_shared_vocab(*planner, *writer);
  } else {
    model = Checkpoint::load(a.checkpoint);
    const ModelKind want = a.schema == "inc_s2s" ? ModelKind::kIncS2S : ModelKind::kCondLm;
    if (model->config.kind != want) {
      throw UsageError("checkpoint holds " + std::string(model_kind_name(model->config.kind)) + ", schema is " +
                       a.schema);
    }
  }

  std::vector<std::string> lines(titles.size());
  parallel_for(titles.size(), [&](std::size_t i) {
    DecodeConfig cfg = base;
    cfg.seed = nn::Rng::mix(a.seed, i);
    GeneratedStory story;
    if (a.schema == "dynamic") {
      story = generate_dynamic(titles[i], *planner, *writer, cfg);
    } else if (a.schema == "static") {
      story = generate_static(titles[i], *planner, *writer, cfg);
    } else {
      story = generate_baseline(titles[i], *model, cfg);
    }
    lines[i] = to_json_line(story);
  });
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_file(a.out, text);
  out << "generated " << lines.size() << " stories -> " << a.out << "\n";
}

// --- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::string stories, references, embeddings, out;
  std::size_t ngram = 3;
};

std::vector<StorySentences> read_reference_stories(const std::string& path) {
  std::vector<StorySentences> refs;
  if (fs::path(path).extension() == ".csv") {
    for (const auto& s : load_corpus(path)) refs.push_back(s.sentences);
  } else {
    for (const auto& g : parse_jsonl(read_file(path))) refs.push_back(g.sentences);
  }
  return refs;
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_input(a.stories, "stories file");
  if (!a.references.empty()) require_input(a.references, "references");
  if (!a.embeddings.empty()) require_input(a.embeddings, "embeddings");
  require_output(a.out);
  const auto generated = parse_jsonl(read_file(a.stories));
  if (generated.empty()) throw DataError("no stories in " + a.stories);
  std::vector<StorySentences> stories;
  for (const auto& g : generated) stories.push_back(g.sentences);

  const RepetitionReport rep = rep_aggregate(stories, a.ngram);
  nlohmann::ordered_json j;
  j["n"] = rep.n;
  j["inter"] = rep.inter;
  j["intra"] = rep.intra;
  j["inter_agg"] = rep.inter_agg;
  j["intra_agg"] = rep.intra_agg;

  if (!a.references.empty()) {
    const auto refs = read_reference_stories(a.references);
    std::vector<Tokens> hyp_tokens, ref_tokens;
    for (const auto& s : stories) hyp_tokens.push_back(flatten(s));
    for (const auto& s : refs) ref_tokens.push_back(flatten(s));
    const auto scores = bleu(hyp_tokens, ref_tokens, 4);
    nlohmann::ordered_json b;
    for (std::size_t n = 0; n < scores.size(); ++n) b["bleu" + std::to_string(n + 1)] = scores[n];
    j["bleu"] = std::move(b);
  }

  std::vector<std::size_t> with_line;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (!generated[i].storyline.empty()) with_line.push_back(i);
  }
  if (!a.embeddings.empty() && !with_line.empty()) {
    const EmbeddingTable table = EmbeddingTable::load(a.embeddings);
    std::vector<double> gm(with_line.size()), usage(with_line.size());
    parallel_for(with_line.size(), [&](std::size_t k) {
      const auto& g = generated[with_line[k]];
      gm[k] = greedy_match(g.storyline, g.sentences, table);
      usage[k] = usage_rate(g.storyline, g.sentences);
    });
    double gm_sum = 0.0, usage_sum = 0.0;
    for (std::size_t k = 0; k < with_line.size(); ++k) {
      gm_sum += gm[k];
      usage_sum += usage[k];
    }
    const double count = static_cast<double>(with_line.size());
    j["storyline_stories"] = with_line.size();
    j["greedy_match"] = gm_sum / count;
    j["usage_rate"] = usage_sum / count;
  }
  write_file(a.out, j.dump(2) + "\n");
  out << "evaluated " << stories.size() << " stories -> " << a.out << "\n";
}

// --- gradcheck ---------------------------------------------------------------

constexpr const char* kGradcheckCorpus =
    "storyid,storytitle,sentence1,sentence2,sentence3,sentence4,sentence5\n"
    "a,red fox,fox ran .,dog sat .,cat hid .,sun rose .,fox slept .\n"
    "b,blue bird,bird sang .,dog ran .,cat sat .,sun hid .,bird slept .\n";

struct GradcheckArgs {
  std::string model = "all";
  std::uint64_t seed = 0;
  double eps = 1e-4;
  double tolerance = 1e-4;
  double dropout = 0.1;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<ModelKind> kinds;
  if (a.model == "all") {
    kinds.assign(std::begin(kAllModelKinds), std::end(kAllModelKinds));
  } else {
    kinds.push_back(parse_model_kind(a.model));
  }
  const auto stories = parse_corpus(kGradcheckCorpus);
  const Vocabulary vocab = build_vocab(stories);
  const auto examples = make_examples(extract_corpus(stories, Stoplist()));
  bool ok = true;
  nn::set_backward_fault(a.inject_fault);
  for (ModelKind kind : kinds) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 8;
    cfg.embed_dropout = a.dropout;
    cfg.hidden_dropout = a.dropout;
    cfg.validate();
    Checkpoint ckpt = init_model(cfg, vocab, a.seed);
    const std::uint64_t mask_seed = nn::Rng::mix(a.seed, 7);
    auto loss_fn = [&](nn::Graph& g, const nn::ParamSet& ps) {
      nn::Rng rng(mask_seed);  // identical dropout masks on every evaluation
      std::vector<nn::Var> parts;
      std::size_t tokens = 0;
      for (const auto& ex : examples) {
        auto l = example_loss(g, ckpt, ps, ex, true, rng);
        parts.push_back(l.total);
        tokens += l.tokens;
      }
      nn::Var total = parts[0];
      for (std::size_t i = 1; i < parts.size(); ++i) total = g.add(total, parts[i]);
      return g.scale(total, 1.0 / static_cast<double>(tokens));
    };
    const auto report = nn::grad_check(loss_fn, ckpt.params, a.eps, 64, a.seed);
    const bool pass = std::isfinite(report.max_rel_error) && report.max_rel_error <= a.tolerance;
    ok = ok && pass;
    out << model_kind_name(kind) << " max_rel_err=" << format_double(report.max_rel_error)
        << " coords=" << report.coords_checked << " worst=" << report.worst_param << "[" << report.worst_index
        << "] vocab=" << vocab.size() << " " << (pass ? "PASS" : "FAIL") << "\n";
  }
  nn::set_backward_fault(false);
  return ok ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"planwrite: storyline planning and story generation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI file of flag defaults, one [subcommand] section each");
  app.allow_config_extras(false);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "RAKE storylines for a story corpus");
  extract->add_option("--corpus", ex.corpus, "story CSV")->required();
  extract->add_option("--stoplist", ex.stoplist, "stopword file (default: built-in SMART list)");
  extract->add_option("--out", ex.out, "storyline TSV")->required();

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "train one model");
  trn->add_option("--corpus", tr.corpus, "story CSV")->required();
  trn->add_option("--storylines", tr.storylines, "storyline TSV (planner and writer models)");
  trn->add_option("--model", tr.model, "dyn_plan|dyn_write|static_plan|static_write|inc_s2s|cond_lm")->required();
  trn->add_option("--embed-dim", tr.embed_dim);
  trn->add_option("--hidden-dim", tr.hidden_dim);
  trn->add_option("--embed-dropout", tr.embed_dropout);
  trn->add_option("--hidden-dropout", tr.hidden_dropout);
  trn->add_flag("--published-dims", tr.published_dims, "published dimensions and dropouts for this model");
  trn->add_option("--epochs", tr.opt.epochs)->capture_default_str();
  trn->add_option("--lr", tr.opt.lr)->capture_default_str();
  trn->add_option("--lr-decay", tr.opt.lr_decay, "factor applied when validation loss stalls")->capture_default_str();
  trn->add_option("--clip", tr.opt.clip, "global gradient-norm clip")->capture_default_str();
  trn->add_option("--stop-below", tr.opt.stop_below, "stop once epoch train NLL is below this (0 = off)");
  trn->add_option("--seed", tr.opt.seed)->capture_default_str();
  trn->add_option("--min-freq", tr.min_freq, "rarer words map to <unk>")->capture_default_str();
  trn->add_flag("--split", tr.split, "train on the 8:1:1 train part, select on the valid part");
  trn->add_option("--out", tr.out, "checkpoint path")->required();
  trn->add_option("--loss-csv", tr.loss_csv, "loss curve (default: <out>.loss.csv)");

  GenerateArgs ge;
  auto* gen = app.add_subcommand("generate", "write stories for a file of titles");
  gen->add_option("--titles", ge.titles, "one title per line")->required();
  gen->add_option("--schema", ge.schema, "dynamic|static|inc_s2s|cond_lm")->capture_default_str();
  gen->add_option("--planner", ge.planner);
  gen->add_option("--writer", ge.writer);
  gen->add_option("--checkpoint", ge.checkpoint, "baseline model");
  gen->add_option("--mode", ge.mode, "greedy|sample")->capture_default_str();
  gen->add_option("--temperature", ge.temperature)->capture_default_str();
  gen->add_option("--max-len", ge.max_len, "max tokens per sentence")->capture_default_str();
  gen->add_option("--seed", ge.seed)->capture_default_str();
  gen->add_flag("--allow-repeats", ge.allow_repeats, "lift the no-repeat storyline constraint");
  gen->add_option("--out", ge.out, "JSONL output")->required();

  EvaluateArgs ev;
  auto* eva = app.add_subcommand("evaluate", "repetition, BLEU and storyline metrics");
  eva->add_option("--stories", ev.stories, "generated JSONL")->required();
  eva->add_option("--references", ev.references, "reference stories (JSONL, or .csv corpus)");
  eva->add_option("--embeddings", ev.embeddings, "text word vectors");
  eva->add_option("--ngram", ev.ngram, "n-gram order for repetition")->capture_default_str();
  eva->add_option("--out", ev.out, "report JSON")->required();

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every model at toy size");
  grad->add_option("--model", gc.model, "model kind or 'all'")->capture_default_str();
  grad->add_option("--seed", gc.seed)->capture_default_str();
  grad->add_option("--eps", gc.eps)->capture_default_str();
  grad->add_option("--tolerance", gc.tolerance)->capture_default_str();
  grad->add_option("--dropout", gc.dropout)->capture_default_str();
  grad->add_flag("--inject-fault", gc.inject_fault)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (extract->parsed()) cmd_extract(ex, out);
    if (trn->parsed()) cmd_train(tr, out);
    if (gen->parsed()) cmd_generate(ge, out);
    if (eva->parsed()) cmd_evaluate(ev, out);
    if (grad->parsed()) return cmd_gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace planwrite
