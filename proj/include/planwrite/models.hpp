#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "planwrite/corpus.hpp"
#include "planwrite/nn/graph.hpp"
#include "planwrite/nn/tensor.hpp"
#include "planwrite/rake.hpp"

namespace planwrite {

enum class ModelKind { kDynPlan, kDynWrite, kStaticPlan, kStaticWrite, kIncS2S, kCondLm };

inline constexpr ModelKind kAllModelKinds[] = {ModelKind::kDynPlan,     ModelKind::kDynWrite,
                                               ModelKind::kStaticPlan,  ModelKind::kStaticWrite,
                                               ModelKind::kIncS2S,      ModelKind::kCondLm};

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// Planner and writer kinds consume storylines; the baselines do not.
bool uses_storyline(ModelKind kind);
/// The dynamic pair is GRU-based with a fusion gate; the rest are LSTM
/// encoder-decoders with additive attention.
bool is_fusion_model(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::kDynWrite;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  double embed_dropout = 0.0;
  double hidden_dropout = 0.0;

  /// Dimensions >= 1 and dropouts in [0, 0.5]; throws UsageError.
  void validate() const;

  /// Best settings from the published hyper-parameter table.
  static ModelConfig published(ModelKind kind);
};

struct TrainingMeta {
  std::size_t epochs = 0;
  double final_train_nll = 0.0;
  double final_valid_nll = 0.0;  // NaN when no validation data
  std::uint64_t seed = 0;
};

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  nn::ParamSet params;
  TrainingMeta meta;

  std::string to_bytes() const;
  /// Validates every architecture parameter against the config.
  static Checkpoint from_bytes(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Declares the architecture's parameters and fills them uniform(-0.1, 0.1).
Checkpoint init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed);

/// Checks names and shapes against the config; throws DataError.
void validate_params(const Checkpoint& ckpt);

using Distribution = std::vector<double>;

/// title ++ SEP s_1 ++ SEP s_2 ... for the first `n_sentences` sentences.
TokenIds build_context(const TokenIds& title, const std::vector<TokenIds>& sentences, std::size_t n_sentences);

// --- Per-step inference ----------------------------------------------------
// Each call builds a value-only graph over the frozen parameters and is safe
// to run concurrently against the same checkpoint.

Distribution dyn_plan_step(const Checkpoint& ckpt, const TokenIds& ctx, TokenId prev_word);
/// The sigmoid gate k of the fusion step, for inspection.
std::vector<double> dyn_plan_gate(const Checkpoint& ckpt, const TokenIds& ctx, TokenId prev_word);

/// Cached encoder results and recurrent state of the dynamic writer.
struct DynWriteState {
  std::vector<double> attn_context;  // C_att
  std::vector<double> cue_state;     // h_w
  std::vector<double> hidden;        // h_y
  bool empty() const { return hidden.empty(); }
};
/// An empty state triggers encoding of ctx and the cue.
std::pair<Distribution, DynWriteState> dyn_write_step(const Checkpoint& ckpt, const TokenIds& ctx, TokenId cue,
                                                      TokenId prev_out, const DynWriteState& state);

/// Encoder outputs and decoder state of an attention encoder-decoder.
struct Seq2SeqState {
  std::size_t steps = 0;
  std::vector<double> keys;       // [T x 2H]
  std::vector<double> projected;  // [T x H]
  std::vector<double> h;
  std::vector<double> c;
  bool empty() const { return keys.empty(); }
};
Seq2SeqState seq2seq_encode(const Checkpoint& ckpt, const TokenIds& source);
std::pair<Distribution, Seq2SeqState> seq2seq_step(const Checkpoint& ckpt, const Seq2SeqState& state,
                                                   TokenId prev);

/// Stateless conveniences: re-run the decoder over the whole prefix.
Distribution static_plan_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& storyline_prefix);
Distribution static_write_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& storyline,
                               const TokenIds& story_prefix);
Distribution incs2s_step(const Checkpoint& ckpt, const TokenIds& context, const TokenIds& sentence_prefix);
Distribution condlm_step(const Checkpoint& ckpt, const TokenIds& title, const TokenIds& story_prefix);

/// Encoder input of the static writer: title ++ EOT ++ storyline.
TokenIds static_writer_source(const TokenIds& title, const TokenIds& storyline);
/// s_1 SEP s_2 SEP ... s_5 EOS.
TokenIds story_stream(const std::vector<TokenIds>& sentences);

// --- Training ---------------------------------------------------------------

struct Example {
  Story story;
  std::optional<Storyline> storyline;
};

std::vector<Example> make_examples(const std::vector<std::pair<Story, Storyline>>& pairs);
std::vector<Example> make_examples(const std::vector<Story>& stories);

/// Teacher-forced loss of one story: summed token NLL and token count.
struct ExampleLoss {
  nn::Var total;
  std::size_t tokens = 0;
};
ExampleLoss example_loss(nn::Graph& g, const Checkpoint& ckpt, const nn::ParamSet& params, const Example& ex,
                         bool training, nn::Rng& dropout_rng);

/// Mean per-token NLL over a dataset, no dropout.
double evaluate_nll(const Checkpoint& ckpt, const std::vector<Example>& data);

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.5;
  double lr_decay = 0.5;  // applied when the monitored loss fails to improve
  double clip = 5.0;
  std::uint64_t seed = 0;
  double stop_below = 0.0;  // stop once the epoch's train NLL drops below this
};

struct EpochLoss {
  std::size_t epoch = 0;  // 0 = before any update
  double train_nll = 0.0;
  double valid_nll = 0.0;  // NaN without validation data
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> curve;
};

/// Batch-size-1 SGD with per-epoch seeded shuffling. Returns the parameters
/// with the best validation loss (or the last epoch when no validation data
/// is given), rounded to 32-bit floats.
TrainResult train(const std::vector<Example>& train_data, const std::vector<Example>& valid_data,
                  const ModelConfig& config, const Vocabulary& vocab, const TrainOptions& options);

std::string format_loss_csv(const std::vector<EpochLoss>& curve);

}  // namespace planwrite
