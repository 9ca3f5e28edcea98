#pragma once
// Decoder-only causal transformer with hybrid token/vector inputs.
//
// Layout per block (pre-norm):
//   h = rmsnorm(x); x += Attn(rope(h Wq), rope(h Wk), h Wv) Wo
//   h = rmsnorm(x); x += silu(h Wup) Wdown
// Weights are stored [in x out]. Vector inputs enter the residual stream at
// the same point as token embeddings; positions are applied only through the
// rotary encoding inside attention.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ccot/autodiff.hpp"
#include "ccot/tasks.hpp"

namespace ccot::model {

using ad::Tensor;
using kernels::Trans;

struct SpecialTokens {
  int pad = tasks::tok::kPad;
  int bos = tasks::tok::kBos;
  int eos = tasks::tok::kEos;
  int eot = tasks::tok::kEot;
  int draft = tasks::tok::kDraft;
  int think_sep = tasks::tok::kThinkSep;
};

struct ModelConfig {
  int vocab_size = tasks::tok::kVocabSize;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 512;
  int ffn_mult = 4;
  SpecialTokens special;

  int head_dim() const { return d_model / n_heads; }
  // Throws ContractError on inconsistent settings.
  void validate() const;
  bool operator==(const ModelConfig& o) const;
};

struct LayerParams {
  Tensor attn_norm, wq, wk, wv, wo;
  Tensor ffn_norm, w_up, w_down;
};

struct TransformerParams {
  ModelConfig config;
  Tensor tok_embed;  // vocab x d
  std::vector<LayerParams> layers;
  Tensor final_norm;
  Tensor unembed;  // d x vocab
  std::shared_ptr<const ad::RopeTable> rope;

  static TransformerParams init(const ModelConfig& config, std::uint64_t seed);

  // Stable (name, tensor) order used by checkpoints and checksums.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> leaves() const;
  void set_trainable(bool on) const;
  // Deep copy with fresh leaves.
  TransformerParams clone() const;
};

// ---- adapters -----------------------------------------------------------------

enum class AdaptTarget : int { Query = 0, Value = 1, FfnUp = 2 };
inline constexpr int kAdaptTargets = 3;

struct LowRankFactor {
  Tensor a;  // rank x in
  Tensor b;  // out x rank
};

// Effective weight of an adapted matrix: W + (alpha / rank) * (B A)^T in the
// [in x out] storage convention.
struct AdapterSet {
  int rank = 8;
  float alpha = 32.0f;
  bool enabled = true;
  std::vector<std::array<LowRankFactor, kAdaptTargets>> layers;

  float scale() const { return alpha / static_cast<float>(rank); }
  // A drawn from N(0, 1/in), B zero, so a fresh set leaves the model unchanged.
  static AdapterSet init(const ModelConfig& config, int rank, float alpha, std::uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> leaves() const;
  void set_trainable(bool on) const;
  AdapterSet clone() const;
};

// ---- hybrid inputs -------------------------------------------------------------

class HybridInput {
 public:
  HybridInput& tokens(std::span<const int> ids);
  HybridInput& token(int id);
  // Rows of a [n x d_model] matrix, each one input position.
  HybridInput& vectors(const Tensor& rows);

  std::size_t length() const { return length_; }
  struct Segment {
    std::vector<int> tokens;
    Tensor vectors;
  };
  const std::vector<Segment>& segments() const { return segments_; }

 private:
  std::vector<Segment> segments_;
  std::size_t length_ = 0;
};

struct HiddenStates {
  std::vector<Tensor> layers;  // n_layers entries, each T x d (residual after block l)
  Tensor output;               // T x d after the final normalization
  Tensor logits;               // rows [logits_from, T) x vocab; undefined when skipped
  std::size_t logits_from = 0;
};

struct ForwardOptions {
  bool compute_logits = true;
  std::size_t logits_from = 0;
};

HiddenStates forward_hybrid(const TransformerParams& params, const AdapterSet* adapters, const HybridInput& input,
                            ForwardOptions options = {});

// Row i is the embedding of tokens[i]; no position information is added.
Tensor embed(const TransformerParams& params, std::span<const int> tokens);

// ---- inference -----------------------------------------------------------------

// Incremental inference with a key/value cache. Uses the same kernels and
// row-level arithmetic as forward_hybrid, so logits agree bit-for-bit.
class Decoder {
 public:
  Decoder(const TransformerParams& params, const AdapterSet* adapters);
  void feed(const HybridInput& input);
  void feed_token(int id);
  std::span<const float> last_logits() const { return logits_; }
  std::size_t position() const { return position_; }

 private:
  void feed_row(std::span<const float> x);

  const TransformerParams& params_;
  const AdapterSet* adapters_;
  std::size_t position_ = 0;
  std::vector<std::vector<float>> keys_, values_;
  std::vector<float> logits_;
};

// Lowest index among the maxima.
int argmax(std::span<const float> logits);

// Appends argmax tokens until eos (kept as the final token) or max_new tokens.
// Throws ContractError when the prefix does not fit max_seq_len; generation
// stops silently when the sequence reaches max_seq_len.
std::vector<int> decode_greedy(const TransformerParams& params, const AdapterSet* adapters, const HybridInput& prefix,
                               int max_new);

// ---- pretraining ---------------------------------------------------------------

struct PretrainSchedule {
  int steps = 3000;
  int batch_size = 16;
  double lr = 3e-3;
  int warmup = 100;
  double final_lr_fraction = 0.05;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  int eval_every = 500;
  std::size_t eval_samples = 200;
  bool verbose = false;
};

struct PretrainReport {
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::vector<std::pair<int, double>> train_loss;    // (step, mean batch loss)
  std::vector<std::pair<int, double>> heldout_loss;  // (step, loss)
};

// [bos, Q, think_sep, DCoT, eot, A, eos]
std::vector<int> training_sequence(const tasks::ReasoningSample& sample, const SpecialTokens& special);

// Mean next-token loss over the sequence (all positions after bos).
Tensor sequence_loss(const TransformerParams& params, std::span<const int> sequence);
double heldout_loss(const TransformerParams& params, std::span<const tasks::ReasoningSample> samples);

// Trains params in place with Adam, linear warmup and cosine decay.
PretrainReport pretrain(TransformerParams& params, std::span<const tasks::ReasoningSample> train,
                        std::span<const tasks::ReasoningSample> heldout, const PretrainSchedule& schedule);

TransformerParams pretrain_raw(const ModelConfig& config, std::span<const tasks::ReasoningSample> train,
                               std::span<const tasks::ReasoningSample> heldout, const PretrainSchedule& schedule,
                               PretrainReport* report = nullptr);

// FNV-1a over names, shapes and raw float bits.
std::uint64_t checksum(const std::vector<std::pair<std::string, Tensor>>& named);

// ---- checkpoints -----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TransformerParams& params,
                     const AdapterSet* adapters = nullptr);

struct Checkpoint {
  TransformerParams params;
  std::optional<AdapterSet> adapters;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters);
AdapterSet load_adapters(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace ccot::model
