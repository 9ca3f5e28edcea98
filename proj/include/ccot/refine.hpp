#pragma once
// Adapter fine-tuning that teaches the model to refine a meaningless draft
// sequence into a continuous chain of thought. Each iteration feeds
// [bos, Q, Z] through the adapted model and reads back the final hidden
// states at the Z positions. After k iterations the result is aligned with
// the synthetic target (mean absolute difference) and must let the frozen
// base model answer.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "ccot/model.hpp"
#include "ccot/syngen.hpp"

namespace ccot::refine {

using ad::Tensor;
using syngen::ContinuousSequence;

struct RefineConfig {
  int m = 16;
  int k = 4;
  int epochs = 3;
  double lr = 4e-4;
  int batch_size = 16;
  bool no_synthetic_align = false;
  bool no_iterative_refine = false;
  // Backpropagate only through the last `window` iterations; 0 = all.
  int truncation_window = 0;
  // Weight of l_align in the training objective. The per-element mean makes
  // its gradient m*d_model times weaker than the plain L1 norm.
  double align_weight = 1.0;
  int rank = 8;
  float alpha = 32.0f;
  std::uint64_t seed = 1;

  int effective_k() const { return no_iterative_refine ? 1 : k; }
  // Throws ContractError on m < 1, k < 1, epochs < 0, batch_size < 1.
  void validate() const;
};

struct LossBreakdown {
  Tensor l_align;  // undefined when alignment is switched off
  Tensor l_ans_prime;
  Tensor l_refine;
};

// m copies of the draft token embedding.
ContinuousSequence init_draft(const model::TransformerParams& params, int m);

// One pass of the adapted model over [prefix, z_prev]; returns the final
// hidden states at the z positions.
Tensor refine_once(const model::TransformerParams& params, const model::AdapterSet& adapters,
                   std::span<const int> prefix, const Tensor& z_prev);

// k-fold composition starting from the draft. With a truncation window w > 0,
// iterations before the last w are computed without a gradient path.
ContinuousSequence refine_k(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const int> prefix, int m, int k, int truncation_window = 0);

// l_align = mean |Z_final - Z_syn| (Z_syn constant), l_ans_prime = answer
// loss of the frozen model after [prefix, Z_final, eot], l_refine =
// align_weight * l_align + l_ans_prime. Pass an undefined z_syn to drop the
// alignment term.
LossBreakdown loss_refine(const model::TransformerParams& params, const Tensor& z_final, const Tensor& z_syn,
                          std::span<const int> prefix, std::span<const int> answer, float align_weight = 1.0f);

struct EpochLog {
  int epoch = 0;
  double l_align = 0.0;  // mean over samples; 0 when alignment is off
  double l_ans_prime = 0.0;
  double l_refine = 0.0;
};

struct FinetuneResult {
  model::AdapterSet adapters;
  std::vector<EpochLog> log;
};

// Trains fresh adapters (seeded by config.seed). Throws ContractError when a
// sample lacks a synthetic target while alignment is on, and DivergenceError
// on a non-finite loss.
FinetuneResult finetune(const model::TransformerParams& params, std::span<const tasks::ReasoningSample> train,
                        const std::map<std::uint64_t, Tensor>& synthetic, const RefineConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

// Mean l_align of the current adapters over the given samples.
double mean_alignment(const model::TransformerParams& params, const model::AdapterSet& adapters,
                      std::span<const tasks::ReasoningSample> samples,
                      const std::map<std::uint64_t, Tensor>& synthetic, const RefineConfig& config);

// JSON log: {"config": {...}, "epochs": [{"epoch", "l_align", "l_ans_prime", "l_refine"}, ...]}
void save_log(const std::filesystem::path& path, const RefineConfig& config, std::span<const EpochLog> log);

}  // namespace ccot::refine
