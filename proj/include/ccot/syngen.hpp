#pragma once
// Synthetic continuous chains of thought: per sample, a fixed-length sequence
// Z of input vectors is optimized against the frozen base model so that
// [bos, Q, Z, eot] yields the gold answer and its eot hidden states match the
// ones produced after the discrete chain [bos, Q, think_sep, DCoT, eot].

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "ccot/model.hpp"
#include "ccot/rng.hpp"

namespace ccot::syngen {

using ad::Tensor;

enum class Role { Synthetic, Draft, Final };

struct ContinuousSequence {
  Tensor z;  // m x d_model
  Role role = Role::Synthetic;
  int iteration = 0;
};

// Gaussian entries with mean 0; column j uses the standard deviation of
// embedding column j.
ContinuousSequence init_synthetic(Rng& rng, int m, const model::TransformerParams& params);
std::vector<float> embedding_column_std(const model::TransformerParams& params);

// [bos, Q]
std::vector<int> question_prefix(const tasks::ReasoningSample& s, const model::SpecialTokens& special);
// Answer tokens followed by eos; the eos target teaches the model where to stop.
std::vector<int> answer_targets(const tasks::ReasoningSample& s, const model::SpecialTokens& special);

// Mean teacher-forced NLL of `answer` after [prefix, Z, eot] with adapters off.
Tensor loss_ans(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                std::span<const int> answer);

// Per-layer hidden states (1 x d each) at the eot position of
// [prefix, think_sep, dcot, eot]; returned detached.
std::vector<Tensor> dcot_eot_states(const model::TransformerParams& params, std::span<const int> prefix,
                                    std::span<const int> dcot);

// (1/L) * sum_l ||a_l - b_l||_1 where b is treated as a constant.
Tensor eot_alignment(std::span<const Tensor> a, std::span<const Tensor> b);

Tensor loss_dcot(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                 std::span<const Tensor> dcot_states);
// Convenience form that runs the discrete pass itself.
Tensor loss_dcot(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                 std::span<const int> dcot);

struct SyngenConfig {
  int m = 16;
  int steps = 32;
  double lr = 1e-3;
  double lambda_dcot = 1.0;
  // One initial draw for every sample instead of one per sample.
  bool shared_init = true;
};

struct TracePoint {
  int step = 0;
  double l_ans = 0.0;
  double l_dcot = 0.0;
  double total = 0.0;  // l_ans + lambda_dcot * l_dcot
};

struct SyntheticRecord {
  std::uint64_t id = 0;
  ContinuousSequence z;
  std::vector<TracePoint> trace;  // losses before each update
  double final_l_ans = 0.0;       // after the last update
  double final_l_dcot = 0.0;
  SyngenConfig config;
};

// Optimizes `init` in place of a fresh draw. Throws ContractError when any
// base parameter requires a gradient and DivergenceError on a non-finite loss.
SyntheticRecord optimize_synthetic(const model::TransformerParams& params, const tasks::ReasoningSample& sample,
                                   const SyngenConfig& config, const Tensor& init);

// Initial draws come from `seed`: one common draw when config.shared_init,
// otherwise one per sample keyed by its id.
std::vector<SyntheticRecord> generate(const model::TransformerParams& params,
                                      std::span<const tasks::ReasoningSample> samples, const SyngenConfig& config,
                                      std::uint64_t seed,
                                      const std::function<void(std::size_t done, std::size_t total)>& progress = {});

// Sidecar archive: one m x d tensor per sample named "syn.<id>".
void save_sidecar(const std::filesystem::path& path, std::span<const SyntheticRecord> records);
std::map<std::uint64_t, Tensor> load_sidecar(const std::filesystem::path& path);

// JSON loss-trace log: {"config": {...}, "samples": [{"id", "trace": [[step, l_ans, l_dcot], ...],
// "final_l_ans", "final_l_dcot"}, ...]}
void save_trace(const std::filesystem::path& path, std::span<const SyntheticRecord> records);

}  // namespace ccot::syngen
