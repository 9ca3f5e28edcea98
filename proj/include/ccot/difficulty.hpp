#pragma once
// Difficulty scoring. The main classifier reads the final hidden state at
// eot of [bos, Q, Z_final, eot] under the frozen model and is trained with a
// pairwise ranking loss on (harder, easier) question pairs. Two baselines
// score from the question alone: a probe on the last question state and the
// question's perplexity.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ccot/model.hpp"
#include "ccot/refine.hpp"

namespace ccot::difficulty {

using ad::Tensor;
using State = std::vector<float>;
using StateCache = std::map<std::uint64_t, State>;

enum class Method { SynAdapt, ProbeQ, SeqPpl };
const char* method_name(Method m);
// Throws ContractError for names other than synadapt, probe_q, seq_ppl.
Method parse_method(const std::string& name);

struct Score {
  double value = 0.5;  // in (0, 1), higher = harder
  Method method = Method::SynAdapt;
};

// Two affine layers with a rectifier between them; scalar logit.
struct Classifier {
  Tensor w1;  // d x hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden x 1
  Tensor b2;  // 1

  static Classifier init(std::size_t d, std::size_t hidden, std::uint64_t seed);
  std::size_t width() const { return w1.rows(); }
  std::vector<Tensor> leaves() const;
  // Logits for a batch of states (rows).
  Tensor logits(const Tensor& states) const;
  double logit(std::span<const float> state) const;
};

// Final hidden state at eot of [prefix, z_final, eot], adapters off.
State eot_state(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z_final);
// Final hidden state at the last question token of [prefix].
State question_state(const model::TransformerParams& params, std::span<const int> prefix);

Score classifier_forward(const Classifier& c, std::span<const float> state, Method method = Method::SynAdapt);

// Mean over rows of -log sigmoid(f(h_c) - f(h_r)) on raw logits.
Tensor loss_diff(const Classifier& c, const Tensor& hard_states, const Tensor& easy_states);

struct DifficultyPair {
  std::size_t hard = 0;  // index into the sample list
  std::size_t easy = 0;
};

// Every (hard i, easy j) with difficulty[i] - difficulty[j] >= margin,
// shuffled by seed and truncated to `cap` (0 = no cap). Throws ContractError
// when none exist.
std::vector<DifficultyPair> build_pairs(std::span<const tasks::ReasoningSample> samples, int margin,
                                        std::size_t cap, std::uint64_t seed);

struct ClassifierSchedule {
  int margin = 2;
  std::size_t max_pairs = 20000;
  int epochs = 4;
  int batch_size = 64;
  double lr = 1e-3;
  std::size_t hidden = 0;  // 0 = state width
  std::uint64_t seed = 1;
};

struct ClassifierReport {
  std::vector<double> epoch_loss;
  std::size_t pairs = 0;
  double threshold_logit = 0.0;  // subtracted from b2 during calibration
};

// Trains on cached states, then shifts b2 so that score >= 0.5 is the
// training-set split with the best macro-F1 for the hard label. The shift
// leaves every pairwise loss unchanged.
Classifier fit_classifier(const StateCache& states, std::span<const tasks::ReasoningSample> samples,
                          const ClassifierSchedule& schedule, ClassifierReport* report = nullptr);

// States of [bos, Q, refine_k(Q), eot] for every sample.
StateCache cache_eot_states(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const tasks::ReasoningSample> samples, int m, int k);
StateCache cache_question_states(const model::TransformerParams& params,
                                 std::span<const tasks::ReasoningSample> samples);

Classifier train_classifier(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const tasks::ReasoningSample> samples, int m, int k,
                            const ClassifierSchedule& schedule, ClassifierReport* report = nullptr);
Classifier baseline_probe_q(const model::TransformerParams& params, std::span<const tasks::ReasoningSample> samples,
                            const ClassifierSchedule& schedule, ClassifierReport* report = nullptr);

// exp(mean next-token NLL of Q after bos) under the frozen model.
double question_perplexity(const model::TransformerParams& params, std::span<const int> prefix);
// Min-max rescaling into (0, 1): the minimum maps to eps, the maximum to
// 1 - eps; a constant input maps to 0.5.
std::vector<double> rescale_open_unit(std::span<const double> values, double eps = 1e-6);
// Perplexity scores for an evaluation set, rescaled over that set.
std::vector<Score> baseline_seq_ppl(const model::TransformerParams& params,
                                    std::span<const tasks::ReasoningSample> samples);

// Fraction of pairs whose harder member receives the larger value.
double pairwise_accuracy(std::span<const double> values, std::span<const DifficultyPair> pairs);

// Threshold on raw values with the best macro-F1 for labels (value >= t is hard).
double best_threshold(std::span<const double> values, const std::vector<bool>& hard);

// Archive layout: a [d] tensor per sample named "state.<id>".
void save_states(const std::filesystem::path& path, const StateCache& states);
StateCache load_states(const std::filesystem::path& path);
void save_classifier(const std::filesystem::path& path, const Classifier& c);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace ccot::difficulty
