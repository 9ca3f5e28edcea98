#pragma once
// Pipeline stages over a run directory:
//   config.json, corpus/, checkpoints/, syn_ccot/, states/, reports/
// Each stage reads what earlier stages wrote and echoes the resolved config.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ccot/config.hpp"
#include "ccot/evalkit.hpp"

namespace ccot::pipeline {

using config::RunConfig;

// A stage needs an artifact that an earlier stage has not produced.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path corpus(const std::string& split) const { return root / "corpus" / (split + ".jsonl"); }
  std::filesystem::path raw_model() const { return root / "checkpoints" / "raw.syna"; }
  std::filesystem::path adapters() const { return root / "checkpoints" / "adapters.syna"; }
  std::filesystem::path classifier(const std::string& method) const {
    return root / "checkpoints" / ("classifier_" + method + ".syna");
  }
  std::filesystem::path synthetic() const { return root / "syn_ccot" / "synthetic.syna"; }
  std::filesystem::path synthetic_trace() const { return root / "syn_ccot" / "trace.json"; }
  std::filesystem::path states(const std::string& name) const { return root / "states" / (name + ".syna"); }
  std::filesystem::path report(const std::string& name) const { return root / "reports" / name; }
};

RunPaths paths(const RunConfig& c);

using Log = std::function<void(const std::string&)>;

struct Corpus {
  std::vector<tasks::ReasoningSample> train, validation, test;
};

// Throws MissingArtifact naming the file when a stage input is absent.
void require_file(const std::filesystem::path& p, const std::string& produced_by);

void gen_data(const RunConfig& c, const Log& log = {});
Corpus load_corpus(const RunConfig& c);
// The training items used for synthetic targets and fine-tuning.
std::vector<tasks::ReasoningSample> finetune_items(const RunConfig& c, const Corpus& corpus);

void pretrain(const RunConfig& c, const Log& log = {});
model::TransformerParams load_raw(const RunConfig& c);

void syngen(const RunConfig& c, const Log& log = {});
void finetune(const RunConfig& c, const Log& log = {});
model::AdapterSet load_adapters(const RunConfig& c, const model::ModelConfig& mc);

void train_classifier(const RunConfig& c, const Log& log = {});

router::SolveOptions solve_options(const RunConfig& c);
std::vector<router::PreparedItem> prepare_items(const model::TransformerParams& params,
                                                const model::AdapterSet& adapters, const router::SolveOptions& opts,
                                                std::span<const tasks::ReasoningSample> samples, bool with_hard = true);
// Difficulty scores in (0, 1) for each sample under a routing method.
std::vector<double> method_scores(difficulty::Method method, const model::TransformerParams& params,
                                  const difficulty::Classifier* classifier,
                                  std::span<const router::PreparedItem> items,
                                  std::span<const tasks::ReasoningSample> samples);

evalkit::EvalReport evaluate(const RunConfig& c, const Log& log = {});
std::vector<evalkit::SweepRow> sweep(const RunConfig& c, const Log& log = {});
router::SolveRecord solve(const RunConfig& c, const tasks::ReasoningSample& sample);

}  // namespace ccot::pipeline
