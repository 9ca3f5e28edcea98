#pragma once
// Resolved settings for a whole pipeline run. Precedence: command-line flags,
// then the config file, then the defaults below. One global seed fans out to
// per-stage seeds by fixed offsets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccot/difficulty.hpp"
#include "ccot/model.hpp"
#include "ccot/refine.hpp"
#include "ccot/syngen.hpp"
#include "ccot/tasks.hpp"
#include "json.hpp"

namespace ccot::config {

inline constexpr const char* kRunDirEnv = "CCOT_RUN_DIR";
inline constexpr const char* kDefaultRunDir = "runs/default";

// Seed offsets from the global seed.
inline constexpr std::uint64_t kCorpusSeed = 0;
inline constexpr std::uint64_t kPretrainSeed = 1;
inline constexpr std::uint64_t kSyngenSeed = 2;
inline constexpr std::uint64_t kRefineSeed = 3;
inline constexpr std::uint64_t kClassifierSeed = 4;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string run_dir = kDefaultRunDir;
  double tau = 0.5;
  std::string method = "synadapt";
  int max_new = 160;
  model::ModelConfig model;
  tasks::CorpusConfig corpus{.per_depth = 500};
  model::PretrainSchedule pretrain;
  // Input embeddings here have unit scale, so Z needs a larger step than
  // the module default to move within 32 steps.
  syngen::SyngenConfig syngen{.lr = 3e-2};
  // Synthetic targets are generated for the first `syngen_samples` training
  // items; 0 means all of them. Fine-tuning uses the same items, and the
  // remainder stays held out.
  std::size_t syngen_samples = 3000;
  refine::RefineConfig refine{.lr = 3e-3, .align_weight = 30.0};
  difficulty::ClassifierSchedule classifier;
  std::vector<double> sweep_taus{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

  // Copies the global seed and shared sizes into the stage settings.
  void propagate();
  // Throws ContractError on any out-of-range value.
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
// Overlays `j` on `base`. Throws FormatError naming the first unknown key or
// mistyped value.
RunConfig from_json(const nlohmann::json& j, RunConfig base = {});

// Command-line overrides; unset members leave the value alone.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> run_dir;
  std::optional<double> tau;
  std::optional<int> m;
  std::optional<int> k;
  std::optional<int> steps;  // pretrain or syngen steps, per stage
  std::optional<double> lr;  // pretrain, syngen or refine rate, per stage
  bool no_synthetic_align = false;
  bool no_iterative_refine = false;
  std::optional<std::string> method;
  std::optional<int> max_new;
};

enum class Stage { GenData, Pretrain, Syngen, Finetune, TrainClassifier, Evaluate, Sweep, Solve };

// flags > file > defaults. The run directory defaults to $CCOT_RUN_DIR when
// set. `--steps` and `--lr` apply to the stage being run.
RunConfig resolve(const std::optional<std::filesystem::path>& file, const Overrides& flags, Stage stage);

void write(const std::filesystem::path& path, const RunConfig& c);
RunConfig read(const std::filesystem::path& path);

}  // namespace ccot::config
