#include "ccot/config.hpp"

#include <cstdlib>
#include <fstream>

#include "ccot/error.hpp"
#include "ccot/version.hpp"

namespace ccot::config {

namespace {

using nlohmann::json;

// Reads `key` from object `j` into `out` when present; tracks visited keys.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FormatError("config: \"" + path_ + "\" must be an object");
  }

  template <class T>
  Section& get(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw FormatError("config: key \"" + name(key) + "\" has the wrong type");
    }
    return *this;
  }

  const json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      bool known = false;
      for (const auto& s : seen_) known = known || s == k;
      if (!known) throw FormatError("config: unknown key \"" + name(k) + "\"");
    }
  }

 private:
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace

void RunConfig::propagate() {
  corpus.seed = seed + kCorpusSeed;
  pretrain.seed = seed + kPretrainSeed;
  refine.seed = seed + kRefineSeed;
  classifier.seed = seed + kClassifierSeed;
  refine.m = syngen.m;
}

void RunConfig::validate() const {
  model.validate();
  refine.validate();
  require(tau >= 0.0 && tau <= 1.0, "config: tau must lie in [0, 1]");
  difficulty::parse_method(method);
  require(max_new >= 1, "config: max_new must be at least 1");
  require(syngen.m >= 1 && syngen.steps >= 1, "config: syngen m and steps must be at least 1");
  require(syngen.lr >= 0.0 && syngen.lambda_dcot >= 0.0, "config: syngen lr and lambda_dcot must be non-negative");
  require(pretrain.steps >= 0 && pretrain.batch_size >= 1 && pretrain.lr >= 0.0, "config: bad pretrain schedule");
  require(corpus.per_depth >= 1 && corpus.min_depth >= tasks::kMinDepth && corpus.max_depth <= tasks::kMaxDepth &&
              corpus.min_depth <= corpus.max_depth,
          "config: bad corpus settings");
  require(classifier.margin >= 1 && classifier.epochs >= 0 && classifier.batch_size >= 1,
          "config: bad classifier schedule");
  require(!sweep_taus.empty(), "config: sweep_taus must not be empty");
  for (double t : sweep_taus) require(t >= 0.0 && t <= 1.0, "config: every sweep tau must lie in [0, 1]");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["version"] = tool_version();
  j["seed"] = c.seed;
  j["run_dir"] = c.run_dir;
  j["tau"] = c.tau;
  j["method"] = c.method;
  j["max_new"] = c.max_new;
  j["model"] = {{"d_model", c.model.d_model},         {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},         {"max_seq_len", c.model.max_seq_len},
                {"ffn_mult", c.model.ffn_mult}};
  j["corpus"] = {{"per_depth", c.corpus.per_depth},
                 {"min_depth", c.corpus.min_depth},
                 {"max_depth", c.corpus.max_depth},
                 {"disguised_fraction", c.corpus.disguised_fraction},
                 {"val_fraction", c.corpus.val_fraction},
                 {"test_fraction", c.corpus.test_fraction}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"warmup", c.pretrain.warmup},
                   {"final_lr_fraction", c.pretrain.final_lr_fraction},
                   {"clip_norm", c.pretrain.clip_norm}};
  j["syngen"] = {{"m", c.syngen.m},
                 {"steps", c.syngen.steps},
                 {"lr", c.syngen.lr},
                 {"lambda_dcot", c.syngen.lambda_dcot},
                 {"shared_init", c.syngen.shared_init},
                 {"samples", c.syngen_samples}};
  j["refine"] = {{"k", c.refine.k},
                 {"epochs", c.refine.epochs},
                 {"lr", c.refine.lr},
                 {"batch_size", c.refine.batch_size},
                 {"rank", c.refine.rank},
                 {"alpha", c.refine.alpha},
                 {"truncation_window", c.refine.truncation_window},
                 {"align_weight", c.refine.align_weight},
                 {"no_synthetic_align", c.refine.no_synthetic_align},
                 {"no_iterative_refine", c.refine.no_iterative_refine}};
  j["classifier"] = {{"margin", c.classifier.margin},         {"max_pairs", c.classifier.max_pairs},
                     {"epochs", c.classifier.epochs},         {"batch_size", c.classifier.batch_size},
                     {"lr", c.classifier.lr},                 {"hidden", c.classifier.hidden}};
  j["sweep_taus"] = c.sweep_taus;
  return j;
}

RunConfig from_json(const nlohmann::json& j, RunConfig c) {
  Section top(j, "");
  std::string version;
  top.get("version", version)
      .get("seed", c.seed)
      .get("run_dir", c.run_dir)
      .get("tau", c.tau)
      .get("method", c.method)
      .get("max_new", c.max_new)
      .get("sweep_taus", c.sweep_taus);
  if (const auto* s = top.child("model")) {
    Section(*s, "model")
        .get("d_model", c.model.d_model)
        .get("n_layers", c.model.n_layers)
        .get("n_heads", c.model.n_heads)
        .get("max_seq_len", c.model.max_seq_len)
        .get("ffn_mult", c.model.ffn_mult)
        .finish();
  }
  if (const auto* s = top.child("corpus")) {
    Section(*s, "corpus")
        .get("per_depth", c.corpus.per_depth)
        .get("min_depth", c.corpus.min_depth)
        .get("max_depth", c.corpus.max_depth)
        .get("disguised_fraction", c.corpus.disguised_fraction)
        .get("val_fraction", c.corpus.val_fraction)
        .get("test_fraction", c.corpus.test_fraction)
        .finish();
  }
  if (const auto* s = top.child("pretrain")) {
    Section(*s, "pretrain")
        .get("steps", c.pretrain.steps)
        .get("batch_size", c.pretrain.batch_size)
        .get("lr", c.pretrain.lr)
        .get("warmup", c.pretrain.warmup)
        .get("final_lr_fraction", c.pretrain.final_lr_fraction)
        .get("clip_norm", c.pretrain.clip_norm)
        .finish();
  }
  if (const auto* s = top.child("syngen")) {
    Section(*s, "syngen")
        .get("m", c.syngen.m)
        .get("steps", c.syngen.steps)
        .get("lr", c.syngen.lr)
        .get("lambda_dcot", c.syngen.lambda_dcot)
        .get("shared_init", c.syngen.shared_init)
        .get("samples", c.syngen_samples)
        .finish();
  }
  if (const auto* s = top.child("refine")) {
    Section(*s, "refine")
        .get("k", c.refine.k)
        .get("epochs", c.refine.epochs)
        .get("lr", c.refine.lr)
        .get("batch_size", c.refine.batch_size)
        .get("rank", c.refine.rank)
        .get("alpha", c.refine.alpha)
        .get("truncation_window", c.refine.truncation_window)
        .get("align_weight", c.refine.align_weight)
        .get("no_synthetic_align", c.refine.no_synthetic_align)
        .get("no_iterative_refine", c.refine.no_iterative_refine)
        .finish();
  }
  if (const auto* s = top.child("classifier")) {
    Section(*s, "classifier")
        .get("margin", c.classifier.margin)
        .get("max_pairs", c.classifier.max_pairs)
        .get("epochs", c.classifier.epochs)
        .get("batch_size", c.classifier.batch_size)
        .get("lr", c.classifier.lr)
        .get("hidden", c.classifier.hidden)
        .finish();
  }
  top.finish();
  c.propagate();
  return c;
}

RunConfig resolve(const std::optional<std::filesystem::path>& file, const Overrides& f, Stage stage) {
  RunConfig c;
  if (const char* env = std::getenv(kRunDirEnv); env != nullptr && *env != '\0') c.run_dir = env;
  if (file) c = read(*file);
  if (f.seed) c.seed = *f.seed;
  if (f.run_dir) c.run_dir = *f.run_dir;
  if (f.tau) c.tau = *f.tau;
  if (f.m) c.syngen.m = *f.m;
  if (f.k) c.refine.k = *f.k;
  if (f.method) c.method = *f.method;
  if (f.max_new) c.max_new = *f.max_new;
  if (f.no_synthetic_align) c.refine.no_synthetic_align = true;
  if (f.no_iterative_refine) c.refine.no_iterative_refine = true;
  if (f.steps) {
    if (stage == Stage::Pretrain) c.pretrain.steps = *f.steps;
    else if (stage == Stage::Syngen) c.syngen.steps = *f.steps;
    else contract_fail("--steps applies to pretrain and syngen only");
  }
  if (f.lr) {
    if (stage == Stage::Pretrain) c.pretrain.lr = *f.lr;
    else if (stage == Stage::Syngen) c.syngen.lr = *f.lr;
    else if (stage == Stage::Finetune) c.refine.lr = *f.lr;
    else contract_fail("--lr applies to pretrain, syngen and finetune only");
  }
  c.propagate();
  c.validate();
  return c;
}

void write(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

RunConfig read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  RunConfig base;
  if (const char* env = std::getenv(kRunDirEnv); env != nullptr && *env != '\0') base.run_dir = env;
  return from_json(j, base);
}

}  // namespace ccot::config
