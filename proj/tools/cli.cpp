#include "cli.hpp"

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ccot/error.hpp"
#include "ccot/pipeline.hpp"
#include "ccot/version.hpp"

namespace ccot::cli {

namespace {

using config::Stage;

struct Flags {
  std::string config_file;
  std::uint64_t seed = 0;
  std::string run_dir;
  double tau = 0.0;
  int m = 0, k = 0, steps = 0, max_new = 0;
  double lr = 0.0;
  bool no_synthetic_align = false;
  bool no_iterative_refine = false;
  std::string method;
  std::string question, answer, input;
};

struct Options {
  CLI::Option *config, *seed, *run_dir, *tau, *m, *k, *steps, *lr, *method, *max_new;
};

config::Overrides overrides(const Flags& f, const Options& o) {
  config::Overrides ov;
  if (*o.seed) ov.seed = f.seed;
  if (*o.run_dir) ov.run_dir = f.run_dir;
  if (*o.tau) ov.tau = f.tau;
  if (*o.m) ov.m = f.m;
  if (*o.k) ov.k = f.k;
  if (*o.steps) ov.steps = f.steps;
  if (*o.lr) ov.lr = f.lr;
  if (*o.method) ov.method = f.method;
  if (*o.max_new) ov.max_new = f.max_new;
  ov.no_synthetic_align = f.no_synthetic_align;
  ov.no_iterative_refine = f.no_iterative_refine;
  return ov;
}

// An explicit --config wins; otherwise the run directory's own config.json
// carries settings from earlier stages.
config::RunConfig resolve(const Flags& f, const Options& o, Stage stage) {
  auto ov = overrides(f, o);
  std::optional<std::filesystem::path> file;
  if (*o.config) {
    file = f.config_file;
  } else {
    std::string dir = config::kDefaultRunDir;
    if (const char* env = std::getenv(config::kRunDirEnv); env != nullptr && *env != '\0') dir = env;
    if (ov.run_dir) dir = *ov.run_dir;
    const auto existing = std::filesystem::path(dir) / "config.json";
    if (std::filesystem::exists(existing)) file = existing;
    ov.run_dir = dir;
  }
  return config::resolve(file, ov, stage);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive continuous chain-of-thought reasoning on a synthetic arithmetic task"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1, 1);

  Flags f;
  Options o{};
  o.config = app.add_option("--config", f.config_file, "JSON config file (flags override its values)");
  o.seed = app.add_option("--seed", f.seed, "global seed; stage seeds are fixed offsets from it");
  o.run_dir = app.add_option("--run-dir", f.run_dir,
                             std::string("run directory (default $") + config::kRunDirEnv + " or " +
                                 config::kDefaultRunDir + ")");
  o.tau = app.add_option("--tau", f.tau, "routing threshold; score >= tau takes the hard path")
              ->check(CLI::Range(0.0, 1.0));
  o.m = app.add_option("--m", f.m, "continuous chain length")->check(CLI::PositiveNumber);
  o.k = app.add_option("--k", f.k, "refinement iterations")->check(CLI::PositiveNumber);
  o.steps = app.add_option("--steps", f.steps, "optimization steps (pretrain, syngen)")->check(CLI::PositiveNumber);
  o.lr = app.add_option("--lr", f.lr, "learning rate (pretrain, syngen, finetune)")->check(CLI::NonNegativeNumber);
  app.add_flag("--no-synthetic-align", f.no_synthetic_align, "fine-tune on the answer loss alone");
  app.add_flag("--no-iterative-refine", f.no_iterative_refine, "refine the draft once instead of k times");
  o.method = app.add_option("--method", f.method, "difficulty scorer for train-classifier, evaluate, sweep")
                 ->check(CLI::IsMember({"synadapt", "probe_q", "seq_ppl"}));
  o.max_new = app.add_option("--max-new", f.max_new, "decode budget in tokens")->check(CLI::PositiveNumber);

  struct Sub {
    const char* name;
    const char* help;
    Stage stage;
  };
  const Sub subs[] = {
      {"gen-data", "generate the seeded corpus splits into corpus/", Stage::GenData},
      {"pretrain", "train the raw model on full chains; writes checkpoints/raw.syna", Stage::Pretrain},
      {"syngen", "optimize synthetic continuous chains; writes syn_ccot/", Stage::Syngen},
      {"finetune", "train refinement adapters; writes checkpoints/adapters.syna", Stage::Finetune},
      {"train-classifier", "train the difficulty classifier; writes states/ and checkpoints/", Stage::TrainClassifier},
      {"evaluate", "route the test split at --tau; writes reports/eval_<method>.json", Stage::Evaluate},
      {"sweep", "sweep tau over the test split; writes reports/sweep_<method>.csv", Stage::Sweep},
      {"solve", "answer one question (--question) or a JSONL file (--input)", Stage::Solve},
  };
  std::map<CLI::App*, Stage> stages;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->fallthrough();
    stages[sub] = s.stage;
    if (s.stage == Stage::Solve) {
      sub->add_option("--question", f.question, "question text, e.g. \"a=2;b=a+3;b?\"");
      sub->add_option("--answer", f.answer, "gold answer for the record (optional)");
      sub->add_option("--input", f.input, "JSONL file of samples; records go to reports/solve.jsonl");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << tool_version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << "run with --help for usage\n";
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  const Stage stage = stages.at(sub);
  const auto log = [&out](const std::string& s) { out << s << '\n' << std::flush; };
  try {
    config::RunConfig c;
    try {
      c = resolve(f, o, stage);
    } catch (const ContractError& e) {
      err << "usage error: " << e.what() << '\n';
      return 2;
    }
    switch (stage) {
      case Stage::GenData: pipeline::gen_data(c, log); break;
      case Stage::Pretrain: pipeline::pretrain(c, log); break;
      case Stage::Syngen: pipeline::syngen(c, log); break;
      case Stage::Finetune: pipeline::finetune(c, log); break;
      case Stage::TrainClassifier: pipeline::train_classifier(c, log); break;
      case Stage::Evaluate: pipeline::evaluate(c, log); break;
      case Stage::Sweep: pipeline::sweep(c, log); break;
      case Stage::Solve: {
        if (f.question.empty() == f.input.empty()) {
          err << "usage error: solve needs exactly one of --question or --input\n";
          return 2;
        }
        if (!f.question.empty()) {
          tasks::ReasoningSample s;
          s.question = f.question;
          s.answer = f.answer;
          tasks::tokenize(s.question);
          const auto r = pipeline::solve(c, s);
          const auto tmp = pipeline::paths(c).report("solve_one.jsonl");
          router::save_records(tmp, std::vector<router::SolveRecord>{r});
          std::ifstream in(tmp);
          out << in.rdbuf();
        } else {
          std::vector<router::SolveRecord> recs;
          for (const auto& s : tasks::load_jsonl(f.input)) recs.push_back(pipeline::solve(c, s));
          router::save_records(pipeline::paths(c).report("solve.jsonl"), recs);
          log("solve: " + std::to_string(recs.size()) + " records");
        }
        break;
      }
    }
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ccot::cli
