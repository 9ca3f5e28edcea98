#include "ccot/pipeline.hpp"

#include <fstream>

#include "ccot/error.hpp"

namespace ccot::pipeline {

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void echo_config(const RunConfig& c) { config::write(paths(c).config(), c); }

}  // namespace

RunPaths paths(const RunConfig& c) { return {c.run_dir}; }

void require_file(const std::filesystem::path& p, const std::string& produced_by) {
  if (!std::filesystem::exists(p)) {
    throw MissingArtifact("missing artifact " + p.string() + " (run `" + produced_by + "` first)");
  }
}

void gen_data(const RunConfig& c, const Log& log) {
  const auto splits = tasks::gen_corpus(c.corpus);
  const auto p = paths(c);
  tasks::save_jsonl(p.corpus("train"), splits.train);
  tasks::save_jsonl(p.corpus("val"), splits.validation);
  tasks::save_jsonl(p.corpus("test"), splits.test);
  echo_config(c);
  say(log, "corpus: " + std::to_string(splits.train.size()) + " train, " + std::to_string(splits.validation.size()) +
               " val, " + std::to_string(splits.test.size()) + " test");
}

Corpus load_corpus(const RunConfig& c) {
  const auto p = paths(c);
  Corpus out;
  for (const char* split : {"train", "val", "test"}) require_file(p.corpus(split), "gen-data");
  out.train = tasks::load_jsonl(p.corpus("train"));
  out.validation = tasks::load_jsonl(p.corpus("val"));
  out.test = tasks::load_jsonl(p.corpus("test"));
  return out;
}

std::vector<tasks::ReasoningSample> finetune_items(const RunConfig& c, const Corpus& corpus) {
  const std::size_t n = c.syngen_samples == 0 ? corpus.train.size() : std::min(c.syngen_samples, corpus.train.size());
  return {corpus.train.begin(), corpus.train.begin() + static_cast<std::ptrdiff_t>(n)};
}

void pretrain(const RunConfig& c, const Log& log) {
  const auto corpus = load_corpus(c);
  auto schedule = c.pretrain;
  schedule.verbose = false;
  model::PretrainReport rep;
  const auto params = model::pretrain_raw(c.model, corpus.train, corpus.validation, schedule, &rep);
  const auto p = paths(c);
  model::save_checkpoint(p.raw_model(), params);
  nlohmann::ordered_json j;
  j["initial_heldout_loss"] = rep.initial_heldout_loss;
  j["final_heldout_loss"] = rep.final_heldout_loss;
  j["heldout_loss"] = rep.heldout_loss;
  j["checksum"] = model::checksum(params.named());
  std::filesystem::create_directories(p.report("").parent_path());
  std::ofstream(p.report("pretrain.json")) << j.dump(2) << '\n';
  echo_config(c);
  say(log, "pretrain: held-out loss " + fmt("%.4f", rep.initial_heldout_loss) + " -> " +
               fmt("%.4f", rep.final_heldout_loss));
}

model::TransformerParams load_raw(const RunConfig& c) {
  const auto p = paths(c);
  require_file(p.raw_model(), "pretrain");
  auto ck = model::load_checkpoint(p.raw_model());
  require(ck.params.config == c.model, "raw checkpoint does not match the configured model shape");
  return std::move(ck.params);
}

void syngen(const RunConfig& c, const Log& log) {
  const auto corpus = load_corpus(c);
  const auto params = load_raw(c);
  const auto items = finetune_items(c, corpus);
  const auto records = syngen::generate(params, items, c.syngen, c.seed + config::kSyngenSeed,
                                        [&](std::size_t done, std::size_t total) {
                                          if (done % 200 == 0 || done == total) {
                                            say(log, "syngen: " + std::to_string(done) + "/" + std::to_string(total));
                                          }
                                        });
  const auto p = paths(c);
  syngen::save_sidecar(p.synthetic(), records);
  syngen::save_trace(p.synthetic_trace(), records);
  echo_config(c);
}

void finetune(const RunConfig& c, const Log& log) {
  const auto corpus = load_corpus(c);
  const auto params = load_raw(c);
  const auto p = paths(c);
  std::map<std::uint64_t, ad::Tensor> synthetic;
  if (!c.refine.no_synthetic_align) {
    if (!std::filesystem::exists(p.synthetic())) {
      throw MissingArtifact("missing artifact " + p.synthetic().string() +
                            " (run `syngen` first or pass --no-synthetic-align)");
    }
    synthetic = syngen::load_sidecar(p.synthetic());
  }
  const auto items = finetune_items(c, corpus);
  auto result = refine::finetune(params, items, synthetic, c.refine, [&](const refine::EpochLog& e) {
    say(log, "finetune: epoch " + std::to_string(e.epoch) + " l_align " + fmt("%.4f", e.l_align) + " l_ans' " +
                 fmt("%.4f", e.l_ans_prime));
  });
  model::save_adapters(p.adapters(), result.adapters);
  refine::save_log(p.report("finetune_log.json"), c.refine, result.log);
  echo_config(c);
}

model::AdapterSet load_adapters(const RunConfig& c, const model::ModelConfig& mc) {
  const auto p = paths(c);
  require_file(p.adapters(), "finetune");
  return model::load_adapters(p.adapters(), mc);
}

void train_classifier(const RunConfig& c, const Log& log) {
  const auto method = difficulty::parse_method(c.method);
  const auto corpus = load_corpus(c);
  const auto params = load_raw(c);
  const auto p = paths(c);
  difficulty::ClassifierReport rep;
  difficulty::Classifier cls;
  if (method == difficulty::Method::SeqPpl) {
    say(log, "train-classifier: seq_ppl has no trainable parameters");
    return;
  }
  if (method == difficulty::Method::SynAdapt) {
    const auto adapters = load_adapters(c, params.config);
    const auto states = difficulty::cache_eot_states(params, adapters, corpus.train, c.refine.m, c.refine.effective_k());
    difficulty::save_states(p.states("eot_train"), states);
    cls = difficulty::fit_classifier(states, corpus.train, c.classifier, &rep);
  } else {
    const auto states = difficulty::cache_question_states(params, corpus.train);
    difficulty::save_states(p.states("question_train"), states);
    cls = difficulty::fit_classifier(states, corpus.train, c.classifier, &rep);
  }
  difficulty::save_classifier(p.classifier(c.method), cls);
  echo_config(c);
  say(log, "train-classifier: " + std::to_string(rep.pairs) + " pairs, final loss " +
               fmt("%.4f", rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()));
}

router::SolveOptions solve_options(const RunConfig& c) { return {c.refine.m, c.refine.effective_k(), c.max_new}; }

std::vector<router::PreparedItem> prepare_items(const model::TransformerParams& params,
                                                const model::AdapterSet& adapters, const router::SolveOptions& opts,
                                                std::span<const tasks::ReasoningSample> samples, bool with_hard) {
  std::vector<router::PreparedItem> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(router::prepare(params, &adapters, opts, s, with_hard));
  return out;
}

std::vector<double> method_scores(difficulty::Method method, const model::TransformerParams& params,
                                  const difficulty::Classifier* classifier,
                                  std::span<const router::PreparedItem> items,
                                  std::span<const tasks::ReasoningSample> samples) {
  require(items.size() == samples.size(), "method_scores: one prepared item per sample is required");
  std::vector<double> out;
  out.reserve(samples.size());
  if (method == difficulty::Method::SeqPpl) {
    for (const auto& s : difficulty::baseline_seq_ppl(params, samples)) out.push_back(s.value);
    return out;
  }
  require(classifier != nullptr, "method_scores: a trained classifier is required");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (method == difficulty::Method::SynAdapt) {
      out.push_back(difficulty::classifier_forward(*classifier, items[i].eot_state, method).value);
    } else {
      const auto prefix = syngen::question_prefix(samples[i], params.config.special);
      out.push_back(difficulty::classifier_forward(*classifier, difficulty::question_state(params, prefix), method).value);
    }
  }
  return out;
}

namespace {

struct Evaluation {
  std::vector<tasks::ReasoningSample> test;
  std::vector<router::PreparedItem> items;
  std::vector<double> scores;
  evalkit::Anchors anchors;
};

Evaluation run_evaluation(const RunConfig& c, const Log& log) {
  const auto method = difficulty::parse_method(c.method);
  Evaluation ev;
  ev.test = load_corpus(c).test;
  require(!ev.test.empty(), "evaluation split is empty");
  const auto params = load_raw(c);
  const auto adapters = load_adapters(c, params.config);
  std::optional<difficulty::Classifier> cls;
  if (method != difficulty::Method::SeqPpl) {
    require_file(paths(c).classifier(c.method), "train-classifier --method " + c.method);
    cls = difficulty::load_classifier(paths(c).classifier(c.method));
  }
  say(log, "evaluate: preparing " + std::to_string(ev.test.size()) + " items");
  ev.items = prepare_items(params, adapters, solve_options(c), ev.test);
  ev.scores = method_scores(method, params, cls ? &*cls : nullptr, ev.items, ev.test);
  ev.anchors = evalkit::raw_anchors(ev.items);
  return ev;
}

}  // namespace

evalkit::EvalReport evaluate(const RunConfig& c, const Log& log) {
  const auto ev = run_evaluation(c, log);
  std::vector<router::SolveRecord> records;
  std::vector<bool> gold;
  for (std::size_t i = 0; i < ev.items.size(); ++i) {
    records.push_back(router::select(ev.items[i], ev.scores[i], c.tau));
    gold.push_back(ev.test[i].hard());
  }
  const auto p = paths(c);
  router::save_records(p.report("records_" + c.method + ".jsonl"), records);
  auto report = evalkit::make_report(records, config::to_json(c), c.method, c.tau, ev.anchors, gold);
  evalkit::emit_report(report, p.report("eval_" + c.method + ".json"));
  echo_config(c);
  say(log, "evaluate: acc " + fmt("%.4f", report.acc) + " len " + fmt("%.2f", report.len) + " rel_g " +
               fmt("%.4f", report.rel_g.value_or(0.0)) + " hard_ratio " + fmt("%.3f", report.hard_ratio));
  return report;
}

std::vector<evalkit::SweepRow> sweep(const RunConfig& c, const Log& log) {
  const auto ev = run_evaluation(c, log);
  auto rows = evalkit::sweep_tau(ev.items, ev.scores, c.sweep_taus, ev.anchors);
  evalkit::write_curve_csv(paths(c).report("sweep_" + c.method + ".csv"), rows);
  echo_config(c);
  say(log, evalkit::curve_csv(rows));
  return rows;
}

router::SolveRecord solve(const RunConfig& c, const tasks::ReasoningSample& sample) {
  if (difficulty::parse_method(c.method) != difficulty::Method::SynAdapt) {
    contract_fail("solve routes with the synadapt classifier only");
  }
  const auto params = load_raw(c);
  const auto adapters = load_adapters(c, params.config);
  require_file(paths(c).classifier("synadapt"), "train-classifier");
  const auto cls = difficulty::load_classifier(paths(c).classifier("synadapt"));
  return router::solve({&params, &adapters, &cls}, solve_options(c), sample, c.tau);
}

}  // namespace ccot::pipeline
