#include "ccot/difficulty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ccot/archive.hpp"
#include "ccot/error.hpp"
#include "ccot/metrics.hpp"
#include "ccot/rng.hpp"
#include "ccot/syngen.hpp"

namespace ccot::difficulty {

namespace {

Tensor to_matrix(const std::vector<const State*>& rows) {
  require(!rows.empty(), "difficulty: no states");
  const std::size_t d = rows.front()->size();
  std::vector<float> v;
  v.reserve(rows.size() * d);
  for (const auto* r : rows) {
    require(r->size() == d, "difficulty: state widths differ");
    v.insert(v.end(), r->begin(), r->end());
  }
  return Tensor::from({rows.size(), d}, std::move(v));
}

double squash(double logit) {
  const double s = 1.0 / (1.0 + std::exp(-logit));
  return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

Tensor column(std::vector<float> v) {
  const std::size_t n = v.size();
  return Tensor::from({n}, std::move(v));
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::SynAdapt: return "synadapt";
    case Method::ProbeQ: return "probe_q";
    case Method::SeqPpl: return "seq_ppl";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::SynAdapt, Method::ProbeQ, Method::SeqPpl}) {
    if (name == method_name(m)) return m;
  }
  contract_fail("unknown scoring method \"" + name + "\" (expected synadapt, probe_q or seq_ppl)");
}

Classifier Classifier::init(std::size_t d, std::size_t hidden, std::uint64_t seed) {
  require(d > 0 && hidden > 0, "classifier: sizes must be positive");
  Rng rng(seed);
  auto draw = [&rng](std::size_t rows, std::size_t cols, double stddev) {
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.gaussian() * stddev);
    return Tensor::from({rows, cols}, std::move(v));
  };
  Classifier c;
  c.w1 = draw(d, hidden, std::sqrt(2.0 / static_cast<double>(d)));
  c.b1 = column(std::vector<float>(hidden, 0.0f));
  c.w2 = draw(hidden, 1, 1.0 / std::sqrt(static_cast<double>(hidden)));
  c.b2 = column({0.0f});
  return c;
}

std::vector<Tensor> Classifier::leaves() const { return {w1, b1, w2, b2}; }

Tensor Classifier::logits(const Tensor& states) const {
  require(states.rank() == 2 && states.cols() == width(), "classifier: state width mismatch");
  Tensor h = ad::relu(ad::add_row(ad::matmul(states, w1), b1));
  return ad::add_row(ad::matmul(h, w2), b2);
}

double Classifier::logit(std::span<const float> state) const {
  require(state.size() == width(), "classifier: state width mismatch");
  return logits(Tensor::from({1, state.size()}, {state.begin(), state.end()})).item();
}

State eot_state(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z_final) {
  model::HybridInput in;
  in.tokens(prefix).vectors(z_final).token(params.config.special.eot);
  model::ForwardOptions opt;
  opt.compute_logits = false;
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  const std::size_t d = hs.output.cols();
  const auto v = hs.output.values().subspan((in.length() - 1) * d, d);
  return {v.begin(), v.end()};
}

State question_state(const model::TransformerParams& params, std::span<const int> prefix) {
  model::HybridInput in;
  in.tokens(prefix);
  model::ForwardOptions opt;
  opt.compute_logits = false;
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  const std::size_t d = hs.output.cols();
  const auto v = hs.output.values().subspan((in.length() - 1) * d, d);
  return {v.begin(), v.end()};
}

Score classifier_forward(const Classifier& c, std::span<const float> state, Method method) {
  return {squash(c.logit(state)), method};
}

Tensor loss_diff(const Classifier& c, const Tensor& hard_states, const Tensor& easy_states) {
  require(hard_states.shape() == easy_states.shape(), "loss_diff: batch shapes differ");
  Tensor gap = ad::sub(c.logits(hard_states), c.logits(easy_states));
  return ad::scale(ad::mean(ad::log(ad::sigmoid(gap))), -1.0f);
}

std::vector<DifficultyPair> build_pairs(std::span<const tasks::ReasoningSample> samples, int margin, std::size_t cap,
                                        std::uint64_t seed) {
  require(margin >= 1, "build_pairs: margin must be at least 1");
  std::vector<DifficultyPair> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (samples[i].hard() && !samples[j].hard() && samples[i].difficulty - samples[j].difficulty >= margin) {
        out.push_back({i, j});
      }
    }
  }
  require(!out.empty(), "build_pairs: no pair reaches a difficulty gap of " + std::to_string(margin));
  Rng rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  if (cap > 0 && out.size() > cap) out.resize(cap);
  return out;
}

double pairwise_accuracy(std::span<const double> values, std::span<const DifficultyPair> pairs) {
  require(!pairs.empty(), "pairwise_accuracy: no pairs");
  std::size_t right = 0;
  for (const auto& p : pairs) right += values[p.hard] > values[p.easy];
  return static_cast<double>(right) / static_cast<double>(pairs.size());
}

double best_threshold(std::span<const double> values, const std::vector<bool>& hard) {
  require(!values.empty() && values.size() == hard.size(), "best_threshold: bad input");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{sorted.front() - 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(sorted.back() + 1.0);
  double best_t = candidates.front();
  double best_f1 = -1.0;
  std::vector<bool> pred(values.size());
  for (double t : candidates) {
    for (std::size_t i = 0; i < values.size(); ++i) pred[i] = values[i] >= t;
    const double f1 = metrics::macro_prf(pred, hard).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

Classifier fit_classifier(const StateCache& states, std::span<const tasks::ReasoningSample> samples,
                          const ClassifierSchedule& schedule, ClassifierReport* report) {
  require(!samples.empty(), "fit_classifier: no samples");
  require(schedule.epochs >= 0 && schedule.batch_size >= 1, "fit_classifier: invalid schedule");
  std::vector<const State*> rows;
  for (const auto& s : samples) {
    const auto it = states.find(s.id);
    require(it != states.end(), "fit_classifier: no cached state for sample " + std::to_string(s.id));
    rows.push_back(&it->second);
  }
  const Tensor table = to_matrix(rows);
  const std::size_t d = table.cols();
  Classifier c = Classifier::init(d, schedule.hidden ? schedule.hidden : d, schedule.seed);
  auto pairs = build_pairs(samples, schedule.margin, schedule.max_pairs, mix_seed(schedule.seed, 1));

  auto leaves = c.leaves();
  for (auto& t : leaves) t.set_requires_grad(true);
  auto adam = ad::make_adam({.lr = schedule.lr}, leaves);
  Rng rng(mix_seed(schedule.seed, 2));
  ClassifierReport rep;
  rep.pairs = pairs.size();
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(schedule.batch_size));
      std::vector<int> hi, lo;
      for (std::size_t j = start; j < end; ++j) {
        hi.push_back(static_cast<int>(pairs[j].hard));
        lo.push_back(static_cast<int>(pairs[j].easy));
      }
      for (auto& t : leaves) t.zero_grad();
      Tensor loss = loss_diff(c, ad::embedding(table, hi), ad::embedding(table, lo));
      if (!std::isfinite(loss.item())) {
        for (auto& t : leaves) t.set_requires_grad(false);
        throw DivergenceError("fit_classifier: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      total += loss.item();
      ++batches;
      ad::backward(loss);
      ad::adam_update(adam, leaves);
    }
    rep.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  for (auto& t : leaves) t.set_requires_grad(false);

  const Tensor all = c.logits(table);
  std::vector<double> logits(all.values().begin(), all.values().end());
  std::vector<bool> hard;
  for (const auto& s : samples) hard.push_back(s.hard());
  rep.threshold_logit = best_threshold(logits, hard);
  c.b2.mutable_values()[0] -= static_cast<float>(rep.threshold_logit);
  if (report) *report = std::move(rep);
  return c;
}

StateCache cache_eot_states(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const tasks::ReasoningSample> samples, int m, int k) {
  StateCache out;
  for (const auto& s : samples) {
    const auto prefix = syngen::question_prefix(s, params.config.special);
    const auto z = refine::refine_k(params, adapters, prefix, m, k).z;
    out[s.id] = eot_state(params, prefix, z);
  }
  return out;
}

StateCache cache_question_states(const model::TransformerParams& params,
                                 std::span<const tasks::ReasoningSample> samples) {
  StateCache out;
  for (const auto& s : samples) out[s.id] = question_state(params, syngen::question_prefix(s, params.config.special));
  return out;
}

Classifier train_classifier(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const tasks::ReasoningSample> samples, int m, int k,
                            const ClassifierSchedule& schedule, ClassifierReport* report) {
  return fit_classifier(cache_eot_states(params, adapters, samples, m, k), samples, schedule, report);
}

Classifier baseline_probe_q(const model::TransformerParams& params, std::span<const tasks::ReasoningSample> samples,
                            const ClassifierSchedule& schedule, ClassifierReport* report) {
  return fit_classifier(cache_question_states(params, samples), samples, schedule, report);
}

double question_perplexity(const model::TransformerParams& params, std::span<const int> prefix) {
  require(prefix.size() >= 2, "question_perplexity: empty question");
  model::HybridInput in;
  in.tokens(prefix.first(prefix.size() - 1));
  auto hs = model::forward_hybrid(params, nullptr, in);
  return std::exp(static_cast<double>(ad::cross_entropy(hs.logits, prefix.subspan(1)).item()));
}

std::vector<double> rescale_open_unit(std::span<const double> values, double eps) {
  require(!values.empty(), "rescale_open_unit: empty input");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<double> out;
  for (double v : values) out.push_back(*hi > *lo ? eps + (1.0 - 2.0 * eps) * (v - *lo) / (*hi - *lo) : 0.5);
  return out;
}

std::vector<Score> baseline_seq_ppl(const model::TransformerParams& params,
                                    std::span<const tasks::ReasoningSample> samples) {
  std::vector<double> raw;
  for (const auto& s : samples) raw.push_back(question_perplexity(params, syngen::question_prefix(s, params.config.special)));
  std::vector<Score> out;
  for (double v : rescale_open_unit(raw)) out.push_back({v, Method::SeqPpl});
  return out;
}

void save_states(const std::filesystem::path& path, const StateCache& states) {
  archive::TensorArchive ar;
  for (const auto& [id, s] : states) ar.add("state." + std::to_string(id), {s.size()}, s);
  archive::write_file(path, ar);
}

StateCache load_states(const std::filesystem::path& path) {
  StateCache out;
  const auto ar = archive::read_file(path);
  for (const auto& e : ar.entries()) {
    if (e.name.rfind("state.", 0) != 0 || e.dims.size() != 1) {
      throw FormatError("state cache: unexpected tensor \"" + e.name + "\"");
    }
    try {
      out[std::stoull(e.name.substr(6))] = e.data;
    } catch (const std::logic_error&) {
      throw FormatError("state cache: bad sample id in \"" + e.name + "\"");
    }
  }
  return out;
}

void save_classifier(const std::filesystem::path& path, const Classifier& c) {
  archive::TensorArchive ar;
  const char* names[] = {"classifier.w1", "classifier.b1", "classifier.w2", "classifier.b2"};
  const auto leaves = c.leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<std::uint64_t> dims(leaves[i].shape().begin(), leaves[i].shape().end());
    ar.add(names[i], std::move(dims), {leaves[i].values().begin(), leaves[i].values().end()});
  }
  archive::write_file(path, ar);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const auto ar = archive::read_file(path);
  auto get = [&ar](const char* name, std::size_t rank) {
    const auto& e = ar.at(name);
    if (e.dims.size() != rank) throw FormatError(std::string("classifier: bad rank for ") + name);
    return Tensor::from(ad::Shape(e.dims.begin(), e.dims.end()), e.data);
  };
  Classifier c{get("classifier.w1", 2), get("classifier.b1", 1), get("classifier.w2", 2), get("classifier.b2", 1)};
  if (c.b1.size() != c.w1.cols() || c.w2.rows() != c.w1.cols() || c.w2.cols() != 1 || c.b2.size() != 1) {
    throw FormatError("classifier: inconsistent tensor shapes");
  }
  return c;
}

}  // namespace ccot::difficulty
