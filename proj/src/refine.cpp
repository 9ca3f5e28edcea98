#include "ccot/refine.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ccot/error.hpp"
#include "ccot/rng.hpp"
#include "json.hpp"

namespace ccot::refine {

void RefineConfig::validate() const {
  require(m >= 1, "refine: m must be at least 1");
  require(k >= 1, "refine: k must be at least 1");
  require(epochs >= 0, "refine: epochs must be non-negative");
  require(batch_size >= 1, "refine: batch_size must be at least 1");
  require(align_weight >= 0.0, "refine: align weight must be non-negative");
  require(truncation_window >= 0, "refine: truncation window must be non-negative");
  require(rank >= 1, "refine: adapter rank must be at least 1");
}

ContinuousSequence init_draft(const model::TransformerParams& params, int m) {
  require(m >= 1, "init_draft: m must be at least 1");
  const std::vector<int> ids(static_cast<std::size_t>(m), params.config.special.draft);
  return {model::embed(params, ids).detach(), syngen::Role::Draft, 0};
}

Tensor refine_once(const model::TransformerParams& params, const model::AdapterSet& adapters,
                   std::span<const int> prefix, const Tensor& z_prev) {
  require(z_prev.rank() == 2 && z_prev.rows() >= 1, "refine_once: Z must be a non-empty matrix");
  model::AdapterSet on = adapters;
  on.enabled = true;
  model::HybridInput in;
  in.tokens(prefix).vectors(z_prev);
  model::ForwardOptions opt;
  opt.compute_logits = false;
  auto hs = model::forward_hybrid(params, &on, in, opt);
  return ad::slice_rows(hs.output, prefix.size(), prefix.size() + z_prev.rows());
}

ContinuousSequence refine_k(const model::TransformerParams& params, const model::AdapterSet& adapters,
                            std::span<const int> prefix, int m, int k, int truncation_window) {
  require(k >= 1, "refine_k: k must be at least 1");
  Tensor z = init_draft(params, m).z;
  for (int i = 0; i < k; ++i) {
    if (truncation_window > 0 && i == k - truncation_window) z = z.detach();
    z = refine_once(params, adapters, prefix, z);
  }
  return {z, syngen::Role::Final, k};
}

LossBreakdown loss_refine(const model::TransformerParams& params, const Tensor& z_final, const Tensor& z_syn,
                          std::span<const int> prefix, std::span<const int> answer, float align_weight) {
  LossBreakdown out;
  out.l_ans_prime = syngen::loss_ans(params, prefix, z_final, answer);
  if (!z_syn.defined()) {
    out.l_refine = out.l_ans_prime;
    return out;
  }
  require(z_syn.shape() == z_final.shape(), "loss_refine: Z_final and Z_syn shapes differ");
  out.l_align = ad::mean(ad::abs(ad::sub(z_final, z_syn.detach())));
  out.l_refine = ad::add(align_weight == 1.0f ? out.l_align : ad::scale(out.l_align, align_weight), out.l_ans_prime);
  return out;
}

FinetuneResult finetune(const model::TransformerParams& params, std::span<const tasks::ReasoningSample> train,
                        const std::map<std::uint64_t, Tensor>& synthetic, const RefineConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  require(!train.empty(), "finetune: empty training set");
  const bool align = !config.no_synthetic_align;
  if (align) {
    for (const auto& s : train) {
      const auto it = synthetic.find(s.id);
      require(it != synthetic.end(), "finetune: missing synthetic CCoT for sample " + std::to_string(s.id));
      require(it->second.rows() == static_cast<std::size_t>(config.m) &&
                  it->second.cols() == static_cast<std::size_t>(params.config.d_model),
              "finetune: synthetic CCoT for sample " + std::to_string(s.id) + " has the wrong shape");
    }
  }
  for (const auto& t : params.leaves()) require(!t.requires_grad(), "finetune: base parameters must be frozen");

  FinetuneResult result{model::AdapterSet::init(params.config, config.rank, config.alpha, config.seed), {}};
  auto& adapters = result.adapters;
  adapters.set_trainable(true);
  auto leaves = adapters.leaves();
  auto adam = ad::make_adam({.lr = config.lr}, leaves);
  const auto& sp = params.config.special;
  const int k = config.effective_k();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 0x5eed));
  const float inv_batch = 1.0f / static_cast<float>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    EpochLog log{epoch + 1, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      for (auto& t : leaves) t.zero_grad();
      for (std::size_t j = start; j < end; ++j) {
        const auto& s = train[order[j]];
        const auto prefix = syngen::question_prefix(s, sp);
        const auto answer = syngen::answer_targets(s, sp);
        auto z = refine_k(params, adapters, prefix, config.m, k, config.truncation_window).z;
        auto parts = loss_refine(params, z, align ? synthetic.at(s.id) : Tensor{}, prefix, answer,
                                 static_cast<float>(config.align_weight));
        const double total = parts.l_refine.item();
        if (!std::isfinite(total)) {
          adapters.set_trainable(false);
          throw DivergenceError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1) + " sample " +
                                std::to_string(s.id));
        }
        if (align) log.l_align += parts.l_align.item();
        log.l_ans_prime += parts.l_ans_prime.item();
        log.l_refine += total;
        ad::backward(ad::scale(parts.l_refine, inv_batch));
      }
      ad::adam_update(adam, leaves);
    }
    const double n = static_cast<double>(train.size());
    log.l_align /= n;
    log.l_ans_prime /= n;
    log.l_refine /= n;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  adapters.set_trainable(false);
  return result;
}

double mean_alignment(const model::TransformerParams& params, const model::AdapterSet& adapters,
                      std::span<const tasks::ReasoningSample> samples,
                      const std::map<std::uint64_t, Tensor>& synthetic, const RefineConfig& config) {
  require(!samples.empty(), "mean_alignment: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto it = synthetic.find(s.id);
    require(it != synthetic.end(), "mean_alignment: missing synthetic CCoT for sample " + std::to_string(s.id));
    const auto prefix = syngen::question_prefix(s, params.config.special);
    auto z = refine_k(params, adapters, prefix, config.m, config.effective_k()).z;
    total += ad::mean(ad::abs(ad::sub(z, it->second))).item();
  }
  return total / static_cast<double>(samples.size());
}

void save_log(const std::filesystem::path& path, const RefineConfig& c, std::span<const EpochLog> log) {
  nlohmann::ordered_json doc;
  doc["config"] = {{"m", c.m},
                   {"k", c.k},
                   {"epochs", c.epochs},
                   {"lr", c.lr},
                   {"batch_size", c.batch_size},
                   {"no_synthetic_align", c.no_synthetic_align},
                   {"no_iterative_refine", c.no_iterative_refine},
                   {"truncation_window", c.truncation_window},
                   {"align_weight", c.align_weight},
                   {"rank", c.rank},
                   {"alpha", c.alpha},
                   {"seed", c.seed}};
  auto& arr = doc["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : log) {
    arr.push_back({{"epoch", e.epoch}, {"l_align", e.l_align}, {"l_ans_prime", e.l_ans_prime}, {"l_refine", e.l_refine}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace ccot::refine
