#include "ccot/syngen.hpp"

#include <cmath>
#include <fstream>

#include "ccot/archive.hpp"
#include "ccot/error.hpp"
#include "json.hpp"

namespace ccot::syngen {

namespace {

std::size_t width(const model::TransformerParams& p) { return static_cast<std::size_t>(p.config.d_model); }

void require_frozen(const model::TransformerParams& params) {
  for (const auto& t : params.leaves()) {
    require(!t.requires_grad(), "optimize_synthetic: base parameters must be frozen");
  }
}

std::vector<Tensor> eot_rows(const model::HiddenStates& hs, std::size_t pos) {
  std::vector<Tensor> out;
  for (const auto& l : hs.layers) out.push_back(ad::slice_rows(l, pos, pos + 1));
  return out;
}

// One pass over [prefix, Z, eot, A[:-1]] yields both losses: causality makes
// the eot states identical to those of the shorter loss_dcot pass.
std::pair<Tensor, Tensor> joint_losses(const model::TransformerParams& params, std::span<const int> prefix,
                                       const Tensor& z, std::span<const int> answer,
                                       std::span<const Tensor> dcot_states) {
  model::HybridInput in;
  in.tokens(prefix).vectors(z).token(params.config.special.eot).tokens(answer.first(answer.size() - 1));
  model::ForwardOptions opt;
  opt.logits_from = prefix.size() + z.rows();
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  return {ad::cross_entropy(hs.logits, answer), eot_alignment(eot_rows(hs, prefix.size() + z.rows()), dcot_states)};
}

}  // namespace

std::vector<float> embedding_column_std(const model::TransformerParams& params) {
  const auto& e = params.tok_embed;
  const std::size_t rows = e.rows();
  const std::size_t d = e.cols();
  std::vector<float> out(d);
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0, ss = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      s += e.at(r, c);
      ss += static_cast<double>(e.at(r, c)) * e.at(r, c);
    }
    const double mean = s / rows;
    out[c] = static_cast<float>(std::sqrt(std::max(0.0, ss / rows - mean * mean)));
  }
  return out;
}

ContinuousSequence init_synthetic(Rng& rng, int m, const model::TransformerParams& params) {
  require(m >= 1, "init_synthetic: m must be at least 1");
  const auto stds = embedding_column_std(params);
  const std::size_t d = stds.size();
  std::vector<float> v(static_cast<std::size_t>(m) * d);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.gaussian() * stds[i % d]);
  return {Tensor::from({static_cast<std::size_t>(m), d}, std::move(v)), Role::Synthetic, 0};
}

std::vector<int> question_prefix(const tasks::ReasoningSample& s, const model::SpecialTokens& special) {
  std::vector<int> out{special.bos};
  const auto q = tasks::question_tokens(s);
  out.insert(out.end(), q.begin(), q.end());
  return out;
}

std::vector<int> answer_targets(const tasks::ReasoningSample& s, const model::SpecialTokens& special) {
  auto out = tasks::answer_tokens(s);
  out.push_back(special.eos);
  return out;
}

Tensor loss_ans(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                std::span<const int> answer) {
  require(!answer.empty(), "loss_ans: empty answer");
  require(z.rank() == 2 && z.cols() == width(params), "loss_ans: Z must be m x d_model");
  model::HybridInput in;
  in.tokens(prefix).vectors(z).token(params.config.special.eot).tokens(answer.first(answer.size() - 1));
  model::ForwardOptions opt;
  opt.logits_from = prefix.size() + z.rows();
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  return ad::cross_entropy(hs.logits, answer);
}

std::vector<Tensor> dcot_eot_states(const model::TransformerParams& params, std::span<const int> prefix,
                                    std::span<const int> dcot) {
  model::HybridInput in;
  in.tokens(prefix).token(params.config.special.think_sep).tokens(dcot).token(params.config.special.eot);
  model::ForwardOptions opt;
  opt.compute_logits = false;
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  std::vector<Tensor> out;
  for (const auto& t : eot_rows(hs, in.length() - 1)) out.push_back(t.detach());
  return out;
}

Tensor eot_alignment(std::span<const Tensor> a, std::span<const Tensor> b) {
  require(!a.empty() && a.size() == b.size(), "eot_alignment: layer counts differ");
  Tensor total;
  for (std::size_t l = 0; l < a.size(); ++l) {
    require(a[l].size() == b[l].size(), "eot_alignment: state widths differ");
    Tensor term = ad::sum(ad::abs(ad::sub(a[l], b[l].detach())));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0f / static_cast<float>(a.size()));
}

Tensor loss_dcot(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                 std::span<const Tensor> dcot_states) {
  require(z.rank() == 2 && z.cols() == width(params), "loss_dcot: Z must be m x d_model");
  model::HybridInput in;
  in.tokens(prefix).vectors(z).token(params.config.special.eot);
  model::ForwardOptions opt;
  opt.compute_logits = false;
  auto hs = model::forward_hybrid(params, nullptr, in, opt);
  return eot_alignment(eot_rows(hs, in.length() - 1), dcot_states);
}

Tensor loss_dcot(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z,
                 std::span<const int> dcot) {
  return loss_dcot(params, prefix, z, dcot_eot_states(params, prefix, dcot));
}

SyntheticRecord optimize_synthetic(const model::TransformerParams& params, const tasks::ReasoningSample& sample,
                                   const SyngenConfig& config, const Tensor& init) {
  require(config.steps >= 1, "optimize_synthetic: steps must be at least 1");
  require(init.rank() == 2 && init.rows() == static_cast<std::size_t>(config.m) && init.cols() == width(params),
          "optimize_synthetic: initial Z must be m x d_model");
  require_frozen(params);
  const auto& sp = params.config.special;
  const auto prefix = question_prefix(sample, sp);
  const auto answer = answer_targets(sample, sp);
  const auto target = dcot_eot_states(params, prefix, tasks::dcot_tokens(sample));
  const auto lambda = static_cast<float>(config.lambda_dcot);

  SyntheticRecord rec;
  rec.id = sample.id;
  rec.config = config;
  Tensor z = init.detach();
  z.set_requires_grad(true);
  auto adam = ad::make_adam({.lr = config.lr}, std::span(&z, 1));
  auto evaluate = [&](double& la, double& ld) {
    auto [a, d] = joint_losses(params, prefix, z, answer, target);
    la = a.item();
    ld = d.item();
    return ad::add(a, ad::scale(d, lambda));
  };
  for (int step = 0; step < config.steps; ++step) {
    TracePoint tp{step, 0.0, 0.0, 0.0};
    Tensor total = evaluate(tp.l_ans, tp.l_dcot);
    tp.total = total.item();
    if (!std::isfinite(total.item())) {
      throw DivergenceError("optimize_synthetic: non-finite loss for sample " + std::to_string(sample.id) +
                            " at step " + std::to_string(step));
    }
    rec.trace.push_back(tp);
    z.zero_grad();
    ad::backward(total);
    ad::adam_update(adam, std::span(&z, 1));
  }
  z.set_requires_grad(false);
  evaluate(rec.final_l_ans, rec.final_l_dcot);
  if (!std::isfinite(rec.final_l_ans) || !std::isfinite(rec.final_l_dcot)) {
    throw DivergenceError("optimize_synthetic: non-finite loss for sample " + std::to_string(sample.id) +
                          " after step " + std::to_string(config.steps - 1));
  }
  rec.z = {z, Role::Synthetic, 0};
  return rec;
}

std::vector<SyntheticRecord> generate(const model::TransformerParams& params,
                                      std::span<const tasks::ReasoningSample> samples, const SyngenConfig& config,
                                      std::uint64_t seed,
                                      const std::function<void(std::size_t, std::size_t)>& progress) {
  std::vector<SyntheticRecord> out;
  out.reserve(samples.size());
  Rng shared_rng(seed);
  const Tensor shared = init_synthetic(shared_rng, config.m, params).z;
  for (const auto& s : samples) {
    Tensor init = shared;
    if (!config.shared_init) {
      Rng rng(mix_seed(seed, s.id));
      init = init_synthetic(rng, config.m, params).z;
    }
    out.push_back(optimize_synthetic(params, s, config, init));
    if (progress) progress(out.size(), samples.size());
  }
  return out;
}

void save_sidecar(const std::filesystem::path& path, std::span<const SyntheticRecord> records) {
  archive::TensorArchive ar;
  for (const auto& r : records) {
    const auto& z = r.z.z;
    ar.add("syn." + std::to_string(r.id), {z.rows(), z.cols()}, {z.values().begin(), z.values().end()});
  }
  archive::write_file(path, ar);
}

std::map<std::uint64_t, Tensor> load_sidecar(const std::filesystem::path& path) {
  std::map<std::uint64_t, Tensor> out;
  const auto ar = archive::read_file(path);
  for (const auto& e : ar.entries()) {
    if (e.name.rfind("syn.", 0) != 0 || e.dims.size() != 2) {
      throw FormatError("sidecar: unexpected tensor \"" + e.name + "\"");
    }
    std::uint64_t id = 0;
    try {
      id = std::stoull(e.name.substr(4));
    } catch (const std::exception&) {
      throw FormatError("sidecar: bad sample id in \"" + e.name + "\"");
    }
    out[id] = Tensor::from({e.dims[0], e.dims[1]}, e.data);
  }
  return out;
}

void save_trace(const std::filesystem::path& path, std::span<const SyntheticRecord> records) {
  nlohmann::ordered_json doc;
  if (!records.empty()) {
    const auto& c = records.front().config;
    doc["config"] = {{"m", c.m}, {"steps", c.steps}, {"lr", c.lr}, {"lambda_dcot", c.lambda_dcot},
                     {"shared_init", c.shared_init}};
  }
  auto& arr = doc["samples"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json trace = nlohmann::ordered_json::array();
    for (const auto& t : r.trace) trace.push_back({t.step, t.l_ans, t.l_dcot});
    arr.push_back({{"id", r.id}, {"trace", trace}, {"final_l_ans", r.final_l_ans}, {"final_l_dcot", r.final_l_dcot}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace ccot::syngen
