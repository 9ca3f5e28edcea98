#include "ccot/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ccot/archive.hpp"
#include "ccot/error.hpp"
#include "ccot/rng.hpp"

namespace ccot::model {

namespace {

Tensor gaussian_leaf(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(rng.gaussian() * stddev);
  return Tensor::from({rows, cols}, std::move(v));
}

Tensor filled_leaf(std::size_t n, float value) { return Tensor::from({n}, std::vector<float>(n, value)); }

Tensor copy_leaf(const Tensor& t) { return t.detach(); }

const char* target_name(int t) {
  static constexpr const char* kNames[kAdaptTargets] = {"wq", "wv", "w_up"};
  return kNames[t];
}

bool adapters_active(const AdapterSet* a) { return a != nullptr && a->enabled && !a->layers.empty(); }

// x W, plus the low-rank correction (x A^T) B^T scaled by alpha / rank.
Tensor project(const Tensor& x, const Tensor& w, const AdapterSet* adapters, std::size_t layer, AdaptTarget target) {
  Tensor y = ad::matmul(x, w);
  if (!adapters_active(adapters)) return y;
  const auto& f = adapters->layers[layer][static_cast<int>(target)];
  Tensor low = ad::matmul(ad::matmul(x, f.a, Trans::No, Trans::Yes), f.b, Trans::No, Trans::Yes);
  return ad::add(y, ad::scale(low, adapters->scale()));
}

Tensor assemble(const TransformerParams& params, const HybridInput& input) {
  const auto d = static_cast<std::size_t>(params.config.d_model);
  std::vector<Tensor> parts;
  for (const auto& seg : input.segments()) {
    if (!seg.tokens.empty()) {
      parts.push_back(ad::embedding(params.tok_embed, seg.tokens));
    } else {
      require(seg.vectors.cols() == d, "forward_hybrid: vector inputs must have d_model columns");
      parts.push_back(seg.vectors);
    }
  }
  if (parts.size() == 1) return parts.front();
  return ad::concat_rows(parts);
}

void check_adapters(const TransformerParams& params, const AdapterSet* adapters) {
  if (!adapters_active(adapters)) return;
  require(adapters->layers.size() == params.layers.size(), "adapters: layer count does not match the model");
}

std::vector<float> config_floats(const ModelConfig& c) {
  return {static_cast<float>(c.vocab_size), static_cast<float>(c.d_model),     static_cast<float>(c.n_layers),
          static_cast<float>(c.n_heads),    static_cast<float>(c.max_seq_len), static_cast<float>(c.ffn_mult)};
}

std::vector<float> special_floats(const SpecialTokens& s) {
  return {static_cast<float>(s.pad),   static_cast<float>(s.bos),       static_cast<float>(s.eos),
          static_cast<float>(s.eot),   static_cast<float>(s.draft),     static_cast<float>(s.think_sep)};
}

int as_int(float v, const char* what) {
  if (!std::isfinite(v) || v != std::round(v)) throw FormatError(std::string("checkpoint: non-integer ") + what);
  return static_cast<int>(v);
}

void put(archive::TensorArchive& ar, const std::string& name, const Tensor& t) {
  std::vector<std::uint64_t> dims(t.shape().begin(), t.shape().end());
  ar.add(name, std::move(dims), std::vector<float>(t.values().begin(), t.values().end()));
}

void fill(const archive::TensorArchive& ar, const std::string& name, Tensor& t) {
  const auto& e = ar.at(name);
  std::vector<std::uint64_t> want(t.shape().begin(), t.shape().end());
  if (e.dims != want) throw FormatError("checkpoint: tensor \"" + name + "\" has unexpected shape");
  std::copy(e.data.begin(), e.data.end(), t.mutable_values().begin());
}

void put_adapters(archive::TensorArchive& ar, const AdapterSet& a) {
  ar.add("adapter.meta", {3},
         {static_cast<float>(a.rank), a.alpha, a.enabled ? 1.0f : 0.0f});
  for (const auto& [name, t] : a.named()) put(ar, "adapter." + name, t);
}

AdapterSet take_adapters(const archive::TensorArchive& ar, const ModelConfig& config) {
  const auto& meta = ar.at("adapter.meta");
  if (meta.data.size() != 3) throw FormatError("checkpoint: malformed adapter.meta");
  const int rank = as_int(meta.data[0], "adapter rank");
  if (rank <= 0) throw FormatError("checkpoint: adapter rank must be positive");
  AdapterSet a = AdapterSet::init(config, rank, meta.data[1], 0);
  a.enabled = meta.data[2] != 0.0f;
  for (auto& [name, t] : a.named()) {
    Tensor tt = t;
    fill(ar, "adapter." + name, tt);
  }
  return a;
}

}  // namespace

// ---- config --------------------------------------------------------------------

void ModelConfig::validate() const {
  require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && max_seq_len > 0 && ffn_mult > 0,
          "model config: sizes must be positive");
  require(d_model % n_heads == 0, "model config: d_model must be divisible by n_heads");
  require(head_dim() % 2 == 0, "model config: head dimension must be even for rotary encoding");
  const int ids[] = {special.pad, special.bos, special.eos, special.eot, special.draft, special.think_sep};
  for (std::size_t i = 0; i < std::size(ids); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab_size, "model config: special token outside vocabulary");
    for (std::size_t j = 0; j < i; ++j) require(ids[i] != ids[j], "model config: special tokens must be distinct");
  }
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  return config_floats(*this) == config_floats(o) && special_floats(special) == special_floats(o.special);
}

// ---- parameters ----------------------------------------------------------------

TransformerParams TransformerParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = d * static_cast<std::size_t>(config.ffn_mult);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * config.n_layers);

  TransformerParams p;
  p.config = config;
  p.tok_embed = gaussian_leaf(v, d, 1.0, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams layer;
    layer.attn_norm = filled_leaf(d, 1.0f);
    layer.wq = gaussian_leaf(d, d, in_std, rng);
    layer.wk = gaussian_leaf(d, d, in_std, rng);
    layer.wv = gaussian_leaf(d, d, in_std, rng);
    layer.wo = gaussian_leaf(d, d, out_std, rng);
    layer.ffn_norm = filled_leaf(d, 1.0f);
    layer.w_up = gaussian_leaf(d, f, in_std, rng);
    layer.w_down = gaussian_leaf(f, d, out_std / std::sqrt(static_cast<double>(config.ffn_mult)), rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = filled_leaf(d, 1.0f);
  p.unembed = gaussian_leaf(d, v, in_std, rng);
  p.rope = std::make_shared<const ad::RopeTable>(
      ad::RopeTable::build(static_cast<std::size_t>(config.head_dim()), static_cast<std::size_t>(config.max_seq_len)));
  return p;
}

std::vector<std::pair<std::string, Tensor>> TransformerParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_embed", tok_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto pre = "layers." + std::to_string(l) + ".";
    const auto& L = layers[l];
    out.emplace_back(pre + "attn_norm", L.attn_norm);
    out.emplace_back(pre + "wq", L.wq);
    out.emplace_back(pre + "wk", L.wk);
    out.emplace_back(pre + "wv", L.wv);
    out.emplace_back(pre + "wo", L.wo);
    out.emplace_back(pre + "ffn_norm", L.ffn_norm);
    out.emplace_back(pre + "w_up", L.w_up);
    out.emplace_back(pre + "w_down", L.w_down);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("unembed", unembed);
  return out;
}

std::vector<Tensor> TransformerParams::leaves() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

void TransformerParams::set_trainable(bool on) const {
  for (auto t : leaves()) t.set_requires_grad(on);
}

TransformerParams TransformerParams::clone() const {
  TransformerParams p;
  p.config = config;
  p.tok_embed = copy_leaf(tok_embed);
  for (const auto& L : layers) {
    p.layers.push_back({copy_leaf(L.attn_norm), copy_leaf(L.wq), copy_leaf(L.wk), copy_leaf(L.wv), copy_leaf(L.wo),
                        copy_leaf(L.ffn_norm), copy_leaf(L.w_up), copy_leaf(L.w_down)});
  }
  p.final_norm = copy_leaf(final_norm);
  p.unembed = copy_leaf(unembed);
  p.rope = rope;
  return p;
}

AdapterSet AdapterSet::init(const ModelConfig& config, int rank, float alpha, std::uint64_t seed) {
  require(rank > 0, "adapters: rank must be positive");
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = d * static_cast<std::size_t>(config.ffn_mult);
  const auto r = static_cast<std::size_t>(rank);
  AdapterSet a;
  a.rank = rank;
  a.alpha = alpha;
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < config.n_layers; ++l) {
    std::array<LowRankFactor, kAdaptTargets> layer;
    const std::size_t outs[kAdaptTargets] = {d, d, f};
    for (int t = 0; t < kAdaptTargets; ++t) {
      layer[t].a = gaussian_leaf(r, d, std_in, rng);
      layer[t].b = Tensor::zeros({outs[t], r});
    }
    a.layers.push_back(std::move(layer));
  }
  return a;
}

std::vector<std::pair<std::string, Tensor>> AdapterSet::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (int t = 0; t < kAdaptTargets; ++t) {
      const auto pre = "layers." + std::to_string(l) + "." + target_name(t) + ".";
      out.emplace_back(pre + "a", layers[l][t].a);
      out.emplace_back(pre + "b", layers[l][t].b);
    }
  }
  return out;
}

std::vector<Tensor> AdapterSet::leaves() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

void AdapterSet::set_trainable(bool on) const {
  for (auto t : leaves()) t.set_requires_grad(on);
}

AdapterSet AdapterSet::clone() const {
  AdapterSet a;
  a.rank = rank;
  a.alpha = alpha;
  a.enabled = enabled;
  for (const auto& layer : layers) {
    std::array<LowRankFactor, kAdaptTargets> copy;
    for (int t = 0; t < kAdaptTargets; ++t) copy[t] = {copy_leaf(layer[t].a), copy_leaf(layer[t].b)};
    a.layers.push_back(std::move(copy));
  }
  return a;
}

// ---- hybrid inputs -------------------------------------------------------------

HybridInput& HybridInput::tokens(std::span<const int> ids) {
  if (ids.empty()) return *this;
  if (segments_.empty() || segments_.back().tokens.empty()) segments_.push_back({});
  segments_.back().tokens.insert(segments_.back().tokens.end(), ids.begin(), ids.end());
  length_ += ids.size();
  return *this;
}

HybridInput& HybridInput::token(int id) { return tokens(std::span<const int>(&id, 1)); }

HybridInput& HybridInput::vectors(const Tensor& rows) {
  require(rows.defined() && rows.rank() == 2, "HybridInput: vectors must be a matrix");
  if (rows.rows() == 0) return *this;
  segments_.push_back({{}, rows});
  length_ += rows.rows();
  return *this;
}

// ---- forward -------------------------------------------------------------------

Tensor embed(const TransformerParams& params, std::span<const int> tokens) {
  return ad::embedding(params.tok_embed, tokens);
}

HiddenStates forward_hybrid(const TransformerParams& params, const AdapterSet* adapters, const HybridInput& input,
                            ForwardOptions options) {
  const auto& cfg = params.config;
  require(input.length() > 0, "forward_hybrid: empty input");
  require(input.length() <= static_cast<std::size_t>(cfg.max_seq_len),
          "forward_hybrid: input of length " + std::to_string(input.length()) + " exceeds max_seq_len " +
              std::to_string(cfg.max_seq_len));
  require(options.logits_from < input.length(), "forward_hybrid: logits_from beyond the input");
  check_adapters(params, adapters);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);

  HiddenStates out;
  Tensor x = assemble(params, input);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    Tensor h = ad::rmsnorm(x, L.attn_norm);
    Tensor q = ad::rope(project(h, L.wq, adapters, l, AdaptTarget::Query), heads, *params.rope);
    Tensor k = ad::rope(ad::matmul(h, L.wk), heads, *params.rope);
    Tensor v = project(h, L.wv, adapters, l, AdaptTarget::Value);
    x = ad::add(x, ad::matmul(ad::causal_attention(q, k, v, heads), L.wo));
    h = ad::rmsnorm(x, L.ffn_norm);
    Tensor u = ad::silu(project(h, L.w_up, adapters, l, AdaptTarget::FfnUp));
    x = ad::add(x, ad::matmul(u, L.w_down));
    out.layers.push_back(x);
  }
  out.output = ad::rmsnorm(x, params.final_norm);
  if (options.compute_logits) {
    out.logits_from = options.logits_from;
    Tensor tail = options.logits_from == 0 ? out.output
                                           : ad::slice_rows(out.output, options.logits_from, input.length());
    out.logits = ad::matmul(tail, params.unembed);
  }
  return out;
}

// ---- decoder -------------------------------------------------------------------

Decoder::Decoder(const TransformerParams& params, const AdapterSet* adapters)
    : params_(params), adapters_(adapters_active(adapters) ? adapters : nullptr) {
  check_adapters(params, adapters_);
  keys_.resize(params.layers.size());
  values_.resize(params.layers.size());
}

void Decoder::feed(const HybridInput& input) {
  const auto d = static_cast<std::size_t>(params_.config.d_model);
  for (const auto& seg : input.segments()) {
    if (!seg.tokens.empty()) {
      for (int id : seg.tokens) feed_token(id);
    } else {
      require(seg.vectors.cols() == d, "Decoder: vector inputs must have d_model columns");
      for (std::size_t r = 0; r < seg.vectors.rows(); ++r) feed_row(seg.vectors.values().subspan(r * d, d));
    }
  }
}

void Decoder::feed_token(int id) {
  Tensor row = ad::embedding(params_.tok_embed, std::span<const int>(&id, 1));
  feed_row(row.values());
}

// Mirrors forward_hybrid for a single new row: every op runs on a 1 x d view
// and attention reads the cached keys/values with the same kernels.
void Decoder::feed_row(std::span<const float> xin) {
  const auto& cfg = params_.config;
  require(position_ < static_cast<std::size_t>(cfg.max_seq_len), "Decoder: sequence exceeds max_seq_len");
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / heads;
  const std::size_t n = position_ + 1;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));

  Tensor x = Tensor::from({1, d}, std::vector<float>(xin.begin(), xin.end()));
  std::vector<float> scores(n), att(d);
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const auto& L = params_.layers[l];
    Tensor h = ad::rmsnorm(x, L.attn_norm);
    Tensor q = ad::rope(project(h, L.wq, adapters_, l, AdaptTarget::Query), heads, *params_.rope, position_);
    Tensor k = ad::rope(ad::matmul(h, L.wk), heads, *params_.rope, position_);
    Tensor v = project(h, L.wv, adapters_, l, AdaptTarget::Value);
    auto& K = keys_[l];
    auto& V = values_[l];
    K.insert(K.end(), k.values().begin(), k.values().end());
    V.insert(V.end(), v.values().begin(), v.values().end());
    for (std::size_t hd = 0; hd < heads; ++hd) {
      kernels::gemm(Trans::No, Trans::Yes, {1, n, dh}, q.data() + hd * dh, d, K.data() + hd * dh, d, scores.data(),
                    n, false);
      float mx = scores[0] * sc;
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[j] * sc);
      float total = 0.0f;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] * sc - mx);
        total += scores[j];
      }
      const float inv = 1.0f / total;
      for (std::size_t j = 0; j < n; ++j) scores[j] *= inv;
      kernels::gemm(Trans::No, Trans::No, {1, dh, n}, scores.data(), n, V.data() + hd * dh, d, att.data() + hd * dh,
                    d, false);
    }
    x = ad::add(x, ad::matmul(Tensor::from({1, d}, att), L.wo));
    h = ad::rmsnorm(x, L.ffn_norm);
    Tensor u = ad::silu(project(h, L.w_up, adapters_, l, AdaptTarget::FfnUp));
    x = ad::add(x, ad::matmul(u, L.w_down));
  }
  Tensor logits = ad::matmul(ad::rmsnorm(x, params_.final_norm), params_.unembed);
  logits_.assign(logits.values().begin(), logits.values().end());
  ++position_;
}

int argmax(std::span<const float> logits) {
  require(!logits.empty(), "argmax: empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<int> decode_greedy(const TransformerParams& params, const AdapterSet* adapters, const HybridInput& prefix,
                               int max_new) {
  require(max_new >= 0, "decode_greedy: max_new must be non-negative");
  require(prefix.length() > 0, "decode_greedy: empty prefix");
  require(prefix.length() <= static_cast<std::size_t>(params.config.max_seq_len),
          "decode_greedy: prefix of length " + std::to_string(prefix.length()) + " exceeds max_seq_len");
  std::vector<int> out;
  if (max_new == 0) return out;
  Decoder dec(params, adapters);
  dec.feed(prefix);
  const auto limit = static_cast<std::size_t>(params.config.max_seq_len);
  while (static_cast<int>(out.size()) < max_new) {
    const int next = argmax(dec.last_logits());
    out.push_back(next);
    if (next == params.config.special.eos || dec.position() >= limit) break;
    if (static_cast<int>(out.size()) < max_new) dec.feed_token(next);
  }
  return out;
}

// ---- pretraining ---------------------------------------------------------------

std::vector<int> training_sequence(const tasks::ReasoningSample& sample, const SpecialTokens& special) {
  std::vector<int> seq{special.bos};
  auto append = [&seq](const std::vector<int>& v) { seq.insert(seq.end(), v.begin(), v.end()); };
  append(tasks::question_tokens(sample));
  seq.push_back(special.think_sep);
  append(tasks::dcot_tokens(sample));
  seq.push_back(special.eot);
  append(tasks::answer_tokens(sample));
  seq.push_back(special.eos);
  return seq;
}

Tensor sequence_loss(const TransformerParams& params, std::span<const int> sequence) {
  require(sequence.size() >= 2, "sequence_loss: need at least two tokens");
  HybridInput in;
  in.tokens(sequence.first(sequence.size() - 1));
  auto hs = forward_hybrid(params, nullptr, in);
  return ad::cross_entropy(hs.logits, sequence.subspan(1));
}

double heldout_loss(const TransformerParams& params, std::span<const tasks::ReasoningSample> samples) {
  require(!samples.empty(), "heldout_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    total += sequence_loss(params, training_sequence(s, params.config.special)).item();
  }
  return total / static_cast<double>(samples.size());
}

PretrainReport pretrain(TransformerParams& params, std::span<const tasks::ReasoningSample> train,
                        std::span<const tasks::ReasoningSample> heldout, const PretrainSchedule& schedule) {
  require(!train.empty(), "pretrain: empty training set");
  require(schedule.steps >= 0 && schedule.batch_size > 0, "pretrain: invalid schedule");
  const auto eval_set = heldout.first(std::min(heldout.size(), schedule.eval_samples));
  PretrainReport report;
  if (!eval_set.empty()) report.initial_heldout_loss = heldout_loss(params, eval_set);

  std::vector<std::vector<int>> seqs;
  seqs.reserve(train.size());
  for (const auto& s : train) seqs.push_back(training_sequence(s, params.config.special));

  params.set_trainable(true);
  auto leaves = params.leaves();
  auto adam = ad::make_adam({.lr = schedule.lr}, leaves);
  Rng rng(schedule.seed);
  const float inv_batch = 1.0f / static_cast<float>(schedule.batch_size);
  for (int step = 0; step < schedule.steps; ++step) {
    double lr = schedule.lr;
    if (step < schedule.warmup) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(schedule.warmup);
    } else {
      const double span = std::max(1, schedule.steps - schedule.warmup);
      const double progress = static_cast<double>(step - schedule.warmup) / span;
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      lr *= schedule.final_lr_fraction + (1.0 - schedule.final_lr_fraction) * cosine;
    }
    adam.config.lr = lr;
    for (auto& t : leaves) t.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < schedule.batch_size; ++b) {
      const auto& seq = seqs[rng.below(seqs.size())];
      Tensor loss = sequence_loss(params, seq);
      batch_loss += loss.item();
      ad::backward(ad::scale(loss, inv_batch));
    }
    batch_loss /= schedule.batch_size;
    if (!std::isfinite(batch_loss)) {
      params.set_trainable(false);
      throw DivergenceError("pretrain: non-finite loss at step " + std::to_string(step));
    }
    if (schedule.clip_norm > 0) ad::clip_grad_norm(leaves, schedule.clip_norm);
    ad::adam_update(adam, leaves);
    report.train_loss.emplace_back(step, batch_loss);
    const bool last = step + 1 == schedule.steps;
    if (!eval_set.empty() && schedule.eval_every > 0 && ((step + 1) % schedule.eval_every == 0 || last)) {
      const double hl = heldout_loss(params, eval_set);
      report.heldout_loss.emplace_back(step + 1, hl);
      if (schedule.verbose) std::fprintf(stderr, "pretrain step %d train %.4f heldout %.4f\n", step + 1, batch_loss, hl);
    }
  }
  params.set_trainable(false);
  report.final_heldout_loss = eval_set.empty() ? 0.0 : heldout_loss(params, eval_set);
  return report;
}

TransformerParams pretrain_raw(const ModelConfig& config, std::span<const tasks::ReasoningSample> train,
                               std::span<const tasks::ReasoningSample> heldout, const PretrainSchedule& schedule,
                               PretrainReport* report) {
  auto params = TransformerParams::init(config, schedule.seed);
  auto r = pretrain(params, train, heldout, schedule);
  if (report) *report = std::move(r);
  return params;
}

std::uint64_t checksum(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte & 0xFF;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [name, t] : named) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (auto dim : t.shape()) {
      for (int i = 0; i < 8; ++i) mix(static_cast<std::uint64_t>(dim) >> (8 * i));
    }
    for (float f : t.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) mix(bits >> (8 * i));
    }
  }
  return h;
}

// ---- checkpoints -----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TransformerParams& params, const AdapterSet* adapters) {
  archive::TensorArchive ar;
  ar.add("meta.config", {6}, config_floats(params.config));
  ar.add("meta.special", {6}, special_floats(params.config.special));
  for (const auto& [name, t] : params.named()) put(ar, name, t);
  if (adapters) put_adapters(ar, *adapters);
  archive::write_file(path, ar);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto ar = archive::read_file(path);
  const auto& cfg = ar.at("meta.config").data;
  const auto& sp = ar.at("meta.special").data;
  if (cfg.size() != 6 || sp.size() != 6) throw FormatError("checkpoint: malformed meta tensors");
  ModelConfig c;
  c.vocab_size = as_int(cfg[0], "vocab_size");
  c.d_model = as_int(cfg[1], "d_model");
  c.n_layers = as_int(cfg[2], "n_layers");
  c.n_heads = as_int(cfg[3], "n_heads");
  c.max_seq_len = as_int(cfg[4], "max_seq_len");
  c.ffn_mult = as_int(cfg[5], "ffn_mult");
  c.special = {as_int(sp[0], "pad"), as_int(sp[1], "bos"),   as_int(sp[2], "eos"),
               as_int(sp[3], "eot"), as_int(sp[4], "draft"), as_int(sp[5], "think_sep")};
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  Checkpoint ck{TransformerParams::init(c, 0), std::nullopt};
  for (auto& [name, t] : ck.params.named()) {
    Tensor tt = t;
    fill(ar, name, tt);
  }
  if (ar.find("adapter.meta")) ck.adapters = take_adapters(ar, c);
  return ck;
}

void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters) {
  archive::TensorArchive ar;
  put_adapters(ar, adapters);
  archive::write_file(path, ar);
}

AdapterSet load_adapters(const std::filesystem::path& path, const ModelConfig& config) {
  return take_adapters(archive::read_file(path), config);
}

}  // namespace ccot::model
