#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "ccot/archive.hpp"
#include "ccot/error.hpp"
#include "ccot/model.hpp"
#include "doctest.h"
#include "reference_model.hpp"

using namespace ccot;
using namespace ccot::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 64;
  return c;
}

// Random adapters with a nonzero B so the low-rank path is exercised.
AdapterSet live_adapters(const ModelConfig& c, std::uint64_t seed) {
  auto a = AdapterSet::init(c, 4, 8.0f, seed);
  Rng rng(seed + 1);
  for (auto& t : a.leaves())
    for (auto& v : t.mutable_values()) v = static_cast<float>(0.1 * rng.gaussian());
  return a;
}

Tensor random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * d);
  for (auto& x : v) x = static_cast<float>(rng.gaussian());
  return Tensor::from({n, d}, std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b, std::size_t rows_a_from = 0, std::size_t rows = SIZE_MAX) {
  const std::size_t c = a.cols();
  rows = std::min({rows, a.rows(), b.rows()});
  return std::memcmp(a.data() + rows_a_from * c, b.data() + rows_a_from * c, (rows - rows_a_from) * c * 4) == 0;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ccot_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.special.eot = c.special.eos;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.special.draft = 64;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("shape contract with mixed tokens and vectors") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 1);
  HybridInput in;
  in.tokens(std::vector<int>{1, 7, 8, 9, 10}).vectors(random_rows(3, 64, 2));
  auto hs = forward_hybrid(p, nullptr, in);
  REQUIRE(hs.layers.size() == 4);
  for (const auto& l : hs.layers) CHECK(l.shape() == ad::Shape{8, 64});
  CHECK(hs.output.shape() == ad::Shape{8, 64});
  CHECK(hs.logits.shape() == ad::Shape{8, 64});

  ForwardOptions opt;
  opt.logits_from = 7;
  auto tail = forward_hybrid(p, nullptr, in, opt);
  CHECK(tail.logits.shape() == ad::Shape{1, 64});
  CHECK(std::memcmp(tail.logits.data(), hs.logits.data() + 7 * 64, 64 * 4) == 0);
}

TEST_CASE("forward errors") {
  auto c = tiny_config();
  auto p = TransformerParams::init(c, 3);
  HybridInput bad_width;
  bad_width.vectors(random_rows(2, 8, 1));
  CHECK_THROWS_AS(forward_hybrid(p, nullptr, bad_width), ContractError);
  HybridInput too_long;
  too_long.tokens(std::vector<int>(65, 7));
  CHECK_THROWS_AS(forward_hybrid(p, nullptr, too_long), ContractError);
  HybridInput bad_id;
  bad_id.token(64);
  CHECK_THROWS_AS(forward_hybrid(p, nullptr, bad_id), ContractError);
  CHECK_THROWS_AS(forward_hybrid(p, nullptr, HybridInput{}), ContractError);
}

TEST_CASE("embed") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 4);
  auto e = embed(p, std::vector<int>(5, c.special.draft));
  REQUIRE(e.shape() == ad::Shape{5, 64});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t k = 0; k < 64; ++k) CHECK(e.at(r, k) == p.tok_embed.at(c.special.draft, k));
  CHECK(embed(p, std::vector<int>{}).size() == 0);
  CHECK_THROWS_AS(embed(p, std::vector<int>{70}), ContractError);
}

TEST_CASE("causality is bit-exact") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 5);
  auto adapters = live_adapters(c, 6);
  for (const AdapterSet* a : std::vector<const AdapterSet*>{nullptr, &adapters}) {
    Tensor base = random_rows(10, 64, 7);
    Tensor changed = base.detach();
    changed.mutable_values()[6 * 64 + 3] += 1.0f;
    auto h1 = forward_hybrid(p, a, HybridInput().vectors(base));
    auto h2 = forward_hybrid(p, a, HybridInput().vectors(changed));
    for (std::size_t l = 0; l < h1.layers.size(); ++l) {
      CHECK(same_bits(h1.layers[l], h2.layers[l], 0, 6));
      CHECK_FALSE(same_bits(h1.layers[l], h2.layers[l], 0, 7));
    }
    CHECK(same_bits(h1.logits, h2.logits, 0, 6));
  }
}

TEST_CASE("hybrid equivalence: embedded tokens as vectors") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 8);
  const std::vector<int> ids{1, 10, 20, 30, 5, 40};
  auto a = forward_hybrid(p, nullptr, HybridInput().tokens(ids));
  auto b = forward_hybrid(p, nullptr, HybridInput().vectors(embed(p, ids)));
  auto mixed = forward_hybrid(
      p, nullptr,
      HybridInput().tokens(std::span(ids).first(2)).vectors(embed(p, std::span(ids).subspan(2, 2))).tokens(
          std::span(ids).subspan(4)));
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(same_bits(a.layers[l], b.layers[l]));
    CHECK(same_bits(a.layers[l], mixed.layers[l]));
  }
  CHECK(same_bits(a.logits, b.logits));
}

TEST_CASE("zero B adapters match disabled adapters exactly") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 9);
  auto adapters = AdapterSet::init(c, 8, 32.0f, 10);
  CHECK(adapters.scale() == 4.0f);
  Tensor x = random_rows(7, 64, 11);
  auto off = forward_hybrid(p, nullptr, HybridInput().vectors(x));
  auto on = forward_hybrid(p, &adapters, HybridInput().vectors(x));
  for (std::size_t l = 0; l < off.layers.size(); ++l) CHECK(same_bits(off.layers[l], on.layers[l]));
  CHECK(same_bits(off.logits, on.logits));

  auto live = live_adapters(c, 12);
  auto with = forward_hybrid(p, &live, HybridInput().vectors(x));
  CHECK_FALSE(same_bits(off.logits, with.logits));
  live.enabled = false;
  auto disabled = forward_hybrid(p, &live, HybridInput().vectors(x));
  CHECK(same_bits(off.logits, disabled.logits));
}

TEST_CASE("forward agrees with the naive reference") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 13);
  auto adapters = live_adapters(c, 14);
  const std::vector<int> ids{1, 12, 13, 14, 15};
  Tensor vecs = random_rows(4, 64, 15);
  for (const AdapterSet* a : std::vector<const AdapterSet*>{nullptr, &adapters}) {
    auto hs = forward_hybrid(p, a, HybridInput().tokens(ids).vectors(vecs));
    auto x0 = reference::embed_tokens(p, ids);
    for (auto& row : reference::to_mat(vecs)) x0.push_back(row);
    auto ref = reference::forward(p, a, x0);
    double worst = 0;
    for (std::size_t t = 0; t < 9; ++t) {
      for (std::size_t v = 0; v < 64; ++v) worst = std::max(worst, std::abs(hs.logits.at(t, v) - ref.logits[t][v]));
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t k = 0; k < 64; ++k)
          worst = std::max(worst, std::abs(hs.layers[l].at(t, k) - ref.layers[l][t][k]));
    }
    INFO("max abs deviation " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("incremental decoder is bit-identical to the full forward") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 16);
  auto adapters = live_adapters(c, 17);
  for (const AdapterSet* a : std::vector<const AdapterSet*>{nullptr, &adapters}) {
    const std::vector<int> ids{1, 20, 21, 22};
    Tensor vecs = random_rows(3, 64, 18);
    HybridInput in;
    in.tokens(ids).vectors(vecs).token(3);
    auto hs = forward_hybrid(p, a, in);
    Decoder dec(p, a);
    dec.feed(in);
    CHECK(dec.position() == 8);
    CHECK(std::memcmp(dec.last_logits().data(), hs.logits.data() + 7 * 64, 64 * 4) == 0);
    dec.feed_token(30);
    in.token(30);
    auto hs2 = forward_hybrid(p, a, in);
    CHECK(std::memcmp(dec.last_logits().data(), hs2.logits.data() + 8 * 64, 64 * 4) == 0);
  }
}

TEST_CASE("greedy decoding") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 19);
  const std::vector<int> prefix{1, 10, 11, 12};
  HybridInput in;
  in.tokens(prefix);
  CHECK(decode_greedy(p, nullptr, in, 0).empty());
  auto a = decode_greedy(p, nullptr, in, 12);
  auto b = decode_greedy(p, nullptr, in, 12);
  CHECK(a == b);
  CHECK(a.size() <= 12);
  CHECK(a == reference::decode(p, nullptr, prefix, 12));
  auto adapters = live_adapters(c, 20);
  CHECK(decode_greedy(p, &adapters, in, 12) == reference::decode(p, &adapters, prefix, 12));

  CHECK(argmax(std::vector<float>{1, 3, 3, 2}) == 1);
  CHECK_THROWS_AS(decode_greedy(p, nullptr, in, -1), ContractError);

  // Force eos to dominate: it must be the last token.
  auto q = p.clone();
  for (std::size_t k = 0; k < 64; ++k) q.unembed.mutable_values()[k * 64 + c.special.eos] = 50.0f;
  auto stop = decode_greedy(q, nullptr, in, 10);
  CHECK(stop == std::vector<int>{c.special.eos});

  auto small = tiny_config();
  auto sp = TransformerParams::init(small, 21);
  HybridInput long_prefix;
  long_prefix.tokens(std::vector<int>(65, 7));
  CHECK_THROWS_AS(decode_greedy(sp, nullptr, long_prefix, 1), ContractError);
  HybridInput near_end;
  near_end.tokens(std::vector<int>(62, 7));
  CHECK(decode_greedy(sp, nullptr, near_end, 10).size() <= 3);
}

TEST_CASE("training sequence layout") {
  tasks::ReasoningSample s{0, "a=2;a?", "a=2", "2", 1, false};
  SpecialTokens sp;
  auto seq = training_sequence(s, sp);
  std::vector<int> expect{sp.bos};
  for (int t : tasks::tokenize("a=2;a?")) expect.push_back(t);
  expect.push_back(sp.think_sep);
  for (int t : tasks::tokenize("a=2")) expect.push_back(t);
  expect.push_back(sp.eot);
  expect.push_back(tasks::tokenize("2")[0]);
  expect.push_back(sp.eos);
  CHECK(seq == expect);
}

TEST_CASE("pretraining") {
  auto c = tiny_config();
  tasks::CorpusConfig cc;
  cc.per_depth = 20;
  cc.max_depth = 3;
  auto corpus = tasks::gen_corpus(cc);

  SUBCASE("lr 0 leaves parameters unchanged") {
    auto p = TransformerParams::init(c, 22);
    const auto before = checksum(p.named());
    PretrainSchedule s;
    s.steps = 1;
    s.lr = 0;
    s.batch_size = 2;
    s.eval_samples = 4;
    pretrain(p, corpus.train, corpus.validation, s);
    CHECK(checksum(p.named()) == before);
  }
  SUBCASE("held-out loss decreases") {
    PretrainSchedule s;
    s.steps = 40;
    s.batch_size = 4;
    s.warmup = 5;
    s.eval_every = 20;
    s.eval_samples = 10;
    PretrainReport rep;
    auto p = pretrain_raw(c, corpus.train, corpus.validation, s, &rep);
    CHECK(rep.final_heldout_loss < rep.initial_heldout_loss);
    CHECK(rep.train_loss.size() == 40);
    CHECK(rep.heldout_loss.size() == 2);
    CHECK_FALSE(p.tok_embed.requires_grad());
  }
  SUBCASE("empty corpus rejected") {
    auto p = TransformerParams::init(c, 23);
    CHECK_THROWS_AS(pretrain(p, {}, corpus.validation, PretrainSchedule{}), ContractError);
  }
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  ModelConfig c;
  auto p = TransformerParams::init(c, 24);
  auto adapters = live_adapters(c, 25);
  const auto path = temp_path("ck.syna");
  save_checkpoint(path, p, &adapters);
  auto ck = load_checkpoint(path);
  CHECK(ck.params.config == c);
  CHECK(checksum(ck.params.named()) == checksum(p.named()));
  REQUIRE(ck.adapters.has_value());
  CHECK(checksum(ck.adapters->named()) == checksum(adapters.named()));
  CHECK(ck.adapters->rank == 4);
  CHECK(ck.adapters->alpha == 8.0f);

  const auto bytes = slurp(path);
  REQUIRE(bytes.size() > 8);
  CHECK(bytes.substr(0, 4) == "SYNA");
  CHECK(bytes.substr(4, 4) == std::string("\x01\x00\x00\x00", 4));

  save_checkpoint(path, p);
  CHECK_FALSE(load_checkpoint(path).adapters.has_value());

  const auto apath = temp_path("ad.syna");
  save_adapters(apath, adapters);
  CHECK(checksum(load_adapters(apath, c).named()) == checksum(adapters.named()));
}

// Minimal reader written against the byte layout only.
TEST_CASE("independent reader recovers shapes and leading floats") {
  ModelConfig c;
  c.n_layers = 1;
  auto p = TransformerParams::init(c, 26);
  const auto path = temp_path("indep.syna");
  save_checkpoint(path, p);
  const auto b = slurp(path);
  std::size_t pos = 8;
  auto u = [&](int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += n;
    return v;
  };
  const auto count = u(4);
  struct H {
    std::string name;
    std::vector<std::uint64_t> dims;
  };
  std::vector<H> hs;
  for (std::uint64_t i = 0; i < count; ++i) {
    H h;
    const auto len = u(2);
    h.name = b.substr(pos, len);
    pos += len;
    CHECK(u(1) == 0);
    const auto nd = u(1);
    for (std::uint64_t d = 0; d < nd; ++d) h.dims.push_back(u(8));
    hs.push_back(h);
  }
  const auto named = p.named();
  std::map<std::string, Tensor> by_name(named.begin(), named.end());
  std::size_t seen = 0;
  for (const auto& h : hs) {
    std::uint64_t n = 1;
    for (auto d : h.dims) n *= d;
    std::vector<float> first(std::min<std::uint64_t>(n, 8));
    std::memcpy(first.data(), b.data() + pos, first.size() * 4);
    pos += n * 4;
    auto it = by_name.find(h.name);
    if (it == by_name.end()) continue;
    ++seen;
    CHECK(std::vector<std::uint64_t>(it->second.shape().begin(), it->second.shape().end()) == h.dims);
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == it->second.values()[i]);
  }
  CHECK(seen == by_name.size());
  CHECK(pos == b.size());
}

TEST_CASE("archive errors") {
  ModelConfig c;
  c.n_layers = 1;
  auto p = TransformerParams::init(c, 27);
  const auto path = temp_path("err.syna");
  save_checkpoint(path, p);
  const auto good = slurp(path);
  auto write = [&](const std::string& bytes) {
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  auto bad = good;
  bad[0] = 'X';
  write(bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), FormatError);
  bad = good;
  bad[4] = 2;
  write(bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), FormatError);
  write(good.substr(0, good.size() - 3));
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.syna")), FormatError);

  archive::TensorArchive ar;
  ar.add("x", {1}, {1.0f});
  CHECK_THROWS_AS(ar.add("x", {1}, {2.0f}), FormatError);
  CHECK_THROWS_AS(ar.add("y", {2}, {2.0f}), FormatError);
  // Hand-built duplicate entry.
  std::string dup = archive::encode(ar);
  dup[8] = 2;  // claim two tensors, then append a second header named "x"
  std::string extra;
  extra += std::string("\x01\x00", 2) + "x" + std::string("\x00\x01", 2) + std::string("\x01\0\0\0\0\0\0\0", 8);
  dup.insert(12 + 2 + 1 + 2 + 8, extra);
  dup += std::string(4, '\0');
  CHECK_THROWS_WITH_AS(archive::decode(dup), doctest::Contains("duplicate"), FormatError);
}
