#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ccot/difficulty.hpp"
#include "ccot/metrics.hpp"
#include "ccot/refine.hpp"
#include "doctest.h"
#include "fixture_oracles.hpp"

using namespace ccot;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = CCOT_FIXTURE_DIR;

nlohmann::json load(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, nlohmann::json> all_fixtures() {
  std::map<std::string, nlohmann::json> out;
  for (const auto& e : fs::directory_iterator(kDir)) {
    if (e.path().extension() == ".json") out[e.path().stem().string()] = load(e.path());
  }
  return out;
}

double value(const nlohmann::json& f) { return f.at("expected").at("value").get<double>(); }

std::vector<float> tensor(const nlohmann::json& f) {
  return fixtures::from_hex(f.at("expected").at("f32_hex").get<std::string>());
}

double scaled_dev(std::span<const float> got, const std::vector<float>& want) {
  double m = 0, scale = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(got[i]) - want[i]));
    scale = std::max(scale, std::abs(static_cast<double>(want[i])));
  }
  return m / std::max(1.0, scale);
}

fs::path copy_to_scratch() {
  const auto dir = fs::temp_directory_path() / "ccot_test_fixtures";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(kDir)) fs::copy_file(e.path(), dir / e.path().filename());
  return dir;
}

}  // namespace

TEST_CASE("every fixture carries a tag, a tolerance and its provenance") {
  const auto all = all_fixtures();
  REQUIRE(all.size() >= 10);
  for (const auto& [name, f] : all) {
    CAPTURE(name);
    CHECK(f.at("name") == name);
    const auto tag = f.at("tag").get<std::string>();
    CHECK((tag == "PAPER" || tag == "TRIVIAL" || tag == "DERIVED"));
    CHECK(f.at("tolerance").get<double>() >= 0.0);
    CHECK(f.contains("inputs"));
    CHECK(f.contains("expected"));
    if (tag == "DERIVED") {
      CHECK(f.at("oracle").get<std::string>().find("ccot_fixtures") != std::string::npos);
      CHECK(f.at("read_only") == false);
    } else {
      CHECK(f.at("read_only") == true);
    }
    if (tag == "PAPER") CHECK(f.contains("source"));
  }
}

TEST_CASE("library outputs agree with the fixtures") {
  const auto all = all_fixtures();
  std::size_t checked = 0;
  auto tol = [](const nlohmann::json& f) { return f.at("tolerance").get<double>(); };

  for (const char* row : {"rel_g_synadapt_row", "rel_g_cod_row", "rel_g_identity"}) {
    const auto& f = all.at(row);
    const auto& in = f.at("inputs");
    CHECK(std::abs(metrics::rel_g(in["acc"], in["len"], in["acc_raw"], in["len_raw"]) - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("loss_ans_uniform");
    auto p = model::TransformerParams::init(tiny::config(), 1);
    for (auto& v : p.unembed.mutable_values()) v = 0.0f;
    auto s = tiny::sample();
    auto l = syngen::loss_ans(p, syngen::question_prefix(s, p.config.special), tiny::gaussian(4, 16, 2),
                              syngen::answer_targets(s, p.config.special));
    CHECK(std::abs(l.item() - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("loss_diff_equal_logits");
    auto c = difficulty::Classifier::init(8, 8, 3);
    for (auto& v : c.w2.mutable_values()) v = 0.0f;
    auto l = difficulty::loss_diff(c, tiny::gaussian(3, 8, 4), tiny::gaussian(3, 8, 5));
    CHECK(std::abs(l.item() - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("loss_dcot_offset");
    std::vector<ad::Tensor> a, b;
    for (int l = 0; l < 3; ++l) {
      a.push_back(ad::Tensor::from({1, 4}, {0.1f, 0.2f, -0.3f, 0.4f}));
      b.push_back(ad::Tensor::from({1, 4}, {0.6f, -0.3f, 0.2f, 0.9f}));
    }
    CHECK(std::abs(syngen::eot_alignment(a, b).item() - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("l_align_offset");
    auto p = model::TransformerParams::init(tiny::config(), 6);
    auto s = tiny::sample();
    auto zsyn = tiny::gaussian(4, 16, 7);
    auto zf = ad::Tensor::from({4, 16}, std::vector<float>(zsyn.values().begin(), zsyn.values().end()));
    for (auto& v : zf.mutable_values()) v += 0.1f;
    auto lb = refine::loss_refine(p, zf, zsyn, syngen::question_prefix(s, p.config.special),
                                  syngen::answer_targets(s, p.config.special));
    CHECK(std::abs(lb.l_align.item() - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("chain_sample_seed7_depth3");
    Rng rng(f["inputs"]["seed"].get<std::uint64_t>());
    auto s = tasks::gen_chain_sample(rng, f["inputs"]["depth"].get<int>(), f["inputs"]["disguised"].get<bool>());
    CHECK(s.question == f["expected"]["question"]);
    CHECK(s.dcot == f["expected"]["dcot"]);
    CHECK(s.answer == f["expected"]["answer"]);
    CHECK(s.difficulty == f["expected"]["difficulty"]);
    ++checked;
  }
  fixtures::TinyCase t;
  {
    const auto& f = all.at("tiny_forward_logits");
    model::HybridInput in;
    in.tokens(t.prefix);
    auto hs = model::forward_hybrid(t.params, nullptr, in);
    CHECK(scaled_dev(hs.logits.values(), tensor(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("tiny_loss_ans");
    CHECK(std::abs(syngen::loss_ans(t.params, t.prefix, t.z, t.answer).item() - value(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("tiny_grad_loss_ans_z");
    auto z = t.z.detach();
    z.set_requires_grad(true);
    ad::backward(syngen::loss_ans(t.params, t.prefix, z, t.answer));
    CHECK(scaled_dev(z.grad(), tensor(f)) <= tol(f));
    ++checked;
  }
  {
    const auto& f = all.at("macro_prf_hand");
    std::vector<bool> gold, pred;
    for (const auto& g : f["inputs"]["gold"]) gold.push_back(g == "H");
    for (const auto& p : f["inputs"]["pred"]) pred.push_back(p == "H");
    auto m = metrics::macro_prf(pred, gold);
    CHECK(std::abs(m.precision - f["expected"]["precision"].get<double>()) <= tol(f));
    CHECK(std::abs(m.recall - f["expected"]["recall"].get<double>()) <= tol(f));
    CHECK(std::abs(m.f1 - f["expected"]["f1"].get<double>()) <= tol(f));
    ++checked;
  }
  CHECK(checked == all.size());
}

TEST_CASE("regeneration policy") {
  const auto dir = copy_to_scratch();
  auto quiet = [](const std::string&) {};
  std::map<std::string, std::string> hand;
  for (const auto& [name, f] : all_fixtures()) {
    if (f["tag"] != "DERIVED") hand[name] = slurp(dir / (name + ".json"));
  }

  SUBCASE("stored DERIVED fixtures are up to date and regeneration is stable") {
    CHECK(fixtures::regenerate(dir, quiet) == 0);
    for (const auto& d : fixtures::derived_fixtures()) {
      const std::string file = std::string(d.name) + ".json";
      CHECK(slurp(dir / file) == slurp(kDir / file));
    }
    CHECK(fixtures::regenerate(dir, quiet) == 0);
    for (const auto& d : fixtures::derived_fixtures()) {
      const std::string file = std::string(d.name) + ".json";
      CHECK(slurp(dir / file) == slurp(kDir / file));
    }
  }
  SUBCASE("a deleted DERIVED fixture is restored byte for byte") {
    fs::remove(dir / "tiny_loss_ans.json");
    CHECK(fixtures::regenerate(dir, quiet) == 0);
    CHECK(slurp(dir / "tiny_loss_ans.json") == slurp(kDir / "tiny_loss_ans.json"));
  }
  SUBCASE("a disagreeing fixture is reported and kept") {
    auto j = load(dir / "tiny_loss_ans.json");
    j["expected"]["value"] = j["expected"]["value"].get<double>() + 0.5;
    const std::string tampered = j.dump(2) + "\n";
    std::ofstream(dir / "tiny_loss_ans.json", std::ios::binary) << tampered;
    std::vector<std::string> msgs;
    CHECK(fixtures::regenerate(dir, [&](const std::string& s) { msgs.push_back(s); }) == 1);
    CHECK(slurp(dir / "tiny_loss_ans.json") == tampered);
    bool reported = false;
    for (const auto& m : msgs) reported = reported || m.find("not overwritten") != std::string::npos;
    CHECK(reported);
  }
  // Hand-written fixtures are never touched.
  for (const auto& [name, text] : hand) CHECK(slurp(dir / (name + ".json")) == text);
}
