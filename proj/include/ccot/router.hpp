#pragma once
// Adaptive inference. A question is refined into Z_final, scored from the
// eot state of [bos, Q, Z_final, eot], and answered on one of two paths:
//   easy (score < tau): append eot after Z_final and decode the answer;
//   hard (score >= tau): drop Z_final and decode the discrete chain after
//   [bos, Q, think_sep], then the answer after the first eot.
// Generated length counts discrete tokens only; eos is not counted.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccot/difficulty.hpp"
#include "ccot/model.hpp"

namespace ccot::router {

using ad::Tensor;

enum class Path { Easy, Hard };
const char* path_name(Path p);

struct RoutingDecision {
  std::uint64_t id = 0;
  double score = 0.0;
  double tau = 0.0;
  Path path = Path::Easy;
};

// Throws ContractError unless 0 <= tau <= 1.
void check_tau(double tau);
// score >= tau routes to the hard path.
Path decide(double score, double tau);

struct Models {
  const model::TransformerParams* params = nullptr;
  const model::AdapterSet* adapters = nullptr;
  const difficulty::Classifier* classifier = nullptr;
};

struct SolveOptions {
  int m = 16;
  int k = 4;
  int max_new = 160;
};

struct EasyAnswer {
  std::vector<int> answer;
  int gen_len = 0;
  bool truncated = false;  // no eos within max_new
};

struct HardAnswer {
  std::vector<int> cot;
  std::vector<int> answer;
  int gen_len = 0;         // |cot| + 1 (eot) + |answer|, or all tokens when no eot appears
  bool truncated = false;  // no eot within max_new
};

EasyAnswer answer_easy(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z_final,
                       int max_new);
HardAnswer answer_hard(const model::TransformerParams& params, std::span<const int> prefix, int max_new);
// Splits generated tokens at the first eot; the answer stops at eos.
HardAnswer parse_hard(std::span<const int> generated, const model::SpecialTokens& special);

struct SolveRecord {
  std::uint64_t id = 0;
  double score = 0.0;
  double tau = 0.0;
  Path path = Path::Easy;
  std::string answer;
  std::string gold;
  bool correct = false;
  int gen_len = 0;
  bool truncated = false;
  int refine_iterations = 0;
};

// Text of answer tokens; special ids are rendered as <name> so they never
// match a gold answer.
std::string answer_text(std::span<const int> tokens);
bool answers_match(const std::string& predicted, const std::string& gold);

struct Routed {
  RoutingDecision decision;
  Tensor z_final;
};

Routed route(const Models& models, const SolveOptions& opts, const tasks::ReasoningSample& sample, double tau);
// Runs exactly one answer path.
SolveRecord solve(const Models& models, const SolveOptions& opts, const tasks::ReasoningSample& sample, double tau);

// Both paths precomputed once so that threshold sweeps only re-select.
struct PreparedItem {
  std::uint64_t id = 0;
  std::string gold;
  int difficulty = 0;
  bool disguised = false;
  difficulty::State eot_state;
  EasyAnswer easy;
  HardAnswer hard;
  int refine_iterations = 0;
};

// Pass `with_hard = false` when only the easy path will be selected.
PreparedItem prepare(const model::TransformerParams& params, const model::AdapterSet* adapters,
                     const SolveOptions& opts, const tasks::ReasoningSample& sample, bool with_hard = true);
SolveRecord select(const PreparedItem& item, double score, double tau);

// JSONL: one object per record with keys id, score, tau, path, answer, gold,
// correct, gen_len, truncated, refine_iterations.
void save_records(const std::filesystem::path& path, std::span<const SolveRecord> records);
std::vector<SolveRecord> load_records(const std::filesystem::path& path);

}  // namespace ccot::router
