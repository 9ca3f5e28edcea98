#pragma once
// Synthetic chained-arithmetic reasoning corpus.
//
// A question is a list of assignments ending in a query, e.g.
//   "a=2;b=a+3;b?"   dcot "a=2|b=2+3=5"   answer "5"
// Values live in 0..99 (mod 100). Difficulty is the dependency depth of the
// queried variable. Disguised samples interleave a second, independent chain
// so the question has as many assignments as the deepest requested depth.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccot/rng.hpp"

namespace ccot::tasks {

// ---- tokens -------------------------------------------------------------------

namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kEot = 3;
inline constexpr int kDraft = 4;     // meaningless placeholder <T>
inline constexpr int kThinkSep = 5;  // opens the discrete chain of thought
inline constexpr int kFirstChar = 6;
inline constexpr int kVocabSize = 64;
}  // namespace tok

// Task alphabet in id order starting at tok::kFirstChar.
inline constexpr std::string_view kAlphabet = "0123456789abcdefghijklmnopqrstuvwxyz;=+*?|";

std::vector<int> tokenize(std::string_view text);
std::string detokenize(const std::vector<int>& tokens);
bool is_special(int id);
// Human-readable rendering, special ids shown as <eot> etc.
std::string render(const std::vector<int>& tokens);

// ---- samples ------------------------------------------------------------------

inline constexpr int kMinDepth = 1;
inline constexpr int kMaxDepth = 8;
inline constexpr int kHardDepth = 5;  // difficulty >= kHardDepth is hard

struct ReasoningSample {
  std::uint64_t id = 0;
  std::string question;
  std::string dcot;
  std::string answer;
  int difficulty = 1;
  bool disguised = false;

  bool hard() const { return difficulty >= kHardDepth; }
  bool operator==(const ReasoningSample&) const = default;
};

std::vector<int> question_tokens(const ReasoningSample& s);
std::vector<int> dcot_tokens(const ReasoningSample& s);
std::vector<int> answer_tokens(const ReasoningSample& s);

// Draws one chain of the requested dependency depth. Disguised samples are
// padded with an independent distractor chain up to `padded_assignments`
// assignments in total (requires depth < padded_assignments).
ReasoningSample gen_chain_sample(Rng& rng, int depth, bool disguised, int padded_assignments = kMaxDepth);

// ---- corpus -------------------------------------------------------------------

struct CorpusConfig {
  std::uint64_t seed = 1;
  int min_depth = 1;
  int max_depth = kMaxDepth;
  int per_depth = 100;
  double disguised_fraction = 0.2;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

struct CorpusSplits {
  std::uint64_t seed = 0;
  std::vector<int> depths;
  std::vector<ReasoningSample> train;
  std::vector<ReasoningSample> validation;
  std::vector<ReasoningSample> test;
};

// Deterministic in config.seed; `per_depth` samples for every depth, about
// disguised_fraction of all samples disguised (only depths <= max_depth - 2 are
// eligible), stratified split by depth.
CorpusSplits gen_corpus(const CorpusConfig& config);

// ---- JSONL --------------------------------------------------------------------

std::vector<ReasoningSample> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<ReasoningSample>& samples);
// Parses one line; `line_number` only feeds error messages.
ReasoningSample parse_jsonl_line(std::string_view line, std::size_t line_number);
std::string to_jsonl_line(const ReasoningSample& s);

}  // namespace ccot::tasks
