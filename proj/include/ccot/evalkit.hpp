#pragma once
// Aggregation of SolveRecords into accuracy, length, relative gain, macro
// P/R/F1, threshold sweeps and machine-readable reports.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccot/metrics.hpp"
#include "ccot/router.hpp"
#include "ccot/version.hpp"
#include "json.hpp"

namespace ccot::evalkit {

using router::PreparedItem;
using router::SolveRecord;

// Exact-match fraction; throws ContractError on an empty set.
double accuracy(std::span<const SolveRecord> records);
double mean_len(std::span<const SolveRecord> records);
double hard_ratio(std::span<const SolveRecord> records);

// Raw-model anchors: the full discrete chain on every item.
struct Anchors {
  double acc_raw = 0.0;
  double len_raw = 0.0;
};
Anchors raw_anchors(std::span<const PreparedItem> items);

// rel_g, except that zero accuracy gives 0 instead of an error.
double relative_gain(double acc, double len, const Anchors& anchors);

struct EvalReport {
  std::string version = tool_version();
  std::string config_hash;
  std::string method;
  double tau = 0.0;
  double acc = 0.0;
  double len = 0.0;
  double hard_ratio = 0.0;
  std::optional<Anchors> anchors;
  std::optional<double> rel_g;
  std::optional<metrics::PRF> macro;  // hard-question identification
  std::vector<SolveRecord> records;
};

// FNV-1a over the canonical (sorted-key) JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

// `gold_hard`, when non-empty, labels each record for macro P/R/F1.
EvalReport make_report(std::vector<SolveRecord> records, const nlohmann::json& config, const std::string& method,
                       double tau, std::optional<Anchors> anchors, const std::vector<bool>& gold_hard = {});

nlohmann::ordered_json report_to_json(const EvalReport& report);
// Throws FormatError on a schema violation or an inconsistent rel_g.
EvalReport report_from_json(const nlohmann::json& j);
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

struct SweepRow {
  double tau = 0.0;
  double acc = 0.0;
  double len = 0.0;
  double rel_g = 0.0;
  double hard_ratio = 0.0;
};

// One row per tau, in input order. `scores[i]` belongs to `items[i]`.
std::vector<SweepRow> sweep_tau(std::span<const PreparedItem> items, std::span<const double> scores,
                                std::span<const double> taus, const Anchors& anchors);

inline constexpr const char* kCurveHeader = "tau,acc,len,rel_g,hard_ratio";
std::string curve_csv(std::span<const SweepRow> rows);
void write_curve_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
// Throws FormatError unless the header and every row match the schema.
std::vector<SweepRow> read_curve_csv(const std::filesystem::path& path);

}  // namespace ccot::evalkit
