#include "ccot/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ccot/error.hpp"

namespace ccot::evalkit {

namespace {

void require_nonempty(std::span<const SolveRecord> records, const char* what) {
  require(!records.empty(), std::string(what) + ": empty record set");
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("report: missing key \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: key \"") + key + "\": " + e.what());
  }
}

}  // namespace

double accuracy(std::span<const SolveRecord> records) {
  require_nonempty(records, "accuracy");
  double n = 0;
  for (const auto& r : records) n += router::answers_match(r.answer, r.gold) && !r.truncated;
  return n / static_cast<double>(records.size());
}

double mean_len(std::span<const SolveRecord> records) {
  require_nonempty(records, "mean_len");
  double n = 0;
  for (const auto& r : records) n += r.gen_len;
  return n / static_cast<double>(records.size());
}

double hard_ratio(std::span<const SolveRecord> records) {
  require_nonempty(records, "hard_ratio");
  double n = 0;
  for (const auto& r : records) n += r.path == router::Path::Hard;
  return n / static_cast<double>(records.size());
}

Anchors raw_anchors(std::span<const PreparedItem> items) {
  std::vector<SolveRecord> recs;
  recs.reserve(items.size());
  for (const auto& it : items) recs.push_back(router::select(it, 1.0, 0.0));
  return {accuracy(recs), mean_len(recs)};
}

double relative_gain(double acc, double len, const Anchors& anchors) {
  if (acc == 0.0) return 0.0;
  return metrics::rel_g(acc, len, anchors.acc_raw, anchors.len_raw);
}

std::string config_hash(const nlohmann::json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport make_report(std::vector<SolveRecord> records, const nlohmann::json& config, const std::string& method,
                       double tau, std::optional<Anchors> anchors, const std::vector<bool>& gold_hard) {
  router::check_tau(tau);
  EvalReport r;
  r.config_hash = config_hash(config);
  r.method = method;
  r.tau = tau;
  r.acc = accuracy(records);
  r.len = mean_len(records);
  r.hard_ratio = hard_ratio(records);
  r.anchors = anchors;
  if (anchors) r.rel_g = relative_gain(r.acc, r.len, *anchors);
  if (!gold_hard.empty()) {
    require(gold_hard.size() == records.size(), "make_report: one gold label per record is required");
    std::vector<bool> pred;
    pred.reserve(records.size());
    for (const auto& rec : records) pred.push_back(rec.path == router::Path::Hard);
    r.macro = metrics::macro_prf(pred, gold_hard);
  }
  r.records = std::move(records);
  return r;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["version"] = r.version;
  j["config_hash"] = r.config_hash;
  j["method"] = r.method;
  j["tau"] = r.tau;
  j["n"] = r.records.size();
  j["acc"] = r.acc;
  j["len"] = r.len;
  j["hard_ratio"] = r.hard_ratio;
  j["acc_raw"] = r.anchors ? nlohmann::ordered_json(r.anchors->acc_raw) : nlohmann::ordered_json();
  j["len_raw"] = r.anchors ? nlohmann::ordered_json(r.anchors->len_raw) : nlohmann::ordered_json();
  j["rel_g"] = r.rel_g ? nlohmann::ordered_json(*r.rel_g) : nlohmann::ordered_json();
  j["macro_pre"] = r.macro ? nlohmann::ordered_json(r.macro->precision) : nlohmann::ordered_json();
  j["macro_rec"] = r.macro ? nlohmann::ordered_json(r.macro->recall) : nlohmann::ordered_json();
  j["macro_f1"] = r.macro ? nlohmann::ordered_json(r.macro->f1) : nlohmann::ordered_json();
  auto recs = nlohmann::ordered_json::array();
  for (const auto& s : r.records) {
    nlohmann::ordered_json o;
    o["id"] = s.id;
    o["score"] = s.score;
    o["tau"] = s.tau;
    o["path"] = router::path_name(s.path);
    o["answer"] = s.answer;
    o["gold"] = s.gold;
    o["correct"] = s.correct;
    o["gen_len"] = s.gen_len;
    o["truncated"] = s.truncated;
    o["refine_iterations"] = s.refine_iterations;
    recs.push_back(std::move(o));
  }
  j["records"] = std::move(recs);
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("report: top level must be an object");
  EvalReport r;
  r.version = field<std::string>(j, "version");
  r.config_hash = field<std::string>(j, "config_hash");
  if (r.config_hash.size() != 16) throw FormatError("report: config_hash must have 16 hex digits");
  r.method = field<std::string>(j, "method");
  r.tau = field<double>(j, "tau");
  r.acc = field<double>(j, "acc");
  r.len = field<double>(j, "len");
  r.hard_ratio = field<double>(j, "hard_ratio");
  if (!(r.tau >= 0 && r.tau <= 1)) throw FormatError("report: tau outside [0, 1]");
  if (!(r.acc >= 0 && r.acc <= 1)) throw FormatError("report: acc outside [0, 1]");
  if (!(r.len >= 0)) throw FormatError("report: negative len");
  if (!(r.hard_ratio >= 0 && r.hard_ratio <= 1)) throw FormatError("report: hard_ratio outside [0, 1]");
  for (const char* k : {"acc_raw", "len_raw", "rel_g", "macro_pre", "macro_rec", "macro_f1", "records", "n"}) {
    if (!j.contains(k)) throw FormatError(std::string("report: missing key \"") + k + "\"");
  }
  if (!j["acc_raw"].is_null()) r.anchors = Anchors{field<double>(j, "acc_raw"), field<double>(j, "len_raw")};
  if (!j["rel_g"].is_null()) r.rel_g = field<double>(j, "rel_g");
  if (r.rel_g.has_value() != r.anchors.has_value()) throw FormatError("report: rel_g requires anchors");
  if (r.rel_g) {
    const double expect = relative_gain(r.acc, r.len, *r.anchors);
    if (std::abs(expect - *r.rel_g) > 1e-9 * std::max(1.0, std::abs(expect))) {
      throw FormatError("report: rel_g disagrees with acc, len and anchors");
    }
  }
  if (!j["macro_f1"].is_null()) {
    r.macro = metrics::PRF{field<double>(j, "macro_pre"), field<double>(j, "macro_rec"), field<double>(j, "macro_f1")};
  }
  const auto& recs = j["records"];
  if (!recs.is_array()) throw FormatError("report: records must be an array");
  for (const auto& o : recs) {
    router::SolveRecord s;
    try {
      s.id = o.at("id").get<std::uint64_t>();
      s.score = o.at("score").get<double>();
      s.tau = o.at("tau").get<double>();
      const auto p = o.at("path").get<std::string>();
      if (p != "easy" && p != "hard") throw FormatError("report: record path must be easy or hard");
      s.path = p == "easy" ? router::Path::Easy : router::Path::Hard;
      s.answer = o.at("answer").get<std::string>();
      s.gold = o.at("gold").get<std::string>();
      s.correct = o.at("correct").get<bool>();
      s.gen_len = o.at("gen_len").get<int>();
      s.truncated = o.at("truncated").get<bool>();
      s.refine_iterations = o.at("refine_iterations").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("report: record: ") + e.what());
    }
    r.records.push_back(std::move(s));
  }
  if (field<std::size_t>(j, "n") != r.records.size()) throw FormatError("report: n disagrees with records");
  return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

std::vector<SweepRow> sweep_tau(std::span<const PreparedItem> items, std::span<const double> scores,
                                std::span<const double> taus, const Anchors& anchors) {
  require(!taus.empty(), "sweep_tau: no thresholds");
  require(!items.empty(), "sweep_tau: empty evaluation set");
  require(items.size() == scores.size(), "sweep_tau: one score per item is required");
  for (double t : taus) router::check_tau(t);
  std::vector<SweepRow> rows;
  for (double t : taus) {
    std::vector<SolveRecord> recs;
    recs.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) recs.push_back(router::select(items[i], scores[i], t));
    SweepRow row{t, accuracy(recs), mean_len(recs), 0.0, hard_ratio(recs)};
    row.rel_g = relative_gain(row.acc, row.len, anchors);
    rows.push_back(row);
  }
  return rows;
}

std::string curve_csv(std::span<const SweepRow> rows) {
  std::string out = std::string(kCurveHeader) + "\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.4f,%.6f,%.4f,%.6f,%.6f\n", r.tau, r.acc, r.len, r.rel_g, r.hard_ratio);
    out += buf;
  }
  return out;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << curve_csv(rows);
}

std::vector<SweepRow> read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw FormatError(path.string() + ": bad curve header");
  std::vector<SweepRow> rows;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    SweepRow r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf%c", &r.tau, &r.acc, &r.len, &r.rel_g, &r.hard_ratio, &tail) !=
        5) {
      throw FormatError(path.string() + " line " + std::to_string(n) + ": expected 5 numeric columns");
    }
    if (r.tau < 0 || r.tau > 1 || r.acc < 0 || r.acc > 1 || r.len < 0 || r.rel_g < 0 || r.hard_ratio < 0 ||
        r.hard_ratio > 1) {
      throw FormatError(path.string() + " line " + std::to_string(n) + ": value out of range");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ccot::evalkit
