#include "ccot/router.hpp"

#include <algorithm>
#include <fstream>

#include "ccot/error.hpp"
#include "ccot/refine.hpp"
#include "ccot/syngen.hpp"
#include "json.hpp"

namespace ccot::router {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

void require_models(const Models& m, bool need_classifier) {
  require(m.params != nullptr && m.adapters != nullptr, "router: base model and adapters are required");
  require(!need_classifier || m.classifier != nullptr, "router: difficulty classifier is required");
}

}  // namespace

const char* path_name(Path p) { return p == Path::Easy ? "easy" : "hard"; }

void check_tau(double tau) {
  require(tau >= 0.0 && tau <= 1.0, "router: tau must lie in [0, 1], got " + std::to_string(tau));
}

Path decide(double score, double tau) {
  check_tau(tau);
  return score >= tau ? Path::Hard : Path::Easy;
}

EasyAnswer answer_easy(const model::TransformerParams& params, std::span<const int> prefix, const Tensor& z_final,
                       int max_new) {
  model::HybridInput in;
  in.tokens(prefix).vectors(z_final).token(params.config.special.eot);
  const auto out = model::decode_greedy(params, nullptr, in, max_new);
  EasyAnswer a;
  const auto eos = std::find(out.begin(), out.end(), params.config.special.eos);
  a.answer.assign(out.begin(), eos);
  a.truncated = eos == out.end();
  a.gen_len = static_cast<int>(a.answer.size());
  return a;
}

HardAnswer parse_hard(std::span<const int> generated, const model::SpecialTokens& special) {
  HardAnswer h;
  const auto eos = std::find(generated.begin(), generated.end(), special.eos);
  const auto eot = std::find(generated.begin(), eos, special.eot);
  if (eot == eos) {
    h.cot.assign(generated.begin(), eos);
    h.truncated = true;
    h.gen_len = static_cast<int>(h.cot.size());
    return h;
  }
  h.cot.assign(generated.begin(), eot);
  h.answer.assign(eot + 1, eos);
  h.truncated = false;
  h.gen_len = static_cast<int>(h.cot.size() + 1 + h.answer.size());
  return h;
}

HardAnswer answer_hard(const model::TransformerParams& params, std::span<const int> prefix, int max_new) {
  model::HybridInput in;
  in.tokens(prefix).token(params.config.special.think_sep);
  const auto out = model::decode_greedy(params, nullptr, in, max_new);
  return parse_hard(out, params.config.special);
}

std::string answer_text(std::span<const int> tokens) {
  std::vector<int> v(tokens.begin(), tokens.end());
  const int last = tasks::tok::kFirstChar + static_cast<int>(tasks::kAlphabet.size());
  for (int t : v) {
    if (t < tasks::tok::kFirstChar || t >= last) return tasks::render(v);
  }
  return tasks::detokenize(v);
}

bool answers_match(const std::string& predicted, const std::string& gold) { return trim(predicted) == trim(gold); }

Routed route(const Models& models, const SolveOptions& opts, const tasks::ReasoningSample& sample, double tau) {
  require_models(models, true);
  check_tau(tau);
  const auto& params = *models.params;
  const auto prefix = syngen::question_prefix(sample, params.config.special);
  Routed r;
  r.z_final = refine::refine_k(params, *models.adapters, prefix, opts.m, opts.k).z;
  const auto score = difficulty::classifier_forward(*models.classifier, difficulty::eot_state(params, prefix, r.z_final));
  r.decision = {sample.id, score.value, tau, decide(score.value, tau)};
  return r;
}

SolveRecord solve(const Models& models, const SolveOptions& opts, const tasks::ReasoningSample& sample, double tau) {
  const auto routed = route(models, opts, sample, tau);
  const auto& params = *models.params;
  const auto prefix = syngen::question_prefix(sample, params.config.special);
  SolveRecord rec;
  rec.id = sample.id;
  rec.score = routed.decision.score;
  rec.tau = tau;
  rec.path = routed.decision.path;
  rec.gold = sample.answer;
  rec.refine_iterations = opts.k;
  if (rec.path == Path::Easy) {
    const auto a = answer_easy(params, prefix, routed.z_final, opts.max_new);
    rec.answer = answer_text(a.answer);
    rec.gen_len = a.gen_len;
    rec.truncated = a.truncated;
  } else {
    const auto h = answer_hard(params, prefix, opts.max_new);
    rec.answer = answer_text(h.answer);
    rec.gen_len = h.gen_len;
    rec.truncated = h.truncated;
  }
  rec.correct = !rec.truncated && answers_match(rec.answer, rec.gold);
  return rec;
}

PreparedItem prepare(const model::TransformerParams& params, const model::AdapterSet* adapters,
                     const SolveOptions& opts, const tasks::ReasoningSample& sample, bool with_hard) {
  require(adapters != nullptr, "prepare: adapters are required");
  const auto prefix = syngen::question_prefix(sample, params.config.special);
  PreparedItem item;
  item.id = sample.id;
  item.gold = sample.answer;
  item.difficulty = sample.difficulty;
  item.disguised = sample.disguised;
  item.refine_iterations = opts.k;
  const auto z = refine::refine_k(params, *adapters, prefix, opts.m, opts.k).z;
  item.eot_state = difficulty::eot_state(params, prefix, z);
  item.easy = answer_easy(params, prefix, z, opts.max_new);
  if (with_hard) item.hard = answer_hard(params, prefix, opts.max_new);
  return item;
}

SolveRecord select(const PreparedItem& item, double score, double tau) {
  SolveRecord rec;
  rec.id = item.id;
  rec.score = score;
  rec.tau = tau;
  rec.path = decide(score, tau);
  rec.gold = item.gold;
  rec.refine_iterations = item.refine_iterations;
  if (rec.path == Path::Easy) {
    rec.answer = answer_text(item.easy.answer);
    rec.gen_len = item.easy.gen_len;
    rec.truncated = item.easy.truncated;
  } else {
    rec.answer = answer_text(item.hard.answer);
    rec.gen_len = item.hard.gen_len;
    rec.truncated = item.hard.truncated;
  }
  rec.correct = !rec.truncated && answers_match(rec.answer, rec.gold);
  return rec;
}

void save_records(const std::filesystem::path& path, std::span<const SolveRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["score"] = r.score;
    j["tau"] = r.tau;
    j["path"] = path_name(r.path);
    j["answer"] = r.answer;
    j["gold"] = r.gold;
    j["correct"] = r.correct;
    j["gen_len"] = r.gen_len;
    j["truncated"] = r.truncated;
    j["refine_iterations"] = r.refine_iterations;
    out << j.dump() << '\n';
  }
}

std::vector<SolveRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<SolveRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    for (const char* key :
         {"id", "score", "tau", "path", "answer", "gold", "correct", "gen_len", "truncated", "refine_iterations"}) {
      if (!j.contains(key)) throw FormatError(where + ": missing key \"" + key + "\"");
    }
    try {
      SolveRecord r;
      r.id = j["id"].get<std::uint64_t>();
      r.score = j["score"].get<double>();
      r.tau = j["tau"].get<double>();
      const auto p = j["path"].get<std::string>();
      if (p != "easy" && p != "hard") throw FormatError(where + ": path must be easy or hard");
      r.path = p == "easy" ? Path::Easy : Path::Hard;
      r.answer = j["answer"].get<std::string>();
      r.gold = j["gold"].get<std::string>();
      r.correct = j["correct"].get<bool>();
      r.gen_len = j["gen_len"].get<int>();
      r.truncated = j["truncated"].get<bool>();
      r.refine_iterations = j["refine_iterations"].get<int>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ccot::router
