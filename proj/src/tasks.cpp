#include "ccot/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ccot/error.hpp"
#include "json.hpp"

namespace ccot::tasks {

namespace {

constexpr std::array<std::string_view, tok::kFirstChar> kSpecialNames = {"<pad>", "<bos>", "<eos>",
                                                                         "<eot>", "<T>",   "<think>"};

constexpr std::array<int, 256> build_char_table() {
  std::array<int, 256> table{};
  for (auto& v : table) v = -1;
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
    table[static_cast<unsigned char>(kAlphabet[i])] = tok::kFirstChar + static_cast<int>(i);
  }
  return table;
}

constexpr std::array<int, 256> kCharToId = build_char_table();

static_assert(tok::kFirstChar + kAlphabet.size() <= tok::kVocabSize);

struct Assignment {
  char var;
  int value;
  // Root assignments have no source.
  std::optional<char> source;
  char op = '+';
  int constant = 0;
  int source_value = 0;
};

std::string assignment_text(const Assignment& a) {
  std::string s(1, a.var);
  s += '=';
  if (!a.source) return s + std::to_string(a.value);
  return s + *a.source + a.op + std::to_string(a.constant);
}

std::string step_text(const Assignment& a) {
  std::string s(1, a.var);
  s += '=';
  if (!a.source) return s + std::to_string(a.value);
  return s + std::to_string(a.source_value) + a.op + std::to_string(a.constant) + '=' + std::to_string(a.value);
}

// Chain of `depth` assignments over the given variable names.
std::vector<Assignment> draw_chain(Rng& rng, const std::vector<char>& vars) {
  std::vector<Assignment> chain;
  Assignment root{vars[0], rng.range(0, 99), std::nullopt};
  chain.push_back(root);
  for (std::size_t i = 1; i < vars.size(); ++i) {
    Assignment a{vars[i], 0, vars[i - 1]};
    a.source_value = chain.back().value;
    // '+' takes 1..9, '*' takes 2..3; both reduce mod 100.
    if (rng.below(3) == 0) {
      a.op = '*';
      a.constant = rng.range(2, 3);
      a.value = (a.source_value * a.constant) % 100;
    } else {
      a.op = '+';
      a.constant = rng.range(1, 9);
      a.value = (a.source_value + a.constant) % 100;
    }
    chain.push_back(a);
  }
  return chain;
}

std::vector<char> draw_letters(Rng& rng, std::size_t count) {
  std::string pool = "abcdefghijklmnopqrstuvwxyz";
  std::vector<char> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

void append_ids(std::vector<int>& out, std::string_view text) {
  const auto ids = tokenize(text);
  out.insert(out.end(), ids.begin(), ids.end());
}

}  // namespace

// ---- tokens -------------------------------------------------------------------

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int id = kCharToId[static_cast<unsigned char>(text[i])];
    if (id < 0) {
      throw ContractError("tokenize: character '" + std::string(1, text[i]) + "' at offset " + std::to_string(i) +
                          " is outside the task alphabet");
    }
    out.push_back(id);
  }
  return out;
}

bool is_special(int id) { return id >= 0 && id < tok::kFirstChar; }

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int id : tokens) {
    const int idx = id - tok::kFirstChar;
    if (idx < 0 || static_cast<std::size_t>(idx) >= kAlphabet.size()) {
      throw ContractError("detokenize: id " + std::to_string(id) + " is not a text token");
    }
    out.push_back(kAlphabet[static_cast<std::size_t>(idx)]);
  }
  return out;
}

std::string render(const std::vector<int>& tokens) {
  std::string out;
  for (int id : tokens) {
    if (is_special(id)) {
      out += kSpecialNames[static_cast<std::size_t>(id)];
    } else if (id >= tok::kFirstChar && static_cast<std::size_t>(id - tok::kFirstChar) < kAlphabet.size()) {
      out.push_back(kAlphabet[static_cast<std::size_t>(id - tok::kFirstChar)]);
    } else {
      out += "<" + std::to_string(id) + ">";
    }
  }
  return out;
}

std::vector<int> question_tokens(const ReasoningSample& s) { return tokenize(s.question); }
std::vector<int> dcot_tokens(const ReasoningSample& s) { return tokenize(s.dcot); }
std::vector<int> answer_tokens(const ReasoningSample& s) { return tokenize(s.answer); }

// ---- samples ------------------------------------------------------------------

ReasoningSample gen_chain_sample(Rng& rng, int depth, bool disguised, int padded_assignments) {
  if (depth < kMinDepth || depth > kMaxDepth) {
    throw ContractError("gen_chain_sample: depth " + std::to_string(depth) + " outside [1, 8]");
  }
  if (disguised && (padded_assignments <= depth || padded_assignments > 26)) {
    throw ContractError("gen_chain_sample: disguised depth " + std::to_string(depth) + " cannot be padded to " +
                        std::to_string(padded_assignments) + " assignments");
  }
  const int distractors = disguised ? padded_assignments - depth : 0;
  const auto letters = draw_letters(rng, static_cast<std::size_t>(depth + distractors));
  const std::vector<char> main_vars(letters.begin(), letters.begin() + depth);
  const auto main = draw_chain(rng, main_vars);

  std::vector<const Assignment*> order;
  std::vector<Assignment> side;
  if (distractors > 0) {
    const std::vector<char> side_vars(letters.begin() + depth, letters.end());
    side = draw_chain(rng, side_vars);
    // The main root stays first; the rest of both chains are interleaved at
    // random while each keeps its own order.
    order.push_back(&main[0]);
    std::size_t mi = 1, si = 0;
    while (mi < main.size() || si < side.size()) {
      const std::size_t left_main = main.size() - mi;
      const std::size_t left_side = side.size() - si;
      if (rng.below(left_main + left_side) < left_main) {
        order.push_back(&main[mi++]);
      } else {
        order.push_back(&side[si++]);
      }
    }
  } else {
    for (const auto& a : main) order.push_back(&a);
  }

  ReasoningSample s;
  for (const auto* a : order) s.question += assignment_text(*a) + ";";
  s.question += main.back().var;
  s.question += '?';
  for (std::size_t i = 0; i < main.size(); ++i) {
    if (i) s.dcot += '|';
    s.dcot += step_text(main[i]);
  }
  s.answer = std::to_string(main.back().value);
  s.difficulty = depth;
  s.disguised = disguised;
  return s;
}

// ---- corpus -------------------------------------------------------------------

CorpusSplits gen_corpus(const CorpusConfig& cfg) {
  if (cfg.min_depth < kMinDepth || cfg.max_depth > kMaxDepth || cfg.min_depth > cfg.max_depth) {
    throw ContractError("gen_corpus: depth range must lie within [1, 8]");
  }
  if (cfg.per_depth < 10) throw ContractError("gen_corpus: need at least 10 samples per depth");
  if (cfg.disguised_fraction < 0.0 || cfg.disguised_fraction > 1.0 || cfg.val_fraction < 0.0 ||
      cfg.test_fraction < 0.0 || cfg.val_fraction + cfg.test_fraction >= 1.0) {
    throw ContractError("gen_corpus: fractions out of range");
  }
  const int n_depths = cfg.max_depth - cfg.min_depth + 1;
  const int eligible_max = cfg.max_depth - 2;
  const int n_eligible = std::max(0, eligible_max - cfg.min_depth + 1);
  // Disguised budget spread evenly over eligible depths.
  const int disguised_per_depth =
      n_eligible == 0 ? 0
                      : std::min(cfg.per_depth, static_cast<int>(std::lround(cfg.disguised_fraction * cfg.per_depth *
                                                                             n_depths / n_eligible)));

  struct Slot {
    int depth;
    bool disguised;
  };
  std::vector<Slot> slots;
  for (int d = cfg.min_depth; d <= cfg.max_depth; ++d) {
    for (int i = 0; i < cfg.per_depth; ++i) slots.push_back({d, d <= eligible_max && i < disguised_per_depth});
  }
  Rng shuffle_rng(cfg.seed);
  for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[shuffle_rng.below(i)]);

  CorpusSplits out;
  out.seed = cfg.seed;
  for (int d = cfg.min_depth; d <= cfg.max_depth; ++d) out.depths.push_back(d);
  const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.per_depth));
  const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.per_depth));
  std::vector<int> seen(static_cast<std::size_t>(kMaxDepth + 1), 0);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Rng rng(mix_seed(cfg.seed, i));
    ReasoningSample s = gen_chain_sample(rng, slots[i].depth, slots[i].disguised, cfg.max_depth);
    s.id = i;
    const int rank = seen[static_cast<std::size_t>(slots[i].depth)]++;
    if (rank < cfg.per_depth - n_val - n_test) {
      out.train.push_back(std::move(s));
    } else if (rank < cfg.per_depth - n_test) {
      out.validation.push_back(std::move(s));
    } else {
      out.test.push_back(std::move(s));
    }
  }
  return out;
}

// ---- JSONL --------------------------------------------------------------------

std::string to_jsonl_line(const ReasoningSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["question"] = s.question;
  j["dcot"] = s.dcot;
  j["answer"] = s.answer;
  j["difficulty"] = s.difficulty;
  j["disguised"] = s.disguised;
  return j.dump();
}

ReasoningSample parse_jsonl_line(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
  for (const char* key : {"id", "question", "dcot", "answer", "difficulty"}) {
    if (!j.contains(key)) throw FormatError(where + ": missing required key \"" + key + "\"");
  }
  ReasoningSample s;
  try {
    s.id = j.at("id").get<std::uint64_t>();
    s.question = j.at("question").get<std::string>();
    s.dcot = j.at("dcot").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    s.difficulty = j.at("difficulty").get<int>();
    if (j.contains("disguised")) s.disguised = j.at("disguised").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": wrong field type (" + e.what() + ")");
  }
  if (s.difficulty < 1) throw FormatError(where + ": difficulty must be >= 1");
  return s;
}

std::vector<ReasoningSample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_jsonl: cannot open " + path.string());
  std::vector<ReasoningSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_jsonl_line(line, n));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<ReasoningSample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_jsonl: cannot write " + path.string());
  for (const auto& s : samples) out << to_jsonl_line(s) << '\n';
  if (!out) throw FormatError("save_jsonl: write failed for " + path.string());
}

}  // namespace ccot::tasks
