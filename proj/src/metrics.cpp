#include "ccot/metrics.hpp"

#include "ccot/error.hpp"

namespace ccot::metrics {

double rel_g(double acc, double len, double acc_raw, double len_raw) {
  require(acc > 0 && len > 0 && acc_raw > 0 && len_raw > 0, "rel_g: all inputs must be positive");
  return (acc / acc_raw) / (len / len_raw);
}

PRF macro_prf(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  require(!gold.empty(), "macro_prf: empty input");
  require(predicted.size() == gold.size(), "macro_prf: prediction and label counts differ");
  PRF out;
  for (bool cls : {true, false}) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = predicted[i] == cls;
      const bool g = gold[i] == cls;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const double pre = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = pre + rec > 0 ? 2 * pre * rec / (pre + rec) : 0.0;
    out.precision += pre / 2;
    out.recall += rec / 2;
    out.f1 += f1 / 2;
  }
  return out;
}

}  // namespace ccot::metrics
