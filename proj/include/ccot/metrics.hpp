#pragma once
// Pure scoring formulas shared by the classifier, router and reports.

#include <vector>

namespace ccot::metrics {

// (acc / acc_raw) / (len / len_raw); throws ContractError unless all inputs > 0.
double rel_g(double acc, double len, double acc_raw, double len_raw);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Unweighted mean over the two classes (true = hard). An empty class has
// precision/recall 0. Throws ContractError on empty or mismatched input.
PRF macro_prf(const std::vector<bool>& predicted, const std::vector<bool>& gold);

}  // namespace ccot::metrics
