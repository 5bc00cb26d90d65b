#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace balance_lab {

using State = std::string;

struct AnchorGauge {
  State state;
};
struct MeanZeroGauge {};
using Gauge = std::variant<AnchorGauge, MeanZeroGauge>;

/// Fitted potential in beta*V units. Only differences are meaningful.
struct PotentialAssignment {
  std::map<State, double> values;   // finite states only
  std::set<State> divergent_high;   // unbounded above; absent from `values`
  Gauge gauge = MeanZeroGauge{};
  double fit_action = 0.0;
  double grad_norm = 0.0;
  double cap = 0.0;
  bool converged = true;
  std::size_t iterations = 0;
  std::vector<double> action_trace;  // accepted iterates, when requested

  bool is_finite(const State& s) const { return values.count(s) > 0; }
  bool is_divergent(const State& s) const { return divergent_high.count(s) > 0; }
  bool covers(const State& s) const { return is_finite(s) || is_divergent(s); }
};

}  // namespace balance_lab
