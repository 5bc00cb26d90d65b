#pragma once

// Feature-based potential for symbolic-regression expression strings.

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "balance_lab/ledger.hpp"

namespace balance_lab {

struct ScorerParams {
  double empty_input_potential = -0.85;
  double paren_penalty = 1.70;
  double extra_char_penalty = 0.43;
  double extra_char_threshold = 2.13;
  double length_penalty_divisor = 4.00;
  double max_depth_penalty = 0.42;
  double max_depth_threshold = 0.33;
  double func_penalty = 0.36;
  double div_pow_penalty = 0.42;
  double abs_penalty = 6.50;
  double trig_penalty = 0.75;
  double nested_expr_penalty = 0.54;
  double div_zero_risk_penalty = 0.54;
  double pow_risk_penalty = 1.05;
  double sqrt_risk_penalty = 0.20;
  double no_params_penalty = 1.00;
  double few_params_penalty = 1.50;
  double few_params_threshold = 2.87;
  double optimal_params_min = 3.00;
  double optimal_params_max = 5.53;
  double optimal_params_bonus = 0.43;
  double excess_params_penalty = 1.07;  // unused by the scoring rules, kept for round-tripping
  double excess_params_threshold = -0.48;
  double freq_var_weight = 1.82;
  double freq_var_cap = 10.04;
  double entropy_bonus = 0.60;
  double log_v_bonus = 1.35;
  double log_bonus = 0.60;
  double pattern_affinity_bonus = 0.15;
  double pattern_count_divisor = 11.67;
  double linear_logv_weight = 0.29;
  double centered_linear_weight = 0.27;
  double nonlinear_weight = 0.81;
  double exp_weight = 0.35;
  double proximity_cap = 3.74;
  double proximity_bonus = 0.14;
  double simple_bonus = 1.00;
  double simple_length_threshold = 77.42;
  double simple_func_threshold = 2.00;
  double short_bonus = 0.50;
  double short_length_threshold = 50.72;
  double max_energy = 4.59;
  double K = 1.37;
  double pattern_affinity_threshold = 0.29;
  double pattern_affinity_adjustment = 0.01;
  double min_potential = -1.72;
  double max_potential = 0.93;
  double nan_inf_default = 0.00;
  double overall_factor = 2.04;

  std::map<int, std::string> id_to_token = default_token_map();

  static std::map<int, std::string> default_token_map();

  /// Throws Error(BadParams) unless min_potential < max_potential, K > 0 and
  /// pattern_count_divisor > 0.
  void validate() const;

  /// Every real-valued parameter name, in table order.
  static const std::vector<std::string>& names();
  double get(std::string_view name) const;
  void set(std::string_view name, double value);
};

/// JSON object keyed by parameter name (plus optional "id_to_token"); missing
/// keys keep their defaults, unknown keys throw Error(BadParams).
ScorerParams load_scorer_params(std::string_view json_text);
std::string scorer_params_json(const ScorerParams& params);

struct FeatureVector {
  bool empty = false;
  std::size_t length = 0;  // code points of the stripped input
  int max_depth = 0;
  bool bad_paren = false;
  std::size_t num_funcs = 0;
  std::size_t num_exp = 0;
  std::size_t num_log = 0;
  std::size_t num_sqrt = 0;
  std::size_t num_abs = 0;
  std::size_t num_trig = 0;
  std::size_t num_div = 0;
  std::size_t num_pow = 0;
  std::size_t num_params = 0;  // unique paramN names
  std::map<std::string, std::size_t> param_counts;
  double freq_var = 0.0;
  double entropy_norm = 0.0;
  bool has_log_v = false;
  bool linear_logv = false;
  bool centered_linear = false;
  bool logistic_present = false;
  bool tanh_present = false;
  bool softplus_present = false;
  int pattern_count = 0;
  bool nested_expr = false;
  bool div_zero_risk = false;
  bool pow_risk = false;
  bool sqrt_risk = false;
  std::size_t extra_chars = 0;
  bool simple_charset = false;
};

FeatureVector extract_features(std::string_view expression);

/// Total, deterministic score. Empty input returns empty_input_potential as is;
/// everything else lands in [min_potential, max_potential] * overall_factor.
double score(std::string_view expression, const ScorerParams& params = {});

/// Joins token ids through params.id_to_token (unknown ids map to "") and scores.
double score_tokens(const std::vector<int>& token_ids, const ScorerParams& params = {});

struct DirectionalityReport {
  std::size_t n_down = 0;  // score(f) > score(g)
  std::size_t n_up = 0;
  std::size_t n_flat = 0;
  double frac_down = 0.0;
  double frac_up = 0.0;
  double frac_flat = 0.0;
};

/// Classifies every kernel entry g <- f (f != g) with prob > threshold by the
/// sign of score(f) - score(g). Throws Error(EmptyKernel).
DirectionalityReport directionality_report(const KernelEstimate& kernel, const ScorerParams& params = {},
                                           double threshold = 0.05);

}  // namespace balance_lab
