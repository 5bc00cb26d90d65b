#include "balance_lab/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <regex>
#include <set>

#include <json.hpp>

#include "balance_lab/error.hpp"

namespace balance_lab {

namespace {

struct ParamEntry {
  const char* name;
  double ScorerParams::*member;
};

#define BL_PARAM(n) ParamEntry{#n, &ScorerParams::n}
const ParamEntry kParams[] = {
    BL_PARAM(empty_input_potential),  BL_PARAM(paren_penalty),
    BL_PARAM(extra_char_penalty),     BL_PARAM(extra_char_threshold),
    BL_PARAM(length_penalty_divisor), BL_PARAM(max_depth_penalty),
    BL_PARAM(max_depth_threshold),    BL_PARAM(func_penalty),
    BL_PARAM(div_pow_penalty),        BL_PARAM(abs_penalty),
    BL_PARAM(trig_penalty),           BL_PARAM(nested_expr_penalty),
    BL_PARAM(div_zero_risk_penalty),  BL_PARAM(pow_risk_penalty),
    BL_PARAM(sqrt_risk_penalty),      BL_PARAM(no_params_penalty),
    BL_PARAM(few_params_penalty),     BL_PARAM(few_params_threshold),
    BL_PARAM(optimal_params_min),     BL_PARAM(optimal_params_max),
    BL_PARAM(optimal_params_bonus),   BL_PARAM(excess_params_penalty),
    BL_PARAM(excess_params_threshold), BL_PARAM(freq_var_weight),
    BL_PARAM(freq_var_cap),           BL_PARAM(entropy_bonus),
    BL_PARAM(log_v_bonus),            BL_PARAM(log_bonus),
    BL_PARAM(pattern_affinity_bonus), BL_PARAM(pattern_count_divisor),
    BL_PARAM(linear_logv_weight),     BL_PARAM(centered_linear_weight),
    BL_PARAM(nonlinear_weight),       BL_PARAM(exp_weight),
    BL_PARAM(proximity_cap),          BL_PARAM(proximity_bonus),
    BL_PARAM(simple_bonus),           BL_PARAM(simple_length_threshold),
    BL_PARAM(simple_func_threshold),  BL_PARAM(short_bonus),
    BL_PARAM(short_length_threshold), BL_PARAM(max_energy),
    BL_PARAM(K),                      BL_PARAM(pattern_affinity_threshold),
    BL_PARAM(pattern_affinity_adjustment), BL_PARAM(min_potential),
    BL_PARAM(max_potential),          BL_PARAM(nan_inf_default),
    BL_PARAM(overall_factor),
};
#undef BL_PARAM

const ParamEntry* find_param(std::string_view name) {
  for (const auto& e : kParams) {
    if (name == e.name) return &e;
  }
  return nullptr;
}

// --- code points -----------------------------------------------------------

// Decodes UTF-8 leniently: a stray byte counts as one code point.
std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = 1;
    char32_t cp = b;
    if (b >= 0xF0 && b < 0xF8) {
      len = 4;
      cp = b & 0x07;
    } else if (b >= 0xE0) {
      len = 3;
      cp = b & 0x0F;
    } else if (b >= 0xC0) {
      len = 2;
      cp = b & 0x1F;
    }
    if (i + len > s.size()) len = 1;
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto c = static_cast<unsigned char>(s[i + k]);
      if ((c & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (c & 0x3F);
    }
    if (!ok || len == 1) {
      cp = b;
      len = 1;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

// Characters Python's str.isspace() accepts.
bool py_space(char32_t c) {
  if (c == ' ' || (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x1F)) return true;
  if (c < 0x80) return false;
  return c == 0x85 || c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 ||
         c == 0x202F || c == 0x205F || c == 0x3000;
}

std::size_t utf8_len(char32_t c) { return c < 0x80 ? 1 : c < 0x800 ? 2 : c < 0x10000 ? 3 : 4; }

std::string_view py_strip(std::string_view s) {
  const auto cps = code_points(s);
  std::size_t lead = 0, lead_bytes = 0;
  while (lead < cps.size() && py_space(cps[lead])) lead_bytes += utf8_len(cps[lead++]);
  std::size_t tail = cps.size(), tail_bytes = 0;
  while (tail > lead && py_space(cps[tail - 1])) tail_bytes += utf8_len(cps[--tail]);
  return s.substr(lead_bytes, s.size() - lead_bytes - tail_bytes);
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Non-overlapping occurrences, like str.count.
std::size_t count_sub(const std::string& s, std::string_view pat) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(pat); pos != std::string::npos; pos = s.find(pat, pos + pat.size())) ++n;
  return n;
}

bool contains(const std::string& s, std::string_view pat) { return s.find(pat) != std::string::npos; }

// --- patterns ----------------------------------------------------------------

// \s restricted to the ASCII part of Python's whitespace class.
#define WS "[ \\t\\n\\r\\f\\v\\x1c-\\x1f]"

struct Patterns {
  std::regex funcs{R"(\b(?:exp|log|ln|log10|sqrt|tanh|sin|cos|tan|abs|pow|ceil|floor|log_v_k_nu)\b)"};
  std::regex param{R"(\bparam\d+\b)"};
  std::regex linear_logv{R"(\bparam\d+)" WS R"(*\*)" WS R"(*log_v_k_nu\b)"};
  std::regex centered_linear{R"(\bparam\d+)" WS R"(*\*)" WS R"(*\()" WS R"(*log_v_k_nu)" WS R"(*[-])" WS
                             R"(*param\d+)" WS R"(*\))"};
  std::regex logistic{"1" WS R"(*/)" WS R"(*\()" WS "*1" WS R"(*\+)" WS "*exp"};
  std::regex tanh_call{R"(\btanh)" WS R"(*\()"};
  std::regex softplus{"log" WS R"(*\()" WS "*1" WS R"(*\+)" WS "*exp"};
  std::regex exp_call{"exp" WS R"(*\()"};
  std::regex log_call{"log" WS R"(*\()"};
  std::regex sqrt_abs{"sqrt" WS R"(*\()" WS "*abs"};
};
#undef WS

const Patterns& patterns() {
  static const Patterns p;
  return p;
}

std::size_t count_matches(const std::string& s, const std::regex& re) {
  return static_cast<std::size_t>(std::distance(std::sregex_iterator(s.begin(), s.end(), re), std::sregex_iterator()));
}

bool search(const std::string& s, const std::regex& re) { return std::regex_search(s, re); }

bool is_extra_char(char32_t c) {
  if (py_space(c)) return false;
  if (c >= 0x80) return true;
  const char ch = static_cast<char>(c);
  if ((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z')) return false;
  return std::string_view("_+-*/^.(),").find(ch) == std::string_view::npos;
}

bool is_simple_char(char32_t c) { return c != '^' && !is_extra_char(c); }

// round(x, 5) with correct rounding of the exact binary value.
double round5(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", x);
  return std::strtod(buf, nullptr);
}

}  // namespace

std::map<int, std::string> ScorerParams::default_token_map() {
  return {{0, "sin"},        {1, "cos"},     {2, "tan"},     {3, "arcsin"},  {4, "arccos"},  {5, "arctan"},
          {6, "tanh"},       {7, "log"},     {8, "log10"},   {9, "exp"},     {10, "square"}, {11, "sqrt"},
          {12, "abs"},       {13, "*"},      {14, "**"},     {15, "/"},      {16, "+"},      {17, "-"},
          {18, "1"},         {19, "2"},      {20, "pi"},     {21, "log_v_k_nu"}, {22, "param1"}, {23, "param2"},
          {24, "param3"},    {25, "param4"}, {26, "param5"}, {27, "param6"}, {28, "param7"}, {29, "param8"},
          {30, "param9"},    {31, "("},      {32, ")"},      {33, " "}};
}

void ScorerParams::validate() const {
  if (!(min_potential < max_potential)) throw Error(ErrorCode::BadParams, "min_potential must be below max_potential");
  if (!(K > 0.0)) throw Error(ErrorCode::BadParams, "K must be positive");
  if (!(pattern_count_divisor > 0.0)) throw Error(ErrorCode::BadParams, "pattern_count_divisor must be positive");
}

const std::vector<std::string>& ScorerParams::names() {
  static const std::vector<std::string> n = [] {
    std::vector<std::string> v;
    for (const auto& e : kParams) v.emplace_back(e.name);
    return v;
  }();
  return n;
}

double ScorerParams::get(std::string_view name) const {
  const auto* e = find_param(name);
  if (!e) throw Error(ErrorCode::BadParams, "unknown scorer parameter: " + std::string(name));
  return this->*(e->member);
}

void ScorerParams::set(std::string_view name, double value) {
  const auto* e = find_param(name);
  if (!e) throw Error(ErrorCode::BadParams, "unknown scorer parameter: " + std::string(name));
  this->*(e->member) = value;
}

ScorerParams load_scorer_params(std::string_view json_text) {
  auto j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadParams, "scorer params must be a JSON object");
  ScorerParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "id_to_token") {
      if (!value.is_object()) throw Error(ErrorCode::BadParams, "id_to_token must be an object");
      std::map<int, std::string> tokens = ScorerParams::default_token_map();
      for (const auto& [id, tok] : value.items()) {
        char* end = nullptr;
        const long v = std::strtol(id.c_str(), &end, 10);
        if (id.empty() || *end != '\0' || !tok.is_string()) {
          throw Error(ErrorCode::BadParams, "id_to_token entries must map integer keys to strings");
        }
        tokens[static_cast<int>(v)] = tok.get<std::string>();
      }
      p.id_to_token = std::move(tokens);
      continue;
    }
    if (!find_param(key)) throw Error(ErrorCode::BadParams, "unknown scorer parameter: " + key);
    if (!value.is_number()) throw Error(ErrorCode::BadParams, "scorer parameter " + key + " must be a number");
    p.set(key, value.get<double>());
  }
  p.validate();
  return p;
}

std::string scorer_params_json(const ScorerParams& params) {
  nlohmann::ordered_json j;
  for (const auto& e : kParams) j[e.name] = params.*(e.member);
  nlohmann::ordered_json tokens;
  for (const auto& [id, tok] : params.id_to_token) tokens[std::to_string(id)] = tok;
  j["id_to_token"] = tokens;
  return j.dump(2) + "\n";
}

FeatureVector extract_features(std::string_view expression) {
  FeatureVector f;
  const std::string_view s = py_strip(expression);
  const std::string sl = ascii_lower(s);
  if (sl.empty()) {
    f.empty = true;
    return f;
  }
  const auto cps = code_points(sl);
  f.length = cps.size();

  int depth = 0;
  for (char ch : s) {
    if (ch == '(') {
      ++depth;
      f.max_depth = std::max(f.max_depth, depth);
    } else if (ch == ')') {
      --depth;
      if (depth < 0) {
        f.bad_paren = true;
        depth = 0;
      }
    }
  }
  if (depth != 0) f.bad_paren = true;

  const auto& re = patterns();
  f.num_funcs = count_matches(sl, re.funcs);
  f.num_exp = count_sub(sl, "exp");
  f.num_log = count_sub(sl, "log") + count_sub(sl, "ln") + count_sub(sl, "log10");
  f.num_sqrt = count_sub(sl, "sqrt");
  f.num_abs = count_sub(sl, "abs");
  f.num_trig = count_sub(sl, "sin") + count_sub(sl, "cos") + count_sub(sl, "tan");
  f.num_div = count_sub(sl, "/");
  f.num_pow = count_sub(sl, "**") + count_sub(sl, "^");

  for (auto it = std::sregex_iterator(sl.begin(), sl.end(), re.param); it != std::sregex_iterator(); ++it) {
    ++f.param_counts[it->str()];
  }
  f.num_params = f.param_counts.size();
  if (f.num_params > 0) {
    std::size_t total_int = 0;
    for (const auto& [name, c] : f.param_counts) total_int += c;
    const double total = static_cast<double>(total_int);
    const double np = static_cast<double>(f.num_params);
    const double mean = total / np;
    double var = 0.0;
    double ent = 0.0;
    for (const auto& [name, c] : f.param_counts) {
      const double d = static_cast<double>(c) - mean;
      var += d * d;
    }
    for (const auto& [name, c] : f.param_counts) {
      const double q = static_cast<double>(c) / total;
      ent += q * std::log(q + 1e-12);
    }
    f.freq_var = var / np;
    const double entropy = -ent;
    f.entropy_norm = f.num_params > 1 ? entropy / (std::log(np) + 1e-12) : 0.0;
  }

  f.has_log_v = contains(sl, "log_v_k_nu");
  f.linear_logv = search(sl, re.linear_logv);
  f.centered_linear = search(sl, re.centered_linear);
  f.logistic_present = count_matches(sl, re.logistic) > 0;
  f.tanh_present = count_matches(sl, re.tanh_call) > 0;
  f.softplus_present = count_matches(sl, re.softplus) > 0;
  f.pattern_count = int(f.has_log_v) + int(f.linear_logv) + int(f.centered_linear) + int(f.logistic_present) +
                    int(f.tanh_present) + int(f.softplus_present);
  f.nested_expr = search(sl, re.exp_call) || search(sl, re.log_call);
  f.div_zero_risk = contains(sl, "/");
  f.pow_risk = f.num_pow > 0;
  f.sqrt_risk = f.num_sqrt > 0 && !search(sl, re.sqrt_abs);

  f.extra_chars = static_cast<std::size_t>(std::count_if(cps.begin(), cps.end(), is_extra_char));
  f.simple_charset = std::all_of(cps.begin(), cps.end(), is_simple_char);
  return f;
}

double score(std::string_view expression, const ScorerParams& p) {
  const FeatureVector f = extract_features(expression);
  if (f.empty) return p.empty_input_potential;

  const double len = static_cast<double>(f.length);
  const double num_params = static_cast<double>(f.num_params);
  const double pattern_affinity = static_cast<double>(f.pattern_count) / p.pattern_count_divisor;

  double energy = 0.0;
  if (f.bad_paren) energy += p.paren_penalty;
  energy += std::max(0.0, static_cast<double>(f.extra_chars) - p.extra_char_threshold) * p.extra_char_penalty;
  energy += std::log1p(len) / p.length_penalty_divisor;
  energy += std::max(0.0, static_cast<double>(f.max_depth) - p.max_depth_threshold) * p.max_depth_penalty;

  energy += static_cast<double>(f.num_funcs) * p.func_penalty;
  energy += static_cast<double>(f.num_div + f.num_pow) * p.div_pow_penalty;
  energy += static_cast<double>(f.num_abs) * p.abs_penalty;
  energy += static_cast<double>(f.num_trig) * p.trig_penalty;

  energy += f.nested_expr ? p.nested_expr_penalty : 0.0;
  energy += f.div_zero_risk ? p.div_zero_risk_penalty : 0.0;
  energy += f.pow_risk ? p.pow_risk_penalty : 0.0;
  energy += f.sqrt_risk ? p.sqrt_risk_penalty : 0.0;

  if (f.num_params == 0) {
    energy += p.no_params_penalty;
  } else if (num_params < p.few_params_threshold) {
    energy += p.few_params_penalty * (p.few_params_threshold - num_params);
  } else if (p.optimal_params_min <= num_params && num_params <= p.optimal_params_max) {
    energy -= p.optimal_params_bonus;
  } else {
    energy += num_params - p.excess_params_threshold;
  }

  energy += p.freq_var_weight * std::min(f.freq_var, p.freq_var_cap);
  energy -= p.entropy_bonus * f.entropy_norm;

  if (f.has_log_v) {
    energy -= p.log_v_bonus;
  } else if (f.num_log > 0) {
    energy -= p.log_bonus;
  }

  energy -= p.pattern_affinity_bonus * pattern_affinity;

  double proximity = 0.0;
  if (f.has_log_v && f.num_params > 0) {
    proximity = p.linear_logv_weight * int(f.linear_logv) + p.centered_linear_weight * int(f.centered_linear) +
                p.nonlinear_weight * (int(f.logistic_present) + int(f.tanh_present) + int(f.softplus_present)) +
                p.exp_weight * static_cast<double>(f.num_exp);
    proximity = std::min(p.proximity_cap, proximity);
  }
  energy -= p.proximity_bonus * proximity;

  const bool truly_simple =
      f.simple_charset && static_cast<double>(f.num_funcs) <= p.simple_func_threshold && f.num_pow == 0;
  if (truly_simple && len < p.simple_length_threshold) {
    energy -= p.simple_bonus;
  } else if (len < p.short_length_threshold) {
    energy -= p.short_bonus;
  }

  // Zero-risk branch: contributes nothing.
  energy += 0.0;

  if (energy < 0) energy = 0.0;
  if (energy > p.max_energy) energy = p.max_energy;

  const double norm = 1 - std::exp(-energy / p.K);
  double val = -1 + 2 * norm;

  if (pattern_affinity >= p.pattern_affinity_threshold &&
      (f.logistic_present || f.tanh_present || f.softplus_present || f.has_log_v)) {
    val -= p.pattern_affinity_adjustment;
  }

  if (std::isnan(val) || std::isinf(val)) val = p.nan_inf_default;
  val = std::max(p.min_potential, std::min(p.max_potential, val));
  return round5(val) * p.overall_factor;
}

double score_tokens(const std::vector<int>& token_ids, const ScorerParams& params) {
  std::string s;
  for (int id : token_ids) {
    auto it = params.id_to_token.find(id);
    if (it != params.id_to_token.end()) s += it->second;
  }
  return score(s, params);
}

DirectionalityReport directionality_report(const KernelEstimate& kernel, const ScorerParams& params,
                                           double threshold) {
  if (kernel.empty()) throw Error(ErrorCode::EmptyKernel, "directionality report needs a nonempty kernel");
  std::map<State, double> cache;
  auto score_of = [&](const State& s) {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, score(s, params)).first;
    return it->second;
  };
  DirectionalityReport r;
  for (const auto& [key, prob] : kernel.probs) {
    const auto& [f, g] = key;
    if (f == g || !(prob > threshold)) continue;
    const double sf = score_of(f);
    const double sg = score_of(g);
    if (sf > sg) {
      ++r.n_down;
    } else if (sf < sg) {
      ++r.n_up;
    } else {
      ++r.n_flat;
    }
  }
  const auto total = r.n_down + r.n_up + r.n_flat;
  if (total > 0) {
    r.frac_down = static_cast<double>(r.n_down) / static_cast<double>(total);
    r.frac_up = static_cast<double>(r.n_up) / static_cast<double>(total);
    r.frac_flat = static_cast<double>(r.n_flat) / static_cast<double>(total);
  }
  return r;
}

}  // namespace balance_lab
