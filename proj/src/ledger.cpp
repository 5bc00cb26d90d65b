#include "balance_lab/ledger.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "balance_lab/error.hpp"
#include "balance_lab/io_util.hpp"

namespace balance_lab {

namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::optional<std::string> optional_string(const json& obj, const char* key, std::string& problem) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    problem = std::string("field '") + key + "' must be a string or null";
    return std::nullopt;
  }
  return it->get<std::string>();
}

}  // namespace

TransitionLog parse_transition_log(std::istream& in) {
  TransitionLog log;
  std::set<std::pair<std::string, Count>> seen_steps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      log.rejected.push_back({line_no, LineIssueKind::MalformedLine, e.what()});
      continue;
    }
    if (!obj.is_object()) {
      log.rejected.push_back({line_no, LineIssueKind::MalformedLine, "record is not a JSON object"});
      continue;
    }

    std::string missing;
    for (const char* key : {"run", "step", "from", "to"}) {
      if (!obj.contains(key) || obj[key].is_null()) {
        missing = key;
        break;
      }
    }
    if (!missing.empty()) {
      log.rejected.push_back({line_no, LineIssueKind::MissingField, "missing field '" + missing + "'"});
      continue;
    }

    auto reject = [&](std::string msg) {
      log.rejected.push_back({line_no, LineIssueKind::InvalidField, std::move(msg)});
    };
    const auto& run = obj["run"];
    const auto& step = obj["step"];
    const auto& from = obj["from"];
    const auto& to = obj["to"];
    if (!run.is_string()) { reject("field 'run' must be a string"); continue; }
    if (!step.is_number_integer()) { reject("field 'step' must be an integer"); continue; }
    if (!from.is_string()) { reject("field 'from' must be a string"); continue; }
    if (!to.is_string()) { reject("field 'to' must be a string"); continue; }

    TransitionEvent ev;
    ev.run_id = run.get<std::string>();
    ev.step = step.get<Count>();
    ev.from_state = trim(from.get<std::string>());
    ev.to_state = trim(to.get<std::string>());
    std::string problem;
    ev.reason = optional_string(obj, "reason", problem);
    ev.timestamp = optional_string(obj, "ts", problem);
    if (!problem.empty()) { reject(problem); continue; }
    if (ev.step < 0) { reject("field 'step' must be nonnegative"); continue; }
    if (ev.from_state.empty()) { reject("field 'from' is empty"); continue; }
    if (ev.from_state == kEscape) { reject("escape sentinel used as 'from'"); continue; }
    if (ev.to_state.empty()) { reject("field 'to' is empty"); continue; }
    if (!seen_steps.emplace(ev.run_id, ev.step).second) {
      reject("duplicate step " + std::to_string(ev.step) + " in run '" + ev.run_id + "'");
      continue;
    }
    log.events.push_back(std::move(ev));
  }
  if (log.events.empty()) throw Error(ErrorCode::EmptyLog, "transition log has no valid events");
  return log;
}

std::string to_json_line(const TransitionEvent& event) {
  json obj = json::object();
  obj["run"] = event.run_id;
  obj["step"] = event.step;
  obj["from"] = event.from_state;
  obj["to"] = event.to_state;
  obj["reason"] = event.reason ? json(*event.reason) : json(nullptr);
  obj["ts"] = event.timestamp ? json(*event.timestamp) : json(nullptr);
  return obj.dump();
}

// ---------------------------------------------------------------------------

Count CountTable::count(const State& from, const State& to) const {
  auto it = counts.find({from, to});
  return it == counts.end() ? 0 : it->second;
}

Count CountTable::attempts_from(const State& from) const {
  auto it = attempts.find(from);
  return it == attempts.end() ? 0 : it->second;
}

Count CountTable::escapes_from(const State& from) const {
  auto it = escapes.find(from);
  return it == escapes.end() ? 0 : it->second;
}

Count CountTable::outgoing(const State& from) const {
  Count total = 0;
  for (auto it = counts.lower_bound({from, State{}}); it != counts.end() && it->first.first == from; ++it) {
    total += it->second;
  }
  return total;
}

Count CountTable::incoming(const State& to) const {
  Count total = 0;
  for (const auto& [key, n] : counts) {
    if (key.second == to && key.first != to) total += n;
  }
  return total;
}

Count CountTable::total_samples() const {
  Count total = 0;
  for (const auto& [s, n] : attempts) total += n;
  return total;
}

std::set<State> CountTable::states() const {
  std::set<State> out;
  for (const auto& [key, n] : counts) {
    out.insert(key.first);
    out.insert(key.second);
  }
  for (const auto& [s, n] : attempts) out.insert(s);
  return out;
}

bool CountTable::contains(const State& s) const {
  if (attempts.count(s)) return true;
  return std::any_of(counts.begin(), counts.end(),
                     [&](const auto& kv) { return kv.first.second == s; });
}

CountTable count_transitions(const TransitionLog& log) {
  if (log.events.empty()) throw Error(ErrorCode::EmptyLog, "transition log has no events");
  CountTable table;
  for (const auto& ev : log.events) {
    if (ev.is_escape()) {
      ++table.escapes[ev.from_state];
    } else {
      ++table.counts[{ev.from_state, ev.to_state}];
    }
    ++table.attempts[ev.from_state];
  }
  return table;
}

void write_counts_csv(std::ostream& out, const CountTable& table) {
  out << "from,to,count\n";
  // Rows grouped by source; the escape row follows each source's transitions.
  for (const auto& [from, n_attempts] : table.attempts) {
    for (auto it = table.counts.lower_bound({from, State{}});
         it != table.counts.end() && it->first.first == from; ++it) {
      out << io::csv_line({from, it->first.second, std::to_string(it->second)});
    }
    if (auto e = table.escapes_from(from); e > 0) {
      out << io::csv_line({from, std::string(kEscape), std::to_string(e)});
    }
  }
}

CountTable read_counts_csv(std::istream& in) {
  CountTable table;
  for (const auto& row : io::read_csv(in, {"from", "to", "count"})) {
    State from = trim(row[0]);
    State to = trim(row[1]);
    if (from.empty() || to.empty() || from == kEscape) {
      throw Error(ErrorCode::MalformedLine, "counts csv: invalid state pair '" + row[0] + "','" + row[1] + "'");
    }
    Count n = io::parse_count(trim(row[2]));
    if (n == 0) continue;
    if (to == kEscape) {
      table.escapes[from] += n;
    } else {
      table.counts[{from, to}] += n;
    }
    table.attempts[from] += n;
  }
  return table;
}

DatabaseStatistics database_statistics(const CountTable& table) {
  DatabaseStatistics st;
  st.transition_samples = table.total_samples();
  st.unique_states = table.states().size();
  st.unique_transitions = table.counts.size();
  for (const auto& [s, n] : table.attempts) {
    if (table.outgoing(s) > 1) ++st.states_sampled_more_than_once;
  }
  return st;
}

// ---------------------------------------------------------------------------

namespace {

Count parse_int_param(std::string_view text, std::string_view what) {
  Count v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::BadPolicyParam, "policy: bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

void validate(const KernelPolicy& policy) {
  if (auto* fb = std::get_if<FixedBudget>(&policy); fb && fb->budget <= 0) {
    throw Error(ErrorCode::BadPolicyParam, "fixed budget must be positive");
  }
  if (auto* rn = std::get_if<RowNormalized>(&policy); rn && rn->min_row_count < 2) {
    throw Error(ErrorCode::BadPolicyParam, "min_row_count must be at least 2");
  }
}

// Non-escape, non-self outgoing counts of a row.
Count off_diagonal_outgoing(const CountTable& table, const State& from) {
  Count total = 0;
  for (auto it = table.counts.lower_bound({from, State{}});
       it != table.counts.end() && it->first.first == from; ++it) {
    if (it->first.second != from) total += it->second;
  }
  return total;
}

bool row_retained(const CountTable& table, const RowNormalized& p, const State& from) {
  return table.outgoing(from) > p.min_row_count - 1 && off_diagonal_outgoing(table, from) > 0;
}

// Probability of one entry under a policy, or 0 when the entry is not retained.
double policy_prob(const CountTable& table, const KernelPolicy& policy, const State& from, const State& to) {
  Count n = table.count(from, to);
  if (n == 0) return 0.0;
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FixedBudget>) {
          return std::min(static_cast<double>(n) / static_cast<double>(p.budget), 1.0);
        } else if constexpr (std::is_same_v<P, RowNormalized>) {
          if (from == to || !row_retained(table, p, from)) return 0.0;
          return static_cast<double>(n) / static_cast<double>(off_diagonal_outgoing(table, from));
        } else {
          return static_cast<double>(n) / static_cast<double>(table.attempts_from(from));
        }
      },
      policy);
}

}  // namespace

KernelPolicy parse_policy(std::string_view text) {
  if (text == "attempts") return AttemptNormalized{};
  if (text == "row") return RowNormalized{};
  KernelPolicy out;
  if (text.starts_with("fixed:")) {
    out = FixedBudget{parse_int_param(text.substr(6), "budget")};
  } else if (text.starts_with("row:")) {
    out = RowNormalized{parse_int_param(text.substr(4), "min_row_count")};
  } else {
    throw Error(ErrorCode::BadPolicyParam,
                "unknown policy '" + std::string(text) + "' (expected fixed:<N>, row[:<min>] or attempts)");
  }
  validate(out);
  return out;
}

std::string to_string(const KernelPolicy& policy) {
  return std::visit(
      [](const auto& p) -> std::string {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FixedBudget>) {
          return "fixed:" + std::to_string(p.budget);
        } else if constexpr (std::is_same_v<P, RowNormalized>) {
          return "row:" + std::to_string(p.min_row_count);
        } else {
          return "attempts";
        }
      },
      policy);
}

double KernelEstimate::prob(const State& from, const State& to) const {
  auto it = probs.find({from, to});
  return it == probs.end() ? 0.0 : it->second;
}

std::set<State> KernelEstimate::rows() const {
  std::set<State> out;
  for (const auto& [key, p] : probs) out.insert(key.first);
  return out;
}

double KernelEstimate::row_sum(const State& from) const {
  double sum = 0.0;
  for (auto it = probs.lower_bound({from, State{}}); it != probs.end() && it->first.first == from; ++it) {
    sum += it->second;
  }
  return sum;
}

KernelEstimate estimate_kernel(const CountTable& table, const KernelPolicy& policy) {
  validate(policy);
  KernelEstimate k;
  k.policy = policy;
  k.total_samples = table.total_samples();
  k.states = table.states();
  for (const auto& [key, n] : table.counts) {
    double p = policy_prob(table, policy, key.first, key.second);
    if (p <= 0.0) continue;
    k.probs[key] = p;
    k.std_error[key] = p / std::sqrt(static_cast<double>(n));
    k.sample_counts[key] = n;
  }
  if (std::holds_alternative<RowNormalized>(policy)) {
    // Absorb the rounding residue into each row's last entry so the row sums
    // to exactly 1 when added in key order. The change is a few ulps.
    for (const auto& from : k.rows()) {
      auto it = k.probs.lower_bound({from, State{}});
      double partial = 0.0;
      auto last = it;
      for (; it != k.probs.end() && it->first.first == from; ++it) last = it;
      for (auto jt = k.probs.lower_bound({from, State{}}); jt != last; ++jt) partial += jt->second;
      double x = 1.0 - partial;
      for (int step = 0; step < 8 && partial + x != 1.0; ++step) {
        x = std::nextafter(x, partial + x < 1.0 ? 2.0 : 0.0);
      }
      if (partial + x == 1.0 && x > 0.0) last->second = x;
    }
  }
  return k;
}

void write_kernel_csv(std::ostream& out, const KernelEstimate& kernel, bool full_precision) {
  out << "from,to,prob,stderr\n";
  for (const auto& [key, p] : kernel.probs) {
    out << io::csv_line({key.first, key.second, io::format_real(p, full_precision),
                         io::format_real(kernel.std_error.at(key), full_precision)});
  }
}

LogRatio log_ratio_with_error(const CountTable& table, const KernelPolicy& policy, const State& f,
                              const State& g) {
  validate(policy);
  for (const auto* s : {&f, &g}) {
    if (!table.contains(*s)) throw Error(ErrorCode::UnknownState, "unknown state '" + *s + "'");
  }
  double forward = policy_prob(table, policy, f, g);
  double reverse = policy_prob(table, policy, g, f);
  LogRatio r;
  if (forward <= 0.0 && reverse <= 0.0) {
    r.status = LogRatio::Status::MissingBoth;
  } else if (forward <= 0.0) {
    r.status = LogRatio::Status::MissingForward;
  } else if (reverse <= 0.0) {
    r.status = LogRatio::Status::MissingReverse;
  } else {
    r.status = LogRatio::Status::Measured;
    r.value = std::log(forward / reverse);
    r.std_error = std::sqrt(1.0 / static_cast<double>(table.count(f, g)) +
                            1.0 / static_cast<double>(table.count(g, f)));
  }
  return r;
}

}  // namespace balance_lab
