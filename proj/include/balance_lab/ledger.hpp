#pragma once

// Transition logs, count tables, and sampled transition kernels.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace balance_lab {

using State = std::string;
using Count = std::int64_t;

/// Reserved target name for a rejected attempt. Never valid as a source.
inline constexpr std::string_view kEscape = "__ESCAPE__";

struct TransitionEvent {
  std::string run_id;
  Count step = 0;
  State from_state;
  State to_state;  // kEscape for a rejected attempt
  std::optional<std::string> reason;
  std::optional<std::string> timestamp;

  bool is_escape() const { return to_state == kEscape; }
};

enum class LineIssueKind { MalformedLine, MissingField, InvalidField };

struct LineIssue {
  std::size_t line = 0;  // 1-based
  LineIssueKind kind = LineIssueKind::MalformedLine;
  std::string message;
};

struct TransitionLog {
  std::vector<TransitionEvent> events;
  std::vector<LineIssue> rejected;
};

/// Parses line-delimited JSON records. Bad lines are reported, not fatal.
/// Throws Error(EmptyLog) when no line yields a valid event.
TransitionLog parse_transition_log(std::istream& in);

/// One JSON line (no trailing newline) in the ingest format.
std::string to_json_line(const TransitionEvent& event);

/// Directed transition counts N(g <- f), keyed (from, to).
struct CountTable {
  std::map<std::pair<State, State>, Count> counts;
  std::map<State, Count> attempts;
  std::map<State, Count> escapes;

  Count count(const State& from, const State& to) const;
  Count attempts_from(const State& from) const;
  Count escapes_from(const State& from) const;
  /// Sum of non-escape outgoing counts, self-loops included.
  Count outgoing(const State& from) const;
  /// Sum of incoming counts from other states.
  Count incoming(const State& to) const;
  Count total_samples() const;
  /// Every state that appears as a source or a target.
  std::set<State> states() const;
  bool contains(const State& s) const;

  bool operator==(const CountTable&) const = default;
};

/// Throws Error(EmptyLog) on an empty log.
CountTable count_transitions(const TransitionLog& log);

void write_counts_csv(std::ostream& out, const CountTable& table);
CountTable read_counts_csv(std::istream& in);

struct DatabaseStatistics {
  Count transition_samples = 0;
  std::size_t unique_states = 0;
  std::size_t unique_transitions = 0;
  std::size_t states_sampled_more_than_once = 0;
};

DatabaseStatistics database_statistics(const CountTable& table);

// ---------------------------------------------------------------------------
// Kernel estimation policies

/// T(g <- f) = min(N(g <- f) / budget, 1); the remainder of each row is escape mass.
struct FixedBudget {
  Count budget = 0;
};

/// Self-loops removed, rows with fewer than min_row_count samples dropped,
/// T(g <- f) = N(g <- f) / sum over g' != f of N(g' <- f). Each retained row
/// sums to exactly 1 in key order (rounding residue goes to the last entry).
struct RowNormalized {
  Count min_row_count = 2;
};

/// T(g <- f) = N(g <- f) / attempts(f), using each state's own recorded attempts.
struct AttemptNormalized {};

using KernelPolicy = std::variant<FixedBudget, RowNormalized, AttemptNormalized>;

/// Accepts "fixed:<N>", "row:<min>", "row" and "attempts".
KernelPolicy parse_policy(std::string_view text);
std::string to_string(const KernelPolicy& policy);

struct KernelEstimate {
  std::map<std::pair<State, State>, double> probs;
  std::map<std::pair<State, State>, double> std_error;
  /// Raw N(g <- f) behind each retained entry.
  std::map<std::pair<State, State>, Count> sample_counts;
  KernelPolicy policy = RowNormalized{};
  Count total_samples = 0;
  /// All states of the source table, including dropped rows and pure targets.
  std::set<State> states;

  double prob(const State& from, const State& to) const;
  bool empty() const { return probs.empty(); }
  /// Sources with at least one retained entry.
  std::set<State> rows() const;
  double row_sum(const State& from) const;
  double escape_mass(const State& from) const { return 1.0 - row_sum(from); }
};

/// Throws Error(BadPolicyParam) for budget <= 0 or min_row_count < 2.
KernelEstimate estimate_kernel(const CountTable& table, const KernelPolicy& policy);

void write_kernel_csv(std::ostream& out, const KernelEstimate& kernel, bool full_precision = false);

struct LogRatio {
  enum class Status { Measured, MissingForward, MissingReverse, MissingBoth };
  Status status = Status::MissingBoth;
  double value = 0.0;   // log T(g <- f) / T(f <- g)
  double std_error = 0.0;  // sqrt(1/N(g <- f) + 1/N(f <- g))

  bool measured() const { return status == Status::Measured; }
};

/// Log-ratio of the two directed kernel entries between f and g with its
/// Poisson standard error. "Forward" is g <- f. Throws Error(UnknownState).
LogRatio log_ratio_with_error(const CountTable& table, const KernelPolicy& policy,
                              const State& f, const State& g);

}  // namespace balance_lab
