#pragma once

// Word-generation agent: the prompt is a word whose letter indices sum to
// 100 and the agent proposes another such word.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "balance_lab/error.hpp"
#include "balance_lab/ledger.hpp"

namespace balance_lab {

inline constexpr int kTargetLetterSum = 100;

/// A = 1 ... Z = 26. Throws Error(NonAlphabetic) on anything but A-Z.
int letter_sum(std::string_view word);

/// Nonempty, A-Z only, letter sum 100.
bool is_word_state(std::string_view word);

struct CandidateCheck {
  bool valid = false;
  std::string reason;  // "self", "malformed", "sum", "not_word"; empty when valid
};

/// Checks run in the order self, malformed, sum, not_word.
CandidateCheck validate_candidate(std::string_view candidate, std::string_view prompt,
                                  const std::set<State>* wordlist = nullptr);

/// First run of two or more ASCII letters, uppercased.
std::optional<std::string> extract_candidate(std::string_view text);

/// One uppercased word per line; blank lines ignored.
std::set<State> read_wordlist(std::istream& in);

/// Uniform proposals from `proposals`, accepted with min(1, exp(-(V(g) - V(f)))).
struct ScriptedMetropolis {
  std::map<State, double> potential;
  std::vector<State> proposals;
  std::uint64_t seed = 0;
};

/// One POST of {"prompt", "model"} per sample; expects {"text": ...} back.
struct RemoteHttp {
  std::string endpoint;  // absolute http(s) URL
  std::string model_name;
  double timeout_s = 30.0;
  int max_retries = 3;
  double initial_backoff_s = 1.0;
  std::string prompt_template = "{word}";  // "{word}" is replaced by the prompt word
};

using GeneratorBinding = std::variant<ScriptedMetropolis, RemoteHttp>;

struct SamplingOptions {
  Count n_samples = 0;
  int concurrency = 1;
  std::string run_prefix = "run";
  const std::set<State>* wordlist = nullptr;
  bool timestamps = false;
  /// Called under a lock for every event as it is produced.
  std::function<void(const TransitionEvent&)> sink;
};

/// Raised when a remote run gives up; carries the events produced so far.
class SamplingAborted : public Error {
 public:
  SamplingAborted(const std::string& message, TransitionLog partial)
      : Error(ErrorCode::RemoteUnreachable, message), partial_(std::move(partial)) {}
  const TransitionLog& partial() const noexcept { return partial_; }

 private:
  TransitionLog partial_;
};

/// Runs `concurrency` independent chains from `seed_word` with run ids
/// "<prefix>-<worker>", splitting n_samples between them. The result is
/// ordered by worker, then step. Worker w draws from an RNG seeded with
/// (seed, w), so a scripted run is reproducible for a fixed concurrency.
/// Throws Error(BadConfig), Error(InvalidSeedWord), SamplingAborted.
TransitionLog run_sampling(const GeneratorBinding& binding, const State& seed_word, const SamplingOptions& opts);

}  // namespace balance_lab
