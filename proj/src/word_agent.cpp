#include "balance_lab/word_agent.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <istream>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace balance_lab {

int letter_sum(std::string_view word) {
  int sum = 0;
  for (char c : word) {
    if (c < 'A' || c > 'Z') throw Error(ErrorCode::NonAlphabetic, "not an uppercase A-Z word: " + std::string(word));
    sum += c - 'A' + 1;
  }
  return sum;
}

namespace {

bool all_upper(std::string_view word) {
  if (word.empty()) return false;
  for (char c : word) {
    if (c < 'A' || c > 'Z') return false;
  }
  return true;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Proposal {
  std::string to;
  std::optional<std::string> reason;
};

class ScriptedWorker {
 public:
  ScriptedWorker(const ScriptedMetropolis& b, const std::set<State>* wordlist, int worker)
      : b_(b), wordlist_(wordlist) {
    std::seed_seq seq{static_cast<std::uint32_t>(b.seed & 0xffffffffu), static_cast<std::uint32_t>(b.seed >> 32),
                      static_cast<std::uint32_t>(worker)};
    rng_.seed(seq);
  }

  Proposal next(const State& current) {
    const State& g = b_.proposals[rng_() % b_.proposals.size()];
    const double u = uniform01(rng_);
    auto check = validate_candidate(g, current, wordlist_);
    if (!check.valid) return {std::string(kEscape), check.reason};
    const double dv = b_.potential.at(g) - b_.potential.at(current);
    if (dv > 0.0 && !(u < std::exp(-dv))) return {std::string(kEscape), "rejected"};
    return {g, std::nullopt};
  }

 private:
  const ScriptedMetropolis& b_;
  const std::set<State>* wordlist_;
  std::mt19937_64 rng_;
};

struct ParsedUrl {
  std::string scheme_host;
  std::string path;
};

ParsedUrl parse_endpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/\s]+)(/\S*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw Error(ErrorCode::BadConfig, "endpoint is not an absolute http(s) URL: " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

class RemoteWorker {
 public:
  RemoteWorker(const RemoteHttp& b, const std::set<State>* wordlist) : b_(b), wordlist_(wordlist) {
    auto url = parse_endpoint(b.endpoint);
    path_ = url.path;
    client_ = std::make_unique<httplib::Client>(url.scheme_host);
    const auto secs = static_cast<time_t>(b.timeout_s);
    const auto usecs = static_cast<time_t>((b.timeout_s - static_cast<double>(secs)) * 1e6);
    client_->set_connection_timeout(secs, usecs);
    client_->set_read_timeout(secs, usecs);
    client_->set_write_timeout(secs, usecs);
    if (const char* key = std::getenv("BALANCE_LAB_API_KEY"); key && *key) {
      client_->set_bearer_token_auth(key);
    }
  }

  Proposal next(const State& current) {
    const auto text = request(current);
    if (!text) return {std::string(kEscape), "malformed"};
    auto cand = extract_candidate(*text);
    if (!cand) return {std::string(kEscape), "malformed"};
    auto check = validate_candidate(*cand, current, wordlist_);
    if (!check.valid) return {std::string(kEscape), check.reason};
    return {*cand, std::nullopt};
  }

 private:
  std::string prompt_for(const State& word) const {
    std::string p = b_.prompt_template;
    for (std::size_t pos = p.find("{word}"); pos != std::string::npos; pos = p.find("{word}", pos + word.size())) {
      p.replace(pos, 6, word);
    }
    return p;
  }

  // nullopt when the server answered but the body had no usable text.
  std::optional<std::string> request(const State& current) {
    nlohmann::json body{{"prompt", prompt_for(current)}};
    if (!b_.model_name.empty()) body["model"] = b_.model_name;
    const std::string payload = body.dump();
    std::string last_error;
    double backoff = b_.initial_backoff_s;
    for (int attempt = 0; attempt <= b_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
      }
      auto res = client_->Post(path_, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) return std::nullopt;
      return j["text"].get<std::string>();
    }
    throw Error(ErrorCode::RemoteUnreachable, b_.endpoint + ": " + last_error + " after " +
                                                  std::to_string(b_.max_retries + 1) + " attempts");
  }

  const RemoteHttp& b_;
  const std::set<State>* wordlist_;
  std::string path_;
  std::unique_ptr<httplib::Client> client_;
};

void check_binding(const ScriptedMetropolis& b, const State& seed_word) {
  if (b.proposals.empty()) throw Error(ErrorCode::BadConfig, "scripted generator needs a nonempty proposal list");
  for (const auto& p : b.proposals) {
    if (!is_word_state(p)) throw Error(ErrorCode::BadConfig, "proposal is not a valid word state: " + p);
    if (!b.potential.count(p)) throw Error(ErrorCode::BadConfig, "no potential for proposal " + p);
  }
  for (const auto& [s, v] : b.potential) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadConfig, "potential of " + s + " is not finite");
  }
  if (!b.potential.count(seed_word)) throw Error(ErrorCode::InvalidSeedWord, "no potential for seed word " + seed_word);
}

void check_binding(const RemoteHttp& b, const State&) {
  parse_endpoint(b.endpoint);
  if (b.max_retries < 0) throw Error(ErrorCode::BadConfig, "max_retries must be nonnegative");
  if (!(b.timeout_s > 0.0)) throw Error(ErrorCode::BadConfig, "timeout must be positive");
  if (!(b.initial_backoff_s >= 0.0)) throw Error(ErrorCode::BadConfig, "backoff must be nonnegative");
}

}  // namespace

bool is_word_state(std::string_view word) { return all_upper(word) && letter_sum(word) == kTargetLetterSum; }

CandidateCheck validate_candidate(std::string_view candidate, std::string_view prompt, const std::set<State>* wordlist) {
  if (candidate == prompt) return {false, "self"};
  if (!all_upper(candidate)) return {false, "malformed"};
  if (letter_sum(candidate) != kTargetLetterSum) return {false, "sum"};
  if (wordlist && !wordlist->count(std::string(candidate))) return {false, "not_word"};
  return {true, ""};
}

std::optional<std::string> extract_candidate(std::string_view text) {
  std::size_t i = 0;
  auto alpha = [](char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
  while (i < text.size()) {
    if (!alpha(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && alpha(text[j])) ++j;
    if (j - i >= 2) {
      std::string word(text.substr(i, j - i));
      for (auto& c : word) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      return word;
    }
    i = j;
  }
  return std::nullopt;
}

std::set<State> read_wordlist(std::istream& in) {
  std::set<State> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string w;
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) w += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    if (!w.empty()) out.insert(std::move(w));
  }
  return out;
}

TransitionLog run_sampling(const GeneratorBinding& binding, const State& seed_word, const SamplingOptions& opts) {
  if (opts.n_samples < 1) throw Error(ErrorCode::BadConfig, "n_samples must be at least 1");
  if (opts.concurrency < 1) throw Error(ErrorCode::BadConfig, "concurrency must be at least 1");
  if (!is_word_state(seed_word)) {
    throw Error(ErrorCode::InvalidSeedWord, "seed word must be A-Z with letter sum 100: " + seed_word);
  }
  std::visit([&](const auto& b) { check_binding(b, seed_word); }, binding);

  const int workers = static_cast<int>(std::min<Count>(opts.concurrency, opts.n_samples));
  std::vector<std::vector<TransitionEvent>> logs(workers);
  std::vector<std::string> failures(workers);
  std::atomic<bool> stop{false};
  std::mutex sink_mu;

  auto work = [&](int w) {
    const Count quota = opts.n_samples / workers + (w < opts.n_samples % workers ? 1 : 0);
    const std::string run_id = opts.run_prefix + "-" + std::to_string(w);
    auto body = [&](auto& gen) {
      State current = seed_word;
      for (Count step = 0; step < quota && !stop.load(); ++step) {
        Proposal p = gen.next(current);
        TransitionEvent ev;
        ev.run_id = run_id;
        ev.step = step;
        ev.from_state = current;
        ev.to_state = p.to;
        ev.reason = p.reason;
        if (opts.timestamps) ev.timestamp = utc_timestamp();
        if (opts.sink) {
          std::lock_guard lock(sink_mu);
          opts.sink(ev);
        }
        if (!ev.is_escape()) current = ev.to_state;
        logs[w].push_back(std::move(ev));
      }
    };
    try {
      if (auto* s = std::get_if<ScriptedMetropolis>(&binding)) {
        ScriptedWorker gen(*s, opts.wordlist, w);
        body(gen);
      } else {
        RemoteWorker gen(std::get<RemoteHttp>(binding), opts.wordlist);
        body(gen);
      }
    } catch (const std::exception& e) {
      failures[w] = e.what();
      stop = true;
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }

  TransitionLog out;
  for (auto& l : logs) {
    for (auto& ev : l) out.events.push_back(std::move(ev));
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw SamplingAborted(f, std::move(out));
  }
  return out;
}

}  // namespace balance_lab
