#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "balance_lab/error.hpp"
#include "balance_lab/word_agent.hpp"
#include "support.hpp"

using namespace balance_lab;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

ScriptedMetropolis two_words(std::uint64_t seed) {
  return {{{"WIZARDS", 0.0}, {"BUZZY", 1.0}}, {"WIZARDS", "BUZZY"}, seed};
}

// Local HTTP server on an ephemeral port; stops on destruction.
struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  template <class Handler>
  explicit LocalServer(Handler h) {
    server.Post("/generate", h);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/generate"; }
};

}  // namespace

TEST_CASE("letter sums") {
  CHECK(letter_sum("WIZARDS") == 100);
  CHECK(letter_sum("BUZZY") == 100);
  CHECK(letter_sum("A") == 1);
  CHECK(letter_sum("Z") == 26);
  CHECK(code_of([] { letter_sum("wizards"); }) == ErrorCode::NonAlphabetic);
  CHECK(code_of([] { letter_sum("AB1"); }) == ErrorCode::NonAlphabetic);
  CHECK(is_word_state("ATTITUDE"));
  CHECK_FALSE(is_word_state("HELLO"));
  CHECK_FALSE(is_word_state(""));
}

TEST_CASE("candidate validation") {
  CHECK(validate_candidate("ATTITUDE", "ATTITUDE").reason == "self");
  CHECK(validate_candidate("HELLO", "ATTITUDE").reason == "sum");
  CHECK(validate_candidate("BUZZ-Y", "ATTITUDE").reason == "malformed");
  CHECK(validate_candidate("", "ATTITUDE").reason == "malformed");
  const auto ok = validate_candidate("BUZZY", "WIZARDS");
  CHECK(ok.valid);
  CHECK(ok.reason.empty());
  const std::set<State> words{"WIZARDS"};
  CHECK(validate_candidate("BUZZY", "WIZARDS", &words).reason == "not_word");
  CHECK(validate_candidate("WIZARDS", "BUZZY", &words).valid);
}

TEST_CASE("candidate extraction and wordlists") {
  CHECK(*extract_candidate("Sure! buzzy is one.") == "SURE");
  CHECK(*extract_candidate("1. a Buzzy") == "BUZZY");
  CHECK(!extract_candidate("1 2 3 a"));
  std::istringstream in("wizards\n\n  Buzzy \n");
  CHECK(read_wordlist(in) == std::set<State>{"WIZARDS", "BUZZY"});
}

TEST_CASE("scripted runs are reproducible at concurrency 1") {
  SamplingOptions o;
  o.n_samples = 2000;
  const auto a = run_sampling(two_words(9), "WIZARDS", o);
  const auto b = run_sampling(two_words(9), "WIZARDS", o);
  REQUIRE(a.events.size() == 2000);
  bool same = true;
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    same = same && a.events[i].to_state == b.events[i].to_state && a.events[i].reason == b.events[i].reason;
  }
  CHECK(same);
  const auto c = run_sampling(two_words(10), "WIZARDS", o);
  bool differs = false;
  for (std::size_t i = 0; i < a.events.size(); ++i) differs = differs || a.events[i].to_state != c.events[i].to_state;
  CHECK(differs);
}

TEST_CASE("chain semantics") {
  SamplingOptions o;
  o.n_samples = 500;
  const auto log = run_sampling(two_words(3), "WIZARDS", o);
  State current = "WIZARDS";
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const auto& ev = log.events[i];
    CHECK(ev.step == static_cast<Count>(i));
    CHECK(ev.run_id == "run-0");
    CHECK(ev.from_state == current);
    CHECK(is_word_state(ev.from_state));
    if (!ev.is_escape()) {
      CHECK(is_word_state(ev.to_state));
      current = ev.to_state;
    } else {
      CHECK(ev.reason.has_value());
    }
  }
}

TEST_CASE("two-word Metropolis log-ratio") {
  SamplingOptions o;
  o.n_samples = 10000;
  const auto counts = count_transitions(run_sampling(two_words(42), "WIZARDS", o));
  const auto r = log_ratio_with_error(counts, AttemptNormalized{}, "WIZARDS", "BUZZY");
  REQUIRE(r.measured());
  CHECK(std::abs(r.value - (-1.0)) < 3.0 * r.std_error);
}

TEST_CASE("Metropolis pairs converge at 50k samples") {
  const std::map<State, double> truth{{"WIZARDS", 0.0}, {"BUZZY", 0.7}, {"ATTITUDE", 1.5}};
  const auto counts = testing::metropolis_counts(truth, 50000, 11);
  for (const auto& [f, vf] : truth) {
    for (const auto& [g, vg] : truth) {
      if (!(f < g)) continue;
      const auto r = log_ratio_with_error(counts, AttemptNormalized{}, f, g);
      REQUIRE(r.measured());
      CHECK(std::abs(r.value - (vf - vg)) < 3.0 * r.std_error);
    }
  }
}

TEST_CASE("sampling errors") {
  SamplingOptions o;
  o.n_samples = 0;
  CHECK(code_of([&] { run_sampling(two_words(1), "WIZARDS", o); }) == ErrorCode::BadConfig);
  o.n_samples = 5;
  CHECK(code_of([&] { run_sampling(two_words(1), "HELLO", o); }) == ErrorCode::InvalidSeedWord);
  CHECK(code_of([&] { run_sampling(two_words(1), "ATTITUDE", o); }) == ErrorCode::InvalidSeedWord);
  o.concurrency = 0;
  CHECK(code_of([&] { run_sampling(two_words(1), "WIZARDS", o); }) == ErrorCode::BadConfig);
  o.concurrency = 1;
  ScriptedMetropolis bad{{{"WIZARDS", 0.0}}, {"HELLO"}, 1};
  CHECK(code_of([&] { run_sampling(bad, "WIZARDS", o); }) == ErrorCode::BadConfig);
  CHECK(code_of([&] { run_sampling(RemoteHttp{"not a url", "m"}, "WIZARDS", o); }) == ErrorCode::BadConfig);
}

TEST_CASE("concurrent workers split the budget and keep their order") {
  SamplingOptions o;
  o.n_samples = 10;
  o.concurrency = 3;
  o.run_prefix = "w";
  std::size_t sunk = 0;
  o.sink = [&](const TransitionEvent&) { ++sunk; };
  const auto log = run_sampling(two_words(5), "WIZARDS", o);
  REQUIRE(log.events.size() == 10);
  CHECK(sunk == 10);
  std::map<std::string, int> per_run;
  for (const auto& ev : log.events) ++per_run[ev.run_id];
  CHECK(per_run == std::map<std::string, int>{{"w-0", 4}, {"w-1", 3}, {"w-2", 3}});
  for (std::size_t i = 1; i < log.events.size(); ++i) {
    const auto& a = log.events[i - 1];
    const auto& b = log.events[i];
    CHECK((a.run_id < b.run_id || (a.run_id == b.run_id && a.step + 1 == b.step)));
  }
  const auto again = run_sampling(two_words(5), "WIZARDS", o);
  for (std::size_t i = 0; i < log.events.size(); ++i) CHECK(again.events[i].to_state == log.events[i].to_state);
}

TEST_CASE("emitted logs parse back through the ledger") {
  SamplingOptions o;
  o.n_samples = 300;
  o.timestamps = true;
  const auto log = run_sampling(two_words(8), "WIZARDS", o);
  std::string text;
  for (const auto& ev : log.events) text += to_json_line(ev) + "\n";
  std::istringstream in(text);
  const auto back = parse_transition_log(in);
  CHECK(back.rejected.empty());
  REQUIRE(back.events.size() == log.events.size());
  CHECK(count_transitions(back) == count_transitions(log));
  CHECK(back.events[0].timestamp.has_value());
}

TEST_CASE("remote generator talks JSON over HTTP") {
  std::mutex mu;
  std::vector<std::string> auth, prompts, models;
  LocalServer srv([&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    {
      std::lock_guard lock(mu);
      auth.push_back(req.get_header_value("Authorization"));
      prompts.push_back(body.at("prompt").get<std::string>());
      models.push_back(body.value("model", ""));
    }
    const std::string prompt = body.at("prompt");
    std::string text = prompt.find("WIZARDS") != std::string::npos ? "buzzy, of course" : "BUZZY again";
    if (prompts.size() == 3) text = "12345";
    res.set_content(nlohmann::json{{"text", text}}.dump(), "application/json");
  });
  ::setenv("BALANCE_LAB_API_KEY", "sekret", 1);
  RemoteHttp r{srv.url(), "tiny", 5.0, 0, 0.0, "Give a word like {word}."};
  SamplingOptions o;
  o.n_samples = 4;
  const auto log = run_sampling(r, "WIZARDS", o);
  ::unsetenv("BALANCE_LAB_API_KEY");
  REQUIRE(log.events.size() == 4);
  CHECK(log.events[0].from_state == "WIZARDS");
  CHECK(log.events[0].to_state == "BUZZY");
  CHECK(log.events[1].from_state == "BUZZY");
  CHECK(*log.events[1].reason == "self");
  CHECK(*log.events[2].reason == "malformed");
  CHECK(log.events[3].from_state == "BUZZY");
  REQUIRE(auth.size() == 4);
  CHECK(auth[0] == "Bearer sekret");
  CHECK(prompts[0] == "Give a word like WIZARDS.");
  CHECK(models[0] == "tiny");
}

TEST_CASE("remote failures abort with the partial log") {
  std::atomic<int> served{0};
  LocalServer srv([&](const httplib::Request&, httplib::Response& res) {
    if (served.fetch_add(1) < 3) {
      res.set_content(R"({"text":"HELLO"})", "application/json");
    } else {
      res.status = 503;
    }
  });
  RemoteHttp r{srv.url(), "", 5.0, 2, 0.01};
  SamplingOptions o;
  o.n_samples = 10;
  std::vector<TransitionEvent> sunk;
  o.sink = [&](const TransitionEvent& ev) { sunk.push_back(ev); };
  try {
    run_sampling(r, "WIZARDS", o);
    FAIL("expected SamplingAborted");
  } catch (const SamplingAborted& e) {
    CHECK(e.code() == ErrorCode::RemoteUnreachable);
    CHECK(e.partial().events.size() == 3);
    for (const auto& ev : e.partial().events) CHECK(*ev.reason == "sum");
  }
  CHECK(sunk.size() == 3);
  CHECK(served.load() == 3 + 3);
}

TEST_CASE("unreachable endpoint") {
  // Bind and release a port so nothing is listening on it.
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  RemoteHttp r{"http://127.0.0.1:" + std::to_string(port) + "/x", "", 1.0, 1, 0.01};
  SamplingOptions o;
  o.n_samples = 3;
  CHECK(code_of([&] { run_sampling(r, "WIZARDS", o); }) == ErrorCode::RemoteUnreachable);
}
