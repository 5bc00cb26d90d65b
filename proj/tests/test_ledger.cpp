#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "balance_lab/error.hpp"
#include "balance_lab/ledger.hpp"
#include "support.hpp"

using namespace balance_lab;
using testing::kEsc;
using testing::make_counts;

namespace {

TransitionLog parse(const std::string& text) {
  std::istringstream in(text);
  return parse_transition_log(in);
}

std::string line(const std::string& run, int step, const std::string& from, const std::string& to) {
  return R"({"run":")" + run + R"(","step":)" + std::to_string(step) + R"(,"from":")" + from + R"(","to":")" + to +
         "\"}\n";
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("one well-formed line gives one event") {
  auto log = parse(R"({"run":"r","step":0,"from":"A","to":"B","reason":null,"ts":"2025-01-01T00:00:00Z"})");
  REQUIRE(log.events.size() == 1);
  CHECK(log.rejected.empty());
  CHECK(log.events[0].from_state == "A");
  CHECK(log.events[0].to_state == "B");
  CHECK(!log.events[0].reason);
  CHECK(*log.events[0].timestamp == "2025-01-01T00:00:00Z");
}

TEST_CASE("missing field is reported per line and other lines survive") {
  auto log = parse(line("r", 0, "A", "B") + R"({"run":"r","step":1,"to":"B"})" + "\n" + line("r", 2, "B", "A"));
  CHECK(log.events.size() == 2);
  REQUIRE(log.rejected.size() == 1);
  CHECK(log.rejected[0].line == 2);
  CHECK(log.rejected[0].kind == LineIssueKind::MissingField);
}

TEST_CASE("syntax errors and invalid fields are reported") {
  auto log = parse(line("r", 0, "A", "B") + "{not json\n" + line("r", 1, kEsc, "A") + line("r", 0, "A", "C") +
                   R"({"run":"r","step":-1,"from":"A","to":"B"})" + "\n" +
                   R"({"run":"r","step":"3","from":"A","to":"B"})" + "\n");
  CHECK(log.events.size() == 1);
  REQUIRE(log.rejected.size() == 5);
  CHECK(log.rejected[0].kind == LineIssueKind::MalformedLine);
  CHECK(log.rejected[0].line == 2);
  for (std::size_t i = 1; i < 5; ++i) CHECK(log.rejected[i].kind == LineIssueKind::InvalidField);
}

TEST_CASE("identical transitions stay distinct events") {
  auto log = parse(line("r", 0, "A", "B") + line("r", 1, "A", "B"));
  CHECK(log.events.size() == 2);
}

TEST_CASE("blank lines are skipped and states are trimmed") {
  auto log = parse("\n" + line("r", 0, "  A ", "B\\t") + "   \n");
  REQUIRE(log.events.size() == 1);
  CHECK(log.events[0].from_state == "A");
  CHECK(log.events[0].to_state == "B");
  CHECK(log.rejected.empty());
}

TEST_CASE("a log without valid events is EMPTY_LOG") {
  CHECK(code_of([] { parse(""); }) == ErrorCode::EmptyLog);
  CHECK(code_of([] { parse("{}\n[1,2]\n"); }) == ErrorCode::EmptyLog);
  CHECK(code_of([] { count_transitions(TransitionLog{}); }) == ErrorCode::EmptyLog);
}

TEST_CASE("json lines round trip") {
  TransitionEvent ev{"run-1", 7, "WIZARDS", kEsc, std::string("sum"), std::nullopt};
  auto log = parse(to_json_line(ev));
  REQUIRE(log.events.size() == 1);
  const auto& back = log.events[0];
  CHECK(back.run_id == ev.run_id);
  CHECK(back.step == 7);
  CHECK(back.is_escape());
  CHECK(*back.reason == "sum");
  CHECK(!back.timestamp);
}

TEST_CASE("counting") {
  auto log = parse(line("r", 0, "A", "B") + line("r", 1, "A", "B") + line("r", 2, "A", kEsc));
  auto t = count_transitions(log);
  CHECK(t.count("A", "B") == 2);
  CHECK(t.escapes_from("A") == 1);
  CHECK(t.attempts_from("A") == 3);
  CHECK(t.total_samples() == 3);

  std::string text;
  for (int i = 0; i < 66; ++i) text += line("r", i, "ATTITUDE", "PERSONAL");
  CHECK(count_transitions(parse(text)).count("ATTITUDE", "PERSONAL") == 66);
}

TEST_CASE("counting is permutation invariant") {
  std::mt19937_64 rng(11);
  TransitionLog log;
  const std::vector<std::string> names{"A", "B", "C", "D", kEsc};
  for (int i = 0; i < 500; ++i) {
    log.events.push_back({"r", i, names[rng() % 4], names[rng() % 5], std::nullopt, std::nullopt});
  }
  const auto base = count_transitions(log);
  for (int rep = 0; rep < 20; ++rep) {
    std::shuffle(log.events.begin(), log.events.end(), rng);
    CHECK(count_transitions(log) == base);
  }
}

TEST_CASE("counts csv round trip") {
  std::ifstream in(testing::data_file("claude_counts.csv"));
  const auto t = read_counts_csv(in);
  CHECK(t.count("ATTITUDE", "PERSONAL") == 66);
  CHECK(t.escapes_from("ATTITUDE") == 3914);
  CHECK(t.attempts_from("ATTITUDE") == 4000);
  CHECK(t.total_samples() == 20219);
  std::ostringstream out;
  write_counts_csv(out, t);
  std::istringstream back(out.str());
  CHECK(read_counts_csv(back) == t);

  auto odd = make_counts({{"a,b", "c\"d", 3}, {"a,b", kEsc, 1}, {"x", "a,b", 2}});
  std::ostringstream out2;
  write_counts_csv(out2, odd);
  std::istringstream back2(out2.str());
  CHECK(read_counts_csv(back2) == odd);
}

TEST_CASE("counts csv rejects a bad header or an escape source") {
  std::istringstream bad_header("a,b,c\nA,B,1\n");
  CHECK(code_of([&] { read_counts_csv(bad_header); }) == ErrorCode::MalformedLine);
  std::istringstream escape_source("from,to,count\n__ESCAPE__,A,1\n");
  CHECK(code_of([&] { read_counts_csv(escape_source); }) == ErrorCode::MalformedLine);
}

TEST_CASE("fixed budget kernel reproduces the Claude row") {
  std::ifstream in(testing::data_file("claude_counts.csv"));
  const auto k = estimate_kernel(read_counts_csv(in), FixedBudget{4000});
  CHECK(k.prob("ATTITUDE", "PERSONAL") == doctest::Approx(0.0165).epsilon(1e-12));
  CHECK(k.escape_mass("ATTITUDE") == doctest::Approx(0.9785).epsilon(1e-12));
  CHECK(k.prob("TURKEY", "ATTITUDE") == 1.0);  // 4122 / 4000 clamps
  CHECK(k.std_error.at({"ATTITUDE", "PERSONAL"}) == doctest::Approx(0.0165 / std::sqrt(66.0)));
}

TEST_CASE("row normalization drops thin rows and self-loops") {
  auto t = make_counts({{"A", "B", 5}, {"A", "A", 5}, {"C", "A", 1}});
  const auto k = estimate_kernel(t, RowNormalized{2});
  CHECK(k.prob("A", "B") == 1.0);
  CHECK(k.prob("A", "A") == 0.0);
  CHECK(k.rows().count("C") == 0);
  CHECK(k.states.count("C") == 1);
}

TEST_CASE("row sums under random tables") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    CountTable t;
    for (int i = 0; i < 40; ++i) {
      const std::string f(1, static_cast<char>('A' + rng() % 6));
      const std::string g(1, static_cast<char>('A' + rng() % 6));
      const Count n = 1 + static_cast<Count>(rng() % 30);
      t.counts[{f, g}] += n;
      t.attempts[f] += n;
    }
    const auto row = estimate_kernel(t, RowNormalized{2});
    for (const auto& f : row.rows()) {
      CHECK(row.row_sum(f) == 1.0);
      CHECK(row.prob(f, f) == 0.0);
    }
    const auto fixed = estimate_kernel(t, FixedBudget{2000});
    for (const auto& [key, p] : fixed.probs) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    for (const auto& f : fixed.rows()) CHECK(fixed.row_sum(f) <= 1.0 + 1e-12);
    const auto att = estimate_kernel(t, AttemptNormalized{});
    for (const auto& f : att.rows()) CHECK(att.row_sum(f) <= 1.0 + 1e-12);
  }
}

TEST_CASE("policy parsing") {
  CHECK(std::get<FixedBudget>(parse_policy("fixed:4000")).budget == 4000);
  CHECK(std::get<RowNormalized>(parse_policy("row")).min_row_count == 2);
  CHECK(std::get<RowNormalized>(parse_policy("row:5")).min_row_count == 5);
  CHECK(std::holds_alternative<AttemptNormalized>(parse_policy("attempts")));
  CHECK(to_string(parse_policy("fixed:7")) == "fixed:7");
  for (const char* bad : {"fixed:0", "fixed:-3", "fixed:x", "row:1", "bogus", ""}) {
    CHECK(code_of([&] { parse_policy(bad); }) == ErrorCode::BadPolicyParam);
  }
  CHECK(code_of([] { estimate_kernel(make_counts({{"A", "B", 1}}), FixedBudget{0}); }) == ErrorCode::BadPolicyParam);
}

TEST_CASE("log ratio with Poisson error") {
  auto t = make_counts({{"ATTITUDE", "PERSONAL", 66}, {"PERSONAL", "ATTITUDE", 3879}, {"A", "B", 9}, {"B", "A", 9},
                        {"C", "A", 4}});
  auto r = log_ratio_with_error(t, FixedBudget{4000}, "ATTITUDE", "PERSONAL");
  REQUIRE(r.measured());
  // Oracle: log(66/4000) - log(3879/4000), sqrt(1/66 + 1/3879).
  CHECK(r.value == doctest::Approx(-4.0736779254).epsilon(1e-9));
  CHECK(r.std_error == doctest::Approx(0.12413425616).epsilon(1e-9));

  CHECK(log_ratio_with_error(t, FixedBudget{4000}, "A", "B").value == 0.0);
  CHECK(log_ratio_with_error(t, FixedBudget{4000}, "A", "C").status == LogRatio::Status::MissingForward);
  CHECK(log_ratio_with_error(t, FixedBudget{4000}, "C", "A").status == LogRatio::Status::MissingReverse);
  CHECK(log_ratio_with_error(t, FixedBudget{4000}, "C", "B").status == LogRatio::Status::MissingBoth);
  CHECK(code_of([&] { log_ratio_with_error(t, FixedBudget{4000}, "A", "NOPE"); }) == ErrorCode::UnknownState);
}

TEST_CASE("database statistics") {
  auto t = make_counts({{"A", "B", 3}, {"A", kEsc, 2}, {"B", "A", 1}, {"B", "C", 1}});
  const auto st = database_statistics(t);
  CHECK(st.transition_samples == 7);
  CHECK(st.unique_states == 3);
  CHECK(st.unique_transitions == 3);
  CHECK(st.states_sampled_more_than_once == 2);
}
