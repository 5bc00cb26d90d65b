#include <doctest.h>

#include <cmath>
#include <limits>
#include <json.hpp>
#include <numbers>

#include "balance_lab/diagnostics.hpp"
#include "balance_lab/error.hpp"
#include "support.hpp"

using namespace balance_lab;

namespace {

// erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^k x^{2k+1} / (2k+1)!!, all terms positive.
double erfc_series(double x) {
  const long double x2 = static_cast<long double>(x) * x;
  long double term = x, sum = x;
  for (int k = 1; k < 2000; ++k) {
    term *= 2.0L * x2 / (2 * k + 1);
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  const long double erf = 2.0L / std::sqrt(std::numbers::pi_v<long double>) * std::exp(-x2) * sum;
  return static_cast<double>(1.0L - erf);
}

// exp(x^2) erfc(x) = 2/sqrt(pi) * integral_0^inf exp(-t^2 - 2xt) dt, by composite Simpson.
double erfcx_quadrature(double x) {
  const double upper = 12.0;
  const int n = 200000;
  const double h = upper / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * std::exp(-t * t - 2.0 * x * t);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * s * h / 3.0;
}

double erfcx_asymptotic(double x) {
  const double u = 1.0 / (2.0 * x * x);
  return (1.0 - u + 3.0 * u * u - 15.0 * u * u * u + 105.0 * u * u * u * u) / (x * std::sqrt(std::numbers::pi));
}

// Sums the probability of every outcome vector with at least n successes.
double vote_brute_force(double t, int m, int n) {
  double total = 0.0;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    const int k = __builtin_popcount(mask);
    if (k < n) continue;
    double p = 1.0;
    for (int i = 0; i < m; ++i) p *= (mask >> i & 1u) ? t : 1.0 - t;
    total += p;
  }
  return total;
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

TEST_CASE("erfcx against a reference erfc series") {
  for (double x = 0.0; x <= 5.0 + 1e-12; x += 0.05) {
    CHECK(std::abs(erfcx(x) * std::exp(-x * x) - erfc_series(x)) <= 1e-10);
  }
}

TEST_CASE("erfcx against quadrature, both branches") {
  for (double x : {0.0, 0.3, 1.0, 2.5, 2.999, 3.0, 3.001, 4.38, 6.0, 10.0, 30.0}) {
    CHECK(erfcx(x) == doctest::Approx(erfcx_quadrature(x)).epsilon(1e-10));
  }
}

TEST_CASE("erfcx for large and negative arguments") {
  CHECK(erfcx(100.0) == doctest::Approx(erfcx_asymptotic(100.0)).epsilon(1e-14));
  CHECK(erfcx(1e4) == doctest::Approx(erfcx_asymptotic(1e4)).epsilon(1e-14));
  CHECK(std::isfinite(erfcx(1e4)));
  CHECK(erfcx(0.0) == 1.0);
  CHECK(erfcx(-1.0) == doctest::Approx(std::exp(1.0) * std::erfc(-1.0)).epsilon(1e-14));
  CHECK(std::isnan(erfcx(std::numeric_limits<double>::quiet_NaN())));
}

TEST_CASE("expected minimum action") {
  CHECK(expected_min_action(0.0).exact == 1.0);
  CHECK(std::isinf(expected_min_action(0.0).approx));
  CHECK(std::round(expected_min_action(4.38).approx * 1000) / 1000 == doctest::Approx(0.129).epsilon(1e-12));
  CHECK(std::round(expected_min_action(2.30).approx * 1000) / 1000 == doctest::Approx(0.245).epsilon(1e-12));
  CHECK(expected_min_action(4.38).exact == doctest::Approx(0.1256).epsilon(1e-3));
  CHECK(code_of([] { expected_min_action(-0.1); }) == ErrorCode::NegativeSigma);
  CHECK(code_of([] { expected_min_action(std::numeric_limits<double>::quiet_NaN()); }) == ErrorCode::NegativeSigma);
}

TEST_CASE("exact and approximate expected action converge") {
  auto ratio = [](double s) {
    const auto e = expected_min_action(s);
    return e.exact / e.approx;
  };
  CHECK(std::abs(ratio(10.0) - 1.0) < 0.01);
  CHECK(std::abs(ratio(100.0) - 1.0) < 1e-4);
  CHECK(std::abs(ratio(100.0) - 1.0) < std::abs(ratio(10.0) - 1.0));
}

TEST_CASE("gaussian density fit") {
  auto counts = testing::make_counts({{"A", "B", 3}, {"B", "A", 2}, {"C", "A", 1}});
  auto v = testing::finite({{"A", -1.0}, {"B", 1.0}, {"C", 50.0}});
  const auto fit = fit_gaussian_potential_density(v, counts);
  CHECK(fit.mu == 0.0);
  CHECK(fit.sigma == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(fit.n_states == 2);
  CHECK(code_of([&] { fit_gaussian_potential_density(v, counts, 3); }) == ErrorCode::TooFewStates);

  const auto json = nlohmann::json::parse(density_report_json(fit, expected_min_action(fit.sigma)));
  CHECK(json.at("n_states") == 2);
  CHECK(json.contains("expected_action_exact"));
  CHECK(json.at("expected_action_approx").get<double>() == doctest::Approx(1.0 / (std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-5));
}

TEST_CASE("vote transform examples") {
  for (double t : {0.0, 0.1, 0.5, 0.77, 1.0}) CHECK(vote_transform(t, {1, 1}) == t);
  CHECK(vote_transform(0.0, {10, 7}) == 0.0);
  CHECK(vote_transform(1.0, {10, 7}) == 1.0);
  // Oracle: sum over k = 5..10 of C(10,k) 0.01^k 0.99^(10-k).
  CHECK(vote_transform(0.01, {10, 5}) == doctest::Approx(2.4167843199e-8).epsilon(1e-9));
  CHECK_NOTHROW(vote_transform(0.5, {10, 5}));
  CHECK(code_of([] { vote_transform(0.5, {10, 4}); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { vote_transform(0.5, {10, 11}); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { vote_transform(1.5, {3, 2}); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { vote_transform(0.5, {0, 1}); }) == ErrorCode::BadConfig);
}

TEST_CASE("vote transform matches brute-force enumeration") {
  for (int m = 1; m <= 12; ++m) {
    for (int n = m / 2 + 1; n <= m; ++n) {
      for (double t : {0.0, 1e-3, 0.01, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999, 1.0}) {
        CHECK(std::abs(vote_transform(t, {m, n}) - vote_brute_force(t, m, n)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("vote transform is monotone and stays in [0, 1]") {
  for (const VoteConfig cfg : {VoteConfig{10, 6}, VoteConfig{101, 51}, VoteConfig{1001, 700}}) {
    double prev = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double y = vote_transform(i / 1000.0, cfg);
      CHECK(y >= prev);
      CHECK(y <= 1.0);
      prev = y;
    }
  }
}

TEST_CASE("power-law approximation for small T") {
  for (int n : {5, 7, 9}) {
    const VoteConfig cfg{10, n};
    for (double tf : {0.001, 0.005, 0.01, 0.02}) {
      for (double tg : {0.001, 0.005, 0.01, 0.02}) {
        const auto r = vote_ratio_check(tf, tg, cfg);
        CHECK(std::abs(r.lhs / r.rhs - 1.0) < 0.1);
        if (tf != tg) {
          const double scaled = n * std::log(tf / tg);
          CHECK(std::abs(std::log(r.lhs) - scaled) / std::abs(scaled) < 0.1);
        }
      }
    }
  }
}

TEST_CASE("vote ratio examples") {
  const auto same = vote_ratio_check(0.3, 0.3, {10, 7});
  CHECK(same.lhs == 1.0);
  CHECK(same.rhs == 1.0);
  const auto small = vote_ratio_check(0.02, 0.01, {10, 5});
  CHECK(std::abs(small.lhs / small.rhs - 1.0) < 0.1);
  const auto large = vote_ratio_check(0.9, 0.5, {10, 9});
  CHECK(large.lhs / large.rhs < 0.5);
  CHECK(code_of([] { vote_ratio_check(0.5, 1e-300, {1000, 1000}); }) == ErrorCode::DivideByZero);
  CHECK(code_of([] { vote_ratio_check(0.0, 0.5, {3, 2}); }) == ErrorCode::BadConfig);
}
