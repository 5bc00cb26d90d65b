#include "balance_lab/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "balance_lab/error.hpp"
#include "balance_lab/io_util.hpp"

namespace balance_lab {

namespace {

// 1 / (x + (1/2) / (x + 1 / (x + (3/2) / (x + ...)))) by modified Lentz.
double erfc_continued_fraction(double x) {
  constexpr double tiny = 1e-300;
  double f = x;
  double c = f;
  double d = 0.0;
  for (int j = 1; j < 5000; ++j) {
    const double a = 0.5 * j;
    d = x + a * d;
    if (d == 0.0) d = tiny;
    c = x + a / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

}  // namespace

double erfcx(double x) {
  if (std::isnan(x)) return x;
  if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
  if (x < 3.0) return std::exp(x * x) * std::erfc(x);
  return erfc_continued_fraction(x) / std::sqrt(std::numbers::pi);
}

DensityFit fit_gaussian_potential_density(const PotentialAssignment& potential, const CountTable& counts,
                                          Count min_samples) {
  std::vector<double> xs;
  for (const auto& [s, v] : potential.values) {
    if (counts.attempts_from(s) >= min_samples) xs.push_back(v);
  }
  if (xs.size() < 2) {
    throw Error(ErrorCode::TooFewStates,
                "need at least two finite states sampled " + std::to_string(min_samples) + "+ times");
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  DensityFit fit;
  fit.mu = mean;
  fit.sigma = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  fit.n_states = xs.size();
  fit.min_samples = min_samples;
  return fit;
}

ExpectedAction expected_min_action(double sigma) {
  if (!(sigma >= 0.0)) throw Error(ErrorCode::NegativeSigma, "sigma must be nonnegative");
  ExpectedAction out;
  out.exact = erfcx(sigma);
  out.approx = sigma > 0.0 ? 1.0 / (sigma * std::sqrt(std::numbers::pi)) : std::numeric_limits<double>::infinity();
  return out;
}

std::string density_report_json(const DensityFit& fit, const ExpectedAction& expected, bool full_precision) {
  auto num = [&](double v) -> nlohmann::json {
    if (!std::isfinite(v)) return nullptr;
    return io::parse_real(io::format_real(v, full_precision));
  };
  nlohmann::json j;
  j["mu"] = num(fit.mu);
  j["sigma"] = num(fit.sigma);
  j["n_states"] = fit.n_states;
  j["expected_action_exact"] = num(expected.exact);
  j["expected_action_approx"] = num(expected.approx);
  return j.dump(2) + "\n";
}

namespace {

// sum_{k=lo}^{hi} C(M,k) t^k (1-t)^(M-k) for 0 < t < 1.
double binomial_terms(double t, int m, int lo, int hi) {
  double sum = 0.0;
  if (lo > hi) return sum;
  if (m <= 500) {
    double binom = 1.0;  // C(M, k), built upward from C(M, 0)
    for (int k = 0; k <= hi; ++k) {
      if (k >= lo) sum += binom * std::pow(t, k) * std::pow(1.0 - t, m - k);
      binom = binom * (m - k) / (k + 1);
    }
    return sum;
  }
  const double log_t = std::log(t);
  const double log_u = std::log1p(-t);
  for (int k = lo; k <= hi; ++k) {
    const double log_c = std::lgamma(m + 1.0) - std::lgamma(k + 1.0) - std::lgamma(m - k + 1.0);
    sum += std::exp(log_c + k * log_t + (m - k) * log_u);
  }
  return sum;
}

}  // namespace

double vote_transform(double t, const VoteConfig& cfg) {
  const int m = cfg.candidates;
  const int n = cfg.threshold;
  if (m < 1 || n > m || 2 * n < m) {
    throw Error(ErrorCode::BadConfig, "vote config needs M/2 <= n <= M (M=" + std::to_string(m) +
                                          ", n=" + std::to_string(n) + ")");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::BadConfig, "transition probability must lie in [0, 1]");
  if (t == 0.0) return 0.0;
  if (t == 1.0) return 1.0;

  // Sum the smaller tail and complement it when needed, so values near 1
  // keep their ordering.
  const double upper = binomial_terms(t, m, n, m);
  const double lower = binomial_terms(t, m, 0, n - 1);
  const double tail = upper <= lower ? upper : 1.0 - lower;
  return std::min(std::max(tail, 0.0), 1.0);
}

VoteRatio vote_ratio_check(double tf, double tg, const VoteConfig& cfg) {
  for (double t : {tf, tg}) {
    if (!(t > 0.0 && t < 1.0)) throw Error(ErrorCode::BadConfig, "ratio check needs probabilities in (0, 1)");
  }
  const double num = vote_transform(tf, cfg);
  const double den = vote_transform(tg, cfg);
  if (den == 0.0) throw Error(ErrorCode::DivideByZero, "vote transform of the reverse entry underflows to 0");
  return {num / den, std::pow(tf / tg, cfg.threshold)};
}

}  // namespace balance_lab
