#pragma once

// Action-density diagnostics: Gaussian fit of fitted potentials, expected
// minimum action, and the majority-vote kernel transform.

#include <cstdint>
#include <string>

#include "balance_lab/ledger.hpp"
#include "balance_lab/potential_assignment.hpp"

namespace balance_lab {

/// Scaled complementary error function exp(x^2) erfc(x), overflow-free for large x.
double erfcx(double x);

struct DensityFit {
  double mu = 0.0;
  double sigma = 0.0;  // sample standard deviation (n - 1)
  std::size_t n_states = 0;
  Count min_samples = 2;
};

/// Mean and sample deviation of finite potentials of states with at least
/// `min_samples` recorded attempts. Throws Error(TooFewStates) below two states.
DensityFit fit_gaussian_potential_density(const PotentialAssignment& potential, const CountTable& counts,
                                          Count min_samples = 2);

struct ExpectedAction {
  double exact = 0.0;   // erfcx(sigma), equal to K(0) = 1 at sigma = 0
  double approx = 0.0;  // 1 / (sigma sqrt(pi)), +inf at sigma = 0
};

/// Throws Error(NegativeSigma).
ExpectedAction expected_min_action(double sigma);

/// {mu, sigma, n_states, expected_action_exact, expected_action_approx}
std::string density_report_json(const DensityFit& fit, const ExpectedAction& expected, bool full_precision = false);

/// M candidates per step; a state is accepted when it appears at least n times.
struct VoteConfig {
  int candidates = 1;  // M
  int threshold = 1;   // n, with M/2 <= n <= M
};

/// Binomial upper tail sum_{k=n}^{M} C(M,k) t^k (1-t)^(M-k).
/// Throws Error(BadConfig) for an invalid config or t outside [0, 1].
double vote_transform(double t, const VoteConfig& cfg);

struct VoteRatio {
  double lhs = 0.0;  // vote_transform(tf) / vote_transform(tg)
  double rhs = 0.0;  // (tf / tg)^n
};

/// Throws Error(DivideByZero) when vote_transform(tg) underflows to 0.
VoteRatio vote_ratio_check(double tf, double tg, const VoteConfig& cfg);

}  // namespace balance_lab
