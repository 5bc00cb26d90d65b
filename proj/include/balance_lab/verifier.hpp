#pragma once

// Detailed-balance test reports: pairwise scatter, triplet loops, and
// one-sided bounds for pairs measured in a single direction.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "balance_lab/ledger.hpp"
#include "balance_lab/potential_assignment.hpp"

namespace balance_lab {

struct PairRecord {
  State f, g;
  double delta_beta_v = 0.0;  // V(f) - V(g)
  double log_ratio = 0.0;     // log T(g <- f) / T(f <- g)
  double std_error = 0.0;
};

/// One record per unordered pair (f < g) measured in both directions with
/// finite potentials; pairs with |dV| > log(total_samples) are excluded.
std::vector<PairRecord> pairwise_balance_report(const CountTable& counts, const KernelEstimate& kernel,
                                                const PotentialAssignment& potential);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares of log_ratio against delta_beta_v.
LineFit regress_pairs(const std::vector<PairRecord>& records);
double fraction_pairs_within(const std::vector<PairRecord>& records, double n_sigma);

using Triplet = std::array<State, 3>;

/// Unordered triples whose six directed counts all reach min_count, each
/// emitted once in sorted order. Output is sorted.
std::vector<Triplet> enumerate_triplets(const CountTable& counts, Count min_count = 2);

struct TripletRecord {
  Triplet states;
  double forward_sum = 0.0;  // f -> g -> h -> f
  double reverse_sum = 0.0;  // f -> h -> g -> f
  double std_error = 0.0;
};

/// Sums of log kernel entries around both orientations of the loop.
/// Throws Error(UnknownState) when an entry is missing from the kernel.
TripletRecord loop_sum(const Triplet& triplet, const CountTable& counts, const KernelEstimate& kernel);
double fraction_loops_within(const std::vector<TripletRecord>& records, double n_sigma);

struct BoundRecord {
  State f, g;                 // f <- g measured, g <- f not
  double delta_beta_v = 0.0;  // V(f) - V(g)
  double bound_log = 0.0;     // log[(1/N(f)) / (N(f <- g)/N(g))]
  bool satisfied = false;
};

struct BoundBucket {
  double lower = 0.0;  // bucket covers [lower, lower + width)
  std::size_t n = 0;
  double p90_delta = 0.0;
};

struct BoundSummary {
  std::size_t n = 0;
  double fraction_satisfied = 0.0;
  std::vector<BoundBucket> buckets;
};

std::vector<BoundRecord> one_sided_bound_report(const CountTable& counts, const PotentialAssignment& potential);
BoundSummary summarize_bounds(const std::vector<BoundRecord>& records, double bucket_width = 1.0);

/// Linear interpolation between closest ranks, q in [0, 1].
double percentile(std::vector<double> values, double q);

void write_pairs_csv(std::ostream& out, const std::vector<PairRecord>& records, bool full_precision = false);
void write_triplets_csv(std::ostream& out, const std::vector<TripletRecord>& records, bool full_precision = false);
void write_bounds_csv(std::ostream& out, const std::vector<BoundRecord>& records, bool full_precision = false);

}  // namespace balance_lab
