#pragma once

// Least-action potential fitting.

#include <cstddef>
#include <iosfwd>
#include <optional>

#include "balance_lab/action.hpp"
#include "balance_lab/ledger.hpp"
#include "balance_lab/potential_assignment.hpp"

namespace balance_lab {

struct FitOptions {
  double tolerance = 1e-8;           // projected-gradient max-norm
  std::size_t max_iterations = 10000;
  std::optional<double> cap;         // default: log(total_samples)
  std::optional<Gauge> gauge;        // default: anchor at the most-measured state
  Denominator denominator = Denominator::RowsWithKernel;
  bool record_trace = false;
};

/// The state with the largest total incoming sample count; ties go to the
/// lexicographically smallest name. Throws Error(EmptyKernel).
State default_anchor(const KernelEstimate& kernel);

/// Minimizes the action by projected gradient descent over [-cap, cap] with
/// the reference state pinned at 0, then refines interior states with Newton
/// steps (problems up to 600 free states). States that settle on +cap with an outward
/// gradient and no incoming flow from finite states become divergent_high and
/// the remaining states are refitted. A run that stops at max_iterations
/// returns the partial result with `converged == false`.
/// Throws Error(EmptyKernel), Error(UnknownState) for a bad anchor, or Error(BadConfig).
PotentialAssignment fit_potential(const KernelEstimate& kernel, const ViolationKernelSpec& spec,
                                  const FitOptions& opts = {});

/// Closed-form solution for near-deterministic agents: states joined to the
/// anchor by a tree of mutually measured pairs take their pairwise log-ratio;
/// states reached only from divergent states are divergent_high.
/// Throws Error(NotTreeReducible) when the graph cannot be resolved that way.
PotentialAssignment solve_extreme_analytic(const KernelEstimate& kernel,
                                           const ViolationKernelSpec& spec = {},
                                           std::optional<State> anchor = std::nullopt,
                                           Denominator denominator = Denominator::RowsWithKernel);

/// Analytic solution when available, numeric fit otherwise.
PotentialAssignment solve_potential(const KernelEstimate& kernel, const ViolationKernelSpec& spec,
                                    const FitOptions& opts = {});

/// Header `state,beta_v,divergent,n_in,n_out`; divergent states carry beta_v = inf.
void write_potential_csv(std::ostream& out, const PotentialAssignment& potential, const CountTable& counts,
                         bool full_precision = false);
PotentialAssignment read_potential_csv(std::istream& in);

}  // namespace balance_lab
