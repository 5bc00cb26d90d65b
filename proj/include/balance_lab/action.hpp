#pragma once

// Violation kernels, the discrete least-action functional and its gradient.

#include <cstddef>
#include <functional>
#include <map>

#include "balance_lab/ledger.hpp"
#include "balance_lab/potential_assignment.hpp"

namespace balance_lab {

enum class KernelKind { ExpHalf, Softplus };

/// K(x) = exp(-beta x / 2) or K(x) = log(1 + exp(-beta x)).
struct ViolationKernelSpec {
  KernelKind kind = KernelKind::ExpHalf;
  double beta = 1.0;
};

/// Throws Error(BadConfig) unless beta > 0.
void validate(const ViolationKernelSpec& spec);

double eval_k(const ViolationKernelSpec& spec, double x);
double eval_k_derivative(const ViolationKernelSpec& spec, double x);

/// K'(x) - K'(-x) exp(-beta x). Zero for kernels under which detailed balance
/// implies stationarity of the action.
double k_condition_check(const ViolationKernelSpec& spec, double x);
double k_condition_residual(const std::function<double(double)>& k_derivative, double beta, double x);

enum class Denominator {
  RowsWithKernel,  // sources with at least one retained entry
  AllStates,       // every distinct state of the table
};

struct ActionValue {
  double value = 0.0;
  Denominator denominator = Denominator::RowsWithKernel;
  std::size_t n_terms = 0;
};

/// S = sum over retained (f, g) of T(g <- f) K(V(f) - V(g)), divided by the
/// chosen denominator. Divergent sources contribute K(+inf) = 0; a finite
/// source feeding a divergent target makes the action +inf.
/// Throws Error(EmptyKernel) or Error(MissingPotential).
ActionValue action(const KernelEstimate& kernel, const PotentialAssignment& potential,
                   const ViolationKernelSpec& spec, Denominator denominator = Denominator::RowsWithKernel);

/// dS/dV(f) for every finite state touched by the kernel. Empty for an empty kernel.
std::map<State, double> action_gradient(const KernelEstimate& kernel, const PotentialAssignment& potential,
                                        const ViolationKernelSpec& spec,
                                        Denominator denominator = Denominator::RowsWithKernel);

}  // namespace balance_lab
