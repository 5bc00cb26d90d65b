#pragma once

// Index-based view of a kernel shared by the action evaluator and the solver.

#include <cstddef>
#include <map>
#include <vector>

#include "balance_lab/action.hpp"

namespace balance_lab::detail {

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  double prob = 0.0;
};

struct DenseProblem {
  std::vector<State> names;
  std::map<State, std::size_t> index;
  std::vector<Edge> edges;  // kernel map order
  double denominator = 1.0;
};

DenseProblem build_problem(const KernelEstimate& kernel, Denominator denominator);

/// Node status during evaluation.
enum class NodeKind : unsigned char { Finite, Divergent };

/// Sum of edge terms in a fixed order, divided by the denominator.
double dense_action(const DenseProblem& p, const ViolationKernelSpec& spec, const std::vector<double>& v,
                    const std::vector<NodeKind>& kind, std::size_t* n_terms = nullptr);

/// Gradient with respect to every node; divergent nodes get 0.
void dense_gradient(const DenseProblem& p, const ViolationKernelSpec& spec, const std::vector<double>& v,
                    const std::vector<NodeKind>& kind, std::vector<double>& grad);

}  // namespace balance_lab::detail
