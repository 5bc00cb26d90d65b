#include "balance_lab/action.hpp"

#include <cmath>
#include <limits>

#include "action_problem.hpp"
#include "balance_lab/error.hpp"

namespace balance_lab {

void validate(const ViolationKernelSpec& spec) {
  if (!(spec.beta > 0.0) || !std::isfinite(spec.beta)) {
    throw Error(ErrorCode::BadConfig, "violation kernel beta must be positive");
  }
}

double eval_k(const ViolationKernelSpec& spec, double x) {
  const double y = spec.beta * x;
  if (spec.kind == KernelKind::ExpHalf) return std::exp(-0.5 * y);
  // log(1 + e^{-y}) without overflow for large |y|.
  return y > 0.0 ? std::log1p(std::exp(-y)) : -y + std::log1p(std::exp(y));
}

double eval_k_derivative(const ViolationKernelSpec& spec, double x) {
  const double y = spec.beta * x;
  if (spec.kind == KernelKind::ExpHalf) return -0.5 * spec.beta * std::exp(-0.5 * y);
  // -beta / (1 + e^{y})
  if (y > 0.0) {
    const double e = std::exp(-y);
    return -spec.beta * e / (1.0 + e);
  }
  return -spec.beta / (1.0 + std::exp(y));
}

double k_condition_residual(const std::function<double(double)>& k_derivative, double beta, double x) {
  return k_derivative(x) - k_derivative(-x) * std::exp(-beta * x);
}

double k_condition_check(const ViolationKernelSpec& spec, double x) {
  return k_condition_residual([&](double t) { return eval_k_derivative(spec, t); }, spec.beta, x);
}

namespace detail {

DenseProblem build_problem(const KernelEstimate& kernel, Denominator denominator) {
  DenseProblem p;
  auto intern = [&](const State& s) {
    auto [it, inserted] = p.index.emplace(s, p.names.size());
    if (inserted) p.names.push_back(s);
    return it->second;
  };
  // Stable node order: every state of the table first, then any stray entry states.
  for (const auto& s : kernel.states) intern(s);
  for (const auto& [key, prob] : kernel.probs) {
    if (prob <= 0.0) continue;
    p.edges.push_back({intern(key.first), intern(key.second), prob});
  }
  if (denominator == Denominator::RowsWithKernel) {
    p.denominator = static_cast<double>(kernel.rows().size());
  } else {
    p.denominator = static_cast<double>(p.names.size());
  }
  if (p.denominator <= 0.0) p.denominator = 1.0;
  return p;
}

double dense_action(const DenseProblem& p, const ViolationKernelSpec& spec, const std::vector<double>& v,
                    const std::vector<NodeKind>& kind, std::size_t* n_terms) {
  // Rows are summed separately, then added; edges arrive grouped by source.
  double sum = 0.0, row = 0.0;
  std::size_t terms = 0;
  std::size_t current = p.edges.empty() ? 0 : p.edges.front().from;
  for (const auto& e : p.edges) {
    if (e.from != current) {
      sum += row;
      row = 0.0;
      current = e.from;
    }
    const bool src_div = kind[e.from] == NodeKind::Divergent;
    const bool dst_div = kind[e.to] == NodeKind::Divergent;
    if (src_div) continue;  // K(+inf) = 0, and divergent pairs are dropped
    ++terms;
    if (dst_div) {
      row = std::numeric_limits<double>::infinity();
      continue;
    }
    row += e.prob * eval_k(spec, v[e.from] - v[e.to]);
  }
  sum += row;
  if (n_terms) *n_terms = terms;
  return sum / p.denominator;
}

void dense_gradient(const DenseProblem& p, const ViolationKernelSpec& spec, const std::vector<double>& v,
                    const std::vector<NodeKind>& kind, std::vector<double>& grad) {
  grad.assign(p.names.size(), 0.0);
  for (const auto& e : p.edges) {
    if (e.from == e.to) continue;
    if (kind[e.from] == NodeKind::Divergent || kind[e.to] == NodeKind::Divergent) continue;
    const double d = e.prob * eval_k_derivative(spec, v[e.from] - v[e.to]);
    grad[e.from] += d;
    grad[e.to] -= d;
  }
  for (auto& g : grad) g /= p.denominator;
}

}  // namespace detail

namespace {

struct Evaluation {
  detail::DenseProblem problem;
  std::vector<double> values;
  std::vector<detail::NodeKind> kind;
};

Evaluation prepare(const KernelEstimate& kernel, const PotentialAssignment& potential, Denominator denominator) {
  Evaluation ev{detail::build_problem(kernel, denominator), {}, {}};
  const auto n = ev.problem.names.size();
  ev.values.assign(n, 0.0);
  ev.kind.assign(n, detail::NodeKind::Finite);
  std::vector<bool> used(n, false);
  for (const auto& e : ev.problem.edges) used[e.from] = used[e.to] = true;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& name = ev.problem.names[i];
    if (auto it = potential.values.find(name); it != potential.values.end()) {
      ev.values[i] = it->second;
    } else if (potential.is_divergent(name)) {
      ev.kind[i] = detail::NodeKind::Divergent;
    } else if (used[i]) {
      throw Error(ErrorCode::MissingPotential, "no potential for state '" + name + "'");
    }
  }
  return ev;
}

}  // namespace

ActionValue action(const KernelEstimate& kernel, const PotentialAssignment& potential,
                   const ViolationKernelSpec& spec, Denominator denominator) {
  validate(spec);
  if (kernel.empty()) throw Error(ErrorCode::EmptyKernel, "kernel has no entries");
  auto ev = prepare(kernel, potential, denominator);
  ActionValue out;
  out.denominator = denominator;
  out.value = detail::dense_action(ev.problem, spec, ev.values, ev.kind, &out.n_terms);
  return out;
}

std::map<State, double> action_gradient(const KernelEstimate& kernel, const PotentialAssignment& potential,
                                        const ViolationKernelSpec& spec, Denominator denominator) {
  validate(spec);
  std::map<State, double> out;
  if (kernel.empty()) return out;
  auto ev = prepare(kernel, potential, denominator);
  std::vector<double> grad;
  detail::dense_gradient(ev.problem, spec, ev.values, ev.kind, grad);
  std::vector<bool> used(grad.size(), false);
  for (const auto& e : ev.problem.edges) used[e.from] = used[e.to] = true;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (used[i] && ev.kind[i] == detail::NodeKind::Finite) out[ev.problem.names[i]] = grad[i];
  }
  return out;
}

}  // namespace balance_lab
