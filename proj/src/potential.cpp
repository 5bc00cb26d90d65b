#include "balance_lab/potential.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>

#include "action_problem.hpp"
#include "balance_lab/error.hpp"
#include "balance_lab/io_util.hpp"

namespace balance_lab {

using detail::DenseProblem;
using detail::NodeKind;

State default_anchor(const KernelEstimate& kernel) {
  if (kernel.empty()) throw Error(ErrorCode::EmptyKernel, "kernel has no entries");
  std::map<State, double> incoming;
  for (const auto& [key, p] : kernel.probs) {
    if (key.first == key.second) continue;
    auto it = kernel.sample_counts.find(key);
    // Kernels built by hand carry no counts; fall back to probability mass.
    incoming[key.second] += it != kernel.sample_counts.end() ? static_cast<double>(it->second) : p;
    incoming.try_emplace(key.first, 0.0);
  }
  State best;
  double best_in = -1.0;
  for (const auto& [s, n] : incoming) {
    if (n > best_in) {
      best = s;
      best_in = n;
    }
  }
  return best;
}

namespace {

double resolve_cap(const KernelEstimate& kernel, const std::optional<double>& cap) {
  if (cap) {
    if (!(*cap > 0.0)) throw Error(ErrorCode::BadConfig, "cap must be positive");
    return *cap;
  }
  if (kernel.total_samples < 2) {
    throw Error(ErrorCode::BadConfig, "kernel has no sample total; pass an explicit cap");
  }
  return std::log(static_cast<double>(kernel.total_samples));
}

double max_abs(const std::vector<double>& xs, const std::vector<bool>& mask) {
  double m = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (mask[i]) m = std::max(m, std::abs(xs[i]));
  }
  return m;
}

class BoxedDescent {
 public:
  BoxedDescent(const DenseProblem& p, const ViolationKernelSpec& spec, double cap, double tol)
      : p_(p), spec_(spec), lo_(-cap), hi_(cap), tol_(tol) {}

  struct Outcome {
    bool converged = false;
    std::size_t iterations = 0;
    double action = 0.0;
  };

  // Minimizes over variables flagged in `free_vars`; others stay fixed.
  Outcome run(std::vector<double>& v, const std::vector<NodeKind>& kind, const std::vector<bool>& free_vars,
              std::size_t max_iterations, std::vector<double>* trace) {
    const auto n = v.size();
    std::vector<double> g, g_new, x(n), pg(n);
    double s_cur = detail::dense_action(p_, spec_, v, kind);
    detail::dense_gradient(p_, spec_, v, kind, g);
    if (trace) trace->push_back(s_cur);

    Outcome out;
    double step = initial_step(g, free_vars);
    for (;;) {
      projected(v, g, free_vars, pg);
      if (max_abs(pg, free_vars) <= tol_) {
        out.converged = true;
        break;
      }
      if (out.iterations >= max_iterations) break;

      // Armijo backtracking along the projection arc.
      bool accepted = false;
      double s_new = s_cur;
      for (int k = 0; k < 80; ++k) {
        double slope = 0.0;
        double moved = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          x[i] = free_vars[i] ? std::clamp(v[i] - step * g[i], lo_, hi_) : v[i];
          slope += g[i] * (x[i] - v[i]);
          moved = std::max(moved, std::abs(x[i] - v[i]));
        }
        if (moved == 0.0) break;
        s_new = detail::dense_action(p_, spec_, x, kind);
        if (s_new <= s_cur + 1e-4 * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;  // no representable descent left

      detail::dense_gradient(p_, spec_, x, kind, g_new);
      double ss = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!free_vars[i]) continue;
        const double s = x[i] - v[i];
        ss += s * s;
        sy += s * (g_new[i] - g[i]);
      }
      // Barzilai-Borwein trial step for the next iteration.
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : std::min(step * 4.0, 1e12);
      v.swap(x);
      g.swap(g_new);
      s_cur = s_new;
      ++out.iterations;
      if (trace) trace->push_back(s_cur);
    }
    out.action = s_cur;
    return out;
  }

  void projected(const std::vector<double>& v, const std::vector<double>& g, const std::vector<bool>& free_vars,
                 std::vector<double>& pg) const {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!free_vars[i]) {
        pg[i] = 0.0;
      } else if ((v[i] <= lo_ && g[i] > 0.0) || (v[i] >= hi_ && g[i] < 0.0)) {
        pg[i] = 0.0;
      } else {
        pg[i] = g[i];
      }
    }
  }

 private:
  static double initial_step(const std::vector<double>& g, const std::vector<bool>& free_vars) {
    double m = max_abs(g, free_vars);
    return m > 0.0 ? 1.0 / m : 1.0;
  }

  const DenseProblem& p_;
  ViolationKernelSpec spec_;
  double lo_, hi_, tol_;
};

double k_second(const ViolationKernelSpec& spec, double x) {
  const double y = spec.beta * x;
  const double b2 = spec.beta * spec.beta;
  if (spec.kind == KernelKind::ExpHalf) return 0.25 * b2 * std::exp(-0.5 * y);
  const double e = std::exp(-std::abs(y));
  return b2 * e / ((1.0 + e) * (1.0 + e));
}

// K(a + d) - K(a) without cancellation.
double k_change(const ViolationKernelSpec& spec, double a, double d) {
  const double y = spec.beta * a;
  if (spec.kind == KernelKind::ExpHalf) return std::exp(-0.5 * y) * std::expm1(-0.5 * spec.beta * d);
  const double sig = y >= 0.0 ? std::exp(-y) / (1.0 + std::exp(-y)) : 1.0 / (1.0 + std::exp(y));
  return std::log1p(sig * std::expm1(-spec.beta * d));
}

double action_change(const DenseProblem& p, const ViolationKernelSpec& spec, const std::vector<double>& v,
                     const std::vector<double>& x, const std::vector<NodeKind>& kind) {
  double sum = 0.0;
  for (const auto& e : p.edges) {
    if (e.from == e.to || kind[e.from] == NodeKind::Divergent || kind[e.to] == NodeKind::Divergent) continue;
    const double a = v[e.from] - v[e.to];
    sum += e.prob * k_change(spec, a, (x[e.from] - x[e.to]) - a);
  }
  return sum / p.denominator;
}

constexpr std::size_t kMaxNewtonSize = 600;

// Newton refinement on the interior free variables once the descent has
// stopped. The gradient stop alone leaves errors of tol / curvature in
// flat directions; a few Newton steps remove them. Steps are taken only
// when the action does not rise and the projected gradient shrinks.
std::size_t newton_polish(const DenseProblem& p, const ViolationKernelSpec& spec, double cap, std::vector<double>& v,
                          const std::vector<NodeKind>& kind, const std::vector<bool>& free_vars, std::size_t budget,
                          double& s_cur, std::vector<double>* trace) {
  const auto n = v.size();
  std::vector<std::size_t> idx;
  std::vector<long> pos(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (free_vars[i] && v[i] > -cap && v[i] < cap) {
      pos[i] = static_cast<long>(idx.size());
      idx.push_back(i);
    }
  }
  const auto m = idx.size();
  if (m == 0 || m > kMaxNewtonSize) return 0;

  auto pg_norm = [&](const std::vector<double>& at, const std::vector<double>& g) {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!free_vars[i]) continue;
      if ((at[i] <= -cap && g[i] > 0.0) || (at[i] >= cap && g[i] < 0.0)) continue;
      r = std::max(r, std::abs(g[i]));
    }
    return r;
  };

  std::vector<double> g, g_new, x(n), h(m * m), rhs(m);
  detail::dense_gradient(p, spec, v, kind, g);
  double norm = pg_norm(v, g);
  std::size_t steps = 0;
  while (steps < budget && steps < 20 && norm > 0.0) {
    std::fill(h.begin(), h.end(), 0.0);
    for (const auto& e : p.edges) {
      if (e.from == e.to || kind[e.from] == NodeKind::Divergent || kind[e.to] == NodeKind::Divergent) continue;
      const double c = e.prob * k_second(spec, v[e.from] - v[e.to]) / p.denominator;
      const long a = pos[e.from], b = pos[e.to];
      if (a >= 0) h[a * m + a] += c;
      if (b >= 0) h[b * m + b] += c;
      if (a >= 0 && b >= 0) {
        h[a * m + b] -= c;
        h[b * m + a] -= c;
      }
    }
    for (std::size_t r = 0; r < m; ++r) rhs[r] = -g[idx[r]];

    // In-place Cholesky; a singular block (a component cut off from the
    // reference) leaves the descent result as is.
    for (std::size_t j = 0; j < m; ++j) {
      double d = h[j * m + j];
      for (std::size_t k = 0; k < j; ++k) d -= h[j * m + k] * h[j * m + k];
      if (!(d > 1e-300)) return steps;
      d = std::sqrt(d);
      h[j * m + j] = d;
      for (std::size_t r = j + 1; r < m; ++r) {
        double s = h[r * m + j];
        for (std::size_t k = 0; k < j; ++k) s -= h[r * m + k] * h[j * m + k];
        h[r * m + j] = s / d;
      }
    }
    for (std::size_t r = 0; r < m; ++r) {
      double s = rhs[r];
      for (std::size_t k = 0; k < r; ++k) s -= h[r * m + k] * rhs[k];
      rhs[r] = s / h[r * m + r];
    }
    for (std::size_t r = m; r-- > 0;) {
      double s = rhs[r];
      for (std::size_t k = r + 1; k < m; ++k) s -= h[k * m + r] * rhs[k];
      rhs[r] = s / h[r * m + r];
    }

    x = v;
    for (std::size_t r = 0; r < m; ++r) x[idx[r]] = std::clamp(v[idx[r]] + rhs[r], -cap, cap);
    const double ds = action_change(p, spec, v, x, kind);
    detail::dense_gradient(p, spec, x, kind, g_new);
    const double norm_new = pg_norm(x, g_new);
    if (!(ds <= 0.0) || !(norm_new < norm)) break;
    v.swap(x);
    g.swap(g_new);
    norm = norm_new;
    s_cur += ds;
    if (trace) trace->push_back(s_cur);
    ++steps;
  }
  return steps;
}

void apply_gauge(PotentialAssignment& out, const Gauge& gauge) {
  if (std::holds_alternative<MeanZeroGauge>(gauge) && !out.values.empty()) {
    double mean = 0.0;
    for (const auto& [s, v] : out.values) mean += v;
    mean /= static_cast<double>(out.values.size());
    for (auto& [s, v] : out.values) v -= mean;
  }
  out.gauge = gauge;
}

}  // namespace

PotentialAssignment fit_potential(const KernelEstimate& kernel, const ViolationKernelSpec& spec,
                                  const FitOptions& opts) {
  validate(spec);
  if (kernel.empty()) throw Error(ErrorCode::EmptyKernel, "kernel has no entries");
  if (!(opts.tolerance > 0.0)) throw Error(ErrorCode::BadConfig, "tolerance must be positive");
  const double cap = resolve_cap(kernel, opts.cap);

  DenseProblem p = detail::build_problem(kernel, opts.denominator);
  const auto n = p.names.size();

  Gauge gauge = opts.gauge.value_or(Gauge{AnchorGauge{default_anchor(kernel)}});
  State reference = std::holds_alternative<AnchorGauge>(gauge) ? std::get<AnchorGauge>(gauge).state
                                                                : default_anchor(kernel);
  auto ref_it = p.index.find(reference);
  if (ref_it == p.index.end()) throw Error(ErrorCode::UnknownState, "anchor '" + reference + "' not in kernel");
  const std::size_t ref = ref_it->second;

  std::vector<bool> touched(n, false);
  for (const auto& e : p.edges) touched[e.from] = touched[e.to] = true;

  std::vector<double> v(n, 0.0);
  std::vector<NodeKind> kind(n, NodeKind::Finite);
  std::vector<bool> free_vars(n);
  for (std::size_t i = 0; i < n; ++i) free_vars[i] = touched[i] && i != ref;

  std::vector<std::vector<std::size_t>> predecessors(n);
  for (const auto& e : p.edges) {
    if (e.from != e.to) predecessors[e.to].push_back(e.from);
  }

  BoxedDescent descent(p, spec, cap, opts.tolerance);
  PotentialAssignment out;
  out.cap = cap;
  std::vector<double>* trace = opts.record_trace ? &out.action_trace : nullptr;

  std::size_t budget = opts.max_iterations;
  BoxedDescent::Outcome res;
  std::vector<double> g;
  for (;;) {
    res = descent.run(v, kind, free_vars, budget, trace);
    out.iterations += res.iterations;
    budget -= std::min(budget, res.iterations);

    // Candidates sit on the upper bound and still want to climb.
    detail::dense_gradient(p, spec, v, kind, g);
    std::vector<bool> candidate(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      candidate[i] = free_vars[i] && v[i] >= cap && g[i] < 0.0;
    }
    // Keep only states fed exclusively by other candidates or divergent states.
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (!candidate[i]) continue;
        for (auto h : predecessors[i]) {
          if (kind[h] != NodeKind::Divergent && !candidate[h]) {
            candidate[i] = false;
            changed = true;
            break;
          }
        }
      }
    }
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (candidate[i]) {
        kind[i] = NodeKind::Divergent;
        free_vars[i] = false;
        any = true;
      }
    }
    if (!any) break;
  }

  {
    // Also rescues a descent that stalled on rounding above the tolerance.
    double s_cur = res.action;
    out.iterations += newton_polish(p, spec, cap, v, kind, free_vars, budget, s_cur, trace);
  }

  detail::dense_gradient(p, spec, v, kind, g);
  std::vector<double> pg(n);
  descent.projected(v, g, free_vars, pg);
  out.grad_norm = max_abs(pg, free_vars);
  out.converged = out.grad_norm <= opts.tolerance;
  out.fit_action = detail::dense_action(p, spec, v, kind);

  for (std::size_t i = 0; i < n; ++i) {
    if (kind[i] == NodeKind::Divergent) {
      out.divergent_high.insert(p.names[i]);
    } else {
      out.values[p.names[i]] = v[i];
    }
  }
  apply_gauge(out, gauge);
  return out;
}

PotentialAssignment solve_extreme_analytic(const KernelEstimate& kernel, const ViolationKernelSpec& spec,
                                           std::optional<State> anchor, Denominator denominator) {
  validate(spec);
  if (kernel.empty()) throw Error(ErrorCode::EmptyKernel, "kernel has no entries");
  DenseProblem p = detail::build_problem(kernel, denominator);
  const auto n = p.names.size();
  const State root_name = anchor.value_or(default_anchor(kernel));
  auto root_it = p.index.find(root_name);
  if (root_it == p.index.end()) throw Error(ErrorCode::UnknownState, "anchor '" + root_name + "' not in kernel");
  const std::size_t root = root_it->second;

  std::vector<std::map<std::size_t, double>> out_prob(n);
  std::vector<std::vector<std::size_t>> predecessors(n);
  std::vector<bool> touched(n, false);
  for (const auto& e : p.edges) {
    touched[e.from] = touched[e.to] = true;
    if (e.from == e.to) continue;
    out_prob[e.from][e.to] = e.prob;
    predecessors[e.to].push_back(e.from);
  }
  auto mutual = [&](std::size_t a, std::size_t b) {
    return out_prob[a].count(b) && out_prob[b].count(a);
  };

  // Walk the tree of mutually measured pairs from the anchor.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> v(n, 0.0);
  std::vector<std::size_t> parent(n, kNone);
  std::vector<bool> finite(n, false);
  finite[root] = true;
  std::queue<std::size_t> queue;
  queue.push(root);
  while (!queue.empty()) {
    auto f = queue.front();
    queue.pop();
    for (const auto& [g, t_gf] : out_prob[f]) {
      if (!mutual(f, g) || g == parent[f]) continue;
      if (finite[g]) {
        throw Error(ErrorCode::NotTreeReducible, "cycle of measured pairs through '" + p.names[g] + "'");
      }
      finite[g] = true;
      parent[g] = f;
      v[g] = v[f] - std::log(t_gf / out_prob[g][f]);
      queue.push(g);
    }
  }
  // One-way flow between two finite states cannot be balanced pairwise.
  for (const auto& e : p.edges) {
    if (e.from != e.to && finite[e.from] && finite[e.to] && !mutual(e.from, e.to)) {
      throw Error(ErrorCode::NotTreeReducible,
                  "one-way transition " + p.names[e.from] + " -> " + p.names[e.to] + " inside the measured tree");
    }
  }

  std::vector<bool> divergent(n, false);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!touched[i] || finite[i] || divergent[i]) continue;
      bool fed_by_divergent_only = std::all_of(predecessors[i].begin(), predecessors[i].end(),
                                               [&](std::size_t h) { return divergent[h]; });
      if (fed_by_divergent_only) {
        divergent[i] = true;
        changed = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (touched[i] && !finite[i] && !divergent[i]) {
      throw Error(ErrorCode::NotTreeReducible, "state '" + p.names[i] + "' is not resolvable");
    }
  }

  PotentialAssignment out;
  out.gauge = AnchorGauge{root_name};
  out.cap = kernel.total_samples >= 2 ? std::log(static_cast<double>(kernel.total_samples))
                                      : std::numeric_limits<double>::infinity();
  std::vector<NodeKind> kind(n, NodeKind::Finite);
  for (std::size_t i = 0; i < n; ++i) {
    if (divergent[i]) {
      kind[i] = NodeKind::Divergent;
      out.divergent_high.insert(p.names[i]);
    } else if (touched[i]) {
      out.values[p.names[i]] = v[i];
    }
  }
  out.fit_action = detail::dense_action(p, spec, v, kind);
  std::vector<double> g;
  detail::dense_gradient(p, spec, v, kind, g);
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = touched[i] && !divergent[i];
  out.grad_norm = max_abs(g, mask);
  return out;
}

PotentialAssignment solve_potential(const KernelEstimate& kernel, const ViolationKernelSpec& spec,
                                    const FitOptions& opts) {
  std::optional<State> anchor;
  if (opts.gauge && std::holds_alternative<AnchorGauge>(*opts.gauge)) {
    anchor = std::get<AnchorGauge>(*opts.gauge).state;
  }
  try {
    auto out = solve_extreme_analytic(kernel, spec, anchor, opts.denominator);
    if (opts.gauge) apply_gauge(out, *opts.gauge);
    return out;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotTreeReducible) throw;
  }
  return fit_potential(kernel, spec, opts);
}

void write_potential_csv(std::ostream& out, const PotentialAssignment& potential, const CountTable& counts,
                         bool full_precision) {
  std::map<State, Count> n_in, n_out;
  for (const auto& [key, n] : counts.counts) {
    if (key.first == key.second) continue;
    n_out[key.first] += n;
    n_in[key.second] += n;
  }
  std::set<State> names;
  for (const auto& [s, v] : potential.values) names.insert(s);
  names.insert(potential.divergent_high.begin(), potential.divergent_high.end());

  out << "state,beta_v,divergent,n_in,n_out\n";
  for (const auto& s : names) {
    const bool div = potential.is_divergent(s);
    const double v = div ? std::numeric_limits<double>::infinity() : potential.values.at(s);
    out << io::csv_line({s, io::format_real(v, full_precision), div ? "true" : "false",
                         std::to_string(n_in[s]), std::to_string(n_out[s])});
  }
}

PotentialAssignment read_potential_csv(std::istream& in) {
  PotentialAssignment out;
  for (const auto& row : io::read_csv(in, {"state", "beta_v", "divergent", "n_in", "n_out"})) {
    if (row[2] == "true") {
      out.divergent_high.insert(row[0]);
    } else if (row[2] == "false") {
      double v = io::parse_real(row[1]);
      if (!std::isfinite(v)) throw Error(ErrorCode::MalformedLine, "non-finite potential for '" + row[0] + "'");
      out.values[row[0]] = v;
    } else {
      throw Error(ErrorCode::MalformedLine, "divergent flag must be true or false, got '" + row[2] + "'");
    }
  }
  return out;
}

}  // namespace balance_lab
