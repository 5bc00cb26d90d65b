#include "balance_lab/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "balance_lab/error.hpp"
#include "balance_lab/io_util.hpp"

namespace balance_lab {

std::vector<PairRecord> pairwise_balance_report(const CountTable& counts, const KernelEstimate& kernel,
                                                const PotentialAssignment& potential) {
  const double limit = kernel.total_samples >= 2 ? std::log(static_cast<double>(kernel.total_samples))
                                                 : std::numeric_limits<double>::infinity();
  std::vector<PairRecord> out;
  for (const auto& [key, t_gf] : kernel.probs) {
    const auto& [f, g] = key;
    if (!(f < g)) continue;
    const double t_fg = kernel.prob(g, f);
    if (t_fg <= 0.0 || t_gf <= 0.0) continue;
    auto vf = potential.values.find(f);
    auto vg = potential.values.find(g);
    if (vf == potential.values.end() || vg == potential.values.end()) continue;
    const double delta = vf->second - vg->second;
    if (std::abs(delta) > limit) continue;
    const auto n_gf = counts.count(f, g);
    const auto n_fg = counts.count(g, f);
    if (n_gf == 0 || n_fg == 0) continue;
    out.push_back({f, g, delta, std::log(t_gf / t_fg),
                   std::sqrt(1.0 / static_cast<double>(n_gf) + 1.0 / static_cast<double>(n_fg))});
  }
  return out;
}

LineFit regress_pairs(const std::vector<PairRecord>& records) {
  if (records.size() < 2) throw Error(ErrorCode::TooFewStates, "regression needs at least two pairs");
  double mx = 0.0, my = 0.0;
  for (const auto& r : records) {
    mx += r.delta_beta_v;
    my += r.log_ratio;
  }
  const double n = static_cast<double>(records.size());
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& r : records) {
    sxx += (r.delta_beta_v - mx) * (r.delta_beta_v - mx);
    sxy += (r.delta_beta_v - mx) * (r.log_ratio - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::DivideByZero, "regression: all potential differences are equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

double fraction_pairs_within(const std::vector<PairRecord>& records, double n_sigma) {
  if (records.empty()) return 0.0;
  auto ok = std::count_if(records.begin(), records.end(), [&](const PairRecord& r) {
    return std::abs(r.delta_beta_v - r.log_ratio) < n_sigma * r.std_error;
  });
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<Triplet> enumerate_triplets(const CountTable& counts, Count min_count) {
  if (min_count < 1) throw Error(ErrorCode::BadConfig, "triplet min_count must be at least 1");
  // Undirected neighbours (larger names only) where both directions reach min_count.
  std::map<State, std::set<State>> up;
  for (const auto& [key, n] : counts.counts) {
    const auto& [a, b] = key;
    if (!(a < b) || n < min_count) continue;
    if (counts.count(b, a) >= min_count) up[a].insert(b);
  }
  std::vector<Triplet> out;
  for (const auto& [a, nbrs] : up) {
    for (auto it = nbrs.begin(); it != nbrs.end(); ++it) {
      auto b_up = up.find(*it);
      if (b_up == up.end()) continue;
      for (auto jt = std::next(it); jt != nbrs.end(); ++jt) {
        if (b_up->second.count(*jt)) out.push_back({a, *it, *jt});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

TripletRecord loop_sum(const Triplet& t, const CountTable& counts, const KernelEstimate& kernel) {
  auto log_t = [&](const State& from, const State& to) {
    const double p = kernel.prob(from, to);
    if (p <= 0.0) throw Error(ErrorCode::UnknownState, "kernel has no entry " + from + " -> " + to);
    return std::log(p);
  };
  const auto& [f, g, h] = t;
  TripletRecord r;
  r.states = t;
  r.forward_sum = log_t(f, g) + log_t(g, h) + log_t(h, f);
  r.reverse_sum = log_t(f, h) + log_t(h, g) + log_t(g, f);
  double var = 0.0;
  for (const auto& [a, b] : {std::pair{f, g}, {g, h}, {h, f}, {f, h}, {h, g}, {g, f}}) {
    var += 1.0 / static_cast<double>(counts.count(a, b));
  }
  r.std_error = std::sqrt(var);
  return r;
}

double fraction_loops_within(const std::vector<TripletRecord>& records, double n_sigma) {
  if (records.empty()) return 0.0;
  auto ok = std::count_if(records.begin(), records.end(), [&](const TripletRecord& r) {
    return std::abs(r.forward_sum - r.reverse_sum) < n_sigma * r.std_error;
  });
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<BoundRecord> one_sided_bound_report(const CountTable& counts, const PotentialAssignment& potential) {
  std::vector<BoundRecord> out;
  for (const auto& [key, n_fg] : counts.counts) {
    // key is (g, f): the measured transition f <- g.
    const auto& [g, f] = key;
    if (f == g || n_fg == 0 || counts.count(f, g) > 0) continue;
    auto vf = potential.values.find(f);
    auto vg = potential.values.find(g);
    if (vf == potential.values.end() || vg == potential.values.end()) continue;
    const auto n_f = counts.outgoing(f);
    const auto n_g = counts.outgoing(g);
    if (n_f == 0) continue;  // f never sampled: its missing row carries no information
    BoundRecord r;
    r.f = f;
    r.g = g;
    r.delta_beta_v = vf->second - vg->second;
    r.bound_log = std::log((1.0 / static_cast<double>(n_f)) /
                           (static_cast<double>(n_fg) / static_cast<double>(n_g)));
    r.satisfied = r.delta_beta_v >= r.bound_log;
    out.push_back(std::move(r));
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::TooFewStates, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BoundSummary summarize_bounds(const std::vector<BoundRecord>& records, double bucket_width) {
  if (!(bucket_width > 0.0)) throw Error(ErrorCode::BadConfig, "bucket width must be positive");
  BoundSummary s;
  s.n = records.size();
  if (records.empty()) return s;
  std::map<long long, std::vector<double>> by_bucket;
  std::size_t ok = 0;
  for (const auto& r : records) {
    if (r.satisfied) ++ok;
    by_bucket[static_cast<long long>(std::floor(r.bound_log / bucket_width))].push_back(r.delta_beta_v);
  }
  s.fraction_satisfied = static_cast<double>(ok) / static_cast<double>(records.size());
  for (auto& [idx, deltas] : by_bucket) {
    s.buckets.push_back({static_cast<double>(idx) * bucket_width, deltas.size(), percentile(deltas, 0.9)});
  }
  return s;
}

void write_pairs_csv(std::ostream& out, const std::vector<PairRecord>& records, bool full_precision) {
  out << "f,g,delta_beta_v,log_ratio,stderr\n";
  for (const auto& r : records) {
    out << io::csv_line({r.f, r.g, io::format_real(r.delta_beta_v, full_precision),
                         io::format_real(r.log_ratio, full_precision), io::format_real(r.std_error, full_precision)});
  }
}

void write_triplets_csv(std::ostream& out, const std::vector<TripletRecord>& records, bool full_precision) {
  out << "f,g,h,forward,reverse,stderr\n";
  for (const auto& r : records) {
    out << io::csv_line({r.states[0], r.states[1], r.states[2], io::format_real(r.forward_sum, full_precision),
                         io::format_real(r.reverse_sum, full_precision), io::format_real(r.std_error, full_precision)});
  }
}

void write_bounds_csv(std::ostream& out, const std::vector<BoundRecord>& records, bool full_precision) {
  out << "f,g,delta_beta_v,bound_log,satisfied\n";
  for (const auto& r : records) {
    out << io::csv_line({r.f, r.g, io::format_real(r.delta_beta_v, full_precision),
                         io::format_real(r.bound_log, full_precision), r.satisfied ? "true" : "false"});
  }
}

}  // namespace balance_lab
