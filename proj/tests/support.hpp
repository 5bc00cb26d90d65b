#pragma once

#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "balance_lab/ledger.hpp"
#include "balance_lab/potential_assignment.hpp"
#include "balance_lab/word_agent.hpp"

namespace testing {

using balance_lab::Count;
using balance_lab::CountTable;
using balance_lab::KernelEstimate;
using balance_lab::State;

inline const std::string kEsc{balance_lab::kEscape};

// (from, to, count); to == kEsc records escapes.
inline CountTable make_counts(std::initializer_list<std::tuple<State, State, Count>> rows) {
  CountTable t;
  for (const auto& [f, g, n] : rows) {
    if (g == kEsc) {
      t.escapes[f] += n;
    } else {
      t.counts[{f, g}] += n;
    }
    t.attempts[f] += n;
  }
  return t;
}

// Metropolis-style kernel over every ordered pair: T(g <- f) = min(1, exp(V(f) - V(g))) / n.
// The log-ratio of each pair equals V(f) - V(g) exactly up to rounding.
inline KernelEstimate exact_balance_kernel(const std::map<State, double>& v, Count total_samples = 100000) {
  KernelEstimate k;
  const double n = static_cast<double>(v.size());
  for (const auto& [f, vf] : v) {
    k.states.insert(f);
    for (const auto& [g, vg] : v) {
      if (f == g) continue;
      k.probs[{f, g}] = std::min(1.0, std::exp(vf - vg)) / n;
      k.std_error[{f, g}] = 0.0;
    }
  }
  k.policy = balance_lab::AttemptNormalized{};
  k.total_samples = total_samples;
  return k;
}

inline balance_lab::PotentialAssignment finite(const std::map<State, double>& v) {
  balance_lab::PotentialAssignment p;
  p.values = v;
  return p;
}

inline std::vector<State> state_names(std::size_t n) {
  std::vector<State> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s = "S";
    if (i < 10) s += "0";
    out.push_back(s + std::to_string(i));
  }
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("balance_lab_test_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Seeded Metropolis walk over word states with uniform proposals over the
// whole set; a proposal of the current word counts as an escape.
inline CountTable metropolis_counts(const std::map<State, double>& v, Count n, std::uint64_t seed) {
  balance_lab::ScriptedMetropolis m;
  m.potential = v;
  for (const auto& [s, x] : v) m.proposals.push_back(s);
  m.seed = seed;
  balance_lab::SamplingOptions o;
  o.n_samples = n;
  return balance_lab::count_transitions(balance_lab::run_sampling(m, v.begin()->first, o));
}

inline std::string data_file(const std::string& name) { return std::string(BALANCE_LAB_DATA_DIR) + "/" + name; }

}  // namespace testing
