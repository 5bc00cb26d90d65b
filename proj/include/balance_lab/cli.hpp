#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "balance_lab/action.hpp"
#include "balance_lab/ledger.hpp"

namespace balance_lab {

/// Effective settings of one command: flags > config file > defaults.
struct RunConfig {
  double beta = 1.0;
  std::string kernel_policy = "row";
  KernelKind violation_kernel = KernelKind::ExpHalf;
  Denominator denominator = Denominator::RowsWithKernel;
  std::optional<double> cap;
  Count min_row_count = 2;
  Count triplet_min_count = 2;
  std::uint64_t seed = 0;
  double tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  Count min_samples = 2;
  double bucket_width = 1.0;
  std::optional<std::string> anchor;
  bool mean_zero = false;

  /// Resolves "row" through min_row_count.
  KernelPolicy policy() const;
  ViolationKernelSpec kernel_spec() const { return {violation_kernel, beta}; }
  std::string to_json() const;
};

/// Overlays the keys of a `balance-lab.json` document on `cfg`.
/// Throws Error(BadConfig) on unknown keys or wrong types.
void apply_config_json(RunConfig& cfg, const std::string& json_text);

/// `args` excludes the program name. Returns 0 on success, 1 on a domain
/// error (one JSON line on `err`), 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace balance_lab
