#include "balance_lab/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "balance_lab/diagnostics.hpp"
#include "balance_lab/error.hpp"
#include "balance_lab/io_util.hpp"
#include "balance_lab/potential.hpp"
#include "balance_lab/scorer.hpp"
#include "balance_lab/verifier.hpp"
#include "balance_lab/word_agent.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace balance_lab {

namespace {

std::string kernel_name(KernelKind k) { return k == KernelKind::ExpHalf ? "exp_half" : "softplus"; }

KernelKind parse_kernel_name(const std::string& s) {
  if (s == "exp_half") return KernelKind::ExpHalf;
  if (s == "softplus") return KernelKind::Softplus;
  throw Error(ErrorCode::BadConfig, "violation_kernel must be exp_half or softplus, got '" + s + "'");
}

std::string denominator_name(Denominator d) { return d == Denominator::RowsWithKernel ? "rows" : "all"; }

Denominator parse_denominator(const std::string& s) {
  if (s == "rows") return Denominator::RowsWithKernel;
  if (s == "all") return Denominator::AllStates;
  throw Error(ErrorCode::BadConfig, "denominator must be rows or all, got '" + s + "'");
}

}  // namespace

KernelPolicy RunConfig::policy() const {
  if (kernel_policy == "row") return RowNormalized{min_row_count};
  return parse_policy(kernel_policy);
}

std::string RunConfig::to_json() const {
  ojson j;
  j["beta"] = beta;
  j["kernel_policy"] = to_string(policy());
  j["violation_kernel"] = kernel_name(violation_kernel);
  j["denominator"] = denominator_name(denominator);
  j["cap"] = cap ? ojson(*cap) : ojson(nullptr);
  j["min_row_count"] = min_row_count;
  j["triplet_min_count"] = triplet_min_count;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["max_iterations"] = max_iterations;
  j["min_samples"] = min_samples;
  j["bucket_width"] = bucket_width;
  j["anchor"] = anchor ? ojson(*anchor) : ojson(nullptr);
  j["gauge"] = mean_zero ? "mean" : "anchor";
  return j.dump(2) + "\n";
}

void apply_config_json(RunConfig& cfg, const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadConfig, "config must be a JSON object");
  auto need = [](const nlohmann::json& v, bool ok, const std::string& key, const char* what) {
    if (!ok) throw Error(ErrorCode::BadConfig, "config key '" + key + "' must be " + what);
    (void)v;
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "beta") {
      need(v, v.is_number(), key, "a number");
      cfg.beta = v.get<double>();
    } else if (key == "kernel_policy") {
      need(v, v.is_string(), key, "a string");
      cfg.kernel_policy = v.get<std::string>();
    } else if (key == "violation_kernel") {
      need(v, v.is_string(), key, "a string");
      cfg.violation_kernel = parse_kernel_name(v.get<std::string>());
    } else if (key == "denominator") {
      need(v, v.is_string(), key, "a string");
      cfg.denominator = parse_denominator(v.get<std::string>());
    } else if (key == "cap") {
      need(v, v.is_number() || v.is_null(), key, "a number or null");
      cfg.cap = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    } else if (key == "min_row_count") {
      need(v, v.is_number_integer(), key, "an integer");
      cfg.min_row_count = v.get<Count>();
    } else if (key == "triplet_min_count") {
      need(v, v.is_number_integer(), key, "an integer");
      cfg.triplet_min_count = v.get<Count>();
    } else if (key == "seed") {
      need(v, v.is_number_unsigned(), key, "a nonnegative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "tolerance") {
      need(v, v.is_number(), key, "a number");
      cfg.tolerance = v.get<double>();
    } else if (key == "max_iterations") {
      need(v, v.is_number_unsigned(), key, "a nonnegative integer");
      cfg.max_iterations = v.get<std::size_t>();
    } else if (key == "min_samples") {
      need(v, v.is_number_integer(), key, "an integer");
      cfg.min_samples = v.get<Count>();
    } else if (key == "bucket_width") {
      need(v, v.is_number(), key, "a number");
      cfg.bucket_width = v.get<double>();
    } else if (key == "anchor") {
      need(v, v.is_string() || v.is_null(), key, "a string or null");
      cfg.anchor = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
    } else if (key == "gauge") {
      need(v, v.is_string() && (v == "anchor" || v == "mean"), key, "\"anchor\" or \"mean\"");
      cfg.mean_zero = v == "mean";
    } else {
      throw Error(ErrorCode::BadConfig, "unknown config key '" + key + "'");
    }
  }
}

namespace {

struct Overrides {
  std::optional<double> beta, cap, tolerance, bucket_width;
  std::optional<std::string> policy, kernel, denominator, anchor, gauge;
  std::optional<Count> min_row_count, triplet_min_count, min_samples;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_iterations;
};

struct Globals {
  std::optional<std::string> config;
  std::optional<std::string> resolved_config;
  bool full_precision = false;
  bool deterministic = false;
};

void add_policy_opts(CLI::App* c, Overrides& o) {
  c->add_option("--policy", o.policy, "Kernel policy: fixed:<N>, row[:<min>], attempts");
  c->add_option("--min-row-count", o.min_row_count, "Row threshold for the row policy");
}

void add_fit_opts(CLI::App* c, Overrides& o) {
  c->add_option("--kernel", o.kernel, "Violation kernel")->check(CLI::IsMember({"exp_half", "softplus"}));
  c->add_option("--beta", o.beta, "Inverse temperature applied inside K");
  c->add_option("--denominator", o.denominator, "Action denominator")->check(CLI::IsMember({"rows", "all"}));
  c->add_option("--cap", o.cap, "Potential box half-width (default log of total samples)");
  c->add_option("--anchor", o.anchor, "Reference state pinned at 0");
  c->add_option("--gauge", o.gauge, "Gauge fixing")->check(CLI::IsMember({"anchor", "mean"}));
  c->add_option("--tolerance", o.tolerance, "Projected-gradient stopping tolerance");
  c->add_option("--max-iterations", o.max_iterations, "Iteration budget");
}

RunConfig resolve(const Globals& g, const Overrides& o) {
  RunConfig cfg;
  if (g.config) {
    apply_config_json(cfg, io::read_file(*g.config));
  } else if (fs::exists("balance-lab.json")) {
    apply_config_json(cfg, io::read_file("balance-lab.json"));
  }
  if (o.beta) cfg.beta = *o.beta;
  if (o.cap) cfg.cap = *o.cap;
  if (o.tolerance) cfg.tolerance = *o.tolerance;
  if (o.bucket_width) cfg.bucket_width = *o.bucket_width;
  if (o.policy) cfg.kernel_policy = *o.policy;
  if (o.kernel) cfg.violation_kernel = parse_kernel_name(*o.kernel);
  if (o.denominator) cfg.denominator = parse_denominator(*o.denominator);
  if (o.anchor) cfg.anchor = *o.anchor;
  if (o.gauge) cfg.mean_zero = *o.gauge == "mean";
  if (o.min_row_count) cfg.min_row_count = *o.min_row_count;
  if (o.triplet_min_count) cfg.triplet_min_count = *o.triplet_min_count;
  if (o.min_samples) cfg.min_samples = *o.min_samples;
  if (o.seed) cfg.seed = *o.seed;
  if (o.max_iterations) cfg.max_iterations = *o.max_iterations;
  if (!(cfg.beta > 0.0)) throw Error(ErrorCode::BadConfig, "beta must be positive");
  if (!(cfg.tolerance > 0.0)) throw Error(ErrorCode::BadConfig, "tolerance must be positive");
  if (!(cfg.bucket_width > 0.0)) throw Error(ErrorCode::BadConfig, "bucket_width must be positive");
  if (cfg.cap && !(*cfg.cap > 0.0)) throw Error(ErrorCode::BadConfig, "cap must be positive");
  if (cfg.triplet_min_count < 1) throw Error(ErrorCode::BadConfig, "triplet_min_count must be at least 1");
  if (cfg.min_samples < 0) throw Error(ErrorCode::BadConfig, "min_samples must be nonnegative");
  cfg.policy();  // reject a malformed policy string early
  return cfg;
}

class Ctx {
 public:
  Ctx(const Globals& g, std::ostream& out, std::ostream& err) : g_(g), out_(out), err_(err) {}

  bool full() const { return g_.full_precision; }
  bool deterministic() const { return g_.deterministic; }
  std::ostream& out() { return out_; }

  ojson num(double v) const {
    if (!std::isfinite(v)) return v > 0 ? ojson("inf") : v < 0 ? ojson("-inf") : ojson(nullptr);
    return io::parse_real(io::format_real(v, g_.full_precision));
  }

  // Primary artifact: a file when a path is given, stdout otherwise.
  void emit(const std::optional<std::string>& path, const std::string& content) {
    if (path) {
      io::write_file_atomic(*path, content);
    } else {
      out_ << content;
    }
  }

  void summary(const ojson& j) { out_ << j.dump() << "\n"; }

  void warn(std::string_view code, const std::string& message) {
    ojson j;
    j["warning"] = code;
    j["message"] = message;
    err_ << j.dump() << "\n";
  }

 private:
  const Globals& g_;
  std::ostream& out_;
  std::ostream& err_;
};

CountTable load_counts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return read_counts_csv(in);
}

PotentialAssignment load_potential(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return read_potential_csv(in);
}

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

FitOptions fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.tolerance = cfg.tolerance;
  o.max_iterations = cfg.max_iterations;
  o.cap = cfg.cap;
  o.denominator = cfg.denominator;
  if (cfg.mean_zero) {
    o.gauge = MeanZeroGauge{};
  } else if (cfg.anchor) {
    o.gauge = AnchorGauge{*cfg.anchor};
  }
  return o;
}

PotentialAssignment run_fit(Ctx& ctx, const KernelEstimate& kernel, const RunConfig& cfg, const std::string& method) {
  const auto opts = fit_options(cfg);
  PotentialAssignment v;
  if (method == "analytic") {
    v = solve_extreme_analytic(kernel, cfg.kernel_spec(), cfg.anchor, cfg.denominator);
    if (cfg.mean_zero) {
      double mean = 0.0;
      for (const auto& [s, x] : v.values) mean += x;
      if (!v.values.empty()) mean /= static_cast<double>(v.values.size());
      for (auto& [s, x] : v.values) x -= mean;
      v.gauge = MeanZeroGauge{};
    }
  } else if (method == "auto") {
    v = solve_potential(kernel, cfg.kernel_spec(), opts);
  } else {
    v = fit_potential(kernel, cfg.kernel_spec(), opts);
  }
  if (!v.converged) {
    ctx.warn(to_string(ErrorCode::NoConvergence),
             "stopped after " + std::to_string(v.iterations) + " iterations, projected gradient " +
                 io::format_real(v.grad_norm, true));
  }
  return v;
}

ojson fit_summary(Ctx& ctx, const PotentialAssignment& v) {
  ojson j;
  j["action"] = ctx.num(v.fit_action);
  j["converged"] = v.converged;
  j["iterations"] = v.iterations;
  j["grad_norm"] = ctx.num(v.grad_norm);
  j["cap"] = ctx.num(v.cap);
  j["finite_states"] = v.values.size();
  j["divergent"] = v.divergent_high;
  return j;
}

ojson pairs_summary(Ctx& ctx, const std::vector<PairRecord>& pairs) {
  ojson j;
  j["n_pairs"] = pairs.size();
  j["fraction_within_3sigma"] = ctx.num(fraction_pairs_within(pairs, 3.0));
  try {
    const auto fit = regress_pairs(pairs);
    j["slope"] = ctx.num(fit.slope);
    j["intercept"] = ctx.num(fit.intercept);
  } catch (const Error&) {
    j["slope"] = nullptr;
    j["intercept"] = nullptr;
  }
  return j;
}

ojson bounds_summary(Ctx& ctx, const BoundSummary& s) {
  ojson j;
  j["n"] = s.n;
  j["fraction_satisfied"] = ctx.num(s.fraction_satisfied);
  j["buckets"] = ojson::array();
  for (const auto& b : s.buckets) {
    ojson e;
    e["lower"] = ctx.num(b.lower);
    e["n"] = b.n;
    e["p90_delta"] = ctx.num(b.p90_delta);
    j["buckets"].push_back(e);
  }
  return j;
}

std::vector<TripletRecord> loop_records(const CountTable& counts, const KernelEstimate& kernel, Count min_count) {
  std::vector<TripletRecord> out;
  for (const auto& t : enumerate_triplets(counts, min_count)) out.push_back(loop_sum(t, counts, kernel));
  return out;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detailed-balance analysis of agent transition logs", "balance-lab"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  Overrides o;
  app.add_option("--config", g.config, "JSON config file (default: ./balance-lab.json when present)")
      ->check(CLI::ExistingFile);
  app.add_option("--resolved-config", g.resolved_config, "Also write the effective config to this path");
  app.add_flag("--full-precision", g.full_precision, "Print reals with 17 significant digits");
  app.add_flag("--deterministic", g.deterministic, "Suppress timestamps in outputs");

  std::optional<std::string> out_path, counts_path, potential_path, log_path;
  std::string method = "numeric";
  double n_sigma = 3.0;

  auto* ingest = app.add_subcommand("ingest", "Parse a JSON-lines transition log into a count table");
  ingest->add_option("--log", log_path, "Transition log")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out_path, "Counts CSV (stdout when omitted)");

  auto* estimate = app.add_subcommand("estimate", "Estimate the transition kernel from counts");
  estimate->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  add_policy_opts(estimate, o);
  estimate->add_option("--out", out_path, "Kernel CSV (stdout when omitted)");

  auto* fit = app.add_subcommand("fit", "Fit the least-action potential");
  fit->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  add_policy_opts(fit, o);
  add_fit_opts(fit, o);
  fit->add_option("--method", method, "numeric, analytic, or auto (analytic with numeric fallback)")
      ->check(CLI::IsMember({"numeric", "analytic", "auto"}));
  fit->add_option("--out", out_path, "Potential CSV (stdout when omitted)");

  auto* vpairs = app.add_subcommand("verify-pairs", "Pairwise log-ratio against potential difference");
  vpairs->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  vpairs->add_option("--potential", potential_path, "Potential CSV")->required()->check(CLI::ExistingFile);
  add_policy_opts(vpairs, o);
  vpairs->add_option("--n-sigma", n_sigma, "Agreement band in standard errors");
  vpairs->add_option("--out", out_path, "Pairs CSV");

  auto* vloops = app.add_subcommand("verify-loops", "Triplet loop test");
  vloops->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  add_policy_opts(vloops, o);
  vloops->add_option("--triplet-min-count", o.triplet_min_count, "Minimum count on each of the six edges");
  vloops->add_option("--n-sigma", n_sigma, "Agreement band in standard errors");
  vloops->add_option("--out", out_path, "Triplets CSV");

  auto* vbounds = app.add_subcommand("verify-bounds", "One-sided bounds for single-direction pairs");
  vbounds->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  vbounds->add_option("--potential", potential_path, "Potential CSV")->required()->check(CLI::ExistingFile);
  vbounds->add_option("--bucket-width", o.bucket_width, "Width of the bound_log buckets");
  vbounds->add_option("--out", out_path, "Bounds CSV");

  auto* density = app.add_subcommand("density", "Gaussian fit of fitted potentials and expected action");
  density->add_option("--counts", counts_path, "Counts CSV")->required()->check(CLI::ExistingFile);
  density->add_option("--potential", potential_path, "Potential CSV")->required()->check(CLI::ExistingFile);
  density->add_option("--min-samples", o.min_samples, "Minimum attempts for a state to be included");
  density->add_option("--out", out_path, "Density JSON (stdout when omitted)");

  double sigma = 0.0;
  auto* expected = app.add_subcommand("expected-action", "Expected minimum action of a Gaussian potential density");
  expected->add_option("--sigma", sigma, "Standard deviation of the potential density")->required();

  double vote_t = 0.0;
  std::optional<double> vote_t_rev;
  int vote_m = 1, vote_n = 1;
  auto* vote = app.add_subcommand("vote", "Majority-vote kernel transform");
  vote->add_option("--t", vote_t, "Transition probability")->required();
  vote->add_option("--t-reverse", vote_t_rev, "Reverse probability for the power-law check");
  vote->add_option("-M,--candidates", vote_m, "Candidates per step")->required();
  vote->add_option("-n,--threshold", vote_n, "Votes needed to accept")->required();

  std::string seed_word;
  Count n_samples = 0;
  int concurrency = 1;
  std::optional<std::string> table_path, proposals_path, wordlist_path, endpoint;
  RemoteHttp remote;
  std::string run_prefix = "run";
  auto* sim = app.add_subcommand("simulate-words", "Run the word agent and write a transition log");
  sim->add_option("--seed-word", seed_word, "Starting prompt word")->required();
  sim->add_option("--samples", n_samples, "Number of generation attempts")->required();
  sim->add_option("--concurrency", concurrency, "Independent chains");
  sim->add_option("--out", out_path, "Transition log (JSON lines)")->required();
  sim->add_option("--potential-table", table_path, "JSON object word -> potential (scripted generator)")
      ->check(CLI::ExistingFile);
  sim->add_option("--proposals", proposals_path, "Proposal words, one per line (default: table keys)")
      ->check(CLI::ExistingFile);
  sim->add_option("--seed", o.seed, "RNG seed for the scripted generator");
  sim->add_option("--endpoint", endpoint, "Remote generator URL");
  sim->add_option("--model", remote.model_name, "Model name sent to the remote generator");
  sim->add_option("--timeout", remote.timeout_s, "Per-request timeout in seconds");
  sim->add_option("--max-retries", remote.max_retries, "Retries per request");
  sim->add_option("--backoff", remote.initial_backoff_s, "Initial retry delay in seconds");
  sim->add_option("--prompt-template", remote.prompt_template, "Prompt text; {word} is replaced");
  sim->add_option("--wordlist", wordlist_path, "Accepted words, one per line")->check(CLI::ExistingFile);
  sim->add_option("--run-prefix", run_prefix, "Run id prefix");
  sim->get_option("--potential-table")->excludes("--endpoint");

  std::optional<std::string> in_path, params_path;
  double dir_threshold = 0.05;
  auto* scorer = app.add_subcommand("score-expressions", "Score expression strings");
  scorer->add_option("--in", in_path, "Expressions, one per line")->required()->check(CLI::ExistingFile);
  scorer->add_option("--params", params_path, "Parameter JSON")->check(CLI::ExistingFile);
  scorer->add_option("--counts", counts_path, "Counts over expression states for the directionality report")
      ->check(CLI::ExistingFile);
  add_policy_opts(scorer, o);
  scorer->add_option("--threshold", dir_threshold, "Kernel threshold for the directionality report");
  scorer->add_option("--out", out_path, "Scores CSV (stdout when omitted)");

  std::string out_dir;
  auto* report = app.add_subcommand("report", "estimate, fit, verify and density into one directory");
  auto* rep_counts = report->add_option("--counts", counts_path, "Counts CSV")->check(CLI::ExistingFile);
  auto* rep_log = report->add_option("--log", log_path, "Transition log")->check(CLI::ExistingFile);
  rep_counts->excludes(rep_log);
  add_policy_opts(report, o);
  add_fit_opts(report, o);
  report->add_option("--method", method, "numeric, analytic, or auto")
      ->check(CLI::IsMember({"numeric", "analytic", "auto"}));
  report->add_option("--triplet-min-count", o.triplet_min_count, "Minimum count on each of the six edges");
  report->add_option("--bucket-width", o.bucket_width, "Width of the bound_log buckets");
  report->add_option("--min-samples", o.min_samples, "Minimum attempts for the density fit");
  report->add_option("--out-dir", out_dir, "Output directory")->required();

  std::vector<const char*> argv{"balance-lab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (*sim && !table_path && !endpoint) {
      throw CLI::ValidationError("simulate-words", "one of --potential-table or --endpoint is required");
    }
    if (*report && !counts_path && !log_path) {
      throw CLI::ValidationError("report", "one of --counts or --log is required");
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    ojson j;
    j["error"] = "USAGE";
    j["message"] = e.what();
    err << j.dump() << "\n";
    err << app.help();
    return 2;
  }

  Ctx ctx(g, out, err);
  try {
    const RunConfig cfg = resolve(g, o);
    if (g.resolved_config) io::write_file_atomic(*g.resolved_config, cfg.to_json());

    if (*ingest) {
      std::ifstream in(*log_path);
      if (!in) throw Error(ErrorCode::Io, "cannot open " + *log_path);
      const auto log = parse_transition_log(in);
      for (const auto& issue : log.rejected) {
        const char* kind = issue.kind == LineIssueKind::MalformedLine  ? "MALFORMED_LINE"
                           : issue.kind == LineIssueKind::MissingField ? "MISSING_FIELD"
                                                                       : "INVALID_FIELD";
        ctx.warn(kind, "line " + std::to_string(issue.line) + ": " + issue.message);
      }
      const auto counts = count_transitions(log);
      ctx.emit(out_path, render([&](std::ostream& os) { write_counts_csv(os, counts); }));
      if (out_path) {
        const auto st = database_statistics(counts);
        ojson j;
        j["transition_samples"] = st.transition_samples;
        j["unique_states"] = st.unique_states;
        j["unique_transitions"] = st.unique_transitions;
        j["states_sampled_more_than_once"] = st.states_sampled_more_than_once;
        j["rejected_lines"] = log.rejected.size();
        ctx.summary(j);
      }
    } else if (*estimate) {
      const auto kernel = estimate_kernel(load_counts(*counts_path), cfg.policy());
      ctx.emit(out_path, render([&](std::ostream& os) { write_kernel_csv(os, kernel, ctx.full()); }));
    } else if (*fit) {
      const auto counts = load_counts(*counts_path);
      const auto kernel = estimate_kernel(counts, cfg.policy());
      const auto v = run_fit(ctx, kernel, cfg, method);
      ctx.emit(out_path, render([&](std::ostream& os) { write_potential_csv(os, v, counts, ctx.full()); }));
      if (out_path) ctx.summary(fit_summary(ctx, v));
    } else if (*vpairs) {
      const auto counts = load_counts(*counts_path);
      const auto kernel = estimate_kernel(counts, cfg.policy());
      const auto pairs = pairwise_balance_report(counts, kernel, load_potential(*potential_path));
      if (out_path) io::write_file_atomic(*out_path, render([&](std::ostream& os) {
                                            write_pairs_csv(os, pairs, ctx.full());
                                          }));
      auto j = pairs_summary(ctx, pairs);
      j["fraction_within"] = ctx.num(fraction_pairs_within(pairs, n_sigma));
      ctx.summary(j);
    } else if (*vloops) {
      const auto counts = load_counts(*counts_path);
      const auto kernel = estimate_kernel(counts, cfg.policy());
      const auto loops = loop_records(counts, kernel, cfg.triplet_min_count);
      if (out_path) io::write_file_atomic(*out_path, render([&](std::ostream& os) {
                                            write_triplets_csv(os, loops, ctx.full());
                                          }));
      ojson j;
      j["n_triplets"] = loops.size();
      j["fraction_within"] = ctx.num(fraction_loops_within(loops, n_sigma));
      ctx.summary(j);
    } else if (*vbounds) {
      const auto counts = load_counts(*counts_path);
      const auto bounds = one_sided_bound_report(counts, load_potential(*potential_path));
      if (out_path) io::write_file_atomic(*out_path, render([&](std::ostream& os) {
                                            write_bounds_csv(os, bounds, ctx.full());
                                          }));
      ctx.summary(bounds_summary(ctx, summarize_bounds(bounds, cfg.bucket_width)));
    } else if (*density) {
      const auto fitd = fit_gaussian_potential_density(load_potential(*potential_path), load_counts(*counts_path),
                                                       cfg.min_samples);
      ctx.emit(out_path, density_report_json(fitd, expected_min_action(fitd.sigma), ctx.full()));
    } else if (*expected) {
      const auto e = expected_min_action(sigma);
      ojson j;
      j["sigma"] = ctx.num(sigma);
      j["exact"] = ctx.num(e.exact);
      j["approx"] = ctx.num(e.approx);
      ctx.summary(j);
    } else if (*vote) {
      const VoteConfig vc{vote_m, vote_n};
      ojson j;
      j["t"] = ctx.num(vote_t);
      j["transform"] = ctx.num(vote_transform(vote_t, vc));
      if (vote_t_rev) {
        const auto r = vote_ratio_check(vote_t, *vote_t_rev, vc);
        j["t_reverse"] = ctx.num(*vote_t_rev);
        j["lhs"] = ctx.num(r.lhs);
        j["rhs"] = ctx.num(r.rhs);
      }
      ctx.summary(j);
    } else if (*sim) {
      GeneratorBinding binding;
      if (table_path) {
        ScriptedMetropolis s;
        auto j = nlohmann::json::parse(io::read_file(*table_path), nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadConfig, "potential table must be a JSON object");
        for (const auto& [word, v] : j.items()) {
          if (!v.is_number()) throw Error(ErrorCode::BadConfig, "potential of " + word + " must be a number");
          s.potential[word] = v.get<double>();
        }
        if (proposals_path) {
          for (auto& w : read_lines(*proposals_path)) {
            if (!w.empty()) s.proposals.push_back(w);
          }
        } else {
          for (const auto& [word, v] : s.potential) s.proposals.push_back(word);
        }
        s.seed = cfg.seed;
        binding = std::move(s);
      } else {
        remote.endpoint = *endpoint;
        binding = remote;
      }
      std::set<State> wordlist;
      if (wordlist_path) {
        std::ifstream in(*wordlist_path);
        wordlist = read_wordlist(in);
      }

      const fs::path target(*out_path);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
      std::ofstream log(tmp, std::ios::binary | std::ios::trunc);
      if (!log) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
      SamplingOptions so;
      so.n_samples = n_samples;
      so.concurrency = concurrency;
      so.run_prefix = run_prefix;
      so.wordlist = wordlist_path ? &wordlist : nullptr;
      so.timestamps = !ctx.deterministic();
      so.sink = [&](const TransitionEvent& ev) { log << to_json_line(ev) << '\n' << std::flush; };
      auto finish = [&] {
        log.close();
        fs::rename(tmp, target);
      };
      TransitionLog result;
      try {
        result = run_sampling(binding, seed_word, so);
      } catch (const SamplingAborted&) {
        finish();
        throw;
      } catch (...) {
        log.close();
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
      }
      finish();
      std::size_t escapes = 0;
      for (const auto& ev : result.events) escapes += ev.is_escape();
      ojson j;
      j["events"] = result.events.size();
      j["escapes"] = escapes;
      ctx.summary(j);
    } else if (*scorer) {
      ScorerParams params;
      if (params_path) params = load_scorer_params(io::read_file(*params_path));
      const auto lines = read_lines(*in_path);
      ctx.emit(out_path, render([&](std::ostream& os) {
                 os << "expression,score\n";
                 for (const auto& s : lines) os << io::csv_line({s, io::format_real(score(s, params), ctx.full())});
               }));
      if (counts_path) {
        const auto kernel = estimate_kernel(load_counts(*counts_path), cfg.policy());
        const auto r = directionality_report(kernel, params, dir_threshold);
        ojson j;
        j["n_down"] = r.n_down;
        j["n_up"] = r.n_up;
        j["n_flat"] = r.n_flat;
        j["frac_down"] = ctx.num(r.frac_down);
        j["frac_up"] = ctx.num(r.frac_up);
        j["frac_flat"] = ctx.num(r.frac_flat);
        if (out_path) {
          ctx.summary(j);
        } else {
          err << j.dump() << "\n";
        }
      }
    } else if (*report) {
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      CountTable counts;
      if (log_path) {
        std::ifstream in(*log_path);
        if (!in) throw Error(ErrorCode::Io, "cannot open " + *log_path);
        const auto log = parse_transition_log(in);
        for (const auto& issue : log.rejected) {
          ctx.warn("REJECTED_LINE", "line " + std::to_string(issue.line) + ": " + issue.message);
        }
        counts = count_transitions(log);
        io::write_file_atomic(dir / "counts.csv", render([&](std::ostream& os) { write_counts_csv(os, counts); }));
      } else {
        counts = load_counts(*counts_path);
      }
      const auto kernel = estimate_kernel(counts, cfg.policy());
      io::write_file_atomic(dir / "kernel.csv", render([&](std::ostream& os) { write_kernel_csv(os, kernel, ctx.full()); }));
      const auto v = run_fit(ctx, kernel, cfg, method);
      io::write_file_atomic(dir / "potential.csv",
                            render([&](std::ostream& os) { write_potential_csv(os, v, counts, ctx.full()); }));
      const auto pairs = pairwise_balance_report(counts, kernel, v);
      io::write_file_atomic(dir / "pairs.csv", render([&](std::ostream& os) { write_pairs_csv(os, pairs, ctx.full()); }));
      const auto loops = loop_records(counts, kernel, cfg.triplet_min_count);
      io::write_file_atomic(dir / "triplets.csv",
                            render([&](std::ostream& os) { write_triplets_csv(os, loops, ctx.full()); }));
      const auto bounds = one_sided_bound_report(counts, v);
      io::write_file_atomic(dir / "bounds.csv", render([&](std::ostream& os) { write_bounds_csv(os, bounds, ctx.full()); }));

      ojson summary;
      const auto st = database_statistics(counts);
      summary["transition_samples"] = st.transition_samples;
      summary["unique_states"] = st.unique_states;
      summary["unique_transitions"] = st.unique_transitions;
      summary["states_sampled_more_than_once"] = st.states_sampled_more_than_once;
      summary["fit"] = fit_summary(ctx, v);
      summary["pairs"] = pairs_summary(ctx, pairs);
      ojson lj;
      lj["n_triplets"] = loops.size();
      lj["fraction_within_3sigma"] = ctx.num(fraction_loops_within(loops, 3.0));
      summary["loops"] = lj;
      summary["bounds"] = bounds_summary(ctx, summarize_bounds(bounds, cfg.bucket_width));
      try {
        const auto d = fit_gaussian_potential_density(v, counts, cfg.min_samples);
        const auto e = expected_min_action(d.sigma);
        io::write_file_atomic(dir / "density.json", density_report_json(d, e, ctx.full()));
        summary["density"] = nlohmann::ordered_json::parse(density_report_json(d, e, ctx.full()));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TooFewStates) throw;
        ctx.warn(to_string(e.code()), std::string("density skipped: ") + e.what());
        summary["density"] = nullptr;
      }
      if (!ctx.deterministic()) summary["generated_at"] = utc_now();
      io::write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
      io::write_file_atomic(dir / "config.resolved.json", cfg.to_json());
      ctx.summary(summary["fit"]);
    }
  } catch (const Error& e) {
    ojson j;
    j["error"] = to_string(e.code());
    j["message"] = e.what();
    err << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    ojson j;
    j["error"] = to_string(ErrorCode::Io);
    j["message"] = e.what();
    err << j.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace balance_lab
