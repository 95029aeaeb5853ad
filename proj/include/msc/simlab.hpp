#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msc/baselines.hpp"
#include "msc/matops.hpp"
#include "msc/msc_solver.hpp"
#include "msc/panel.hpp"

namespace msc {

enum class Method { kMsc, kPsc, kScul, kRols };

std::string_view method_name(Method method);
// Accepts "msc", "psc", "scul", "rols" (case-insensitive).
Method parse_method(std::string_view text);

struct SimConfig {
  int setting = 2;  // 1: independent AR(1) units, 2: treated = X theta + noise
  int m = 50;
  int n = 400;
  int t0 = 100;
  int t1 = 10;
  int s = 1000;  // nonzeros in theta (setting 2)
  double noise_sd = 0.5;
  double tau = 1.0;
  int replications = 50;
  std::uint64_t seed = 0;
  int burn_in = 200;

  void validate() const;
};

// t_total x n_units matrix of AR(1) paths y_t = 0.1 c_i + 0.9 y_{t-1} + sd * z_t
// with c_i = (i mod 10) + 1, each chain started at c_i and burned in.
// innovation_sd = 0 gives the deterministic fixed point.
Matrix gen_ar1_panel(int n_units, int t_total, std::uint64_t seed, int burn_in,
                     double innovation_sd = 1.0);

struct GeneratedData {
  DesignSplit split;     // y_post already carries the treatment effect
  Matrix true_y0_post;   // T1 x m untreated outcomes
  double true_delta = 0.0;
  Matrix theta;          // true weights (setting 2), empty for setting 1
};

GeneratedData gen_setting(const SimConfig& cfg);

// Seed for replication r of a run with base seed `seed`.
inline std::uint64_t replication_seed(std::uint64_t seed, int replication) {
  return seed ^ static_cast<std::uint64_t>(replication);
}

struct LambdaPolicy {
  enum class Kind { kCv, kFixed, kCorollary };
  Kind kind = Kind::kCv;
  double value = 0.0;  // used by kFixed
};

std::string_view policy_name(LambdaPolicy::Kind kind);
LambdaPolicy::Kind parse_policy(std::string_view text);

// How penalties are chosen for a simulation run.
//
// The policy applies to every penalized method: kFixed uses `value`, kCv runs
// rolling-origin CV once on the first replication's data and reuses the
// winner for all replications, kCorollary uses default_lambda for MSC and CV
// for the baselines. An entry in `overrides` pins that method's penalty
// regardless of policy. ROLS always uses `rols_ridge`.
struct ExperimentOptions {
  std::vector<Method> methods = {Method::kMsc, Method::kPsc, Method::kScul,
                                 Method::kRols};
  LambdaPolicy policy;
  std::map<Method, double> overrides;
  std::vector<double> msc_grid;   // empty: default grids below
  std::vector<double> scul_grid;
  std::vector<double> psc_grid;
  int cv_blocks = 5;
  // Per-unit baselines fit columns independently, so their CV can score a
  // leading subset of treated columns; 0 uses all of them. MSC always uses all.
  int cv_units = 0;
  double rols_ridge = 1.0;
  bool rols_per_unit = false;
  MscConfig msc;           // lambda is filled in per run
  BaselineConfig baseline; // method and lambda are filled in per run
  int threads = 1;         // replications in flight

  void validate() const;
};

// 0.01, 0.02, ..., 0.50.
std::vector<double> default_msc_grid();
// Log-spaced grids scaled to the data of a split.
std::vector<double> default_scul_grid(const DesignSplit& split);
std::vector<double> default_psc_grid();

struct SimRecord {
  Method method = Method::kMsc;
  int m = 0;
  int setting = 0;
  int replication = 0;
  double lambda = 0.0;
  double rmse = 0.0;
  double att_bias = 0.0;
  double fit_seconds = 0.0;
  bool ok = true;
  std::string error;  // set when ok is false
};

struct SimAggregate {
  Method method = Method::kMsc;
  int m = 0;
  int count = 0;  // successful replications
  int skipped = 0;
  double lambda = 0.0;
  double mean_rmse = 0.0;
  double se_rmse = 0.0;
  double mean_att_bias = 0.0;
  double se_att_bias = 0.0;
  double sd_att_bias = 0.0;
  double mean_seconds = 0.0;
  double se_seconds = 0.0;
};

struct SimResult {
  SimConfig config;
  std::vector<SimRecord> records;  // replication-major, then method order
  std::vector<SimAggregate> aggregates;
  std::map<Method, double> lambdas;  // penalty used per method
  int skipped = 0;
};

// Penalty each method will use for this configuration, resolving CV on the
// first replication where the policy asks for it.
std::map<Method, double> resolve_lambdas(const SimConfig& cfg,
                                         const ExperimentOptions& options);

// Fits one method on generated data and scores it. Throws on fit failure.
SimRecord run_method(const GeneratedData& data, Method method, double lambda,
                     const ExperimentOptions& options);

SimResult run_experiment(const SimConfig& cfg, const ExperimentOptions& options);

// Recomputes aggregates from records (used by run_experiment).
std::vector<SimAggregate> aggregate(const std::vector<SimRecord>& records,
                                    const std::map<Method, double>& lambdas);

struct BenchRow {
  Method method = Method::kMsc;
  int m = 0;
  int replications = 0;
  double mean_seconds = 0.0;
  double se_seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;  // method-major, m ascending
  std::map<Method, double> r_squared;  // linear fit of mean_seconds on m
};

// Single-threaded wall clock per fit over an m sweep with n and t0 from
// `base`. ROLS runs as a per-unit loop (one factorization per treated unit).
BenchResult bench_timing(const SimConfig& base, const std::vector<int>& m_values,
                         const ExperimentOptions& options);

// R^2 of an ordinary least-squares line through (x, y).
double linear_r_squared(const std::vector<double>& x, const std::vector<double>& y);

// Output writers. Numbers use round-trip precision so identical runs give
// identical bytes.
void write_records_csv(const SimResult& result, const std::filesystem::path& path);
// Summary without any wall-clock fields.
void write_summary_json(const SimResult& result, const std::filesystem::path& path);
void write_timing_json(const SimResult& result, const std::filesystem::path& path);
void write_bench_csv(const BenchResult& result, const std::filesystem::path& path);
void write_bench_json(const BenchResult& result, const std::filesystem::path& path);

}  // namespace msc
