// msc: command-line front end for fitting, effect estimation, cross-validation
// and the simulation benchmarks.
//
// Every command writes manifest.json next to its outputs. The manifest holds
// the fully resolved argument list, so `msc replay --manifest <file>` reruns
// the command and reproduces every non-timing output byte for byte.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "msc/baselines.hpp"
#include "msc/effects.hpp"
#include "msc/errors.hpp"
#include "msc/msc_solver.hpp"
#include "msc/panel.hpp"
#include "msc/simlab.hpp"

#ifndef MSC_VERSION
#define MSC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Small helpers.

// Shortest text that parses back to the same double.
std::string number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw msc::IngestError("cannot open '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw msc::Error("cannot open '" + path.string() + "' for writing");
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
  if (!out) throw msc::Error("failed writing '" + path.string() + "'");
}

// "lo:hi:step" or a comma-separated list.
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0) ||
        hi < lo) {
      throw msc::ArgumentError("bad grid '" + text + "' (expected lo:hi:step)");
    }
    const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long k = 0; k <= count; ++k) {
      grid.push_back(std::round((lo + static_cast<double>(k) * step) * 1e12) / 1e12);
    }
    return grid;
  }
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw msc::ArgumentError("bad grid value '" + item + "'");
    }
  }
  if (grid.empty()) throw msc::ArgumentError("empty grid");
  return grid;
}

// "lo:hi:step" over integers.
std::vector<int> parse_int_sweep(const std::string& text) {
  std::vector<int> out;
  int lo = 0, hi = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 ||
      hi < lo || lo < 1) {
    throw msc::ArgumentError("bad sweep '" + text + "' (expected lo:hi:step)");
  }
  for (int m = lo; m <= hi; m += step) out.push_back(m);
  return out;
}

// ---------------------------------------------------------------------------
// Options shared by the panel commands.

struct PanelArgs {
  std::string input;
  std::string out_dir;
  std::string sidecar;
  std::optional<long long> t0_marker;
  std::string unit_col = "unit";
  std::string time_col = "time";
  std::string outcome_col = "outcome";
  std::string treated_col = "treated";
};

struct MethodArgs {
  std::string method = "msc";
  std::optional<double> lambda;
  std::string policy;  // empty: fixed when --lambda is given, else cv
  std::string grid;
  int blocks = 5;
  double c = 1.1;
  double ridge = 1.0;
  bool rols_per_unit = false;
  std::string solver = "admm";
  int max_iter = 10000;
  double tol = 1e-8;
  double admm_tol = msc::MscConfig{}.admm_tol;
  double baseline_tol = msc::BaselineConfig{}.tol;
  int threads = 1;
  std::optional<unsigned long long> seed;
};

void add_panel_options(CLI::App* cmd, PanelArgs& a) {
  cmd->add_option("--input", a.input, "Long-format panel CSV")->required();
  cmd->add_option("--out-dir", a.out_dir, "Directory for outputs")->required();
  cmd->add_option("--t0-marker", a.t0_marker,
                  "Last pre-treatment time value (overrides the sidecar)");
  cmd->add_option("--sidecar", a.sidecar,
                  "JSON sidecar carrying t0_marker (default: input with .json extension)");
  cmd->add_option("--unit-col", a.unit_col)->capture_default_str();
  cmd->add_option("--time-col", a.time_col)->capture_default_str();
  cmd->add_option("--outcome-col", a.outcome_col)->capture_default_str();
  cmd->add_option("--treated-col", a.treated_col)->capture_default_str();
}

void add_method_options(CLI::App* cmd, MethodArgs& a, bool with_grid) {
  cmd->add_option("--method", a.method, "msc, psc, scul or rols")
      ->check(CLI::IsMember({"msc", "psc", "scul", "rols"}, CLI::ignore_case))
      ->capture_default_str();
  cmd->add_option("--lambda", a.lambda, "Penalty (implies --lambda-policy fixed)");
  cmd->add_option("--lambda-policy", a.policy, "cv, fixed or corollary")
      ->check(CLI::IsMember({"cv", "fixed", "corollary"}, CLI::ignore_case));
  if (with_grid) {
    cmd->add_option("--lambda-grid", a.grid, "lo:hi:step or comma list for CV");
    cmd->add_option("--blocks", a.blocks, "CV blocks")->capture_default_str();
  }
  cmd->add_option("--c", a.c, "Constant of the default-lambda rule")->capture_default_str();
  cmd->add_option("--ridge", a.ridge, "ROLS ridge")->capture_default_str();
  cmd->add_flag("--rols-per-unit", a.rols_per_unit,
                "Factor the ROLS system separately for every treated unit");
  cmd->add_option("--solver", a.solver, "MSC algorithm: admm or pg")
      ->check(CLI::IsMember({"admm", "pg"}))
      ->capture_default_str();
  cmd->add_option("--max-iter", a.max_iter)->capture_default_str();
  cmd->add_option("--tol", a.tol, "Relative objective tolerance (pg)")->capture_default_str();
  cmd->add_option("--admm-tol", a.admm_tol, "Residual tolerance (admm)")->capture_default_str();
  cmd->add_option("--baseline-tol", a.baseline_tol)->capture_default_str();
  cmd->add_option("--threads", a.threads, "Worker threads for CV")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Recorded in the manifest; fitting is deterministic");
}

msc::MscConfig msc_config(const MethodArgs& a) {
  msc::MscConfig cfg;
  cfg.c = a.c;
  cfg.max_iter = a.max_iter;
  cfg.tol = a.tol;
  cfg.admm_tol = a.admm_tol;
  cfg.algorithm = a.solver == "pg" ? msc::MscAlgorithm::kProximalGradient
                                   : msc::MscAlgorithm::kAdmm;
  cfg.validate();
  return cfg;
}

msc::BaselineConfig baseline_config(const MethodArgs& a, msc::Method method) {
  msc::BaselineConfig cfg;
  cfg.method = method == msc::Method::kPsc    ? msc::BaselineMethod::kPsc
               : method == msc::Method::kScul ? msc::BaselineMethod::kScul
                                              : msc::BaselineMethod::kRols;
  cfg.ridge = a.ridge;
  cfg.rols_per_unit = a.rols_per_unit;
  cfg.max_iter = a.max_iter;
  cfg.tol = a.baseline_tol;
  cfg.validate();
  return cfg;
}

std::string resolved_policy(const MethodArgs& a) {
  if (!a.policy.empty()) {
    std::string p = a.policy;
    std::transform(p.begin(), p.end(), p.begin(), ::tolower);
    return p;
  }
  return a.lambda ? "fixed" : "cv";
}

msc::PanelData load_panel(const PanelArgs& a) {
  std::int64_t marker = 0;
  if (a.t0_marker) {
    marker = *a.t0_marker;
  } else {
    fs::path sidecar = a.sidecar.empty() ? fs::path(a.input).replace_extension(".json")
                                         : fs::path(a.sidecar);
    std::optional<std::int64_t> found;
    if (fs::exists(sidecar)) found = msc::read_t0_marker(sidecar);
    if (!found) {
      throw msc::ArgumentError("no t0 marker: pass --t0-marker or provide '" +
                               sidecar.string() + "' with a t0_marker entry");
    }
    marker = *found;
  }
  msc::CsvSchema schema{a.unit_col, a.time_col, a.outcome_col, a.treated_col};
  return msc::ingest_csv(a.input, schema, marker);
}

std::vector<double> grid_for(const MethodArgs& a, msc::Method method,
                             const msc::DesignSplit& split) {
  if (!a.grid.empty()) return parse_grid(a.grid);
  switch (method) {
    case msc::Method::kScul: return msc::default_scul_grid(split);
    case msc::Method::kPsc: return msc::default_psc_grid();
    default: return msc::default_msc_grid();
  }
}

msc::WeightFitter fitter_for(const MethodArgs& a, msc::Method method) {
  if (method == msc::Method::kMsc) {
    const msc::MscConfig base = msc_config(a);
    return [base](const msc::DesignSplit& s, double lambda) {
      msc::MscConfig cfg = base;
      cfg.lambda = lambda;
      return msc::fit(s, cfg).theta;
    };
  }
  const msc::BaselineConfig base = baseline_config(a, method);
  return [base](const msc::DesignSplit& s, double lambda) {
    msc::BaselineConfig cfg = base;
    cfg.lambda = lambda;
    return msc::fit_baseline(s, cfg).theta;
  };
}

struct ChosenLambda {
  double value = 0.0;
  std::string policy;
  std::optional<msc::CvResult> cv;
};

ChosenLambda choose_lambda(const MethodArgs& a, msc::Method method,
                           const msc::DesignSplit& split) {
  ChosenLambda out;
  out.policy = resolved_policy(a);
  if (method == msc::Method::kRols) {
    out.value = a.ridge;
    out.policy = "ridge";
    return out;
  }
  if (out.policy == "fixed") {
    if (!a.lambda) throw msc::ArgumentError("--lambda-policy fixed needs --lambda");
    out.value = *a.lambda;
    return out;
  }
  if (out.policy == "corollary") {
    if (method != msc::Method::kMsc) {
      throw msc::ArgumentError("the corollary rule applies to msc only");
    }
    out.value = msc::default_lambda(split.n(), split.t0(), a.c);
    return out;
  }
  const std::vector<double> grid = grid_for(a, method, split);
  out.cv = msc::cross_validate(split, grid, a.blocks, fitter_for(a, method), a.threads);
  out.value = out.cv->best_lambda;
  return out;
}

msc::FitReport fit_method(const MethodArgs& a, msc::Method method,
                          const msc::DesignSplit& split, double lambda) {
  if (method == msc::Method::kMsc) {
    msc::MscConfig cfg = msc_config(a);
    cfg.lambda = lambda;
    return msc::fit(split, cfg);
  }
  msc::BaselineConfig cfg = baseline_config(a, method);
  cfg.lambda = method == msc::Method::kRols ? 0.0 : lambda;
  return msc::fit_baseline(split, cfg);
}

void write_weights_csv(const fs::path& path, const msc::PanelData& panel,
                       const msc::Matrix& theta) {
  std::ofstream out = open_output(path);
  const int m = panel.treated_count();
  const auto& units = panel.units();
  out << "donor";
  for (int j = 0; j < m; ++j) out << ',' << csv_field(units[static_cast<std::size_t>(j)]);
  out << '\n';
  for (Eigen::Index k = 0; k < theta.rows(); ++k) {
    out << csv_field(units[static_cast<std::size_t>(m + k)]);
    for (Eigen::Index j = 0; j < theta.cols(); ++j) out << ',' << number(theta(k, j));
    out << '\n';
  }
  if (!out) throw msc::Error("failed writing '" + path.string() + "'");
}

void write_cv_table(const fs::path& path, const msc::CvResult& cv) {
  std::ofstream out = open_output(path);
  out << "lambda,mean_rmse";
  const std::size_t folds = cv.table.empty() ? 0 : cv.table.front().fold_rmse.size();
  for (std::size_t b = 1; b <= folds; ++b) out << ",fold_" << b;
  out << '\n';
  for (const auto& row : cv.table) {
    out << number(row.lambda) << ',' << number(row.mean_rmse);
    for (double v : row.fold_rmse) out << ',' << number(v);
    out << '\n';
  }
  if (!out) throw msc::Error("failed writing '" + path.string() + "'");
}

json fit_report_json(const msc::FitReport& r, const ChosenLambda& chosen,
                     const msc::DesignSplit& split) {
  json doc;
  doc["method"] = r.method;
  doc["lambda_used"] = r.lambda_used;
  doc["lambda_policy"] = chosen.policy;
  if (chosen.cv) doc["cv_best_lambda"] = chosen.cv->best_lambda;
  doc["n"] = split.n();
  doc["m"] = split.m();
  doc["t0"] = split.t0();
  doc["t1"] = split.t1();
  doc["iterations"] = r.iterations;
  doc["converged"] = r.converged;
  doc["unconverged_columns"] = r.unconverged_columns;
  if (r.method == "msc") {
    doc["objective"] = msc::objective(r.theta, split, r.lambda_used);
    doc["objective_trace"] = r.objective_trace;
  }
  doc["nonzero_weights"] = static_cast<long long>((r.theta.array() != 0.0).count());
  doc["wall_clock_seconds"] = r.wall_clock_seconds;
  return doc;
}

// ---------------------------------------------------------------------------
// Manifest.

struct Manifest {
  std::string command;
  std::vector<std::string> argv;  // resolved, replayable
  json config;
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;
  std::optional<unsigned long long> seed;
};

void write_manifest(const fs::path& out_dir, const Manifest& m) {
  json doc;
  doc["command"] = m.command;
  doc["version"] = MSC_VERSION;
  doc["timestamp"] = utc_timestamp();
  doc["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  doc["config"] = m.config;
  json inputs = json::array();
  for (const auto& p : m.inputs) {
    inputs.push_back({{"path", p.string()},
                      {"sha256", sha256_file(p)},
                      {"bytes", static_cast<long long>(fs::file_size(p))}});
  }
  doc["inputs"] = inputs;
  doc["outputs"] = m.outputs;
  doc["argv"] = m.argv;
  write_json(out_dir / "manifest.json", doc);
}

json panel_config(const PanelArgs& p, std::int64_t t0_marker) {
  return {{"input", p.input},     {"out_dir", p.out_dir},
          {"t0_marker", t0_marker}, {"unit_col", p.unit_col},
          {"time_col", p.time_col}, {"outcome_col", p.outcome_col},
          {"treated_col", p.treated_col}};
}

json method_config(const MethodArgs& a, const ChosenLambda& chosen) {
  json doc = {{"method", a.method},
              {"lambda_policy", chosen.policy},
              {"lambda", chosen.value},
              {"blocks", a.blocks},
              {"c", a.c},
              {"ridge", a.ridge},
              {"rols_per_unit", a.rols_per_unit},
              {"solver", a.solver},
              {"max_iter", a.max_iter},
              {"tol", a.tol},
              {"admm_tol", a.admm_tol},
              {"baseline_tol", a.baseline_tol},
              {"threads", a.threads}};
  if (!a.grid.empty()) doc["lambda_grid"] = a.grid;
  return doc;
}

std::vector<std::string> panel_argv(const std::string& cmd, const PanelArgs& p,
                                    std::int64_t t0_marker) {
  return {cmd,
          "--input", fs::absolute(p.input).string(),
          "--out-dir", fs::absolute(p.out_dir).string(),
          "--t0-marker", std::to_string(t0_marker),
          "--unit-col", p.unit_col,
          "--time-col", p.time_col,
          "--outcome-col", p.outcome_col,
          "--treated-col", p.treated_col};
}

void append_method_argv(std::vector<std::string>& argv, const MethodArgs& a,
                        const ChosenLambda& chosen, bool keep_policy) {
  argv.insert(argv.end(), {"--method", a.method});
  if (keep_policy) {
    argv.insert(argv.end(), {"--lambda-policy", chosen.policy});
    if (a.lambda) argv.insert(argv.end(), {"--lambda", number(*a.lambda)});
    if (!a.grid.empty()) argv.insert(argv.end(), {"--lambda-grid", a.grid});
    argv.insert(argv.end(), {"--blocks", std::to_string(a.blocks)});
  } else if (chosen.policy != "ridge") {
    // Replays pin the chosen penalty so they do not depend on rerunning CV.
    argv.insert(argv.end(), {"--lambda-policy", "fixed", "--lambda", number(chosen.value)});
  }
  argv.insert(argv.end(), {"--c", number(a.c), "--ridge", number(a.ridge), "--solver",
                           a.solver, "--max-iter", std::to_string(a.max_iter), "--tol",
                           number(a.tol), "--admm-tol", number(a.admm_tol),
                           "--baseline-tol", number(a.baseline_tol), "--threads",
                           std::to_string(a.threads)});
  if (a.rols_per_unit) argv.push_back("--rols-per-unit");
  if (a.seed) argv.insert(argv.end(), {"--seed", std::to_string(*a.seed)});
}

std::int64_t effective_marker(const msc::PanelData& panel) {
  return panel.times()[static_cast<std::size_t>(panel.t0() - 1)];
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_fit(const PanelArgs& p, const MethodArgs& a, bool with_effects) {
  const msc::PanelData panel = load_panel(p);
  const msc::DesignSplit split = msc::split(panel);
  if (with_effects && split.t1() == 0) {
    throw msc::ArgumentError("no post-treatment periods: att needs t1 >= 1");
  }
  const msc::Method method = msc::parse_method(a.method);
  const ChosenLambda chosen = choose_lambda(a, method, split);
  const msc::FitReport report = fit_method(a, method, split, chosen.value);

  const fs::path out_dir(p.out_dir);
  fs::create_directories(out_dir);
  Manifest manifest;
  manifest.command = with_effects ? "att" : "fit";
  manifest.inputs.push_back(p.input);
  manifest.seed = a.seed;

  write_weights_csv(out_dir / "weights.csv", panel, report.theta);
  write_json(out_dir / "fit_report.json", fit_report_json(report, chosen, split));
  manifest.outputs = {"weights.csv", "fit_report.json"};
  if (chosen.cv) {
    write_cv_table(out_dir / "cv_table.csv", *chosen.cv);
    manifest.outputs.push_back("cv_table.csv");
  }

  if (with_effects) {
    const msc::Matrix counterfactual = msc::predict_counterfactual(report.theta, split.x_post);
    const msc::EffectReport effects = msc::att(split.y_post, counterfactual);
    const auto& units = panel.units();
    const auto& times = panel.times();
    json doc;
    doc["method"] = report.method;
    doc["lambda_used"] = report.lambda_used;
    doc["att"] = effects.att;
    json periods = json::array();
    for (int t = 0; t < split.t1(); ++t) {
      periods.push_back({{"time", times[static_cast<std::size_t>(panel.t0() + t)]},
                         {"att", effects.att_per_period(t)}});
    }
    doc["att_per_period"] = periods;
    json per_unit = json::object();
    for (int j = 0; j < split.m(); ++j) {
      per_unit[units[static_cast<std::size_t>(j)]] = effects.per_unit_effects.col(j).mean();
    }
    doc["unit_att"] = per_unit;
    write_json(out_dir / "effects.json", doc);

    std::ofstream out = open_output(out_dir / "counterfactuals.csv");
    out << "time,unit,observed,counterfactual,effect\n";
    for (int t = 0; t < split.t1(); ++t) {
      for (int j = 0; j < split.m(); ++j) {
        out << times[static_cast<std::size_t>(panel.t0() + t)] << ','
            << csv_field(units[static_cast<std::size_t>(j)]) << ','
            << number(split.y_post(t, j)) << ',' << number(counterfactual(t, j)) << ','
            << number(effects.per_unit_effects(t, j)) << '\n';
      }
    }
    if (!out) throw msc::Error("failed writing counterfactuals.csv");
    manifest.outputs.insert(manifest.outputs.end(), {"effects.json", "counterfactuals.csv"});
  }

  const std::int64_t marker = effective_marker(panel);
  manifest.config = panel_config(p, marker);
  manifest.config.update(method_config(a, chosen));
  manifest.argv = panel_argv(manifest.command, p, marker);
  append_method_argv(manifest.argv, a, chosen, /*keep_policy=*/true);
  write_manifest(out_dir, manifest);

  std::cout << manifest.command << ": method=" << report.method
            << " lambda=" << number(report.lambda_used);
  if (with_effects) {
    const msc::Matrix cf = msc::predict_counterfactual(report.theta, split.x_post);
    std::cout << " att=" << number(msc::att(split.y_post, cf).att);
  }
  std::cout << " -> " << out_dir.string() << '\n';
}

void cmd_cv(const PanelArgs& p, MethodArgs a) {
  const msc::PanelData panel = load_panel(p);
  const msc::DesignSplit split = msc::split(panel);
  const msc::Method method = msc::parse_method(a.method);
  if (method == msc::Method::kRols) {
    throw msc::ArgumentError("rols has no penalty to cross-validate");
  }
  const std::vector<double> grid = grid_for(a, method, split);
  const msc::CvResult cv =
      msc::cross_validate(split, grid, a.blocks, fitter_for(a, method), a.threads);

  const fs::path out_dir(p.out_dir);
  fs::create_directories(out_dir);
  write_cv_table(out_dir / "cv_table.csv", cv);
  json doc;
  doc["method"] = a.method;
  doc["blocks"] = a.blocks;
  doc["grid"] = grid;
  doc["best_lambda"] = cv.best_lambda;
  write_json(out_dir / "cv.json", doc);

  ChosenLambda chosen;
  chosen.policy = "cv";
  chosen.value = cv.best_lambda;
  const std::int64_t marker = effective_marker(panel);
  Manifest manifest;
  manifest.command = "cv";
  manifest.inputs.push_back(p.input);
  manifest.outputs = {"cv_table.csv", "cv.json"};
  manifest.seed = a.seed;
  manifest.config = panel_config(p, marker);
  manifest.config.update(method_config(a, chosen));
  manifest.config["lambda_grid"] = grid;
  manifest.argv = panel_argv("cv", p, marker);
  append_method_argv(manifest.argv, a, chosen, /*keep_policy=*/true);
  write_manifest(out_dir, manifest);
  std::cout << "cv: best lambda " << number(cv.best_lambda) << '\n';
}

struct SimArgs {
  std::string out_dir;
  int setting = 2;
  int m = 50;
  int n = 400;
  int t0 = 100;
  int t1 = 10;
  int s = 1000;
  double noise_sd = 0.5;
  double tau = 1.0;
  int reps = 50;
  int burn_in = 200;
  std::optional<unsigned long long> seed;
  int threads = 0;  // 0: all cores (simulate) / 1 (bench)
  std::vector<std::string> methods = {"msc", "psc", "scul", "rols"};
  std::string policy = "cv";
  std::optional<double> lambda;
  std::optional<double> msc_lambda, psc_lambda, scul_lambda;
  std::string msc_grid, psc_grid, scul_grid;
  int blocks = 5;
  int cv_units = 0;
  double ridge = 1.0;
  bool rols_per_unit = false;
  double c = 1.1;
  std::string solver = "admm";
  int max_iter = 10000;
  double tol = 1e-8;
  double admm_tol = msc::MscConfig{}.admm_tol;
  double baseline_tol = msc::BaselineConfig{}.tol;
  std::string m_sweep = "50:400:50";
};

void add_sim_options(CLI::App* cmd, SimArgs& a, bool bench) {
  cmd->add_option("--out-dir", a.out_dir)->required();
  cmd->add_option("--seed", a.seed, "Base seed (required)")->required();
  cmd->add_option("--setting", a.setting)->check(CLI::IsMember({1, 2}))->capture_default_str();
  if (bench) {
    cmd->add_option("--m-sweep", a.m_sweep, "lo:hi:step over treated counts")
        ->capture_default_str();
  } else {
    cmd->add_option("--m", a.m, "Treated units")->capture_default_str();
  }
  cmd->add_option("--n", a.n, "Control units")->capture_default_str();
  cmd->add_option("--t0", a.t0)->capture_default_str();
  cmd->add_option("--t1", a.t1)->capture_default_str();
  cmd->add_option("--s", a.s, "Nonzeros in the true weights (setting 2)")->capture_default_str();
  cmd->add_option("--noise-sd", a.noise_sd)->capture_default_str();
  cmd->add_option("--tau", a.tau, "True effect added after adoption")->capture_default_str();
  cmd->add_option("--reps", a.reps, "Replications")->capture_default_str();
  cmd->add_option("--burn-in", a.burn_in)->capture_default_str();
  cmd->add_option("--threads", a.threads,
                  bench ? "Ignored: timing always runs single-threaded"
                        : "Replications in flight (default: all cores)");
  cmd->add_option("--method", a.methods, "Comma-separated methods")
      ->delimiter(',')
      ->check(CLI::IsMember({"msc", "psc", "scul", "rols"}, CLI::ignore_case))
      ->capture_default_str();
  cmd->add_option("--lambda-policy", a.policy, "cv, fixed or corollary")
      ->check(CLI::IsMember({"cv", "fixed", "corollary"}, CLI::ignore_case))
      ->capture_default_str();
  cmd->add_option("--lambda", a.lambda, "Penalty for --lambda-policy fixed");
  cmd->add_option("--msc-lambda", a.msc_lambda, "Pin the MSC penalty");
  cmd->add_option("--psc-lambda", a.psc_lambda, "Pin the PSC penalty");
  cmd->add_option("--scul-lambda", a.scul_lambda, "Pin the SCUL penalty");
  cmd->add_option("--msc-grid", a.msc_grid, "CV grid for MSC");
  cmd->add_option("--psc-grid", a.psc_grid, "CV grid for PSC");
  cmd->add_option("--scul-grid", a.scul_grid, "CV grid for SCUL");
  cmd->add_option("--blocks", a.blocks, "CV blocks")->capture_default_str();
  cmd->add_option("--cv-units", a.cv_units,
                  "Treated columns scored in baseline CV (0 = all)")
      ->capture_default_str();
  cmd->add_option("--ridge", a.ridge, "ROLS ridge")->capture_default_str();
  if (!bench) {
    cmd->add_flag("--rols-per-unit", a.rols_per_unit,
                  "Factor the ROLS system separately for every treated unit");
  }
  cmd->add_option("--c", a.c)->capture_default_str();
  cmd->add_option("--solver", a.solver, "MSC algorithm: admm or pg")
      ->check(CLI::IsMember({"admm", "pg"}))
      ->capture_default_str();
  cmd->add_option("--max-iter", a.max_iter)->capture_default_str();
  cmd->add_option("--tol", a.tol)->capture_default_str();
  cmd->add_option("--admm-tol", a.admm_tol)->capture_default_str();
  cmd->add_option("--baseline-tol", a.baseline_tol)->capture_default_str();
}

msc::ExperimentOptions experiment_options(const SimArgs& a) {
  msc::ExperimentOptions o;
  o.methods.clear();
  for (const auto& name : a.methods) o.methods.push_back(msc::parse_method(name));
  o.policy.kind = msc::parse_policy(a.policy);
  if (o.policy.kind == msc::LambdaPolicy::Kind::kFixed) {
    if (!a.lambda) throw msc::ArgumentError("--lambda-policy fixed needs --lambda");
    o.policy.value = *a.lambda;
  }
  if (a.msc_lambda) o.overrides[msc::Method::kMsc] = *a.msc_lambda;
  if (a.psc_lambda) o.overrides[msc::Method::kPsc] = *a.psc_lambda;
  if (a.scul_lambda) o.overrides[msc::Method::kScul] = *a.scul_lambda;
  if (!a.msc_grid.empty()) o.msc_grid = parse_grid(a.msc_grid);
  if (!a.psc_grid.empty()) o.psc_grid = parse_grid(a.psc_grid);
  if (!a.scul_grid.empty()) o.scul_grid = parse_grid(a.scul_grid);
  o.cv_blocks = a.blocks;
  o.cv_units = a.cv_units;
  o.rols_ridge = a.ridge;
  o.rols_per_unit = a.rols_per_unit;
  o.msc.c = a.c;
  o.msc.max_iter = a.max_iter;
  o.msc.tol = a.tol;
  o.msc.admm_tol = a.admm_tol;
  o.msc.algorithm = a.solver == "pg" ? msc::MscAlgorithm::kProximalGradient
                                     : msc::MscAlgorithm::kAdmm;
  o.baseline.max_iter = a.max_iter;
  o.baseline.tol = a.baseline_tol;
  o.threads = std::max(a.threads, 1);
  o.validate();
  return o;
}

msc::SimConfig sim_config(const SimArgs& a) {
  msc::SimConfig c;
  c.setting = a.setting;
  c.m = a.m;
  c.n = a.n;
  c.t0 = a.t0;
  c.t1 = a.t1;
  c.s = a.s;
  c.noise_sd = a.noise_sd;
  c.tau = a.tau;
  c.replications = a.reps;
  c.seed = *a.seed;
  c.burn_in = a.burn_in;
  return c;
}

json sim_config_json(const SimArgs& a, const msc::ExperimentOptions& o, bool bench) {
  json doc = {{"setting", a.setting}, {"n", a.n}, {"t0", a.t0}, {"t1", a.t1},
              {"s", a.s}, {"noise_sd", a.noise_sd}, {"tau", a.tau},
              {"replications", a.reps}, {"burn_in", a.burn_in}, {"seed", *a.seed}};
  if (bench) {
    doc["m_sweep"] = a.m_sweep;
  } else {
    doc["m"] = a.m;
    doc["threads"] = o.threads;
  }
  doc["methods"] = a.methods;
  doc["lambda_policy"] = a.policy;
  if (a.lambda) doc["lambda"] = *a.lambda;
  json pins = json::object();
  for (const auto& [method, value] : o.overrides) pins[std::string(msc::method_name(method))] = value;
  doc["lambda_overrides"] = pins;
  doc["msc_grid"] = o.msc_grid;
  doc["psc_grid"] = o.psc_grid;
  doc["scul_grid"] = o.scul_grid;
  doc["blocks"] = a.blocks;
  doc["cv_units"] = a.cv_units;
  doc["ridge"] = a.ridge;
  doc["rols_per_unit"] = bench ? true : a.rols_per_unit;
  doc["c"] = a.c;
  doc["solver"] = a.solver;
  doc["max_iter"] = a.max_iter;
  doc["tol"] = a.tol;
  doc["admm_tol"] = a.admm_tol;
  doc["baseline_tol"] = a.baseline_tol;
  return doc;
}

std::vector<std::string> sim_argv(const std::string& cmd, const SimArgs& a,
                                  const std::map<msc::Method, double>& lambdas, bool bench) {
  std::string methods;
  for (const auto& name : a.methods) methods += (methods.empty() ? "" : ",") + name;
  std::vector<std::string> argv = {cmd,
                                   "--out-dir", fs::absolute(a.out_dir).string(),
                                   "--seed", std::to_string(*a.seed),
                                   "--setting", std::to_string(a.setting),
                                   "--n", std::to_string(a.n),
                                   "--t0", std::to_string(a.t0),
                                   "--t1", std::to_string(a.t1),
                                   "--s", std::to_string(a.s),
                                   "--noise-sd", number(a.noise_sd),
                                   "--tau", number(a.tau),
                                   "--reps", std::to_string(a.reps),
                                   "--burn-in", std::to_string(a.burn_in),
                                   "--method", methods,
                                   "--ridge", number(a.ridge),
                                   "--c", number(a.c),
                                   "--solver", a.solver,
                                   "--max-iter", std::to_string(a.max_iter),
                                   "--tol", number(a.tol),
                                   "--admm-tol", number(a.admm_tol),
                                   "--baseline-tol", number(a.baseline_tol)};
  if (bench) {
    argv.insert(argv.end(), {"--m-sweep", a.m_sweep});
  } else {
    argv.insert(argv.end(), {"--m", std::to_string(a.m), "--threads",
                             std::to_string(std::max(a.threads, 1))});
    if (a.rols_per_unit) argv.push_back("--rols-per-unit");
  }
  // Pin every resolved penalty so a replay skips CV and matches exactly.
  argv.insert(argv.end(), {"--lambda-policy", "fixed", "--lambda", "0"});
  for (const auto& [method, value] : lambdas) {
    if (method == msc::Method::kRols) continue;
    argv.insert(argv.end(), {"--" + std::string(msc::method_name(method)) + "-lambda",
                             number(value)});
  }
  return argv;
}

void cmd_simulate(SimArgs a) {
  if (a.threads <= 0) a.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const msc::SimConfig cfg = sim_config(a);
  const msc::ExperimentOptions options = experiment_options(a);
  const msc::SimResult result = msc::run_experiment(cfg, options);

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  msc::write_records_csv(result, out_dir / "sim_records.csv");
  msc::write_summary_json(result, out_dir / "summary.json");
  msc::write_timing_json(result, out_dir / "timing.json");

  Manifest manifest;
  manifest.command = "simulate";
  manifest.seed = a.seed;
  manifest.outputs = {"sim_records.csv", "summary.json", "timing.json"};
  manifest.config = sim_config_json(a, options, false);
  json resolved = json::object();
  for (const auto& [method, value] : result.lambdas) {
    resolved[std::string(msc::method_name(method))] = value;
  }
  manifest.config["resolved_lambdas"] = resolved;
  manifest.argv = sim_argv("simulate", a, result.lambdas, false);
  write_manifest(out_dir, manifest);

  for (const auto& agg : result.aggregates) {
    std::printf("%-5s m=%d lambda=%-10.6g mean_rmse=%.4f (se %.4f) mean_att_bias=%+.4f (se %.4f)%s\n",
                std::string(msc::method_name(agg.method)).c_str(), agg.m, agg.lambda,
                agg.mean_rmse, agg.se_rmse, agg.mean_att_bias, agg.se_att_bias,
                agg.skipped ? (" skipped=" + std::to_string(agg.skipped)).c_str() : "");
  }
}

void cmd_bench(SimArgs a) {
  a.threads = 1;
  const std::vector<int> sweep = parse_int_sweep(a.m_sweep);
  msc::SimConfig cfg = sim_config(a);
  cfg.m = sweep.front();
  const msc::ExperimentOptions options = experiment_options(a);
  msc::ExperimentOptions resolved_opts = options;
  resolved_opts.rols_per_unit = true;
  const auto lambdas = msc::resolve_lambdas(cfg, resolved_opts);
  for (const auto& [method, value] : lambdas) resolved_opts.overrides[method] = value;
  const msc::BenchResult result = msc::bench_timing(cfg, sweep, resolved_opts);

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  msc::write_bench_csv(result, out_dir / "bench.csv");
  msc::write_bench_json(result, out_dir / "bench.json");
  Manifest manifest;
  manifest.command = "bench";
  manifest.seed = a.seed;
  manifest.outputs = {"bench.csv", "bench.json"};
  manifest.config = sim_config_json(a, options, true);
  json resolved = json::object();
  for (const auto& [method, value] : lambdas) {
    resolved[std::string(msc::method_name(method))] = value;
  }
  manifest.config["resolved_lambdas"] = resolved;
  manifest.argv = sim_argv("bench", a, lambdas, true);
  write_manifest(out_dir, manifest);
  for (const auto& row : result.rows) {
    std::printf("%-5s m=%-4d mean_seconds=%.4f\n",
                std::string(msc::method_name(row.method)).c_str(), row.m, row.mean_seconds);
  }
}

int run(std::vector<std::string> args);

void cmd_replay(const std::string& manifest_path, const std::string& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw msc::IngestError("cannot open manifest '" + manifest_path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw msc::ParseError("manifest '" + manifest_path + "': " + e.what());
  }
  if (!doc.contains("argv") || !doc["argv"].is_array()) {
    throw msc::ValidationError("manifest '" + manifest_path + "' has no argv list");
  }
  std::vector<std::string> args = doc["argv"].get<std::vector<std::string>>();
  if (!out_dir.empty()) {
    auto it = std::find(args.begin(), args.end(), "--out-dir");
    if (it == args.end() || it + 1 == args.end()) {
      throw msc::ValidationError("manifest argv has no --out-dir");
    }
    *(it + 1) = out_dir;
  }
  if (run(args) != 0) throw msc::Error("replay failed");
}

int run(std::vector<std::string> args) {
  CLI::App app{"Multivariate square-root lasso synthetic control"};
  app.set_version_flag("--version", MSC_VERSION);
  app.require_subcommand(1);

  PanelArgs fit_panel, att_panel, cv_panel;
  MethodArgs fit_method_args, att_method_args, cv_method_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit donor weights and write them as CSV");
  add_panel_options(fit_cmd, fit_panel);
  add_method_options(fit_cmd, fit_method_args, true);
  auto* att_cmd = app.add_subcommand("att", "Fit weights and estimate treatment effects");
  add_panel_options(att_cmd, att_panel);
  add_method_options(att_cmd, att_method_args, true);
  auto* cv_cmd = app.add_subcommand("cv", "Rolling-origin cross-validation over a grid");
  add_panel_options(cv_cmd, cv_panel);
  add_method_options(cv_cmd, cv_method_args, true);

  SimArgs sim_args, bench_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Run simulation replications");
  add_sim_options(sim_cmd, sim_args, false);
  bench_args.reps = 1;
  bench_args.policy = "fixed";
  bench_args.lambda = 0.03;
  auto* bench_cmd = app.add_subcommand("bench", "Time single fits over an m sweep");
  add_sim_options(bench_cmd, bench_args, true);

  std::string manifest_path, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "Rerun a command from its manifest");
  replay_cmd->add_option("--manifest", manifest_path)->required();
  replay_cmd->add_option("--out-dir", replay_out, "Write to this directory instead");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (fit_cmd->parsed()) cmd_fit(fit_panel, fit_method_args, false);
  if (att_cmd->parsed()) cmd_fit(att_panel, att_method_args, true);
  if (cv_cmd->parsed()) cmd_cv(cv_panel, cv_method_args);
  if (sim_cmd->parsed()) cmd_simulate(sim_args);
  if (bench_cmd->parsed()) cmd_bench(bench_args);
  if (replay_cmd->parsed()) cmd_replay(manifest_path, replay_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(std::move(args));
  } catch (const msc::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
