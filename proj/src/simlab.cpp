#include "msc/simlab.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include <json.hpp>

#include "msc/effects.hpp"
#include "msc/errors.hpp"
#include "msc/parallel.hpp"
#include "msc/rng.hpp"

namespace msc {
namespace {

using json = nlohmann::ordered_json;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

// Independent sub-streams of one seed: draw k of a generator seeded with it.
std::uint64_t stream_seed(std::uint64_t seed, int stream) {
  CounterRng rng(seed);
  std::uint64_t out = 0;
  for (int k = 0; k <= stream; ++k) out = rng.next_u64();
  return out;
}

// Shortest text that parses back to the same double.
std::string number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

struct MeanSe {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
};

MeanSe summarize(const std::vector<double>& values) {
  MeanSe out;
  if (values.empty()) return out;
  const double count = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / count;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / (count - 1.0));
    out.se = out.sd / std::sqrt(count);
  }
  return out;
}

std::vector<double> log_grid(double low, double high, int points) {
  std::vector<double> grid;
  const double step = std::log(high / low) / (points - 1);
  for (int k = 0; k < points; ++k) grid.push_back(low * std::exp(step * k));
  return grid;
}

Matrix fit_weights(const DesignSplit& split, Method method, double lambda,
                   const ExperimentOptions& options, double* seconds) {
  if (method == Method::kMsc) {
    MscConfig cfg = options.msc;
    cfg.lambda = lambda;
    FitReport report = fit(split, cfg);
    if (seconds) *seconds = report.wall_clock_seconds;
    return std::move(report.theta);
  }
  BaselineConfig cfg = options.baseline;
  cfg.lambda = lambda;
  cfg.ridge = options.rols_ridge;
  cfg.rols_per_unit = options.rols_per_unit;
  cfg.threads = 1;
  switch (method) {
    case Method::kPsc: cfg.method = BaselineMethod::kPsc; break;
    case Method::kScul: cfg.method = BaselineMethod::kScul; break;
    default: cfg.method = BaselineMethod::kRols; break;
  }
  FitReport report = fit_baseline(split, cfg);
  if (seconds) *seconds = report.wall_clock_seconds;
  return std::move(report.theta);
}

SimConfig for_replication(const SimConfig& cfg, int replication) {
  SimConfig out = cfg;
  out.seed = replication_seed(cfg.seed, replication);
  return out;
}

}  // namespace

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kMsc: return "msc";
    case Method::kPsc: return "psc";
    case Method::kScul: return "scul";
    case Method::kRols: return "rols";
  }
  throw ArgumentError("unknown method");
}

Method parse_method(std::string_view text) {
  const std::string key = lower(text);
  if (key == "msc") return Method::kMsc;
  if (key == "psc") return Method::kPsc;
  if (key == "scul") return Method::kScul;
  if (key == "rols") return Method::kRols;
  throw ArgumentError("unknown method '" + std::string(text) +
                      "' (expected msc, psc, scul or rols)");
}

std::string_view policy_name(LambdaPolicy::Kind kind) {
  switch (kind) {
    case LambdaPolicy::Kind::kCv: return "cv";
    case LambdaPolicy::Kind::kFixed: return "fixed";
    case LambdaPolicy::Kind::kCorollary: return "corollary";
  }
  throw ArgumentError("unknown lambda policy");
}

LambdaPolicy::Kind parse_policy(std::string_view text) {
  const std::string key = lower(text);
  if (key == "cv") return LambdaPolicy::Kind::kCv;
  if (key == "fixed") return LambdaPolicy::Kind::kFixed;
  if (key == "corollary") return LambdaPolicy::Kind::kCorollary;
  throw ArgumentError("unknown lambda policy '" + std::string(text) +
                      "' (expected cv, fixed or corollary)");
}

void SimConfig::validate() const {
  if (setting != 1 && setting != 2) throw ArgumentError("setting must be 1 or 2");
  if (m < 1 || n < 1) throw ArgumentError("m and n must be >= 1");
  if (t0 < 1) throw ArgumentError("t0 must be >= 1");
  if (t1 < 1) throw ArgumentError("t1 must be >= 1");
  if (replications < 1) throw ArgumentError("replications must be >= 1");
  if (burn_in < 0) throw ArgumentError("burn_in must be >= 0");
  if (!(noise_sd >= 0.0) || !std::isfinite(tau)) {
    throw ArgumentError("noise_sd must be >= 0 and tau finite");
  }
  if (setting == 2) {
    if (s < m) {
      throw ArgumentError("s = " + std::to_string(s) + " cannot give each of the " +
                          std::to_string(m) + " treated columns a nonzero");
    }
    if (static_cast<long long>(s) > static_cast<long long>(n) * m) {
      throw ArgumentError("s exceeds n * m");
    }
  }
}

void ExperimentOptions::validate() const {
  if (methods.empty()) throw ArgumentError("no methods selected");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (std::find(methods.begin(), methods.begin() + static_cast<std::ptrdiff_t>(i),
                  methods[i]) != methods.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ArgumentError("method '" + std::string(method_name(methods[i])) +
                          "' listed twice");
    }
  }
  if (policy.kind == LambdaPolicy::Kind::kFixed &&
      (!(policy.value >= 0.0) || !std::isfinite(policy.value))) {
    throw ArgumentError("fixed lambda must be finite and >= 0");
  }
  for (const auto& [method, value] : overrides) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw ArgumentError("lambda for " + std::string(method_name(method)) +
                          " must be finite and >= 0");
    }
  }
  if (threads < 1) throw ArgumentError("threads must be >= 1");
  if (cv_units < 0) throw ArgumentError("cv_units must be >= 0");
  msc.validate();
}

Matrix gen_ar1_panel(int n_units, int t_total, std::uint64_t seed, int burn_in,
                     double innovation_sd) {
  if (n_units < 1 || t_total < 1) throw ArgumentError("n_units and t_total must be >= 1");
  if (burn_in < 0) throw ArgumentError("burn_in must be >= 0");
  CounterRng rng(seed);
  Matrix out(t_total, n_units);
  for (int i = 0; i < n_units; ++i) {
    const double c = static_cast<double>(i % 10 + 1);
    double y = c;
    for (int t = 0; t < burn_in + t_total; ++t) {
      y = 0.1 * c + 0.9 * y + innovation_sd * rng.normal();
      if (t >= burn_in) out(t - burn_in, i) = y;
    }
  }
  return out;
}

GeneratedData gen_setting(const SimConfig& cfg) {
  cfg.validate();
  const int total = cfg.t0 + cfg.t1;
  GeneratedData data;
  Matrix y;
  Matrix x;
  if (cfg.setting == 1) {
    const Matrix all = gen_ar1_panel(cfg.m + cfg.n, total, stream_seed(cfg.seed, 0), cfg.burn_in);
    y = all.leftCols(cfg.m);
    x = all.rightCols(cfg.n);
  } else {
    x = gen_ar1_panel(cfg.n, total, stream_seed(cfg.seed, 0), cfg.burn_in);

    // One guaranteed cell per column, then the rest uniformly from what is left.
    CounterRng pick(stream_seed(cfg.seed, 1));
    const std::size_t rows = static_cast<std::size_t>(cfg.n);
    const std::size_t cells = rows * static_cast<std::size_t>(cfg.m);
    std::vector<char> used(cells, 0);
    std::vector<std::size_t> chosen;
    chosen.reserve(static_cast<std::size_t>(cfg.s));
    for (int j = 0; j < cfg.m; ++j) {
      const std::size_t cell = static_cast<std::size_t>(j) * rows + pick.below(rows);
      used[cell] = 1;
      chosen.push_back(cell);
    }
    std::vector<std::size_t> pool;
    pool.reserve(cells - chosen.size());
    for (std::size_t cell = 0; cell < cells; ++cell) {
      if (!used[cell]) pool.push_back(cell);
    }
    const std::size_t extra = static_cast<std::size_t>(cfg.s - cfg.m);
    for (std::size_t k = 0; k < extra; ++k) {
      const std::size_t swap_with = k + pick.below(pool.size() - k);
      std::swap(pool[k], pool[swap_with]);
      chosen.push_back(pool[k]);
    }
    Matrix theta = Matrix::Zero(cfg.n, cfg.m);
    for (std::size_t cell : chosen) {
      theta(static_cast<Eigen::Index>(cell % rows), static_cast<Eigen::Index>(cell / rows)) =
          pick.uniform_open();
    }
    for (int j = 0; j < cfg.m; ++j) theta.col(j) /= theta.col(j).sum();

    CounterRng noise(stream_seed(cfg.seed, 2));
    y = x * theta;
    for (int j = 0; j < cfg.m; ++j) {
      for (int t = 0; t < total; ++t) y(t, j) += noise.normal(0.0, cfg.noise_sd);
    }
    data.theta = std::move(theta);
  }

  data.split.y_pre = y.topRows(cfg.t0);
  data.split.x_pre = x.topRows(cfg.t0);
  data.true_y0_post = y.bottomRows(cfg.t1);
  data.split.y_post = data.true_y0_post.array() + cfg.tau;
  data.split.x_post = x.bottomRows(cfg.t1);
  data.true_delta = cfg.tau;
  return data;
}

std::vector<double> default_msc_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 50; ++k) grid.push_back(k / 100.0);
  return grid;
}

std::vector<double> default_scul_grid(const DesignSplit& split) {
  const double lambda_max =
      (split.x_pre.transpose() * split.y_pre).cwiseAbs().maxCoeff() / split.t0();
  if (!(lambda_max > 0.0)) return {0.0};
  return log_grid(1e-4 * lambda_max, lambda_max, 20);
}

std::vector<double> default_psc_grid() {
  std::vector<double> grid = {0.0};
  for (double v : log_grid(1e-4, 1.0, 9)) grid.push_back(v);
  return grid;
}

std::map<Method, double> resolve_lambdas(const SimConfig& cfg,
                                         const ExperimentOptions& options) {
  cfg.validate();
  options.validate();
  std::map<Method, double> out;
  std::optional<GeneratedData> pilot;
  for (Method method : options.methods) {
    if (method == Method::kRols) {
      out[method] = options.rols_ridge;
      continue;
    }
    if (auto it = options.overrides.find(method); it != options.overrides.end()) {
      out[method] = it->second;
      continue;
    }
    const auto kind = options.policy.kind;
    if (kind == LambdaPolicy::Kind::kFixed) {
      out[method] = options.policy.value;
      continue;
    }
    if (kind == LambdaPolicy::Kind::kCorollary && method == Method::kMsc) {
      out[method] = default_lambda(cfg.n, cfg.t0, options.msc.c);
      continue;
    }
    if (!pilot) pilot = gen_setting(for_replication(cfg, 0));
    DesignSplit split = pilot->split;
    if (method != Method::kMsc && options.cv_units > 0 && options.cv_units < split.m()) {
      split.y_pre = split.y_pre.leftCols(options.cv_units).eval();
      split.y_post = split.y_post.leftCols(options.cv_units).eval();
    }
    std::vector<double> grid;
    switch (method) {
      case Method::kMsc:
        grid = options.msc_grid.empty() ? default_msc_grid() : options.msc_grid;
        break;
      case Method::kScul:
        grid = options.scul_grid.empty() ? default_scul_grid(split) : options.scul_grid;
        break;
      default:
        grid = options.psc_grid.empty() ? default_psc_grid() : options.psc_grid;
        break;
    }
    const WeightFitter fitter = [&options, method](const DesignSplit& fold, double lambda) {
      return fit_weights(fold, method, lambda, options, nullptr);
    };
    out[method] = cross_validate(split, grid, options.cv_blocks, fitter, options.threads)
                      .best_lambda;
  }
  return out;
}

SimRecord run_method(const GeneratedData& data, Method method, double lambda,
                     const ExperimentOptions& options) {
  SimRecord record;
  record.method = method;
  record.m = data.split.m();
  record.lambda = lambda;
  const Matrix theta = fit_weights(data.split, method, lambda, options, &record.fit_seconds);
  const Matrix counterfactual = predict_counterfactual(theta, data.split.x_post);
  const EffectReport effects = att(data.split.y_post, counterfactual);
  record.rmse = rmse(counterfactual, data.true_y0_post);
  record.att_bias = effects.att - data.true_delta;
  return record;
}

std::vector<SimAggregate> aggregate(const std::vector<SimRecord>& records,
                                    const std::map<Method, double>& lambdas) {
  std::vector<SimAggregate> out;
  auto find = [&](Method method, int m) -> SimAggregate& {
    for (auto& a : out) {
      if (a.method == method && a.m == m) return a;
    }
    SimAggregate a;
    a.method = method;
    a.m = m;
    if (auto it = lambdas.find(method); it != lambdas.end()) a.lambda = it->second;
    out.push_back(a);
    return out.back();
  };
  std::map<std::pair<int, int>, std::vector<const SimRecord*>> groups;
  for (const SimRecord& r : records) {
    SimAggregate& a = find(r.method, r.m);
    if (!r.ok) {
      ++a.skipped;
      continue;
    }
    groups[{static_cast<int>(r.method), r.m}].push_back(&r);
  }
  for (SimAggregate& a : out) {
    const auto& group = groups[{static_cast<int>(a.method), a.m}];
    std::vector<double> rmse_v, bias_v, secs_v;
    for (const SimRecord* r : group) {
      rmse_v.push_back(r->rmse);
      bias_v.push_back(r->att_bias);
      secs_v.push_back(r->fit_seconds);
    }
    a.count = static_cast<int>(group.size());
    const MeanSe rm = summarize(rmse_v);
    const MeanSe bi = summarize(bias_v);
    const MeanSe se = summarize(secs_v);
    a.mean_rmse = rm.mean;
    a.se_rmse = rm.se;
    a.mean_att_bias = bi.mean;
    a.se_att_bias = bi.se;
    a.sd_att_bias = bi.sd;
    a.mean_seconds = se.mean;
    a.se_seconds = se.se;
  }
  return out;
}

SimResult run_experiment(const SimConfig& cfg, const ExperimentOptions& options) {
  cfg.validate();
  options.validate();
  SimResult result;
  result.config = cfg;
  result.lambdas = resolve_lambdas(cfg, options);

  const std::size_t per_rep = options.methods.size();
  result.records.resize(static_cast<std::size_t>(cfg.replications) * per_rep);
  parallel_for(static_cast<std::size_t>(cfg.replications), options.threads,
               [&](std::size_t rep) {
    const int r = static_cast<int>(rep);
    std::optional<GeneratedData> data;
    std::string data_error;
    try {
      data = gen_setting(for_replication(cfg, r));
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (std::size_t k = 0; k < per_rep; ++k) {
      const Method method = options.methods[k];
      SimRecord& record = result.records[rep * per_rep + k];
      try {
        if (!data) throw Error(data_error);
        record = run_method(*data, method, result.lambdas.at(method), options);
      } catch (const std::exception& e) {
        record = SimRecord{};
        record.method = method;
        record.lambda = result.lambdas.at(method);
        record.ok = false;
        record.error = e.what();
        record.rmse = std::nan("");
        record.att_bias = std::nan("");
      }
      record.m = cfg.m;
      record.setting = cfg.setting;
      record.replication = r;
    }
  });
  result.aggregates = aggregate(result.records, result.lambdas);
  for (const SimRecord& r : result.records) result.skipped += r.ok ? 0 : 1;
  return result;
}

double linear_r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("linear_r_squared needs two equal-length series of >= 2 points");
  }
  const double count = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / count;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / count;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return syy == 0.0 ? 1.0 : 0.0;
  return sxy * sxy / (sxx * syy);
}

BenchResult bench_timing(const SimConfig& base, const std::vector<int>& m_values,
                         const ExperimentOptions& options) {
  if (m_values.empty()) throw ArgumentError("m sweep is empty");
  base.validate();
  options.validate();
  ExperimentOptions timed = options;
  timed.rols_per_unit = true;
  timed.threads = 1;
  SimConfig first = base;
  first.m = m_values.front();
  const std::map<Method, double> lambdas = resolve_lambdas(first, timed);

  BenchResult result;
  std::map<Method, std::vector<std::vector<double>>> seconds;
  for (int m : m_values) {
    SimConfig cfg = base;
    cfg.m = m;
    cfg.validate();
    std::map<Method, std::vector<double>> at_m;
    for (int r = 0; r < cfg.replications; ++r) {
      const GeneratedData data = gen_setting(for_replication(cfg, r));
      for (Method method : timed.methods) {
        double secs = 0.0;
        fit_weights(data.split, method, lambdas.at(method), timed, &secs);
        at_m[method].push_back(secs);
      }
    }
    for (Method method : timed.methods) seconds[method].push_back(at_m[method]);
  }
  for (Method method : timed.methods) {
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < m_values.size(); ++k) {
      const MeanSe s = summarize(seconds[method][k]);
      BenchRow row;
      row.method = method;
      row.m = m_values[k];
      row.replications = base.replications;
      row.mean_seconds = s.mean;
      row.se_seconds = s.se;
      result.rows.push_back(row);
      xs.push_back(m_values[k]);
      ys.push_back(s.mean);
    }
    if (xs.size() >= 2) result.r_squared[method] = linear_r_squared(xs, ys);
  }
  return result;
}

void write_records_csv(const SimResult& result, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "method,m,setting,replication,rmse,att_bias,fit_seconds\n";
  for (const SimRecord& r : result.records) {
    out << method_name(r.method) << ',' << r.m << ',' << r.setting << ','
        << r.replication << ',';
    if (r.ok) {
      out << number(r.rmse) << ',' << number(r.att_bias) << ',' << number(r.fit_seconds);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  finish(out, path);
}

void write_summary_json(const SimResult& result, const std::filesystem::path& path) {
  const SimConfig& c = result.config;
  json doc;
  doc["config"] = {{"setting", c.setting}, {"m", c.m},         {"n", c.n},
                   {"t0", c.t0},           {"t1", c.t1},       {"s", c.s},
                   {"noise_sd", c.noise_sd}, {"tau", c.tau},   {"replications", c.replications},
                   {"seed", c.seed},       {"burn_in", c.burn_in}};
  json methods = json::object();
  for (const SimAggregate& a : result.aggregates) {
    methods[std::string(method_name(a.method))] = {
        {"m", a.m},
        {"lambda", a.lambda},
        {"replications", a.count},
        {"skipped", a.skipped},
        {"mean_rmse", a.mean_rmse},
        {"se_rmse", a.se_rmse},
        {"mean_att_bias", a.mean_att_bias},
        {"se_att_bias", a.se_att_bias},
        {"sd_att_bias", a.sd_att_bias}};
  }
  doc["methods"] = methods;
  json failures = json::array();
  for (const SimRecord& r : result.records) {
    if (!r.ok) {
      failures.push_back({{"method", std::string(method_name(r.method))},
                          {"replication", r.replication},
                          {"error", r.error}});
    }
  }
  doc["skipped"] = result.skipped;
  doc["failures"] = failures;
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
  finish(out, path);
}

void write_timing_json(const SimResult& result, const std::filesystem::path& path) {
  json doc = json::object();
  for (const SimAggregate& a : result.aggregates) {
    doc[std::string(method_name(a.method))] = {{"mean_seconds", a.mean_seconds},
                                               {"se_seconds", a.se_seconds}};
  }
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
  finish(out, path);
}

void write_bench_csv(const BenchResult& result, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "method,m,replications,mean_seconds,se_seconds\n";
  for (const BenchRow& row : result.rows) {
    out << method_name(row.method) << ',' << row.m << ',' << row.replications << ','
        << number(row.mean_seconds) << ',' << number(row.se_seconds) << '\n';
  }
  finish(out, path);
}

void write_bench_json(const BenchResult& result, const std::filesystem::path& path) {
  json doc;
  json rows = json::array();
  for (const BenchRow& row : result.rows) {
    rows.push_back({{"method", std::string(method_name(row.method))},
                    {"m", row.m},
                    {"replications", row.replications},
                    {"mean_seconds", row.mean_seconds},
                    {"se_seconds", row.se_seconds}});
  }
  doc["rows"] = rows;
  json r2 = json::object();
  for (const auto& [method, value] : result.r_squared) {
    r2[std::string(method_name(method))] = value;
  }
  doc["r_squared"] = r2;
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
  finish(out, path);
}

}  // namespace msc
