#include "mvcp/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mvcp/remmcp.hpp"
#include "mvcp/scp.hpp"
#include "mvcp/special.hpp"

namespace mvcp {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (methods.empty()) throw DomainError("experiment: no methods");
  if (n_runs < 1) throw DomainError("experiment: n_runs must be >= 1");
  if (n_cal < 1 || n_test < 1)
    throw DomainError("experiment: n_cal and n_test must be >= 1");
  if (mc_samples < 1) throw DomainError("experiment: mc_samples must be >= 1");
  if (!(eps > 0.0 && eps < 1.0) || !(beta > 0.0 && beta < 1.0))
    throw DomainError("experiment: eps and beta must lie in (0,1)");
  if (workers < 1) throw DomainError("experiment: workers must be >= 1");
  if (!generator && input_path.empty())
    throw DomainError("experiment: need a generator spec or an input path");
}

double empirical_coverage(const PredictionSet& set, const ResidualMatrix& test) {
  if (test.rows() == 0) throw EmptyInput("empirical_coverage: empty test set");
  long hits = 0;
  for (Eigen::Index i = 0; i < test.rows(); ++i)
    if (membership(set, test.row(i).transpose())) ++hits;
  return static_cast<double>(hits) / test.rows();
}

VolumeEstimate mc_volume(const PredictionSet& set, const ResidualMatrix& cal,
                         long n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw DomainError("mc_volume: n_samples must be >= 1");
  const Box box = set.family->bounding_box(set.q, cal);
  VolumeEstimate est;
  est.box_volume = box.volume();
  if (est.box_volume <= 0.0) return est;  // degenerate set: zero volume

  Rng rng(seed);
  Vec r;
  for (long i = 0; i < n_samples; ++i) {
    box.sample(rng, r);
    if (membership(set, r)) ++est.hits;
  }
  const double p = static_cast<double>(est.hits) / n_samples;
  est.estimate = est.box_volume * p;
  est.stderr_ = est.box_volume * std::sqrt(p * (1.0 - p) / n_samples);
  return est;
}

namespace {

double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

RunReport run_method(const MethodSpec& spec, const ResidualMatrix& cal,
                     const ResidualMatrix& test, const ExperimentConfig& config,
                     long run_id, std::uint64_t run_seed) {
  RunReport report;
  report.run_id = run_id;
  report.method = spec.name.empty() ? spec.method : spec.name;
  report.seed = run_seed;
  report.n_cal = cal.rows();
  report.eps = config.eps;

  const int n_y = static_cast<int>(cal.cols());
  try {
    PredictionSet set;
    const auto t0 = std::chrono::steady_clock::now();
    if (spec.method == "scp1") {
      const ScpModel m = scp1_calibrate(cal, config.eps);
      set = m.set;
      report.certificate = scp_certificate(m.n_reserved, config.eps);
    } else if (spec.method == "scp-dim") {
      const ScpModel m = scp_dimwise_model(cal, config.eps);
      set = m.set;
      report.certificate = scp_dimwise_certificate(cal.rows(), config.eps, n_y);
    } else if (spec.method == "scp-split-a" || spec.method == "scp-split-b") {
      const char variant = spec.method.back() == 'a' ? 'A' : 'B';
      const ScpModel m = scp_split_calibrate(cal, config.eps,
                                             spec.split_fraction, variant,
                                             spec.clusters, run_seed);
      set = m.set;
      report.certificate = scp_certificate(m.n_reserved, config.eps);
    } else if (spec.method == "remmcp") {
      const FamilyPtr family = parse_family(spec.score, n_y);
      const RemmcpOutput out = remmcp_calibrate(family, cal, config.eps, run_seed);
      set = out.model.set;
      report.certificate = out.certificate;
    } else if (spec.method == "relmcp") {
      const FamilyPtr family = parse_family(spec.score, n_y);
      RelmcpConfig rc;
      rc.eps_target = config.eps;
      rc.beta_target = config.beta;
      rc.seed = run_seed;
      rc.n_starts = spec.relmcp_starts;
      rc.inner_max_iters = spec.relmcp_inner_iters;
      const auto res = relmcp_calibrate(family, cal, rc);
      if (!res) {
        report.time_ms = config.zero_timings ? 0.0 : ms_since(t0);
        report.error = "relmcp: no certified valid solution";
        return report;
      }
      const CalibratedModel model = relmcp_model(family, *res, cal, rc);
      set = model.set;
      report.certificate = model.certificate;
    } else {
      throw DomainError("unknown method '" + spec.method + "'");
    }
    report.time_ms = config.zero_timings ? 0.0 : ms_since(t0);

    report.coverage = empirical_coverage(set, test);
    const VolumeEstimate vol =
        mc_volume(set, cal, config.mc_samples, run_seed ^ 0x4d435f564f4cULL);
    report.volume = vol.estimate;
    report.volume_stderr = vol.stderr_;
    report.ok = true;
  } catch (const Error& e) {
    report.error = e.what();
  }
  return report;
}

std::vector<RunReport> run_experiment(const ExperimentConfig& config) {
  config.validate();

  ResidualMatrix pool;
  if (!config.generator) {
    pool = read_residuals_csv(config.input_path);
    if (pool.rows() < config.n_cal + config.n_test)
      throw InsufficientData("experiment: input has " +
                             std::to_string(pool.rows()) +
                             " rows, needs n_cal + n_test = " +
                             std::to_string(config.n_cal + config.n_test));
  }

  const long total = config.n_runs;
  std::vector<std::vector<RunReport>> per_run(total);

  std::atomic<long> next{0};
  auto worker = [&]() {
    while (true) {
      const long r = next.fetch_add(1);
      if (r >= total) break;
      const std::uint64_t run_seed =
          config.base_seed ^ static_cast<std::uint64_t>(r);

      ResidualMatrix cal, test;
      if (config.generator) {
        Rng rng(run_seed);
        cal = gen_residuals(*config.generator, config.n_cal, rng.next());
        test = gen_residuals(*config.generator, config.n_test, rng.next());
      } else {
        std::vector<int> order(pool.rows());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(run_seed);
        rng.shuffle(order);
        cal.resize(config.n_cal, pool.cols());
        test.resize(config.n_test, pool.cols());
        for (long i = 0; i < config.n_cal; ++i) cal.row(i) = pool.row(order[i]);
        for (long i = 0; i < config.n_test; ++i)
          test.row(i) = pool.row(order[config.n_cal + i]);
      }

      per_run[r].reserve(config.methods.size());
      for (const auto& spec : config.methods)
        per_run[r].push_back(run_method(spec, cal, test, config, r, run_seed));
    }
  };

  const int n_threads = static_cast<int>(
      std::min<long>(config.workers, total));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<RunReport> reports;
  reports.reserve(total * config.methods.size());
  for (auto& batch : per_run)
    for (auto& rep : batch) reports.push_back(std::move(rep));
  return reports;
}

BetaCurve beta_curve(double a, double b, int n_points) {
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError("beta_curve: require a > 0 and b > 0");
  if (n_points < 2) throw DomainError("beta_curve: need at least 2 points");

  const double mean = a / (a + b);
  const double sigma = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1.0)));
  const double lo = std::max(0.0, mean - 8.0 * sigma);
  const double hi = std::min(1.0, mean + 8.0 * sigma);
  const double lnB = log_beta(a, b);

  BetaCurve curve;
  curve.coverage.resize(n_points);
  curve.density.resize(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double x = lo + (hi - lo) * i / (n_points - 1);
    curve.coverage[i] = x;
    double logpdf;
    if ((x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0)) {
      logpdf = std::numeric_limits<double>::infinity();
    } else if ((x == 0.0 && a > 1.0) || (x == 1.0 && b > 1.0)) {
      logpdf = -std::numeric_limits<double>::infinity();
    } else {
      logpdf = (a - 1.0) * std::log(x == 0.0 ? 1.0 : x) +
               (b - 1.0) * std::log1p(x == 1.0 ? 0.0 : -x) - lnB;
    }
    curve.density[i] = std::exp(logpdf);
  }
  // renormalize the trapezoid integral to 1 over the clipped window
  double integral = 0.0;
  for (int i = 0; i + 1 < n_points; ++i)
    integral += 0.5 * (curve.density[i] + curve.density[i + 1]) *
                (curve.coverage[i + 1] - curve.coverage[i]);
  if (integral > 0.0)
    for (auto& d : curve.density) d /= integral;
  return curve;
}

SummaryStats summarize(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("summarize: no values");
  std::sort(values.begin(), values.end());
  SummaryStats s;
  s.count = static_cast<long>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = s.count > 1 ? std::sqrt(ss / (s.count - 1)) : 0.0;

  // linear-interpolation quantiles over the sorted sample
  auto quantile = [&](double p) {
    const double pos = p * (s.count - 1);
    const long i = static_cast<long>(pos);
    if (i + 1 >= s.count) return values.back();
    const double frac = pos - i;
    return values[i] * (1.0 - frac) + values[i + 1] * frac;
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  const double iqr = s.q3 - s.q1;
  s.lo_whisker = std::max(values.front(), s.q1 - 1.5 * iqr);
  s.hi_whisker = std::min(values.back(), s.q3 + 1.5 * iqr);
  return s;
}

std::vector<MethodSummary> aggregate(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw EmptyInput("aggregate: no reports");
  std::vector<std::string> order;
  for (const auto& r : reports)
    if (std::find(order.begin(), order.end(), r.method) == order.end())
      order.push_back(r.method);

  std::vector<MethodSummary> out;
  for (const auto& name : order) {
    MethodSummary ms;
    ms.method = name;
    std::vector<double> cov, vol;
    for (const auto& r : reports) {
      if (r.method != name) continue;
      if (!r.ok) {
        ++ms.n_failed;
        continue;
      }
      ++ms.n_ok;
      cov.push_back(r.coverage);
      vol.push_back(r.volume);
    }
    if (!cov.empty()) {
      ms.coverage = summarize(cov);
      ms.volume = summarize(vol);
    }
    out.push_back(std::move(ms));
  }
  return out;
}

void write_report_csv(const std::vector<RunReport>& reports,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "run_id,method,seed,n_cal,eps,coverage,volume,volume_stderr,time_ms\n";
  for (const auto& r : reports) {
    out << r.run_id << ',' << r.method << ',' << r.seed << ',' << r.n_cal
        << ',' << format_double(r.eps) << ',' << format_double(r.coverage)
        << ',' << format_double(r.volume) << ','
        << format_double(r.volume_stderr) << ',' << format_double(r.time_ms)
        << '\n';
  }
  if (!out) throw ParseError("write failed: " + path);
}

namespace {

MethodSpec method_spec_from_json(const json& j) {
  static const std::initializer_list<const char*> keys = {
      "name",     "method",        "score",
      "split_fraction", "clusters", "relmcp_starts", "relmcp_inner_iters"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : keys)
      if (key == a) ok = true;
    if (!ok) throw SchemaMismatch("unknown key '" + key + "' in method spec");
  }
  MethodSpec spec;
  spec.method = j.at("method").get<std::string>();
  spec.name = j.value("name", spec.method);
  spec.score = j.value("score", std::string("sphere"));
  spec.split_fraction = j.value("split_fraction", 0.25);
  spec.clusters = j.value("clusters", 3);
  spec.relmcp_starts = j.value("relmcp_starts", 3);
  spec.relmcp_inner_iters = j.value("relmcp_inner_iters", 2000L);
  return spec;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  static const std::initializer_list<const char*> keys = {
      "methods", "generator", "input",      "n_runs", "n_cal",
      "n_test",  "eps",       "beta",       "mc_samples", "base_seed",
      "workers", "zero_timings"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : keys)
      if (key == a) ok = true;
    if (!ok)
      throw SchemaMismatch("unknown key '" + key + "' in experiment config");
  }

  ExperimentConfig config;
  try {
    for (const auto& mj : j.at("methods"))
      config.methods.push_back(method_spec_from_json(mj));
    if (j.contains("generator"))
      config.generator = parse_generator_json(j.at("generator").dump());
    config.input_path = j.value("input", std::string());
    config.n_runs = j.value("n_runs", 1L);
    config.n_cal = j.at("n_cal").get<long>();
    config.n_test = j.value("n_test", 1000L);
    config.eps = j.at("eps").get<double>();
    config.beta = j.value("beta", 0.05);
    config.mc_samples = j.value("mc_samples", 100000L);
    config.base_seed = j.value("base_seed", 0ULL);
    config.workers = j.value("workers", 1);
    config.zero_timings = j.value("zero_timings", false);
  } catch (const json::exception& e) {
    throw SchemaMismatch(std::string("experiment config: ") + e.what());
  }
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open experiment config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

}  // namespace mvcp
