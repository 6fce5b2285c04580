#ifndef MVCP_EVALHARNESS_HPP
#define MVCP_EVALHARNESS_HPP

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mvcp/certificate.hpp"
#include "mvcp/dataio.hpp"
#include "mvcp/relmcp.hpp"
#include "mvcp/scores.hpp"

namespace mvcp {

// Per-run record of one method's calibration and evaluation.
struct RunReport {
  long run_id = 0;
  std::string method;
  std::uint64_t seed = 0;
  long n_cal = 0;
  double eps = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double volume = std::numeric_limits<double>::quiet_NaN();
  double volume_stderr = std::numeric_limits<double>::quiet_NaN();
  double time_ms = 0.0;
  std::optional<Certificate> certificate;
  bool ok = false;
  std::string error;  // e.g. "relmcp: no certified valid solution"
};

// One calibration method inside an experiment sweep.
struct MethodSpec {
  std::string name;     // report label
  std::string method;   // scp1 | scp-dim | scp-split-a | scp-split-b | remmcp | relmcp
  std::string score;    // sphere | interval | ellipsoid | union:K | rbf:N
  double split_fraction = 0.25;
  int clusters = 3;
  int relmcp_starts = 3;
  long relmcp_inner_iters = 2000;
};

struct ExperimentConfig {
  std::vector<MethodSpec> methods;
  std::optional<GeneratorSpec> generator;
  std::string input_path;  // alternative data source: residual CSV
  long n_runs = 1;
  long n_cal = 100;
  long n_test = 1000;
  double eps = 0.05;
  double beta = 0.05;
  long mc_samples = 100000;
  std::uint64_t base_seed = 0;
  int workers = 1;
  bool zero_timings = false;  // reproducible reports: write time_ms as 0

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Fraction of test residuals inside the set. Throws EmptyInput.
double empirical_coverage(const PredictionSet& set, const ResidualMatrix& test);

struct VolumeEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double box_volume = 0.0;
  long hits = 0;
};

// Monte Carlo volume: uniform draws inside the family's bounding box.
// estimate = box_volume * hits/n, stderr = box_volume * sqrt(p(1-p)/n).
VolumeEstimate mc_volume(const PredictionSet& set, const ResidualMatrix& cal,
                         long n_samples, std::uint64_t seed);

// Calibrate one method spec on (cal, test); never throws for per-run
// failures -- they come back with ok=false and the reason in `error`.
RunReport run_method(const MethodSpec& spec, const ResidualMatrix& cal,
                     const ResidualMatrix& test, const ExperimentConfig& config,
                     long run_id, std::uint64_t run_seed);

// Independent seeded runs (seed = base_seed xor-folded with the run index),
// executed on up to config.workers threads, reports ordered by (run, method).
std::vector<RunReport> run_experiment(const ExperimentConfig& config);

// Density table of Beta(a, b) over a uniform grid spanning mean +/- 8 sigma
// clipped to [0,1], renormalized so the trapezoid integral is 1.
struct BetaCurve {
  std::vector<double> coverage;
  std::vector<double> density;
};
BetaCurve beta_curve(double a, double b, int n_points);

struct SummaryStats {
  long count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double lo_whisker = 0.0;  // 1.5*IQR convention, clipped to the data range
  double hi_whisker = 0.0;
};

struct MethodSummary {
  std::string method;
  long n_ok = 0;
  long n_failed = 0;
  SummaryStats coverage;
  SummaryStats volume;
};

// Box-plot statistics per method over the successful runs.
std::vector<MethodSummary> aggregate(const std::vector<RunReport>& reports);

SummaryStats summarize(std::vector<double> values);

// Report CSV with the fixed column set
// run_id,method,seed,n_cal,eps,coverage,volume,volume_stderr,time_ms
void write_report_csv(const std::vector<RunReport>& reports,
                      const std::string& path);

}  // namespace mvcp

#endif  // MVCP_EVALHARNESS_HPP
