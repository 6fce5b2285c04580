// mvcp: calibrate distribution-free prediction sets on residual data and
// evaluate their coverage/volume. See README.md for the full interface.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mvcp/dataio.hpp"
#include "mvcp/evalharness.hpp"
#include "mvcp/relmcp.hpp"
#include "mvcp/remmcp.hpp"
#include "mvcp/scp.hpp"

namespace {

using namespace mvcp;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInsufficientData = 2;
constexpr int kExitNoCertifiedSolution = 3;
constexpr int kExitBadInput = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitInternal = 6;

struct CalibrateArgs {
  std::string method = "remmcp";
  std::string score = "ellipsoid";
  double eps = 0.05;
  double beta = 0.05;
  std::uint64_t seed = 0;
  double split_fraction = 0.25;
  int clusters = 3;
  int relmcp_starts = 3;
  long relmcp_inner_iters = 2000;
  std::string input;
  std::string output;
};

struct CertifyArgs {
  std::string model;
  long n_cal = 0;
  int n_q = 0;
  long rho = -1;
  double eps = 0.0;
};

struct PredictArgs {
  std::string model;
  std::string input;
  std::string output;
};

struct EvaluateArgs {
  std::string model;
  std::string test;
  std::string cal;
  long mc_samples = 100000;
  std::uint64_t seed = 0;
  std::string report;
  bool no_timing = false;
};

struct SynthArgs {
  std::string preset;
  std::string spec;
  long n = 1000;
  std::uint64_t seed = 0;
  std::string output;
};

struct ExperimentArgs {
  std::string config;
  std::string output_dir = ".";
  int workers = 0;
  bool no_timing = false;
};

void print_certificate(const Certificate& cert) {
  std::cout << "method=" << cert.method
            << " eps_target=" << format_double(cert.eps_target)
            << " expected_bound=" << format_double(cert.expected_bound)
            << " beta=" << format_double(cert.beta);
  if (cert.beta_dist)
    std::cout << " beta_dist=(" << format_double(cert.beta_dist->first) << ","
              << format_double(cert.beta_dist->second) << ")";
  else
    std::cout << " beta_dist=none";
  std::cout << " assumptions_convex="
            << (cert.assumptions_convex ? "true" : "false")
            << " adaptive_penalty_grid="
            << (cert.adaptive_penalty_grid ? "true" : "false") << "\n";
}

int run_calibrate(const CalibrateArgs& args) {
  const ResidualMatrix cal = read_residuals_csv(args.input);
  if (cal.rows() == 0) throw EmptyInput("calibration CSV has no rows");
  const int n_y = static_cast<int>(cal.cols());
  const long n = cal.rows();

  CalibratedModel model;
  std::string summary_mid;

  if (args.method == "scp1" || args.method == "scp-dim") {
    const ScpModel m = args.method == "scp1" ? scp1_calibrate(cal, args.eps)
                                             : scp_dimwise_model(cal, args.eps);
    model.set = m.set;
    model.method = args.method;
    model.certificate = args.method == "scp1"
                            ? scp_certificate(n, args.eps)
                            : scp_dimwise_certificate(n, args.eps, n_y);
    model.rho = args.method == "scp1"
                    ? scp_outlier_budget(n, args.eps)
                    : scp_outlier_budget(n, args.eps / n_y);
    summary_mid = "rho=" + std::to_string(model.rho);
  } else if (args.method == "scp-split-a" || args.method == "scp-split-b") {
    const char variant = args.method.back() == 'a' ? 'A' : 'B';
    const ScpModel m =
        scp_split_calibrate(cal, args.eps, args.split_fraction, variant,
                            args.clusters, args.seed);
    if (m.covariance_regularized)
      std::cerr << "warning: sample covariance was regularized to stay "
                   "positive definite\n";
    model.set = m.set;
    model.method = args.method;
    model.certificate = scp_certificate(m.n_reserved, args.eps);
    model.rho = scp_outlier_budget(m.n_reserved, args.eps);
    summary_mid = "rho=" + std::to_string(model.rho);
  } else if (args.method == "remmcp") {
    const FamilyPtr family = parse_family(args.score, n_y);
    RemmcpOutput out = remmcp_calibrate(family, cal, args.eps, args.seed);
    model = std::move(out.model);
    summary_mid = "rho=" + std::to_string(model.rho);
  } else if (args.method == "relmcp") {
    const FamilyPtr family = parse_family(args.score, n_y);
    RelmcpConfig config;
    config.eps_target = args.eps;
    config.beta_target = args.beta;
    config.seed = args.seed;
    config.n_starts = args.relmcp_starts;
    config.inner_max_iters = args.relmcp_inner_iters;
    const auto res = relmcp_calibrate(family, cal, config);
    if (!res) {
      std::cerr << "relmcp: no certified valid solution at eps="
                << format_double(args.eps) << ", beta="
                << format_double(args.beta) << " with n_cal=" << n
                << "; increase the calibration set or loosen the target\n";
      return kExitNoCertifiedSolution;
    }
    model = relmcp_model(family, *res, cal, config);
    summary_mid =
        "phi=" + format_double(res->phi) + " d=" + std::to_string(res->d);
  } else {
    throw DomainError("unknown method '" + args.method + "'");
  }

  model.n_cal = n;
  model.eps = args.eps;
  model.seed = args.seed;
  save_model(record_from_model(model), args.output);

  std::cout << "method=" << model.method << " n_q=" << model.set.q.size()
            << " " << summary_mid << " eps_certified="
            << format_double(model.certificate.expected_bound)
            << " beta=" << format_double(model.certificate.beta) << "\n";
  return kExitOk;
}

int run_certify(const CertifyArgs& args) {
  if (!args.model.empty()) {
    const ModelRecord rec = load_model(args.model);
    print_certificate(rec.certificate);
    return kExitOk;
  }
  if (args.n_cal <= 0 || args.n_q <= 0 || args.rho < 0)
    throw DomainError(
        "certify needs --model, or all of --ncal, --nq, --rho, --eps");
  print_certificate(
      remmcp_certificate(args.n_cal, args.n_q, args.rho, args.eps));
  return kExitOk;
}

int run_predict(const PredictArgs& args) {
  const CalibratedModel model = model_from_record(load_model(args.model));
  const ResidualMatrix pts = read_residuals_csv(args.input);
  if (pts.cols() != model.set.family->n_y())
    throw DimensionMismatch("query points have dimension " +
                            std::to_string(pts.cols()) + ", model expects " +
                            std::to_string(model.set.family->n_y()));
  std::ofstream out(args.output, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + args.output);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) out << 'r' << (j + 1) << ',';
  out << "member\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < pts.cols(); ++j)
      out << format_double(pts(i, j)) << ',';
    out << (membership(model.set, pts.row(i).transpose()) ? 1 : 0) << '\n';
  }
  return kExitOk;
}

int run_evaluate(const EvaluateArgs& args) {
  const CalibratedModel model = model_from_record(load_model(args.model));
  const ResidualMatrix test = read_residuals_csv(args.test);
  // box support for data-adaptive bounding boxes; the test set stands in
  // when no calibration file is provided
  const ResidualMatrix support =
      args.cal.empty() ? test : read_residuals_csv(args.cal);

  const auto t0 = std::chrono::steady_clock::now();
  const double coverage = empirical_coverage(model.set, test);
  const VolumeEstimate vol =
      mc_volume(model.set, support, args.mc_samples, args.seed);
  const double elapsed =
      args.no_timing ? 0.0
                     : std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();

  std::cout << "coverage=" << format_double(coverage)
            << " volume=" << format_double(vol.estimate)
            << " stderr=" << format_double(vol.stderr_) << "\n";

  if (!args.report.empty()) {
    const bool exists = std::filesystem::exists(args.report);
    long run_id = 0;
    if (exists) {
      std::ifstream in(args.report);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) ++run_id;
      if (run_id > 0) --run_id;  // header
    }
    std::ofstream out(args.report, std::ios::binary | std::ios::app);
    if (!out) throw ParseError("cannot open for writing: " + args.report);
    if (!exists)
      out << "run_id,method,seed,n_cal,eps,coverage,volume,volume_stderr,"
             "time_ms\n";
    out << run_id << ',' << model.method << ',' << args.seed << ','
        << model.n_cal << ',' << format_double(model.eps) << ','
        << format_double(coverage) << ',' << format_double(vol.estimate) << ','
        << format_double(vol.stderr_) << ',' << format_double(elapsed) << '\n';
  }
  return kExitOk;
}

int run_synth(const SynthArgs& args) {
  GeneratorSpec spec;
  if (!args.spec.empty()) {
    spec = load_generator(args.spec);
  } else if (args.preset == "trimodal") {
    spec = GeneratorSpec::trimodal2d();
  } else if (args.preset.rfind("gauss:", 0) == 0) {
    const int dim = std::stoi(args.preset.substr(6));
    spec = GeneratorSpec::gaussian(Mat::Identity(dim, dim));
  } else {
    throw DomainError("synth needs --spec FILE or --preset trimodal|gauss:D");
  }
  write_residuals_csv(gen_residuals(spec, args.n, args.seed), args.output);
  std::cout << "wrote " << args.n << " samples of dimension " << spec.n_y
            << " to " << args.output << "\n";
  return kExitOk;
}

int run_experiment_cmd(const ExperimentArgs& args) {
  ExperimentConfig config = load_experiment_config(args.config);
  if (args.workers > 0) config.workers = args.workers;
  if (args.no_timing) config.zero_timings = true;

  const auto reports = run_experiment(config);
  std::filesystem::create_directories(args.output_dir);
  const std::string report_path = args.output_dir + "/report.csv";
  write_report_csv(reports, report_path);

  // one theoretical coverage curve per method with an exact Beta law
  std::vector<std::string> curve_written;
  for (const auto& r : reports) {
    if (!r.certificate || !r.certificate->beta_dist) continue;
    if (std::find(curve_written.begin(), curve_written.end(), r.method) !=
        curve_written.end())
      continue;
    curve_written.push_back(r.method);
    const auto curve = beta_curve(r.certificate->beta_dist->first,
                                  r.certificate->beta_dist->second, 512);
    std::ofstream out(args.output_dir + "/beta_" + r.method + ".csv",
                      std::ios::binary);
    out << "coverage,density\n";
    for (std::size_t i = 0; i < curve.coverage.size(); ++i)
      out << format_double(curve.coverage[i]) << ','
          << format_double(curve.density[i]) << '\n';
  }

  for (const auto& summary : aggregate(reports)) {
    std::cout << summary.method << ": ok=" << summary.n_ok
              << " failed=" << summary.n_failed;
    if (summary.n_ok > 0)
      std::cout << " coverage_mean=" << format_double(summary.coverage.mean)
                << " coverage_std=" << format_double(summary.coverage.stddev)
                << " volume_mean=" << format_double(summary.volume.mean);
    std::cout << "\n";
  }
  std::cout << "report written to " << report_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-sample-valid prediction sets on residual data"};
  app.require_subcommand(1);

  CalibrateArgs cal_args;
  auto* cal_cmd =
      app.add_subcommand("calibrate", "Calibrate a prediction set on residuals");
  cal_cmd->add_option("--method", cal_args.method,
                      "scp1|scp-dim|scp-split-a|scp-split-b|remmcp|relmcp")
      ->check(CLI::IsMember({"scp1", "scp-dim", "scp-split-a", "scp-split-b",
                             "remmcp", "relmcp"}));
  cal_cmd->add_option("--score", cal_args.score,
                      "sphere|interval|ellipsoid|union:K|rbf:N");
  cal_cmd->add_option("--eps", cal_args.eps, "target miscoverage in (0,1)")
      ->check(CLI::Range(1e-12, 1.0 - 1e-12));
  cal_cmd->add_option("--beta", cal_args.beta, "confidence complement for relmcp")
      ->check(CLI::Range(1e-12, 1.0 - 1e-12));
  cal_cmd->add_option("--seed", cal_args.seed, "RNG seed");
  cal_cmd->add_option("--split-fraction", cal_args.split_fraction,
                      "reserved fraction for scp-split methods");
  cal_cmd->add_option("--clusters", cal_args.clusters, "K for scp-split-b");
  cal_cmd->add_option("--relmcp-starts", cal_args.relmcp_starts,
                      "multi-start count for relmcp");
  cal_cmd->add_option("--relmcp-inner-iters", cal_args.relmcp_inner_iters,
                      "inner iteration cap for relmcp");
  cal_cmd->add_option("--input", cal_args.input, "calibration residual CSV")
      ->required();
  cal_cmd->add_option("--output", cal_args.output, "model JSON path")
      ->required();

  CertifyArgs cert_args;
  auto* cert_cmd =
      app.add_subcommand("certify", "Print a model's coverage certificate");
  cert_cmd->add_option("--model", cert_args.model, "model JSON path");
  cert_cmd->add_option("--ncal", cert_args.n_cal, "calibration size");
  cert_cmd->add_option("--nq", cert_args.n_q, "parameter dimension");
  cert_cmd->add_option("--rho", cert_args.rho, "outlier budget");
  cert_cmd->add_option("--eps", cert_args.eps, "target miscoverage");

  PredictArgs pred_args;
  auto* pred_cmd = app.add_subcommand(
      "predict", "Evaluate set membership for query residuals");
  pred_cmd->add_option("--model", pred_args.model)->required();
  pred_cmd->add_option("--input", pred_args.input, "query CSV")->required();
  pred_cmd->add_option("--output", pred_args.output, "output CSV")->required();

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "Empirical coverage and Monte Carlo volume of a model");
  eval_cmd->add_option("--model", eval_args.model)->required();
  eval_cmd->add_option("--test", eval_args.test, "test residual CSV")->required();
  eval_cmd->add_option("--cal", eval_args.cal,
                       "calibration CSV (bounding-box support)");
  eval_cmd->add_option("--mc-samples", eval_args.mc_samples);
  eval_cmd->add_option("--seed", eval_args.seed);
  eval_cmd->add_option("--report", eval_args.report,
                       "append a run-report row to this CSV");
  eval_cmd->add_flag("--no-timing", eval_args.no_timing,
                     "write time_ms as 0 for reproducible outputs");

  SynthArgs synth_args;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate synthetic residual CSVs");
  synth_cmd->add_option("--preset", synth_args.preset, "trimodal | gauss:D");
  synth_cmd->add_option("--spec", synth_args.spec, "generator spec JSON");
  synth_cmd->add_option("--n", synth_args.n, "sample count");
  synth_cmd->add_option("--seed", synth_args.seed);
  synth_cmd->add_option("--output", synth_args.output)->required();

  ExperimentArgs exp_args;
  auto* exp_cmd = app.add_subcommand(
      "experiment", "Run a multi-method sweep from a JSON config");
  exp_cmd->add_option("--config", exp_args.config)->required();
  exp_cmd->add_option("--output-dir", exp_args.output_dir);
  exp_cmd->add_option("--workers", exp_args.workers,
                      "thread count (overrides the config)");
  exp_cmd->add_flag("--no-timing", exp_args.no_timing,
                    "write time_ms as 0 for reproducible outputs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cal_cmd->parsed()) return run_calibrate(cal_args);
    if (cert_cmd->parsed()) return run_certify(cert_args);
    if (pred_cmd->parsed()) return run_predict(pred_args);
    if (eval_cmd->parsed()) return run_evaluate(eval_args);
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (exp_cmd->parsed()) return run_experiment_cmd(exp_args);
  } catch (const InsufficientData& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInsufficientData;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what();
    if (e.line() >= 0) std::cerr << " (line " << e.line() << ")";
    std::cerr << "\n";
    return kExitBadInput;
  } catch (const SchemaMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
