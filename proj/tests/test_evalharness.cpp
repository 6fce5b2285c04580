#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvcp/evalharness.hpp"
#include "mvcp/rng.hpp"
#include "mvcp/scp.hpp"

using namespace mvcp;

namespace {

PredictionSet unit_disk() {
  return {make_family(FamilyKind::Sphere, 2), Vec::Constant(1, 1.0)};
}

}  // namespace

TEST_CASE("empirical_coverage: boundary cases") {
  Rng rng(1);
  ResidualMatrix test(500, 2);
  for (int i = 0; i < 500; ++i)
    for (int j = 0; j < 2; ++j) test(i, j) = rng.normal();

  // a sphere big enough to contain everything
  PredictionSet all{make_family(FamilyKind::Sphere, 2), Vec::Constant(1, 100.0)};
  CHECK(empirical_coverage(all, test) == 1.0);

  // interval with zero widths contains only the origin
  PredictionSet point{make_family(FamilyKind::Interval, 2), Vec::Zero(2)};
  CHECK(empirical_coverage(point, test) == 0.0);

  CHECK_THROWS_AS(empirical_coverage(all, ResidualMatrix(0, 2)), EmptyInput);
}

TEST_CASE("empirical_coverage: unit disk vs standard Gaussian mass") {
  const auto spec = GeneratorSpec::gaussian(Mat::Identity(2, 2));
  const ResidualMatrix test = gen_residuals(spec, 10000, 5);
  const double cov = empirical_coverage(unit_disk(), test);
  CHECK(std::fabs(cov - (1.0 - std::exp(-0.5))) < 0.02);
}

TEST_CASE("mc_volume: unit disk area") {
  const ResidualMatrix none(0, 2);
  const auto est = mc_volume(unit_disk(), none, 100000, 7);
  CHECK(std::fabs(est.estimate - M_PI) < 0.05);
  CHECK(est.stderr_ > 0.0);
  CHECK(est.stderr_ < 0.01);
}

TEST_CASE("mc_volume: interval box is hit exactly") {
  Vec q(2);
  q << 1.0, 2.0;
  PredictionSet box{make_family(FamilyKind::Interval, 2), q};
  const auto est = mc_volume(box, ResidualMatrix(0, 2), 20000, 3);
  CHECK(est.estimate == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(est.stderr_ == 0.0);
}

TEST_CASE("mc_volume: disjoint unit disks add up") {
  Vec q(10);
  Vec identity;
  pack_lower(Mat::Identity(2, 2), identity);
  q.segment(0, 2) << 0.0, 0.0;
  q.segment(2, 3) = identity;
  q.segment(5, 2) << 5.0, 0.0;
  q.segment(7, 3) = identity;
  PredictionSet uni{make_family(FamilyKind::UnionEllipsoid, 2, 2), q};
  const auto est = mc_volume(uni, ResidualMatrix(0, 2), 200000, 11);
  CHECK(std::fabs(est.estimate - 2.0 * M_PI) < 0.1);
}

TEST_CASE("mc_volume: deterministic per seed, sqrt(n) stderr scaling") {
  const ResidualMatrix none(0, 2);
  const auto a = mc_volume(unit_disk(), none, 50000, 13);
  const auto b = mc_volume(unit_disk(), none, 50000, 13);
  CHECK(a.estimate == b.estimate);
  CHECK(a.hits == b.hits);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto small = mc_volume(unit_disk(), none, 20000, seed);
    const auto big = mc_volume(unit_disk(), none, 80000, seed);
    CHECK(big.stderr_ == doctest::Approx(small.stderr_ / 2.0).epsilon(0.2));
  }
}

TEST_CASE("beta_curve: uniform, mode location, normalization") {
  const auto flat = beta_curve(1.0, 1.0, 101);
  for (double d : flat.density) CHECK(d == doctest::Approx(1.0).epsilon(1e-9));

  const auto peaked = beta_curve(1901.0, 100.0, 2001);
  const auto it = std::max_element(peaked.density.begin(), peaked.density.end());
  const double mode = peaked.coverage[it - peaked.density.begin()];
  CHECK(mode == doctest::Approx(1900.0 / 1999.0).epsilon(1e-3));

  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < peaked.coverage.size(); ++i)
    integral += 0.5 * (peaked.density[i] + peaked.density[i + 1]) *
                (peaked.coverage[i + 1] - peaked.coverage[i]);
  CHECK(std::fabs(integral - 1.0) <= 1e-3);

  CHECK_THROWS_AS(beta_curve(0.0, 1.0, 10), DomainError);
}

TEST_CASE("aggregate: single report and hand-computed stats") {
  RunReport r;
  r.method = "m";
  r.ok = true;
  r.coverage = 0.9;
  r.volume = 3.0;
  const auto single = aggregate({r});
  REQUIRE(single.size() == 1);
  CHECK(single[0].coverage.mean == 0.9);
  CHECK(single[0].coverage.median == 0.9);
  CHECK(single[0].coverage.stddev == 0.0);

  std::vector<RunReport> reports;
  for (double c : {0.9, 0.95, 1.0}) {
    RunReport x;
    x.method = "m";
    x.ok = true;
    x.coverage = c;
    x.volume = 1.0;
    reports.push_back(x);
  }
  const auto stats = aggregate(reports);
  CHECK(stats[0].coverage.mean == doctest::Approx(0.95));
  CHECK(stats[0].coverage.median == doctest::Approx(0.95));

  // permutation invariance
  std::swap(reports[0], reports[2]);
  const auto stats2 = aggregate(reports);
  CHECK(stats2[0].coverage.mean == stats[0].coverage.mean);
  CHECK(stats2[0].coverage.q1 == stats[0].coverage.q1);
  CHECK(stats2[0].coverage.q3 == stats[0].coverage.q3);

  CHECK_THROWS_AS(aggregate({}), EmptyInput);
}

TEST_CASE("run_experiment: smoke, determinism, failure recording") {
  ExperimentConfig config;
  config.generator = GeneratorSpec::gaussian(Mat::Identity(2, 2));
  config.n_runs = 2;
  config.n_cal = 60;
  config.n_test = 200;
  config.eps = 0.1;
  config.beta = 0.2;
  config.mc_samples = 2000;
  config.base_seed = 77;
  MethodSpec scp1{"scp1", "scp1", "sphere", 0.25, 3, 3, 2000};
  config.methods = {scp1};

  const auto reports = run_experiment(config);
  REQUIRE(reports.size() == 2);
  for (const auto& r : reports) {
    CHECK(r.ok);
    CHECK(r.coverage >= 0.0);
    CHECK(r.coverage <= 1.0);
    CHECK(r.volume >= 0.0);
  }

  const auto again = run_experiment(config);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    CHECK(reports[i].coverage == again[i].coverage);
    CHECK(reports[i].volume == again[i].volume);
    CHECK(reports[i].seed == again[i].seed);
  }

  // a relmcp spec that cannot certify: failures recorded, sweep continues
  ExperimentConfig tiny = config;
  tiny.n_cal = 10;
  tiny.n_test = 50;
  tiny.eps = 0.01;
  MethodSpec rel{"relmcp", "relmcp", "sphere", 0.25, 3, 3, 500};
  tiny.methods = {scp1, rel};
  // scp1 with eps 0.01 on 10 points also fails (budget), so use eps rows apart
  tiny.methods[0].name = "scp1";
  const auto mixed = run_experiment(tiny);
  REQUIRE(mixed.size() == 4);
  for (const auto& r : mixed) CHECK_FALSE(r.ok);
  CHECK(mixed[1].error.find("relmcp") != std::string::npos);
}

TEST_CASE("run_experiment: workers do not change results") {
  ExperimentConfig config;
  config.generator = GeneratorSpec::trimodal2d();
  config.n_runs = 4;
  config.n_cal = 50;
  config.n_test = 100;
  config.eps = 0.2;
  config.mc_samples = 1000;
  config.base_seed = 5;
  config.methods = {MethodSpec{"scp1", "scp1", "sphere", 0.25, 3, 3, 2000}};

  config.workers = 1;
  const auto serial = run_experiment(config);
  config.workers = 4;
  const auto parallel = run_experiment(config);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].run_id == parallel[i].run_id);
    CHECK(serial[i].coverage == parallel[i].coverage);
    CHECK(serial[i].volume == parallel[i].volume);
  }
}

TEST_CASE("reports are invariant to test-set permutation") {
  const auto spec = GeneratorSpec::gaussian(Mat::Identity(2, 2));
  ResidualMatrix test = gen_residuals(spec, 500, 3);
  const PredictionSet disk = unit_disk();
  const double cov = empirical_coverage(disk, test);

  std::vector<int> order(test.rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(9);
  rng.shuffle(order);
  ResidualMatrix shuffled(test.rows(), test.cols());
  for (int i = 0; i < test.rows(); ++i) shuffled.row(i) = test.row(order[i]);
  CHECK(empirical_coverage(disk, shuffled) == cov);
}

TEST_CASE("experiment config JSON parsing") {
  const std::string text = R"({
    "methods": [
      {"method": "scp1"},
      {"method": "remmcp", "score": "interval", "name": "rem-int"}
    ],
    "generator": {"kind": "gaussian", "n_y": 2, "cov_diag": [1.0, 1.0]},
    "n_runs": 3,
    "n_cal": 40,
    "n_test": 100,
    "eps": 0.2,
    "beta": 0.1,
    "mc_samples": 500,
    "base_seed": 9
  })";
  const auto config = parse_experiment_config(text);
  CHECK(config.methods.size() == 2);
  CHECK(config.methods[1].name == "rem-int");
  CHECK(config.methods[1].score == "interval");
  CHECK(config.n_runs == 3);
  CHECK(config.generator.has_value());

  CHECK_THROWS_AS(parse_experiment_config("{\"n_cal\": 5}"), Error);
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"methods":[{"method":"scp1"}],"n_cal":5,"eps":0.2,"bogus":1})"),
      SchemaMismatch);
}
