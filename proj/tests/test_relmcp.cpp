#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvcp/dataio.hpp"
#include "mvcp/evalharness.hpp"
#include "mvcp/relmcp.hpp"
#include "mvcp/rng.hpp"
#include "mvcp/special.hpp"

using namespace mvcp;

namespace {

// Direct evaluation of the certificate equation's left side for small n_cal:
// beta/(n_eval*n) * sum_{j=d}^{n-1} C(j,d)/C(n,d) * (1-eps)^{-(n-j)}
double certificate_lhs(long n, long d, double beta, long n_eval, double eps) {
  long double sum = 0.0L;
  for (long j = d; j < n; ++j) {
    long double term = std::exp(static_cast<long double>(
        log_binomial(j, d) - log_binomial(n, d)));
    term /= std::pow(static_cast<long double>(1.0 - eps),
                     static_cast<long double>(n - j));
    sum += term;
  }
  return static_cast<double>(beta / (n_eval * n) * sum);
}

Vec vec1(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST_CASE("penalized_objective: slack accounting") {
  const auto interval = make_family(FamilyKind::Interval, 2);
  ResidualMatrix cal(2, 2);
  cal << 2, 0, 0, 0;
  Vec q(2);
  q << 1.0, 1.0;
  // one violated point with slack 1, cost 2
  CHECK(penalized_objective(*interval, cal, 10.0, q) == doctest::Approx(12.0));

  // all members: objective reduces to the cost
  ResidualMatrix inside(2, 2);
  inside << 0.5, 0.5, -0.2, 0.3;
  CHECK(penalized_objective(*interval, inside, 123.0, q) ==
        doctest::Approx(interval->cost(q)));

  // doubling phi doubles the penalty part exactly
  const double base = penalized_objective(*interval, cal, 10.0, q);
  const double twice = penalized_objective(*interval, cal, 20.0, q);
  CHECK(twice - interval->cost(q) ==
        doctest::Approx(2.0 * (base - interval->cost(q))).epsilon(1e-12));
}

TEST_CASE("solve_penalized: huge phi approaches the constrained optimum") {
  const auto sphere = make_family(FamilyKind::Sphere, 1);
  ResidualMatrix cal(5, 1);
  cal << 0.5, 1.0, 2.0, 3.0, 4.5;
  RelmcpConfig config;
  config.seed = 3;
  const Vec q = solve_penalized(*sphere, cal, 1e7, config, vec1(5.0), vec1(5.0), 1);
  CHECK(q[0] == doctest::Approx(4.5).epsilon(1e-4));
}

TEST_CASE("solve_penalized: vanishing phi lets the cost dominate") {
  const auto interval = make_family(FamilyKind::Interval, 2);
  ResidualMatrix cal(3, 2);
  cal << 1, 1, -1, 0.5, 0.3, -1.2;
  RelmcpConfig config;
  config.seed = 4;
  Vec warm(2);
  warm << 1.5, 1.5;
  const Vec q = solve_penalized(*interval, cal, 1e-7, config, warm, warm, 1);
  // widths collapse to the non-negativity floor
  CHECK(interval->cost(q) < 1e-3);
}

TEST_CASE("solve_penalized: deterministic under a fixed seed") {
  const auto ell = make_family(FamilyKind::Ellipsoid, 2);
  const ResidualMatrix cal =
      gen_residuals(GeneratorSpec::gaussian(Mat::Identity(2, 2)), 60, 17);
  RelmcpConfig config;
  config.seed = 11;
  const Vec warm = ell->init(cal, config.seed);
  const Vec a = solve_penalized(*ell, cal, 2.0, config, warm, warm, 4);
  const Vec b = solve_penalized(*ell, cal, 2.0, config, warm, warm, 4);
  CHECK(a == b);
}

TEST_CASE("solution_complexity: heuristic formula") {
  // 10 points, shift the sphere threshold so exactly 3 violate
  const auto sphere = make_family(FamilyKind::Sphere, 1);
  ResidualMatrix cal(10, 1);
  for (int i = 0; i < 10; ++i) cal(i, 0) = i + 1.0;
  CHECK(solution_complexity(*sphere, vec1(7.5), cal) == 3 + 1);

  // no violations: d = n_q when enough non-violated points exist
  CHECK(solution_complexity(*sphere, vec1(100.0), cal) == 1);

  // all violated: d = n_cal
  CHECK(solution_complexity(*sphere, vec1(0.5), cal) == 10);

  // interval in 5-D: 3 violated, n_q = 5, 7 non-violated -> 8
  const auto interval5 = make_family(FamilyKind::Interval, 5);
  ResidualMatrix cal5 = ResidualMatrix::Zero(10, 5);
  for (int i = 0; i < 3; ++i) cal5(i, 0) = 9.0;  // outside
  CHECK(solution_complexity(*interval5, Vec::Ones(5), cal5) == 3 + 5);
}

TEST_CASE("certified_miscoverage: closed form at d = n_cal - 1") {
  const double eps = certified_miscoverage(10, 9, 0.1, 1);
  CHECK(eps == doctest::Approx(1.0 - 0.1 / (1 * 100)).epsilon(1e-9));
  CHECK(std::fabs(eps - 0.999) <= 1e-9);
}

TEST_CASE("certified_miscoverage: matches the brute-force oracle") {
  // frozen from an arbitrary-precision bisection of the explicit sum
  CHECK(certified_miscoverage(10, 0, 0.1, 1) ==
        doctest::Approx(0.2877880131).epsilon(1e-8));
  // residual of the equation at the returned root
  for (long d : {0L, 2L, 5L}) {
    const double eps = certified_miscoverage(12, d, 0.15, 3);
    CHECK(certificate_lhs(12, d, 0.15, 3, eps) == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("certified_miscoverage: monotone in n_eval and in d") {
  for (long n : {20L, 60L}) {
    double prev = 0.0;
    for (long n_eval : {1L, 2L, 4L, 8L, 16L}) {
      const double eps = certified_miscoverage(n, 3, 0.1, n_eval);
      CHECK(eps > prev);
      prev = eps;
    }
    for (long d = 0; d + 1 < n; ++d) {
      const double lo = certified_miscoverage(n, d, 0.1, 1);
      const double hi = certified_miscoverage(n, d + 1, 0.1, 1);
      CHECK(lo <= hi + 1e-12);
    }
  }
}

TEST_CASE("certified_miscoverage: left side increases in eps, limit identity") {
  for (long n : {15L, 40L}) {
    for (long d : {0L, 3L, 7L}) {
      double prev = -1.0;
      for (double eps : {0.01, 0.1, 0.3, 0.6, 0.9}) {
        const double v = certificate_lhs(n, d, 0.2, 2, eps);
        CHECK(v > prev);
        prev = v;
      }
      // hockey-stick: value at eps -> 0 equals beta/(n_eval*n)*(n-d)/(d+1) < 1
      const double at_zero = certificate_lhs(n, d, 0.2, 2, 1e-13);
      const double identity = 0.2 / (2.0 * n) * (n - d) / (d + 1.0);
      CHECK(at_zero == doctest::Approx(identity).epsilon(1e-6));
      CHECK(at_zero < 1.0);
    }
  }
}

TEST_CASE("certified_miscoverage: domain errors") {
  CHECK_THROWS_AS(certified_miscoverage(10, 10, 0.1, 1), DomainError);
  CHECK_THROWS_AS(certified_miscoverage(10, -1, 0.1, 1), DomainError);
  CHECK_THROWS_AS(certified_miscoverage(10, 3, 0.0, 1), DomainError);
  CHECK_THROWS_AS(certified_miscoverage(10, 3, 0.1, 0), DomainError);
}

TEST_CASE("relmcp_calibrate: trivially loose target accepts immediately") {
  const auto sphere = make_family(FamilyKind::Sphere, 2);
  const ResidualMatrix cal =
      gen_residuals(GeneratorSpec::gaussian(Mat::Identity(2, 2)), 50, 23);
  RelmcpConfig config;
  config.eps_target = 0.999999;
  config.beta_target = 0.1;
  config.seed = 5;
  const auto res = relmcp_calibrate(sphere, cal, config);
  REQUIRE(res.has_value());
  // iteration 1 already certifies; the search then only refines the penalty
  REQUIRE(!res->iteration_log.empty());
  CHECK(res->iteration_log.front().valid);
  CHECK(res->eps_certified <= config.eps_target);
}

TEST_CASE("relmcp_calibrate: unreachable certificate returns nullopt") {
  const auto sphere = make_family(FamilyKind::Sphere, 1);
  const ResidualMatrix cal =
      gen_residuals(GeneratorSpec::gaussian(Mat::Identity(1, 1)), 10, 29);
  RelmcpConfig config;
  config.eps_target = 0.01;
  config.beta_target = 0.1;
  config.seed = 6;
  // even a fully feasible solution (d = n_q = 1) certifies worse than 1%
  CHECK(certified_miscoverage(10, 1, config.beta_target, 1) > config.eps_target);
  const auto res = relmcp_calibrate(sphere, cal, config);
  CHECK_FALSE(res.has_value());
}

TEST_CASE("relmcp_calibrate: log discipline and certificate reproduction") {
  const auto sphere = make_family(FamilyKind::Sphere, 2);
  const ResidualMatrix cal =
      gen_residuals(GeneratorSpec::gaussian(Mat::Identity(2, 2)), 300, 31);
  RelmcpConfig config;
  config.eps_target = 0.1;
  config.beta_target = 0.2;
  config.seed = 7;
  const auto res = relmcp_calibrate(sphere, cal, config);
  REQUIRE(res.has_value());

  CHECK(res->eps_certified <= config.eps_target);
  // re-evaluating the certificate with the logged inputs reproduces it
  CHECK(certified_miscoverage(cal.rows(), res->d, config.beta_target,
                              res->i_val) ==
        doctest::Approx(res->eps_certified).epsilon(1e-12));

  // bisection bracketing: valid penalties nonincreasing, invalid nondecreasing
  double last_valid = std::numeric_limits<double>::infinity();
  double last_invalid = 0.0;
  for (const auto& it : res->iteration_log) {
    if (it.valid) {
      CHECK(it.phi <= last_valid + 1e-15);
      last_valid = it.phi;
    } else {
      CHECK(it.phi >= last_invalid - 1e-15);
      last_invalid = it.phi;
    }
  }
  CHECK(res->phi == last_valid);

  // the accepted solution's slack count is consistent with d
  long violated = 0;
  for (int i = 0; i < cal.rows(); ++i)
    if (slack(*sphere, res->q_star, cal.row(i).transpose()) > 0.0) ++violated;
  CHECK(violated == res->d - std::min<long>(sphere->n_q(), cal.rows() - violated));
}

TEST_CASE("relmcp_calibrate: conservatism on the sphere family (mini)") {
  const auto spec = GeneratorSpec::gaussian(Mat::Identity(2, 2));
  int covered = 0;
  const int runs = 20;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t seed = 999ULL ^ static_cast<std::uint64_t>(r);
    Rng rng(seed);
    const ResidualMatrix cal = gen_residuals(spec, 500, rng.next());
    const ResidualMatrix test = gen_residuals(spec, 1000, rng.next());
    const auto sphere = make_family(FamilyKind::Sphere, 2);
    RelmcpConfig config;
    config.eps_target = 0.1;
    config.beta_target = 0.2;
    config.seed = seed;
    const auto res = relmcp_calibrate(sphere, cal, config);
    REQUIRE(res.has_value());
    const PredictionSet set{sphere, res->q_star};
    if (empirical_coverage(set, test) >= 0.9) ++covered;
  }
  CHECK(covered >= 17);  // acceptance runs the full 100-run version
}
