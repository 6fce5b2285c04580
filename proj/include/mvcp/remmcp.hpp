#ifndef MVCP_REMMCP_HPP
#define MVCP_REMMCP_HPP

#include <cstdint>
#include <vector>

#include "mvcp/model.hpp"
#include "mvcp/optimize.hpp"
#include "mvcp/scores.hpp"

namespace mvcp {

// One stage of the removal cascade. `removed_before` is the cumulative
// removal set going into this stage's solve (|removed_before| = k * n_q).
struct RemovalStage {
  std::vector<int> removed_before;
  Vec q_star;
  std::vector<int> support;
  std::vector<int> padding;
};

struct RemovalTrace {
  std::vector<RemovalStage> stages;
};

struct RemmcpOptions {
  double feas_tol = 1e-8;
  double active_tol = 1e-6;  // relative to the score scale
  long inner_max_iters = 2000;
};

struct RemmcpOutput {
  CalibratedModel model;
  RemovalTrace trace;
  Certificate certificate;
};

// Outlier budget floor(eps*(n_cal+1)/n_q) - 1; InsufficientData when negative.
long mcp_outlier_budget(long n_cal, double eps, int n_q);

// Constrained scenario solve of J(q) (plus a 1e-12*||q||^2 tie-break) subject
// to s(r_m, q) <= 0 over `indices`.
OptimResult solve_scenario_program(const ScoreFamily& family,
                                   const ResidualMatrix& cal,
                                   const std::vector<int>& indices,
                                   const Vec& q0,
                                   const RemmcpOptions& opts = {});

// Indices among `indices` whose max score component lies within active_tol
// (relative) of zero at q_star. If more than n_q candidates remain, prunes by
// leave-one-out re-solves, keeping indices whose removal moves the optimizer
// by more than 10*feas_tol in infinity norm.
std::vector<int> identify_support(const ScoreFamily& family, const Vec& q_star,
                                  const ResidualMatrix& cal,
                                  const std::vector<int>& indices,
                                  const RemmcpOptions& opts = {});

// The removal cascade: rho+1 scenario solves, each discarding the support of
// the previous optimizer padded to exactly n_q samples. Returns the final
// model, the per-stage trace, and the coverage certificate.
RemmcpOutput remmcp_calibrate(const FamilyPtr& family,
                              const ResidualMatrix& cal, double eps,
                              std::uint64_t seed,
                              const RemmcpOptions& opts = {});

// Certificate for a removal calibration: expected miscoverage bound
// n_q(rho+1)/(n_cal+1), confidence complement beta = I_{1-eps}(a, b) with
// coverage law Beta(a, b), a = n_cal - n_q(rho+1) + 1, b = n_q(rho+1).
Certificate remmcp_certificate(long n_cal, int n_q, long rho, double eps);

}  // namespace mvcp

#endif  // MVCP_REMMCP_HPP
