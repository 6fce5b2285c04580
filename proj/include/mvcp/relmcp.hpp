#ifndef MVCP_RELMCP_HPP
#define MVCP_RELMCP_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "mvcp/model.hpp"
#include "mvcp/optimize.hpp"
#include "mvcp/scores.hpp"

namespace mvcp {

struct RelmcpConfig {
  double eps_target = 0.05;
  double beta_target = 0.05;
  double phi1 = 0.1;       // initial penalty weight
  double f_plus = 2.0;     // penalty increase factor (> 1)
  double f_minus = 0.3;    // penalty decrease factor (in (0,1))
  int i_max = 15;          // outer iteration cap of the bisection search
  int n_starts = 3;        // multi-start count per penalized solve
  long inner_max_iters = 2000;
  std::uint64_t seed = 0;
  // hard stop for pathological instances where slacks never reach zero
  int safety_cap = 100;

  void validate() const;
};

struct RelmcpIteration {
  double phi = 0.0;
  long d = 0;
  double eps = 1.0;
  bool valid = false;
};

struct RelmcpResult {
  Vec q_star;
  double phi = 0.0;          // smallest penalty that certified the target
  long d = 0;                // solution complexity at acceptance
  double eps_certified = 1.0;
  long i_val = 0;            // accepting iteration
  long n_eval = 0;           // total iterations executed
  std::vector<RelmcpIteration> iteration_log;
};

// J(q) + phi * sum_m max(0, max_j s_j(r_m, q))
double penalized_objective(const ScoreFamily& family, const ResidualMatrix& cal,
                           double phi, const Vec& q);

struct SolveDiagnostics {
  double value = 0.0;
  long iterations = 0;
  int best_start = 0;
};

// Best of n_starts local solves of the penalized objective. Half the starts
// perturb `warm_current`, the rest perturb `warm_prev_best` (Gaussian,
// relative scale 0.1), with per-start seeds derived from (config.seed,
// iteration, start).
Vec solve_penalized(const ScoreFamily& family, const ResidualMatrix& cal,
                    double phi, const RelmcpConfig& config,
                    const Vec& warm_current, const Vec& warm_prev_best,
                    long iteration, SolveDiagnostics* diag = nullptr);

// Heuristic complexity: #violated + min(n_q, #non-violated).
long solution_complexity(const ScoreFamily& family, const Vec& q_star,
                         const ResidualMatrix& cal);

// The a-posteriori miscoverage: unique eps in (0,1) with
//   beta/(n_eval*n_cal) * sum_{j=d}^{n_cal-1} C(j,d)/C(n_cal,d)
//       * (1-eps)^{-(n_cal-j)} = 1,
// solved in log space by bisection on [1e-12, 1-1e-12] and clamped to that
// bracket. Throws DomainError when d >= n_cal (callers treat that as eps=1).
double certified_miscoverage(long n_cal, long d, double beta, long n_eval);

// The adaptive penalty search: per-iteration penalized solve, complexity
// heuristic, certificate with n_eval = i, and a bisection-style penalty
// update. Returns nullopt when no solution can be certified at the target,
// which callers surface as a distinct status.
std::optional<RelmcpResult> relmcp_calibrate(const FamilyPtr& family,
                                             const ResidualMatrix& cal,
                                             const RelmcpConfig& config);

// Wraps a successful search into a CalibratedModel with its certificate.
CalibratedModel relmcp_model(const FamilyPtr& family, const RelmcpResult& res,
                             const ResidualMatrix& cal,
                             const RelmcpConfig& config);

}  // namespace mvcp

#endif  // MVCP_RELMCP_HPP
