#ifndef MVCP_OPTIMIZE_HPP
#define MVCP_OPTIMIZE_HPP

#include <functional>
#include <vector>

#include "mvcp/types.hpp"

namespace mvcp {

// Smooth minimization problem over R^dim. If `gradient` is empty, forward
// finite differences with step 1e-6*(1+|q_i|) are used.
struct OptimProblem {
  int dim = 0;
  std::function<double(const Vec&)> objective;
  std::function<void(const Vec&, Vec&)> gradient;  // optional
};

struct OptimResult {
  Vec q_star;
  double value = 0.0;
  bool converged = false;
  long iterations = 0;
  double grad_norm = 0.0;
};

// Per-sample vector constraints s(r_m, q) <= 0 over a duplicate-free list of
// sample indices.
struct ConstraintSet {
  int n_s = 0;
  std::vector<int> indices;
  // writes s(r_index, q) into `out` (resized to n_s)
  std::function<void(int index, const Vec& q, Vec& out)> eval;
  // optional analytic Jacobian ds/dq (n_s x n_q); return false if unavailable
  std::function<bool(int index, const Vec& q, Mat& jac)> jacobian;
};

struct LbfgsOptions {
  int memory = 10;
  double armijo_c1 = 1e-4;
  double backtrack_factor = 0.5;
  int max_line_search = 60;
  // stagnation stop: quit when f decreased by less than
  // delta*max(1,|f|) over the last `past` iterations (0 disables)
  int past = 3;
  double delta = 1e-11;
};

// Limited-memory quasi-Newton descent with backtracking Armijo line search.
// Returns a point with grad_norm <= tol or iterations == max_iters, and
// value <= objective(q0). Throws NonFiniteObjective if the objective is not
// finite at q0.
OptimResult minimize_unconstrained(const OptimProblem& problem, const Vec& q0,
                                   long max_iters = 2000, double tol = 1e-8,
                                   const LbfgsOptions& opts = {});

struct PenaltyOptions {
  double mu0 = 10.0;        // initial penalty weight
  int max_doublings = 30;   // schedule length
  double tighten = 5e-10;   // constraint margin, keeps solutions strictly feasible
  long inner_max_iters = 2000;
  double inner_tol = 1e-10;
  LbfgsOptions inner = {10, 1e-4, 0.5, 60, 5, 1e-15};
};

// Quadratic exact-penalty homotopy: minimize
//   J(q) + mu * sum_m sum_j max(0, s_j(r_m, q) + tighten)^2
// doubling mu until every constraint component is <= feas_tol and the
// iterate has stopped moving, or the schedule is exhausted (-> Infeasible).
OptimResult minimize_constrained(const OptimProblem& problem,
                                 const ConstraintSet& constraints,
                                 const Vec& q0, double feas_tol = 1e-8,
                                 const PenaltyOptions& opts = {});

// Maximum constraint component over all included samples at q.
double max_violation(const ConstraintSet& constraints, const Vec& q);

// Root of a nondecreasing scalar function on [lo, hi] by bisection, final
// bracket width <= tol. Throws NoBracket if f(lo) and f(hi) agree in sign.
double bisect_root(const std::function<double(double)>& f, double lo,
                   double hi, double tol = 1e-12);

}  // namespace mvcp

#endif  // MVCP_OPTIMIZE_HPP
