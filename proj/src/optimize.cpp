#include "mvcp/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "mvcp/errors.hpp"

namespace mvcp {

namespace {

void fd_gradient(const std::function<double(const Vec&)>& f, const Vec& q,
                 double fq, Vec& grad) {
  const int n = static_cast<int>(q.size());
  grad.resize(n);
  Vec qh = q;
  for (int i = 0; i < n; ++i) {
    const double h = 1e-6 * (1.0 + std::fabs(q[i]));
    qh[i] = q[i] + h;
    grad[i] = (f(qh) - fq) / h;
    qh[i] = q[i];
  }
}

struct Pair {
  Vec s;
  Vec y;
  double rho;
};

}  // namespace

OptimResult minimize_unconstrained(const OptimProblem& problem, const Vec& q0,
                                   long max_iters, double tol,
                                   const LbfgsOptions& opts) {
  if (q0.size() != problem.dim)
    throw DimensionMismatch("minimize_unconstrained: q0 length != problem.dim");
  if (!(tol > 0.0)) throw DomainError("minimize_unconstrained: tol must be > 0");

  const auto& f = problem.objective;
  auto grad_at = [&](const Vec& q, double fq, Vec& g) {
    if (problem.gradient)
      problem.gradient(q, g);
    else
      fd_gradient(f, q, fq, g);
  };

  Vec q = q0;
  double fq = f(q);
  if (!std::isfinite(fq))
    throw NonFiniteObjective("objective not finite at the starting point");

  Vec g;
  grad_at(q, fq, g);

  std::deque<Pair> mem;
  OptimResult res;
  Vec dir(problem.dim), q_new(problem.dim), g_new(problem.dim);
  Vec alpha_buf(opts.memory);
  std::deque<double> f_history;

  long it = 0;
  for (; it < max_iters; ++it) {
    if (opts.past > 0) {
      f_history.push_back(fq);
      if (static_cast<int>(f_history.size()) > opts.past + 1)
        f_history.pop_front();
      if (static_cast<int>(f_history.size()) == opts.past + 1 &&
          f_history.front() - fq <= opts.delta * std::max(1.0, std::fabs(fq)))
        break;
    }
    res.grad_norm = g.norm();
    if (res.grad_norm <= tol) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    dir = -g;
    const int m = static_cast<int>(mem.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha_buf[i] = mem[i].rho * mem[i].s.dot(dir);
      dir -= alpha_buf[i] * mem[i].y;
    }
    if (m > 0) {
      const auto& last = mem.back();
      dir *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (int i = 0; i < m; ++i) {
      const double beta = mem[i].rho * mem[i].y.dot(dir);
      dir += (alpha_buf[i] - beta) * mem[i].s;
    }

    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // not a descent direction; fall back to steepest
      dir = -g;
      slope = -g.squaredNorm();
    }

    // backtracking Armijo line search
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      q_new = q + step * dir;
      f_new = f(q_new);
      if (std::isfinite(f_new) && f_new <= fq + opts.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= opts.backtrack_factor;
    }
    if (!accepted) {
      // no decrease found along dir; treat the current point as final
      res.converged = res.grad_norm <= tol;
      break;
    }

    grad_at(q_new, f_new, g_new);

    Pair p;
    p.s = q_new - q;
    p.y = g_new - g;
    const double sy = p.s.dot(p.y);
    if (sy > 1e-12 * p.s.norm() * p.y.norm()) {  // skip non-curvature pairs
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (static_cast<int>(mem.size()) > opts.memory) mem.pop_front();
    }

    q.swap(q_new);
    fq = f_new;
    g.swap(g_new);
  }

  res.q_star = q;
  res.value = fq;
  res.iterations = it;
  res.grad_norm = g.norm();
  if (res.grad_norm <= tol) res.converged = true;
  return res;
}

double max_violation(const ConstraintSet& constraints, const Vec& q) {
  double worst = -std::numeric_limits<double>::infinity();
  Vec s(constraints.n_s);
  for (int idx : constraints.indices) {
    constraints.eval(idx, q, s);
    worst = std::max(worst, s.maxCoeff());
  }
  return worst;
}

OptimResult minimize_constrained(const OptimProblem& problem,
                                 const ConstraintSet& constraints,
                                 const Vec& q0, double feas_tol,
                                 const PenaltyOptions& opts) {
  if (!(feas_tol > 0.0))
    throw DomainError("minimize_constrained: feas_tol must be > 0");
  if (constraints.indices.empty())
    return minimize_unconstrained(problem, q0, opts.inner_max_iters,
                                  opts.inner_tol);

  const double shift = opts.tighten;
  const bool analytic = static_cast<bool>(problem.gradient) &&
                        static_cast<bool>(constraints.jacobian);

  auto penalized = [&](double mu) {
    OptimProblem p;
    p.dim = problem.dim;
    p.objective = [&, mu](const Vec& q) {
      double val = problem.objective(q);
      Vec s(constraints.n_s);
      for (int idx : constraints.indices) {
        constraints.eval(idx, q, s);
        for (int j = 0; j < constraints.n_s; ++j) {
          const double h = s[j] + shift;
          if (h > 0.0) val += mu * h * h;
        }
      }
      return val;
    };
    if (analytic) {
      p.gradient = [&, mu](const Vec& q, Vec& g) {
        problem.gradient(q, g);
        Vec s(constraints.n_s);
        Mat jac(constraints.n_s, problem.dim);
        for (int idx : constraints.indices) {
          constraints.eval(idx, q, s);
          bool any = false;
          for (int j = 0; j < constraints.n_s; ++j)
            if (s[j] + shift > 0.0) any = true;
          if (!any) continue;
          if (!constraints.jacobian(idx, q, jac)) {
            jac.setZero();  // should not happen when `analytic`
          }
          for (int j = 0; j < constraints.n_s; ++j) {
            const double h = s[j] + shift;
            if (h > 0.0) g.noalias() += (2.0 * mu * h) * jac.row(j).transpose();
          }
        }
      };
    }
    return p;
  };

  Vec q = q0;
  double mu = opts.mu0;
  long total_iters = 0;
  OptimResult inner;
  bool first = true;
  for (int level = 0; level <= opts.max_doublings; ++level) {
    const OptimProblem p = penalized(mu);
    const long cap = first ? opts.inner_max_iters
                           : std::max<long>(200, opts.inner_max_iters / 4);
    inner = minimize_unconstrained(p, q, cap, opts.inner_tol, opts.inner);
    total_iters += inner.iterations;
    const double move = (inner.q_star - q).lpNorm<Eigen::Infinity>();
    const double viol = max_violation(constraints, inner.q_star);
    q = inner.q_star;
    first = false;
    if (viol <= feas_tol &&
        move <= 1e-10 * (1.0 + q.lpNorm<Eigen::Infinity>()) && level > 0) {
      OptimResult res;
      res.q_star = q;
      res.value = problem.objective(q);
      res.converged = true;
      res.iterations = total_iters;
      res.grad_norm = inner.grad_norm;
      return res;
    }
    mu *= 2.0;
  }

  if (max_violation(constraints, q) <= feas_tol) {
    OptimResult res;
    res.q_star = q;
    res.value = problem.objective(q);
    res.converged = true;
    res.iterations = total_iters;
    res.grad_norm = inner.grad_norm;
    return res;
  }
  throw Infeasible("penalty homotopy exhausted its schedule at violation " +
                   std::to_string(max_violation(constraints, q)));
}

double bisect_root(const std::function<double(double)>& f, double lo,
                   double hi, double tol) {
  if (!(lo < hi)) throw DomainError("bisect_root: require lo < hi");
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo < 0.0) == (fhi < 0.0))
    throw NoBracket("bisect_root: f(lo) and f(hi) have the same sign");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket at floating-point resolution
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace mvcp
