#include "mvcp/relmcp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvcp/rng.hpp"
#include "mvcp/special.hpp"

namespace mvcp {

void RelmcpConfig::validate() const {
  if (!(eps_target > 0.0 && eps_target < 1.0))
    throw DomainError("relmcp: eps_target must lie in (0,1)");
  if (!(beta_target > 0.0 && beta_target < 1.0))
    throw DomainError("relmcp: beta_target must lie in (0,1)");
  if (!(phi1 > 0.0)) throw DomainError("relmcp: phi1 must be > 0");
  if (!(f_plus > 1.0)) throw DomainError("relmcp: f_plus must be > 1");
  if (!(f_minus > 0.0 && f_minus < 1.0))
    throw DomainError("relmcp: f_minus must lie in (0,1)");
  if (i_max < 1 || n_starts < 1 || inner_max_iters < 1)
    throw DomainError("relmcp: iteration and start counts must be >= 1");
}

double penalized_objective(const ScoreFamily& family, const ResidualMatrix& cal,
                           double phi, const Vec& q) {
  if (!(phi > 0.0)) throw DomainError("penalized_objective: phi must be > 0");
  double acc = family.cost(q);
  for (Eigen::Index m = 0; m < cal.rows(); ++m)
    acc += phi * slack(family, q, cal.row(m).transpose());
  return acc;
}

namespace {

OptimProblem penalized_problem(const ScoreFamily& family,
                               const ResidualMatrix& cal, double phi) {
  OptimProblem p;
  p.dim = family.n_q();
  p.objective = [&family, &cal, phi](const Vec& q) {
    return penalized_objective(family, cal, phi, q);
  };

  Vec grad_probe;
  Mat jac_probe;
  const Vec probe = Vec::Zero(family.n_q());
  const bool analytic =
      family.cost_gradient(probe, grad_probe) &&
      (cal.rows() == 0 ||
       family.score_jacobian(probe, cal.row(0).transpose(), jac_probe));
  if (analytic) {
    p.gradient = [&family, &cal, phi](const Vec& q, Vec& g) {
      family.cost_gradient(q, g);
      thread_local Vec scores;
      thread_local Mat jac;
      for (Eigen::Index m = 0; m < cal.rows(); ++m) {
        const auto r = cal.row(m).transpose();
        family.eval(q, r, scores);
        int jmax = 0;
        const double s = scores.maxCoeff(&jmax);
        if (s > 0.0) {
          family.score_jacobian(q, r, jac);
          g.noalias() += phi * jac.row(jmax).transpose();
        }
      }
    };
  }
  return p;
}

}  // namespace

Vec solve_penalized(const ScoreFamily& family, const ResidualMatrix& cal,
                    double phi, const RelmcpConfig& config,
                    const Vec& warm_current, const Vec& warm_prev_best,
                    long iteration, SolveDiagnostics* diag) {
  if (!(phi > 0.0)) throw DomainError("solve_penalized: phi must be > 0");
  const OptimProblem problem = penalized_problem(family, cal, phi);
  const int half = (config.n_starts + 1) / 2;

  Vec best_q;
  double best_value = std::numeric_limits<double>::infinity();
  long total_iters = 0;
  int best_start = 0;
  Rng base(config.seed);
  for (int s = 0; s < config.n_starts; ++s) {
    Rng rng = base.derive(0x52454C * (iteration + 1)).derive(s);
    const Vec& anchor = s < half ? warm_current : warm_prev_best;
    Vec start(anchor.size());
    for (Eigen::Index i = 0; i < anchor.size(); ++i)
      start[i] = anchor[i] + 0.1 * (1.0 + std::fabs(anchor[i])) * rng.normal();
    const OptimResult res = minimize_unconstrained(
        problem, start, config.inner_max_iters, 1e-8 * (1.0 + phi));
    total_iters += res.iterations;
    if (res.value < best_value) {
      best_value = res.value;
      best_q = res.q_star;
      best_start = s;
    }
  }
  if (diag) {
    diag->value = best_value;
    diag->iterations = total_iters;
    diag->best_start = best_start;
  }
  return best_q;
}

long solution_complexity(const ScoreFamily& family, const Vec& q_star,
                         const ResidualMatrix& cal) {
  long violated = 0;
  for (Eigen::Index m = 0; m < cal.rows(); ++m)
    if (slack(family, q_star, cal.row(m).transpose()) > 0.0) ++violated;
  const long non_violated = cal.rows() - violated;
  return violated + std::min<long>(family.n_q(), non_violated);
}

double certified_miscoverage(long n_cal, long d, double beta, long n_eval) {
  if (n_cal < 1) throw DomainError("certified_miscoverage: n_cal must be >= 1");
  if (d < 0 || d >= n_cal)
    throw DomainError("certified_miscoverage: require 0 <= d <= n_cal-1");
  if (!(beta > 0.0 && beta < 1.0))
    throw DomainError("certified_miscoverage: beta must lie in (0,1)");
  if (n_eval < 1) throw DomainError("certified_miscoverage: n_eval must be >= 1");

  const double log_budget =
      std::log(beta) - std::log(static_cast<double>(n_eval) * n_cal);
  const double log_cnd = log_binomial(n_cal, d);
  std::vector<double> log_coeff(n_cal - d);
  for (long j = d; j < n_cal; ++j)
    log_coeff[j - d] = log_binomial(j, d) - log_cnd;

  // log of the left side of the certificate equation; increasing in eps
  auto g = [&](double eps) {
    const double log1m = std::log1p(-eps);
    double peak = -std::numeric_limits<double>::infinity();
    for (long j = d; j < n_cal; ++j)
      peak = std::max(peak, log_coeff[j - d] - (n_cal - j) * log1m);
    double sum = 0.0;
    for (long j = d; j < n_cal; ++j)
      sum += std::exp(log_coeff[j - d] - (n_cal - j) * log1m - peak);
    return log_budget + peak + std::log(sum);
  };

  const double lo = 1e-12;
  const double hi = 1.0 - 1e-12;
  if (g(lo) >= 0.0) return lo;  // certificate already below the bracket
  if (g(hi) <= 0.0) return hi;  // no useful certificate at this budget
  return bisect_root(g, lo, hi, 1e-10);
}

std::optional<RelmcpResult> relmcp_calibrate(const FamilyPtr& family_ptr,
                                             const ResidualMatrix& cal,
                                             const RelmcpConfig& config) {
  config.validate();
  const ScoreFamily& family = *family_ptr;
  const long n_cal = cal.rows();
  if (n_cal == 0) throw EmptyInput("relmcp_calibrate: no residuals");

  auto eps_for = [&](long d, long n_eval) {
    if (d >= n_cal) return 1.0;
    return certified_miscoverage(n_cal, d, config.beta_target, n_eval);
  };

  RelmcpResult out;
  Vec current = family.init(cal, config.seed);
  Vec prev_best = current;

  long i_val = 0;
  long i_inv = 0;
  double phi_val = 0.0;
  double phi_inv = 0.0;
  Vec q_val;
  long d_val = 0;
  double eps_val = 1.0;

  double phi = config.phi1;
  for (long i = 1; i <= config.safety_cap; ++i) {
    const Vec q = family.canonicalize(
        solve_penalized(family, cal, phi, config, current, prev_best, i));
    const long d = solution_complexity(family, q, cal);
    const double eps_i = eps_for(d, i);

    RelmcpIteration log_entry{phi, d, eps_i, eps_i <= config.eps_target};
    out.iteration_log.push_back(log_entry);
    out.n_eval = i;

    if (eps_i <= config.eps_target) {
      i_val = i;
      phi_val = phi;
      q_val = q;
      d_val = d;
      eps_val = eps_i;
      prev_best = q;
    } else {
      bool all_satisfied = true;
      for (Eigen::Index m = 0; m < cal.rows() && all_satisfied; ++m)
        if (slack(family, q, cal.row(m).transpose()) > 0.0)
          all_satisfied = false;
      if (all_satisfied) return std::nullopt;  // no penalty can do better
      i_inv = i;
      phi_inv = phi;
    }

    if (i_val != 0) {
      // would the accepted solution still certify with one more evaluation?
      const double eps_next = eps_for(d_val, i + 1);
      if (eps_next > config.eps_target || i >= config.i_max) {
        out.q_star = q_val;
        out.phi = phi_val;
        out.d = d_val;
        out.eps_certified = eps_val;
        out.i_val = i_val;
        return out;
      }
    }

    if (i_val == 0) {
      const double base = i_inv != 0 ? phi_inv : phi;
      phi = base * std::pow(config.f_plus,
                            std::max<long>(1, i - config.i_max));
    } else if (i_inv == 0) {
      phi = phi_val * config.f_minus;
    } else {
      phi = 0.5 * (phi_val + phi_inv);
    }
    current = q;
  }

  if (i_val != 0) {
    out.q_star = q_val;
    out.phi = phi_val;
    out.d = d_val;
    out.eps_certified = eps_val;
    out.i_val = i_val;
    return out;
  }
  return std::nullopt;
}

CalibratedModel relmcp_model(const FamilyPtr& family, const RelmcpResult& res,
                             const ResidualMatrix& cal,
                             const RelmcpConfig& config) {
  CalibratedModel model;
  model.set.family = family;
  model.set.q = res.q_star;
  model.method = "relmcp";
  model.n_cal = cal.rows();
  model.eps = config.eps_target;
  model.seed = config.seed;
  model.phi = res.phi;
  model.d = res.d;
  model.n_eval = res.i_val;

  Certificate cert;
  cert.method = "relmcp";
  cert.eps_target = config.eps_target;
  cert.expected_bound = res.eps_certified;
  cert.beta = config.beta_target;
  cert.beta_dist.reset();
  cert.assumptions_convex = family->convex_in_q();
  cert.adaptive_penalty_grid = true;
  model.certificate = cert;
  return model;
}

}  // namespace mvcp
