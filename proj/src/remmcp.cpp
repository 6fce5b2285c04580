#include "mvcp/remmcp.hpp"

#include <algorithm>
#include <cmath>

#include "mvcp/special.hpp"

namespace mvcp {

namespace {

constexpr double kTieBreak = 1e-12;  // convex tie-break regularizer on J

OptimProblem scenario_objective(const ScoreFamily& family) {
  OptimProblem p;
  p.dim = family.n_q();
  p.objective = [&family](const Vec& q) {
    return family.cost(q) + kTieBreak * q.squaredNorm();
  };
  Vec probe = Vec::Zero(family.n_q());
  Vec grad_probe;
  if (family.cost_gradient(probe, grad_probe)) {
    p.gradient = [&family](const Vec& q, Vec& g) {
      family.cost_gradient(q, g);
      g += 2.0 * kTieBreak * q;
    };
  }
  return p;
}

ConstraintSet scenario_constraints(const ScoreFamily& family,
                                   const ResidualMatrix& cal,
                                   std::vector<int> indices) {
  ConstraintSet cs;
  cs.n_s = family.n_s();
  cs.indices = std::move(indices);
  cs.eval = [&family, &cal](int idx, const Vec& q, Vec& out) {
    family.eval(q, cal.row(idx).transpose(), out);
  };
  Mat jac_probe;
  Vec probe = Vec::Zero(family.n_q());
  if (cal.rows() > 0 &&
      family.score_jacobian(probe, cal.row(0).transpose(), jac_probe)) {
    cs.jacobian = [&family, &cal](int idx, const Vec& q, Mat& jac) {
      return family.score_jacobian(q, cal.row(idx).transpose(), jac);
    };
  }
  return cs;
}

// padding order: closest to the boundary first (largest max score), ties by
// smallest sample index
std::vector<int> rank_by_score(const ScoreFamily& family, const Vec& q,
                               const ResidualMatrix& cal,
                               const std::vector<int>& pool) {
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(pool.size());
  for (int idx : pool)
    ranked.emplace_back(score_max(family, q, cal.row(idx).transpose()), idx);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> order;
  order.reserve(ranked.size());
  for (const auto& [s, idx] : ranked) order.push_back(idx);
  return order;
}

}  // namespace

long mcp_outlier_budget(long n_cal, double eps, int n_q) {
  if (n_cal < 1 || n_q < 1)
    throw DomainError("mcp_outlier_budget: n_cal and n_q must be >= 1");
  if (!(eps > 0.0 && eps < 1.0))
    throw DomainError("mcp_outlier_budget: eps must lie in (0,1)");
  const long rho =
      static_cast<long>(std::floor(eps * (n_cal + 1) / n_q + 1e-9)) - 1;
  if (rho < 0)
    throw InsufficientData(
        "outlier budget floor(eps*(n_cal+1)/n_q)-1 is negative for n_cal=" +
        std::to_string(n_cal) + ", eps=" + std::to_string(eps) +
        ", n_q=" + std::to_string(n_q) +
        "; increase n_cal or reduce the parameter dimension");
  return rho;
}

OptimResult solve_scenario_program(const ScoreFamily& family,
                                   const ResidualMatrix& cal,
                                   const std::vector<int>& indices,
                                   const Vec& q0, const RemmcpOptions& opts) {
  const OptimProblem objective = scenario_objective(family);
  const ConstraintSet constraints = scenario_constraints(family, cal, indices);
  PenaltyOptions popts;
  popts.inner_max_iters = opts.inner_max_iters;
  return minimize_constrained(objective, constraints, q0, opts.feas_tol, popts);
}

std::vector<int> identify_support(const ScoreFamily& family, const Vec& q_star,
                                  const ResidualMatrix& cal,
                                  const std::vector<int>& indices,
                                  const RemmcpOptions& opts) {
  double scale = 1.0;
  std::vector<std::pair<int, double>> smax;
  smax.reserve(indices.size());
  for (int idx : indices) {
    const double s = score_max(family, q_star, cal.row(idx).transpose());
    smax.emplace_back(idx, s);
    scale = std::max(scale, std::fabs(s));
  }
  const double tol = opts.active_tol * scale;
  std::vector<int> candidates;
  for (const auto& [idx, s] : smax)
    if (s >= -tol) candidates.push_back(idx);

  if (static_cast<int>(candidates.size()) <= family.n_q()) return candidates;

  // Degenerate-looking active set: keep only samples whose removal actually
  // moves the optimizer.
  std::vector<int> support;
  for (int cand : candidates) {
    std::vector<int> rest;
    rest.reserve(indices.size() - 1);
    for (int idx : indices)
      if (idx != cand) rest.push_back(idx);
    const OptimResult loo = solve_scenario_program(family, cal, rest, q_star, opts);
    if ((loo.q_star - q_star).lpNorm<Eigen::Infinity>() > 10.0 * opts.feas_tol)
      support.push_back(cand);
  }
  return support;
}

RemmcpOutput remmcp_calibrate(const FamilyPtr& family_ptr,
                              const ResidualMatrix& cal, double eps,
                              std::uint64_t seed, const RemmcpOptions& opts) {
  const ScoreFamily& family = *family_ptr;
  const long n_cal = cal.rows();
  const int n_q = family.n_q();
  const long rho = mcp_outlier_budget(n_cal, eps, n_q);
  if (n_cal <= n_q)
    throw InsufficientData("remmcp_calibrate: need n_cal > n_q");

  std::vector<char> is_removed(n_cal, 0);
  std::vector<int> removed_order;
  removed_order.reserve(static_cast<std::size_t>(rho) * n_q);

  RemmcpOutput out;
  Vec q = family.init(cal, seed);

  for (long k = 0; k <= rho; ++k) {
    std::vector<int> kept;
    kept.reserve(n_cal - removed_order.size());
    for (long i = 0; i < n_cal; ++i)
      if (!is_removed[i]) kept.push_back(static_cast<int>(i));

    if (static_cast<long>(removed_order.size()) != k * n_q)
      throw DegenerateTrace("removal set has size " +
                            std::to_string(removed_order.size()) +
                            " at stage " + std::to_string(k) + ", expected " +
                            std::to_string(k * n_q));

    const OptimResult solved = solve_scenario_program(family, cal, kept, q, opts);
    q = family.canonicalize(solved.q_star);

    RemovalStage stage;
    stage.removed_before = removed_order;
    stage.q_star = q;
    stage.support = identify_support(family, q, cal, kept, opts);
    if (static_cast<int>(stage.support.size()) > n_q) {
      const std::vector<int> ranked = rank_by_score(family, q, cal, stage.support);
      stage.support.assign(ranked.begin(), ranked.begin() + n_q);
      std::sort(stage.support.begin(), stage.support.end());
    }

    if (k < rho) {
      const int pad_count = n_q - static_cast<int>(stage.support.size());
      if (pad_count > 0) {
        std::vector<int> pool;
        pool.reserve(kept.size());
        for (int idx : kept)
          if (std::find(stage.support.begin(), stage.support.end(), idx) ==
              stage.support.end())
            pool.push_back(idx);
        const std::vector<int> ranked = rank_by_score(family, q, cal, pool);
        stage.padding.assign(ranked.begin(), ranked.begin() + pad_count);
      }
      for (int idx : stage.support) {
        is_removed[idx] = 1;
        removed_order.push_back(idx);
      }
      for (int idx : stage.padding) {
        is_removed[idx] = 1;
        removed_order.push_back(idx);
      }
      if (static_cast<long>(removed_order.size()) != (k + 1) * n_q)
        throw DegenerateTrace("removal set has size " +
                              std::to_string(removed_order.size()) +
                              " after stage " + std::to_string(k) +
                              ", expected " + std::to_string((k + 1) * n_q));
    }
    out.trace.stages.push_back(std::move(stage));
  }

  out.certificate = remmcp_certificate(n_cal, n_q, rho, eps);
  out.certificate.assumptions_convex = family.convex_in_q();

  out.model.set.family = family_ptr;
  out.model.set.q = q;
  out.model.method = "remmcp";
  out.model.certificate = out.certificate;
  out.model.n_cal = n_cal;
  out.model.eps = eps;
  out.model.seed = seed;
  out.model.rho = rho;
  out.model.removed = removed_order;
  return out;
}

Certificate remmcp_certificate(long n_cal, int n_q, long rho, double eps) {
  if (n_cal < 1 || n_q < 1 || rho < 0)
    throw DomainError("remmcp_certificate: bad arguments");
  if (!(eps > 0.0 && eps < 1.0))
    throw DomainError("remmcp_certificate: eps must lie in (0,1)");
  const long removed = static_cast<long>(n_q) * (rho + 1);
  if (n_cal <= removed)
    throw DomainError("remmcp_certificate: need n_cal > n_q*(rho+1)");
  Certificate cert;
  cert.method = "remmcp";
  cert.eps_target = eps;
  cert.expected_bound = static_cast<double>(removed) / (n_cal + 1);
  cert.beta = reg_inc_beta(1.0 - eps, static_cast<double>(n_cal - removed + 1),
                           static_cast<double>(removed));
  cert.beta_dist = {static_cast<double>(n_cal - removed + 1),
                    static_cast<double>(removed)};
  return cert;
}

}  // namespace mvcp
