#include "mvcp/scp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mvcp/kmeans.hpp"
#include "mvcp/rng.hpp"
#include "mvcp/special.hpp"

namespace mvcp {

namespace {

// Sample covariance about `center`, regularized when not positive definite.
Mat covariance_about(const ResidualMatrix& rows, const std::vector<int>& idx,
                     const Vec& center, bool& regularized) {
  const int n_y = static_cast<int>(rows.cols());
  Mat cov = Mat::Zero(n_y, n_y);
  for (int i : idx) {
    const Vec d = rows.row(i).transpose() - center;
    cov.noalias() += d * d.transpose();
  }
  cov /= std::max<std::size_t>(idx.size() > 1 ? idx.size() - 1 : 1, 1);
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    cov.diagonal().array() += 1e-9 * cov.trace() / n_y + 1e-12;
    regularized = true;
    Eigen::LLT<Mat> retry(cov);
    if (retry.info() != Eigen::Success)
      throw SingularCovariance("covariance not positive definite after regularization");
  }
  return cov;
}

Vec pack_ellipsoid(const Mat& cov) {
  Eigen::LLT<Mat> llt(cov.inverse());
  if (llt.info() != Eigen::Success)
    throw SingularShape("cannot factor the inverse covariance");
  Vec q;
  pack_lower(Mat(llt.matrixL()), q);
  return q;
}

}  // namespace

long scp_outlier_budget(long n_cal, double eps) {
  if (n_cal < 1) throw DomainError("scp_outlier_budget: n_cal must be >= 1");
  if (!(eps > 0.0 && eps < 1.0))
    throw DomainError("scp_outlier_budget: eps must lie in (0,1)");
  // small nudge so decimal eps values land on the intended integer
  const long rho =
      static_cast<long>(std::floor(eps * (n_cal + 1) + 1e-9)) - 1;
  if (rho < 0)
    throw InsufficientData(
        "outlier budget floor(eps*(n_cal+1))-1 is negative for n_cal=" +
        std::to_string(n_cal) + ", eps=" + std::to_string(eps));
  return rho;
}

double scp_calibrate(std::vector<double> scores, double eps) {
  const long n = static_cast<long>(scores.size());
  const long rho = scp_outlier_budget(n, eps);
  // (n - rho)-smallest order statistic
  auto nth = scores.begin() + (n - rho - 1);
  std::nth_element(scores.begin(), nth, scores.end());
  return *nth;
}

Vec scp_dimwise_calibrate(const ResidualMatrix& cal, double eps) {
  const int n_y = static_cast<int>(cal.cols());
  if (cal.rows() == 0) throw EmptyInput("scp_dimwise_calibrate: no residuals");
  Vec thresholds(n_y);
  std::vector<double> scores(cal.rows());
  for (int j = 0; j < n_y; ++j) {
    for (Eigen::Index i = 0; i < cal.rows(); ++i)
      scores[static_cast<std::size_t>(i)] = std::fabs(cal(i, j));
    thresholds[j] = scp_calibrate(scores, eps / n_y);
  }
  return thresholds;
}

ScpModel scp1_calibrate(const ResidualMatrix& cal, double eps) {
  if (cal.rows() == 0) throw EmptyInput("scp1_calibrate: no residuals");
  std::vector<double> scores(cal.rows());
  for (Eigen::Index i = 0; i < cal.rows(); ++i)
    scores[static_cast<std::size_t>(i)] = cal.row(i).norm();
  ScpModel model;
  model.variant = ScpVariant::Scp1;
  model.thresholds = Vec::Constant(1, scp_calibrate(scores, eps));
  model.split_fraction = 1.0;
  model.n_reserved = cal.rows();
  model.set.family = make_family(FamilyKind::Sphere, static_cast<int>(cal.cols()));
  model.set.q = model.thresholds;
  return model;
}

ScpModel scp_dimwise_model(const ResidualMatrix& cal, double eps) {
  ScpModel model;
  model.variant = ScpVariant::Dimwise;
  model.thresholds = scp_dimwise_calibrate(cal, eps);
  model.split_fraction = 1.0;
  model.n_reserved = cal.rows();
  model.set.family =
      make_family(FamilyKind::Interval, static_cast<int>(cal.cols()));
  model.set.q = model.thresholds;
  return model;
}

ScpModel scp_split_calibrate(const ResidualMatrix& cal, double eps,
                             double split_fraction, char variant, int K,
                             std::uint64_t seed) {
  const long n = cal.rows();
  const int n_y = static_cast<int>(cal.cols());
  if (n == 0) throw EmptyInput("scp_split_calibrate: no residuals");
  if (!(split_fraction > 0.0 && split_fraction <= 1.0))
    throw DomainError("scp_split_calibrate: split_fraction outside (0,1]");

  const long n_res = static_cast<long>(std::ceil(split_fraction * n));
  if (n_res < 1 || n - n_res < 1)
    throw InsufficientData("scp_split_calibrate: a split is empty (n=" +
                           std::to_string(n) + ", reserved=" +
                           std::to_string(n_res) + ")");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const std::vector<int> reserved(order.begin(), order.begin() + n_res);
  const std::vector<int> fitting(order.begin() + n_res, order.end());

  ScpModel model;
  model.split_fraction = split_fraction;
  model.n_reserved = n_res;

  if (variant == 'A' || variant == 'a') {
    model.variant = ScpVariant::SplitA;
    const Mat cov = covariance_about(cal, fitting, Vec::Zero(n_y).eval(),
                                     model.covariance_regularized);
    const Mat prec = cov.inverse();
    std::vector<double> scores(reserved.size());
    for (std::size_t i = 0; i < reserved.size(); ++i) {
      const Vec r = cal.row(reserved[i]).transpose();
      scores[i] = r.dot(prec * r);
    }
    const double t = scp_calibrate(scores, eps);
    model.thresholds = Vec::Constant(1, t);
    model.fitted_shape = pack_ellipsoid(cov);
    model.set.family = make_family(FamilyKind::Ellipsoid, n_y);
    model.set.q = pack_ellipsoid(cov * std::max(t, 1e-12));
    return model;
  }
  if (variant != 'B' && variant != 'b')
    throw DomainError("scp_split_calibrate: variant must be 'A' or 'B'");

  model.variant = ScpVariant::SplitB;
  if (K < 1) throw DomainError("scp_split_calibrate: K must be >= 1");

  ResidualMatrix fit_rows(fitting.size(), n_y);
  for (std::size_t i = 0; i < fitting.size(); ++i)
    fit_rows.row(i) = cal.row(fitting[i]);
  const KMeansResult km = kmeans(fit_rows, K, rng.next());

  std::vector<std::vector<int>> members(K);
  for (Eigen::Index i = 0; i < fit_rows.rows(); ++i)
    members[km.assignment[static_cast<std::size_t>(i)]].push_back(
        fitting[static_cast<std::size_t>(i)]);

  std::vector<Mat> covs(K);
  std::vector<Vec> centers(K);
  for (int k = 0; k < K; ++k) {
    centers[k] = km.centers.row(k).transpose();
    covs[k] = covariance_about(cal, members[k], centers[k],
                               model.covariance_regularized);
    // normalize: the (1-eps)-quantile of the cluster's own Mahalanobis
    // distances becomes 1
    std::vector<double> maha(members[k].size());
    const Mat prec = covs[k].inverse();
    for (std::size_t i = 0; i < members[k].size(); ++i) {
      const Vec d = cal.row(members[k][i]).transpose() - centers[k];
      maha[i] = d.dot(prec * d);
    }
    double t_norm = 1.0;
    if (!maha.empty()) {
      const long m = static_cast<long>(maha.size());
      // same order-statistic convention as scp_calibrate, with the budget
      // clamped at zero for clusters too small to afford one
      long rho_c = static_cast<long>(std::floor(eps * (m + 1) + 1e-9)) - 1;
      rho_c = std::max<long>(rho_c, 0);
      std::vector<double> sorted = maha;
      auto nth = sorted.begin() + (m - rho_c - 1);
      std::nth_element(sorted.begin(), nth, sorted.end());
      t_norm = std::max(*nth, 1e-12);
    }
    covs[k] *= t_norm;
  }

  auto union_params = [&](double scale) {
    Vec q(K * (n_y + tri_size(n_y)));
    for (int k = 0; k < K; ++k) {
      const int off = k * (n_y + tri_size(n_y));
      q.segment(off, n_y) = centers[k];
      q.segment(off + n_y, tri_size(n_y)) =
          pack_ellipsoid(covs[k] * scale);
    }
    return q;
  };

  model.set.family = make_family(FamilyKind::UnionEllipsoid, n_y, K);
  model.fitted_shape = union_params(1.0);

  std::vector<Mat> precs(K);
  for (int k = 0; k < K; ++k) precs[k] = covs[k].inverse();
  std::vector<double> scores(reserved.size());
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    double lowest = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const Vec d = cal.row(reserved[i]).transpose() - centers[k];
      lowest = std::min(lowest, d.dot(precs[k] * d));
    }
    scores[i] = lowest;
  }
  const double t = scp_calibrate(scores, eps);
  model.thresholds = Vec::Constant(1, t);
  model.set.q = union_params(std::max(t, 1e-12));
  return model;
}

Certificate scp_certificate(long n_used, double eps) {
  const long rho = scp_outlier_budget(n_used, eps);
  Certificate cert;
  cert.method = "scp";
  cert.eps_target = eps;
  cert.expected_bound = static_cast<double>(rho + 1) / (n_used + 1);
  cert.beta = reg_inc_beta(1.0 - eps, static_cast<double>(n_used - rho),
                           static_cast<double>(rho + 1));
  cert.beta_dist = {static_cast<double>(n_used - rho),
                    static_cast<double>(rho + 1)};
  cert.assumptions_convex = true;
  return cert;
}

Certificate scp_dimwise_certificate(long n_cal, double eps, int n_y) {
  const long rho_d = scp_outlier_budget(n_cal, eps / n_y);
  Certificate cert;
  cert.method = "scp";
  cert.eps_target = eps;
  cert.expected_bound =
      static_cast<double>(n_y) * (rho_d + 1) / (n_cal + 1);
  cert.beta = std::min(
      1.0, n_y * reg_inc_beta(1.0 - eps / n_y,
                              static_cast<double>(n_cal - rho_d),
                              static_cast<double>(rho_d + 1)));
  cert.beta_dist.reset();
  cert.assumptions_convex = true;
  return cert;
}

}  // namespace mvcp
