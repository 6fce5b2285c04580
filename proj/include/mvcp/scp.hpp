#ifndef MVCP_SCP_HPP
#define MVCP_SCP_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mvcp/certificate.hpp"
#include "mvcp/scores.hpp"

namespace mvcp {

enum class ScpVariant { Scp1, Dimwise, SplitA, SplitB };

// Split-conformal model: a fitted shape plus the order-statistic threshold
// calibrated on the reserved split.
struct ScpModel {
  ScpVariant variant = ScpVariant::Scp1;
  PredictionSet set;       // final calibrated prediction set
  Vec fitted_shape;        // shape parameters before thresholding (may be empty)
  Vec thresholds;          // scalar threshold, or one per dimension for Dimwise
  double split_fraction = 1.0;
  long n_reserved = 0;     // points used for threshold calibration
  bool covariance_regularized = false;
};

// Outlier budget floor(eps*(n_cal+1)) - 1; throws InsufficientData when the
// result would be negative.
long scp_outlier_budget(long n_cal, double eps);

// The (n_cal - rho)-smallest score, i.e. the empirical (1-eps)-quantile in
// order-statistic form.
double scp_calibrate(std::vector<double> scores, double eps);

// Per-dimension thresholds on |r_j| at level eps/n_y (Bonferroni box).
Vec scp_dimwise_calibrate(const ResidualMatrix& cal, double eps);

// Scalar SCP on ||r||_2: spherical set.
ScpModel scp1_calibrate(const ResidualMatrix& cal, double eps);

ScpModel scp_dimwise_model(const ResidualMatrix& cal, double eps);

// Shape-then-threshold baselines. A reserved split of ceil(split_fraction*n)
// points (after a seeded shuffle) calibrates the threshold; the rest fits
//   A: a single residual covariance (ellipsoidal set),
//   B: K-means centers with per-cluster covariances, each normalized so the
//      (1-eps)-quantile of its own cluster's Mahalanobis distances equals 1
//      (union-of-ellipsoids set).
ScpModel scp_split_calibrate(const ResidualMatrix& cal, double eps,
                             double split_fraction, char variant, int K,
                             std::uint64_t seed);

// Coverage certificate for a scalar-threshold SCP calibration on n_used
// points: Beta(n_used - rho, rho + 1) coverage law.
Certificate scp_certificate(long n_used, double eps);

// Bonferroni certificate for the dimension-wise box (expected bound via the
// union bound; no exact joint coverage law).
Certificate scp_dimwise_certificate(long n_cal, double eps, int n_y);

}  // namespace mvcp

#endif  // MVCP_SCP_HPP
