#include "mvcp/scores.hpp"

#include <cmath>
#include <limits>

#include "mvcp/kmeans.hpp"

namespace mvcp {

namespace {

constexpr double kDiagFloor = 1e-8;   // ellipsoid L diagonal
constexpr double kSigmaFloor = 1e-6;  // RBF widths

thread_local Vec tls_vec_a;
thread_local Vec tls_vec_b;
thread_local Mat tls_mat;

double quad_form(const Mat& L, const VecRef& r) {
  // ||L^T r||^2
  tls_vec_a.noalias() = L.transpose() * r;
  return tls_vec_a.squaredNorm();
}

// Diagonal entries enter through their magnitude, floored away from zero.
// Using |.| rather than a one-sided clamp keeps the gradient alive when a
// solver step overshoots a diagonal below zero; the shape only ever sees
// the magnitude.
void floored_lower(const VecRef& packed, int n, Mat& L) {
  unpack_lower(packed, n, L);
  for (int j = 0; j < n; ++j) L(j, j) = std::max(std::fabs(L(j, j)), kDiagFloor);
}

double diag_sign(double raw) {
  if (std::fabs(raw) <= kDiagFloor) return 0.0;
  return raw > 0.0 ? 1.0 : -1.0;
}

// half-widths sqrt(diag((L L^T)^{-1})) of the ellipsoid {r : ||L^T r||^2 <= 1}
Vec ellipsoid_half_widths(const Mat& L) {
  const int n = static_cast<int>(L.rows());
  const Mat inv = L.triangularView<Eigen::Lower>().solve(Mat::Identity(n, n));
  Vec hw(n);
  for (int j = 0; j < n; ++j) hw[j] = inv.col(j).norm();
  if (!hw.allFinite()) throw SingularShape("ellipsoid shape is singular");
  return hw;
}

Mat cluster_shape_matrix(const ResidualMatrix& cal,
                         const std::vector<int>& members, const VecRef& center) {
  const int n_y = static_cast<int>(cal.cols());
  Mat cov = Mat::Zero(n_y, n_y);
  for (int i : members) {
    const Vec d = cal.row(i).transpose() - center;
    cov.noalias() += d * d.transpose();
  }
  cov /= std::max<std::size_t>(members.size(), 1);
  cov.diagonal().array() += 1e-9 * (cov.trace() / n_y + 1.0);
  return cov;
}

// lower-triangular L with L L^T = cov^{-1}
Mat inverse_cholesky(const Mat& cov) {
  Eigen::LLT<Mat> llt(cov.inverse());
  if (llt.info() != Eigen::Success)
    throw SingularShape("covariance is not positive definite");
  return llt.matrixL();
}

class SphereFamily final : public ScoreFamily {
 public:
  explicit SphereFamily(int n_y)
      : ScoreFamily("sphere", n_y, 1, 1, /*convex=*/true) {}

  void eval(const Vec& q, const VecRef& r, Vec& out) const override {
    check_dims(q, r);
    out.resize(1);
    out[0] = r.norm() - std::fabs(q[0]);
  }

  double cost(const Vec& q) const override { return std::fabs(q[0]); }

  bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const override {
    check_dims(q, r);
    jac.resize(1, 1);
    jac(0, 0) = q[0] == 0.0 ? 0.0 : (q[0] > 0.0 ? -1.0 : 1.0);
    return true;
  }

  bool cost_gradient(const Vec& q, Vec& grad) const override {
    grad.resize(1);
    grad[0] = q[0] == 0.0 ? 0.0 : (q[0] > 0.0 ? 1.0 : -1.0);
    return true;
  }

  Vec init(const ResidualMatrix& cal, std::uint64_t) const override {
    Vec q(1);
    q[0] = cal.rows() > 0 ? cal.rowwise().norm().maxCoeff() : 1.0;
    return q;
  }

  Vec canonicalize(const Vec& q) const override { return q.cwiseAbs(); }

  Box bounding_box(const Vec& q, const ResidualMatrix&) const override {
    const double radius = std::fabs(q[0]);
    Box box;
    box.lo = Vec::Constant(n_y(), -radius);
    box.hi = Vec::Constant(n_y(), radius);
    return box;
  }
};

// Half-widths enter as |q_j|, which keeps them effectively non-negative
// (the set-size cost 1^T |q| stays bounded below under a vanishing penalty)
// without flattening the gradient when a solver step crosses zero.
class IntervalFamily final : public ScoreFamily {
 public:
  explicit IntervalFamily(int n_y)
      : ScoreFamily("interval", n_y, n_y, 2 * n_y, /*convex=*/true) {}

  void eval(const Vec& q, const VecRef& r, Vec& out) const override {
    check_dims(q, r);
    out.resize(2 * n_y());
    for (int j = 0; j < n_y(); ++j) {
      const double w = std::fabs(q[j]);
      out[j] = -r[j] - w;
      out[n_y() + j] = r[j] - w;
    }
  }

  double cost(const Vec& q) const override { return q.cwiseAbs().sum(); }

  bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const override {
    check_dims(q, r);
    jac.setZero(2 * n_y(), n_y());
    for (int j = 0; j < n_y(); ++j) {
      const double d = q[j] == 0.0 ? 0.0 : (q[j] > 0.0 ? -1.0 : 1.0);
      jac(j, j) = d;
      jac(n_y() + j, j) = d;
    }
    return true;
  }

  bool cost_gradient(const Vec& q, Vec& grad) const override {
    grad.resize(n_y());
    for (int j = 0; j < n_y(); ++j)
      grad[j] = q[j] == 0.0 ? 0.0 : (q[j] > 0.0 ? 1.0 : -1.0);
    return true;
  }

  Vec init(const ResidualMatrix& cal, std::uint64_t) const override {
    if (cal.rows() == 0) return Vec::Ones(n_y());
    return cal.cwiseAbs().colwise().maxCoeff().transpose();
  }

  Vec canonicalize(const Vec& q) const override { return q.cwiseAbs(); }

  Box bounding_box(const Vec& q, const ResidualMatrix&) const override {
    Box box;
    box.hi = q.cwiseAbs();
    box.lo = -box.hi;
    return box;
  }
};

// Centered ellipsoid {r : r^T Sigma^{-1} r <= 1} with Sigma^{-1} = L L^T,
// L lower triangular, packed column-major. Minimizing -log det Sigma^{-1}
// minimizes volume. Non-convex in L; solved locally.
class EllipsoidFamily final : public ScoreFamily {
 public:
  explicit EllipsoidFamily(int n_y)
      : ScoreFamily("ellipsoid", n_y, tri_size(n_y), 1, /*convex=*/false) {}

  void eval(const Vec& q, const VecRef& r, Vec& out) const override {
    check_dims(q, r);
    floored_lower(q, n_y(), tls_mat);
    out.resize(1);
    out[0] = quad_form(tls_mat, r) - 1.0;
  }

  double cost(const Vec& q) const override {
    floored_lower(q, n_y(), tls_mat);
    double acc = 0.0;
    for (int j = 0; j < n_y(); ++j) acc += std::log(tls_mat(j, j));
    return -2.0 * acc;
  }

  bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const override {
    check_dims(q, r);
    floored_lower(q, n_y(), tls_mat);
    tls_vec_a.noalias() = tls_mat.transpose() * r;  // L^T r
    jac.resize(1, n_q());
    int idx = 0;
    for (int j = 0; j < n_y(); ++j) {
      for (int i = j; i < n_y(); ++i) {
        // d(||L^T r||^2)/dL_ij = 2 r_i (L^T r)_j, diagonal via |.|
        double g = 2.0 * r[i] * tls_vec_a[j];
        if (i == j) g *= diag_sign(q[idx]);
        jac(0, idx++) = g;
      }
    }
    return true;
  }

  bool cost_gradient(const Vec& q, Vec& grad) const override {
    grad.setZero(n_q());
    int idx = 0;
    for (int j = 0; j < n_y(); ++j) {
      for (int i = j; i < n_y(); ++i) {
        if (i == j) grad[idx] = diag_sign(q[idx]) == 0.0 ? 0.0 : -2.0 / q[idx];
        ++idx;
      }
    }
    return true;
  }

  Vec init(const ResidualMatrix&, std::uint64_t) const override {
    Vec q;
    pack_lower(Mat::Identity(n_y(), n_y()), q);
    return q;
  }

  Vec canonicalize(const Vec& q) const override {
    Vec out = q;
    int idx = 0;
    for (int j = 0; j < n_y(); ++j) {
      for (int i = j; i < n_y(); ++i) {
        if (i == j) out[idx] = std::fabs(out[idx]);
        ++idx;
      }
    }
    return out;
  }

  Box bounding_box(const Vec& q, const ResidualMatrix&) const override {
    Mat L;
    floored_lower(q, n_y(), L);
    Box box;
    box.hi = ellipsoid_half_widths(L);
    box.lo = -box.hi;
    return box;
  }
};

// Union of K ellipsoids via the min-operator; parameters per component are
// the center followed by the packed lower-triangular factor.
class UnionEllipsoidFamily final : public ScoreFamily {
 public:
  UnionEllipsoidFamily(int n_y, int K)
      : ScoreFamily("union:" + std::to_string(K), n_y,
                    K * (n_y + tri_size(n_y)), 1, /*convex=*/false),
        K_(K) {}

  void eval(const Vec& q, const VecRef& r, Vec& out) const override {
    check_dims(q, r);
    out.resize(1);
    int best = -1;
    out[0] = component_scores_min(q, r, best);
  }

  double cost(const Vec& q) const override {
    double acc = 0.0;
    for (int k = 0; k < K_; ++k) {
      floored_lower(q.segment(offset(k) + n_y(), tri_size(n_y())), n_y(),
                    tls_mat);
      for (int j = 0; j < n_y(); ++j) acc += std::log(tls_mat(j, j));
    }
    return -2.0 * acc;
  }

  bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const override {
    check_dims(q, r);
    int best = -1;
    component_scores_min(q, r, best);
    jac.setZero(1, n_q());
    const int off = offset(best);
    const int T = tri_size(n_y());
    floored_lower(q.segment(off + n_y(), T), n_y(), tls_mat);
    tls_vec_b = r - q.segment(off, n_y());       // r - c
    tls_vec_a.noalias() = tls_mat.transpose() * tls_vec_b;  // L^T (r - c)
    // d/dc = -2 L L^T (r - c)
    jac.block(0, off, 1, n_y()).transpose().noalias() =
        -2.0 * (tls_mat * tls_vec_a);
    int idx = off + n_y();
    for (int j = 0; j < n_y(); ++j) {
      for (int i = j; i < n_y(); ++i) {
        double g = 2.0 * tls_vec_b[i] * tls_vec_a[j];
        if (i == j) g *= diag_sign(q[idx]);
        jac(0, idx) = g;
        ++idx;
      }
    }
    return true;
  }

  bool cost_gradient(const Vec& q, Vec& grad) const override {
    grad.setZero(n_q());
    const int T = tri_size(n_y());
    for (int k = 0; k < K_; ++k) {
      const int off = offset(k) + n_y();
      floored_lower(q.segment(off, T), n_y(), tls_mat);
      int idx = off;
      for (int j = 0; j < n_y(); ++j) {
        for (int i = j; i < n_y(); ++i) {
          if (i == j) grad[idx] = diag_sign(q[idx]) == 0.0 ? 0.0 : -2.0 / q[idx];
          ++idx;
        }
      }
    }
    return true;
  }

  Vec init(const ResidualMatrix& cal, std::uint64_t seed) const override {
    Vec q(n_q());
    if (cal.rows() < K_) {
      for (int k = 0; k < K_; ++k) {
        q.segment(offset(k), n_y()).setZero();
        Vec packed;
        pack_lower(Mat::Identity(n_y(), n_y()), packed);
        q.segment(offset(k) + n_y(), tri_size(n_y())) = packed;
      }
      return q;
    }
    const KMeansResult km = kmeans(cal, K_, seed);
    std::vector<std::vector<int>> members(K_);
    for (int i = 0; i < cal.rows(); ++i)
      members[km.assignment[i]].push_back(i);
    for (int k = 0; k < K_; ++k) {
      const Vec center = km.centers.row(k).transpose();
      Mat cov = cluster_shape_matrix(cal, members[k], center);
      // scale so the whole cluster starts inside its component
      double worst = 1e-12;
      const Mat prec = cov.inverse();
      for (int i : members[k]) {
        const Vec d = cal.row(i).transpose() - center;
        worst = std::max(worst, d.dot(prec * d));
      }
      cov *= worst;
      q.segment(offset(k), n_y()) = center;
      Vec packed;
      pack_lower(inverse_cholesky(cov), packed);
      q.segment(offset(k) + n_y(), tri_size(n_y())) = packed;
    }
    return q;
  }

  Vec canonicalize(const Vec& q) const override {
    Vec out = q;
    for (int k = 0; k < K_; ++k) {
      int idx = offset(k) + n_y();
      for (int j = 0; j < n_y(); ++j) {
        for (int i = j; i < n_y(); ++i) {
          if (i == j) out[idx] = std::fabs(out[idx]);
          ++idx;
        }
      }
    }
    return out;
  }

  Box bounding_box(const Vec& q, const ResidualMatrix&) const override {
    Box box;
    box.lo = Vec::Constant(n_y(), std::numeric_limits<double>::infinity());
    box.hi = -box.lo;
    for (int k = 0; k < K_; ++k) {
      Mat L;
      floored_lower(q.segment(offset(k) + n_y(), tri_size(n_y())), n_y(), L);
      const Vec hw = ellipsoid_half_widths(L);
      const Vec c = q.segment(offset(k), n_y());
      box.lo = box.lo.cwiseMin(c - hw);
      box.hi = box.hi.cwiseMax(c + hw);
    }
    return box;
  }

 private:
  int offset(int k) const { return k * (n_y() + tri_size(n_y())); }

  double component_scores_min(const Vec& q, const VecRef& r, int& best) const {
    double lowest = std::numeric_limits<double>::infinity();
    best = 0;
    for (int k = 0; k < K_; ++k) {
      floored_lower(q.segment(offset(k) + n_y(), tri_size(n_y())), n_y(),
                    tls_mat);
      tls_vec_b = r - q.segment(offset(k), n_y());
      const double s = quad_form(tls_mat, tls_vec_b) - 1.0;
      if (s < lowest) {
        lowest = s;
        best = k;
      }
    }
    return lowest;
  }

  int K_;
};

// Radial-basis sublevel set: members are the points where the mixture of N
// Gaussian bumps reaches the threshold gamma. Bounded unions of bumps;
// cost sum sigma_i^2 penalizes their total spread.
class RbfFamily final : public ScoreFamily {
 public:
  RbfFamily(int n_y, int N)
      : ScoreFamily("rbf:" + std::to_string(N), n_y, N * (n_y + 1) + 1, 1,
                    /*convex=*/false),
        N_(N) {}

  void eval(const Vec& q, const VecRef& r, Vec& out) const override {
    check_dims(q, r);
    out.resize(1);
    out[0] = gamma(q) - mixture(q, r);
  }

  double cost(const Vec& q) const override {
    return q.segment(N_ * n_y(), N_).squaredNorm();
  }

  bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const override {
    check_dims(q, r);
    jac.setZero(1, n_q());
    for (int i = 0; i < N_; ++i) {
      const double sig_raw = q[N_ * n_y() + i];
      const double sig = std::max(std::fabs(sig_raw), kSigmaFloor);
      const double sgn =
          std::fabs(sig_raw) <= kSigmaFloor ? 0.0 : (sig_raw > 0.0 ? 1.0 : -1.0);
      tls_vec_b = r - q.segment(i * n_y(), n_y());
      const double d2 = tls_vec_b.squaredNorm();
      const double e = std::exp(-0.5 * d2 / (sig * sig));
      jac.block(0, i * n_y(), 1, n_y()).transpose().noalias() =
          (-e / (sig * sig)) * tls_vec_b;
      jac(0, N_ * n_y() + i) = -sgn * e * d2 / (sig * sig * sig);
    }
    jac(0, n_q() - 1) = 1.0;
    return true;
  }

  bool cost_gradient(const Vec& q, Vec& grad) const override {
    grad.setZero(n_q());
    grad.segment(N_ * n_y(), N_) = 2.0 * q.segment(N_ * n_y(), N_);
    return true;
  }

  Vec init(const ResidualMatrix& cal, std::uint64_t seed) const override {
    Vec q = Vec::Zero(n_q());
    if (cal.rows() < N_) {
      q.segment(N_ * n_y(), N_).setConstant(1.0);
      q[n_q() - 1] = 0.5;
      return q;
    }
    const KMeansResult km = kmeans(cal, N_, seed);
    std::vector<double> sq_sum(N_, 0.0);
    std::vector<int> counts(N_, 0);
    for (int i = 0; i < cal.rows(); ++i) {
      const int k = km.assignment[i];
      sq_sum[k] += (cal.row(i) - km.centers.row(k)).squaredNorm();
      ++counts[k];
    }
    const double global_rms =
        std::sqrt(cal.rowwise().squaredNorm().mean() + 1e-12);
    for (int i = 0; i < N_; ++i) {
      q.segment(i * n_y(), n_y()) = km.centers.row(i).transpose();
      const double rms =
          counts[i] > 0 ? std::sqrt(sq_sum[i] / counts[i]) : 0.0;
      q[N_ * n_y() + i] = std::max(rms, 0.05 * global_rms + 1e-3);
    }
    double lowest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < cal.rows(); ++i)
      lowest = std::min(lowest, mixture(q, cal.row(i).transpose()));
    q[n_q() - 1] = lowest;  // every calibration point starts as a member
    return q;
  }

  Vec canonicalize(const Vec& q) const override {
    Vec out = q;
    out.segment(N_ * n_y(), N_) = out.segment(N_ * n_y(), N_).cwiseAbs();
    return out;
  }

  Box bounding_box(const Vec& q, const ResidualMatrix& cal) const override {
    if (cal.rows() == 0)
      throw SingularShape("rbf bounding box needs calibration residuals");
    const double pad =
        3.0 *
        std::max(q.segment(N_ * n_y(), N_).cwiseAbs().maxCoeff(), kSigmaFloor);
    Box box;
    box.lo = cal.colwise().minCoeff().transpose().array() - pad;
    box.hi = cal.colwise().maxCoeff().transpose().array() + pad;
    return box;
  }

 private:
  double gamma(const Vec& q) const { return q[n_q() - 1]; }

  double mixture(const Vec& q, const VecRef& r) const {
    double acc = 0.0;
    for (int i = 0; i < N_; ++i) {
      const double sig = std::max(std::fabs(q[N_ * n_y() + i]), kSigmaFloor);
      const double d2 = (r - q.segment(i * n_y(), n_y())).squaredNorm();
      acc += std::exp(-0.5 * d2 / (sig * sig));
    }
    return acc;
  }

  int N_;
};

}  // namespace

void ScoreFamily::check_dims(const Vec& q, const VecRef& r) const {
  if (q.size() != n_q_)
    throw DimensionMismatch(name_ + ": parameter vector has length " +
                            std::to_string(q.size()) + ", expected " +
                            std::to_string(n_q_));
  if (r.size() != n_y_)
    throw DimensionMismatch(name_ + ": residual has length " +
                            std::to_string(r.size()) + ", expected " +
                            std::to_string(n_y_));
}

int tri_size(int n) { return n * (n + 1) / 2; }

void unpack_lower(const VecRef& packed, int n, Mat& L) {
  L.setZero(n, n);
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) L(i, j) = packed[idx++];
}

void pack_lower(const Mat& L, Vec& packed) {
  const int n = static_cast<int>(L.rows());
  packed.resize(tri_size(n));
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) packed[idx++] = L(i, j);
}

FamilyPtr make_family(FamilyKind kind, int n_y, int components) {
  if (n_y < 1)
    throw UnsupportedDimension("make_family: n_y must be >= 1, got " +
                               std::to_string(n_y));
  if (components < 1)
    throw DomainError("make_family: component count must be >= 1");
  switch (kind) {
    case FamilyKind::Sphere:
      return std::make_shared<SphereFamily>(n_y);
    case FamilyKind::Interval:
      return std::make_shared<IntervalFamily>(n_y);
    case FamilyKind::Ellipsoid:
      return std::make_shared<EllipsoidFamily>(n_y);
    case FamilyKind::UnionEllipsoid:
      return std::make_shared<UnionEllipsoidFamily>(n_y, components);
    case FamilyKind::Rbf:
      return std::make_shared<RbfFamily>(n_y, components);
  }
  throw DomainError("make_family: unknown kind");
}

FamilyPtr parse_family(const std::string& spec, int n_y) {
  if (spec == "sphere") return make_family(FamilyKind::Sphere, n_y);
  if (spec == "interval") return make_family(FamilyKind::Interval, n_y);
  if (spec == "ellipsoid") return make_family(FamilyKind::Ellipsoid, n_y);
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    const std::string head = spec.substr(0, colon);
    int count = 0;
    try {
      count = std::stoi(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw DomainError("parse_family: bad component count in '" + spec + "'");
    }
    if (head == "union") return make_family(FamilyKind::UnionEllipsoid, n_y, count);
    if (head == "rbf") return make_family(FamilyKind::Rbf, n_y, count);
  }
  throw DomainError("parse_family: unknown score family '" + spec + "'");
}

double score_max(const ScoreFamily& family, const Vec& q, const VecRef& r) {
  thread_local Vec scores;
  family.eval(q, r, scores);
  return scores.maxCoeff();
}

bool membership(const PredictionSet& set, const VecRef& r) {
  return score_max(*set.family, set.q, r) <= 0.0;
}

double slack(const ScoreFamily& family, const Vec& q, const VecRef& r) {
  return std::max(0.0, score_max(family, q, r));
}

}  // namespace mvcp
