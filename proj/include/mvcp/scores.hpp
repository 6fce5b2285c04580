#ifndef MVCP_SCORES_HPP
#define MVCP_SCORES_HPP

#include <memory>
#include <string>

#include "mvcp/types.hpp"

namespace mvcp {

// A parameterized vector score s(r, q) in R^{n_s} together with the set-size
// cost J(q). A residual r belongs to the prediction set of parameters q iff
// every component of s(r, q) is <= 0.
class ScoreFamily {
 public:
  virtual ~ScoreFamily() = default;

  const std::string& name() const { return name_; }
  int n_y() const { return n_y_; }
  int n_q() const { return n_q_; }
  int n_s() const { return n_s_; }
  bool convex_in_q() const { return convex_in_q_; }

  // s(r, q), written into out (resized to n_s)
  virtual void eval(const Vec& q, const VecRef& r, Vec& out) const = 0;

  virtual double cost(const Vec& q) const = 0;

  // Analytic ds/dq (n_s x n_q) and dJ/dq; return false when unavailable,
  // in which case callers fall back to finite differences.
  virtual bool score_jacobian(const Vec& q, const VecRef& r, Mat& jac) const {
    (void)q;
    (void)r;
    (void)jac;
    return false;
  }
  virtual bool cost_gradient(const Vec& q, Vec& grad) const {
    (void)q;
    (void)grad;
    return false;
  }

  // Starting parameters for calibration. `seed` feeds clustering-based
  // initializers; shape-only families ignore it.
  virtual Vec init(const ResidualMatrix& cal, std::uint64_t seed) const = 0;

  // Magnitude-constrained entries (radii, widths, diagonal factors) enter
  // evaluation through |.|; this maps q onto the non-negative chart without
  // changing the prediction set.
  virtual Vec canonicalize(const Vec& q) const { return q; }

  // Axis-aligned box containing {r : s(r, q) <= 0}. `cal` supports families
  // whose box is data-adaptive.
  virtual Box bounding_box(const Vec& q, const ResidualMatrix& cal) const = 0;

 protected:
  ScoreFamily(std::string name, int n_y, int n_q, int n_s, bool convex)
      : name_(std::move(name)), n_y_(n_y), n_q_(n_q), n_s_(n_s),
        convex_in_q_(convex) {}

  void check_dims(const Vec& q, const VecRef& r) const;

 private:
  std::string name_;
  int n_y_;
  int n_q_;
  int n_s_;
  bool convex_in_q_;
};

using FamilyPtr = std::shared_ptr<const ScoreFamily>;

enum class FamilyKind { Sphere, Interval, Ellipsoid, UnionEllipsoid, Rbf };

// Construct one of the built-in families:
//   Sphere          s = ||r||_2 - q,                  n_q = 1
//   Interval        s = (-r - q; r - q),              n_q = n_y
//   Ellipsoid       s = r^T L L^T r - 1,              n_q = n_y(n_y+1)/2
//   UnionEllipsoid  s = min_i (r-c_i)^T L_i L_i^T (r-c_i) - 1,
//                                                     n_q = K(n_y + n_y(n_y+1)/2)
//   Rbf             s = gamma - sum_i exp(-||r-mu_i||^2 / (2 sigma_i^2)),
//                                                     n_q = N(n_y+1) + 1
// `components` is K for UnionEllipsoid and N for Rbf, ignored otherwise.
FamilyPtr make_family(FamilyKind kind, int n_y, int components = 1);

// Parse a CLI-style spec: sphere | interval | ellipsoid | union:K | rbf:N
FamilyPtr parse_family(const std::string& spec, int n_y);

// A score family bound to concrete parameters.
struct PredictionSet {
  FamilyPtr family;
  Vec q;
};

double score_max(const ScoreFamily& family, const Vec& q, const VecRef& r);
bool membership(const PredictionSet& set, const VecRef& r);
// max(0, max_j s_j(r, q)); zero exactly when r is a member
double slack(const ScoreFamily& family, const Vec& q, const VecRef& r);

// Pack/unpack of a lower-triangular matrix into a parameter segment,
// column-major over the lower triangle. Shared by the ellipsoid families.
int tri_size(int n);
void unpack_lower(const VecRef& packed, int n, Mat& L);
void pack_lower(const Mat& L, Vec& packed);

}  // namespace mvcp

#endif  // MVCP_SCORES_HPP
