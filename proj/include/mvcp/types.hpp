#ifndef MVCP_TYPES_HPP
#define MVCP_TYPES_HPP

#include <Eigen/Dense>

#include "mvcp/errors.hpp"
#include "mvcp/rng.hpp"

namespace mvcp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// Calibration/test residuals r = y - f(x), one sample per row.
using ResidualMatrix = Eigen::MatrixXd;

// Axis-aligned box, the support region for Monte Carlo volume estimation.
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }

  double volume() const {
    double v = 1.0;
    for (int j = 0; j < dim(); ++j) v *= std::max(0.0, hi[j] - lo[j]);
    return v;
  }

  bool contains(const VecRef& r) const {
    for (int j = 0; j < dim(); ++j)
      if (r[j] < lo[j] || r[j] > hi[j]) return false;
    return true;
  }

  void sample(Rng& rng, Vec& out) const {
    out.resize(dim());
    for (int j = 0; j < dim(); ++j) out[j] = rng.uniform(lo[j], hi[j]);
  }
};

}  // namespace mvcp

#endif  // MVCP_TYPES_HPP
