#ifndef MVCP_KMEANS_HPP
#define MVCP_KMEANS_HPP

#include <vector>

#include "mvcp/types.hpp"

namespace mvcp {

struct KMeansResult {
  Mat centers;                      // K x dim
  std::vector<int> assignment;     // per-point cluster index
  double inertia = 0.0;            // sum of squared distances to assigned center
  std::vector<double> inertia_trace;  // per Lloyd iteration, nonincreasing
};

// Lloyd's algorithm with k-means++ seeding from the given seed. Stops when
// assignments are unchanged or after max_iters iterations. Deterministic
// given (points, K, seed).
KMeansResult kmeans(const ResidualMatrix& points, int K, std::uint64_t seed,
                    int max_iters = 100);

}  // namespace mvcp

#endif  // MVCP_KMEANS_HPP
