#include "mvcp/kmeans.hpp"

#include <limits>

#include "mvcp/errors.hpp"

namespace mvcp {

namespace {

double sq_dist(const ResidualMatrix& pts, int i, const Mat& centers, int k) {
  return (pts.row(i) - centers.row(k)).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const ResidualMatrix& points, int K, std::uint64_t seed,
                    int max_iters) {
  const int n = static_cast<int>(points.rows());
  const int dim = static_cast<int>(points.cols());
  if (n == 0) throw EmptyInput("kmeans: no points");
  if (K < 1 || K > n)
    throw DomainError("kmeans: require 1 <= K <= number of points");
  if (!points.allFinite()) throw DomainError("kmeans: points must be finite");

  Rng rng(seed);
  KMeansResult res;
  res.centers.resize(K, dim);

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    res.centers.row(0) = points.row(first);
    for (int k = 1; k < K; ++k) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], sq_dist(points, i, res.centers, k - 1));
        total += d2[i];
      }
      int chosen = -1;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
        if (chosen < 0) chosen = n - 1;
      } else {
        // all remaining distances zero (duplicate points): first unused index
        chosen = k % n;
      }
      res.centers.row(k) = points.row(chosen);
    }
  }

  res.assignment.assign(n, -1);
  std::vector<int> counts(K);
  Mat sums(K, dim);

  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points, i, res.centers, 0);
      for (int k = 1; k < K; ++k) {
        const double d = sq_dist(points, i, res.centers, k);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
      inertia += best_d;
    }
    res.inertia_trace.push_back(inertia);
    res.inertia = inertia;
    if (!changed) break;

    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += points.row(i);
      ++counts[res.assignment[i]];
    }
    for (int k = 0; k < K; ++k) {
      if (counts[k] > 0) {
        res.centers.row(k) = sums.row(k) / counts[k];
      } else {
        // empty cluster: reseat at the point farthest from its center
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = sq_dist(points, i, res.centers, res.assignment[i]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        res.centers.row(k) = points.row(far);
      }
    }
  }

  // final assignment pass so inertia matches the returned centers
  double inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = sq_dist(points, i, res.centers, 0);
    for (int k = 1; k < K; ++k) {
      const double d = sq_dist(points, i, res.centers, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    res.assignment[i] = best;
    inertia += best_d;
  }
  res.inertia = inertia;
  return res;
}

}  // namespace mvcp
