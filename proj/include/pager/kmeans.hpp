#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <vector>

#include "pager/error.hpp"
#include "pager/rng.hpp"
#include "pager/saab.hpp"

namespace pager {

struct KMeansResult {
  DataMatrix centers;
  std::vector<int> labels;
  std::vector<double> inertia;  // objective after every assignment step
};

namespace detail {

/// Row-wise squared distances to every center (N x K), via the expanded
/// form with a clamp at zero.
inline Eigen::MatrixXd squared_distances(const DataMatrix& data, const DataMatrix& centers) {
  Eigen::MatrixXd d = -2.0 * (data * centers.transpose());
  d.colwise() += data.rowwise().squaredNorm();
  d.rowwise() += centers.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

/// k-means++ seeding: first center uniform, the rest by D^2 sampling.
inline DataMatrix kmeans_plus_plus(const DataMatrix& data, int k, Rng& rng) {
  const Eigen::Index n = data.rows();
  detail::require(k >= 1 && n >= k, "kmeans++: need at least k samples");
  DataMatrix centers(k, data.cols());
  centers.row(0) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n))));
  Eigen::VectorXd nearest = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  std::vector<double> cumulative(static_cast<std::size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) cumulative[i] = (total += nearest(i));
    Eigen::Index pick;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
    } else {
      pick = static_cast<Eigen::Index>(rng.categorical(cumulative));
    }
    centers.row(c) = data.row(pick);
    nearest = nearest.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

/// Lloyd iterations from the given centers. Empty clusters keep their
/// previous center. Ties go to the lowest center index.
inline KMeansResult lloyd(const DataMatrix& data, DataMatrix centers, int max_iters) {
  const Eigen::Index n = data.rows(), k = centers.rows();
  KMeansResult out;
  out.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd d = detail::squared_distances(data, centers);
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < k; ++c)
        if (d(i, c) < d(i, best)) best = c;
      changed |= out.labels[i] != best;
      out.labels[i] = static_cast<int>(best);
      inertia += (data.row(i) - centers.row(best)).squaredNorm();
    }
    out.inertia.push_back(inertia);
    if (!changed && it > 0) break;
    DataMatrix sums = DataMatrix::Zero(k, data.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(out.labels[i]) += data.row(i);
      counts[out.labels[i]] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  }
  out.centers = std::move(centers);
  return out;
}

/// k-means++ seeded Lloyd's algorithm.
inline KMeansResult kmeans(const DataMatrix& data, int k, std::uint64_t seed, int max_iters = 50) {
  detail::require(k >= 1, "kmeans: k must be >= 1");
  detail::require(data.rows() >= k, "kmeans: fewer samples than clusters");
  Rng rng(seed);
  return lloyd(data, kmeans_plus_plus(data, k, rng), max_iters);
}

}  // namespace pager
