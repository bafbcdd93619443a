#pragma once

// Quality booster: predicts the residual between a real image and its
// enhanced version from stored (enhanced, residual) exemplar pairs with
// locally linear embedding weights over the nearest exemplars.

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pager/enhancer.hpp"
#include "pager/image.hpp"
#include "pager/imageops.hpp"
#include "pager/parallel.hpp"
#include "pager/rng.hpp"

namespace pager {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BoosterConfig {
  int neighbors = 2;
  double reg = 1e-3;
  int feature_dims = 128;  // PCA dims for neighbor search; 0 keeps raw pixels
  std::size_t max_exemplars = 50000;
  std::size_t pca_rows = 10000;  // rows used to estimate the projection
  CannyParams mask;
};

struct BoosterStage {
  int resolution = 0;
  int channels = 0;
  int neighbors = 2;
  double reg = 1e-3;
  CannyParams mask;
  std::vector<float> pca_mean;  // empty in raw-pixel mode
  FloatMatrix pca_basis;        // f x D
  FloatMatrix features;         // M x f
  FloatMatrix residuals;        // M x D

  bool trained() const noexcept { return features.rows() > 0; }
  int pixel_dim() const noexcept { return resolution * resolution * channels; }
  Eigen::Index exemplars() const noexcept { return features.rows(); }

  friend bool operator==(const BoosterStage& a, const BoosterStage& b) {
    auto same = [](const FloatMatrix& x, const FloatMatrix& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return a.resolution == b.resolution && a.channels == b.channels && a.neighbors == b.neighbors && a.reg == b.reg &&
           a.mask.low == b.mask.low && a.mask.high == b.mask.high && a.mask.sigma == b.mask.sigma &&
           a.mask.dilate_radius == b.mask.dilate_radius && a.pca_mean == b.pca_mean && same(a.pca_basis, b.pca_basis) &&
           same(a.features, b.features) && same(a.residuals, b.residuals);
  }
};

/// Constrained least-squares reconstruction weights of `query` from the rows
/// of `neighbors`: solves (G + reg * tr(G) / k * I) w = 1 with G the local
/// Gram matrix, then normalizes to sum 1. Weights may be negative.
/// A singular system falls back to the minimum-norm constrained solution.
inline Eigen::VectorXd lle_weights(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const Eigen::Ref<const Eigen::MatrixXd>& neighbors, double reg) {
  const Eigen::Index k = neighbors.rows();
  detail::require(k >= 1, "lle_weights: need at least one neighbor");
  detail::require(neighbors.cols() == query.size(), "lle_weights: neighbor and query dims differ");
  detail::require(reg >= 0.0, "lle_weights: regularizer must be >= 0");
  if (k == 1) return Eigen::VectorXd::Ones(1);

  const Eigen::MatrixXd diff = neighbors.rowwise() - query.transpose();
  const Eigen::MatrixXd gram = diff * diff.transpose();
  const double trace = gram.trace();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);

  auto solve = [&](double r) -> Eigen::VectorXd {
    Eigen::MatrixXd g = gram;
    // A zero trace means every neighbor equals the query.
    const double ridge = trace > 0.0 ? r * trace / static_cast<double>(k) : 1e-12;
    g.diagonal().array() += ridge;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
    if (!lu.isInvertible()) return {};
    Eigen::VectorXd w = lu.solve(ones);
    const double s = w.sum();
    if (!w.allFinite() || s == 0.0) return {};
    return w / s;
  };

  Eigen::VectorXd w = solve(reg);
  if (w.size() == 0) {
    // Singular Gram matrix (only possible without a regularizer): take the
    // minimum-norm solution of the constraint system [G 1; 1' 0] [w; l] = [0; 1].
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
    kkt.topLeftCorner(k, k) = gram;
    kkt.col(k).head(k).setOnes();
    kkt.row(k).head(k).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
    rhs(k) = 1.0;
    w = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(kkt).solve(rhs).head(k);
    spdlog::debug("lle_weights: singular neighborhood, minimum-norm constrained solution");
    if (!w.allFinite()) w = ones / static_cast<double>(k);
  }
  return w;
}

/// Indices of the k nearest rows of `features` by Euclidean distance; ties
/// go to the lower index. Result is ordered nearest first.
inline std::vector<Eigen::Index> nearest_rows(const FloatMatrix& features, const Eigen::Ref<const Eigen::VectorXd>& q,
                                              int k) {
  const Eigen::Index m = features.rows(), f = features.cols();
  detail::require(q.size() == f, "nearest_rows: query dim does not match the features");
  k = static_cast<int>(std::min<Eigen::Index>(k, m));
  std::vector<Eigen::Index> best;
  std::vector<double> dist;
  best.reserve(k + 1);
  dist.reserve(k + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const float* row = features.data() + i * f;
    double d = 0.0;
    for (Eigen::Index j = 0; j < f; ++j) {
      const double t = static_cast<double>(row[j]) - q(j);
      d += t * t;
    }
    if (static_cast<int>(best.size()) == k && d >= dist.back()) continue;
    auto pos = std::upper_bound(dist.begin(), dist.end(), d);
    const auto at = pos - dist.begin();
    dist.insert(pos, d);
    best.insert(best.begin() + at, i);
    if (static_cast<int>(best.size()) > k) {
      best.pop_back();
      dist.pop_back();
    }
  }
  return best;
}

/// Search feature of an enhanced image.
inline Eigen::VectorXd booster_feature(const BoosterStage& stage, const ImageTensor& img) {
  const auto px = img.data();
  Eigen::VectorXd x(static_cast<Eigen::Index>(px.size()));
  for (std::size_t i = 0; i < px.size(); ++i) x(static_cast<Eigen::Index>(i)) = px[i];
  if (stage.pca_mean.empty()) return x;
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) -= stage.pca_mean[static_cast<std::size_t>(i)];
  return stage.pca_basis.cast<double>() * x;
}

struct BoosterPair {
  ImageTensor enhanced;
  ResidualTensor residual;  // image - enhanced, exact in double
};

inline BoosterPair make_booster_pair(const EnhancerStage& enhancer, const ImageTensor& img, Rng& rng) {
  BoosterPair p{enhance(enhancer, box_downsample(img, 2), rng), ResidualTensor(img)};
  auto r = p.residual.data();
  auto e = p.enhanced.data();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= static_cast<double>(e[i]);
  return p;
}

/// Builds the exemplar store from real images at the stage resolution.
/// Exemplar i is enhanced with Rng(stream_seed(seed, 0, i)) after the
/// seeded subsample to `max_exemplars`.
inline BoosterStage train_booster(std::span<const ImageTensor> images, const EnhancerStage& enhancer,
                                  const BoosterConfig& cfg, std::uint64_t seed) {
  detail::require(!images.empty(), "train_booster: empty training set");
  if (!enhancer.trained()) throw InvalidState("train_booster: enhancer is not trained");
  detail::require(cfg.neighbors >= 1, "train_booster: need at least one neighbor");
  for (const auto& img : images)
    detail::require(img.width() == enhancer.resolution && img.height() == enhancer.resolution &&
                        img.channels() == enhancer.channels(),
                    "train_booster: images must match the enhancer resolution");

  std::vector<std::size_t> pick(images.size());
  std::iota(pick.begin(), pick.end(), 0);
  if (cfg.max_exemplars > 0 && pick.size() > cfg.max_exemplars) {
    Rng rng(stream_seed(seed, 0x53554253, 0));
    for (std::size_t i = 0; i < cfg.max_exemplars; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
    pick.resize(cfg.max_exemplars);
    std::sort(pick.begin(), pick.end());
  }

  BoosterStage stage;
  stage.resolution = enhancer.resolution;
  stage.channels = enhancer.channels();
  stage.neighbors = cfg.neighbors;
  stage.reg = cfg.reg;
  stage.mask = cfg.mask;
  const Eigen::Index m = static_cast<Eigen::Index>(pick.size()), dim = stage.pixel_dim();

  FloatMatrix enhanced(m, dim);
  stage.residuals.resize(m, dim);
  parallel_for(pick.size(), 16, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(stream_seed(seed, 0, i));
      const auto p = make_booster_pair(enhancer, images[pick[i]], rng);
      const auto ev = p.enhanced.data();
      const auto rv = p.residual.data();
      for (Eigen::Index j = 0; j < dim; ++j) {
        enhanced(static_cast<Eigen::Index>(i), j) = ev[j];
        stage.residuals(static_cast<Eigen::Index>(i), j) = static_cast<float>(rv[j]);
      }
    }
  });

  if (cfg.feature_dims <= 0 || cfg.feature_dims >= dim) {
    stage.features = std::move(enhanced);
    return stage;
  }

  // Projection onto the leading principal directions of the enhanced images.
  std::vector<std::size_t> rows(static_cast<std::size_t>(m));
  std::iota(rows.begin(), rows.end(), 0);
  if (cfg.pca_rows > 0 && rows.size() > cfg.pca_rows) {
    Rng rng(stream_seed(seed, 0x504341, 0));
    for (std::size_t i = 0; i < cfg.pca_rows; ++i) std::swap(rows[i], rows[i + rng.below(rows.size() - i)]);
    rows.resize(cfg.pca_rows);
    std::sort(rows.begin(), rows.end());
  }
  Eigen::MatrixXd sample(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    sample.row(static_cast<Eigen::Index>(i)) = enhanced.row(static_cast<Eigen::Index>(rows[i])).cast<double>();
  const Eigen::RowVectorXd mean = sample.colwise().mean();
  sample.rowwise() -= mean;
  const Eigen::MatrixXd cov = (sample.transpose() * sample) / static_cast<double>(sample.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const int f = cfg.feature_dims;
  Eigen::MatrixXd basis(f, dim);
  for (int i = 0; i < f; ++i) {
    Eigen::VectorXd v = eig.eigenvectors().col(dim - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.row(i) = v.transpose();
  }
  stage.pca_mean.assign(mean.data(), mean.data() + dim);
  stage.pca_basis = basis.cast<float>();

  stage.features.resize(m, f);
  const Eigen::MatrixXd basis_f = stage.pca_basis.cast<double>();
  Eigen::RowVectorXd mean_f(dim);
  for (Eigen::Index j = 0; j < dim; ++j) mean_f(j) = stage.pca_mean[static_cast<std::size_t>(j)];
  parallel_for(static_cast<std::size_t>(m), 256, [&](std::size_t b, std::size_t e) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b), n = static_cast<Eigen::Index>(e - b);
    const Eigen::MatrixXd block = enhanced.middleRows(lo, n).cast<double>().rowwise() - mean_f;
    stage.features.middleRows(lo, n) = (block * basis_f.transpose()).cast<float>();
  });
  return stage;
}

inline BoosterStage train_booster(const std::vector<ImageTensor>& images, const EnhancerStage& enhancer,
                                  const BoosterConfig& cfg, std::uint64_t seed) {
  return train_booster(std::span<const ImageTensor>(images), enhancer, cfg, seed);
}

/// Predicted residual for an enhanced image (before masking).
inline ResidualTensor predict_residual(const BoosterStage& stage, const ImageTensor& img) {
  const Eigen::VectorXd q = booster_feature(stage, img);
  const auto idx = nearest_rows(stage.features, q, stage.neighbors);
  Eigen::MatrixXd nb(static_cast<Eigen::Index>(idx.size()), stage.features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    nb.row(static_cast<Eigen::Index>(i)) = stage.features.row(idx[i]).cast<double>();
  const Eigen::VectorXd w = lle_weights(q, nb, stage.reg);
  ResidualTensor r(img.width(), img.height(), img.channels());
  auto out = r.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* row = stage.residuals.data() + idx[i] * stage.residuals.cols();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w(static_cast<Eigen::Index>(i)) * row[j];
  }
  return r;
}

/// Adds the masked predicted residual. The rng is unused; boosting is
/// deterministic.
inline ImageTensor boost(const BoosterStage& stage, const ImageTensor& img, Rng& /*rng*/) {
  if (!stage.trained()) throw InvalidState("booster stage is not trained");
  detail::require(img.width() == stage.resolution && img.height() == stage.resolution &&
                      img.channels() == stage.channels,
                  "boost: image does not match the stage resolution");
  const EdgeMask mask = canny_mask(img, stage.mask);
  if (mask.count() == 0) return img;
  const ResidualTensor r = predict_residual(stage, img);
  ImageTensor out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (mask.at(x, y) == 0.0f) continue;
      for (int c = 0; c < img.channels(); ++c)
        out.at(x, y, c) =
            static_cast<float>(std::clamp(static_cast<double>(img.at(x, y, c)) + r.at(x, y, c), 0.0, 1.0));
    }
  return out;
}

}  // namespace pager
