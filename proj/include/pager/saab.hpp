#pragma once

// Saab transform: per-patch mean removal, a fixed DC direction, and PCA of
// the DC-free residual. Stages are cascaded over non-overlapping 2x2
// windows (stride 2) until the image collapses to a single 1x1 feature map
// whose channels form the core-space vector. No channel is ever pruned, so
// the cascade is an orthonormal (plus offset) map and exactly invertible.

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pager/error.hpp"
#include "pager/image.hpp"
#include "pager/parallel.hpp"

namespace pager {

/// Samples stored as rows.
using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Streaming mean/covariance (Welford, merged with Chan's update).
class MomentAccumulator {
 public:
  explicit MomentAccumulator(int dim = 0) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

  void add(const double* x) {
    const int d = static_cast<int>(mean_.size());
    count_ += 1.0;
    Eigen::Map<const Eigen::VectorXd> v(x, d);
    const Eigen::VectorXd delta = v - mean_;
    mean_ += delta / count_;
    m2_.noalias() += delta * (v - mean_).transpose();
  }

  void merge(const MomentAccumulator& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double n = count_ + o.count_;
    const Eigen::VectorXd delta = o.mean_ - mean_;
    m2_ += o.m2_ + delta * delta.transpose() * (count_ * o.count_ / n);
    mean_ += delta * (o.count_ / n);
    count_ = n;
  }

  double count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Population covariance (divides by the count).
  Eigen::MatrixXd covariance() const {
    if (count_ == 0) return m2_;
    Eigen::MatrixXd c = m2_ / count_;
    return 0.5 * (c + c.transpose());
  }

 private:
  double count_ = 0.0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

/// One fitted Saab kernel over window x window x in_channels patches.
struct SaabStage {
  int window = 2;
  int stride = 2;
  int in_channels = 1;
  std::vector<float> mean;      // dim
  std::vector<float> basis;     // dim x dim, row-major; row 0 is the DC direction
  std::vector<float> energies;  // dim - 1 AC variances, non-increasing

  int dim() const noexcept { return window * window * in_channels; }

  /// coeffs = basis * (patch - mean)
  void project(const double* patch, double* coeffs) const {
    const int d = dim();
    double centered[64 * 3];
    double* c = centered;
    std::vector<double> heap;
    if (d > 64 * 3) {
      heap.resize(d);
      c = heap.data();
    }
    for (int j = 0; j < d; ++j) c[j] = patch[j] - mean[j];
    for (int i = 0; i < d; ++i) {
      const float* row = &basis[static_cast<std::size_t>(i) * d];
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += row[j] * c[j];
      coeffs[i] = acc;
    }
  }

  /// patch = basis^T * coeffs + mean
  void reconstruct(const double* coeffs, double* patch) const {
    const int d = dim();
    for (int j = 0; j < d; ++j) patch[j] = mean[j];
    for (int i = 0; i < d; ++i) {
      const float* row = &basis[static_cast<std::size_t>(i) * d];
      const double ci = coeffs[i];
      for (int j = 0; j < d; ++j) patch[j] += row[j] * ci;
    }
  }

  friend bool operator==(const SaabStage&, const SaabStage&) = default;
};

namespace detail {

/// Orthonormal basis (as columns) of the complement of the unit vector u,
/// from the Householder reflection that maps e0 onto u.
inline Eigen::MatrixXd complement_basis(const Eigen::VectorXd& u) {
  const int d = static_cast<int>(u.size());
  Eigen::VectorXd v = u;
  v(0) -= 1.0;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(d, d);
  const double vv = v.squaredNorm();
  if (vv > 1e-30) h -= 2.0 * v * v.transpose() / vv;
  return h.rightCols(d - 1);
}

inline void canonical_sign(Eigen::Ref<Eigen::VectorXd> row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (std::abs(row(i)) > std::abs(row(best))) best = i;
  if (row(best) < 0) row = -row;
}

}  // namespace detail

/// Builds a stage from the first two moments of its training patches.
inline SaabStage fit_stage_from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double sample_count,
                                        int window, int in_channels) {
  const int d = window * window * in_channels;
  detail::require(mean.size() == d && cov.rows() == d && cov.cols() == d, "fit_stage: patch dimension mismatch");
  detail::require(sample_count >= 1, "fit_stage: no training patches");
  if (sample_count <= d)
    spdlog::debug("saab: {} patches for a {}-dim stage; basis completed by Gram-Schmidt", sample_count, d);

  const Eigen::VectorXd dc = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  Eigen::MatrixXd rows(d, d);
  rows.row(0) = dc.transpose();
  std::vector<double> energies;
  int filled = 1;

  if (d > 1) {
    const Eigen::MatrixXd q = detail::complement_basis(dc);
    const Eigen::MatrixXd reduced = q.transpose() * cov * q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (reduced + reduced.transpose()));
    const Eigen::VectorXd lambda = eig.eigenvalues();
    const double top = std::max(lambda.maxCoeff(), 0.0);
    const double threshold = std::max(1e-10 * top, 1e-15);
    for (int k = d - 2; k >= 0; --k) {
      if (lambda(k) <= threshold) break;
      Eigen::VectorXd r = q * eig.eigenvectors().col(k);
      r.normalize();
      detail::canonical_sign(r);
      rows.row(filled++) = r.transpose();
      energies.push_back(lambda(k));
    }
    // Zero-variance directions: Gram-Schmidt over the standard basis.
    for (int e = 0; e < d && filled < d; ++e) {
      Eigen::VectorXd v = Eigen::VectorXd::Unit(d, e);
      for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i < filled; ++i) v -= rows.row(i).dot(v) * rows.row(i).transpose();
      if (v.norm() < 1e-6) continue;
      v.normalize();
      detail::canonical_sign(v);
      rows.row(filled++) = v.transpose();
      energies.push_back(0.0);
    }
  }

  SaabStage stage;
  stage.window = window;
  stage.stride = window;
  stage.in_channels = in_channels;
  stage.mean.resize(d);
  stage.basis.resize(static_cast<std::size_t>(d) * d);
  for (int j = 0; j < d; ++j) stage.mean[j] = static_cast<float>(mean(j));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) stage.basis[static_cast<std::size_t>(i) * d + j] = static_cast<float>(rows(i, j));
  for (double e : energies) stage.energies.push_back(static_cast<float>(e));
  return stage;
}

/// Fits a stage on explicit patches (one per row).
inline SaabStage fit_stage(const DataMatrix& patches, int window = 2, int in_channels = -1) {
  detail::require(patches.rows() >= 1, "fit_stage: no training patches");
  if (in_channels < 0) in_channels = static_cast<int>(patches.cols()) / (window * window);
  detail::require(patches.cols() == window * window * in_channels, "fit_stage: patch dimension mismatch");
  MomentAccumulator acc(static_cast<int>(patches.cols()));
  for (Eigen::Index i = 0; i < patches.rows(); ++i) acc.add(patches.row(i).data());
  return fit_stage_from_moments(acc.mean(), acc.covariance(), acc.count(), window, in_channels);
}

// ---------------------------------------------------------------------------
// Applying stages to feature maps
// ---------------------------------------------------------------------------

/// A cascade level: one joint kernel over all channels, or one kernel per
/// input channel (channel-wise).
struct SaabLayer {
  bool channelwise = false;
  std::vector<SaabStage> kernels;

  friend bool operator==(const SaabLayer&, const SaabLayer&) = default;
};

namespace detail {

// Patch vector layout: (dy, dx, channel), channel fastest.
inline void gather_patch(const ResidualTensor& map, int px, int py, int window, int ch0, int nch, double* out) {
  int k = 0;
  for (int dy = 0; dy < window; ++dy)
    for (int dx = 0; dx < window; ++dx)
      for (int c = 0; c < nch; ++c) out[k++] = map.at(px * window + dx, py * window + dy, ch0 + c);
}

inline void scatter_patch(ResidualTensor& map, int px, int py, int window, int ch0, int nch, const double* in) {
  int k = 0;
  for (int dy = 0; dy < window; ++dy)
    for (int dx = 0; dx < window; ++dx)
      for (int c = 0; c < nch; ++c) map.at(px * window + dx, py * window + dy, ch0 + c) = in[k++];
}

}  // namespace detail

inline ResidualTensor forward_layer(const SaabLayer& layer, const ResidualTensor& in) {
  const int window = layer.kernels.front().window;
  detail::require(in.width() % window == 0 && in.height() % window == 0, "saab forward: dims not divisible by stride");
  const int ow = in.width() / window, oh = in.height() / window;
  std::vector<double> patch, coeffs;
  if (!layer.channelwise) {
    const SaabStage& k = layer.kernels.front();
    detail::require(k.in_channels == in.channels(), "saab forward: channel count mismatch");
    const int d = k.dim();
    ResidualTensor out(ow, oh, d);
    patch.resize(d);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        detail::gather_patch(in, x, y, window, 0, in.channels(), patch.data());
        k.project(patch.data(), &out.at(x, y, 0));
      }
    return out;
  }
  detail::require(static_cast<int>(layer.kernels.size()) == in.channels(), "saab forward: channel count mismatch");
  const int per = window * window;
  ResidualTensor out(ow, oh, in.channels() * per);
  patch.resize(per);
  for (int c = 0; c < in.channels(); ++c) {
    const SaabStage& k = layer.kernels[c];
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        detail::gather_patch(in, x, y, window, c, 1, patch.data());
        k.project(patch.data(), &out.at(x, y, c * per));
      }
  }
  return out;
}

inline ResidualTensor inverse_layer(const SaabLayer& layer, const ResidualTensor& in) {
  const int window = layer.kernels.front().window;
  const int ow = in.width() * window, oh = in.height() * window;
  std::vector<double> patch;
  if (!layer.channelwise) {
    const SaabStage& k = layer.kernels.front();
    detail::require(in.channels() == k.dim(), "saab inverse: feature depth mismatch");
    ResidualTensor out(ow, oh, k.in_channels);
    patch.resize(k.dim());
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < in.width(); ++x) {
        k.reconstruct(&in.at(x, y, 0), patch.data());
        detail::scatter_patch(out, x, y, window, 0, k.in_channels, patch.data());
      }
    return out;
  }
  const int per = window * window;
  detail::require(in.channels() == static_cast<int>(layer.kernels.size()) * per, "saab inverse: feature depth mismatch");
  ResidualTensor out(ow, oh, static_cast<int>(layer.kernels.size()));
  patch.resize(per);
  for (int c = 0; c < static_cast<int>(layer.kernels.size()); ++c)
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < in.width(); ++x) {
        layer.kernels[c].reconstruct(&in.at(x, y, c * per), patch.data());
        detail::scatter_patch(out, x, y, window, c, 1, patch.data());
      }
  return out;
}

/// Applies one joint stage to every non-overlapping patch.
inline ResidualTensor forward_stage(const SaabStage& stage, const ResidualTensor& in) {
  return forward_layer(SaabLayer{false, {stage}}, in);
}

inline ResidualTensor inverse_stage(const SaabStage& stage, const ResidualTensor& features) {
  return inverse_layer(SaabLayer{false, {stage}}, features);
}

// ---------------------------------------------------------------------------
// Cascade
// ---------------------------------------------------------------------------

/// Fitted multi-stage transform from a side x side x channels image to a
/// vector of length side * side * channels.
struct SaabCascade {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<SaabLayer> layers;

  int output_dim() const noexcept { return width * height * channels; }
  int num_stages() const noexcept { return static_cast<int>(layers.size()); }

  friend bool operator==(const SaabCascade&, const SaabCascade&) = default;
};

namespace detail {

/// Moments of every patch seen by one kernel, accumulated in fixed-size
/// chunks and merged in chunk order.
template <class Visit>
MomentAccumulator accumulate_moments(std::size_t count, int dim, Visit&& visit) {
  constexpr std::size_t kGrain = 256;
  const std::size_t chunks = (count + kGrain - 1) / kGrain;
  std::vector<MomentAccumulator> partial(chunks, MomentAccumulator(dim));
  parallel_for(count, kGrain, [&](std::size_t b, std::size_t e) {
    auto& acc = partial[b / kGrain];
    for (std::size_t i = b; i < e; ++i) visit(i, acc);
  });
  MomentAccumulator total(dim);
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace detail

/// Fits `num_stages` stages: the first jointly over all input channels, the
/// later ones channel-wise. Each stage is fitted on the outputs of the
/// previous one.
template <class T>
SaabCascade fit_cascade(std::span<const Tensor<T>> images, int num_stages) {
  detail::require(!images.empty(), "fit_cascade: empty training set");
  detail::require(num_stages >= 1, "fit_cascade: need at least one stage");
  const int w = images.front().width(), h = images.front().height(), c = images.front().channels();
  detail::require(w == h && w == (1 << num_stages), "fit_cascade: images must be square with side 2^stages");
  for (const auto& img : images)
    detail::require(img.width() == w && img.height() == h && img.channels() == c,
                    "fit_cascade: images must share dimensions");

  SaabCascade cascade{w, h, c, {}};
  std::vector<ResidualTensor> maps(images.size());
  parallel_for(images.size(), 64, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) maps[i] = ResidualTensor(images[i]);
  });

  constexpr int window = 2;
  for (int s = 0; s < num_stages; ++s) {
    const int mw = maps.front().width() / window, mh = maps.front().height() / window;
    const std::size_t per_map = static_cast<std::size_t>(mw) * mh;
    const std::size_t total = per_map * maps.size();
    SaabLayer layer;
    layer.channelwise = s > 0;
    const int nkernels = layer.channelwise ? maps.front().channels() : 1;
    const int kin = layer.channelwise ? 1 : maps.front().channels();
    const int dim = window * window * kin;
    for (int k = 0; k < nkernels; ++k) {
      const int ch0 = layer.channelwise ? k : 0;
      auto acc = detail::accumulate_moments(total, dim, [&](std::size_t i, MomentAccumulator& a) {
        double patch[64 * 3];
        std::vector<double> heap;
        double* p = patch;
        if (dim > 64 * 3) {
          heap.resize(dim);
          p = heap.data();
        }
        const auto& m = maps[i / per_map];
        const int cell = static_cast<int>(i % per_map);
        detail::gather_patch(m, cell % mw, cell / mw, window, ch0, kin, p);
        a.add(p);
      });
      layer.kernels.push_back(fit_stage_from_moments(acc.mean(), acc.covariance(), acc.count(), window, kin));
    }
    parallel_for(maps.size(), 16, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) maps[i] = forward_layer(layer, maps[i]);
    });
    cascade.layers.push_back(std::move(layer));
  }
  return cascade;
}

template <class T>
SaabCascade fit_cascade(const std::vector<Tensor<T>>& images, int num_stages) {
  return fit_cascade(std::span<const Tensor<T>>(images), num_stages);
}

/// Core-space vector of an image: the final 1x1 map's channels (for a
/// cascade that stops earlier, row-major spatial then channel).
template <class T>
Eigen::VectorXd forward(const SaabCascade& cascade, const Tensor<T>& img) {
  detail::require(img.width() == cascade.width && img.height() == cascade.height && img.channels() == cascade.channels,
                  "saab forward: image dims do not match the cascade");
  ResidualTensor map(img);
  for (const auto& layer : cascade.layers) map = forward_layer(layer, map);
  return Eigen::Map<const Eigen::VectorXd>(map.data().data(), static_cast<Eigen::Index>(map.size()));
}

/// Exact inverse of forward; the result is not clipped.
inline ResidualTensor inverse(const SaabCascade& cascade, const Eigen::Ref<const Eigen::VectorXd>& x) {
  detail::require(x.size() == cascade.output_dim(), "saab inverse: vector length does not match the cascade");
  const int shrink = 1 << cascade.num_stages();
  const int fw = cascade.width / shrink, fh = cascade.height / shrink;
  ResidualTensor map(fw, fh, static_cast<int>(x.size()) / (fw * fh),
                     std::vector<double>(x.data(), x.data() + x.size()));
  for (auto it = cascade.layers.rbegin(); it != cascade.layers.rend(); ++it) map = inverse_layer(*it, map);
  return map;
}

/// Stacks forward() of every image into a DataMatrix.
template <class T>
DataMatrix forward_all(const SaabCascade& cascade, std::span<const Tensor<T>> images) {
  DataMatrix out(static_cast<Eigen::Index>(images.size()), cascade.output_dim());
  parallel_for(images.size(), 32, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out.row(static_cast<Eigen::Index>(i)) = forward(cascade, images[i]).transpose();
  });
  return out;
}

template <class T>
DataMatrix forward_all(const SaabCascade& cascade, const std::vector<Tensor<T>>& images) {
  return forward_all(cascade, std::span<const Tensor<T>>(images));
}

}  // namespace pager
