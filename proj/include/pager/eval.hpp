#pragma once

// Frechet distance between Gaussian fits of Saab features, and the
// training-size sweep built on it.

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pager/archive.hpp"
#include "pager/pipeline.hpp"
#include "pager/saab.hpp"

namespace pager {

struct FrechetReport {
  double distance = 0.0;
  std::size_t n_real = 0;
  std::size_t n_gen = 0;
  int feature_dim = 0;
  std::string feature_source;
};

namespace detail {

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianFit fit_gaussian(const DataMatrix& x) {
  detail::require(x.rows() >= 2, "frechet: need at least 2 samples per set");
  GaussianFit g;
  g.mean = x.colwise().mean().transpose();
  const DataMatrix centered = x.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

/// tr((A B)^{1/2}) as tr((A^{1/2} B A^{1/2})^{1/2}), negative eigenvalues
/// clipped at zero.
inline double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd ra = sym_sqrt(a);
  Eigen::MatrixXd m = ra * b * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace detail

/// Frechet distance (squared form) between Gaussian fits of two sample
/// matrices with one sample per row.
inline double frechet_distance(const DataMatrix& a, const DataMatrix& b) {
  detail::require(a.cols() == b.cols(), "frechet: feature dims differ");
  const auto ga = detail::fit_gaussian(a), gb = detail::fit_gaussian(b);
  const double cross = 0.5 * (detail::trace_sqrt_product(ga.cov, gb.cov) + detail::trace_sqrt_product(gb.cov, ga.cov));
  const double d = (ga.mean - gb.mean).squaredNorm() + ga.cov.trace() + gb.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

/// Stable identifier of a cascade's parameters.
inline std::string cascade_fingerprint(const SaabCascade& c) {
  std::string bytes = std::to_string(c.width) + "x" + std::to_string(c.height) + "x" + std::to_string(c.channels);
  for (const auto& layer : c.layers)
    for (const auto& k : layer.kernels) {
      bytes.append(reinterpret_cast<const char*>(k.mean.data()), k.mean.size() * sizeof(float));
      bytes.append(reinterpret_cast<const char*>(k.basis.data()), k.basis.size() * sizeof(float));
    }
  char buf[32];
  std::snprintf(buf, sizeof buf, "saab-%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

/// Frechet distance between the cascade features of two image sets.
inline FrechetReport saab_frechet(std::span<const ImageTensor> real, std::span<const ImageTensor> gen,
                                  const SaabCascade& cascade) {
  detail::require(real.size() >= 2 && gen.size() >= 2, "saab_frechet: need at least 2 images per set");
  for (const auto* set : {&real, &gen})
    for (const auto& img : *set)
      detail::require(img.width() == cascade.width && img.height() == cascade.height && img.channels() == cascade.channels,
                      "saab_frechet: image dims do not match the cascade");
  FrechetReport r;
  r.distance = frechet_distance(forward_all(cascade, real), forward_all(cascade, gen));
  r.n_real = real.size();
  r.n_gen = gen.size();
  r.feature_dim = cascade.output_dim();
  r.feature_source = cascade_fingerprint(cascade);
  return r;
}

inline FrechetReport saab_frechet(const std::vector<ImageTensor>& real, const std::vector<ImageTensor>& gen,
                                  const SaabCascade& cascade) {
  return saab_frechet(std::span<const ImageTensor>(real), std::span<const ImageTensor>(gen), cascade);
}

/// Zero-pads every image to side x side (center), the layout the proxy
/// cascade expects for inputs smaller than a power of two.
inline std::vector<ImageTensor> pad_all(std::span<const ImageTensor> images, int side) {
  std::vector<ImageTensor> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.width() == side ? img : pad_center(img, side, side));
  return out;
}

/// Proxy cascade fitted on held-out real images (padded to a power of two).
inline SaabCascade fit_proxy_cascade(std::span<const ImageTensor> held_out) {
  detail::require(!held_out.empty(), "fit_proxy_cascade: no images");
  int side = 1;
  while (side < held_out.front().width()) side *= 2;
  const auto padded = pad_all(held_out, side);
  return fit_cascade(padded, log2_exact(side));
}

struct SweepRow {
  std::size_t size = 0;
  double proxy_frechet = 0.0;
  double train_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct SweepOptions {
  std::size_t generated = 1000;  // images generated per size
  std::uint64_t generation_seed = 1;
};

/// Trains one model per size on the first `size` training images and scores
/// generated samples against `real` under `cascade`.
inline std::vector<SweepRow> training_size_sweep(std::span<const ImageTensor> images, std::span<const int> labels,
                                                 std::span<const std::size_t> sizes, const PagerConfig& cfg,
                                                 std::span<const ImageTensor> real, const SaabCascade& cascade,
                                                 const SweepOptions& opts = {}) {
  detail::require(!sizes.empty(), "sweep: no sizes");
  const auto real_padded = pad_all(real, cascade.width);
  std::vector<SweepRow> rows;
  for (std::size_t n : sizes) {
    detail::require(n >= 1 && n <= images.size(), "sweep: size " + std::to_string(n) + " exceeds the dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = train(images.first(n), labels.empty() ? labels : labels.first(n), cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Rng rng(opts.generation_seed);
    const auto gen = generate(model, rng, static_cast<int>(opts.generated));
    const auto report = saab_frechet(real_padded, pad_all(gen, cascade.width), cascade);
    rows.push_back({n, report.distance, secs, cfg.seed});
    spdlog::info("sweep size {}: proxy {:.4f}, {:.1f}s", n, report.distance, secs);
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "size,proxy_frechet,train_seconds,seed\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.3f,%llu\n", r.size, r.proxy_frechet, r.train_seconds,
                  static_cast<unsigned long long>(r.seed));
    out << buf;
  }
}

}  // namespace pager
