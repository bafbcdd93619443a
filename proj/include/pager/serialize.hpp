#pragma once

// Archive sections for every trained component. Each writer takes a key
// prefix so several components can share one archive.

#include <string>
#include <vector>

#include "pager/archive.hpp"
#include "pager/booster.hpp"
#include "pager/enhancer.hpp"
#include "pager/generator.hpp"
#include "pager/gmm.hpp"
#include "pager/saab.hpp"

namespace pager {

namespace detail {

inline int as_int(const ArchiveReader& r, const std::string& key, int lo, int hi) {
  const long long v = r.meta_int(key);
  if (v < lo || v > hi) throw CorruptArchive("metadata '" + key + "' out of range: " + std::to_string(v));
  return static_cast<int>(v);
}

inline void write_canny(ArchiveWriter& w, const std::string& p, const CannyParams& c) {
  w.meta(p + ".low", c.low);
  w.meta(p + ".high", c.high);
  w.meta(p + ".sigma", c.sigma);
  w.meta(p + ".dilate", c.dilate_radius);
}

inline CannyParams read_canny(const ArchiveReader& r, const std::string& p) {
  CannyParams c;
  c.low = r.meta_double(p + ".low");
  c.high = r.meta_double(p + ".high");
  c.sigma = r.meta_double(p + ".sigma");
  c.dilate_radius = as_int(r, p + ".dilate", 0, 1 << 16);
  return c;
}

inline void write_matrix(ArchiveWriter& w, const std::string& name, const FloatMatrix& m) {
  w.array(name, {{m.rows(), m.cols()}}, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
}

inline FloatMatrix read_matrix(const ArchiveReader& r, const std::string& name) {
  const auto& shape = r.shape(name);
  if (shape.dims.size() != 2) throw CorruptArchive("array " + name + " is not a matrix");
  const auto& v = r.array(name);
  FloatMatrix m(shape.dims[0], shape.dims[1]);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

constexpr int kMaxDim = 1 << 24;

}  // namespace detail

// ---------------------------------------------------------------------------
// Saab cascade
// ---------------------------------------------------------------------------

inline void write_cascade(ArchiveWriter& w, const std::string& p, const SaabCascade& c) {
  w.meta(p + ".width", c.width);
  w.meta(p + ".height", c.height);
  w.meta(p + ".channels", c.channels);
  w.meta(p + ".layers", c.layers.size());
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const auto& layer = c.layers[l];
    const std::string lp = p + ".L" + std::to_string(l);
    w.meta(lp + ".channelwise", layer.channelwise ? 1 : 0);
    w.meta(lp + ".kernels", layer.kernels.size());
    for (std::size_t k = 0; k < layer.kernels.size(); ++k) {
      const auto& s = layer.kernels[k];
      const std::string kp = lp + ".K" + std::to_string(k);
      const auto d = static_cast<std::int64_t>(s.mean.size());
      w.meta(kp + ".window", s.window);
      w.meta(kp + ".stride", s.stride);
      w.meta(kp + ".in_channels", s.in_channels);
      w.array(kp + ".mean", {{d}}, s.mean);
      w.array(kp + ".basis", {{d, d}}, s.basis);
      w.array(kp + ".energies", {{static_cast<std::int64_t>(s.energies.size())}}, s.energies);
    }
  }
}

inline SaabCascade read_cascade(const ArchiveReader& r, const std::string& p) {
  SaabCascade c;
  c.width = detail::as_int(r, p + ".width", 1, detail::kMaxDim);
  c.height = detail::as_int(r, p + ".height", 1, detail::kMaxDim);
  c.channels = detail::as_int(r, p + ".channels", 1, 4096);
  const int layers = detail::as_int(r, p + ".layers", 1, 30);
  for (int l = 0; l < layers; ++l) {
    const std::string lp = p + ".L" + std::to_string(l);
    SaabLayer layer;
    layer.channelwise = r.meta_int(lp + ".channelwise") != 0;
    const int kernels = detail::as_int(r, lp + ".kernels", 1, detail::kMaxDim);
    for (int k = 0; k < kernels; ++k) {
      const std::string kp = lp + ".K" + std::to_string(k);
      SaabStage s;
      s.window = detail::as_int(r, kp + ".window", 1, 64);
      s.stride = detail::as_int(r, kp + ".stride", 1, 64);
      s.in_channels = detail::as_int(r, kp + ".in_channels", 1, detail::kMaxDim);
      const std::int64_t d = std::int64_t{s.window} * s.window * s.in_channels;
      s.mean = r.array(kp + ".mean", d);
      s.basis = r.array(kp + ".basis", d * d);
      s.energies = r.array(kp + ".energies", d - 1);
      layer.kernels.push_back(std::move(s));
    }
    c.layers.push_back(std::move(layer));
  }
  if ((c.width >> layers) << layers != c.width || c.width != c.height)
    throw CorruptArchive(p + ": cascade geometry is inconsistent");
  return c;
}

// ---------------------------------------------------------------------------
// GMM
// ---------------------------------------------------------------------------

inline void write_gmm(ArchiveWriter& w, const std::string& p, const Gmm& g) {
  w.meta(p + ".components", g.components());
  w.meta(p + ".dim", g.dim());
  const std::int64_t k = g.components(), n = g.dim();
  w.array(p + ".weights", {{k}}, g.raw_weights());
  w.array(p + ".means", {{k, n}}, g.means());
  w.array(p + ".variances", {{k, n}}, g.variances());
}

inline Gmm read_gmm(const ArchiveReader& r, const std::string& p) {
  const int k = detail::as_int(r, p + ".components", 1, detail::kMaxDim);
  const int n = detail::as_int(r, p + ".dim", 1, detail::kMaxDim);
  try {
    return Gmm(k, n, r.array(p + ".weights", k), r.array(p + ".means", std::int64_t{k} * n),
               r.array(p + ".variances", std::int64_t{k} * n));
  } catch (const InvalidInput& e) {
    throw CorruptArchive(p + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Core generator, enhancer, booster
// ---------------------------------------------------------------------------

inline void write_core(ArchiveWriter& w, const std::string& p, const CoreGenerator& g) {
  write_cascade(w, p + ".cascade", g.cascade);
  write_gmm(w, p + ".gmm", g.model);
}

inline CoreGenerator read_core(const ArchiveReader& r, const std::string& p) {
  CoreGenerator g{read_cascade(r, p + ".cascade"), read_gmm(r, p + ".gmm")};
  if (g.model.dim() != g.cascade.output_dim()) throw CorruptArchive(p + ": GMM and cascade dims differ");
  return g;
}

inline void write_enhancer(ArchiveWriter& w, const std::string& p, const EnhancerStage& s) {
  w.meta(p + ".resolution", s.resolution);
  w.meta(p + ".recursion_floor", s.recursion_floor);
  w.meta(p + ".weighted_dc", s.weighted_dc ? 1 : 0);
  detail::write_canny(w, p + ".mask", s.mask);
  w.meta(p + ".levels", s.levels.size());
  for (std::size_t l = 0; l < s.levels.size(); ++l) {
    const auto& m = s.levels[l];
    const std::string lp = p + ".W" + std::to_string(l);
    w.meta(lp + ".side", m.side);
    write_cascade(w, lp + ".dc_cascade", m.dc_cascade);
    write_gmm(w, lp + ".dc_gmm", m.dc_model);
    write_cascade(w, lp + ".ac_cascade", m.ac_cascade);
    for (std::size_t k = 0; k < m.ac_models.size(); ++k) write_gmm(w, lp + ".ac_gmm" + std::to_string(k), m.ac_models[k]);
  }
}

inline EnhancerStage read_enhancer(const ArchiveReader& r, const std::string& p) {
  EnhancerStage s;
  s.resolution = detail::as_int(r, p + ".resolution", 2, detail::kMaxDim);
  s.recursion_floor = detail::as_int(r, p + ".recursion_floor", 1, detail::kMaxDim);
  s.weighted_dc = r.meta_int(p + ".weighted_dc") != 0;
  s.mask = detail::read_canny(r, p + ".mask");
  const int levels = detail::as_int(r, p + ".levels", 1, 30);
  for (int l = 0; l < levels; ++l) {
    const std::string lp = p + ".W" + std::to_string(l);
    WindowModel m;
    m.side = detail::as_int(r, lp + ".side", 1, detail::kMaxDim);
    if (m.side != (s.resolution >> l)) throw CorruptArchive(lp + ": window side breaks the halving chain");
    m.dc_cascade = read_cascade(r, lp + ".dc_cascade");
    m.dc_model = read_gmm(r, lp + ".dc_gmm");
    m.ac_cascade = read_cascade(r, lp + ".ac_cascade");
    if (m.dc_cascade.width != m.side || m.ac_cascade.width != m.side || m.dc_model.dim() != m.dc_cascade.output_dim())
      throw CorruptArchive(lp + ": window model dims are inconsistent");
    for (int k = 0; k < m.dc_model.components(); ++k) {
      m.ac_models.push_back(read_gmm(r, lp + ".ac_gmm" + std::to_string(k)));
      if (m.ac_models.back().dim() != m.ac_cascade.output_dim()) throw CorruptArchive(lp + ": AC model dims differ");
    }
    s.levels.push_back(std::move(m));
  }
  return s;
}

inline void write_booster(ArchiveWriter& w, const std::string& p, const BoosterStage& s) {
  w.meta(p + ".resolution", s.resolution);
  w.meta(p + ".channels", s.channels);
  w.meta(p + ".neighbors", s.neighbors);
  w.meta(p + ".reg", s.reg);
  detail::write_canny(w, p + ".mask", s.mask);
  w.array(p + ".pca_mean", {{static_cast<std::int64_t>(s.pca_mean.size())}}, s.pca_mean);
  detail::write_matrix(w, p + ".pca_basis", s.pca_basis);
  detail::write_matrix(w, p + ".features", s.features);
  detail::write_matrix(w, p + ".residuals", s.residuals);
}

inline BoosterStage read_booster(const ArchiveReader& r, const std::string& p) {
  BoosterStage s;
  s.resolution = detail::as_int(r, p + ".resolution", 2, detail::kMaxDim);
  s.channels = detail::as_int(r, p + ".channels", 1, 4096);
  s.neighbors = detail::as_int(r, p + ".neighbors", 1, 1 << 20);
  s.reg = r.meta_double(p + ".reg");
  s.mask = detail::read_canny(r, p + ".mask");
  s.pca_mean = r.array(p + ".pca_mean");
  s.pca_basis = detail::read_matrix(r, p + ".pca_basis");
  s.features = detail::read_matrix(r, p + ".features");
  s.residuals = detail::read_matrix(r, p + ".residuals");
  const Eigen::Index dim = s.pixel_dim();
  const bool raw = s.pca_mean.empty();
  if (s.residuals.cols() != dim || s.residuals.rows() != s.features.rows() ||
      (raw ? s.features.cols() != dim
           : (static_cast<Eigen::Index>(s.pca_mean.size()) != dim || s.pca_basis.cols() != dim ||
              s.pca_basis.rows() != s.features.cols())))
    throw CorruptArchive(p + ": booster arrays have inconsistent shapes");
  return s;
}

}  // namespace pager
