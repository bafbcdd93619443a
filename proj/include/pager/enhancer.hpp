#pragma once

// Resolution enhancer: doubles the side of an image by sampling AC detail
// conditioned on the cluster of its upsampled (DC) content, gated by an
// edge mask, then refines every quadrant recursively with window-level
// models.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "pager/gmm.hpp"
#include "pager/image.hpp"
#include "pager/imageops.hpp"
#include "pager/parallel.hpp"
#include "pager/rng.hpp"
#include "pager/saab.hpp"

namespace pager {

struct EnhancerConfig {
  int dc_components = 100;
  int ac_components = 3;
  int recursion_floor = 2;
  std::size_t max_windows = 10000;  // training windows per depth; seeded subsample above this
  bool weighted_dc = false;         // classify DC with ln P_k + ln N_k instead of ln N_k
  CannyParams mask;
  EmOptions em{.max_iters = 100, .tol = 1e-4, .seed = 0, .var_floor = 1e-6, .restarts = 1, .kmeans_iters = 10,
               .max_samples = 0};
};

/// Models for windows of one side length (depth 0 is the full frame).
struct WindowModel {
  int side = 0;
  SaabCascade dc_cascade;
  Gmm dc_model;
  SaabCascade ac_cascade;
  std::vector<Gmm> ac_models;  // one per dc_model component

  friend bool operator==(const WindowModel&, const WindowModel&) = default;
};

struct EnhancerStage {
  int resolution = 0;  // output side
  int recursion_floor = 2;
  bool weighted_dc = false;
  CannyParams mask;
  std::vector<WindowModel> levels;

  bool trained() const noexcept { return !levels.empty(); }
  int input_side() const noexcept { return resolution / 2; }
  int channels() const noexcept { return levels.empty() ? 0 : levels.front().dc_cascade.channels; }

  friend bool operator==(const EnhancerStage& a, const EnhancerStage& b) {
    return a.resolution == b.resolution && a.recursion_floor == b.recursion_floor && a.weighted_dc == b.weighted_dc &&
           a.mask.low == b.mask.low && a.mask.high == b.mask.high && a.mask.sigma == b.mask.sigma &&
           a.mask.dilate_radius == b.mask.dilate_radius && a.levels == b.levels;
  }
};

struct DcAcSplit {
  ImageTensor dc;
  ResidualTensor ac;  // exact: dc + ac reproduces the image sample for sample
};

/// DC = Lanczos upsample of the 2x box downsample; AC = image - DC.
inline DcAcSplit split_dc_ac(const ImageTensor& img) {
  DcAcSplit out{lanczos_upsample(box_downsample(img, 2), 2), ResidualTensor(img)};
  auto ac = out.ac.data();
  auto dc = out.dc.data();
  for (std::size_t i = 0; i < ac.size(); ++i) ac[i] -= static_cast<double>(dc[i]);
  return out;
}

namespace detail {

inline int clamp_components(int wanted, std::size_t samples) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(wanted), samples));
}

inline WindowModel fit_window_model(const std::vector<ImageTensor>& windows, const EnhancerConfig& cfg,
                                    std::uint64_t seed) {
  const int side = windows.front().width();
  const int stages = log2_exact(side);
  std::vector<ImageTensor> dc(windows.size());
  std::vector<ResidualTensor> ac(windows.size());
  parallel_for(windows.size(), 32, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto s = split_dc_ac(windows[i]);
      dc[i] = std::move(s.dc);
      ac[i] = std::move(s.ac);
    }
  });

  WindowModel m;
  m.side = side;
  m.dc_cascade = fit_cascade(dc, stages);
  {
    const DataMatrix x_dc = forward_all(m.dc_cascade, dc);
    EmOptions em = cfg.em;
    em.seed = stream_seed(seed, 1, 0);
    m.dc_model = fit_em(x_dc, clamp_components(cfg.dc_components, windows.size()), em);
    dc.clear();
    dc.shrink_to_fit();
    const auto labels = classify_all(m.dc_model, x_dc, cfg.weighted_dc);

    m.ac_cascade = fit_cascade(ac, stages);
    const int k_dc = m.dc_model.components();
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k_dc));
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

    auto ac_features = [&](const std::vector<std::size_t>& rows) {
      DataMatrix x(static_cast<Eigen::Index>(rows.size()), m.ac_cascade.output_dim());
      parallel_for(rows.size(), 32, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
          x.row(static_cast<Eigen::Index>(i)) = forward(m.ac_cascade, ac[rows[i]]).transpose();
      });
      return x;
    };

    Gmm pooled;
    int fallbacks = 0;
    m.ac_models.resize(static_cast<std::size_t>(k_dc));
    for (int k = 0; k < k_dc; ++k) {
      const auto& rows = members[k];
      EmOptions ac_em = cfg.em;
      ac_em.seed = stream_seed(seed, 2, static_cast<std::uint64_t>(k));
      if (rows.empty()) {
        if (pooled.empty()) {
          std::vector<std::size_t> all(ac.size());
          std::iota(all.begin(), all.end(), 0);
          EmOptions pooled_em = cfg.em;
          pooled_em.seed = stream_seed(seed, 3, 0);
          pooled = fit_em(ac_features(all), clamp_components(cfg.ac_components, all.size()), pooled_em);
        }
        m.ac_models[k] = pooled;
        continue;
      }
      int comps = cfg.ac_components;
      if (rows.size() < static_cast<std::size_t>(comps)) {
        comps = std::max(1, static_cast<int>(rows.size() / 10));
        ++fallbacks;
      }
      m.ac_models[k] = fit_em(ac_features(rows), comps, ac_em);
    }
    if (fallbacks > 0)
      spdlog::warn("enhancer {}x{}: {} cluster(s) smaller than {} samples used fewer AC components", side, side,
                   fallbacks, cfg.ac_components);
  }
  return m;
}

/// Window crops for one depth: every position of every image, seeded
/// subsample when the total exceeds `max_windows`.
inline std::vector<ImageTensor> training_windows(std::span<const ImageTensor> images, int side, std::size_t max_windows,
                                                 std::uint64_t seed) {
  const int per_row = images.front().width() / side;
  const std::size_t per_image = static_cast<std::size_t>(per_row) * per_row;
  const std::size_t total = per_image * images.size();
  std::vector<std::size_t> pick(total);
  std::iota(pick.begin(), pick.end(), 0);
  if (max_windows > 0 && total > max_windows) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_windows; ++i) std::swap(pick[i], pick[i + rng.below(total - i)]);
    pick.resize(max_windows);
    std::sort(pick.begin(), pick.end());
  }
  std::vector<ImageTensor> out(pick.size());
  parallel_for(pick.size(), 256, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const std::size_t img = pick[i] / per_image, cell = pick[i] % per_image;
      const int wx = static_cast<int>(cell % per_row) * side, wy = static_cast<int>(cell / per_row) * side;
      out[i] = side == images[img].width() ? images[img] : crop(images[img], wx, wy, side, side);
    }
  });
  return out;
}

inline EdgeMask crop_mask(const EdgeMask& m, int x0, int y0, int w, int h) {
  EdgeMask out{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.values[static_cast<std::size_t>(y) * w + x] = m.at(x0 + x, y0 + y);
  return out;
}

/// Samples AC for `dc` from the window model and writes clip(dc + ac) into
/// `base` wherever the mask is set.
inline void apply_window(const WindowModel& level, bool weighted, const ImageTensor& dc, const EdgeMask& mask,
                         ImageTensor& base, Rng& rng) {
  const int y = classify(level.dc_model, forward(level.dc_cascade, dc), weighted);
  const ResidualTensor ac = inverse(level.ac_cascade, sample(level.ac_models[y], rng));
  const int c = dc.channels();
  for (int py = 0; py < dc.height(); ++py)
    for (int px = 0; px < dc.width(); ++px) {
      if (mask.at(px, py) == 0.0f) continue;
      for (int ch = 0; ch < c; ++ch)
        base.at(px, py, ch) =
            static_cast<float>(std::clamp(static_cast<double>(dc.at(px, py, ch)) + ac.at(px, py, ch), 0.0, 1.0));
    }
}

inline ImageTensor refine(const EnhancerStage& stage, std::size_t depth, std::uint64_t path, ImageTensor window,
                          const EdgeMask& base_mask, std::uint64_t seed) {
  if (depth > 0) {
    ImageTensor dc = lanczos_upsample(box_downsample(window, 2), 2);
    const EdgeMask mask = mask_and(canny_mask(dc, stage.mask), base_mask);
    if (mask.count() > 0) {
      Rng rng(stream_seed(seed, depth, path));
      apply_window(stage.levels[depth], stage.weighted_dc, dc, mask, window, rng);
    }
  }
  if (depth + 1 >= stage.levels.size()) return window;
  const int h = window.width() / 2;
  auto q = quad_split(window);
  q.tl = refine(stage, depth + 1, 4 * path + 0, std::move(q.tl), crop_mask(base_mask, 0, 0, h, h), seed);
  q.tr = refine(stage, depth + 1, 4 * path + 1, std::move(q.tr), crop_mask(base_mask, h, 0, h, h), seed);
  q.bl = refine(stage, depth + 1, 4 * path + 2, std::move(q.bl), crop_mask(base_mask, 0, h, h, h), seed);
  q.br = refine(stage, depth + 1, 4 * path + 3, std::move(q.br), crop_mask(base_mask, h, h, h, h), seed);
  return quad_join(q);
}

}  // namespace detail

/// Fits the full-frame models and one position-pooled model bank per
/// recursion depth (window sides resolution/2, resolution/4, ... down to
/// 2 * recursion_floor).
inline EnhancerStage train_enhancer(std::span<const ImageTensor> images, const EnhancerConfig& cfg,
                                    std::uint64_t seed) {
  detail::require(!images.empty(), "train_enhancer: empty training set");
  detail::require(cfg.dc_components >= 1 && cfg.ac_components >= 1, "train_enhancer: component counts must be >= 1");
  detail::require(cfg.recursion_floor >= 1, "train_enhancer: recursion floor must be >= 1");
  const int side = images.front().width();
  detail::require(is_power_of_two(side) && images.front().height() == side && side > cfg.recursion_floor &&
                      side >= 4,
                  "train_enhancer: images must be square with a power-of-two side >= 4");
  for (const auto& img : images)
    detail::require(img.same_shape(images.front()), "train_enhancer: images must share dimensions");

  EnhancerStage stage;
  stage.resolution = side;
  stage.recursion_floor = cfg.recursion_floor;
  stage.weighted_dc = cfg.weighted_dc;
  stage.mask = cfg.mask;
  int depth = 0;
  for (int s = side; s > cfg.recursion_floor && s >= 4; s /= 2, ++depth) {
    const auto windows =
        detail::training_windows(images, s, cfg.max_windows, stream_seed(seed, 0x57494e, static_cast<std::uint64_t>(depth)));
    spdlog::debug("enhancer {}: depth {} with {} windows of {}x{}", side, depth, windows.size(), s, s);
    stage.levels.push_back(detail::fit_window_model(windows, cfg, stream_seed(seed, 0x4c564c, static_cast<std::uint64_t>(depth))));
  }
  return stage;
}

inline EnhancerStage train_enhancer(const std::vector<ImageTensor>& images, const EnhancerConfig& cfg,
                                    std::uint64_t seed) {
  return train_enhancer(std::span<const ImageTensor>(images), cfg, seed);
}

/// Doubles the side of `img`. Output equals the Lanczos upsample of the
/// input wherever the full-frame edge mask is zero.
inline ImageTensor enhance(const EnhancerStage& stage, const ImageTensor& img, Rng& rng) {
  if (!stage.trained()) throw InvalidState("enhancer stage is not trained");
  detail::require(img.width() == stage.input_side() && img.height() == stage.input_side(),
                  "enhance: input side must be half the stage resolution");
  detail::require(img.channels() == stage.channels(), "enhance: channel count does not match the stage");
  const std::uint64_t seed = rng.next_u64();
  ImageTensor dc = lanczos_upsample(img, 2);
  const EdgeMask mask = canny_mask(dc, stage.mask);
  ImageTensor out = dc;
  if (mask.count() > 0) {
    Rng level_rng(stream_seed(seed, 0, 0));
    detail::apply_window(stage.levels.front(), stage.weighted_dc, dc, mask, out, level_rng);
  }
  return detail::refine(stage, 0, 0, std::move(out), mask, seed);
}

/// Image i is enhanced with Rng(stream_seed(root_seed, stream, i)).
inline std::vector<ImageTensor> enhance_batch(const EnhancerStage& stage, std::span<const ImageTensor> images,
                                              std::uint64_t root_seed, std::uint64_t stream = 0) {
  std::vector<ImageTensor> out(images.size());
  parallel_for(images.size(), 16, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(stream_seed(root_seed, stream, i));
      out[i] = enhance(stage, images[i], rng);
    }
  });
  return out;
}

}  // namespace pager
