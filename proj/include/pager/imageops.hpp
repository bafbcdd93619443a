#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pager/error.hpp"
#include "pager/image.hpp"

namespace pager {

// ---------------------------------------------------------------------------
// Lanczos resampling
// ---------------------------------------------------------------------------

inline constexpr int kLanczosWindow = 3;

/// Lanczos kernel sinc(t) * sinc(t / a), zero outside |t| < a.
inline double lanczos_kernel(double t, int a = kLanczosWindow) {
  if (t == 0.0) return 1.0;
  if (std::abs(t) >= a) return 0.0;
  const double pt = std::numbers::pi * t;
  return a * std::sin(pt) * std::sin(pt / a) / (pt * pt);
}

namespace detail {

/// Normalized taps for one output coordinate of an integer upsampling.
struct LanczosTaps {
  std::array<int, 2 * kLanczosWindow> index{};
  std::array<double, 2 * kLanczosWindow> weight{};
};

inline std::vector<LanczosTaps> lanczos_taps(int in_size, int factor) {
  std::vector<LanczosTaps> taps(static_cast<std::size_t>(in_size) * factor);
  for (int o = 0; o < in_size * factor; ++o) {
    const double u = (o + 0.5) / factor - 0.5;
    const int base = static_cast<int>(std::floor(u)) - kLanczosWindow + 1;
    double total = 0.0;
    auto& t = taps[o];
    for (int k = 0; k < 2 * kLanczosWindow; ++k) {
      const int i = base + k;
      t.index[k] = std::clamp(i, 0, in_size - 1);
      t.weight[k] = lanczos_kernel(u - i);
      total += t.weight[k];
    }
    for (double& w : t.weight) w /= total;
  }
  return taps;
}

/// Separable Lanczos-3 upsampling (rows, then columns) with edge clamping.
template <class T>
ResidualTensor lanczos_upsample_raw(const Tensor<T>& img, int factor) {
  const int w = img.width(), h = img.height(), c = img.channels();
  const int ow = w * factor, oh = h * factor;
  const auto tx = lanczos_taps(w, factor);
  const auto ty = lanczos_taps(h, factor);
  ResidualTensor rows(ow, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 2 * kLanczosWindow; ++k)
          acc += tx[x].weight[k] * static_cast<double>(img.at(tx[x].index[k], y, ch));
        rows.at(x, y, ch) = acc;
      }
  ResidualTensor out(ow, oh, c);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 2 * kLanczosWindow; ++k) acc += ty[y].weight[k] * rows.at(x, ty[y].index[k], ch);
        out.at(x, y, ch) = acc;
      }
  return out;
}

}  // namespace detail

/// Per-sample clamp to [0, 1].
template <class T>
ImageTensor clip_unit(const Tensor<T>& img) {
  std::vector<float> data(img.size());
  auto src = img.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(std::clamp(static_cast<double>(src[i]), 0.0, 1.0));
  return ImageTensor(img.width(), img.height(), img.channels(), std::move(data));
}

/// Integer-factor Lanczos-3 upsampling; output clipped to [0, 1].
inline ImageTensor lanczos_upsample(const ImageTensor& img, int factor = 2) {
  detail::require(!img.empty(), "lanczos_upsample: zero-sized image");
  detail::require(factor >= 2 && is_power_of_two(factor), "lanczos_upsample: factor must be a power of two >= 2");
  return clip_unit(detail::lanczos_upsample_raw(img, factor));
}

// ---------------------------------------------------------------------------
// Box downsampling
// ---------------------------------------------------------------------------

/// Mean over non-overlapping factor x factor blocks.
template <class T>
Tensor<T> box_downsample(const Tensor<T>& img, int factor = 2) {
  detail::require(factor >= 2, "box_downsample: factor must be >= 2");
  detail::require(!img.empty() && img.width() % factor == 0 && img.height() % factor == 0,
                  "box_downsample: dims must be divisible by the factor");
  const int ow = img.width() / factor, oh = img.height() / factor, c = img.channels();
  const double scale = 1.0 / (factor * factor);
  Tensor<T> out(ow, oh, c);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += img.at(x * factor + dx, y * factor + dy, ch);
        out.at(x, y, ch) = static_cast<T>(acc * scale);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Edge mask
// ---------------------------------------------------------------------------

struct CannyParams {
  double low = 0.1;
  double high = 0.25;
  double sigma = 1.0;
  int dilate_radius = 1;
};

/// ITU-R 601 luma for 3-channel input, identity for 1-channel input.
template <class T>
std::vector<double> luma(const Tensor<T>& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v;
      if (img.channels() >= 3) {
        v = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      } else {
        v = img.at(x, y, 0);
      }
      out[static_cast<std::size_t>(y) * img.width() + x] = v;
    }
  return out;
}

namespace detail {

inline std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Canny edge detection (Gaussian blur, Sobel, non-maximum suppression,
/// hysteresis) on luma, followed by square dilation. Thresholds apply to the
/// unnormalized Sobel magnitude of a [0, 1] image.
template <class T>
EdgeMask canny_mask(const Tensor<T>& img, const CannyParams& params = {}) {
  detail::require(params.low >= 0.0 && params.low < params.high && params.high <= 1.0,
                  "canny_mask: thresholds must satisfy 0 <= low < high <= 1");
  detail::require(params.dilate_radius >= 0, "canny_mask: dilate radius must be >= 0");
  const int w = img.width(), h = img.height();
  EdgeMask mask{w, h, std::vector<float>(static_cast<std::size_t>(w) * h, 0.0f)};
  if (w == 0 || h == 0) return mask;

  const auto blurred = detail::gaussian_blur(luma(img), w, h, params.sigma);
  auto px = [&](int x, int y) { return blurred[std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)]; };

  std::vector<double> mag(blurred.size());
  std::vector<unsigned char> dir(blurred.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1) - px(x - 1, y - 1) -
                         2 * px(x - 1, y) - px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1) - px(x - 1, y - 1) -
                         2 * px(x, y - 1) - px(x + 1, y - 1));
      mag[y * w + x] = std::hypot(gx, gy);
      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      unsigned char d = 0;
      if (angle >= 22.5 && angle < 67.5) {
        d = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        d = 2;
      } else if (angle >= 112.5 && angle < 157.5) {
        d = 3;
      }
      dir[y * w + x] = d;
    }

  // Quantized gradient directions: horizontal, diagonal, vertical, anti-diagonal.
  constexpr int kStep[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
  auto mag_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mag[y * w + x];
  };
  // Plateaus of equal magnitude keep the sample on the forward side.
  constexpr double kTie = 1e-9;
  std::vector<unsigned char> state(blurred.size(), 0);  // 0 none, 1 weak, 2 strong
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double m = mag[y * w + x];
      if (m < params.low) continue;
      const auto& s = kStep[dir[y * w + x]];
      const double back = mag_at(x - s[0], y - s[1]);
      const double fwd = mag_at(x + s[0], y + s[1]);
      if (m >= back - kTie && m > fwd + kTie) state[y * w + x] = m >= params.high ? 2 : 1;
    }

  std::vector<int> stack;
  for (int i = 0; i < w * h; ++i)
    if (state[i] == 2) stack.push_back(i);
  std::vector<unsigned char> edge(blurred.size(), 0);
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    if (edge[i]) continue;
    edge[i] = 1;
    const int x = i % w, y = i / w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const int j = ny * w + nx;
        if (!edge[j] && state[j] != 0) stack.push_back(j);
      }
  }

  const int r = params.dilate_radius;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!edge[y * w + x]) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < w && ny < h) mask.at(nx, ny) = 1.0f;
        }
    }
  return mask;
}

/// Elementwise intersection of two masks of equal size.
inline EdgeMask mask_and(const EdgeMask& a, const EdgeMask& b) {
  detail::require(a.width == b.width && a.height == b.height, "mask_and: size mismatch");
  EdgeMask out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = (a.values[i] != 0 && b.values[i] != 0) ? 1.f : 0.f;
  return out;
}

// ---------------------------------------------------------------------------
// Tiling, padding, cropping
// ---------------------------------------------------------------------------

/// Copy of the w x h rectangle whose top-left corner is (x0, y0).
template <class T>
Tensor<T> crop(const Tensor<T>& img, int x0, int y0, int w, int h) {
  detail::require(x0 >= 0 && y0 >= 0 && x0 + w <= img.width() && y0 + h <= img.height(),
                  "crop: rectangle outside image");
  Tensor<T> out(w, h, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

/// Writes `tile` into `img` with its top-left corner at (x0, y0).
template <class T>
void paste(Tensor<T>& img, const Tensor<T>& tile, int x0, int y0) {
  detail::require(x0 >= 0 && y0 >= 0 && x0 + tile.width() <= img.width() && y0 + tile.height() <= img.height() &&
                      tile.channels() == img.channels(),
                  "paste: tile outside image");
  for (int y = 0; y < tile.height(); ++y)
    for (int x = 0; x < tile.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) img.at(x0 + x, y0 + y, c) = tile.at(x, y, c);
}

template <class T>
struct Quadrants {
  Tensor<T> tl, tr, bl, br;
};

template <class T>
Quadrants<T> quad_split(const Tensor<T>& img) {
  detail::require(!img.empty() && img.width() % 2 == 0 && img.height() % 2 == 0, "quad_split: dims must be even");
  const int hw = img.width() / 2, hh = img.height() / 2;
  return {crop(img, 0, 0, hw, hh), crop(img, hw, 0, hw, hh), crop(img, 0, hh, hw, hh), crop(img, hw, hh, hw, hh)};
}

template <class T>
Tensor<T> quad_join(const Tensor<T>& tl, const Tensor<T>& tr, const Tensor<T>& bl, const Tensor<T>& br) {
  detail::require(tl.same_shape(tr) && tl.same_shape(bl) && tl.same_shape(br), "quad_join: quadrant shapes differ");
  Tensor<T> out(tl.width() * 2, tl.height() * 2, tl.channels());
  paste(out, tl, 0, 0);
  paste(out, tr, tl.width(), 0);
  paste(out, bl, 0, tl.height());
  paste(out, br, tl.width(), tl.height());
  return out;
}

template <class T>
Tensor<T> quad_join(const Quadrants<T>& q) {
  return quad_join(q.tl, q.tr, q.bl, q.br);
}

/// Centers the image on a target canvas; the extra pixel of an odd margin
/// goes to the right/bottom.
template <class T>
Tensor<T> pad_center(const Tensor<T>& img, int target_w, int target_h, T fill = T{}) {
  detail::require(target_w >= img.width() && target_h >= img.height(), "pad_center: target smaller than source");
  Tensor<T> out(target_w, target_h, img.channels(), fill);
  paste(out, img, (target_w - img.width()) / 2, (target_h - img.height()) / 2);
  return out;
}

/// Inverse of pad_center.
template <class T>
Tensor<T> crop_center(const Tensor<T>& img, int w, int h) {
  detail::require(w <= img.width() && h <= img.height(), "crop_center: target larger than source");
  return crop(img, (img.width() - w) / 2, (img.height() - h) / 2, w, h);
}

}  // namespace pager
