#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pager/error.hpp"

namespace pager {

/// Planar raster stored row-major with interleaved channels:
/// sample(x, y, c) lives at ((y * width + x) * channels + c).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    detail::require(width >= 0 && height >= 0 && channels >= 1, "tensor dims must be non-negative");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  Tensor(int width, int height, int channels, std::vector<T> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    detail::require(width >= 0 && height >= 0 && channels >= 1, "tensor dims must be non-negative");
    detail::require(data_.size() == static_cast<std::size_t>(width) * height * channels,
                    "tensor data length must equal width*height*channels");
  }

  /// Converting copy between sample types (float <-> double).
  template <class U>
  explicit Tensor(const Tensor<U>& other)
      : width_(other.width()), height_(other.height()), channels_(other.channels()),
        data_(other.data().begin(), other.data().end()) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }

  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  bool same_shape(const Tensor& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

/// Pixel image, samples in [0, 1].
using ImageTensor = Tensor<float>;

/// Unbounded signal with the image layout: AC detail, residuals, and the
/// intermediate feature maps of the Saab cascade.
using ResidualTensor = Tensor<double>;

/// Binary per-pixel gate (0 or 1).
struct EdgeMask {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int x, int y) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (float v : values) n += v != 0.0f;
    return n;
  }
};

inline ImageTensor to_image_unchecked(const ResidualTensor& r) { return ImageTensor(r); }

inline ResidualTensor to_residual(const ImageTensor& img) { return ResidualTensor(img); }

inline bool is_power_of_two(int v) noexcept { return v > 0 && (v & (v - 1)) == 0; }

inline int log2_exact(int v) {
  detail::require(is_power_of_two(v), "expected a power of two, got " + std::to_string(v));
  int s = 0;
  while ((1 << s) < v) ++s;
  return s;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace pager
