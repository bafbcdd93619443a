#pragma once

// Image files: directory ingestion, PNG output and figure grids. Needs
// OpenCV (core, imgproc, imgcodecs).

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pager/datasets.hpp"
#include "pager/error.hpp"
#include "pager/image.hpp"

namespace pager {

namespace detail {

/// 8-bit OpenCV matrix (BGR order for 3 channels) to an RGB tensor.
inline ImageTensor from_mat(const cv::Mat& m) {
  cv::Mat src = m;
  if (src.depth() != CV_8U) src.convertTo(src, CV_8U, src.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  if (src.channels() == 4) cv::cvtColor(src, src, cv::COLOR_BGRA2BGR);
  const int c = src.channels();
  detail::require(c == 1 || c == 3, "unsupported channel count " + std::to_string(c));
  ImageTensor img(src.cols, src.rows, c);
  for (int y = 0; y < src.rows; ++y) {
    const unsigned char* row = src.ptr<unsigned char>(y);
    for (int x = 0; x < src.cols; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at(x, y, ch) = static_cast<float>(row[x * c + (c == 3 ? 2 - ch : ch)]) / 255.0f;
  }
  return img;
}

inline unsigned char to_u8(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline cv::Mat to_mat(const ImageTensor& img) {
  const int c = img.channels();
  detail::require(c == 1 || c == 3, "only 1- or 3-channel images can be written");
  cv::Mat m(img.height(), img.width(), c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    unsigned char* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < c; ++ch) row[x * c + (c == 3 ? 2 - ch : ch)] = to_u8(img.at(x, y, ch));
  }
  return m;
}

}  // namespace detail

/// Reads one image file as-is (gray stays 1 channel, color becomes RGB).
inline ImageTensor load_image(const std::string& path) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ParseError("cannot decode image " + path);
  return detail::from_mat(m);
}

/// Loads every decodable image in `dir` (sorted by file name bytes),
/// center-cropped to a square and Lanczos-resized to side x side.
/// Unreadable files are skipped with a warning and listed in `skipped`.
inline LabeledImageSet load_image_dir(const std::string& dir, int side, int channels = 3) {
  namespace fs = std::filesystem;
  detail::require(side >= 1, "load_image_dir: side must be positive");
  detail::require(channels == 1 || channels == 3, "load_image_dir: channels must be 1 or 3");
  if (!fs::is_directory(dir)) throw ParseError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError("image directory is empty: " + dir);

  LabeledImageSet set;
  for (const auto& name : files) {
    cv::Mat m = cv::imread((fs::path(dir) / name).string(), channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE);
    if (m.empty()) {
      spdlog::warn("skipping unreadable image {}", name);
      set.skipped.push_back(name);
      continue;
    }
    const int s = std::min(m.cols, m.rows);
    m = m(cv::Rect((m.cols - s) / 2, (m.rows - s) / 2, s, s));
    if (s != side) {
      cv::Mat r;
      cv::resize(m, r, cv::Size(side, side), 0, 0, cv::INTER_LANCZOS4);
      m = r;
    }
    set.images.push_back(detail::from_mat(m));
    set.names.push_back(name);
  }
  if (set.images.empty()) throw ParseError("no decodable images in " + dir);
  return set;
}

/// Encodes to PNG bytes in memory.
inline std::vector<unsigned char> encode_png(const ImageTensor& img) {
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", detail::to_mat(img), out, {cv::IMWRITE_PNG_COMPRESSION, 9}))
    throw Error("PNG encoding failed");
  return out;
}

inline void write_png(const ImageTensor& img, const std::string& path) {
  if (!cv::imwrite(path, detail::to_mat(img), {cv::IMWRITE_PNG_COMPRESSION, 9}))
    throw Error("cannot write " + path);
}

/// Tiles images row-major into a cols x rows grid with `gap` pixels of
/// `fill` between tiles. Missing tiles stay filled.
inline ImageTensor make_grid(const std::vector<ImageTensor>& images, int cols, int rows, int gap = 2, float fill = 1.0f) {
  detail::require(!images.empty(), "make_grid: no images");
  detail::require(cols >= 1 && rows >= 1, "make_grid: grid must be at least 1x1");
  const int w = images.front().width(), h = images.front().height(), c = images.front().channels();
  ImageTensor grid(cols * w + (cols - 1) * gap, rows * h + (rows - 1) * gap, c, fill);
  for (std::size_t i = 0; i < images.size() && i < static_cast<std::size_t>(cols * rows); ++i) {
    const auto& img = images[i];
    detail::require(img.width() == w && img.height() == h && img.channels() == c, "make_grid: images differ in size");
    const int x0 = static_cast<int>(i % cols) * (w + gap), y0 = static_cast<int>(i / cols) * (h + gap);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) grid.at(x0 + x, y0 + y, ch) = img.at(x, y, ch);
  }
  return grid;
}

}  // namespace pager
