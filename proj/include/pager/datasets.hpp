#pragma once

// IDX (MNIST / Fashion-MNIST) and CelebA attribute-list ingestion. Image
// directories need an image decoder and live in pager/io.hpp.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pager/error.hpp"
#include "pager/image.hpp"

namespace pager {

struct LabeledImageSet {
  std::vector<ImageTensor> images;
  std::vector<int> labels;             // empty when unlabeled
  std::vector<std::vector<int>> attrs;  // M x T in {-1, +1}; empty when absent
  std::vector<std::string> names;       // file identifiers; empty for IDX
  std::vector<std::string> skipped;     // unreadable files passed over by a directory load

  std::size_t size() const noexcept { return images.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX3 u8 image file; pixels scaled by 1/255.
inline std::vector<ImageTensor> parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& what = "idx") {
  if (bytes.size() < 16) throw ParseError(what + ": truncated header");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImageMagic) throw ParseError(what + ": wrong magic for an image file");
  const std::size_t count = detail::read_be32(bytes, 4);
  const std::size_t rows = detail::read_be32(bytes, 8), cols = detail::read_be32(bytes, 12);
  if (bytes.size() != 16 + count * rows * cols)
    throw ParseError(what + ": declared dims disagree with payload length");
  std::vector<ImageTensor> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<float> px(rows * cols);
    const unsigned char* src = bytes.data() + 16 + i * rows * cols;
    for (std::size_t j = 0; j < px.size(); ++j) px[j] = static_cast<float>(src[j]) / 255.0f;
    images.emplace_back(static_cast<int>(cols), static_cast<int>(rows), 1, std::move(px));
  }
  return images;
}

inline std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes, const std::string& what = "idx") {
  if (bytes.size() < 8) throw ParseError(what + ": truncated header");
  if (detail::read_be32(bytes, 0) != kIdxLabelMagic) throw ParseError(what + ": wrong magic for a label file");
  const std::size_t count = detail::read_be32(bytes, 4);
  if (bytes.size() != 8 + count) throw ParseError(what + ": declared count disagrees with payload length");
  return {bytes.begin() + 8, bytes.end()};
}

/// Loads an IDX image file and (optionally) its label file.
inline LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path = {}) {
  LabeledImageSet set;
  set.images = parse_idx_images(detail::read_file(images_path), images_path);
  if (!labels_path.empty()) {
    set.labels = parse_idx_labels(detail::read_file(labels_path), labels_path);
    if (set.labels.size() != set.images.size())
      throw ParseError("label count " + std::to_string(set.labels.size()) + " does not match image count " +
                       std::to_string(set.images.size()));
  }
  return set;
}

/// Attribute names of the seven-attribute CelebA setup, in query order.
inline const std::vector<std::string>& celeba_default_attributes() {
  static const std::vector<std::string> names = {"Male", "Smiling", "Blond_Hair", "Black_Hair",
                                                 "Wearing_Lipstick", "Bangs", "Young"};
  return names;
}

struct AttributeTable {
  std::vector<std::string> files;         // row identifiers
  std::vector<std::string> names;         // selected attribute names
  std::vector<std::vector<int>> values;   // rows x names, each +-1

  std::optional<std::size_t> row_of(const std::string& file) const {
    auto it = std::find(files.begin(), files.end(), file);
    if (it == files.end()) return std::nullopt;
    return static_cast<std::size_t>(it - files.begin());
  }
};

/// Parses list_attr_celeba.txt: a count line, a header of attribute names,
/// then "<file> v1 v2 ..." rows of +-1 (0 is read as -1 for files that use
/// 0/1 encoding).
inline AttributeTable parse_celeba_attrs(std::istream& in, const std::vector<std::string>& selected) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("attribute list: missing count line");
  std::size_t declared = 0;
  try {
    declared = std::stoul(line);
  } catch (const std::exception&) {
    throw ParseError("attribute list: first line is not a count");
  }
  if (!std::getline(in, line)) throw ParseError("attribute list: missing header line");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    for (std::string tok; hs >> tok;) header.push_back(tok);
  }
  std::vector<std::size_t> columns;
  for (const auto& name : selected) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      std::string available;
      for (const auto& h : header) available += (available.empty() ? "" : ", ") + h;
      throw ParseError("unknown attribute '" + name + "'; available: " + available);
    }
    columns.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  AttributeTable table;
  table.names = selected;
  while (std::getline(in, line)) {
    std::istringstream rs(line);
    std::string file;
    if (!(rs >> file)) continue;
    std::vector<int> row;
    for (int v; rs >> v;) row.push_back(v > 0 ? 1 : -1);
    if (row.size() != header.size())
      throw ParseError("attribute list: row for " + file + " has " + std::to_string(row.size()) + " values, expected " +
                       std::to_string(header.size()));
    std::vector<int> picked;
    for (std::size_t c : columns) picked.push_back(row[c]);
    table.files.push_back(file);
    table.values.push_back(std::move(picked));
  }
  if (table.files.size() != declared)
    throw ParseError("attribute list: declared " + std::to_string(declared) + " rows, found " +
                     std::to_string(table.files.size()));
  return table;
}

inline AttributeTable load_celeba_attrs(const std::string& path, const std::vector<std::string>& selected) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_celeba_attrs(in, selected);
}

/// Attaches attribute rows to a named image set, aligned by file name.
inline void attach_attributes(LabeledImageSet& set, const AttributeTable& table) {
  set.attrs.clear();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < table.files.size(); ++i) index.emplace(table.files[i], i);
  for (const auto& name : set.names) {
    auto it = index.find(name);
    if (it == index.end()) throw ParseError("no attribute row for image " + name);
    set.attrs.push_back(table.values[it->second]);
  }
}

}  // namespace pager
