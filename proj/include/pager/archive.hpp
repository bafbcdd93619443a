#pragma once

// Single-file container for trained models:
//
//   "PAGERMDL"            8 bytes magic
//   version               u16 little-endian
//   manifest length       u32 little-endian
//   manifest              UTF-8 "key=value\n" lines
//   array payload         little-endian float32 arrays, back to back
//   crc32                 u32 little-endian over every preceding byte
//
// Manifest keys are either "meta.<name>" (free text without newlines) or
// "array.<name>" with value "<d0>x<d1>...@<byte offset into the payload>".

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pager/error.hpp"

namespace pager {

inline constexpr char kArchiveMagic[8] = {'P', 'A', 'G', 'E', 'R', 'M', 'D', 'L'};
inline constexpr std::uint16_t kArchiveVersion = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ArrayShape {
  std::vector<std::int64_t> dims;

  std::int64_t count() const {
    return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
  }
  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
    return s;
  }
};

namespace detail {

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

class ArchiveWriter {
 public:
  void meta(const std::string& key, const std::string& value) {
    detail::require(key.find_first_of("=\n") == std::string::npos && value.find('\n') == std::string::npos,
                    "archive: metadata key/value must not contain '=' in the key or newlines");
    meta_[key] = value;
  }
  template <class T>
  void meta(const std::string& key, const T& value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    meta(key, os.str());
  }

  void array(const std::string& name, ArrayShape shape, std::span<const float> values) {
    detail::require(shape.count() == static_cast<std::int64_t>(values.size()), "archive: array " + name + " shape mismatch");
    detail::require(name.find_first_of("=\n") == std::string::npos, "archive: bad array name");
    detail::require(!arrays_.contains(name), "archive: duplicate array " + name);
    arrays_[name] = {std::move(shape), payload_.size()};
    for (float v : values) detail::put_u32(payload_, std::bit_cast<std::uint32_t>(v));
  }

  std::vector<unsigned char> bytes() const {
    std::string manifest;
    for (const auto& [k, v] : meta_) manifest += "meta." + k + "=" + v + "\n";
    for (const auto& [k, a] : arrays_)
      manifest += "array." + k + "=" + a.first.str() + "@" + std::to_string(a.second) + "\n";
    std::vector<unsigned char> out(std::begin(kArchiveMagic), std::end(kArchiveMagic));
    detail::put_u16(out, kArchiveVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(manifest.size()));
    out.insert(out.end(), manifest.begin(), manifest.end());
    out.insert(out.end(), payload_.begin(), payload_.end());
    detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
    return out;
  }

  void save(const std::string& path) const {
    const auto b = bytes();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) throw Error("write failed for " + path);
  }

 private:
  std::map<std::string, std::string> meta_;
  std::map<std::string, std::pair<ArrayShape, std::size_t>> arrays_;
  std::vector<unsigned char> payload_;
};

class ArchiveReader {
 public:
  static ArchiveReader parse(std::vector<unsigned char> bytes) {
    constexpr std::size_t kHeader = sizeof(kArchiveMagic) + 2 + 4;
    if (bytes.size() < kHeader + 4) throw CorruptArchive("archive truncated: " + std::to_string(bytes.size()) + " bytes");
    if (!std::equal(std::begin(kArchiveMagic), std::end(kArchiveMagic), bytes.begin()))
      throw CorruptArchive("not a model archive (bad magic)");
    const std::uint16_t version = static_cast<std::uint16_t>(bytes[8] | (bytes[9] << 8));
    if (version != kArchiveVersion)
      throw UnsupportedVersion("archive format version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kArchiveVersion) + ")");
    const std::size_t body = bytes.size() - 4;
    if (detail::get_u32(bytes.data() + body) != detail::crc32_of(bytes.data(), body))
      throw CorruptArchive("archive checksum mismatch");
    const std::size_t manifest_len = detail::get_u32(bytes.data() + 10);
    if (kHeader + manifest_len > body) throw CorruptArchive("archive manifest runs past the end of the file");

    ArchiveReader r;
    const std::string manifest(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
    const std::size_t payload_begin = kHeader + manifest_len, payload_size = body - payload_begin;
    std::istringstream in(manifest);
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CorruptArchive("malformed manifest line: " + line);
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key.starts_with("meta.")) {
        r.meta_[key.substr(5)] = value;
      } else if (key.starts_with("array.")) {
        const auto at = value.find('@');
        if (at == std::string::npos) throw CorruptArchive("malformed array entry: " + line);
        Entry e;
        try {
          std::istringstream dims(value.substr(0, at));
          for (std::string d; std::getline(dims, d, 'x');) e.shape.dims.push_back(std::stoll(d));
          e.offset = std::stoull(value.substr(at + 1));
        } catch (const std::exception&) {
          throw CorruptArchive("malformed array entry: " + line);
        }
        const auto n = static_cast<std::size_t>(e.shape.count());
        if (e.offset % 4 != 0 || e.offset > payload_size || n > (payload_size - e.offset) / 4)
          throw CorruptArchive("array " + key.substr(6) + " lies outside the payload");
        e.values.resize(n);
        for (std::size_t i = 0; i < n; ++i)
          e.values[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + payload_begin + e.offset + 4 * i));
        r.arrays_[key.substr(6)] = std::move(e);
      } else {
        throw CorruptArchive("unknown manifest key: " + key);
      }
    }
    return r;
  }

  static ArchiveReader load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path);
    return parse({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()});
  }

  bool has_meta(const std::string& key) const { return meta_.contains(key); }
  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw CorruptArchive("archive is missing metadata '" + key + "'");
    return it->second;
  }
  const std::map<std::string, std::string>& all_meta() const noexcept { return meta_; }

  long long meta_int(const std::string& key) const {
    try {
      return std::stoll(meta(key));
    } catch (const std::logic_error&) {
      throw CorruptArchive("metadata '" + key + "' is not an integer");
    }
  }
  double meta_double(const std::string& key) const {
    try {
      return std::stod(meta(key));
    } catch (const std::logic_error&) {
      throw CorruptArchive("metadata '" + key + "' is not a number");
    }
  }

  const std::vector<float>& array(const std::string& name) const { return entry(name).values; }
  const ArrayShape& shape(const std::string& name) const { return entry(name).shape; }

  /// Array with a required element count.
  const std::vector<float>& array(const std::string& name, std::int64_t expected) const {
    const auto& e = entry(name);
    if (static_cast<std::int64_t>(e.values.size()) != expected)
      throw CorruptArchive("array " + name + " has " + std::to_string(e.values.size()) + " values, expected " +
                           std::to_string(expected));
    return e.values;
  }

 private:
  struct Entry {
    ArrayShape shape;
    std::size_t offset = 0;
    std::vector<float> values;
  };

  const Entry& entry(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw CorruptArchive("archive is missing array '" + name + "'");
    return it->second;
  }

  std::map<std::string, std::string> meta_;
  std::map<std::string, Entry> arrays_;
};

}  // namespace pager
