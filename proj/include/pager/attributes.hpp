#pragma once

// Attribute-guided generation: k-means over binary attribute rows, one
// model per cluster, queries routed by cosine distance to the centroids.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pager/archive.hpp"
#include "pager/kmeans.hpp"
#include "pager/pipeline.hpp"

namespace pager {

/// Entries in {-1, 0, +1}; 0 is "don't care".
using AttributeQuery = std::vector<int>;

struct AttributeRouter {
  DataMatrix centers;              // K x T
  std::vector<int> model_ids;      // model serving each center
  std::vector<std::string> names;  // attribute names, T of them (may be empty)

  int clusters() const noexcept { return static_cast<int>(centers.rows()); }
  int attributes() const noexcept { return static_cast<int>(centers.cols()); }

  friend bool operator==(const AttributeRouter& a, const AttributeRouter& b) {
    return a.centers.rows() == b.centers.rows() && a.centers.cols() == b.centers.cols() && a.centers == b.centers &&
           a.model_ids == b.model_ids && a.names == b.names;
  }
};

struct AttributeClustering {
  AttributeRouter router;
  std::vector<int> labels;      // cluster of every training row
  std::vector<double> inertia;  // objective after every assignment step
};

namespace detail {

inline DataMatrix attribute_matrix(const std::vector<std::vector<int>>& rows) {
  detail::require(!rows.empty(), "attributes: empty attribute matrix");
  const std::size_t t = rows.front().size();
  detail::require(t >= 1, "attributes: rows have no columns");
  DataMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i].size() == t, "attributes: ragged attribute matrix");
    for (std::size_t j = 0; j < t; ++j) {
      detail::require(rows[i][j] == 1 || rows[i][j] == -1, "attributes: training rows must be +-1");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

}  // namespace detail

/// k-means++ seeded Lloyd (at most 50 iterations) on +-1 attribute rows.
inline AttributeClustering cluster_attributes(const std::vector<std::vector<int>>& rows, int k, std::uint64_t seed) {
  const DataMatrix data = detail::attribute_matrix(rows);
  detail::require(k >= 1, "cluster_attributes: K must be >= 1");
  detail::require(data.rows() >= k, "cluster_attributes: fewer rows (" + std::to_string(data.rows()) +
                                        ") than clusters (" + std::to_string(k) + ")");
  auto km = kmeans(data, k, seed, 50);
  AttributeClustering out;
  out.router.centers = std::move(km.centers);
  out.router.model_ids.resize(static_cast<std::size_t>(k));
  std::iota(out.router.model_ids.begin(), out.router.model_ids.end(), 0);
  out.labels = std::move(km.labels);
  out.inertia = std::move(km.inertia);
  return out;
}

/// Cosine distance from a query to a center; a zero-norm center is at
/// distance 1.
inline double cosine_distance(const AttributeQuery& q, const Eigen::Ref<const Eigen::RowVectorXd>& c) {
  double dot = 0.0, qq = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    dot += q[j] * c(static_cast<Eigen::Index>(j));
    qq += static_cast<double>(q[j]) * q[j];
  }
  const double cc = c.squaredNorm();
  if (cc == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(qq) * std::sqrt(cc));
}

/// Center index nearest to the query in cosine distance; ties go to the
/// lowest index.
inline int route(const AttributeRouter& router, const AttributeQuery& q) {
  detail::require(router.clusters() >= 1, "route: router has no centers");
  detail::require(static_cast<int>(q.size()) == router.attributes(),
                  "route: query has " + std::to_string(q.size()) + " entries, expected " +
                      std::to_string(router.attributes()));
  bool nonzero = false;
  for (int v : q) {
    detail::require(v >= -1 && v <= 1, "route: query entries must be -1, 0 or +1");
    nonzero |= v != 0;
  }
  detail::require(nonzero, "route: query must have a nonzero entry");
  int best = 0;
  double best_d = cosine_distance(q, router.centers.row(0));
  for (int k = 1; k < router.clusters(); ++k) {
    const double d = cosine_distance(q, router.centers.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

/// Parses "+smiling,0hair,-male" against attribute names. Matching ignores
/// case, '_' and spaces; a unique prefix is accepted. Unmentioned
/// attributes are 0.
inline AttributeQuery parse_attribute_query(const std::string& text, const std::vector<std::string>& names) {
  auto norm = [](const std::string& s) {
    std::string out;
    for (char c : s)
      if (c != '_' && c != ' ' && c != '-') out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  AttributeQuery q(names.size(), 0);
  std::stringstream in(text);
  bool any = false;
  for (std::string tok; std::getline(in, tok, ',');) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok.empty()) continue;
    int value;
    switch (tok.front()) {
      case '+': value = 1; break;
      case '-': value = -1; break;
      case '0': value = 0; break;
      default: throw InvalidInput("attribute term '" + tok + "' must start with +, - or 0");
    }
    const std::string key = norm(tok.substr(1));
    detail::require(!key.empty(), "attribute term '" + tok + "' has no name");
    std::vector<std::size_t> hits;
    for (std::size_t j = 0; j < names.size(); ++j)
      if (norm(names[j]) == key) hits = {j};
    if (hits.empty())
      for (std::size_t j = 0; j < names.size(); ++j)
        if (norm(names[j]).starts_with(key)) hits.push_back(j);
    if (hits.size() != 1) {
      std::string listing;
      for (const auto& n : names) listing += (listing.empty() ? "" : ", ") + n;
      throw InvalidInput((hits.empty() ? "unknown attribute '" : "ambiguous attribute '") + tok.substr(1) +
                         "'; available: " + listing);
    }
    q[hits.front()] = value;
    any = true;
  }
  detail::require(any, "attribute query is empty");
  return q;
}

struct AttributeFamily {
  AttributeRouter router;
  std::vector<PagerModel> models;
  std::vector<std::size_t> model_sizes;  // training images per model

  friend bool operator==(const AttributeFamily&, const AttributeFamily&) = default;
};

/// Clusters the attribute rows, merges clusters below `min_cluster` into the
/// subset of the nearest surviving centroid, and trains one model per
/// surviving subset.
inline AttributeFamily train_attribute_models(std::span<const ImageTensor> images,
                                              const std::vector<std::vector<int>>& attrs, int k,
                                              const PagerConfig& cfg, std::size_t min_cluster = 500,
                                              const std::vector<std::string>& names = {}) {
  detail::require(images.size() == attrs.size(), "train_attribute_models: one attribute row per image");
  detail::require(!cfg.per_class, "train_attribute_models: per-class cores are not supported here");
  auto clustering = cluster_attributes(attrs, k, stream_seed(cfg.seed, 0x41545452, 0));
  auto& router = clustering.router;
  router.centers = router.centers.cast<float>().cast<double>();  // as stored in the archive
  router.names = names;
  detail::require(names.empty() || static_cast<int>(names.size()) == router.attributes(),
                  "train_attribute_models: attribute names do not match the row width");

  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : clustering.labels) ++sizes[static_cast<std::size_t>(l)];
  std::vector<bool> keep(sizes.size());
  for (std::size_t c = 0; c < sizes.size(); ++c) keep[c] = sizes[c] >= min_cluster;
  if (std::none_of(keep.begin(), keep.end(), [](bool b) { return b; }))
    keep[static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin())] = true;

  // Surviving clusters become models in index order; merged ones map to the
  // nearest survivor.
  std::vector<int> target(sizes.size(), -1);
  int models = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    if (keep[c]) target[c] = models++;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    if (keep[c]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      if (!keep[s]) continue;
      const double d = (router.centers.row(static_cast<Eigen::Index>(c)) - router.centers.row(static_cast<Eigen::Index>(s)))
                           .squaredNorm();
      if (d < best) {
        best = d;
        target[c] = target[s];
      }
    }
    spdlog::warn("attribute cluster {} has {} images (< {}); merged into model {}", c, sizes[c], min_cluster, target[c]);
  }
  router.model_ids = target;

  AttributeFamily family;
  std::vector<std::vector<ImageTensor>> subsets(static_cast<std::size_t>(models));
  for (std::size_t i = 0; i < images.size(); ++i)
    subsets[static_cast<std::size_t>(target[static_cast<std::size_t>(clustering.labels[i])])].push_back(images[i]);
  for (int m = 0; m < models; ++m) {
    spdlog::info("training attribute model {} on {} images", m, subsets[m].size());
    family.models.push_back(train(subsets[m], {}, cfg));
    family.model_sizes.push_back(subsets[m].size());
  }
  family.router = std::move(router);
  return family;
}

inline AttributeFamily train_attribute_models(const std::vector<ImageTensor>& images,
                                              const std::vector<std::vector<int>>& attrs, int k,
                                              const PagerConfig& cfg, std::size_t min_cluster = 500,
                                              const std::vector<std::string>& names = {}) {
  return train_attribute_models(std::span<const ImageTensor>(images), attrs, k, cfg, min_cluster, names);
}

struct AttributeGeneration {
  std::vector<ImageTensor> images;
  int center = 0;  // routed centroid
  int model = 0;   // model that produced the images
};

inline AttributeGeneration generate_with_attributes(const AttributeFamily& family, const AttributeQuery& q, Rng& rng,
                                                    int count) {
  AttributeGeneration out;
  out.center = route(family.router, q);
  out.model = family.router.model_ids[static_cast<std::size_t>(out.center)];
  out.images = generate(family.models[static_cast<std::size_t>(out.model)], rng, count);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline ArchiveWriter family_archive(const AttributeFamily& f) {
  ArchiveWriter w;
  w.meta("kind", "family");
  const auto& r = f.router;
  std::vector<float> centers(static_cast<std::size_t>(r.centers.size()));
  for (Eigen::Index i = 0; i < r.centers.rows(); ++i)
    for (Eigen::Index j = 0; j < r.centers.cols(); ++j)
      centers[static_cast<std::size_t>(i * r.centers.cols() + j)] = static_cast<float>(r.centers(i, j));
  w.array("router.centers", {{r.centers.rows(), r.centers.cols()}}, centers);
  std::string ids, names;
  for (int id : r.model_ids) ids += (ids.empty() ? "" : ",") + std::to_string(id);
  for (const auto& n : r.names) names += (names.empty() ? "" : ",") + n;
  w.meta("router.model_ids", ids);
  w.meta("router.names", names);
  w.meta("models", f.models.size());
  for (std::size_t m = 0; m < f.models.size(); ++m) {
    w.meta("model" + std::to_string(m) + ".size", f.model_sizes[m]);
    write_model(w, "model" + std::to_string(m), f.models[m]);
  }
  return w;
}

inline void save_family(const AttributeFamily& f, const std::string& path) { family_archive(f).save(path); }

inline AttributeFamily family_from_archive(const ArchiveReader& r) {
  if (r.meta("kind") != "family") throw CorruptArchive("archive holds a '" + r.meta("kind") + "', not a model family");
  AttributeFamily f;
  const auto& shape = r.shape("router.centers");
  if (shape.dims.size() != 2 || shape.dims[0] < 1 || shape.dims[1] < 1) throw CorruptArchive("router centers malformed");
  const auto& c = r.array("router.centers");
  f.router.centers.resize(shape.dims[0], shape.dims[1]);
  for (Eigen::Index i = 0; i < f.router.centers.size(); ++i) f.router.centers(i / shape.dims[1], i % shape.dims[1]) = c[i];
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string t; std::getline(in, t, ',');) out.push_back(t);
    return out;
  };
  const int models = detail::as_int(r, "models", 1, 1 << 16);
  for (const auto& id : split(r.meta("router.model_ids"))) {
    try {
      f.router.model_ids.push_back(std::stoi(id));
    } catch (const std::exception&) {
      throw CorruptArchive("router model id '" + id + "' is not an integer");
    }
    if (f.router.model_ids.back() < 0 || f.router.model_ids.back() >= models)
      throw CorruptArchive("router refers to a missing model");
  }
  if (static_cast<Eigen::Index>(f.router.model_ids.size()) != f.router.centers.rows())
    throw CorruptArchive("router has " + std::to_string(f.router.model_ids.size()) + " model ids for " +
                         std::to_string(f.router.centers.rows()) + " centers");
  f.router.names = split(r.meta("router.names"));
  for (int m = 0; m < models; ++m) {
    f.model_sizes.push_back(static_cast<std::size_t>(r.meta_int("model" + std::to_string(m) + ".size")));
    f.models.push_back(read_model(r, "model" + std::to_string(m)));
  }
  return f;
}

inline AttributeFamily load_family(const std::string& path) { return family_from_archive(ArchiveReader::load(path)); }

}  // namespace pager
