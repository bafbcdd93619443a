#pragma once

// End-to-end model: core generator at the lowest resolution followed by
// alternating enhancer / booster stages that each double the side.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pager/archive.hpp"
#include "pager/booster.hpp"
#include "pager/enhancer.hpp"
#include "pager/generator.hpp"
#include "pager/imageops.hpp"
#include "pager/parallel.hpp"
#include "pager/rng.hpp"
#include "pager/serialize.hpp"

namespace pager {

inline constexpr const char* kLibraryVersion = "1.0.0";

struct PagerConfig {
  std::string dataset = "custom";
  int core_side = 4;
  int core_components = 500;
  int core_samples_per_component = 0;  // if > 0, K <= max(1, n / this) per core
  bool per_class = false;              // one core per label
  EmOptions core_em;
  EnhancerConfig enhancer;
  BoosterConfig booster;
  bool use_booster = true;
  std::uint64_t seed = 0;
};

/// Defaults for 28x28 digit sets: padded to 32, one class-conditional core
/// per digit at 16x16, one 16 -> 32 stage, output cropped back to 28.
inline PagerConfig mnist_config() {
  PagerConfig cfg;
  cfg.dataset = "mnist";
  cfg.core_side = 16;
  cfg.core_components = 100;
  cfg.core_samples_per_component = 40;
  cfg.per_class = true;
  return cfg;
}

/// Defaults for 32x32 RGB faces: 4x4 core, stages 8, 16 and 32.
inline PagerConfig celeba_config() {
  PagerConfig cfg;
  cfg.dataset = "celeba";
  cfg.core_side = 4;
  cfg.core_components = 500;
  return cfg;
}

/// Canonical "key=value" rendering of every field. Feeds the config hash and
/// the archive metadata.
inline std::vector<std::pair<std::string, std::string>> config_entries(const PagerConfig& c) {
  auto num = [](auto v) {
    if constexpr (std::is_floating_point_v<decltype(v)>) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
      return std::string(buf);
    } else {
      return std::to_string(v);
    }
  };
  auto em = [&](const std::string& p, const EmOptions& e, auto& out) {
    out.emplace_back(p + ".max_iters", num(e.max_iters));
    out.emplace_back(p + ".tol", num(e.tol));
    out.emplace_back(p + ".seed", num(e.seed));
    out.emplace_back(p + ".var_floor", num(e.var_floor));
    out.emplace_back(p + ".restarts", num(e.restarts));
    out.emplace_back(p + ".kmeans_iters", num(e.kmeans_iters));
    out.emplace_back(p + ".max_samples", num(e.max_samples));
  };
  auto canny = [&](const std::string& p, const CannyParams& m, auto& out) {
    out.emplace_back(p + ".low", num(m.low));
    out.emplace_back(p + ".high", num(m.high));
    out.emplace_back(p + ".sigma", num(m.sigma));
    out.emplace_back(p + ".dilate", num(m.dilate_radius));
  };
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("dataset", c.dataset);
  out.emplace_back("core.side", num(c.core_side));
  out.emplace_back("core.components", num(c.core_components));
  out.emplace_back("core.samples_per_component", num(c.core_samples_per_component));
  out.emplace_back("core.per_class", num(int{c.per_class}));
  em("core.em", c.core_em, out);
  out.emplace_back("enhancer.dc_components", num(c.enhancer.dc_components));
  out.emplace_back("enhancer.ac_components", num(c.enhancer.ac_components));
  out.emplace_back("enhancer.recursion_floor", num(c.enhancer.recursion_floor));
  out.emplace_back("enhancer.max_windows", num(c.enhancer.max_windows));
  out.emplace_back("enhancer.weighted_dc", num(int{c.enhancer.weighted_dc}));
  canny("enhancer.mask", c.enhancer.mask, out);
  em("enhancer.em", c.enhancer.em, out);
  out.emplace_back("booster.enabled", num(int{c.use_booster}));
  out.emplace_back("booster.neighbors", num(c.booster.neighbors));
  out.emplace_back("booster.reg", num(c.booster.reg));
  out.emplace_back("booster.feature_dims", num(c.booster.feature_dims));
  out.emplace_back("booster.max_exemplars", num(c.booster.max_exemplars));
  out.emplace_back("booster.pca_rows", num(c.booster.pca_rows));
  canny("booster.mask", c.booster.mask, out);
  out.emplace_back("seed", num(c.seed));
  return out;
}

inline std::string config_hash(const PagerConfig& c) {
  std::string canonical;
  for (const auto& [k, v] : config_entries(c)) canonical += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

struct PagerModel {
  std::vector<CoreGenerator> cores;
  std::vector<int> core_labels;           // -1 for an unconditional core
  std::vector<std::uint64_t> core_counts;  // training images behind each core
  std::vector<EnhancerStage> enhancers;
  std::vector<BoosterStage> boosters;  // empty, or one per enhancer
  int output_side = 0;                 // after the final center crop
  std::map<std::string, std::string> metadata;

  bool trained() const noexcept { return !cores.empty(); }
  int core_side() const noexcept { return cores.empty() ? 0 : cores.front().side(); }
  int channels() const noexcept { return cores.empty() ? 0 : cores.front().channels(); }
  int final_side() const noexcept { return enhancers.empty() ? core_side() : enhancers.back().resolution; }
  bool conditional() const noexcept { return !core_labels.empty() && core_labels.front() >= 0; }

  /// Sides accepted by super_resolve.
  std::vector<int> valid_input_sides() const {
    std::vector<int> s;
    for (const auto& e : enhancers) s.push_back(e.input_side());
    s.push_back(final_side());
    return s;
  }

  friend bool operator==(const PagerModel&, const PagerModel&) = default;
};

/// Rejects any model whose stages do not form a strictly doubling chain.
inline void validate_chain(const PagerModel& m) {
  auto fail = [](const std::string& why) { throw CorruptArchive("invalid model: " + why); };
  if (m.cores.empty()) fail("no core generator");
  if (m.core_labels.size() != m.cores.size() || m.core_counts.size() != m.cores.size()) fail("core tables differ in length");
  for (const auto& c : m.cores)
    if (c.side() != m.core_side() || c.channels() != m.channels()) fail("cores disagree on resolution");
  int side = m.core_side();
  for (const auto& e : m.enhancers) {
    if (e.resolution != 2 * side) fail("enhancer chain does not double at " + std::to_string(side));
    if (e.channels() != m.channels()) fail("enhancer channel count differs");
    side = e.resolution;
  }
  if (!m.boosters.empty()) {
    if (m.boosters.size() != m.enhancers.size()) fail("booster stages do not match enhancer stages");
    for (std::size_t i = 0; i < m.boosters.size(); ++i)
      if (m.boosters[i].resolution != m.enhancers[i].resolution || m.boosters[i].channels != m.channels())
        fail("booster stage " + std::to_string(i) + " is misaligned");
  }
  if (m.output_side < 1 || m.output_side > side) fail("output side out of range");
}

namespace detail {

inline int next_power_of_two(int v) {
  int p = 1;
  while (p < v) p *= 2;
  return p;
}

inline constexpr std::uint64_t kCoreStream = 0x434f5245;
inline constexpr std::uint64_t kEnhancerStream = 0x454e48;
inline constexpr std::uint64_t kBoosterStream = 0x424f4f;
inline constexpr std::uint64_t kGenerateStream = 0x47454e;

}  // namespace detail

/// Trains every module. Square inputs whose side is not a power of two are
/// zero-padded to the next power of two and generation crops them back.
/// `labels` is required when cfg.per_class is set.
inline PagerModel train(std::span<const ImageTensor> images, std::span<const int> labels, const PagerConfig& cfg) {
  using clock = std::chrono::steady_clock;
  detail::require(!images.empty(), "train: empty training set");
  const int side = images.front().width(), channels = images.front().channels();
  for (const auto& img : images)
    detail::require(img.width() == side && img.height() == side && img.channels() == channels,
                    "train: images must be square and share dimensions");
  detail::require(!cfg.per_class || labels.size() == images.size(), "train: per-class training needs one label per image");
  const int full = detail::next_power_of_two(side);
  detail::require(is_power_of_two(cfg.core_side) && cfg.core_side >= 2 && cfg.core_side <= full,
                  "train: core side must be a power of two between 2 and the image side");
  detail::require(cfg.core_components >= 1, "train: core components must be >= 1");
  const auto t0 = clock::now();

  // Resolution pyramid, finest first.
  std::vector<std::vector<ImageTensor>> pyramid(1, std::vector<ImageTensor>(images.size()));
  parallel_for(images.size(), 256, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      pyramid[0][i] = full == side ? images[i] : pad_center(images[i], full, full);
  });
  if (full != side) spdlog::info("padding {}x{} inputs to {}x{}", side, side, full, full);
  for (int s = full; s > cfg.core_side; s /= 2) {
    std::vector<ImageTensor> next(images.size());
    const auto& prev = pyramid.back();
    parallel_for(images.size(), 256, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) next[i] = box_downsample(prev[i], 2);
    });
    pyramid.push_back(std::move(next));
  }
  const auto& core_images = pyramid.back();

  PagerModel model;
  model.output_side = side;
  const int stages = log2_exact(cfg.core_side);
  auto fit_core = [&](const std::vector<ImageTensor>& subset, int label, std::uint64_t index) {
    int k = cfg.core_components;
    if (cfg.core_samples_per_component > 0)
      k = std::min<int>(k, std::max<int>(1, static_cast<int>(subset.size()) / cfg.core_samples_per_component));
    k = std::min<int>(k, static_cast<int>(subset.size()));
    EmOptions em = cfg.core_em;
    em.seed = stream_seed(cfg.seed, detail::kCoreStream, index);
    model.cores.push_back(train_core(subset, stages, k, em));
    model.core_labels.push_back(label);
    model.core_counts.push_back(subset.size());
    spdlog::info("core {}: {} images, K={}", label < 0 ? std::string("all") : std::to_string(label), subset.size(), k);
  };
  if (cfg.per_class) {
    std::map<int, std::vector<ImageTensor>> by_label;
    for (std::size_t i = 0; i < images.size(); ++i) by_label[labels[i]].push_back(core_images[i]);
    for (const auto& [label, subset] : by_label) {
      detail::require(label >= 0, "train: labels must be non-negative");
      fit_core(subset, label, static_cast<std::uint64_t>(label));
    }
  } else {
    fit_core(core_images, -1, 0);
  }
  const auto t_core = clock::now();

  for (std::size_t level = pyramid.size() - 1; level-- > 0;) {
    const auto& stage_images = pyramid[level];
    const int res = stage_images.front().width();
    auto enhancer = train_enhancer(stage_images, cfg.enhancer, stream_seed(cfg.seed, detail::kEnhancerStream, res));
    if (cfg.use_booster)
      model.boosters.push_back(
          train_booster(stage_images, enhancer, cfg.booster, stream_seed(cfg.seed, detail::kBoosterStream, res)));
    model.enhancers.push_back(std::move(enhancer));
    spdlog::info("stage {}->{} trained", res / 2, res);
  }
  const auto t_end = clock::now();

  auto seconds = [](auto d) { return std::chrono::duration<double>(d).count(); };
  model.metadata["dataset"] = cfg.dataset;
  model.metadata["train_count"] = std::to_string(images.size());
  model.metadata["seed"] = std::to_string(cfg.seed);
  model.metadata["config_hash"] = config_hash(cfg);
  model.metadata["version"] = kLibraryVersion;
  model.metadata["output_side"] = std::to_string(side);
  for (const auto& [k, v] : config_entries(cfg)) model.metadata["config." + k] = v;
  spdlog::info("training done: core {:.1f}s, stages {:.1f}s", seconds(t_core - t0), seconds(t_end - t_core));
  return model;
}

inline PagerModel train(const std::vector<ImageTensor>& images, const std::vector<int>& labels, const PagerConfig& cfg) {
  return train(std::span<const ImageTensor>(images), std::span<const int>(labels), cfg);
}

struct GeneratedBatch {
  std::vector<ImageTensor> images;
  std::vector<int> labels;              // core label used per image (-1 if unconditional)
  std::vector<std::uint64_t> seeds;     // per-image stream seed
};

namespace detail {

inline std::size_t core_index(const PagerModel& m, int label) {
  for (std::size_t i = 0; i < m.core_labels.size(); ++i)
    if (m.core_labels[i] == label) return i;
  std::string known;
  for (int l : m.core_labels) known += (known.empty() ? "" : ", ") + std::to_string(l);
  throw InvalidInput("no core for label " + std::to_string(label) + " (model has: " + known + ")");
}

/// Applies stages [first, last) starting from an image at the input side of
/// stage `first`.
inline ImageTensor run_stages(const PagerModel& m, ImageTensor img, std::size_t first, std::size_t last, Rng& rng) {
  for (std::size_t s = first; s < last; ++s) {
    img = enhance(m.enhancers[s], img, rng);
    if (!m.boosters.empty()) img = boost(m.boosters[s], img, rng);
  }
  return img;
}

}  // namespace detail

/// Generates one image per entry of `labels` (-1 samples a core in
/// proportion to its training count). Image i draws everything from
/// stream_seed(root_seed, generate-stream, i).
inline GeneratedBatch generate_batch(const PagerModel& model, std::uint64_t root_seed, std::span<const int> labels) {
  if (!model.trained()) throw InvalidState("model is not trained");
  std::vector<double> cumulative;
  double total = 0;
  for (auto c : model.core_counts) cumulative.push_back(total += static_cast<double>(std::max<std::uint64_t>(c, 1)));
  std::vector<std::size_t> fixed(labels.size(), SIZE_MAX);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) fixed[i] = detail::core_index(model, labels[i]);

  GeneratedBatch out;
  out.images.resize(labels.size());
  out.labels.resize(labels.size());
  out.seeds.resize(labels.size());
  parallel_for(labels.size(), 4, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const std::uint64_t seed = stream_seed(root_seed, detail::kGenerateStream, i);
      Rng rng(seed);
      const std::size_t c = fixed[i] != SIZE_MAX ? fixed[i] : rng.categorical(cumulative);
      ImageTensor img = generate_core_one(model.cores[c], rng);
      img = detail::run_stages(model, std::move(img), 0, model.enhancers.size(), rng);
      if (model.output_side != img.width()) img = crop_center(img, model.output_side, model.output_side);
      out.images[i] = std::move(img);
      out.labels[i] = model.core_labels[c];
      out.seeds[i] = seed;
    }
  });
  return out;
}

inline std::vector<ImageTensor> generate(const PagerModel& model, Rng& rng, int count) {
  detail::require(count >= 0, "generate: negative count");
  const std::vector<int> labels(static_cast<std::size_t>(count), -1);
  return generate_batch(model, rng.next_u64(), labels).images;
}

/// `count` images of one class from a class-conditional model.
inline std::vector<ImageTensor> generate_class(const PagerModel& model, int label, Rng& rng, int count) {
  detail::require(count >= 0, "generate: negative count");
  detail::require(label >= 0, "generate: label must be non-negative");
  const std::vector<int> labels(static_cast<std::size_t>(count), label);
  return generate_batch(model, rng.next_u64(), labels).images;
}

/// Raises `img` to `target_side` with the stages from its side upward.
inline ImageTensor super_resolve(const PagerModel& model, const ImageTensor& img, int target_side, Rng& rng) {
  if (!model.trained()) throw InvalidState("model is not trained");
  const auto sides = model.valid_input_sides();
  std::string listing;
  for (int s : sides) listing += (listing.empty() ? "" : ", ") + std::to_string(s);
  const int side = img.width();
  auto it = std::find(sides.begin(), sides.end(), side);
  if (img.height() != side || it == sides.end())
    throw InvalidInput("super_resolve: input is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                       "; valid input sides are " + listing);
  detail::require(img.channels() == model.channels(), "super_resolve: channel count does not match the model");
  detail::require(target_side >= side && target_side <= model.final_side() && is_power_of_two(target_side / side) &&
                      target_side % side == 0,
                  "super_resolve: target must be the input side times a power of two, at most " +
                      std::to_string(model.final_side()));
  if (target_side == side) return img;
  const auto first = static_cast<std::size_t>(it - sides.begin());
  const auto last = first + static_cast<std::size_t>(log2_exact(target_side / side));
  Rng stream(rng.next_u64());
  return detail::run_stages(model, img, first, last, stream);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void write_model(ArchiveWriter& w, const std::string& p, const PagerModel& m) {
  w.meta(p + ".cores", m.cores.size());
  for (std::size_t i = 0; i < m.cores.size(); ++i) {
    const std::string cp = p + ".core" + std::to_string(i);
    w.meta(cp + ".label", m.core_labels[i]);
    w.meta(cp + ".count", m.core_counts[i]);
    write_core(w, cp, m.cores[i]);
  }
  w.meta(p + ".stages", m.enhancers.size());
  w.meta(p + ".boosted", m.boosters.empty() ? 0 : 1);
  for (std::size_t i = 0; i < m.enhancers.size(); ++i) {
    write_enhancer(w, p + ".enhancer" + std::to_string(i), m.enhancers[i]);
    if (!m.boosters.empty()) write_booster(w, p + ".booster" + std::to_string(i), m.boosters[i]);
  }
  w.meta(p + ".output_side", m.output_side);
  for (const auto& [k, v] : m.metadata) w.meta(p + ".info." + k, v);
}

inline PagerModel read_model(const ArchiveReader& r, const std::string& p) {
  PagerModel m;
  const int cores = detail::as_int(r, p + ".cores", 1, 1 << 16);
  for (int i = 0; i < cores; ++i) {
    const std::string cp = p + ".core" + std::to_string(i);
    m.core_labels.push_back(static_cast<int>(r.meta_int(cp + ".label")));
    m.core_counts.push_back(static_cast<std::uint64_t>(r.meta_int(cp + ".count")));
    m.cores.push_back(read_core(r, cp));
  }
  const int stages = detail::as_int(r, p + ".stages", 0, 30);
  const bool boosted = r.meta_int(p + ".boosted") != 0;
  for (int i = 0; i < stages; ++i) {
    m.enhancers.push_back(read_enhancer(r, p + ".enhancer" + std::to_string(i)));
    if (boosted) m.boosters.push_back(read_booster(r, p + ".booster" + std::to_string(i)));
  }
  m.output_side = detail::as_int(r, p + ".output_side", 1, detail::kMaxDim);
  const std::string info = p + ".info.";
  for (const auto& [k, v] : r.all_meta())
    if (k.starts_with(info)) m.metadata[k.substr(info.size())] = v;
  validate_chain(m);
  return m;
}

inline ArchiveWriter model_archive(const PagerModel& m) {
  ArchiveWriter w;
  w.meta("kind", "model");
  write_model(w, "model", m);
  return w;
}

inline void save_model(const PagerModel& m, const std::string& path) { model_archive(m).save(path); }

inline PagerModel model_from_archive(const ArchiveReader& r) {
  if (r.meta("kind") != "model") throw CorruptArchive("archive holds a '" + r.meta("kind") + "', not a single model");
  return read_model(r, "model");
}

inline PagerModel load_model(const std::string& path) { return model_from_archive(ArchiveReader::load(path)); }

}  // namespace pager
