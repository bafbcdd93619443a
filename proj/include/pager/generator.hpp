#pragma once

// Unconditional core generator: a Saab cascade that maps the lowest
// resolution images to a vector, and a GMM over those vectors.

#include <cstdint>
#include <span>
#include <vector>

#include "pager/gmm.hpp"
#include "pager/image.hpp"
#include "pager/imageops.hpp"
#include "pager/parallel.hpp"
#include "pager/rng.hpp"
#include "pager/saab.hpp"

namespace pager {

struct CoreGenerator {
  SaabCascade cascade;
  Gmm model;

  int side() const noexcept { return cascade.width; }
  int channels() const noexcept { return cascade.channels; }
  bool trained() const noexcept { return !model.empty(); }

  friend bool operator==(const CoreGenerator&, const CoreGenerator&) = default;
};

inline CoreGenerator train_core(std::span<const ImageTensor> images, int stages, int components,
                                const EmOptions& em = {}) {
  detail::require(!images.empty(), "train_core: empty training set");
  CoreGenerator gen;
  gen.cascade = fit_cascade(images, stages);
  gen.model = fit_em(forward_all(gen.cascade, images), components, em);
  return gen;
}

inline CoreGenerator train_core(const std::vector<ImageTensor>& images, int stages, int components,
                                const EmOptions& em = {}) {
  return train_core(std::span<const ImageTensor>(images), stages, components, em);
}

/// One core image from a dedicated stream.
inline ImageTensor generate_core_one(const CoreGenerator& gen, Rng& rng) {
  if (!gen.trained()) throw InvalidState("core generator is not trained");
  return clip_unit(inverse(gen.cascade, sample(gen.model, rng)));
}

/// `count` core images. Image i draws from stream_seed(base, 0, i), where
/// base is one draw from `rng`, so the batch is independent of threading.
inline std::vector<ImageTensor> generate_core(const CoreGenerator& gen, Rng& rng, int count) {
  if (!gen.trained()) throw InvalidState("core generator is not trained");
  detail::require(count >= 0, "generate_core: negative count");
  const std::uint64_t base = rng.next_u64();
  std::vector<ImageTensor> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), 8, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Rng stream(stream_seed(base, 0, i));
      out[i] = generate_core_one(gen, stream);
    }
  });
  return out;
}

}  // namespace pager
