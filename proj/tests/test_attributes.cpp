#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>

#include "pager/attributes.hpp"
#include "test_helpers.hpp"

namespace pager {
namespace {

// Brute force: cosine similarity by explicit norms in long double, argmin
// of 1 - sim with the first minimum kept.
int route_oracle(const DataMatrix& centers, const std::vector<int>& q) {
  int best = -1;
  long double best_d = 0;
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    long double dot = 0, nq = 0, nc = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      dot += static_cast<long double>(q[j]) * centers(k, static_cast<Eigen::Index>(j));
      nq += static_cast<long double>(q[j]) * q[j];
      nc += static_cast<long double>(centers(k, static_cast<Eigen::Index>(j))) * centers(k, static_cast<Eigen::Index>(j));
    }
    const long double d = nc == 0 ? 1.0L : 1.0L - dot / (std::sqrt(nq) * std::sqrt(nc));
    if (best < 0 || d < best_d - 1e-12L) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  return best;
}

std::vector<std::vector<int>> random_rows(std::size_t n, int t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> rows(n, std::vector<int>(static_cast<std::size_t>(t)));
  for (auto& r : rows)
    for (int& v : r) v = rng.uniform() < 0.5 ? -1 : 1;
  return rows;
}

std::vector<std::vector<int>> all_queries(int t) {
  std::vector<std::vector<int>> out;
  int total = 1;
  for (int i = 0; i < t; ++i) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::vector<int> q(static_cast<std::size_t>(t));
    for (int j = 0, c = code; j < t; ++j, c /= 3) q[static_cast<std::size_t>(j)] = c % 3 - 1;
    if (std::any_of(q.begin(), q.end(), [](int v) { return v != 0; })) out.push_back(q);
  }
  return out;
}

TEST(Attributes, ExhaustiveRoutingMatchesBruteForce) {
  const auto queries = all_queries(7);
  ASSERT_EQ(queries.size(), 2186u);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto clustering = cluster_attributes(random_rows(5000, 7, seed), 10, seed);
    for (const auto& q : queries) ASSERT_EQ(route(clustering.router, q), route_oracle(clustering.router.centers, q));
  }
}

TEST(Attributes, RoutingSpecialCases) {
  AttributeRouter r;
  r.centers.resize(4, 3);
  r.centers << 0, 0, 0,   // zero norm: distance 1
      1, 1, 1,
      2, 2, 2,            // same direction as row 1: tie, lower index wins
      -1, 0.5, 0;
  r.model_ids = {0, 1, 2, 3};
  EXPECT_EQ(route(r, {1, 1, 1}), 1);
  EXPECT_EQ(route(r, {-1, 0, 0}), 3);
  EXPECT_EQ(route(r, {0, 0, 1}), 1);
  // Every nonzero center is at distance >= 1, so the zero center wins by index.
  EXPECT_EQ(route(r, {1, -1, 0}), 0);
  EXPECT_THROW(route(r, {0, 0, 0}), InvalidInput);
  EXPECT_THROW(route(r, {1, 0}), InvalidInput);
  EXPECT_THROW(route(r, {2, 0, 0}), InvalidInput);
}

TEST(Attributes, ScaleInvariance) {
  const auto clustering = cluster_attributes(random_rows(2000, 7, 9), 10, 4);
  AttributeRouter scaled = clustering.router;
  for (double alpha : {0.5, 3.0, 1e3}) {
    scaled.centers = clustering.router.centers * alpha;
    for (const auto& q : all_queries(7)) ASSERT_EQ(route(scaled, q), route(clustering.router, q));
  }
}

TEST(Attributes, CentroidRoutesToItself) {
  // Exactly K distinct rows, each repeated: centroids are those rows.
  const std::vector<std::vector<int>> distinct = {
      {1, 1, 1, -1}, {-1, -1, 1, 1}, {1, -1, -1, -1}, {-1, 1, -1, 1}};
  std::vector<std::vector<int>> rows;
  for (int rep = 0; rep < 25; ++rep)
    for (const auto& r : distinct) rows.push_back(r);
  const auto c = cluster_attributes(rows, 4, 5);
  EXPECT_NEAR(c.inertia.back(), 0.0, 1e-12);
  for (const auto& r : distinct) {
    const int k = route(c.router, r);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(c.router.centers(k, j), r[j]);
  }
}

TEST(Attributes, InertiaNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = cluster_attributes(random_rows(800, 7, 100 + seed), 10, seed);
    for (std::size_t i = 1; i < c.inertia.size(); ++i) EXPECT_LE(c.inertia[i], c.inertia[i - 1] + 1e-9);
    // Recomputed objective matches the final reported one.
    const auto data = random_rows(800, 7, 100 + seed);
    double obj = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
      for (int j = 0; j < 7; ++j) {
        const double d = data[i][j] - c.router.centers(c.labels[i], j);
        obj += d * d;
      }
    EXPECT_NEAR(obj, c.inertia.back(), 1e-9 * std::max(1.0, obj));
  }
}

TEST(Attributes, ExhaustiveRoutingIsFast) {
  const auto c = cluster_attributes(random_rows(3000, 7, 1), 10, 1);
  const auto queries = all_queries(7);
  const auto t0 = std::chrono::steady_clock::now();
  int sink = 0;
  for (const auto& q : queries) sink += route(c.router, q);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 1.0);
  EXPECT_GE(sink, 0);
}

TEST(Attributes, ClusterErrors) {
  EXPECT_THROW(cluster_attributes(random_rows(5, 3, 1), 10, 1), InvalidInput);
  EXPECT_THROW(cluster_attributes({}, 1, 1), InvalidInput);
  EXPECT_THROW(cluster_attributes({{1, 0, -1}}, 1, 1), InvalidInput);
  EXPECT_THROW(cluster_attributes({{1, 1}, {1}}, 1, 1), InvalidInput);
}

TEST(Attributes, QueryParser) {
  const std::vector<std::string> names = {"Smiling", "Hair", "Male"};
  EXPECT_EQ(parse_attribute_query("+smiling,0hair,-male", names), (AttributeQuery{1, 0, -1}));
  EXPECT_EQ(parse_attribute_query("-Male", names), (AttributeQuery{0, 0, -1}));
  EXPECT_EQ(parse_attribute_query(" +smil , -hair ", names), (AttributeQuery{1, -1, 0}));

  const auto& celeba = celeba_default_attributes();
  EXPECT_EQ(parse_attribute_query("+blond_hair,-male,+young", celeba), (AttributeQuery{-1, 0, 1, 0, 0, 0, 1}));
  EXPECT_EQ(parse_attribute_query("+Wearing Lipstick", celeba), (AttributeQuery{0, 0, 0, 0, 1, 0, 0}));
  EXPECT_THROW(parse_attribute_query("+b", celeba), InvalidInput);  // Blond_Hair, Black_Hair, Bangs
  EXPECT_THROW(parse_attribute_query("+tall", names), InvalidInput);
  EXPECT_THROW(parse_attribute_query("smiling", names), InvalidInput);
  EXPECT_THROW(parse_attribute_query("", names), InvalidInput);
  EXPECT_THROW(parse_attribute_query("+", names), InvalidInput);
}

// ---------------------------------------------------------------------------
// Per-cluster models
// ---------------------------------------------------------------------------

PagerConfig tiny_config() {
  PagerConfig cfg;
  cfg.core_side = 4;
  cfg.core_components = 2;
  cfg.enhancer.dc_components = 2;
  cfg.enhancer.ac_components = 1;
  cfg.booster.feature_dims = 4;
  cfg.seed = 3;
  return cfg;
}

struct Corpus {
  std::vector<ImageTensor> images;
  std::vector<std::vector<int>> attrs;
};

// Two attribute groups; group 1 has bright discs, group 0 dark ones.
Corpus corpus(int per_group, int small_group) {
  Corpus c;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < (g == 0 ? per_group : small_group); ++i) {
      c.images.push_back(testing::soft_disc_image(8, 1.5 + 0.1 * (i % 5), 0.6, g ? 0.9f : 0.4f, 0.1f));
      c.attrs.push_back(g ? std::vector<int>{1, 1, -1} : std::vector<int>{-1, -1, 1});
    }
  return c;
}

TEST(AttributeModels, SingleClusterEqualsUnconditional) {
  const auto c = corpus(12, 12);
  const auto family = train_attribute_models(c.images, c.attrs, 1, tiny_config(), 1);
  ASSERT_EQ(family.models.size(), 1u);
  EXPECT_TRUE(family.models.front() == train(c.images, {}, tiny_config()));
  EXPECT_EQ(family.model_sizes, std::vector<std::size_t>{24});
}

TEST(AttributeModels, SizesSumAndMerge) {
  const auto c = corpus(12, 3);
  const auto kept = train_attribute_models(c.images, c.attrs, 2, tiny_config(), 1);
  ASSERT_EQ(kept.models.size(), 2u);
  EXPECT_EQ(kept.model_sizes[0] + kept.model_sizes[1], c.images.size());

  const auto merged = train_attribute_models(c.images, c.attrs, 2, tiny_config(), 5);
  ASSERT_EQ(merged.models.size(), 1u);
  EXPECT_EQ(merged.model_sizes.front(), c.images.size());
  EXPECT_EQ(merged.router.clusters(), 2);
  EXPECT_EQ(merged.router.model_ids, (std::vector<int>{0, 0}));
}

double mean_intensity(const std::vector<ImageTensor>& images) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& img : images)
    for (float v : img.data()) {
      s += v;
      ++n;
    }
  return s / static_cast<double>(n);
}

TEST(AttributeModels, RoutedGenerationUsesThatModel) {
  const auto c = corpus(12, 12);
  const auto family = train_attribute_models(c.images, c.attrs, 2, tiny_config(), 1, {"Bright", "Big", "Dark"});
  ASSERT_EQ(family.models.size(), 2u);
  const std::vector<ImageTensor> dark(c.images.begin(), c.images.begin() + 12), bright(c.images.begin() + 12, c.images.end());
  const double threshold = 0.5 * (mean_intensity(dark) + mean_intensity(bright));
  for (int k = 0; k < 2; ++k) {
    AttributeQuery q(3);
    for (int j = 0; j < 3; ++j) q[j] = family.router.centers(k, j) > 0 ? 1 : -1;
    Rng a(4), b(4);
    const auto out = generate_with_attributes(family, q, a, 3);
    EXPECT_EQ(out.center, k);
    EXPECT_EQ(out.model, family.router.model_ids[k]);
    EXPECT_EQ(out.images, generate(family.models[out.model], b, 3));
    // Bright-group queries give images brighter than the midpoint of the
    // two groups' training means.
    EXPECT_EQ(mean_intensity(out.images) > threshold, q[0] == 1);
  }
  Rng r1(8), r2(8);
  EXPECT_EQ(generate_with_attributes(family, parse_attribute_query("+bright", family.router.names), r1, 2).images,
            generate_with_attributes(family, parse_attribute_query("+bright", family.router.names), r2, 2).images);
}

TEST(AttributeModels, FamilyRoundTrip) {
  const auto c = corpus(12, 12);
  const auto family = train_attribute_models(c.images, c.attrs, 2, tiny_config(), 1, {"A", "B", "C"});
  const auto path = (std::filesystem::temp_directory_path() / "pager_test_family.pager").string();
  save_family(family, path);
  const auto loaded = load_family(path);
  EXPECT_TRUE(loaded == family);
  EXPECT_THROW(load_model(path), CorruptArchive);
  std::filesystem::remove(path);
}

TEST(AttributeModels, Errors) {
  const auto c = corpus(4, 4);
  auto attrs = c.attrs;
  attrs.pop_back();
  EXPECT_THROW(train_attribute_models(c.images, attrs, 2, tiny_config()), InvalidInput);
  auto per = tiny_config();
  per.per_class = true;
  EXPECT_THROW(train_attribute_models(c.images, c.attrs, 2, per), InvalidInput);
  EXPECT_THROW(train_attribute_models(c.images, c.attrs, 2, tiny_config(), 1, {"only_one"}), InvalidInput);
}

}  // namespace
}  // namespace pager
