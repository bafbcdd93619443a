#include <gtest/gtest.h>

#include "pager/enhancer.hpp"
#include "test_helpers.hpp"

namespace pager {
namespace {

using testing::max_abs_diff;

/// Random-radius discs over a random background, 16x16.
std::vector<ImageTensor> disc_set(int n, int side, int channels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageTensor> out;
  for (int i = 0; i < n; ++i) {
    const double r = 2.0 + rng.uniform() * side / 3.0;
    const float in = static_cast<float>(0.6 + 0.3 * rng.uniform()), bg = static_cast<float>(0.3 * rng.uniform());
    out.push_back(testing::disc_image(side, channels, r, in, bg));
  }
  return out;
}

EnhancerConfig small_config() {
  EnhancerConfig cfg;
  cfg.dc_components = 4;
  cfg.ac_components = 2;
  cfg.em.seed = 3;
  return cfg;
}

TEST(DcAcSplit, SumIsSampleExact) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto img = testing::random_image(16, 16, seed % 2 ? 3 : 1, seed);
    const auto s = split_dc_ac(img);
    for (std::size_t i = 0; i < img.size(); ++i)
      ASSERT_EQ(static_cast<double>(s.dc.data()[i]) + s.ac.data()[i], static_cast<double>(img.data()[i]));
  }
}

TEST(Enhancer, LevelLayout) {
  const auto train = disc_set(20, 16, 1, 1);
  const auto stage = train_enhancer(train, small_config(), 7);
  ASSERT_EQ(stage.levels.size(), 3u);  // windows of 16, 8, 4
  EXPECT_EQ(stage.levels[0].side, 16);
  EXPECT_EQ(stage.levels[2].side, 4);
  for (const auto& level : stage.levels) {
    EXPECT_EQ(static_cast<int>(level.ac_models.size()), level.dc_model.components());
    EXPECT_EQ(level.dc_cascade.output_dim(), level.ac_cascade.output_dim());
    for (const auto& g : level.ac_models) {
      EXPECT_GE(g.components(), 1);
      EXPECT_LE(g.components(), 2);
    }
  }
}

TEST(Enhancer, ConstantInputReturnsUpsample) {
  const auto stage = train_enhancer(disc_set(12, 16, 3, 2), small_config(), 1);
  const ImageTensor flat = testing::constant_image(8, 8, 3, 0.42f);
  Rng rng(5);
  EXPECT_EQ(enhance(stage, flat, rng), lanczos_upsample(flat));
}

TEST(Enhancer, OutputEqualsUpsampleOffMask) {
  const auto stage = train_enhancer(disc_set(30, 16, 1, 3), small_config(), 2);
  Rng pick(11);
  int touched = 0;
  for (int t = 0; t < 100; ++t) {
    const auto input = testing::random_image(8, 8, 1, 500 + t);
    const auto dc = lanczos_upsample(input);
    const auto mask = canny_mask(dc, stage.mask);
    Rng rng(pick.next_u64());
    const auto out = enhance(stage, input, rng);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        if (mask.at(x, y) == 0.0f) {
          ASSERT_EQ(out.at(x, y), dc.at(x, y));
        } else {
          touched += out.at(x, y) != dc.at(x, y);
        }
      }
  }
  EXPECT_GT(touched, 0);
}

TEST(Enhancer, SelfReconstructionFromOneImage) {
  const std::vector<ImageTensor> train = {testing::soft_disc_image(16, 5.0, 0.5)};
  const auto stage = train_enhancer(train, EnhancerConfig{}, 4);
  Rng rng(8);
  const auto input = box_downsample(train[0]);
  const auto out = enhance(stage, input, rng);
  EXPECT_LT(max_abs_diff(out, train[0]), 0.05);
  // Masked pixels carry the training detail; deeper windows see the
  // refined image, so they match only approximately.
  const auto mask = canny_mask(lanczos_upsample(input), stage.mask);
  ASSERT_GT(mask.count(), 0u);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (mask.at(x, y) != 0.0f) EXPECT_NEAR(out.at(x, y), train[0].at(x, y), 0.01);
}

TEST(Enhancer, IdenticalTrainingSetSamplesItsAc) {
  const std::vector<ImageTensor> train(6, testing::disc_image(8, 1, 2.5));
  const auto stage = train_enhancer(train, small_config(), 5);
  const auto& level = stage.levels.front();
  const auto split = split_dc_ac(train[0]);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const int y = classify(level.dc_model, forward(level.dc_cascade, split.dc), false);
    const auto ac = inverse(level.ac_cascade, sample(level.ac_models[y], rng));
    EXPECT_LT(max_abs_diff(ac, split.ac), 1e-4);
  }
}

TEST(Enhancer, DeterministicAndBatchMatchesSingle) {
  const auto stage = train_enhancer(disc_set(16, 16, 3, 4), small_config(), 6);
  const auto inputs = disc_set(6, 8, 3, 99);
  Rng a(77), b(77);
  EXPECT_EQ(enhance(stage, inputs[0], a), enhance(stage, inputs[0], b));

  const auto batch = enhance_batch(stage, inputs, 1234, 2);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Rng rng(stream_seed(1234, 2, i));
    EXPECT_EQ(batch[i], enhance(stage, inputs[i], rng));
  }
}

TEST(Enhancer, TrainingIsDeterministic) {
  const auto train = disc_set(20, 8, 1, 12);
  EXPECT_EQ(train_enhancer(train, small_config(), 3), train_enhancer(train, small_config(), 3));
}

TEST(Enhancer, SmallClustersFallBack) {
  EnhancerConfig cfg = small_config();
  cfg.dc_components = 10;
  cfg.ac_components = 8;
  const auto stage = train_enhancer(disc_set(20, 8, 1, 13), cfg, 1);
  for (const auto& g : stage.levels.front().ac_models) EXPECT_LE(g.components(), 8);
}

TEST(Enhancer, WindowCapSubsamples) {
  EnhancerConfig cfg = small_config();
  cfg.max_windows = 25;
  const auto stage = train_enhancer(disc_set(40, 16, 1, 14), cfg, 1);
  EXPECT_EQ(stage.levels.size(), 3u);
}

TEST(Enhancer, Errors) {
  EnhancerStage empty;
  Rng rng(0);
  EXPECT_THROW(enhance(empty, testing::random_image(8, 8, 1, 0), rng), InvalidState);
  const auto stage = train_enhancer(disc_set(8, 16, 1, 5), small_config(), 1);
  EXPECT_THROW(enhance(stage, testing::random_image(4, 4, 1, 0), rng), InvalidInput);
  EXPECT_THROW(enhance(stage, testing::random_image(8, 8, 3, 0), rng), InvalidInput);
  EXPECT_THROW(train_enhancer(std::vector<ImageTensor>{}, small_config(), 0), InvalidInput);
  EXPECT_THROW(train_enhancer(std::vector<ImageTensor>{testing::random_image(12, 12, 1, 0)}, small_config(), 0),
               InvalidInput);
}

}  // namespace
}  // namespace pager
