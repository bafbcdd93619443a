#include <gtest/gtest.h>

#include "pager/generator.hpp"
#include "test_helpers.hpp"

namespace pager {
namespace {

using testing::max_abs_diff;

TEST(Generator, SingleImageIsReproduced) {
  const std::vector<ImageTensor> train = {testing::random_image(4, 4, 3, 5)};
  const CoreGenerator gen = train_core(train, 2, 1);
  EXPECT_EQ(gen.model.dim(), gen.cascade.output_dim());
  Rng rng(1);
  for (const auto& img : generate_core(gen, rng, 8)) EXPECT_LT(max_abs_diff(img, train[0]), 1e-3);
}

TEST(Generator, DegenerateModelGivesIdenticalOutputs) {
  const std::vector<ImageTensor> train(5, testing::disc_image(16, 1, 4.0));
  const CoreGenerator gen = train_core(train, 4, 1);
  Rng rng(3);
  const auto out = generate_core(gen, rng, 6);
  for (const auto& img : out) EXPECT_LT(max_abs_diff(img, out.front()), 1e-5);
}

TEST(Generator, FixedSeedIsDeterministicAndClipped) {
  std::vector<ImageTensor> train;
  for (int i = 0; i < 40; ++i) train.push_back(testing::random_image(4, 4, 3, 100 + i));
  const CoreGenerator gen = train_core(train, 2, 4);
  Rng a(9), b(9);
  const auto x = generate_core(gen, a, 12);
  const auto y = generate_core(gen, b, 12);
  ASSERT_EQ(x.size(), 12u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i], y[i]);
    for (float v : x[i].data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Generator, BatchIndependentOfThreadCount) {
  std::vector<ImageTensor> train;
  for (int i = 0; i < 30; ++i) train.push_back(testing::random_image(4, 4, 1, i));
  const CoreGenerator gen = train_core(train, 2, 3);
  Rng a(4), b(4);
  const auto serial = generate_core(gen, a, 40);
  set_thread_count(4);
  const auto threaded = generate_core(gen, b, 40);
  set_thread_count(1);
  EXPECT_EQ(serial, threaded);
}

TEST(Generator, MnistCoreMeanMatchesTrainingMean) {
  if (testing::mnist_dir().empty()) GTEST_SKIP() << "MNIST not available";
  const auto& mnist = testing::mnist_train();
  std::vector<ImageTensor> cores;
  for (int i = 0; i < 3000; ++i) cores.push_back(box_downsample(pad_center(mnist.images[i], 32, 32), 2));
  EmOptions em;
  em.seed = 1;
  const CoreGenerator gen = train_core(cores, 4, 20, em);

  Rng rng(2);
  const auto generated = generate_core(gen, rng, 1000);
  double worst = 0.0;
  for (int p = 0; p < 256; ++p) {
    double real = 0.0, fake = 0.0;
    for (const auto& c : cores) real += c.data()[p];
    for (const auto& g : generated) fake += g.data()[p];
    worst = std::max(worst, std::abs(real / cores.size() - fake / generated.size()));
  }
  EXPECT_LT(worst, 0.1);
}

TEST(Generator, RejectsUntrainedAndBadInput) {
  CoreGenerator empty;
  Rng rng(0);
  EXPECT_THROW(generate_core(empty, rng, 1), InvalidState);
  EXPECT_THROW(train_core(std::vector<ImageTensor>{}, 2, 1), InvalidInput);
  EXPECT_THROW(train_core(std::vector<ImageTensor>{testing::random_image(6, 6, 1, 0)}, 2, 1), InvalidInput);
}

}  // namespace
}  // namespace pager
