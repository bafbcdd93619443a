#include <gtest/gtest.h>

#include <sstream>

#include "pager/eval.hpp"
#include "test_helpers.hpp"

namespace pager {
namespace {

DataMatrix gaussian_samples(Eigen::Index n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& mix, std::uint64_t seed) {
  Rng rng(seed);
  DataMatrix x(n, mean.size());
  Eigen::VectorXd z(mix.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    x.row(i) = (mean + mix * z).transpose();
  }
  return x;
}

// 2-D oracle: sample moments computed directly, and tr((A B)^{1/2}) from the
// eigenvalues of the 2x2 product: (sqrt(l1) + sqrt(l2))^2 = tr + 2 sqrt(det).
double frechet_2d_oracle(const DataMatrix& a, const DataMatrix& b) {
  auto moments = [](const DataMatrix& x, Eigen::Vector2d& mu, Eigen::Matrix2d& cov) {
    mu.setZero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) mu += x.row(i).transpose();
    mu /= static_cast<double>(x.rows());
    cov.setZero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::Vector2d d = x.row(i).transpose() - mu;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(x.rows() - 1);
  };
  Eigen::Vector2d ma, mb;
  Eigen::Matrix2d ca, cb;
  moments(a, ma, ca);
  moments(b, mb, cb);
  const Eigen::Matrix2d p = ca * cb;
  const double tr_sqrt = std::sqrt(p.trace() + 2.0 * std::sqrt(p.determinant()));
  return (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
}

TEST(Frechet, OneDimensionalGaussians) {
  const auto a = gaussian_samples(10000, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 1);
  const auto b = gaussian_samples(10000, Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Identity(1, 1), 2);
  EXPECT_NEAR(frechet_distance(a, b), 9.0, 0.3);
}

TEST(Frechet, MatchesTwoDimensionalOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Eigen::MatrixXd ma(2, 2), mb(2, 2);
    for (int i = 0; i < 4; ++i) {
      ma(i / 2, i % 2) = rng.normal();
      mb(i / 2, i % 2) = rng.normal();
    }
    const auto a = gaussian_samples(500, Eigen::Vector2d(rng.normal(), 0.0), ma, 10 + seed);
    const auto b = gaussian_samples(700, Eigen::Vector2d(0.0, rng.normal()), mb, 50 + seed);
    EXPECT_NEAR(frechet_distance(a, b), frechet_2d_oracle(a, b), 1e-9);
  }
}

TEST(Frechet, IdentityAndSymmetry) {
  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(12, 6);
  Rng rng(3);
  for (Eigen::Index i = 0; i < mix.size(); ++i) mix(i) = rng.normal();
  const auto a = gaussian_samples(300, Eigen::VectorXd::Zero(12), mix, 4);  // rank-deficient covariance
  const auto b = gaussian_samples(200, Eigen::VectorXd::Constant(12, 0.5), Eigen::MatrixXd::Identity(12, 12), 5);
  EXPECT_LE(frechet_distance(a, a), 1e-6);
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
  EXPECT_GT(frechet_distance(a, b), 1.0);
}

TEST(Frechet, Errors) {
  const DataMatrix a = DataMatrix::Zero(5, 3), b = DataMatrix::Zero(5, 4), one = DataMatrix::Zero(1, 3);
  EXPECT_THROW(frechet_distance(a, b), InvalidInput);
  EXPECT_THROW(frechet_distance(a, one), InvalidInput);
  std::vector<ImageTensor> imgs(3, ImageTensor(4, 4, 1));
  const auto cascade = fit_cascade(std::vector<ImageTensor>{testing::random_image(4, 4, 1, 1),
                                                            testing::random_image(4, 4, 1, 2)},
                                   2);
  EXPECT_THROW(saab_frechet(imgs, std::vector<ImageTensor>(3, ImageTensor(8, 8, 1)), cascade), InvalidInput);
  EXPECT_THROW(saab_frechet(imgs, std::vector<ImageTensor>(1, ImageTensor(4, 4, 1)), cascade), InvalidInput);
}

TEST(Frechet, ReportFields) {
  std::vector<ImageTensor> a, b;
  for (int i = 0; i < 20; ++i) {
    a.push_back(testing::random_image(8, 8, 1, i));
    b.push_back(testing::random_image(8, 8, 1, 100 + i));
  }
  const auto cascade = fit_cascade(a, 3);
  const auto r = saab_frechet(a, b, cascade);
  EXPECT_EQ(r.n_real, 20u);
  EXPECT_EQ(r.n_gen, 20u);
  EXPECT_EQ(r.feature_dim, 64);
  EXPECT_EQ(r.feature_source, cascade_fingerprint(cascade));
  EXPECT_EQ(r.feature_source.rfind("saab-", 0), 0u);
  EXPECT_LE(saab_frechet(a, a, cascade).distance, 1e-6);
  EXPECT_NEAR(r.distance, saab_frechet(b, a, cascade).distance, 1e-9);
  // Orthonormal cascade: the distance equals the pixel-space one.
  const auto flat = [](const std::vector<ImageTensor>& s) {
    DataMatrix m(static_cast<Eigen::Index>(s.size()), 64);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (int j = 0; j < 64; ++j) m(static_cast<Eigen::Index>(i), j) = s[i].data()[j];
    return m;
  };
  EXPECT_NEAR(r.distance, frechet_distance(flat(a), flat(b)), 1e-6);
}

TEST(Frechet, SeparatesMnistFromNoise) {
  if (testing::mnist_dir().empty()) GTEST_SKIP() << "MNIST not available";
  const auto& set = testing::mnist_train();
  const std::vector<ImageTensor> fit(set.images.begin(), set.images.begin() + 2000),
      real(set.images.begin() + 2000, set.images.begin() + 2500),
      held(set.images.begin() + 2500, set.images.begin() + 3000);
  const auto cascade = fit_proxy_cascade(fit);
  EXPECT_EQ(cascade.width, 32);
  std::vector<ImageTensor> noise;
  for (int i = 0; i < 500; ++i) noise.push_back(testing::random_image(28, 28, 1, 900 + i));
  const auto rp = pad_all(real, 32);
  const double d_noise = saab_frechet(rp, pad_all(noise, 32), cascade).distance;
  const double d_held = saab_frechet(rp, pad_all(held, 32), cascade).distance;
  EXPECT_GE(d_noise, 5.0 * d_held) << d_noise << " vs " << d_held;
}

TEST(Sweep, SingleSizeIsOneTrainingRun) {
  std::vector<ImageTensor> images;
  for (int i = 0; i < 30; ++i) images.push_back(testing::soft_disc_image(8, 1.5 + 0.05 * i, 0.6));
  PagerConfig cfg;
  cfg.core_side = 4;
  cfg.core_components = 2;
  cfg.enhancer.dc_components = 2;
  cfg.enhancer.ac_components = 1;
  cfg.booster.feature_dims = 4;
  cfg.seed = 5;
  const auto cascade = fit_cascade(images, 3);
  const std::vector<std::size_t> sizes = {20};
  SweepOptions opts;
  opts.generated = 10;
  opts.generation_seed = 3;
  const auto rows = training_size_sweep(images, {}, sizes, cfg, images, cascade, opts);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].size, 20u);
  EXPECT_EQ(rows[0].seed, 5u);
  EXPECT_GE(rows[0].train_seconds, 0.0);

  const auto model = train(std::span<const ImageTensor>(images).first(20), {}, cfg);
  Rng rng(3);
  const auto gen = generate(model, rng, 10);
  EXPECT_EQ(rows[0].proxy_frechet, saab_frechet(images, gen, cascade).distance);

  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "size,proxy_frechet,train_seconds,seed");
  EXPECT_EQ(text.substr(text.find('\n') + 1, 3), "20,");
  const std::vector<std::size_t> too_big = {31};
  EXPECT_THROW(training_size_sweep(images, {}, too_big, cfg, images, cascade, opts), InvalidInput);
}

}  // namespace
}  // namespace pager
