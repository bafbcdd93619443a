#pragma once

// Diagonal-covariance Gaussian mixtures: EM fitting, density, hard
// classification and ancestral sampling.

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "pager/error.hpp"
#include "pager/kmeans.hpp"
#include "pager/parallel.hpp"
#include "pager/rng.hpp"
#include "pager/saab.hpp"

namespace pager {

struct EmOptions {
  int max_iters = 200;
  double tol = 1e-5;         // relative mean log-likelihood improvement
  std::uint64_t seed = 0;
  double var_floor = 1e-6;   // relative to the mean per-dimension data variance
  int restarts = 3;
  int kmeans_iters = 10;
  std::size_t max_samples = 0;  // 0: use every row; otherwise a seeded subsample
};

struct EmReport {
  std::vector<double> log_likelihood;  // mean log-likelihood per iteration, chosen restart
  int restart = 0;
  int reseeded = 0;
};

/// K-component mixture with diagonal covariances. Parameters are stored at
/// float precision (the archive precision); derived quantities are
/// recomputed in double on construction so a saved and reloaded model
/// behaves bit-identically.
class Gmm {
 public:
  Gmm() = default;

  Gmm(int components, int dim, std::vector<float> weights, std::vector<float> means, std::vector<float> variances)
      : k_(components), n_(dim), raw_weights_(std::move(weights)), means_(std::move(means)),
        variances_(std::move(variances)) {
    detail::require(k_ >= 1 && n_ >= 1, "gmm: need at least one component and one dimension");
    detail::require(raw_weights_.size() == static_cast<std::size_t>(k_) &&
                        means_.size() == static_cast<std::size_t>(k_) * n_ &&
                        variances_.size() == static_cast<std::size_t>(k_) * n_,
                    "gmm: parameter array sizes do not match K x n");
    double total = 0.0;
    for (float w : raw_weights_) {
      detail::require(std::isfinite(w) && w >= 0.0f, "gmm: weights must be finite and non-negative");
      total += w;
    }
    detail::require(total > 0.0, "gmm: weights sum to zero");
    for (float v : variances_) detail::require(std::isfinite(v) && v > 0.0f, "gmm: variances must be positive");
    for (float m : means_) detail::require(std::isfinite(m), "gmm: means must be finite");

    weights_.resize(k_);
    log_weights_.resize(k_);
    cumulative_.resize(k_);
    double running = 0.0;
    for (int k = 0; k < k_; ++k) {
      weights_[k] = raw_weights_[k] / total;
      log_weights_[k] = weights_[k] > 0 ? std::log(weights_[k]) : -std::numeric_limits<double>::infinity();
      cumulative_[k] = (running += weights_[k]);
    }
    inv_var_.resize(means_.size());
    log_norm_.assign(k_, -0.5 * n_ * std::log(2.0 * std::numbers::pi));
    for (int k = 0; k < k_; ++k)
      for (int j = 0; j < n_; ++j) {
        const double v = variances_[idx(k, j)];
        inv_var_[idx(k, j)] = 1.0 / v;
        log_norm_[k] -= 0.5 * std::log(v);
      }
  }

  int components() const noexcept { return k_; }
  int dim() const noexcept { return n_; }
  bool empty() const noexcept { return k_ == 0; }

  double weight(int k) const { return weights_[k]; }
  double log_weight(int k) const { return log_weights_[k]; }
  float mean(int k, int j) const { return means_[idx(k, j)]; }
  float variance(int k, int j) const { return variances_[idx(k, j)]; }

  const std::vector<float>& raw_weights() const noexcept { return raw_weights_; }
  const std::vector<float>& means() const noexcept { return means_; }
  const std::vector<float>& variances() const noexcept { return variances_; }
  const std::vector<double>& cumulative_weights() const noexcept { return cumulative_; }

  /// ln N(x; mu_k, Sigma_k)
  double log_component(int k, const double* x) const {
    double q = 0.0;
    const std::size_t base = static_cast<std::size_t>(k) * n_;
    for (int j = 0; j < n_; ++j) {
      const double d = x[j] - means_[base + j];
      q += d * d * inv_var_[base + j];
    }
    return log_norm_[k] - 0.5 * q;
  }

  friend bool operator==(const Gmm& a, const Gmm& b) {
    return a.k_ == b.k_ && a.n_ == b.n_ && a.raw_weights_ == b.raw_weights_ && a.means_ == b.means_ &&
           a.variances_ == b.variances_;
  }

 private:
  std::size_t idx(int k, int j) const noexcept { return static_cast<std::size_t>(k) * n_ + j; }

  int k_ = 0;
  int n_ = 0;
  std::vector<float> raw_weights_, means_, variances_;
  std::vector<double> weights_, log_weights_, cumulative_, inv_var_, log_norm_;
};

namespace detail {

inline void check_dim(const Gmm& model, Eigen::Index n) {
  if (model.empty()) throw InvalidState("gmm: model is not trained");
  require(n == model.dim(), "gmm: vector length does not match the model dimension");
}

inline double log_sum_exp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace detail

/// ln sum_k P_k N(x; mu_k, Sigma_k), via log-sum-exp.
inline double log_pdf(const Gmm& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  detail::check_dim(model, x.size());
  std::vector<double> terms(model.components());
  for (int k = 0; k < model.components(); ++k) terms[k] = model.log_weight(k) + model.log_component(k, x.data());
  return detail::log_sum_exp(terms.data(), model.components());
}

/// argmax_k of ln N_k(x), plus ln P_k when `weighted`. Ties go to the
/// lowest index.
inline int classify(const Gmm& model, const Eigen::Ref<const Eigen::VectorXd>& x, bool weighted = true) {
  detail::check_dim(model, x.size());
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.components(); ++k) {
    const double s = model.log_component(k, x.data()) + (weighted ? model.log_weight(k) : 0.0);
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

inline std::vector<int> classify_all(const Gmm& model, const DataMatrix& data, bool weighted = true) {
  std::vector<int> labels(static_cast<std::size_t>(data.rows()));
  parallel_for(labels.size(), 64, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) labels[i] = classify(model, data.row(static_cast<Eigen::Index>(i)).transpose(), weighted);
  });
  return labels;
}

/// Draws a component from the weights, then a point from that Gaussian.
inline Eigen::VectorXd sample(const Gmm& model, Rng& rng) {
  if (model.empty()) throw InvalidState("gmm: model is not trained");
  const int k = static_cast<int>(rng.categorical(model.cumulative_weights()));
  Eigen::VectorXd x(model.dim());
  for (int j = 0; j < model.dim(); ++j) x(j) = model.mean(k, j) + std::sqrt(static_cast<double>(model.variance(k, j))) * rng.normal();
  return x;
}

// ---------------------------------------------------------------------------
// EM
// ---------------------------------------------------------------------------

namespace detail {

struct EmState {
  Eigen::VectorXd weights;  // K
  DataMatrix means;         // K x n
  DataMatrix variances;     // K x n
};

/// Per-sample, per-component ln P_k + ln N_k (N x K).
inline Eigen::MatrixXd weighted_log_densities(const DataMatrix& x, const DataMatrix& x2, const EmState& s) {
  const Eigen::Index k = s.means.rows(), n = x.cols();
  const DataMatrix inv = s.variances.cwiseInverse();
  const DataMatrix mu_inv = s.means.cwiseProduct(inv);
  Eigen::VectorXd constant(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    double w = s.weights(c) > 0 ? std::log(s.weights(c)) : -std::numeric_limits<double>::infinity();
    constant(c) = w - 0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) +
                             s.variances.row(c).array().log().sum() + s.means.row(c).dot(mu_inv.row(c)));
  }
  Eigen::MatrixXd out = x * mu_inv.transpose();
  out.noalias() -= 0.5 * (x2 * inv.transpose());
  out.rowwise() += constant.transpose();
  return out;
}

inline DataMatrix subsample_rows(const DataMatrix& data, std::size_t max_rows, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(data.rows());
  if (max_rows == 0 || n <= max_rows) return data;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < max_rows; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  order.resize(max_rows);
  std::sort(order.begin(), order.end());
  DataMatrix out(static_cast<Eigen::Index>(max_rows), data.cols());
  for (std::size_t i = 0; i < max_rows; ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(order[i]));
  return out;
}

}  // namespace detail

/// Fits a K-component diagonal GMM by EM from k-means++ starts, keeping the
/// restart with the best final mean log-likelihood.
inline Gmm fit_em(const DataMatrix& input, int components, const EmOptions& opts = {}, EmReport* report = nullptr) {
  detail::require(components >= 1, "fit_em: K must be >= 1");
  detail::require(input.cols() >= 1, "fit_em: data dimension must be >= 1");
  detail::require(input.rows() >= components, "fit_em: fewer samples than components");
  detail::require(input.allFinite(), "fit_em: data contains NaN or Inf");

  const DataMatrix data = detail::subsample_rows(input, opts.max_samples, stream_seed(opts.seed, 0x5355, 0));
  const DataMatrix sq = data.cwiseAbs2();
  const Eigen::Index n = data.rows(), dim = data.cols();
  const Eigen::RowVectorXd global_mean = data.colwise().mean();
  const Eigen::RowVectorXd global_var = (sq.colwise().mean() - global_mean.cwiseAbs2()).cwiseMax(0.0);
  const double floor = std::max(opts.var_floor * global_var.mean(), 1e-12);

  detail::EmState best;
  EmReport best_report;
  double best_ll = -std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    Rng rng(stream_seed(opts.seed, 0x454d, static_cast<std::uint64_t>(restart)));
    const KMeansResult init = lloyd(data, kmeans_plus_plus(data, components, rng), opts.kmeans_iters);

    detail::EmState s{Eigen::VectorXd::Zero(components), init.centers, DataMatrix::Zero(components, dim)};
    {
      DataMatrix sum2 = DataMatrix::Zero(components, dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        s.weights(init.labels[i]) += 1.0;
        sum2.row(init.labels[i]) += (data.row(i) - s.means.row(init.labels[i])).cwiseAbs2();
      }
      for (int c = 0; c < components; ++c) {
        if (s.weights(c) > 1.0) {
          s.variances.row(c) = (sum2.row(c) / s.weights(c)).cwiseMax(floor);
        } else {
          s.variances.row(c) = global_var.cwiseMax(floor);
        }
        s.weights(c) = std::max(s.weights(c), 1.0) / static_cast<double>(n);
      }
      s.weights /= s.weights.sum();
    }

    EmReport rep;
    rep.restart = restart;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_iters; ++it) {
      // E-step
      Eigen::MatrixXd resp = detail::weighted_log_densities(data, sq, s);
      Eigen::VectorXd row_ll(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = resp.row(i).maxCoeff();
        const double lse = m + std::log((resp.row(i).array() - m).exp().sum());
        row_ll(i) = lse;
        resp.row(i) = (resp.row(i).array() - lse).exp();
      }
      const double ll = row_ll.mean();
      rep.log_likelihood.push_back(ll);
      if (it > 0 && ll - prev <= opts.tol * std::max(std::abs(prev), 1e-12)) break;
      prev = ll;
      if (it + 1 == opts.max_iters) break;

      // M-step
      const Eigen::VectorXd nk = resp.colwise().sum().transpose();
      const DataMatrix sx = resp.transpose() * data;
      const DataMatrix sx2 = resp.transpose() * sq;
      std::vector<bool> used(static_cast<std::size_t>(n), false);
      for (int c = 0; c < components; ++c) {
        if (nk(c) <= 1e-10 * static_cast<double>(n)) {
          Eigen::Index worst = -1;
          for (Eigen::Index i = 0; i < n; ++i)
            if (!used[i] && (worst < 0 || row_ll(i) < row_ll(worst))) worst = i;
          used[worst] = true;
          s.means.row(c) = data.row(worst);
          s.variances.row(c) = global_var.cwiseMax(floor);
          s.weights(c) = 1.0 / static_cast<double>(n);
          ++rep.reseeded;
          continue;
        }
        s.weights(c) = nk(c) / static_cast<double>(n);
        s.means.row(c) = sx.row(c) / nk(c);
        s.variances.row(c) = (sx2.row(c) / nk(c) - s.means.row(c).cwiseAbs2()).cwiseMax(floor);
      }
      s.weights /= s.weights.sum();
    }
    if (rep.reseeded > 0) spdlog::debug("gmm: reseeded {} empty component(s)", rep.reseeded);
    const double final_ll = rep.log_likelihood.back();
    if (final_ll > best_ll) {
      best_ll = final_ll;
      best = std::move(s);
      best_report = std::move(rep);
    }
  }

  std::vector<float> w(components), mu(static_cast<std::size_t>(components) * dim), var(mu.size());
  for (int c = 0; c < components; ++c) {
    w[c] = static_cast<float>(best.weights(c));
    for (Eigen::Index j = 0; j < dim; ++j) {
      mu[c * dim + j] = static_cast<float>(best.means(c, j));
      var[c * dim + j] = std::max(static_cast<float>(best.variances(c, j)), std::numeric_limits<float>::min());
    }
  }
  if (report) *report = std::move(best_report);
  return Gmm(components, static_cast<int>(dim), std::move(w), std::move(mu), std::move(var));
}

}  // namespace pager
