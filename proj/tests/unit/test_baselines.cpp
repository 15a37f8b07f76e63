#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "protood/baselines.hpp"
#include "protood/metrics.hpp"
#include "protood/random.hpp"
#include "test_support.hpp"

namespace protood {
namespace {

Matrix<double> rows(std::size_t n, std::size_t k, std::vector<double> v) {
  return Matrix<double>(n, k, std::move(v));
}

Matrix<double> random_logits(Rng& rng, std::size_t n, std::size_t k, double scale) {
  Matrix<double> m(n, k);
  for (auto& v : m.data()) v = scale * (2 * rng.uniform() - 1);
  return m;
}

PooledBatch pooled(std::size_t n, std::size_t c, std::vector<float> v) {
  return {"penultimate", Matrix<float>(n, c, std::move(v)), false, 0};
}

TEST(Msp, DominantClass) {
  const double expect = 1.0 / (1.0 + 2.0 * std::exp(-10.0));
  EXPECT_NEAR(msp(rows(1, 3, {10, 0, 0}))[0], expect, 1e-15);
  EXPECT_GT(msp(rows(1, 3, {10, 0, 0}))[0], 0.9999);
}

TEST(Msp, UniformLogitsGiveOneOverK) {
  EXPECT_EQ(msp(rows(1, 3, {1, 1, 1}))[0], 1.0 / 3.0);
  EXPECT_EQ(msp(rows(1, 4, {-7, -7, -7, -7}))[0], 0.25);
}

TEST(Msp, ShiftInvariantAndBounded) {
  Rng rng(1);
  auto logits = random_logits(rng, 200, 5, 20);
  auto shifted = logits;
  for (auto& v : shifted.data()) v += 100.0;
  const auto a = msp(logits), b = msp(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-9);
    EXPECT_GT(a[i], 0.0);
    EXPECT_LE(a[i], 1.0);
  }
}

TEST(Msp, Errors) {
  EXPECT_THROW(msp(rows(1, 1, {3})), ConfigError);
  EXPECT_THROW(msp(rows(1, 2, {std::nan(""), 0})), DataError);
  EXPECT_THROW(max_logit(rows(1, 2, {INFINITY, 0})), DataError);
  EXPECT_THROW(energy(rows(1, 2, {0, -INFINITY})), DataError);
}

TEST(MaxLogit, Examples) {
  EXPECT_EQ(max_logit(rows(1, 2, {3.0, -1.0}))[0], 3.0);
  EXPECT_EQ(max_logit(rows(1, 4, {2.5, 2.5, 2.5, 2.5}))[0], 2.5);
  Rng rng(2);
  const auto logits = random_logits(rng, 50, 6, 5);
  const auto s = max_logit(logits);
  for (std::size_t n = 0; n < 50; ++n) {
    double best = -INFINITY;
    for (std::size_t k = 0; k < 6; ++k) best = std::max(best, logits(n, k));
    EXPECT_EQ(s[n], best);
  }
}

TEST(Energy, ClosedForms) {
  EXPECT_NEAR(energy(rows(1, 2, {0, 0}))[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(energy(rows(1, 3, {42, -1e9, -1e9}))[0], 42.0, 1e-6);
  EXPECT_NEAR(energy(rows(1, 2, {0, 0}), 2.0)[0], 2.0 * std::log(2.0), 1e-15);
}

TEST(Energy, BoundsMaxLogitAndApproachesItAsTemperatureVanishes) {
  Rng rng(3);
  const auto logits = random_logits(rng, 300, 7, 10);
  const auto e = energy(logits), cold = energy(logits, 1e-3), m = max_logit(logits);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_GE(e[i], m[i]);
    EXPECT_NEAR(cold[i], m[i], 1e-2);
  }
}

TEST(Energy, RejectsNonPositiveTemperature) {
  EXPECT_THROW(energy(rows(1, 2, {0, 0}), 0.0), ConfigError);
  EXPECT_THROW(energy(rows(1, 2, {0, 0}), -1.0), ConfigError);
}

double naive_quadratic_min(const MahalanobisModel& m, std::span<const float> z) {
  const std::size_t c = m.class_means.cols();
  double best = INFINITY;
  for (std::size_t k = 0; k < m.class_means.rows(); ++k) {
    double q = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        q += (z[i] - m.class_means(k, i)) * m.shared_precision(i, j) *
             (z[j] - m.class_means(k, j));
      }
    }
    best = std::min(best, q);
  }
  return best;
}

TEST(Mahalanobis, IdentityModelAtOrigin) {
  MahalanobisModel m;
  m.class_means = rows(2, 2, {1, 0, 0, 1});
  m.shared_precision = rows(2, 2, {1, 0, 0, 1});
  m.whitening = rows(2, 2, {1, 0, 0, 1});
  const auto s = mahalanobis_score(m, pooled(2, 2, {0, 0, 1, 0}));
  EXPECT_NEAR(s[0], -1.0, 1e-15);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_FALSE(std::signbit(s[1]));
}

TEST(Mahalanobis, MatchesBruteForceQuadraticForm) {
  Rng rng(4);
  for (int iter = 0; iter < 30; ++iter) {
    const std::size_t c = 2 + rng.below(5), k = 1 + rng.below(3);
    const std::size_t n = k + 3 + rng.below(20);
    std::vector<std::int64_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int64_t>(i % k);
    const auto train = pooled(n, c, testing::uniform_floats(rng, n * c, -2, 2));
    const auto model = fit_mahalanobis(train, labels, k);
    const auto test = pooled(15, c, testing::uniform_floats(rng, 15 * c, -3, 3));
    const auto s = mahalanobis_score(model, test, 3);
    for (std::size_t i = 0; i < 15; ++i) {
      EXPECT_NEAR(s[i], -naive_quadratic_min(model, test.features.row(i)), 1e-8);
      EXPECT_LE(s[i], 0.0);
    }
  }
}

TEST(Mahalanobis, PrecisionInvertsShrunkPooledCovariance) {
  Rng rng(5);
  const std::size_t n = 40, c = 4, k = 2;
  std::vector<std::int64_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int64_t>(i % k);
  const auto train = pooled(n, c, testing::uniform_floats(rng, n * c, -1, 1));
  const auto model = fit_mahalanobis(train, labels, k);

  std::vector<std::vector<double>> mean(k, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[labels[i]][j] += double(train.features(i, j)) / double(n / k);
  }
  std::vector<double> cov(c * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < c; ++a) {
      for (std::size_t b = 0; b < c; ++b) {
        cov[a * c + b] += (double(train.features(i, a)) - mean[labels[i]][a]) *
                          (double(train.features(i, b)) - mean[labels[i]][b]) / double(n - k);
      }
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < c; ++a) trace += cov[a * c + a];
  EXPECT_NEAR(model.shrinkage_lambda, 1e-3 * trace / c, 1e-12);
  for (std::size_t a = 0; a < c; ++a) {
    cov[a * c + a] += model.shrinkage_lambda;
    for (std::size_t j = 0; j < c; ++j) EXPECT_NEAR(model.class_means(0, j), mean[0][j], 1e-12);
  }
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) {
      double prod = 0.0;
      for (std::size_t j = 0; j < c; ++j) prod += cov[a * c + j] * model.shared_precision(j, b);
      EXPECT_NEAR(prod, a == b ? 1.0 : 0.0, 1e-9);
      EXPECT_NEAR(model.shared_precision(a, b), model.shared_precision(b, a), 1e-8);
    }
  }
}

TEST(Mahalanobis, RecoversGaussianMeans) {
  Rng rng(6);
  const std::size_t n_per = 500, c = 3;
  const std::vector<std::vector<double>> truth{{2, 0, -1}, {-2, 1, 0.5}};
  std::vector<float> v;
  std::vector<std::int64_t> labels;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < n_per; ++i) {
      for (std::size_t j = 0; j < c; ++j) v.push_back(float(truth[k][j] + rng.normal()));
      labels.push_back(static_cast<std::int64_t>(k));
    }
  }
  const auto model = fit_mahalanobis(pooled(2 * n_per, c, v), labels, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t j = 0; j < c; ++j) {
      EXPECT_NEAR(model.class_means(k, j), truth[k][j], 3.0 / std::sqrt(double(n_per)));
    }
  }
}

TEST(Mahalanobis, ZeroVarianceDimensionStaysFinite) {
  const std::vector<std::int64_t> labels{0, 0, 1, 1};
  const auto model = fit_mahalanobis(pooled(4, 2, {1, 5, 2, 5, -1, 5, -3, 5}), labels, 2);
  for (double p : model.shared_precision.data()) EXPECT_TRUE(std::isfinite(p));
  const auto s = mahalanobis_score(model, pooled(1, 2, {0, 6}));
  EXPECT_TRUE(std::isfinite(s[0]));
  EXPECT_LT(s[0], 0.0);
}

TEST(Mahalanobis, SingleClassIsOneQuadraticForm) {
  Rng rng(7);
  const std::vector<std::int64_t> labels(10, 0);
  const auto train = pooled(10, 3, testing::uniform_floats(rng, 30, -1, 1));
  const auto model = fit_mahalanobis(train, labels, 1);
  ASSERT_EQ(model.class_means.rows(), 1u);
  const auto test = pooled(4, 3, testing::uniform_floats(rng, 12, -1, 1));
  const auto s = mahalanobis_score(model, test);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s[i], -naive_quadratic_min(model, test.features.row(i)), 1e-8);
  }
}

TEST(Mahalanobis, ScoreZeroOnlyAtAMean) {
  const std::vector<std::int64_t> labels{0, 0, 1, 1};
  const auto model = fit_mahalanobis(pooled(4, 2, {0, 0, 2, 2, 4, 0, 6, 1}), labels, 2);
  const auto s = mahalanobis_score(model, pooled(2, 2, {1, 1, 1, 1.001f}));
  EXPECT_EQ(s[0], 0.0);
  EXPECT_LT(s[1], 0.0);
}

TEST(Mahalanobis, Errors) {
  const std::vector<std::int64_t> labels{0, 0, 1, 1};
  const auto train = pooled(4, 2, {0, 0, 2, 2, 4, 0, 6, 1});
  EXPECT_THROW(fit_mahalanobis(train, labels, 3), EmptyClassError);
  EXPECT_THROW(fit_mahalanobis(pooled(2, 2, {0, 0, 1, 1}), std::vector<std::int64_t>{0, 1}, 2),
               ConfigError);
  const auto model = fit_mahalanobis(train, labels, 2);
  EXPECT_THROW(mahalanobis_score(model, pooled(1, 3, {0, 0, 0})), ShapeError);
  EXPECT_THROW(fit_mahalanobis(pooled(4, 2, std::vector<float>(8, 0.0f)), labels, 2),
               SingularCovariance);
}

TEST(Mahalanobis, SeparatesGaussianClustersFromBackground) {
  Rng rng(8);
  const std::size_t c = 8, k = 4, n = 400;
  std::vector<std::vector<double>> mu(k, std::vector<double>(c));
  for (auto& m : mu) {
    for (auto& x : m) x = 4 * rng.normal();
  }
  std::vector<float> train, id, ood;
  std::vector<std::int64_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      train.push_back(float(mu[i % k][j] + rng.normal()));
      id.push_back(float(mu[(i + 1) % k][j] + rng.normal()));
      ood.push_back(float(4 * rng.normal()));
    }
    labels.push_back(static_cast<std::int64_t>(i % k));
  }
  const auto model = fit_mahalanobis(pooled(n, c, train), labels, k);
  EXPECT_GE(auroc(mahalanobis_score(model, pooled(n, c, id)),
                  mahalanobis_score(model, pooled(n, c, ood))),
            0.95);
}

TEST(BaselineCsv, Format) {
  std::ostringstream out;
  const std::vector<double> s{0.25, -1.0 / 3.0};
  write_baseline_csv(s, out);
  EXPECT_EQ(out.str(), "sample_index,score\n0,0.25\n1,-0.333333333\n");
}

}  // namespace
}  // namespace protood
