#include "protood/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Dense>

#include "protood/format.hpp"
#include "protood/parallel.hpp"

namespace protood {

namespace {

void require_finite(const Matrix<double>& logits) {
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    for (double v : logits.row(n)) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite logit in row " + std::to_string(n));
      }
    }
  }
}

void require_classes(const Matrix<double>& logits, std::size_t min_k) {
  if (logits.cols() < min_k) {
    throw ConfigError("logits need at least " + std::to_string(min_k) +
                      " classes, got " + std::to_string(logits.cols()));
  }
}

double row_max(std::span<const double> row) {
  return *std::max_element(row.begin(), row.end());
}

}  // namespace

std::vector<double> msp(const Matrix<double>& logits) {
  require_classes(logits, 2);
  require_finite(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    const double m = row_max(row);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - m);
    // The top class contributes exp(0) = 1 to the numerator.
    out[n] = 1.0 / denom;
  }
  return out;
}

std::vector<double> max_logit(const Matrix<double>& logits) {
  require_classes(logits, 1);
  require_finite(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) out[n] = row_max(logits.row(n));
  return out;
}

std::vector<double> energy(const Matrix<double>& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("energy temperature must be > 0");
  }
  require_classes(logits, 1);
  require_finite(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    const double m = row_max(row) / temperature;
    double sum = 0.0;
    for (double v : row) sum += std::exp(v / temperature - m);
    out[n] = temperature * (m + std::log(sum));
  }
  return out;
}

MahalanobisModel fit_mahalanobis(const PooledBatch& features,
                                 std::span<const std::int64_t> labels,
                                 std::size_t num_classes) {
  const auto& f = features.features;
  const std::size_t n = f.rows(), c = f.cols();
  if (labels.size() != n) {
    throw ShapeError("labels and features disagree on sample count");
  }
  if (num_classes < 1) throw ConfigError("Mahalanobis needs at least one class");
  if (n <= num_classes) {
    throw ConfigError("Mahalanobis needs more samples (" + std::to_string(n) +
                      ") than classes (" + std::to_string(num_classes) + ")");
  }

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, c);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range");
    }
    for (std::size_t k = 0; k < c; ++k) {
      const double v = f(i, k);
      if (!std::isfinite(v)) throw DataError("non-finite feature");
      means(y, k) += v;
    }
    ++counts[y];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      throw EmptyClassError("class " + std::to_string(k) + " has no samples");
    }
    means.row(k) /= static_cast<double>(counts[k]);
  }

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(c, c);
  Eigen::VectorXd d(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) d(k) = f(i, k) - means(labels[i], k);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(d);
  }
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  cov /= static_cast<double>(n - num_classes);

  const double lambda = 1e-3 * cov.trace() / static_cast<double>(c);
  cov.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || !(lambda > 0.0)) {
    throw SingularCovariance("shrunk covariance is not positive definite");
  }
  const Eigen::MatrixXd whitening = llt.matrixL().solve(Eigen::MatrixXd::Identity(c, c));
  Eigen::MatrixXd precision = whitening.transpose() * whitening;
  precision = 0.5 * (precision + precision.transpose()).eval();
  if (!precision.allFinite()) {
    throw SingularCovariance("precision matrix is not finite");
  }

  MahalanobisModel model;
  model.class_means = Matrix<double>(num_classes, c);
  model.shared_precision = Matrix<double>(c, c);
  model.whitening = Matrix<double>(c, c);
  for (std::size_t i = 0; i < num_classes; ++i) {
    for (std::size_t k = 0; k < c; ++k) model.class_means(i, k) = means(i, k);
  }
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      model.shared_precision(i, k) = precision(i, k);
      model.whitening(i, k) = whitening(i, k);
    }
  }
  model.shrinkage_lambda = lambda;
  return model;
}

std::vector<double> mahalanobis_score(const MahalanobisModel& model,
                                      const PooledBatch& features,
                                      unsigned threads) {
  const auto& f = features.features;
  const std::size_t c = model.class_means.cols();
  if (f.cols() != c) {
    throw ShapeError("features have width " + std::to_string(f.cols()) +
                     ", Mahalanobis model expects " + std::to_string(c));
  }
  std::vector<double> out(f.rows());
  parallel_for(f.rows(), threads, [&](std::size_t n) {
    const auto z = f.row(n);
    std::vector<double> d(c);
    double best = INFINITY;
    for (std::size_t k = 0; k < model.class_means.rows(); ++k) {
      const auto mu = model.class_means.row(k);
      for (std::size_t j = 0; j < c; ++j) d[j] = static_cast<double>(z[j]) - mu[j];
      // |W d|^2 with W lower triangular; never negative.
      double q = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        const auto w = model.whitening.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) s += w[j] * d[j];
        q += s * s;
      }
      best = std::min(best, q);
    }
    out[n] = best == 0.0 ? 0.0 : -best;
  });
  return out;
}

void write_baseline_csv(std::span<const double> scores, std::ostream& out) {
  out << "sample_index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << i << ',' << format_g9(scores[i]) << '\n';
  }
}

}  // namespace protood
