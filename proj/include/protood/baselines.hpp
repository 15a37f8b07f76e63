#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "protood/features.hpp"
#include "protood/tensor.hpp"

namespace protood {

// Logit- and feature-based reference scorers. All return one score per row,
// oriented so that higher means more in-distribution.

/// Maximum softmax probability.
std::vector<double> msp(const Matrix<double>& logits);

std::vector<double> max_logit(const Matrix<double>& logits);

/// T * logsumexp(logits / T), the negative free energy.
std::vector<double> energy(const Matrix<double>& logits, double temperature = 1.0);

/// Class-conditional Gaussians with one shared covariance.
struct MahalanobisModel {
  Matrix<double> class_means;       // (K, C)
  Matrix<double> shared_precision;  // (C, C), inverse of the shrunk covariance
  Matrix<double> whitening;         // (C, C) lower triangular, W^T W = precision
  double shrinkage_lambda = 0.0;
};

/// Fits means and the pooled within-class covariance (divided by N - K),
/// shrunk by lambda = 1e-3 * trace / C before inversion.
MahalanobisModel fit_mahalanobis(const PooledBatch& features,
                                 std::span<const std::int64_t> labels,
                                 std::size_t num_classes);

/// -min_c (z - mu_c)^T precision (z - mu_c).
std::vector<double> mahalanobis_score(const MahalanobisModel& model,
                                      const PooledBatch& features,
                                      unsigned threads = 1);

/// CSV with `sample_index,score`.
void write_baseline_csv(std::span<const double> scores, std::ostream& out);

}  // namespace protood
