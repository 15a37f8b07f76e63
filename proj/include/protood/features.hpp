#pragma once

#include <string>

#include "protood/manifest.hpp"
#include "protood/tensor.hpp"

namespace protood {

/// Rows whose L2 norm falls below this are treated as all-zero.
inline constexpr double kDegenerateNorm = 1e-12;

/// Per-layer descriptors of a batch, one row per sample.
struct PooledBatch {
  std::string layer_name;
  Matrix<float> features;
  bool normalized = false;
  std::size_t degenerate_rows = 0;  // zero rows seen by l2_normalize
};

/// Spatial mean of an (N, C, H, W) activation tensor. Sums run in double and
/// the result is stored as float.
PooledBatch global_avg_pool(const Tensor& raw, std::string layer_name = {},
                            unsigned threads = 1);

/// Wraps an (N, C) tensor as an unnormalized batch.
PooledBatch as_pooled(const Tensor& pooled, std::string layer_name = {});

/// Divides each row by its L2 norm. Degenerate rows become exact zeros and
/// are counted instead of raising.
PooledBatch l2_normalize(PooledBatch batch, unsigned threads = 1);

/// GAP (raw4d only) followed by L2 normalization.
PooledBatch prepare_layer(const LayerEntry& entry, const Tensor& tensor,
                          unsigned threads = 1);

/// Same as prepare_layer without the normalization step.
PooledBatch pool_layer(const LayerEntry& entry, const Tensor& tensor,
                       unsigned threads = 1);

}  // namespace protood
