#include "protood/features.hpp"

#include <atomic>
#include <cmath>

#include "protood/parallel.hpp"

namespace protood {

namespace {

template <typename T>
void pool_rows(std::span<const T> raw, std::size_t n, std::size_t c,
               std::size_t hw, Matrix<float>& out, unsigned threads) {
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* plane = raw.data() + (i * c + ch) * hw;
      double sum = 0.0;
      for (std::size_t k = 0; k < hw; ++k) sum += static_cast<double>(plane[k]);
      out(i, ch) = static_cast<float>(sum / static_cast<double>(hw));
    }
  });
}

void check_shape(const LayerEntry& entry, const Tensor& tensor) {
  const bool ok = entry.kind == LayerKind::kRaw4d
                      ? tensor.rank() == 4 && tensor.dim(1) == entry.channels &&
                            tensor.dim(2) == entry.spatial->height &&
                            tensor.dim(3) == entry.spatial->width
                      : tensor.rank() == 2 && tensor.dim(1) == entry.channels;
  if (!ok) {
    throw ShapeError("layer '" + entry.name + "' (" +
                     std::string(layer_kind_name(entry.kind)) +
                     ") cannot take a tensor of shape " +
                     shape_string(tensor.shape()));
  }
}

}  // namespace

PooledBatch global_avg_pool(const Tensor& raw, std::string layer_name,
                            unsigned threads) {
  if (raw.rank() != 4) {
    throw ShapeError("global_avg_pool expects (N, C, H, W), got " +
                     shape_string(raw.shape()));
  }
  const std::size_t n = raw.dim(0), c = raw.dim(1);
  const std::size_t hw = raw.dim(2) * raw.dim(3);
  if (hw == 0) {
    throw ShapeError("global_avg_pool needs a non-empty spatial extent, got " +
                     shape_string(raw.shape()));
  }
  PooledBatch out{std::move(layer_name), Matrix<float>(n, c), false, 0};
  switch (raw.dtype()) {
    case DType::kFloat32:
      pool_rows(raw.values<float>(), n, c, hw, out.features, threads);
      break;
    case DType::kFloat64:
      pool_rows(raw.values<double>(), n, c, hw, out.features, threads);
      break;
    case DType::kInt64:
      throw UnsupportedDtype("activations must be floating point");
  }
  return out;
}

PooledBatch as_pooled(const Tensor& pooled, std::string layer_name) {
  if (pooled.dtype() == DType::kInt64) {
    throw UnsupportedDtype("features must be floating point");
  }
  return {std::move(layer_name), to_matrix<float>(pooled), false, 0};
}

PooledBatch l2_normalize(PooledBatch batch, unsigned threads) {
  if (batch.normalized) {
    throw ConfigError("batch '" + batch.layer_name + "' is already normalized");
  }
  auto& f = batch.features;
  std::atomic<std::size_t> degenerate{0};
  parallel_for(f.rows(), threads, [&](std::size_t i) {
    auto row = f.row(i);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (norm < kDegenerateNorm) {
      std::fill(row.begin(), row.end(), 0.0f);
      degenerate.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    for (float& v : row) v = static_cast<float>(static_cast<double>(v) / norm);
  });
  batch.normalized = true;
  batch.degenerate_rows += degenerate.load();
  return batch;
}

PooledBatch pool_layer(const LayerEntry& entry, const Tensor& tensor,
                       unsigned threads) {
  check_shape(entry, tensor);
  return entry.kind == LayerKind::kRaw4d
             ? global_avg_pool(tensor, entry.name, threads)
             : as_pooled(tensor, entry.name);
}

PooledBatch prepare_layer(const LayerEntry& entry, const Tensor& tensor,
                          unsigned threads) {
  return l2_normalize(pool_layer(entry, tensor, threads), threads);
}

}  // namespace protood
