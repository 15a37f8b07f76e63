#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "protood/tensor.hpp"

namespace protood {

/// Parsed NPY preamble. Only little-endian, C-ordered float32, float64 and
/// int64 arrays are accepted.
struct NpyHeader {
  DType dtype = DType::kFloat32;
  Shape shape;
  std::size_t data_offset = 0;  // bytes from file start to first element
};

struct LoadOptions {
  bool allow_nonfinite = false;
};

/// Parses the header of an in-memory NPY image.
NpyHeader parse_npy_header(std::string_view bytes);

/// Reads only the header of an NPY file (used for cheap shape validation).
NpyHeader read_npy_header(const std::filesystem::path& path);

Tensor decode_npy(std::string_view bytes, const LoadOptions& opts = {});

/// Encodes with the same header layout numpy's `np.save` writes (version 1.0,
/// 64-byte aligned, growth-axis padding), so the output is byte-identical.
std::string encode_npy(const Tensor& t);

Tensor load_tensor(const std::filesystem::path& path,
                   const LoadOptions& opts = {});
void save_tensor(const Tensor& t, const std::filesystem::path& path);

}  // namespace protood
