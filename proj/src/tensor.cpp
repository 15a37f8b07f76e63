#include "protood/tensor.hpp"

#include <string>

namespace protood {

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return "float32";
    case DType::kFloat64: return "float64";
    case DType::kInt64: return "int64";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  return dtype == DType::kFloat32 ? 4 : 8;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v)); }, storage_);
}

std::vector<double> Tensor::to_double() const {
  return std::visit(
      [](const auto& v) {
        return std::vector<double>(v.begin(), v.end());
      },
      storage_);
}

template <typename T>
Matrix<T> to_matrix(const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError("expected a 2-D tensor, got shape " +
                     shape_string(t.shape()));
  }
  std::vector<T> out;
  out.reserve(t.numel());
  for (double v : t.to_double()) out.push_back(static_cast<T>(v));
  return Matrix<T>(t.dim(0), t.dim(1), std::move(out));
}

template Matrix<float> to_matrix<float>(const Tensor&);
template Matrix<double> to_matrix<double>(const Tensor&);

}  // namespace protood
