#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "protood/error.hpp"

namespace protood {

enum class DType { kFloat32, kFloat64, kInt64 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }
template <>
constexpr DType dtype_of<std::int64_t>() { return DType::kInt64; }

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor holding one of the supported element types.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, std::vector<float>{}) {}

  template <typename T>
  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), storage_(std::move(values)) {
    if (shape_numel(shape_) != std::get<std::vector<T>>(storage_).size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) +
                       " does not match element count " +
                       std::to_string(std::get<std::vector<T>>(storage_).size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return shape_numel(shape_); }
  DType dtype() const noexcept { return static_cast<DType>(storage_.index()); }

  template <typename T>
  std::span<const T> values() const {
    if (auto* v = std::get_if<std::vector<T>>(&storage_)) return *v;
    throw UnsupportedDtype("tensor holds " + std::string(dtype_name(dtype())) +
                           ", requested " +
                           std::string(dtype_name(dtype_of<T>())));
  }

  /// Raw little-endian element bytes, as stored on disk.
  std::span<const std::byte> bytes() const;

  /// Element values widened to double (int64 included).
  std::vector<double> to_double() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  // Alternative order mirrors DType.
  std::variant<std::vector<float>, std::vector<double>,
               std::vector<std::int64_t>>
      storage_;
};

/// Row-major 2-D buffer used for feature batches, prototype banks and score
/// matrices.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix buffer size " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  std::vector<T> release() && { return std::move(data_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Views a rank-2 tensor as a matrix, converting the element type.
template <typename T>
Matrix<T> to_matrix(const Tensor& t);

}  // namespace protood
