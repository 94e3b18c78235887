#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aleatoric/error.hpp"

namespace aleatoric {

using Shape = std::vector<std::size_t>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = RowMatrix<double>;
using Vector = ColVector<double>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major array of arbitrary rank. Storage is an Eigen column vector
/// so any contiguous slab can be viewed as a matrix without copying.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : shape_{0}, data_(0) {}

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(ColVector<Scalar>::Zero(static_cast<Eigen::Index>(shape_size(shape_)))) {}

  BasicTensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
    if (shape_size(shape_) != values.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(values.size()));
    }
    data_ = Eigen::Map<const ColVector<Scalar>>(values.data(), static_cast<Eigen::Index>(values.size()));
    check_finite("tensor");
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    t.check_finite("from_matrix");
    return t;
  }

  static BasicTensor filled(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), size()}; }
  std::span<const Scalar> values() const { return {data_.data(), size()}; }

  ColVector<Scalar>& flat() { return data_; }
  const ColVector<Scalar>& flat() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  template <typename... Index>
  Scalar& operator()(Index... idx) {
    return data_[static_cast<Eigen::Index>(offset({static_cast<std::size_t>(idx)...}))];
  }
  template <typename... Index>
  Scalar operator()(Index... idx) const {
    return data_[static_cast<Eigen::Index>(offset({static_cast<std::size_t>(idx)...}))];
  }

  /// Rank-2 view. Higher ranks collapse the trailing axes into columns.
  MatrixMap matrix() {
    const auto [r, c] = rows_cols();
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap matrix() const {
    const auto [r, c] = rows_cols();
    return ConstMatrixMap(data_.data(), r, c);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    BasicTensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const { return data_.allFinite(); }

  void check_finite(std::string_view where) const {
    if (!all_finite()) {
      throw NumericError(std::string(where) + ": non-finite value");
    }
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw DimensionError("tensor index rank " + std::to_string(idx.size()) + " vs shape " +
                           shape_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) {
        throw DimensionError("tensor index out of range on axis " + std::to_string(axis));
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  std::pair<Eigen::Index, Eigen::Index> rows_cols() const {
    if (shape_.empty()) return {1, 1};
    if (shape_.size() == 1) return {static_cast<Eigen::Index>(shape_[0]), 1};
    const auto rows = static_cast<Eigen::Index>(shape_[0]);
    return {rows, rows == 0 ? 0 : static_cast<Eigen::Index>(size()) / rows};
  }

  Shape shape_;
  ColVector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

/// c = a * b for rank-2 operands.
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  BasicTensor<Scalar> c({a.extent(0), b.extent(1)});
  c.matrix().noalias() = a.matrix() * b.matrix();
  c.check_finite("matmul");
  return c;
}

/// max(x) + log(sum(exp(x - max(x)))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) throw DomainError("log_sum_exp: empty input");
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("log_sum_exp: non-finite input");
  return m + std::log((x.derived().array() - m).exp().sum());
}

template <typename Scalar>
Scalar log_sum_exp(const BasicTensor<Scalar>& x) {
  return log_sum_exp(x.flat());
}

}  // namespace aleatoric
