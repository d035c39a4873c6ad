#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "efld/errors.hpp"

namespace efld {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array. Feature maps use (batch, height, width, channel).
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), Index(values.size()))) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index i) const { return shape_[std::size_t(i)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// View as a (rows x last-dim) row-major matrix.
  MatrixMap matrix() { return MatrixMap(ptr(), size() / last_dim(), last_dim()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(ptr(), size() / last_dim(), last_dim()); }

  Scalar& at(Index b, Index y, Index x, Index c) { return data_[offset(b, y, x, c)]; }
  Scalar at(Index b, Index y, Index x, Index c) const { return data_[offset(b, y, x, c)]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  Index offset(Index b, Index y, Index x, Index c) const {
    return ((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
  }

  Shape shape_;
  Vector data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace efld
