#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace metapix {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// Values live in a flat Eigen column vector; the shape only fixes how the
/// flat index is read.
template <class Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Zero(numel(shape_));
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (numel(shape_) != data_.size()) {
      throw std::invalid_argument("tensor shape " + shape_str(shape_) + " holds " +
                                  std::to_string(numel(shape_)) + " elements but data has " +
                                  std::to_string(data_.size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector(Eigen::Map<const Vector>(values.begin(),
                                                                 Index(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return Tensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return int(shape_.size()); }
  Index dim(int axis) const { return shape_.at(std::size_t(axis)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }

  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }

  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }

  /// Scalar value of a one-element tensor.
  Scalar item() const {
    if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    if (!on) grad_.resize(0);
    return *this;
  }

  bool has_grad() const noexcept { return grad_.size() == data_.size() && data_.size() > 0; }
  const Vector& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return grad_;
  }
  /// Gradient buffer, allocated as zeros on first access.
  Vector& grad_buffer() {
    if (!has_grad()) grad_ = Vector::Zero(data_.size());
    return grad_;
  }
  void zero_grad() {
    if (has_grad()) grad_.setZero();
  }
  void clear_grad() { grad_.resize(0); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <class Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool same_values(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor shape must be positive, got " + shape_str(shape));
    }
  }

  Shape shape_;
  Vector data_;
  bool requires_grad_ = false;
  Vector grad_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace metapix
