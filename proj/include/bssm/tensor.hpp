#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace bssm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

template <typename Scalar>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }

/// Dense row-major array. The last dimension is the column axis of
/// `matrix()`; all leading dimensions fold into rows.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector values);
  Tensor(Shape shape, std::initializer_list<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value);
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, Vector::Constant(1, value)); }
  static Tensor from_matrix(const RowMatrix& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  Index numel() const { return values_.size(); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }
  Scalar item() const;

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  /// Checkpoint dump: one text header line `<dtype> <rank> <dims...>` then
  /// little-endian raw values.
  void dump(std::ostream& out) const;
  static Tensor load_dump(std::istream& in);

 private:
  Shape shape_;
  Vector values_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace bssm
