#include "bssm/tensor.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <sstream>

#include "bssm/error.hpp"

namespace bssm {

static_assert(std::endian::native == std::endian::little, "tensor dumps assume a little-endian host");

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= d;
  }
  return n;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : shape_(std::move(shape)), values_(Vector::Zero(shape_numel(shape_))) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(values_.size()) +
                     " values");
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
  values_.resize(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) values_[i++] = v;
  if (shape_numel(shape_) != values_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(values_.size()) +
                     " values");
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const RowMatrix& m) {
  Tensor t(Shape{m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), values_);
}

template <typename Scalar>
void Tensor<Scalar>::dump(std::ostream& out) const {
  out << dtype_name<Scalar>() << ' ' << shape_.size();
  for (Index d : shape_) out << ' ' << d;
  out << '\n';
  out.write(reinterpret_cast<const char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(Scalar)));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::load_dump(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("tensor dump: missing header");
  std::istringstream hs(header);
  std::string dtype;
  std::size_t rank = 0;
  hs >> dtype >> rank;
  if (dtype != dtype_name<Scalar>())
    throw IoError("tensor dump: dtype " + dtype + " where " + dtype_name<Scalar>() + " was expected");
  Shape shape(rank);
  for (auto& d : shape)
    if (!(hs >> d)) throw IoError("tensor dump: truncated shape header");
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.values_.data()), static_cast<std::streamsize>(t.values_.size() * sizeof(Scalar)));
  if (in.gcount() != static_cast<std::streamsize>(t.values_.size() * sizeof(Scalar)))
    throw IoError("tensor dump: truncated payload");
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace bssm
