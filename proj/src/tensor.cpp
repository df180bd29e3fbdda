#include "pseudolab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pseudolab/error.hpp"

namespace pseudolab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extent must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " does not match " +
                         shape_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw DimensionError("index " + std::to_string(i) + " out of range on axis " +
                           std::to_string(axis) + " of " + shape_string(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) {
  for (auto& v : data_) v = value;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const std::string& where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(where + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace pseudolab
