#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pseudolab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Every extent is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  // Same data, new extents with identical element count.
  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// Throws NumericError naming `where` if any element is NaN or Inf.
void require_finite(const Tensor& t, const std::string& where);

}  // namespace pseudolab
