#pragma once

#include <functional>

#include "pseudolab/rng.hpp"
#include "pseudolab/tensor.hpp"

namespace pseudolab::gradcheck {

inline constexpr double kStep = 1e-5;

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Compares `analytic` against central differences of the scalar `loss` around
// `x`, one element at a time. Returns the largest relative error.
double max_relative_error(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                          const Tensor& analytic, double step = kStep);

// Kernel checks on random instances drawn from `rng`. Vector-valued kernels
// are reduced to a scalar by a random projection of their output, and every
// differentiable argument is checked.
double check_conv2d(const Shape& input, const Shape& kernel, std::size_t stride,
                    std::size_t padding, Rng& rng);
double check_dense(std::size_t n, std::size_t din, std::size_t dout, Rng& rng);
double check_relu(const Shape& shape, Rng& rng);
double check_maxpool2(const Shape& shape, Rng& rng);
double check_softmax_crossentropy(std::size_t n, std::size_t classes, Rng& rng);

}  // namespace pseudolab::gradcheck
