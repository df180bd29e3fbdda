#pragma once

#include <span>

#include "pseudolab/kernels.hpp"

// Plain single-threaded kernels written directly from the definitions. They
// exist as oracles for the tests and as the baseline in the benchmarks.
namespace pseudolab::reference {

Tensor conv2d_forward(const Tensor& input, const kernels::ConvParams& params);
kernels::ConvGrads conv2d_backward(const Tensor& input, const kernels::ConvParams& params,
                                   const Tensor& grad_out);
Tensor maxpool2_forward(const Tensor& input);
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
kernels::DenseGrads dense_backward(const Tensor& input, const Tensor& weights,
                                   const Tensor& grad_out);
// Pairwise squared Euclidean distances of the rows of an n x d matrix.
std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d);

}  // namespace pseudolab::reference
