#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/rng.hpp"
#include "pseudolab/tensor.hpp"

// Differentiable numeric kernels. Batch loops run under OpenMP; every output
// element is reduced in a fixed order so results do not depend on the thread
// count. Serial reference versions live in reference.hpp.
namespace pseudolab::kernels {

struct ConvParams {
  Tensor kernel;  // OutCh x InCh x Kh x Kw
  Tensor bias;    // OutCh
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

// Output extent along one axis; throws ConfigError when the window does not
// tile the padded input exactly.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                               std::size_t padding);

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t stride, std::size_t padding);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                          std::size_t stride, std::size_t padding, const Tensor& grad_out);

inline Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  return conv2d_forward(input, p.kernel, p.bias, p.stride, p.padding);
}
inline ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  return conv2d_backward(input, p.kernel, p.bias, p.stride, p.padding, grad_out);
}

struct PoolResult {
  Tensor output;
  // Flat input offset of the winning element for every output element.
  std::vector<std::size_t> argmax;
};

PoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                         const Tensor& grad_out);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// input N x Din, weights Din x Dout, bias Dout.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

struct LossResult {
  double loss = 0.0;
  Tensor probs;
};

// Mean negative log-likelihood over the batch.
LossResult softmax_crossentropy(const Tensor& logits, std::span<const std::size_t> labels);
// (probs - onehot) / N
Tensor softmax_crossentropy_backward(const Tensor& probs, std::span<const std::size_t> labels);

struct Parameter {
  std::string name;
  Tensor value;
};

// p <- p - lr * g. Throws NumericError naming the parameter when its gradient
// is not finite; nothing is updated in that case.
void sgd_step(std::span<Parameter> params, std::span<const Tensor> grads, double learning_rate);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace pseudolab::kernels
