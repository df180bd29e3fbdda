#include "pseudolab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pseudolab/kernels.hpp"

namespace pseudolab::gradcheck {

using namespace pseudolab::kernels;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double max_relative_error(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                          const Tensor& analytic, double step) {
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = loss(probe);
    probe[i] = x[i] - step;
    const double down = loss(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double project(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

double check_conv2d(const Shape& input, const Shape& kernel, std::size_t stride,
                    std::size_t padding, Rng& rng) {
  ConvParams p{random_tensor(kernel, rng), random_tensor({kernel[0]}, rng), stride, padding};
  const Tensor x = random_tensor(input, rng);
  const Tensor y = conv2d_forward(x, p);
  const Tensor r = random_tensor(y.shape(), rng);
  const ConvGrads g = conv2d_backward(x, p, r);

  double worst = max_relative_error(
      [&](const Tensor& xi) { return project(conv2d_forward(xi, p), r); }, x, g.input);
  worst = std::max(worst, max_relative_error(
                              [&](const Tensor& k) {
                                return project(conv2d_forward(x, k, p.bias, stride, padding), r);
                              },
                              p.kernel, g.kernel));
  worst = std::max(worst, max_relative_error(
                              [&](const Tensor& b) {
                                return project(conv2d_forward(x, p.kernel, b, stride, padding), r);
                              },
                              p.bias, g.bias));
  return worst;
}

double check_dense(std::size_t n, std::size_t din, std::size_t dout, Rng& rng) {
  const Tensor x = random_tensor({n, din}, rng);
  const Tensor w = random_tensor({din, dout}, rng);
  const Tensor b = random_tensor({dout}, rng);
  const Tensor r = random_tensor({n, dout}, rng);
  const DenseGrads g = dense_backward(x, w, r);
  double worst = max_relative_error(
      [&](const Tensor& xi) { return project(dense_forward(xi, w, b), r); }, x, g.input);
  worst = std::max(worst, max_relative_error(
                              [&](const Tensor& wi) { return project(dense_forward(x, wi, b), r); },
                              w, g.weights));
  worst = std::max(worst, max_relative_error(
                              [&](const Tensor& bi) { return project(dense_forward(x, w, bi), r); },
                              b, g.bias));
  return worst;
}

double check_relu(const Shape& shape, Rng& rng) {
  // Samples stay away from the kink at zero.
  Tensor x(shape);
  for (auto& v : x.values()) {
    const double mag = rng.uniform(0.01, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  const Tensor r = random_tensor(shape, rng);
  const Tensor g = relu_backward(x, r);
  return max_relative_error([&](const Tensor& xi) { return project(relu_forward(xi), r); }, x, g);
}

double check_maxpool2(const Shape& shape, Rng& rng) {
  // Distinct values spaced well beyond the finite-difference step.
  const std::size_t n = shape_size(shape);
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = 0.01 * static_cast<double>(i);
  rng.shuffle(values);
  const Tensor x(shape, values);
  const PoolResult fwd = maxpool2_forward(x);
  const Tensor r = random_tensor(fwd.output.shape(), rng);
  const Tensor g = maxpool2_backward(shape, fwd.argmax, r);
  return max_relative_error(
      [&](const Tensor& xi) { return project(maxpool2_forward(xi).output, r); }, x, g);
}

double check_softmax_crossentropy(std::size_t n, std::size_t classes, Rng& rng) {
  const Tensor z = random_tensor({n, classes}, rng, -2.0, 2.0);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.below(classes));
  const LossResult fwd = softmax_crossentropy(z, labels);
  const Tensor g = softmax_crossentropy_backward(fwd.probs, labels);
  return max_relative_error([&](const Tensor& zi) { return softmax_crossentropy(zi, labels).loss; },
                            z, g);
}

}  // namespace pseudolab::gradcheck
