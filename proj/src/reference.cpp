#include "pseudolab/reference.hpp"

#include <algorithm>

#include "pseudolab/error.hpp"

namespace pseudolab::reference {

using kernels::ConvGrads;
using kernels::ConvParams;
using kernels::DenseGrads;

namespace {

// Input value at padded coordinates, zero outside the image.
double padded(const Tensor& x, std::size_t n, std::size_t c, long y, long xx) {
  if (y < 0 || xx < 0 || y >= static_cast<long>(x.dim(2)) || xx >= static_cast<long>(x.dim(3)))
    return 0.0;
  return x.at({n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)});
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  const std::size_t n = input.dim(0), ic = input.dim(1);
  const std::size_t oc = p.kernel.dim(0), kh = p.kernel.dim(2), kw = p.kernel.dim(3);
  const std::size_t oh = kernels::conv_output_extent(input.dim(2), kh, p.stride, p.padding);
  const std::size_t ow = kernels::conv_output_extent(input.dim(3), kw, p.stride, p.padding);
  Tensor out({n, oc, oh, ow});
  const long pad = static_cast<long>(p.padding);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double sum = 0.0;
          for (std::size_t c = 0; c < ic; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s)
                sum += p.kernel.at({o, c, r, s}) *
                       padded(input, b, c, static_cast<long>(y * p.stride + r) - pad,
                              static_cast<long>(x * p.stride + s) - pad);
          out.at({b, o, y, x}) = sum + p.bias[o];
        }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  const std::size_t n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = p.kernel.dim(0), kh = p.kernel.dim(2), kw = p.kernel.dim(3);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  ConvGrads g{Tensor(input.shape()), Tensor(p.kernel.shape()), Tensor(p.bias.shape())};
  const long pad = static_cast<long>(p.padding);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double gy = grad_out.at({b, o, y, x});
          g.bias[o] += gy;
          for (std::size_t c = 0; c < ic; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s) {
                const long iy = static_cast<long>(y * p.stride + r) - pad;
                const long ix = static_cast<long>(x * p.stride + s) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                  continue;
                const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
                g.kernel.at({o, c, r, s}) += gy * input.at({b, c, uy, ux});
                g.input.at({b, c, uy, ux}) += gy * p.kernel.at({o, c, r, s});
              }
        }
  return g;
}

Tensor maxpool2_forward(const Tensor& input) {
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t oh = input.dim(2) / 2, ow = input.dim(3) / 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double m = input.at({b, ch, 2 * y, 2 * x});
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, input.at({b, ch, 2 * y + dy, 2 * x + dx}));
          out.at({b, ch, y, x}) = m;
        }
  return out;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(1);
  if (weights.dim(0) != din) throw DimensionError("reference dense: inner dimensions differ");
  Tensor out({n, dout});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dout; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < din; ++k) sum += input.at({i, k}) * weights.at({k, j});
      out.at({i, j}) = sum + bias[j];
    }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(1);
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({dout})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dout; ++j) {
      const double gy = grad_out.at({i, j});
      g.bias[j] += gy;
      for (std::size_t k = 0; k < din; ++k) {
        g.input.at({i, k}) += gy * weights.at({k, j});
        g.weights.at({k, j}) += gy * input.at({i, k});
      }
    }
  return g;
}

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  return out;
}

}  // namespace pseudolab::reference
