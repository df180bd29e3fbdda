#include "pseudolab/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "pseudolab/error.hpp"

namespace pseudolab::kernels {

namespace {

using idx = std::ptrdiff_t;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, in_ch, h, w, out_ch, kh, kw, oh, ow, stride, pad;
};

struct ConvRefs {
  const Tensor& kernel;
  const Tensor& bias;
  std::size_t stride;
  std::size_t padding;
};

ConvGeometry conv_geometry(const Tensor& input, const ConvRefs& p) {
  require_rank(input, 4, "conv2d input");
  require_rank(p.kernel, 4, "conv2d kernel");
  require_rank(p.bias, 1, "conv2d bias");
  if (p.stride == 0) throw ConfigError("conv2d stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.in_ch = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.out_ch = p.kernel.dim(0);
  g.kh = p.kernel.dim(2);
  g.kw = p.kernel.dim(3);
  g.stride = p.stride;
  g.pad = p.padding;
  if (p.kernel.dim(1) != g.in_ch) {
    throw DimensionError("conv2d kernel expects " + std::to_string(p.kernel.dim(1)) +
                         " input channels, input " + shape_string(input.shape()) + " has " +
                         std::to_string(g.in_ch));
  }
  if (p.bias.dim(0) != g.out_ch) {
    throw DimensionError("conv2d bias length " + std::to_string(p.bias.dim(0)) +
                         " does not match " + std::to_string(g.out_ch) + " output channels");
  }
  g.oh = conv_output_extent(g.h, g.kh, g.stride, g.pad);
  g.ow = conv_output_extent(g.w, g.kw, g.stride, g.pad);
  return g;
}

// Output columns [lo, hi) whose input column ow*stride + k - pad is in range.
void valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                 std::size_t pad, std::size_t& lo, std::size_t& hi) {
  lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  hi = out;
  while (hi > lo && (hi - 1) * stride + k >= in + pad) --hi;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (k == 0 || k > padded) {
    throw ConfigError("kernel extent " + std::to_string(k) + " exceeds padded input extent " +
                      std::to_string(padded));
  }
  if ((padded - k) % stride != 0) {
    throw ConfigError("output extent (" + std::to_string(in) + " + 2*" + std::to_string(padding) +
                      " - " + std::to_string(k) + ")/" + std::to_string(stride) +
                      " + 1 is not an integer");
  }
  return (padded - k) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t stride, std::size_t padding) {
  const ConvRefs params{kernel, bias, stride, padding};
  const ConvGeometry g = conv_geometry(input, params);
  Tensor out({g.n, g.out_ch, g.oh, g.ow});
  const double* x = input.data();
  const double* k = params.kernel.data();
  const double* b = params.bias.data();
  double* y = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (idx n = 0; n < static_cast<idx>(g.n); ++n) {
    for (idx oc = 0; oc < static_cast<idx>(g.out_ch); ++oc) {
      double* plane = y + (n * g.out_ch + oc) * g.oh * g.ow;
      std::fill(plane, plane + g.oh * g.ow, b[oc]);
      for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
        const double* src = x + (n * g.in_ch + ic) * g.h * g.w;
        const double* wk = k + ((oc * g.in_ch + ic) * g.kh) * g.kw;
        for (std::size_t r = 0; r < g.kh; ++r) {
          std::size_t oh_lo, oh_hi;
          valid_range(g.oh, g.h, r, g.stride, g.pad, oh_lo, oh_hi);
          for (std::size_t c = 0; c < g.kw; ++c) {
            const double wv = wk[r * g.kw + c];
            std::size_t ow_lo, ow_hi;
            valid_range(g.ow, g.w, c, g.stride, g.pad, ow_lo, ow_hi);
            for (std::size_t oy = oh_lo; oy < oh_hi; ++oy) {
              const double* row = src + (oy * g.stride + r - g.pad) * g.w;
              double* dst = plane + oy * g.ow;
              if (g.stride == 1) {
                const double* s = row + (ow_lo + c - g.pad);
                double* d = dst + ow_lo;
                for (std::size_t ox = 0; ox < ow_hi - ow_lo; ++ox) d[ox] += wv * s[ox];
              } else {
                for (std::size_t ox = ow_lo; ox < ow_hi; ++ox)
                  dst[ox] += wv * row[ox * g.stride + c - g.pad];
              }
            }
          }
        }
      }
    }
  }
  require_finite(out, "conv2d forward");
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                          std::size_t stride, std::size_t padding, const Tensor& grad_out) {
  const ConvRefs params{kernel, bias, stride, padding};
  const ConvGeometry g = conv_geometry(input, params);
  const Shape expected{g.n, g.out_ch, g.oh, g.ow};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv2d grad_out shape " + shape_string(grad_out.shape()) +
                         " does not match output " + shape_string(expected));
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(params.kernel.shape()),
                  Tensor(params.bias.shape())};
  const double* x = input.data();
  const double* k = params.kernel.data();
  const double* gy = grad_out.data();
  double* gx = grads.input.data();
  double* gk = grads.kernel.data();
  double* gb = grads.bias.data();
  const std::size_t plane_out = g.oh * g.ow;

  // Bias and kernel gradients: each element reduces over the batch in order.
#pragma omp parallel for schedule(static)
  for (idx oc = 0; oc < static_cast<idx>(g.out_ch); ++oc) {
    double sum = 0.0;
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* gp = gy + (n * g.out_ch + oc) * plane_out;
      for (std::size_t i = 0; i < plane_out; ++i) sum += gp[i];
    }
    gb[oc] = sum;
    for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
      for (std::size_t r = 0; r < g.kh; ++r) {
        std::size_t oh_lo, oh_hi;
        valid_range(g.oh, g.h, r, g.stride, g.pad, oh_lo, oh_hi);
        for (std::size_t c = 0; c < g.kw; ++c) {
          std::size_t ow_lo, ow_hi;
          valid_range(g.ow, g.w, c, g.stride, g.pad, ow_lo, ow_hi);
          double acc = 0.0;
          for (std::size_t n = 0; n < g.n; ++n) {
            const double* src = x + (n * g.in_ch + ic) * g.h * g.w;
            const double* gp = gy + (n * g.out_ch + oc) * plane_out;
            for (std::size_t oy = oh_lo; oy < oh_hi; ++oy) {
              const double* row = src + (oy * g.stride + r - g.pad) * g.w;
              const double* grow = gp + oy * g.ow;
              for (std::size_t ox = ow_lo; ox < ow_hi; ++ox)
                acc += grow[ox] * row[ox * g.stride + c - g.pad];
            }
          }
          gk[((oc * g.in_ch + ic) * g.kh + r) * g.kw + c] = acc;
        }
      }
    }
  }

  // Input gradient: each (sample, channel) plane is owned by one iteration.
#pragma omp parallel for collapse(2) schedule(static)
  for (idx n = 0; n < static_cast<idx>(g.n); ++n) {
    for (idx ic = 0; ic < static_cast<idx>(g.in_ch); ++ic) {
      double* dst = gx + (n * g.in_ch + ic) * g.h * g.w;
      for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
        const double* gp = gy + (n * g.out_ch + oc) * plane_out;
        const double* wk = k + ((oc * g.in_ch + ic) * g.kh) * g.kw;
        for (std::size_t r = 0; r < g.kh; ++r) {
          std::size_t oh_lo, oh_hi;
          valid_range(g.oh, g.h, r, g.stride, g.pad, oh_lo, oh_hi);
          for (std::size_t c = 0; c < g.kw; ++c) {
            const double wv = wk[r * g.kw + c];
            std::size_t ow_lo, ow_hi;
            valid_range(g.ow, g.w, c, g.stride, g.pad, ow_lo, ow_hi);
            for (std::size_t oy = oh_lo; oy < oh_hi; ++oy) {
              double* row = dst + (oy * g.stride + r - g.pad) * g.w;
              const double* grow = gp + oy * g.ow;
              for (std::size_t ox = ow_lo; ox < ow_hi; ++ox)
                row[ox * g.stride + c - g.pad] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  require_finite(grads.input, "conv2d backward (input)");
  require_finite(grads.kernel, "conv2d backward (kernel)");
  return grads;
}

PoolResult maxpool2_forward(const Tensor& input) {
  require_rank(input, 4, "maxpool2 input");
  const std::size_t n = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) {
    throw ConfigError("maxpool2 needs spatial extent >= 2, got " + shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult res{Tensor({n, ch, oh, ow}), std::vector<std::size_t>(n * ch * oh * ow)};
  const double* x = input.data();
  double* y = res.output.data();

#pragma omp parallel for schedule(static)
  for (idx p = 0; p < static_cast<idx>(n * ch); ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t at = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (x[at] > x[best]) best = at;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = x[best];
        res.argmax[o] = best;
      }
    }
  }
  return res;
}

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                         const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("maxpool2 backward: " + std::to_string(argmax.size()) +
                         " argmax entries for grad_out " + shape_string(grad_out.shape()));
  }
  Tensor gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw DimensionError("relu backward: grad_out " + shape_string(grad_out.shape()) +
                         " vs input " + shape_string(input.shape()));
  }
  Tensor gx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) gx[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return gx;
}

namespace {

void check_dense(const Tensor& input, const Tensor& weights) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  if (input.dim(1) != weights.dim(0)) {
    throw DimensionError("dense: input " + shape_string(input.shape()) + " cannot multiply weights " +
                         shape_string(weights.shape()));
  }
}

}  // namespace

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  check_dense(input, weights);
  require_rank(bias, 1, "dense bias");
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(1);
  if (bias.dim(0) != dout) {
    throw DimensionError("dense: bias length " + std::to_string(bias.dim(0)) + " vs " +
                         std::to_string(dout) + " outputs");
  }
  Tensor out({n, dout});
  const double* x = input.data();
  const double* wt = weights.data();
  double* y = out.data();

#pragma omp parallel for schedule(static)
  for (idx i = 0; i < static_cast<idx>(n); ++i) {
    double* row = y + i * dout;
    std::copy(bias.data(), bias.data() + dout, row);
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = x[i * din + k];
      const double* wr = wt + k * dout;
      for (std::size_t j = 0; j < dout; ++j) row[j] += xv * wr[j];
    }
  }
  require_finite(out, "dense forward");
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  check_dense(input, weights);
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(1);
  if (grad_out.shape() != Shape{n, dout}) {
    throw DimensionError("dense backward: grad_out " + shape_string(grad_out.shape()) +
                         " expected " + shape_string({n, dout}));
  }
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({dout})};
  const double* x = input.data();
  const double* wt = weights.data();
  const double* gy = grad_out.data();

#pragma omp parallel for schedule(static)
  for (idx i = 0; i < static_cast<idx>(n); ++i) {
    for (std::size_t k = 0; k < din; ++k) {
      const double* wr = wt + k * dout;
      const double* gr = gy + i * dout;
      double acc = 0.0;
      for (std::size_t j = 0; j < dout; ++j) acc += gr[j] * wr[j];
      g.input[i * din + k] = acc;
    }
  }

#pragma omp parallel for schedule(static)
  for (idx k = 0; k < static_cast<idx>(din); ++k) {
    double* gw = g.weights.data() + k * dout;
    for (std::size_t i = 0; i < n; ++i) {
      const double xv = x[i * din + k];
      const double* gr = gy + i * dout;
      for (std::size_t j = 0; j < dout; ++j) gw[j] += xv * gr[j];
    }
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dout; ++j) g.bias[j] += gy[i * dout + j];

  require_finite(g.input, "dense backward (input)");
  require_finite(g.weights, "dense backward (weights)");
  return g;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor probs(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * c;
    double* p = probs.data() + i * c;
    const double m = *std::max_element(z, z + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - m);
      sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
  }
  require_finite(probs, "softmax");
  return probs;
}

namespace {

void check_labels(const Tensor& scores, std::span<const std::size_t> labels) {
  require_rank(scores, 2, "cross-entropy input");
  if (scores.dim(1) < 2) throw ValidationError("cross-entropy needs at least 2 classes");
  if (labels.size() != scores.dim(0)) {
    throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(scores.dim(0)) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= scores.dim(1)) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(scores.dim(1)) + ")");
    }
  }
}

}  // namespace

LossResult softmax_crossentropy(const Tensor& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  LossResult res{0.0, Tensor(logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * c;
    double* p = res.probs.data() + i * c;
    const double m = *std::max_element(z, z + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - m);
      sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
    total += std::log(sum) - (z[labels[i]] - m);
  }
  res.loss = total / static_cast<double>(n);
  if (!std::isfinite(res.loss)) throw NumericError("cross-entropy loss is not finite");
  return res;
}

Tensor softmax_crossentropy_backward(const Tensor& probs, std::span<const std::size_t> labels) {
  check_labels(probs, labels);
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  Tensor g = probs;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i * c + labels[i]] -= 1.0;
    for (std::size_t j = 0; j < c; ++j) g[i * c + j] *= scale;
  }
  return g;
}

void sgd_step(std::span<Parameter> params, std::span<const Tensor> grads, double learning_rate) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("sgd: learning rate must be finite and non-negative");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != grads[i].shape()) {
      throw DimensionError("sgd: gradient " + shape_string(grads[i].shape()) + " for parameter '" +
                           params[i].name + "' of shape " + shape_string(params[i].value.shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("sgd: non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value.values();
    auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= learning_rate * g[j];
  }
}

Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace pseudolab::kernels
