#include "pseudolab/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pseudolab/error.hpp"

namespace pseudolab::interpret {

namespace {

using idx = std::ptrdiff_t;

constexpr double kEntropyTolerance = 1e-4;
constexpr int kMaxBisection = 50;
constexpr std::size_t kKlEvery = 50;
constexpr double kMinGain = 0.01;

std::vector<double> pairwise_sq(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> out(n * n, 0.0);
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < static_cast<idx>(n); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  }
  return out;
}

void validate_features(std::span<const double> x, std::size_t n, std::size_t d) {
  if (d == 0) throw ValidationError("t-SNE features need at least one dimension");
  if (x.size() != n * d) {
    throw DimensionError("t-SNE features hold " + std::to_string(x.size()) + " values, expected " +
                         std::to_string(n) + " x " + std::to_string(d));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("t-SNE features contain non-finite values");
  }
}

}  // namespace

ConditionalAffinities conditional_affinities(std::span<const double> x, std::size_t n,
                                             std::size_t d, double perplexity) {
  validate_features(x, n, d);
  if (n < 2) throw ValidationError("t-SNE needs at least 2 points");
  if (!(perplexity > 0.0)) throw ValidationError("perplexity must be positive");
  const std::vector<double> dist = pairwise_sq(x, n, d);
  const double target = std::log(perplexity);
  ConditionalAffinities out{std::vector<double>(n * n, 0.0), std::vector<double>(n),
                            std::vector<double>(n)};

#pragma omp parallel for schedule(static)
  for (idx ii = 0; ii < static_cast<idx>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* di = dist.data() + i * n;
    double* pi = out.p.data() + i * n;
    // Shift by the nearest neighbour so exp() never underflows for the whole row.
    double nearest = INFINITY, mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      nearest = std::min(nearest, di[j]);
      mean += di[j];
    }
    mean /= static_cast<double>(n - 1);
    const double spread = mean - nearest;
    double beta = spread > 0.0 ? 1.0 / spread : 1.0;
    double lo = 0.0, hi = INFINITY, entropy = 0.0;
    for (int step = 0; step < kMaxBisection; ++step) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          pi[j] = 0.0;
          continue;
        }
        const double s = di[j] - nearest;
        pi[j] = std::exp(-beta * s);
        sum += pi[j];
        weighted += s * pi[j];
      }
      entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) pi[j] /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < kEntropyTolerance) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    out.entropy[i] = entropy;
    out.beta[i] = beta;
  }
  return out;
}

std::vector<double> joint_affinities(std::span<const double> x, std::size_t n, std::size_t d,
                                     double perplexity) {
  const ConditionalAffinities c = conditional_affinities(x, n, d, perplexity);
  std::vector<double> p(n * n, 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (c.p[i * n + j] + c.p[j * n + i]) * scale;
      p[i * n + j] = v;
      p[j * n + i] = v;
    }
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> y, std::size_t n) {
  std::vector<double> num(n * n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      total += num[i * n + j];
    }
  double kl = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    if (p[k] <= 0.0) continue;
    const double q = std::max(num[k] / total, 1e-300);
    kl += p[k] * std::log(p[k] / q);
  }
  return std::max(kl, 0.0);
}

Embedding2D tsne_embed(std::span<const double> features, std::size_t n, std::size_t d,
                       const TsneConfig& config) {
  validate_features(features, n, d);
  if (!(config.perplexity > 0.0)) throw ValidationError("perplexity must be positive");
  if (static_cast<double>(n) < 3.0 * config.perplexity) {
    throw ValidationError("t-SNE with perplexity " + std::to_string(config.perplexity) +
                          " needs at least " + std::to_string(3.0 * config.perplexity) +
                          " points, got " + std::to_string(n));
  }
  if (config.iterations == 0) throw ValidationError("t-SNE needs at least one iteration");
  if (!(config.learning_rate > 0.0)) throw ValidationError("t-SNE learning rate must be positive");

  Embedding2D emb;
  emb.n = n;
  emb.config = config;
  Rng rng(config.seed);

  // Exact duplicates get a tiny deterministic jitter; a point with more
  // duplicates than the perplexity cannot reach the target entropy otherwise.
  std::vector<double> x(features.begin(), features.end());
  {
    double scale = 0.0;
    for (double v : x) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;
    std::map<std::vector<double>, std::size_t> seen;
    Rng jitter = rng.split(0x6a);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(x.begin() + i * d, x.begin() + (i + 1) * d);
      if (!seen.emplace(row, i).second) {
        for (std::size_t k = 0; k < d; ++k) x[i * d + k] += 1e-6 * scale * jitter.normal();
        ++emb.jittered;
      }
    }
  }

  const std::vector<double> p = joint_affinities(x, n, d, config.perplexity);
  emb.exaggeration_end = config.iterations / 4;

  std::vector<double>& y = emb.coords;
  y.resize(2 * n);
  for (auto& v : y) v = 1e-4 * rng.normal();
  std::vector<double> velocity(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n, 0.0);
  std::vector<double> num(n * n, 0.0);

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const bool early = iter < emb.exaggeration_end;
    const double exaggeration = early ? config.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;

#pragma omp parallel for schedule(static)
    for (idx ii = 0; ii < static_cast<idx>(n); ++ii) {
      const std::size_t i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          num[i * n + j] = 0.0;
          continue;
        }
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      }
    }
    double total = 0.0;
    for (double v : num) total += v;

#pragma omp parallel for schedule(static)
    for (idx ii = 0; ii < static_cast<idx>(n); ++ii) {
      const std::size_t i = static_cast<std::size_t>(ii);
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = num[i * n + j];
        const double mult = (exaggeration * p[i * n + j] - w / total) * w;
        gx += mult * (y[2 * i] - y[2 * j]);
        gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }

    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0.0) == (velocity[k] > 0.0);
      gains[k] = same_sign ? gains[k] * 0.8 : gains[k] + 0.2;
      gains[k] = std::max(gains[k], kMinGain);
      velocity[k] = momentum * velocity[k] - config.learning_rate * gains[k] * grad[k];
      y[k] += velocity[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }

    const std::size_t done = iter + 1;
    if (done % kKlEvery == 0 || done == config.iterations) {
      emb.kl_trace.push_back(KlPoint{done, kl_divergence(p, y, n)});
    }
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("t-SNE produced non-finite coordinates");
  }
  return emb;
}

std::vector<double> channel_weights(const Tensor& grads) {
  if (grads.rank() != 3) {
    throw DimensionError("channel weights need K x h x w gradients, got " +
                         shape_string(grads.shape()));
  }
  const std::size_t k = grads.dim(0), plane = grads.dim(1) * grads.dim(2);
  std::vector<double> w(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += grads[c * plane + i];
    w[c] = s / static_cast<double>(plane);
  }
  return w;
}

std::vector<double> weighted_sum(const Tensor& activations, std::span<const double> weights) {
  if (activations.rank() != 3 || activations.dim(0) != weights.size()) {
    throw DimensionError("weighted sum: " + std::to_string(weights.size()) +
                         " weights for activations " + shape_string(activations.shape()));
  }
  const std::size_t plane = activations.dim(1) * activations.dim(2);
  std::vector<double> out(plane, 0.0);
  for (std::size_t c = 0; c < weights.size(); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[i] += weights[c] * activations[c * plane + i];
  return out;
}

LayerGradient logit_gradient(const Model& model, const Tensor& image, std::size_t target,
                             const std::string& layer) {
  const std::size_t li = model.layer_index(layer);
  const Layer& l = model.layers()[li];
  const bool conv_map = l.kind == LayerKind::Conv ||
                        (l.kind == LayerKind::Relu && li > 0 &&
                         model.layers()[li - 1].kind == LayerKind::Conv);
  if (!conv_map) {
    throw LayerTypeError("layer '" + layer + "' is not a convolutional feature map");
  }
  if (target >= model.arch().classes) {
    throw ValidationError("target class " + std::to_string(target) + " outside [0, " +
                          std::to_string(model.arch().classes) + ")");
  }
  if (image.rank() != 3) {
    throw DimensionError("grad-cam expects a C x H x W image, got " + shape_string(image.shape()));
  }
  Shape batch{1};
  batch.insert(batch.end(), image.shape().begin(), image.shape().end());
  const ForwardTrace trace = model.forward(image.reshaped(batch));
  Tensor onehot({1, model.arch().classes});
  onehot[target] = 1.0;
  const Tensor g = model.backward(trace, onehot, nullptr, li);
  const Shape& s = l.out_shape;
  return LayerGradient{trace.outputs[li].reshaped(s), g.reshaped(s)};
}

CamMap grad_cam(const Model& model, const Tensor& image, std::size_t target,
                const std::string& layer) {
  const LayerGradient lg = logit_gradient(model, image, target, layer);
  CamMap cam;
  cam.target = target;
  cam.height = lg.activations.dim(1);
  cam.width = lg.activations.dim(2);
  cam.channel_weights = channel_weights(lg.grads);
  cam.raw = weighted_sum(lg.activations, cam.channel_weights);
  cam.values = cam.raw;
  for (auto& v : cam.values) v = std::max(v, 0.0);
  return cam;
}

std::vector<double> upsample_bilinear(std::span<const double> grid, std::size_t h, std::size_t w,
                                      std::size_t out_h, std::size_t out_w) {
  if (h == 0 || w == 0 || grid.size() != h * w) {
    throw ValidationError("bilinear upsample needs a non-empty h x w grid");
  }
  if (out_h == 0 || out_w == 0) throw ValidationError("bilinear target extents must be positive");
  auto source = [](std::size_t i, std::size_t in, std::size_t out) {
    return out == 1 ? 0.0
                    : static_cast<double>(i) * static_cast<double>(in - 1) /
                          static_cast<double>(out - 1);
  };
  std::vector<double> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, h, out_h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, w, out_w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = std::lerp(grid[y0 * w + x0], grid[y0 * w + x1], fx);
      const double bottom = std::lerp(grid[y1 * w + x0], grid[y1 * w + x1], fx);
      out[y * out_w + x] = std::lerp(top, bottom, fy);
    }
  }
  return out;
}

std::string to_pgm(std::span<const double> grid, std::size_t h, std::size_t w) {
  if (grid.size() != h * w) throw DimensionError("pgm grid size does not match extents");
  const auto [mn, mx] = std::minmax_element(grid.begin(), grid.end());
  const double lo = *mn, range = *mx - *mn;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : grid) {
    const double s = range > 0.0 ? (v - lo) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
  return out;
}

}  // namespace pseudolab::interpret
