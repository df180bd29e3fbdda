#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/model.hpp"
#include "pseudolab/rng.hpp"

namespace pseudolab::interpret {

// ---- t-SNE (exact affinities) ----

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
  double exaggeration = 12.0;  // applied for the first quarter of iterations
};

struct KlPoint {
  std::size_t iteration;  // 1-based count of completed iterations
  double kl;
};

struct Embedding2D {
  std::size_t n = 0;
  std::vector<double> coords;  // n x 2, row-major
  std::vector<KlPoint> kl_trace;
  std::size_t exaggeration_end = 0;
  std::size_t jittered = 0;  // duplicate rows perturbed before the bandwidth search
  TsneConfig config;
};

struct ConditionalAffinities {
  std::vector<double> p;        // n x n, rows sum to 1, zero diagonal
  std::vector<double> entropy;  // natural-log entropy of each row
  std::vector<double> beta;     // 1 / (2 sigma^2)
};

// Per-point Gaussian bandwidths by bisection so each row's entropy matches
// log(perplexity) within 1e-4, using at most 50 steps.
ConditionalAffinities conditional_affinities(std::span<const double> x, std::size_t n,
                                             std::size_t d, double perplexity);

// Symmetrized joint affinities (P + P^T) / 2n.
std::vector<double> joint_affinities(std::span<const double> x, std::size_t n, std::size_t d,
                                     double perplexity);

// KL(P || Q) for a 2-D layout, Q from the Student-t kernel.
double kl_divergence(std::span<const double> p, std::span<const double> y, std::size_t n);

// features: n x d row-major. Throws ValidationError when n < 3 * perplexity.
Embedding2D tsne_embed(std::span<const double> features, std::size_t n, std::size_t d,
                       const TsneConfig& config);

// ---- Grad-CAM ----

struct CamMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;           // rectified map
  std::vector<double> raw;              // sum_k w_k A^k before rectification
  std::vector<double> channel_weights;  // w_k
  std::size_t target = 0;
};

// w_k: spatial mean of each channel of a K x h x w gradient.
std::vector<double> channel_weights(const Tensor& grads);
// sum_k w_k A^k over a K x h x w activation tensor.
std::vector<double> weighted_sum(const Tensor& activations, std::span<const double> weights);

// Gradient of the target class logit w.r.t. the named layer's output
// (K x h x w), plus the activations themselves.
struct LayerGradient {
  Tensor activations;
  Tensor grads;
};
LayerGradient logit_gradient(const Model& model, const Tensor& image, std::size_t target,
                             const std::string& layer);

// Accepts conv layers or the relu directly after one; other layers raise
// LayerTypeError, unknown names LookupError. `image` is C x H x W.
CamMap grad_cam(const Model& model, const Tensor& image, std::size_t target,
                const std::string& layer);

// Corner-aligned bilinear resampling of an h x w grid to H x W.
std::vector<double> upsample_bilinear(std::span<const double> grid, std::size_t h, std::size_t w,
                                      std::size_t out_h, std::size_t out_w);

// Binary PGM (P5) after min-max scaling to 0..255; a flat map renders black.
std::string to_pgm(std::span<const double> grid, std::size_t h, std::size_t w);

}  // namespace pseudolab::interpret
