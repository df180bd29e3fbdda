#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/kernels.hpp"
#include "pseudolab/rng.hpp"
#include "pseudolab/tensor.hpp"

namespace pseudolab {

enum class ModelKind : std::uint8_t { Cnn = 0, Mlp = 1 };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// conv -> relu [-> maxpool2]
struct ConvBlock {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool pool = true;

  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct ArchDescriptor {
  ModelKind kind = ModelKind::Cnn;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  std::vector<ConvBlock> conv;
  // Hidden dense widths between flatten and the class head, each followed by relu.
  std::vector<std::size_t> hidden;

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

// conv 3x3x16, relu, pool, conv 3x3x32, relu, pool, flatten, dense 128, relu, dense classes.
ArchDescriptor default_cnn_arch(std::size_t channels, std::size_t height, std::size_t width,
                                std::size_t classes);
// flatten, dense 256, relu, dense classes.
ArchDescriptor default_mlp_arch(std::size_t channels, std::size_t height, std::size_t width,
                                std::size_t classes);

enum class LayerKind : std::uint8_t { Conv, Relu, MaxPool, Flatten, Dense };

struct Layer {
  LayerKind kind;
  std::string name;
  Shape out_shape;  // per sample
  std::size_t weight = 0;  // parameter indices (conv/dense only)
  std::size_t bias = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Activations of every layer for one batch; outputs[i] belongs to layers()[i].
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::vector<std::size_t>> argmax;  // maxpool layers only

  const Tensor& logits() const { return outputs.back(); }
};

class Model {
 public:
  // Builds the layer stack and initializes parameters from `rng`.
  Model(ArchDescriptor arch, Rng& rng);

  const ArchDescriptor& arch() const { return arch_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<kernels::Parameter>& parameters() { return params_; }
  const std::vector<kernels::Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Shape input_shape() const { return {arch_.channels, arch_.height, arch_.width}; }

  // Layer names in order, followed by the pseudo-layer "softmax".
  std::vector<std::string> layer_names() const;
  // Index into layers(); throws LookupError listing valid names.
  std::size_t layer_index(const std::string& name) const;

  ForwardTrace forward(const Tensor& images) const;
  // Logits from the output of layer `layer` (N x out_shape).
  Tensor forward_from(std::size_t layer, const Tensor& activation) const;

  // Backpropagates `grad_logits` through the trace. Parameter gradients are
  // written to `param_grads` when non-null. Stops once the gradient w.r.t. the
  // output of layer `stop_at` is known and returns it; otherwise returns the
  // gradient w.r.t. the input.
  Tensor backward(const ForwardTrace& trace, const Tensor& grad_logits,
                  std::vector<Tensor>* param_grads,
                  std::optional<std::size_t> stop_at = std::nullopt) const;

 private:
  void check_input(const Tensor& images) const;
  Tensor apply(std::size_t i, const Tensor& x, std::vector<std::size_t>* argmax) const;

  ArchDescriptor arch_;
  std::vector<Layer> layers_;
  std::vector<kernels::Parameter> params_;
};

// Throws ConfigError when a layer would collapse the spatial extent.
Model build_cnn(const ArchDescriptor& arch, Rng& rng);
Model build_mlp(const ArchDescriptor& arch, Rng& rng);
// Dispatches on arch.kind.
Model build_model(const ArchDescriptor& arch, Rng& rng);

// N x classes softmax rows. Evaluated in fixed-size chunks.
Tensor predict_proba(const Model& model, const Tensor& images);
std::vector<std::size_t> predict(const Model& model, const Tensor& images);

// Activations of the named layer ("softmax" gives predict_proba).
Tensor extract_features(const Model& model, const Tensor& images, const std::string& layer);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;  // drives mini-batch shuffling
};

struct TrainResult {
  std::vector<double> epoch_loss;  // sample-weighted mean loss per epoch
};

// Shuffled mini-batch SGD on softmax cross-entropy. The final batch of an
// epoch may be short.
TrainResult train_supervised(Model& model, const Tensor& images,
                             std::span<const std::size_t> labels, const TrainConfig& config);

// Mean cross-entropy of the model on a labeled batch.
double evaluate_loss(const Model& model, const Tensor& images, std::span<const std::size_t> labels);

// Finite-difference check of every parameter against backward().
double model_gradient_check(const Model& model, const Tensor& images,
                            std::span<const std::size_t> labels);

}  // namespace pseudolab
