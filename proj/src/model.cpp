#include "pseudolab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pseudolab/error.hpp"
#include "pseudolab/gradcheck.hpp"

namespace pseudolab {

using namespace kernels;

std::string to_string(ModelKind kind) { return kind == ModelKind::Cnn ? "cnn" : "mlp"; }

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "cnn") return ModelKind::Cnn;
  if (name == "mlp") return ModelKind::Mlp;
  throw ConfigError("unknown model kind '" + name + "' (expected cnn or mlp)");
}

ArchDescriptor default_cnn_arch(std::size_t channels, std::size_t height, std::size_t width,
                                std::size_t classes) {
  ArchDescriptor a;
  a.kind = ModelKind::Cnn;
  a.channels = channels;
  a.height = height;
  a.width = width;
  a.classes = classes;
  a.conv = {ConvBlock{16, 3, 1, 1, true}, ConvBlock{32, 3, 1, 1, true}};
  a.hidden = {128};
  return a;
}

ArchDescriptor default_mlp_arch(std::size_t channels, std::size_t height, std::size_t width,
                                std::size_t classes) {
  ArchDescriptor a;
  a.kind = ModelKind::Mlp;
  a.channels = channels;
  a.height = height;
  a.width = width;
  a.classes = classes;
  a.hidden = {256};
  return a;
}

Model::Model(ArchDescriptor arch, Rng& rng) : arch_(std::move(arch)) {
  if (arch_.channels == 0 || arch_.height == 0 || arch_.width == 0) {
    throw ConfigError("input extents must be positive");
  }
  if (arch_.classes < 2) throw ConfigError("a classifier needs at least 2 classes");
  if (arch_.kind == ModelKind::Mlp && !arch_.conv.empty()) {
    throw ConfigError("an mlp descriptor cannot contain conv blocks");
  }

  Shape shape{arch_.channels, arch_.height, arch_.width};
  std::size_t relu_count = 0;
  auto add_param = [&](std::string name, Tensor value) {
    params_.push_back(Parameter{std::move(name), std::move(value)});
    return params_.size() - 1;
  };
  auto add_relu = [&] {
    layers_.push_back(Layer{LayerKind::Relu, "relu" + std::to_string(++relu_count), shape});
  };

  for (std::size_t b = 0; b < arch_.conv.size(); ++b) {
    const ConvBlock& blk = arch_.conv[b];
    const std::string name = "conv" + std::to_string(b + 1);
    if (blk.out_channels == 0) throw ConfigError(name + ": output channels must be positive");
    std::size_t oh, ow;
    try {
      oh = conv_output_extent(shape[1], blk.kernel, blk.stride, blk.padding);
      ow = conv_output_extent(shape[2], blk.kernel, blk.stride, blk.padding);
    } catch (const ConfigError& e) {
      throw ConfigError(name + " on input " + shape_string(shape) + ": " + e.what());
    }
    const std::size_t fan_in = shape[0] * blk.kernel * blk.kernel;
    const std::size_t fan_out = blk.out_channels * blk.kernel * blk.kernel;
    Layer conv{LayerKind::Conv, name, {blk.out_channels, oh, ow}};
    conv.weight = add_param(name + ".weight",
                            init_uniform({blk.out_channels, shape[0], blk.kernel, blk.kernel},
                                         fan_in, fan_out, rng));
    conv.bias = add_param(name + ".bias", Tensor({blk.out_channels}));
    conv.stride = blk.stride;
    conv.padding = blk.padding;
    shape = conv.out_shape;
    layers_.push_back(conv);
    add_relu();
    if (blk.pool) {
      if (shape[1] < 2 || shape[2] < 2) {
        throw ConfigError("pool" + std::to_string(b + 1) + ": spatial extent " +
                          shape_string(shape) + " is below 2");
      }
      shape = {shape[0], shape[1] / 2, shape[2] / 2};
      layers_.push_back(Layer{LayerKind::MaxPool, "pool" + std::to_string(b + 1), shape});
    }
  }

  std::size_t width = shape_size(shape);
  layers_.push_back(Layer{LayerKind::Flatten, "flatten", {width}});
  std::vector<std::size_t> dims = arch_.hidden;
  dims.push_back(arch_.classes);
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d] == 0) throw ConfigError("dense widths must be positive");
    const std::string name = "dense" + std::to_string(d + 1);
    Layer dense{LayerKind::Dense, name, {dims[d]}};
    dense.weight = add_param(name + ".weight", init_uniform({width, dims[d]}, width, dims[d], rng));
    dense.bias = add_param(name + ".bias", Tensor({dims[d]}));
    layers_.push_back(dense);
    width = dims[d];
    shape = {width};
    if (d + 1 < dims.size()) add_relu();
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::string> Model::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) names.push_back(l.name);
  names.push_back("softmax");
  return names;
}

std::size_t Model::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  std::string valid;
  for (const auto& n : layer_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw LookupError("unknown layer '" + name + "'; valid layers: " + valid);
}

void Model::check_input(const Tensor& images) const {
  const Shape expect = input_shape();
  if (images.rank() != 4 || images.dim(1) != expect[0] || images.dim(2) != expect[1] ||
      images.dim(3) != expect[2]) {
    throw DimensionError("model expects N x " + shape_string(expect) + " images, got " +
                         shape_string(images.shape()));
  }
}

Tensor Model::apply(std::size_t i, const Tensor& x, std::vector<std::size_t>* argmax) const {
  const Layer& l = layers_[i];
  switch (l.kind) {
    case LayerKind::Conv:
      return conv2d_forward(x, params_[l.weight].value, params_[l.bias].value, l.stride, l.padding);
    case LayerKind::Relu:
      return relu_forward(x);
    case LayerKind::MaxPool: {
      PoolResult p = maxpool2_forward(x);
      if (argmax) *argmax = std::move(p.argmax);
      return std::move(p.output);
    }
    case LayerKind::Flatten:
      return x.reshaped({x.dim(0), l.out_shape[0]});
    case LayerKind::Dense:
      return dense_forward(x, params_[l.weight].value, params_[l.bias].value);
  }
  throw std::logic_error("unknown layer kind");
}

ForwardTrace Model::forward(const Tensor& images) const {
  check_input(images);
  ForwardTrace t;
  t.input = images;
  t.outputs.reserve(layers_.size());
  t.argmax.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& x = i == 0 ? t.input : t.outputs.back();
    t.outputs.push_back(apply(i, x, &t.argmax[i]));
  }
  return t;
}

Tensor Model::forward_from(std::size_t layer, const Tensor& activation) const {
  if (layer >= layers_.size()) throw LookupError("forward_from: no layer " + std::to_string(layer));
  Shape want{activation.rank() ? activation.dim(0) : 0};
  want.insert(want.end(), layers_[layer].out_shape.begin(), layers_[layer].out_shape.end());
  if (activation.shape() != want) {
    throw DimensionError("forward_from " + layers_[layer].name + ": expected " + shape_string(want) +
                         ", got " + shape_string(activation.shape()));
  }
  Tensor x = activation;
  for (std::size_t i = layer + 1; i < layers_.size(); ++i) x = apply(i, x, nullptr);
  return x;
}

Tensor Model::backward(const ForwardTrace& trace, const Tensor& grad_logits,
                       std::vector<Tensor>* param_grads, std::optional<std::size_t> stop_at) const {
  if (grad_logits.shape() != trace.logits().shape()) {
    throw DimensionError("backward: grad_logits " + shape_string(grad_logits.shape()) +
                         " vs logits " + shape_string(trace.logits().shape()));
  }
  if (param_grads) {
    param_grads->clear();
    for (const auto& p : params_) param_grads->push_back(Tensor::zeros_like(p.value));
  }
  Tensor g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (stop_at && *stop_at == i) return g;
    const Layer& l = layers_[i];
    const Tensor& x = i == 0 ? trace.input : trace.outputs[i - 1];
    switch (l.kind) {
      case LayerKind::Conv: {
        ConvGrads cg = conv2d_backward(x, params_[l.weight].value, params_[l.bias].value,
                                       l.stride, l.padding, g);
        if (param_grads) {
          (*param_grads)[l.weight] = std::move(cg.kernel);
          (*param_grads)[l.bias] = std::move(cg.bias);
        }
        g = std::move(cg.input);
        break;
      }
      case LayerKind::Relu:
        g = relu_backward(x, g);
        break;
      case LayerKind::MaxPool:
        g = maxpool2_backward(x.shape(), trace.argmax[i], g);
        break;
      case LayerKind::Flatten:
        g = g.reshaped(x.shape());
        break;
      case LayerKind::Dense: {
        DenseGrads dg = dense_backward(x, params_[l.weight].value, g);
        if (param_grads) {
          (*param_grads)[l.weight] = std::move(dg.weights);
          (*param_grads)[l.bias] = std::move(dg.bias);
        }
        g = std::move(dg.input);
        break;
      }
    }
  }
  return g;
}

Model build_cnn(const ArchDescriptor& arch, Rng& rng) {
  if (arch.kind != ModelKind::Cnn) throw ConfigError("build_cnn needs a cnn descriptor");
  return Model(arch, rng);
}

Model build_mlp(const ArchDescriptor& arch, Rng& rng) {
  if (arch.kind != ModelKind::Mlp) throw ConfigError("build_mlp needs an mlp descriptor");
  return Model(arch, rng);
}

Model build_model(const ArchDescriptor& arch, Rng& rng) { return Model(arch, rng); }

namespace {

constexpr std::size_t kInferenceChunk = 256;

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> rows) {
  Shape shape = batch.shape();
  const std::size_t stride = batch.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(batch.data() + rows[i] * stride, stride, out.data() + i * stride);
  }
  return out;
}

Tensor slice_rows(const Tensor& batch, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return gather_rows(batch, rows);
}

// Evaluates fn over row chunks and concatenates the results.
template <typename Fn>
Tensor chunked(const Tensor& images, Fn&& fn) {
  const std::size_t n = images.dim(0);
  if (n <= kInferenceChunk) return fn(images);
  std::vector<double> data;
  Shape shape;
  for (std::size_t b = 0; b < n; b += kInferenceChunk) {
    Tensor part = fn(slice_rows(images, b, std::min(n, b + kInferenceChunk)));
    if (shape.empty()) shape = part.shape();
    data.insert(data.end(), part.values().begin(), part.values().end());
  }
  shape[0] = n;
  return Tensor(shape, std::move(data));
}

}  // namespace

Tensor predict_proba(const Model& model, const Tensor& images) {
  return chunked(images, [&](const Tensor& x) { return softmax(model.forward(x).logits()); });
}

std::vector<std::size_t> predict(const Model& model, const Tensor& images) {
  const Tensor p = predict_proba(model, images);
  const std::size_t c = p.dim(1);
  std::vector<std::size_t> out(p.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = p.data() + i * c;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

Tensor extract_features(const Model& model, const Tensor& images, const std::string& layer) {
  if (layer == "softmax") return predict_proba(model, images);
  const std::size_t idx = model.layer_index(layer);
  return chunked(images, [&](const Tensor& x) {
    ForwardTrace t = model.forward(x);
    return std::move(t.outputs[idx]);
  });
}

TrainResult train_supervised(Model& model, const Tensor& images,
                             std::span<const std::size_t> labels, const TrainConfig& config) {
  if (images.rank() != 4) throw DimensionError("training images must be N x C x H x W");
  const std::size_t n = images.dim(0);
  if (labels.size() != n) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " training images");
  }
  if (config.epochs == 0) throw ConfigError("epochs must be positive");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (config.batch_size > n) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) +
                      " exceeds labeled-set size " + std::to_string(n));
  }
  if (!(config.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  for (auto l : labels) {
    if (l >= model.arch().classes) {
      throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(model.arch().classes) + ")");
    }
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::vector<Tensor> grads;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double weighted = 0.0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      std::span<const std::size_t> rows(order.data() + b, e - b);
      batch_labels.assign(rows.size(), 0);
      for (std::size_t i = 0; i < rows.size(); ++i) batch_labels[i] = labels[rows[i]];
      double batch_loss = 0.0;
      try {
        const ForwardTrace trace = model.forward(gather_rows(images, rows));
        const LossResult lr = softmax_crossentropy(trace.logits(), batch_labels);
        batch_loss = lr.loss;
        model.backward(trace, softmax_crossentropy_backward(lr.probs, batch_labels), &grads);
        sgd_step(model.parameters(), grads, config.learning_rate);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b / config.batch_size) + ")");
      }
      weighted += batch_loss * static_cast<double>(rows.size());
    }
    result.epoch_loss.push_back(weighted / static_cast<double>(n));
  }
  return result;
}

double evaluate_loss(const Model& model, const Tensor& images, std::span<const std::size_t> labels) {
  const Tensor probs = predict_proba(model, images);
  const std::size_t c = probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total -= std::log(probs[i * c + labels[i]]);
  return total / static_cast<double>(labels.size());
}

double model_gradient_check(const Model& model, const Tensor& images,
                            std::span<const std::size_t> labels) {
  const ForwardTrace trace = model.forward(images);
  const LossResult lr = softmax_crossentropy(trace.logits(), labels);
  std::vector<Tensor> grads;
  model.backward(trace, softmax_crossentropy_backward(lr.probs, labels), &grads);

  double worst = 0.0;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    Model probe = model;
    auto loss = [&](const Tensor& value) {
      probe.parameters()[p].value = value;
      return softmax_crossentropy(probe.forward(images).logits(), labels).loss;
    };
    worst = std::max(worst, gradcheck::max_relative_error(loss, model.parameters()[p].value,
                                                          grads[p]));
  }
  return worst;
}

}  // namespace pseudolab
