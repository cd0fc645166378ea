// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feed-forward networks built from six layer kinds. Activations carry a
// leading batch axis; Linear weights are [out, in], Conv2D weights are
// [c_out, c_in, k, k].

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cdep/random.hpp"
#include "cdep/tensor.hpp"

namespace cdep {

struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
};
struct Conv2D {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 0;
};
struct ReLU {};
struct MaxPool2D {
  std::size_t k = 2;
};
struct Dropout {
  double p = 0.0;
};
struct Flatten {};

using LayerSpec = std::variant<Linear, Conv2D, ReLU, MaxPool2D, Dropout, Flatten>;

std::string layer_name(const LayerSpec& spec);

struct Layer {
  LayerSpec spec;
  Tensor weight;  // undefined for parameter-free kinds
  Tensor bias;
  Shape in_shape;   // per-sample, without the batch axis
  Shape out_shape;
};

enum class Mode { kTrain, kEval };

// One entry per layer; defined only for Dropout layers. Each mask holds
// 0 or 1/(1-p) and has the full batched activation shape.
using DropoutMasks = std::vector<Tensor>;

class Network {
 public:
  Network() = default;
  // Checks that consecutive shapes compose and initializes parameters from
  // the kInit stream of `seed`.
  Network(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t seed);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::size_t size() const { return layers_.size(); }
  std::uint64_t seed() const { return seed_; }

  std::size_t frozen_prefix() const { return frozen_prefix_; }
  void set_frozen_prefix(std::size_t n);

  // All parameters in layer order (weight, then bias).
  std::vector<Tensor> parameters() const;
  // Parameters of layers at index >= frozen_prefix(), flagged requires_grad.
  std::vector<Tensor> trainable_parameters();
  std::size_t parameter_count() const;
  bool has_dropout() const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
  std::size_t frozen_prefix_ = 0;
};

// Conv(20,5)-ReLU-MaxPool(2)-Conv(50,5)-ReLU-MaxPool(2)-Flatten-
// Linear(800,256)-ReLU-Linear(256,10) on (channels, 28, 28) inputs.
Network build_mnist_cnn(std::size_t channels, std::uint64_t seed);
// Linear(n,5)-ReLU-Dropout(0.1)-Linear(5,5)-ReLU-Dropout(0.1)-Linear(5,2).
Network build_compas_mlp(std::size_t n_features, std::uint64_t seed);
// Linear/ReLU stack over flattened inputs with the given hidden widths.
Network build_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                  std::size_t n_classes, std::uint64_t seed);

DropoutMasks sample_dropout_masks(const Network& net, std::size_t batch, Rng& rng);

// Runs layers [from, to) on x. Dropout uses `masks` when given, otherwise
// it is the identity.
Tensor forward_range(const Network& net, const Tensor& x, std::size_t from,
                     std::size_t to, const DropoutMasks* masks = nullptr);
Tensor forward(const Network& net, const Tensor& x, const DropoutMasks* masks = nullptr);
// Train mode samples fresh masks from `rng`; eval mode ignores it.
Tensor forward(const Network& net, const Tensor& x, Mode mode, Rng& rng);

// Single-layer building blocks shared with the CD pass.
Tensor apply_linear(const Layer& layer, const Tensor& x, bool with_bias);
Tensor apply_conv(const Layer& layer, const Tensor& x, bool with_bias);

// Checkpoint container: magic, JSON header with layer specs and block
// shapes, then little-endian f64 blocks in layer order.
void save_checkpoint(const Network& net, const std::string& path,
                     const std::string& extra_json = "{}");
Network load_checkpoint(const std::string& path, std::string* extra_json = nullptr);

}  // namespace cdep
