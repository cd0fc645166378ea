// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/network.hpp"

#include <cmath>
#include <stdexcept>

#include "cdep/container.hpp"

namespace cdep {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Shape infer_shape(const LayerSpec& spec, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    return ShapeError("layer " + std::to_string(index) + " (" + layer_name(spec) +
                      "): input " + shape_str(in) + " " + why);
  };
  return std::visit(
      Overloaded{
          [&](const Linear& l) -> Shape {
            if (in != Shape{l.in}) throw fail("does not match in=" + std::to_string(l.in));
            if (l.out == 0) throw fail("has out=0");
            return {l.out};
          },
          [&](const Conv2D& c) -> Shape {
            if (in.size() != 3 || in[0] != c.c_in || c.k == 0 || in[1] < c.k || in[2] < c.k) {
              throw fail("does not fit c_in=" + std::to_string(c.c_in) +
                         " k=" + std::to_string(c.k));
            }
            return {c.c_out, in[1] - c.k + 1, in[2] - c.k + 1};
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const MaxPool2D& p) -> Shape {
            if (in.size() != 3 || p.k == 0 || in[1] % p.k != 0 || in[2] % p.k != 0) {
              throw fail("is not tiled by a " + std::to_string(p.k) + "x" +
                         std::to_string(p.k) + " window");
            }
            return {in[0], in[1] / p.k, in[2] / p.k};
          },
          [&](const Dropout& d) -> Shape {
            if (!(d.p >= 0.0 && d.p < 1.0)) throw fail("dropout p outside [0,1)");
            return in;
          },
          [&](const Flatten&) -> Shape { return {shape_numel(in)}; },
      },
      spec);
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (2.0 * uniform01(rng) - 1.0) * bound;
  return Tensor(std::move(shape), std::move(v));
}

bool followed_by_relu(const std::vector<LayerSpec>& specs, std::size_t i) {
  for (std::size_t j = i + 1; j < specs.size(); ++j) {
    if (std::holds_alternative<ReLU>(specs[j])) return true;
    if (!std::holds_alternative<Dropout>(specs[j])) return false;
  }
  return false;
}

Shape batched(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

nlohmann::json spec_to_json(const LayerSpec& spec) {
  return std::visit(
      Overloaded{
          [](const Linear& l) -> nlohmann::json {
            return {{"kind", "linear"}, {"in", l.in}, {"out", l.out}};
          },
          [](const Conv2D& c) -> nlohmann::json {
            return {{"kind", "conv2d"}, {"c_in", c.c_in}, {"c_out", c.c_out}, {"k", c.k}};
          },
          [](const ReLU&) -> nlohmann::json { return {{"kind", "relu"}}; },
          [](const MaxPool2D& p) -> nlohmann::json {
            return {{"kind", "maxpool2d"}, {"k", p.k}};
          },
          [](const Dropout& d) -> nlohmann::json { return {{"kind", "dropout"}, {"p", d.p}}; },
          [](const Flatten&) -> nlohmann::json { return {{"kind", "flatten"}}; },
      },
      spec);
}

LayerSpec spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return Linear{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>()};
  if (kind == "conv2d") {
    return Conv2D{j.at("c_in").get<std::size_t>(), j.at("c_out").get<std::size_t>(),
                  j.at("k").get<std::size_t>()};
  }
  if (kind == "relu") return ReLU{};
  if (kind == "maxpool2d") return MaxPool2D{j.at("k").get<std::size_t>()};
  if (kind == "dropout") return Dropout{j.at("p").get<double>()};
  if (kind == "flatten") return Flatten{};
  throw IoError("unknown layer kind '" + kind + "'");
}

}  // namespace

std::string layer_name(const LayerSpec& spec) {
  return std::visit(
      Overloaded{
          [](const Linear& l) {
            return "Linear(" + std::to_string(l.in) + "," + std::to_string(l.out) + ")";
          },
          [](const Conv2D& c) {
            return "Conv2D(" + std::to_string(c.c_in) + "," + std::to_string(c.c_out) + "," +
                   std::to_string(c.k) + ")";
          },
          [](const ReLU&) { return std::string("ReLU"); },
          [](const MaxPool2D& p) { return "MaxPool2D(" + std::to_string(p.k) + ")"; },
          [](const Dropout& d) {
            std::string s = std::to_string(d.p);
            s.erase(s.find_last_not_of('0') + 1);
            return "Dropout(" + s + ")";
          },
          [](const Flatten&) { return std::string("Flatten"); },
      },
      spec);
}

Network::Network(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), seed_(seed) {
  Rng rng = make_rng(seed, Stream::kInit);
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer;
    layer.spec = specs[i];
    layer.in_shape = shape;
    layer.out_shape = infer_shape(specs[i], shape, i);
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    Shape wshape;
    Shape bshape;
    if (const auto* l = std::get_if<Linear>(&specs[i])) {
      fan_in = l->in;
      fan_out = l->out;
      wshape = {l->out, l->in};
      bshape = {l->out};
    } else if (const auto* c = std::get_if<Conv2D>(&specs[i])) {
      fan_in = c->c_in * c->k * c->k;
      fan_out = c->c_out * c->k * c->k;
      wshape = {c->c_out, c->c_in, c->k, c->k};
      bshape = {c->c_out};
    }
    if (!wshape.empty()) {
      const double bound = followed_by_relu(specs, i)
                               ? std::sqrt(6.0 / static_cast<double>(fan_in))
                               : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      layer.weight = uniform_tensor(wshape, bound, rng);
      layer.bias = Tensor::zeros(bshape);
    }
    shape = layer.out_shape;
    layers_.push_back(std::move(layer));
  }
}

const Shape& Network::output_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back().out_shape;
}

void Network::set_frozen_prefix(std::size_t n) {
  if (n > layers_.size()) {
    throw std::invalid_argument("frozen prefix " + std::to_string(n) + " exceeds " +
                                std::to_string(layers_.size()) + " layers");
  }
  frozen_prefix_ = n;
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (const Layer& l : layers_) {
    if (l.weight.defined()) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  }
  return out;
}

std::vector<Tensor> Network::trainable_parameters() {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    if (!l.weight.defined()) continue;
    const bool train = i >= frozen_prefix_;
    l.weight.set_requires_grad(train);
    l.bias.set_requires_grad(train);
    if (train) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

bool Network::has_dropout() const {
  for (const Layer& l : layers_) {
    if (std::holds_alternative<Dropout>(l.spec)) return true;
  }
  return false;
}

Network build_mnist_cnn(std::size_t channels, std::uint64_t seed) {
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("MNIST CNN takes 1 or 3 channels, got " +
                                std::to_string(channels));
  }
  // The flattened width is whatever the conv stack produces (800 for 28x28).
  const Network probe({channels, 28, 28},
                      {Conv2D{channels, 20, 5}, ReLU{}, MaxPool2D{2}, Conv2D{20, 50, 5}, ReLU{},
                       MaxPool2D{2}, Flatten{}},
                      seed);
  const std::size_t flat = probe.output_shape()[0];
  return Network({channels, 28, 28},
                 {Conv2D{channels, 20, 5}, ReLU{}, MaxPool2D{2}, Conv2D{20, 50, 5}, ReLU{},
                  MaxPool2D{2}, Flatten{}, Linear{flat, 256}, ReLU{}, Linear{256, 10}},
                 seed);
}

Network build_compas_mlp(std::size_t n_features, std::uint64_t seed) {
  if (n_features == 0) throw std::invalid_argument("n_features must be >= 1");
  return Network({n_features},
                 {Linear{n_features, 5}, ReLU{}, Dropout{0.1}, Linear{5, 5}, ReLU{},
                  Dropout{0.1}, Linear{5, 2}},
                 seed);
}

Network build_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                  std::size_t n_classes, std::uint64_t seed) {
  std::vector<LayerSpec> specs;
  std::size_t width = shape_numel(input_shape);
  if (input_shape.size() != 1) specs.push_back(Flatten{});
  for (std::size_t h : hidden) {
    specs.push_back(Linear{width, h});
    specs.push_back(ReLU{});
    width = h;
  }
  specs.push_back(Linear{width, n_classes});
  return Network(input_shape, std::move(specs), seed);
}

DropoutMasks sample_dropout_masks(const Network& net, std::size_t batch, Rng& rng) {
  DropoutMasks masks(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto* d = std::get_if<Dropout>(&net.layers()[i].spec);
    if (!d) continue;
    const double keep = 1.0 - d->p;
    const double scale = 1.0 / keep;
    Shape shape = batched(batch, net.layers()[i].in_shape);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = uniform01(rng) < keep ? scale : 0.0;
    masks[i] = Tensor(std::move(shape), std::move(v));
  }
  return masks;
}

Tensor apply_linear(const Layer& layer, const Tensor& x, bool with_bias) {
  Tensor y = matmul(x, transpose(layer.weight));
  return with_bias ? add(y, layer.bias) : y;
}

Tensor apply_conv(const Layer& layer, const Tensor& x, bool with_bias) {
  Tensor y = conv2d(x, layer.weight);
  if (!with_bias) return y;
  return add(y, reshape(layer.bias, {layer.bias.numel(), 1, 1}));
}

Tensor forward_range(const Network& net, const Tensor& x, std::size_t from, std::size_t to,
                     const DropoutMasks* masks) {
  if (x.dim() == 0) throw ShapeError("forward: input needs a batch axis");
  const std::size_t n = x.size(0);
  const Shape expect = batched(n, from < net.size() ? net.layers()[from].in_shape
                                                     : net.output_shape());
  if (x.shape() != expect) {
    throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match " +
                     shape_str(expect));
  }
  Tensor h = x;
  for (std::size_t i = from; i < to; ++i) {
    const Layer& layer = net.layers()[i];
    h = std::visit(
        Overloaded{
            [&](const Linear&) { return apply_linear(layer, h, true); },
            [&](const Conv2D&) { return apply_conv(layer, h, true); },
            [&](const ReLU&) { return relu(h); },
            [&](const MaxPool2D& p) { return max_pool2d(h, p.k); },
            [&](const Dropout&) {
              if (masks && (*masks)[i].defined()) return mul(h, (*masks)[i]);
              return h;
            },
            [&](const Flatten&) { return reshape(h, batched(n, layer.out_shape)); },
        },
        layer.spec);
  }
  return h;
}

Tensor forward(const Network& net, const Tensor& x, const DropoutMasks* masks) {
  return forward_range(net, x, 0, net.size(), masks);
}

Tensor forward(const Network& net, const Tensor& x, Mode mode, Rng& rng) {
  if (mode == Mode::kEval || !net.has_dropout()) return forward(net, x);
  const DropoutMasks masks = sample_dropout_masks(net, x.dim() ? x.size(0) : 0, rng);
  return forward(net, x, &masks);
}

void save_checkpoint(const Network& net, const std::string& path,
                     const std::string& extra_json) {
  Container c;
  c.meta["format"] = "checkpoint";
  c.meta["input_shape"] = net.input_shape();
  c.meta["seed"] = net.seed();
  c.meta["frozen_prefix"] = net.frozen_prefix();
  c.meta["layers"] = nlohmann::json::array();
  for (const Layer& l : net.layers()) c.meta["layers"].push_back(spec_to_json(l.spec));
  c.meta["extra"] = nlohmann::json::parse(extra_json);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layers()[i];
    if (!l.weight.defined()) continue;
    c.blocks.emplace_back("L" + std::to_string(i) + ".weight", l.weight);
    c.blocks.emplace_back("L" + std::to_string(i) + ".bias", l.bias);
  }
  write_container(path, c);
}

Network load_checkpoint(const std::string& path, std::string* extra_json) {
  const Container c = read_container(path);
  if (c.meta.value("format", "") != "checkpoint") {
    throw IoError(path + ": not a network checkpoint");
  }
  std::vector<LayerSpec> specs;
  for (const auto& j : c.meta.at("layers")) specs.push_back(spec_from_json(j));
  Network net(c.meta.at("input_shape").get<Shape>(), std::move(specs),
              c.meta.at("seed").get<std::uint64_t>());
  for (std::size_t i = 0; i < net.size(); ++i) {
    Layer& l = net.layers()[i];
    if (!l.weight.defined()) continue;
    const Tensor& w = c.block("L" + std::to_string(i) + ".weight");
    const Tensor& b = c.block("L" + std::to_string(i) + ".bias");
    if (w.shape() != l.weight.shape() || b.shape() != l.bias.shape()) {
      throw IoError(path + ": parameter shapes of layer " + std::to_string(i) +
                    " do not match its spec");
    }
    l.weight = w;
    l.bias = b;
  }
  net.set_frozen_prefix(c.meta.at("frozen_prefix").get<std::size_t>());
  if (extra_json) *extra_json = c.meta.at("extra").dump();
  return net;
}

}  // namespace cdep
