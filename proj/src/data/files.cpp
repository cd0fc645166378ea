// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "cdep/container.hpp"
#include "cdep/data.hpp"

namespace cdep {

namespace {

Tensor index_tensor(const std::vector<std::size_t>& v) {
  std::vector<double> d(v.begin(), v.end());
  return Tensor({v.size()}, std::move(d));
}

std::vector<std::size_t> index_vector(const Tensor& t) {
  std::vector<std::size_t> out;
  out.reserve(t.numel());
  for (double v : t.data()) {
    if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw DataError("dataset cache: invalid index value");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

void save_dataset(const LabeledDataset& data, const std::string& path,
                  const nlohmann::json& extra) {
  Container c;
  c.meta = {{"format", "dataset"},
            {"split", data.split},
            {"n_classes", data.n_classes},
            {"group_names", data.group_names},
            {"feature_names", data.feature_names},
            {"has_masks", data.bias_masks.defined()},
            {"has_groups", !data.groups.empty()},
            {"extra", extra}};
  c.blocks.emplace_back("inputs", data.inputs);
  c.blocks.emplace_back("labels", index_tensor(data.labels));
  if (data.bias_masks.defined()) c.blocks.emplace_back("bias_masks", data.bias_masks);
  if (!data.groups.empty()) c.blocks.emplace_back("groups", index_tensor(data.groups));
  write_container(path, c);
}

LabeledDataset load_dataset(const std::string& path, nlohmann::json* extra) {
  const Container c = read_container(path);
  if (c.meta.value("format", "") != "dataset") throw IoError(path + ": not a dataset cache");
  LabeledDataset d;
  try {
    d.split = c.meta.at("split").get<std::string>();
    d.n_classes = c.meta.at("n_classes").get<std::size_t>();
    d.group_names = c.meta.at("group_names").get<std::vector<std::string>>();
    d.feature_names = c.meta.at("feature_names").get<std::vector<std::string>>();
    d.inputs = c.block("inputs");
    d.labels = index_vector(c.block("labels"));
    if (c.meta.at("has_masks").get<bool>()) d.bias_masks = c.block("bias_masks");
    if (c.meta.at("has_groups").get<bool>()) d.groups = index_vector(c.block("groups"));
    if (extra) *extra = c.meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed dataset header: " + e.what());
  }
  if (d.inputs.dim() == 0 || d.inputs.size(0) != d.labels.size()) {
    throw IoError(path + ": inputs and labels disagree in length");
  }
  return d;
}

void write_mask_file(const std::string& path, const Tensor& masks) {
  if (masks.dim() < 2) throw DataError("mask tensor needs a leading count axis");
  const Shape shape(masks.shape().begin() + 1, masks.shape().end());
  const std::size_t n = masks.size(0);
  const std::size_t len = shape_numel(shape);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << nlohmann::json{{"shape", shape}, {"count", n}}.dump() << '\n';
  const auto v = masks.data();
  for (std::size_t i = 0; i < n; ++i) {
    double current = 0.0;
    std::size_t run = 0;
    bool first = true;
    auto emit = [&]() {
      out << (first ? "" : " ") << run;
      first = false;
    };
    for (std::size_t j = 0; j < len; ++j) {
      const double b = v[i * len + j];
      if (b != 0.0 && b != 1.0) throw DataError("mask values must be 0 or 1");
      if (b != current) {
        emit();
        current = b;
        run = 0;
      }
      ++run;
    }
    emit();
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

Tensor read_mask_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  Shape shape;
  std::size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    shape = h.at("shape").get<Shape>();
    n = h.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  const std::size_t len = shape_numel(shape);
  Shape full{n};
  full.insert(full.end(), shape.begin(), shape.end());
  Tensor out = Tensor::zeros(full);
  auto v = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IoError(path + ": expected " + std::to_string(n) + " masks");
    std::istringstream runs(line);
    std::size_t pos = 0;
    std::size_t run = 0;
    bool ones = false;
    while (runs >> run) {
      if (pos + run > len) throw IoError(path + ": mask " + std::to_string(i) + " overruns shape");
      if (ones) std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(i * len + pos), run, 1.0);
      pos += run;
      ones = !ones;
    }
    if (!runs.eof() || pos != len) {
      throw IoError(path + ": mask " + std::to_string(i) + " has bad run lengths");
    }
  }
  return out;
}

}  // namespace cdep
