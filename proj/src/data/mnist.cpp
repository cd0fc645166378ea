// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>

#include "cdep/data.hpp"
#include "cdep/random.hpp"

namespace cdep {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw DataError(path + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::string& path) {
  if (got != want) {
    throw DataError(path + ": bad magic " + hex(got) + ", expected " + hex(want));
  }
}

}  // namespace

std::string data_root(const std::string& override_root) {
  if (!override_root.empty()) return override_root;
  if (const char* env = std::getenv("CDEP_DATA_ROOT"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) {
    return std::string(home) + "/.cache/cdep";
  }
  return ".cache/cdep";
}

Shape LabeledDataset::sample_shape() const {
  const Shape& s = inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t n = shape.at(0);
  const std::size_t row = n == 0 ? 0 : t.numel() / n;
  shape[0] = rows.size();
  Buffer out(rows.size() * row);
  const auto src = t.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw DataError("row index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return Tensor::from_buffer(std::move(shape), std::move(out));
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.inputs = gather_rows(inputs, rows);
  if (bias_masks.defined()) out.bias_masks = gather_rows(bias_masks, rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  if (!groups.empty()) {
    out.groups.reserve(rows.size());
    for (std::size_t r : rows) out.groups.push_back(groups.at(r));
  }
  out.n_classes = n_classes;
  out.split = split;
  out.group_names = group_names;
  out.feature_names = feature_names;
  return out;
}

LabeledDataset LabeledDataset::range(std::size_t start, std::size_t n) const {
  if (start + n > size()) throw DataError("range exceeds dataset size");
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = start + i;
  return subset(rows);
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
  return range(0, std::min(n, size()));
}

LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_bytes(images_path);
  const auto lab = read_bytes(labels_path);
  check_magic(be32(img, 0, images_path), kImagesMagic, images_path);
  check_magic(be32(lab, 0, labels_path), kLabelsMagic, labels_path);
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_labels = be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw DataError("count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }
  const std::size_t px = rows * cols;
  if (img.size() < 16 + n * px) {
    throw DataError(images_path + ": truncated, expected " + std::to_string(16 + n * px) +
                    " bytes, got " + std::to_string(img.size()));
  }
  if (lab.size() < 8 + n) {
    throw DataError(labels_path + ": truncated, expected " + std::to_string(8 + n) +
                    " bytes, got " + std::to_string(lab.size()));
  }
  LabeledDataset out;
  Buffer values(n * px);
  for (std::size_t i = 0; i < n * px; ++i) values[i] = img[16 + i] / 255.0;
  out.inputs = Tensor::from_buffer({n, 1, rows, cols}, std::move(values));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab[8 + i];
    if (out.labels[i] > 9) throw DataError(labels_path + ": label out of range at " + std::to_string(i));
  }
  out.n_classes = 10;
  out.split = "train";
  return out;
}

Palette default_palette() {
  // No color is the complement of another, so test tints never reuse a
  // training tint.
  return {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 0.5, 0.0},
          {0.5, 0.0, 1.0}, {1.0, 0.0, 0.5}, {1.0, 1.0, 0.5}, {0.5, 0.5, 1.0},
          {1.0, 0.5, 1.0}, {0.5, 1.0, 0.5}};
}

LabeledDataset make_color_mnist(const LabeledDataset& gray, const Palette& palette, Phase phase) {
  if (palette.size() != 10) {
    throw DataError("palette needs 10 colors, got " + std::to_string(palette.size()));
  }
  if (std::set<std::array<double, 3>>(palette.begin(), palette.end()).size() != 10) {
    throw DataError("palette colors must be distinct");
  }
  for (const auto& c : palette) {
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("palette values must lie in [0, 1]");
    }
  }
  const Shape& s = gray.inputs.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw DataError("color builder needs [N,1,H,W] input, got " + shape_str(s));
  }
  const std::size_t n = s[0];
  const std::size_t hw = s[2] * s[3];
  Buffer out(n * 3 * hw);
  const auto src = gray.inputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = gray.labels[i];
    if (label >= 10) throw DataError("label out of palette range");
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double tint = phase == Phase::kTrain ? palette[label][ch] : 1.0 - palette[label][ch];
      for (std::size_t p = 0; p < hw; ++p) {
        out[(i * 3 + ch) * hw + p] = src[i * hw + p] * tint;
      }
    }
  }
  LabeledDataset result;
  result.inputs = Tensor::from_buffer({n, 3, s[2], s[3]}, std::move(out));
  result.labels = gray.labels;
  result.n_classes = gray.n_classes;
  result.split = gray.split;
  return result;
}

LabeledDataset make_decoy_mnist(const LabeledDataset& gray, Phase phase, std::uint64_t seed,
                                const DecoyOptions& opts) {
  const Shape& s = gray.inputs.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw DataError("decoy builder needs [N,1,H,W] input, got " + shape_str(s));
  }
  const std::size_t n = s[0];
  const std::size_t h = s[2];
  const std::size_t w = s[3];
  const std::size_t k = opts.patch;
  if (k == 0 || 2 * k > h || 2 * k > w) throw DataError("decoy patch does not fit the image");
  const std::size_t n_classes = gray.n_classes == 0 ? 10 : gray.n_classes;
  Rng rng = make_rng(seed, Stream::kData);
  Tensor inputs = gray.inputs.clone();
  Tensor masks = Tensor::zeros(s);
  auto x = inputs.mutable_data();
  auto m = masks.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t corner = uniform_index(rng, 4);
    std::size_t shade_class = gray.labels[i];
    if (phase == Phase::kTest) {
      // Uniform over the other classes.
      const std::size_t r = uniform_index(rng, n_classes - 1);
      shade_class = r >= gray.labels[i] ? r + 1 : r;
    }
    const double shade = opts.shade_low + opts.shade_span * static_cast<double>(shade_class) /
                                              static_cast<double>(n_classes - 1);
    const std::size_t r0 = (corner & 1) ? h - k : 0;
    const std::size_t c0 = (corner & 2) ? w - k : 0;
    for (std::size_t r = r0; r < r0 + k; ++r) {
      for (std::size_t c = c0; c < c0 + k; ++c) {
        x[i * h * w + r * w + c] = shade;
        m[i * h * w + r * w + c] = 1.0;
      }
    }
  }
  LabeledDataset out;
  out.inputs = std::move(inputs);
  out.bias_masks = std::move(masks);
  out.labels = gray.labels;
  out.n_classes = n_classes;
  out.split = gray.split;
  return out;
}

std::vector<double> pixel_distribution(const LabeledDataset& data) {
  const Shape& s = data.inputs.shape();
  if (s.size() != 4) throw DataError("pixel distribution needs [N,C,H,W], got " + shape_str(s));
  const std::size_t n = s[0];
  const std::size_t c = s[1];
  const std::size_t hw = s[2] * s[3];
  std::vector<double> counts(hw, 0.0);
  const auto x = data.inputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (x[(i * c + ch) * hw + p] != 0.0) {
          counts[p] += 1.0;
          break;
        }
      }
    }
  }
  double total = 0.0;
  for (double v : counts) total += v;
  if (total == 0.0) throw DataError("pixel distribution of an all-zero dataset");
  for (double& v : counts) v /= total;
  return counts;
}

}  // namespace cdep
