// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cdep {

namespace {

const std::vector<std::pair<std::string, std::string>> kSchema = {
    {"experiment.dataset", "decoy_mnist | color_mnist | compas"},
    {"experiment.method", "vanilla | cdep | rrr"},
    {"experiment.model", "cnn | mlp (MNIST variants; rrr needs mlp)"},
    {"experiment.mlp_hidden", "comma-separated hidden widths of the MLP"},
    {"experiment.lambda", "explanation penalty weight, >= 0"},
    {"experiment.seed", "seed for every random stream (required for training)"},
    {"experiment.epochs", "training epochs"},
    {"experiment.batch_size", "minibatch size"},
    {"optimizer.kind", "adam | sgd"},
    {"optimizer.lr", "learning rate"},
    {"optimizer.momentum", "sgd momentum in [0, 1)"},
    {"optimizer.weight_decay", "L2 coefficient added to gradients"},
    {"data.root", "dataset root (default $CDEP_DATA_ROOT or ~/.cache/cdep)"},
    {"data.compas_csv", "path of the two-year COMPAS CSV"},
    {"data.train_subsample", "training examples to use, 0 = all"},
    {"data.val_subsample", "validation examples to use, 0 = all"},
    {"data.test_subsample", "test examples to use, 0 = all"},
    {"cdep.score_mode", "raw | softmax | share"},
    {"cdep.k_pixels", "single-pixel groups per batch (color_mnist)"},
    {"cdep.boost_margin", "hinge margin for the race boost target (compas)"},
    {"cdep.frozen_prefix", "leading layers kept fixed; their CD state is cached"},
    {"decoy.patch", "decoy square side in pixels"},
    {"decoy.shade_low", "patch shade of class 0"},
    {"decoy.shade_span", "shade increase from class 0 to the last class"},
    {"training.early_stop_patience", "epochs without validation-loss gain before stopping, 0 = off"},
    {"training.class_weights", "none | balanced"},
    {"training.init_checkpoint", "checkpoint to start from (e.g. for frozen-prefix finetuning)"},
    {"output.dir", "run directory"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t w = to_uint(key, trim(item));
    if (w == 0) throw ConfigError(key + ": widths must be positive");
    out.push_back(w);
  }
  return out;
}

DatasetKind parse_dataset(const std::string& v) {
  if (v == "decoy_mnist") return DatasetKind::kDecoyMnist;
  if (v == "color_mnist") return DatasetKind::kColorMnist;
  if (v == "compas") return DatasetKind::kCompas;
  throw ConfigError("experiment.dataset: unknown dataset '" + v +
                    "' (decoy_mnist, color_mnist, compas)");
}

Method parse_method(const std::string& v) {
  if (v == "vanilla") return Method::kVanilla;
  if (v == "cdep") return Method::kCdep;
  if (v == "rrr") return Method::kRrr;
  throw ConfigError("experiment.method: unknown method '" + v + "' (vanilla, cdep, rrr)");
}

}  // namespace

std::string dataset_name(DatasetKind d) {
  switch (d) {
    case DatasetKind::kDecoyMnist: return "decoy_mnist";
    case DatasetKind::kColorMnist: return "color_mnist";
    case DatasetKind::kCompas: return "compas";
  }
  return "unknown";
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kVanilla: return "vanilla";
    case Method::kCdep: return "cdep";
    case Method::kRrr: return "rrr";
  }
  return "unknown";
}

const std::vector<std::pair<std::string, std::string>>& config_schema() { return kSchema; }

KeyValues dataset_defaults(DatasetKind d) {
  KeyValues kv;
  switch (d) {
    case DatasetKind::kDecoyMnist:
    case DatasetKind::kColorMnist:
      kv = {{"optimizer.kind", "adam"},
            {"optimizer.lr", "0.001"},
            {"optimizer.weight_decay", "0.001"},
            {"experiment.epochs", "5"},
            {"data.train_subsample", "10000"},
            {"data.val_subsample", "2000"},
            {"training.early_stop_patience", "0"}};
      if (d == DatasetKind::kColorMnist) kv["cdep.k_pixels"] = "1";
      break;
    case DatasetKind::kCompas:
      kv = {{"optimizer.kind", "sgd"},
            {"optimizer.lr", "0.01"},
            {"optimizer.momentum", "0.9"},
            {"optimizer.weight_decay", "0"},
            {"experiment.epochs", "200"},
            {"experiment.model", "mlp"},
            {"data.train_subsample", "0"},
            {"data.val_subsample", "0"},
            {"training.early_stop_patience", "10"}};
      break;
  }
  return kv;
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::string section;
  std::stringstream ss(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": key outside of a [section]");
    }
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (std::none_of(kSchema.begin(), kSchema.end(), [&](const auto& e) { return e.first == key; })) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ExperimentConfig resolve_config(const KeyValues& file, const KeyValues& overrides) {
  KeyValues merged = file;
  for (const auto& [k, v] : overrides) merged[k] = v;
  for (const auto& [k, v] : merged) {
    if (std::none_of(kSchema.begin(), kSchema.end(), [&](const auto& e) { return e.first == k; })) {
      throw ConfigError("unknown key '" + k + "'");
    }
  }
  ExperimentConfig c;
  if (auto it = merged.find("experiment.dataset"); it != merged.end()) {
    c.dataset = parse_dataset(it->second);
  }
  KeyValues all = dataset_defaults(c.dataset);
  for (const auto& [k, v] : merged) all[k] = v;

  for (const auto& [key, v] : all) {
    if (key == "experiment.dataset") {
      c.dataset = parse_dataset(v);
    } else if (key == "experiment.method") {
      c.method = parse_method(v);
    } else if (key == "experiment.model") {
      if (v != "cnn" && v != "mlp") throw ConfigError(key + ": expected cnn or mlp");
      c.model = v;
    } else if (key == "experiment.mlp_hidden") {
      c.mlp_hidden = to_list(key, v);
    } else if (key == "experiment.lambda") {
      c.lambda = to_double(key, v);
      if (c.lambda < 0.0) throw ConfigError(key + ": must be >= 0");
    } else if (key == "experiment.seed") {
      c.seed = to_uint(key, v);
    } else if (key == "experiment.epochs") {
      c.epochs = to_uint(key, v);
      if (c.epochs == 0) throw ConfigError(key + ": must be >= 1");
    } else if (key == "experiment.batch_size") {
      c.batch_size = to_uint(key, v);
      if (c.batch_size == 0) throw ConfigError(key + ": must be >= 1");
    } else if (key == "optimizer.kind") {
      if (v != "adam" && v != "sgd") throw ConfigError(key + ": expected adam or sgd");
      c.optimizer.kind = v;
    } else if (key == "optimizer.lr") {
      c.optimizer.lr = to_double(key, v);
      if (!(c.optimizer.lr > 0.0)) throw ConfigError(key + ": must be > 0");
    } else if (key == "optimizer.momentum") {
      c.optimizer.momentum = to_double(key, v);
      if (c.optimizer.momentum < 0.0 || c.optimizer.momentum >= 1.0) {
        throw ConfigError(key + ": must lie in [0, 1)");
      }
    } else if (key == "optimizer.weight_decay") {
      c.optimizer.weight_decay = to_double(key, v);
      if (c.optimizer.weight_decay < 0.0) throw ConfigError(key + ": must be >= 0");
    } else if (key == "data.root") {
      c.data_root = v;
    } else if (key == "data.compas_csv") {
      c.compas_csv = v;
    } else if (key == "data.train_subsample") {
      c.train_subsample = to_uint(key, v);
    } else if (key == "data.val_subsample") {
      c.val_subsample = to_uint(key, v);
    } else if (key == "data.test_subsample") {
      c.test_subsample = to_uint(key, v);
    } else if (key == "cdep.score_mode") {
      try {
        c.score_mode = parse_score_mode(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
      }
    } else if (key == "cdep.k_pixels") {
      c.k_pixels = to_uint(key, v);
      if (c.k_pixels == 0) throw ConfigError(key + ": must be >= 1");
    } else if (key == "cdep.boost_margin") {
      c.boost_margin = to_double(key, v);
      if (!(c.boost_margin > 0.0)) throw ConfigError(key + ": must be > 0");
    } else if (key == "cdep.frozen_prefix") {
      c.frozen_prefix = to_uint(key, v);
    } else if (key == "decoy.patch") {
      c.decoy.patch = to_uint(key, v);
    } else if (key == "decoy.shade_low") {
      c.decoy.shade_low = to_double(key, v);
    } else if (key == "decoy.shade_span") {
      c.decoy.shade_span = to_double(key, v);
    } else if (key == "training.early_stop_patience") {
      c.early_stop_patience = to_uint(key, v);
    } else if (key == "training.class_weights") {
      if (v != "none" && v != "balanced") throw ConfigError(key + ": expected none or balanced");
      c.balanced_class_weights = v == "balanced";
    } else if (key == "training.init_checkpoint") {
      c.init_checkpoint = v;
    } else if (key == "output.dir") {
      if (v.empty()) throw ConfigError(key + ": must not be empty");
      c.out_dir = v;
    }
  }
  if (c.method == Method::kRrr && c.dataset != DatasetKind::kDecoyMnist) {
    throw ConfigError("rrr needs annotated input masks; only decoy_mnist provides them");
  }
  if (c.method == Method::kRrr && c.model != "mlp") {
    throw ConfigError("rrr needs experiment.model = mlp (no double backward through conv)");
  }
  if (c.method == Method::kRrr && c.frozen_prefix > 0) {
    throw ConfigError("rrr does not support a frozen prefix");
  }
  if (c.dataset == DatasetKind::kCompas && c.model != "mlp") {
    throw ConfigError("compas uses the mlp model");
  }
  return c;
}

KeyValues to_key_values(const ExperimentConfig& c) {
  std::string hidden;
  for (std::size_t i = 0; i < c.mlp_hidden.size(); ++i) {
    hidden += (i ? "," : "") + std::to_string(c.mlp_hidden[i]);
  }
  KeyValues kv = {
      {"experiment.dataset", dataset_name(c.dataset)},
      {"experiment.method", method_name(c.method)},
      {"experiment.model", c.model},
      {"experiment.mlp_hidden", hidden},
      {"experiment.lambda", fmt(c.lambda)},
      {"experiment.epochs", std::to_string(c.epochs)},
      {"experiment.batch_size", std::to_string(c.batch_size)},
      {"optimizer.kind", c.optimizer.kind},
      {"optimizer.lr", fmt(c.optimizer.lr)},
      {"optimizer.momentum", fmt(c.optimizer.momentum)},
      {"optimizer.weight_decay", fmt(c.optimizer.weight_decay)},
      {"data.root", c.data_root},
      {"data.compas_csv", c.compas_csv},
      {"data.train_subsample", std::to_string(c.train_subsample)},
      {"data.val_subsample", std::to_string(c.val_subsample)},
      {"data.test_subsample", std::to_string(c.test_subsample)},
      {"cdep.score_mode", score_mode_name(c.score_mode)},
      {"cdep.k_pixels", std::to_string(c.k_pixels)},
      {"cdep.boost_margin", fmt(c.boost_margin)},
      {"cdep.frozen_prefix", std::to_string(c.frozen_prefix)},
      {"decoy.patch", std::to_string(c.decoy.patch)},
      {"decoy.shade_low", fmt(c.decoy.shade_low)},
      {"decoy.shade_span", fmt(c.decoy.shade_span)},
      {"training.early_stop_patience", std::to_string(c.early_stop_patience)},
      {"training.class_weights", c.balanced_class_weights ? "balanced" : "none"},
      {"training.init_checkpoint", c.init_checkpoint},
      {"output.dir", c.out_dir},
  };
  if (c.seed) kv["experiment.seed"] = std::to_string(*c.seed);
  return kv;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : to_key_values(c)) j[k] = v;
  return j;
}

}  // namespace cdep
