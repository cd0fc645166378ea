// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cdep/cd.hpp"
#include "cdep/container.hpp"
#include "cdep/objective.hpp"
#include "cdep/optim.hpp"
#include "cdep/random.hpp"
#include "cdep/rrr.hpp"

namespace cdep {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kMnistTrainRows = 60000;
constexpr std::size_t kChunk = 256;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::uint64_t require_seed(const ExperimentConfig& c) {
  if (!c.seed) throw ConfigError("experiment.seed is required for training");
  return *c.seed;
}

bool is_mnist(const ExperimentConfig& c) { return c.dataset != DatasetKind::kCompas; }

LabeledDataset limit(const LabeledDataset& d, std::size_t n) {
  return n == 0 || n >= d.size() ? d : d.head(n);
}

LabeledDataset mnist_file(const std::string& root, const std::string& stem) {
  const fs::path dir = fs::path(root) / "mnist";
  const fs::path images = dir / (stem + "-images-idx3-ubyte");
  const fs::path labels = dir / (stem + "-labels-idx1-ubyte");
  if (!fs::exists(images) || !fs::exists(labels)) {
    throw DataError("MNIST files not found under " + dir.string() +
                    " (expected " + images.filename().string() + " and " +
                    labels.filename().string() + "; run tools/fetch_data.sh or set --data-root)");
  }
  return load_mnist_idx(images.string(), labels.string());
}

PreparedData build_mnist(const ExperimentConfig& c, std::uint64_t seed) {
  const std::string root = data_root(c.data_root);
  const LabeledDataset train_file = mnist_file(root, "train");
  if (train_file.size() != kMnistTrainRows) {
    throw DataError("MNIST train file has " + std::to_string(train_file.size()) + " rows, expected " +
                    std::to_string(kMnistTrainRows));
  }
  const std::size_t pool = kMnistTrainRows - kMnistValidationRows;
  const LabeledDataset train_gray = limit(train_file.head(pool), c.train_subsample);
  const LabeledDataset val_gray =
      limit(train_file.range(pool, kMnistValidationRows), c.val_subsample);
  const LabeledDataset test_gray = limit(mnist_file(root, "t10k"), c.test_subsample);

  PreparedData d;
  if (c.dataset == DatasetKind::kDecoyMnist) {
    d.train = make_decoy_mnist(train_gray, Phase::kTrain, seed, c.decoy);
    d.val = make_decoy_mnist(val_gray, Phase::kTest, seed + 1, c.decoy);
    d.test = make_decoy_mnist(test_gray, Phase::kTest, seed + 2, c.decoy);
  } else {
    const Palette palette = default_palette();
    d.train = make_color_mnist(train_gray, palette, Phase::kTrain);
    d.val = make_color_mnist(val_gray, palette, Phase::kTest);
    d.test = make_color_mnist(test_gray, palette, Phase::kTest);
  }
  d.train.split = "train";
  d.val.split = "val";
  d.test.split = "test";
  return d;
}

std::string cache_key(const ExperimentConfig& c, std::uint64_t seed) {
  std::ostringstream k;
  k << dataset_name(c.dataset) << "|v1|train=" << c.train_subsample << "|val=" << c.val_subsample
    << "|test=" << c.test_subsample;
  if (c.dataset == DatasetKind::kDecoyMnist) {
    k << "|seed=" << seed << "|patch=" << c.decoy.patch << "|low=" << fmt(c.decoy.shade_low)
      << "|span=" << fmt(c.decoy.shade_span);
  }
  return k.str();
}

std::size_t positive_class(const LabeledDataset& d) { return d.n_classes == 2 ? 1 : 0; }

EvalReport evaluate_split(const Network& net, const LabeledDataset& d) {
  return evaluate(net, d, positive_class(d), d.n_classes == 2);
}

std::vector<double> balanced_weights(const LabeledDataset& d) {
  std::vector<double> count(d.n_classes, 0.0);
  for (std::size_t y : d.labels) count[y] += 1.0;
  std::vector<double> w(d.n_classes, 1.0);
  for (std::size_t k = 0; k < d.n_classes; ++k) {
    if (count[k] > 0.0) {
      w[k] = static_cast<double>(d.size()) / (static_cast<double>(d.n_classes) * count[k]);
    }
  }
  return w;
}

// Layers before the last two parameterized layers.
std::size_t default_frozen_prefix(const Network& net) {
  std::vector<std::size_t> with_params;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.layers()[i].weight.defined()) with_params.push_back(i);
  }
  return with_params.size() < 2 ? 0 : with_params[with_params.size() - 2];
}

CDState gather_state(const CDState& s, std::span<const std::size_t> rows) {
  return {gather_rows(s.beta, rows), gather_rows(s.gamma, rows), gather_rows(s.coverage, rows)};
}

// Performs optimizer steps for one configuration. Random streams: kDropout
// for dropout masks, kTargets for sampled pixel groups.
class Stepper {
 public:
  Stepper(const ExperimentConfig& c, const PreparedData& d, Network& net, std::uint64_t seed)
      : c_(c),
        d_(d),
        net_(net),
        dropout_rng_(make_rng(seed, Stream::kDropout)),
        target_rng_(make_rng(seed, Stream::kTargets)) {
    opts_.lambda = c.method == Method::kVanilla ? 0.0 : c.lambda;
    opts_.score_mode = c.score_mode;
    if (c.balanced_class_weights) opts_.class_weights = balanced_weights(d.train);
    if (c.dataset == DatasetKind::kCompas) {
      boost_ = make_boost_target(d.race_columns, d.train.sample_shape().at(0), c.boost_margin);
    }
    optimizer_ = std::make_unique<Optimizer>(c.optimizer, net.trainable_parameters());
  }

  // Caches the frozen-boundary activations, and CD states for fixed groups,
  // of the given training rows (all rows when empty).
  void cache_boundary(std::vector<std::size_t> rows = {}) {
    if (net_.frozen_prefix() == 0) return;
    if (rows.empty()) {
      rows.resize(d_.train.size());
      std::iota(rows.begin(), rows.end(), 0);
    }
    cache_pos_.assign(d_.train.size(), SIZE_MAX);
    NoGradGuard no_grad;
    const bool fixed = c_.method == Method::kCdep && c_.dataset != DatasetKind::kColorMnist;
    std::vector<Tensor> xs, betas, gammas, covs;
    for (std::size_t s = 0; s < rows.size(); s += kChunk) {
      const std::span<const std::size_t> part(rows.data() + s, std::min(kChunk, rows.size() - s));
      const Tensor x = gather_rows(d_.train.inputs, part);
      xs.push_back(forward_range(net_, x, 0, net_.frozen_prefix()));
      if (fixed) {
        const CDState st = cd_frozen_prefix(net_, x, batch_group(part));
        betas.push_back(st.beta);
        gammas.push_back(st.gamma);
        covs.push_back(st.coverage);
      }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) cache_pos_[rows[i]] = i;
    boundary_x_ = concat(xs, 0);
    if (fixed) cached_ = CDState{concat(betas, 0), concat(gammas, 0), concat(covs, 0)};
  }

  LossReport step(std::span<const std::size_t> rows) {
    const std::vector<std::size_t> labels = gather_labels(rows);
    DropoutMasks masks;
    if (net_.has_dropout()) {
      masks = sample_dropout_masks(net_, rows.size(), dropout_rng_);
      opts_.dropout = &masks;
    } else {
      opts_.dropout = nullptr;
    }
    LossReport r;
    if (c_.method == Method::kRrr) {
      const Tensor x = gather_rows(d_.train.inputs, rows);
      r = rrr_loss(net_, x, labels, gather_rows(d_.train.bias_masks, rows), c_.lambda,
                   opts_.class_weights, opts_.dropout);
    } else {
      const std::vector<ExplanationTarget> targets = make_targets(rows);
      if (net_.frozen_prefix() > 0) {
        std::vector<std::size_t> pos(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) pos[i] = cache_pos_.at(rows[i]);
        const Tensor bx = gather_rows(boundary_x_, pos);
        std::vector<CDState> states;
        if (c_.method == Method::kCdep) {
          if (cached_.beta.defined()) {
            states.push_back(gather_state(cached_, pos));
          } else {
            const Tensor x = gather_rows(d_.train.inputs, rows);
            NoGradGuard no_grad;
            for (const auto& t : targets) states.push_back(cd_frozen_prefix(net_, x, t.group));
          }
        }
        r = cdep_loss_from_boundary(net_, bx, labels, targets, states, opts_);
      } else {
        r = cdep_loss(net_, gather_rows(d_.train.inputs, rows), labels, targets, opts_);
      }
    }
    ++steps_;
    if (!std::isfinite(r.total_value)) throw NanLossError(steps_, r.total_value);
    const std::vector<Tensor> grads = grad(r.total, optimizer_->parameters());
    optimizer_->step(grads);
    return r;
  }

 private:
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = d_.train.labels[rows[i]];
    return out;
  }

  FeatureGroup batch_group(std::span<const std::size_t> rows) const {
    if (c_.dataset == DatasetKind::kCompas) return boost_.group;
    return {gather_rows(d_.train.bias_masks, rows)};
  }

  std::vector<ExplanationTarget> make_targets(std::span<const std::size_t> rows) {
    if (c_.method != Method::kCdep) return {};
    switch (c_.dataset) {
      case DatasetKind::kDecoyMnist:
        return make_suppress_targets(gather_rows(d_.train.bias_masks, rows));
      case DatasetKind::kColorMnist:
        return sample_pixel_targets(d_.pixel_distribution, d_.train.sample_shape(), c_.k_pixels,
                                    target_rng_);
      case DatasetKind::kCompas:
        return {boost_};
    }
    return {};
  }

  const ExperimentConfig& c_;
  const PreparedData& d_;
  Network& net_;
  Rng dropout_rng_;
  Rng target_rng_;
  LossOptions opts_;
  ExplanationTarget boost_;
  std::unique_ptr<Optimizer> optimizer_;
  Tensor boundary_x_;
  CDState cached_;
  std::vector<std::size_t> cache_pos_;
  std::size_t steps_ = 0;
};

Network make_network(const ExperimentConfig& c, const PreparedData& d, std::uint64_t seed) {
  Network net = c.init_checkpoint.empty() ? build_model(c, d.train, seed)
                                          : load_checkpoint(c.init_checkpoint);
  if (net.input_shape() != d.train.sample_shape()) {
    throw ConfigError("initial checkpoint expects input " + shape_str(net.input_shape()) +
                      ", data has " + shape_str(d.train.sample_shape()));
  }
  net.set_frozen_prefix(c.frozen_prefix);
  return net;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

void csv_metrics(std::ostringstream& out, std::size_t epoch, const char* split,
                 const EvalReport& r, std::size_t n_classes) {
  auto wcr = [&](const char* g) {
    const auto it = r.groups.find(g);
    return it == r.groups.end() ? std::string() : fmt(it->second.wcr);
  };
  const bool binary = n_classes == 2;
  out << epoch << ',' << split << ',' << fmt(r.accuracy) << ','
      << (binary && r.auc ? fmt(*r.auc) : "") << ',' << (binary ? fmt(r.f1) : "") << ','
      << wcr("black") << ',' << wcr("white") << ',' << fmt(r.loss) << ",\n";
}

double val_score(const ExperimentConfig& c, const EvalReport& val) {
  return c.dataset == DatasetKind::kCompas ? -val.loss : val.accuracy;
}

}  // namespace

NanLossError::NanLossError(std::size_t step, double value)
    : std::runtime_error("non-finite loss " + fmt(value) + " at step " + std::to_string(step)),
      step_(step) {}

PreparedData prepare_data(const ExperimentConfig& c, bool use_cache) {
  const std::uint64_t seed = c.seed.value_or(0);
  if (c.dataset == DatasetKind::kCompas) {
    std::string csv = c.compas_csv;
    if (csv.empty()) {
      csv = (fs::path(data_root(c.data_root)) / "compas" / "compas-scores-two-years.csv").string();
    }
    if (!fs::exists(csv)) {
      throw DataError("COMPAS CSV not found at " + csv +
                      " (download compas-scores-two-years.csv from the ProPublica compas-analysis"
                      " repository, or pass --compas-csv)");
    }
    CompasSplits s = load_compas(csv, seed);
    PreparedData d;
    d.train = std::move(s.train);
    d.val = std::move(s.val);
    d.test = std::move(s.test);
    d.race_columns = s.race_columns;
    return d;
  }

  PreparedData d;
  const std::string key = cache_key(c, seed);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  const fs::path dir = fs::path(data_root(c.data_root)) / "cache";
  const std::string stem = dataset_name(c.dataset) + "-" + hex;
  const fs::path files[3] = {dir / (stem + "-train.bin"), dir / (stem + "-val.bin"),
                             dir / (stem + "-test.bin")};
  bool loaded = false;
  if (use_cache && fs::exists(files[0]) && fs::exists(files[1]) && fs::exists(files[2])) {
    try {
      LabeledDataset* parts[3] = {&d.train, &d.val, &d.test};
      loaded = true;
      for (int i = 0; i < 3; ++i) {
        nlohmann::json extra;
        *parts[i] = load_dataset(files[i].string(), &extra);
        if (extra.value("key", "") != key) loaded = false;
      }
    } catch (const IoError&) {
      loaded = false;
    }
  }
  if (!loaded) {
    d = build_mnist(c, seed);
    if (use_cache) {
      try {
        fs::create_directories(dir);
        const LabeledDataset* parts[3] = {&d.train, &d.val, &d.test};
        for (int i = 0; i < 3; ++i) save_dataset(*parts[i], files[i].string(), {{"key", key}});
      } catch (const std::exception&) {
        // Read-only root: keep the in-memory splits.
        use_cache = false;
      }
    }
  }
  if (use_cache) {
    for (const auto& f : files) d.cache_files.push_back(f.string());
  }
  if (c.dataset == DatasetKind::kColorMnist) d.pixel_distribution = pixel_distribution(d.train);
  return d;
}

Network build_model(const ExperimentConfig& c, const LabeledDataset& train, std::uint64_t seed) {
  if (c.dataset == DatasetKind::kCompas) {
    return build_compas_mlp(train.sample_shape().at(0), seed);
  }
  if (c.model == "cnn") return build_mnist_cnn(train.sample_shape().at(0), seed);
  return build_mlp(train.sample_shape(), c.mlp_hidden, train.n_classes, seed);
}

nlohmann::json design_values(const ExperimentConfig& c) {
  nlohmann::json j;
  j["cd_epsilon"] = kCdEpsilon;
  j["cd_bias_split"] = "magnitude share, ties split by group coverage";
  j["batch_size"] = c.batch_size;
  j["optimizer"] = {{"kind", c.optimizer.kind},       {"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum}, {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},       {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["score_mode"] = score_mode_name(c.score_mode);
  j["checkpoint_selection"] = c.dataset == DatasetKind::kCompas ? "lowest validation loss"
                                                                 : "highest validation accuracy";
  if (is_mnist(c)) {
    j["pixel_scale"] = "byte / 255";
    j["train_pool"] = kMnistTrainRows - kMnistValidationRows;
    j["validation"] = "last " + std::to_string(kMnistValidationRows) +
                      " rows of the train file, built with test-phase construction";
  }
  if (c.dataset == DatasetKind::kDecoyMnist) {
    j["decoy"] = {{"patch", c.decoy.patch},
                  {"shade_low", c.decoy.shade_low},
                  {"shade_span", c.decoy.shade_span},
                  {"data_seeds", "train seed, val seed + 1, test seed + 2"}};
  }
  if (c.dataset == DatasetKind::kColorMnist) {
    j["palette"] = default_palette();
    j["k_pixels"] = c.k_pixels;
  }
  if (c.dataset == DatasetKind::kCompas) {
    j["split"] = "80/10/10 seeded permutation";
    j["boost_margin"] = c.boost_margin;
    j["race_filter"] = "black and white defendants";
  }
  return j;
}

std::string metrics_csv(const RunResult& r) {
  std::ostringstream out;
  out << "epoch,split,accuracy,auc,f1,wcr_black,wcr_white,pred_err,expl_err\n";
  for (const EpochRecord& e : r.epochs) {
    out << e.epoch << ",train,,,,,," << fmt(e.pred_err) << ',' << fmt(e.expl_err) << '\n';
    csv_metrics(out, e.epoch, "val", e.val, r.n_classes);
    csv_metrics(out, e.epoch, "test", e.test, r.n_classes);
  }
  return out.str();
}

RunResult train(const ExperimentConfig& c, const PreparedData* data) {
  const std::uint64_t seed = require_seed(c);
  PreparedData owned;
  if (!data) {
    owned = prepare_data(c);
    data = &owned;
  }
  const PreparedData& d = *data;
  const fs::path out = c.out_dir;
  fs::create_directories(out);

  Network net = make_network(c, d, seed);
  Stepper stepper(c, d, net, seed);
  const auto t_cache = Clock::now();
  stepper.cache_boundary();
  const double cache_seconds = seconds_since(t_cache);

  Rng shuffle_rng = make_rng(seed, Stream::kShuffle);
  RunResult r;
  r.n_classes = d.train.n_classes;
  double best = -INFINITY;
  double best_loss = INFINITY;
  std::size_t since_improved = 0;
  const nlohmann::json cfg = to_json(c);
  const fs::path ckpt = out / "best.ckpt";

  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffled(d.train.size(), shuffle_rng);
    memory::reset_peak();
    const auto t0 = Clock::now();
    EpochRecord e;
    e.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < perm.size(); s += c.batch_size) {
      const std::span<const std::size_t> rows(perm.data() + s,
                                              std::min(c.batch_size, perm.size() - s));
      const LossReport lr = stepper.step(rows);
      e.pred_err += lr.prediction_error;
      e.expl_err += lr.explanation_error;
      ++batches;
    }
    e.seconds = seconds_since(t0);
    e.peak_bytes = memory::peak_bytes();
    e.pred_err /= static_cast<double>(batches);
    e.expl_err /= static_cast<double>(batches);
    e.val = evaluate_split(net, d.val);
    e.test = evaluate_split(net, d.test);

    const double score = val_score(c, e.val);
    if (score > best) {
      best = score;
      r.best_epoch = epoch;
      r.best_val = e.val;
      r.best_test = e.test;
      const nlohmann::json extra = {{"config", cfg}, {"epoch", epoch}};
      save_checkpoint(net, ckpt.string(), extra.dump());
    }
    r.epochs.push_back(std::move(e));

    if (c.early_stop_patience > 0) {
      if (r.epochs.back().val.loss < best_loss) {
        best_loss = r.epochs.back().val.loss;
        since_improved = 0;
      } else if (++since_improved >= c.early_stop_patience) {
        r.stopped_early = epoch < c.epochs;
        break;
      }
    }
  }

  write_text(out / "metrics.csv", metrics_csv(r));

  nlohmann::json m;
  m["version"] = kVersion;
  m["config"] = cfg;
  m["design"] = design_values(c);
  m["parameter_count"] = net.parameter_count();
  m["data"] = {{"train", d.train.size()},
               {"val", d.val.size()},
               {"test", d.test.size()},
               {"cache_files", d.cache_files}};
  m["frozen_cache_seconds"] = cache_seconds;
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"pred_err", e.pred_err},
                      {"expl_err", e.expl_err},
                      {"seconds", e.seconds},
                      {"peak_bytes", e.peak_bytes},
                      {"val", to_json(e.val)},
                      {"test", to_json(e.test)}});
  }
  m["epochs"] = epochs;
  m["best_epoch"] = r.best_epoch;
  m["stopped_early"] = r.stopped_early;
  m["best_val"] = to_json(r.best_val);
  m["test"] = to_json(r.best_test);
  m["files"] = {{"metrics", "metrics.csv"}, {"checkpoint", "best.ckpt"}};
  r.manifest = m;
  write_text(out / "manifest.json", m.dump(2) + "\n");
  return r;
}

SweepResult sweep(const ExperimentConfig& c, const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ConfigError("sweep needs at least one lambda");
  for (double l : lambdas) {
    if (l != 0.0 && (l < 0.1 || l > 1e4)) {
      throw ConfigError("sweep lambda " + fmt(l) + " outside [0.1, 1e4]");
    }
  }
  require_seed(c);
  const PreparedData d = prepare_data(c);
  SweepResult s;
  s.lambdas = lambdas;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    ExperimentConfig ci = c;
    ci.lambda = lambdas[i];
    ci.out_dir = (fs::path(c.out_dir) / ("lambda_" + std::to_string(i))).string();
    s.runs.push_back(train(ci, &d));
    const double acc = s.runs.back().best_val.accuracy;
    const double best_acc = s.runs[s.best].best_val.accuracy;
    if (acc > best_acc || (acc == best_acc && lambdas[i] < lambdas[s.best])) s.best = i;
  }

  std::ostringstream csv;
  csv << "lambda,best_epoch,val_accuracy,test_accuracy,test_auc,wcr_black,wcr_white,selected\n";
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const RunResult& r = s.runs[i];
    auto wcr = [&](const char* g) {
      const auto it = r.best_test.groups.find(g);
      return it == r.best_test.groups.end() ? std::string() : fmt(it->second.wcr);
    };
    const bool binary = r.n_classes == 2;
    csv << fmt(lambdas[i]) << ',' << r.best_epoch << ',' << fmt(r.best_val.accuracy) << ','
        << fmt(r.best_test.accuracy) << ','
        << (binary && r.best_test.auc ? fmt(*r.best_test.auc) : "") << ',' << wcr("black") << ','
        << wcr("white") << ',' << (i == s.best ? 1 : 0) << '\n';
    runs.push_back({{"lambda", lambdas[i]},
                    {"dir", "lambda_" + std::to_string(i)},
                    {"best_epoch", r.best_epoch},
                    {"val", to_json(r.best_val)},
                    {"test", to_json(r.best_test)}});
  }
  write_text(fs::path(c.out_dir) / "sweep.csv", csv.str());
  const nlohmann::json j = {{"config", to_json(c)},
                            {"lambdas", lambdas},
                            {"selection", "highest validation accuracy, ties to the smaller lambda"},
                            {"best_lambda", lambdas[s.best]},
                            {"runs", runs}};
  write_text(fs::path(c.out_dir) / "sweep.json", j.dump(2) + "\n");
  return s;
}

EvalReport eval_checkpoint(const std::string& checkpoint_path, const std::string& root) {
  std::string extra;
  const Network net = load_checkpoint(checkpoint_path, &extra);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(extra);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + checkpoint_path + " has a malformed header: " + e.what());
  }
  if (!j.contains("config")) throw IoError("checkpoint " + checkpoint_path + " records no config");
  KeyValues kv;
  for (const auto& [k, v] : j.at("config").items()) kv[k] = v.get<std::string>();
  KeyValues over;
  if (!root.empty()) over["data.root"] = root;
  const ExperimentConfig c = resolve_config(kv, over);
  const PreparedData d = prepare_data(c);
  return evaluate_split(net, d.test);
}

BenchResult bench(const ExperimentConfig& base, std::size_t steps) {
  if (steps == 0) throw ConfigError("bench needs at least one step");
  ExperimentConfig c = base;
  if (!c.seed) c.seed = 0;
  const std::uint64_t seed = *c.seed;
  if (c.method == Method::kVanilla && c.lambda == 0.0) c.lambda = 1.0;
  const PreparedData d = prepare_data(c);
  const std::size_t per_epoch = (d.train.size() + c.batch_size - 1) / c.batch_size;
  if (d.train.size() < c.batch_size * std::max<std::size_t>(steps, 3)) {
    throw ConfigError("bench needs at least " + std::to_string(c.batch_size * std::max<std::size_t>(steps, 3)) +
                      " training rows");
  }

  BenchResult res;
  struct Variant {
    std::string name;
    Method method;
    bool frozen;
  };
  std::vector<Variant> variants = {{"vanilla", Method::kVanilla, false},
                                   {"cdep", Method::kCdep, false},
                                   {"cdep_frozen", Method::kCdep, true}};
  if (c.dataset == DatasetKind::kDecoyMnist && c.model == "mlp") {
    variants.push_back({"rrr", Method::kRrr, false});
  }

  std::vector<std::size_t> rows(c.batch_size * std::max<std::size_t>(steps, 3));
  std::iota(rows.begin(), rows.end(), 0);

  auto run = [&](const Variant& v, std::size_t n_steps, BenchRow& row) {
    ExperimentConfig cv = c;
    cv.method = v.method;
    Network net = make_network(cv, d, seed);
    if (v.frozen) {
      res.frozen_prefix = c.frozen_prefix > 0 ? c.frozen_prefix : default_frozen_prefix(net);
      net.set_frozen_prefix(res.frozen_prefix);
    } else {
      net.set_frozen_prefix(0);
    }
    Stepper stepper(cv, d, net, seed);
    stepper.cache_boundary(std::vector<std::size_t>(rows.begin(),
                                                    rows.begin() + n_steps * c.batch_size));
    memory::reset_peak();
    const std::size_t baseline = memory::current_bytes();
    const auto t0 = Clock::now();
    for (std::size_t s = 0; s < n_steps; ++s) {
      stepper.step(std::span<const std::size_t>(rows.data() + s * c.batch_size, c.batch_size));
    }
    row.method = v.name;
    row.batches = n_steps;
    row.seconds_per_step = seconds_since(t0) / static_cast<double>(n_steps);
    row.seconds_per_epoch = row.seconds_per_step * static_cast<double>(per_epoch);
    row.peak_bytes = memory::peak_bytes() - baseline;
  };

  std::map<std::string, double> timing;
  for (const Variant& v : variants) {
    BenchRow row;
    run(v, steps, row);
    timing[v.name] = row.seconds_per_step;
    res.rows.push_back(row);
  }
  res.time_ratio = timing["cdep"] / timing["vanilla"];
  res.frozen_ratio = timing["cdep_frozen"] / timing["cdep"];

  std::vector<double> xs;
  for (std::size_t k = 1; k <= 3; ++k) {
    BenchRow rv, rc;
    run(variants[0], k, rv);
    run(variants[1], k, rc);
    res.rows.push_back(rv);
    res.rows.push_back(rc);
    xs.push_back(static_cast<double>(k));
    res.overhead_bytes.push_back(static_cast<double>(rc.peak_bytes) -
                                 static_cast<double>(rv.peak_bytes));
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / 3.0;
  const double my =
      std::accumulate(res.overhead_bytes.begin(), res.overhead_bytes.end(), 0.0) / 3.0;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    sxy += (xs[i] - mx) * (res.overhead_bytes[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  res.overhead_slope = sxy / sxx;

  const fs::path out = c.out_dir;
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "method,batches,seconds_per_step,seconds_per_epoch,peak_bytes\n";
  for (const BenchRow& r : res.rows) {
    csv << r.method << ',' << r.batches << ',' << fmt(r.seconds_per_step) << ','
        << fmt(r.seconds_per_epoch) << ',' << r.peak_bytes << '\n';
  }
  write_text(out / "bench.csv", csv.str());
  const nlohmann::json j = {{"config", to_json(c)},
                            {"steps", steps},
                            {"steps_per_epoch", per_epoch},
                            {"time_ratio", res.time_ratio},
                            {"frozen_ratio", res.frozen_ratio},
                            {"frozen_prefix", res.frozen_prefix},
                            {"overhead_bytes", res.overhead_bytes},
                            {"overhead_slope_bytes_per_batch", res.overhead_slope}};
  write_text(out / "bench.json", j.dump(2) + "\n");
  return res;
}

}  // namespace cdep
