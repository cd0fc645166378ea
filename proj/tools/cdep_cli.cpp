// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: build-data, train, sweep, eval, bench.
// Exit status: 0 success, 2 usage or configuration error, 3 data or file
// error, 1 anything else (including a non-finite training loss).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cdep/config.hpp"
#include "cdep/container.hpp"
#include "cdep/experiment.hpp"

namespace {

using namespace cdep;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Sources {
  std::string config_file;
  std::vector<std::string> sets;
  KeyValues flags;
};

const std::vector<std::pair<const char*, const char*>> kFlags = {
    {"--dataset", "experiment.dataset"},
    {"--method", "experiment.method"},
    {"--model", "experiment.model"},
    {"--mlp-hidden", "experiment.mlp_hidden"},
    {"--lambda", "experiment.lambda"},
    {"--seed", "experiment.seed"},
    {"--epochs", "experiment.epochs"},
    {"--batch-size", "experiment.batch_size"},
    {"--optimizer", "optimizer.kind"},
    {"--lr", "optimizer.lr"},
    {"--momentum", "optimizer.momentum"},
    {"--weight-decay", "optimizer.weight_decay"},
    {"--data-root", "data.root"},
    {"--compas-csv", "data.compas_csv"},
    {"--train-subsample", "data.train_subsample"},
    {"--val-subsample", "data.val_subsample"},
    {"--test-subsample", "data.test_subsample"},
    {"--score-mode", "cdep.score_mode"},
    {"--k-pixels", "cdep.k_pixels"},
    {"--boost-margin", "cdep.boost_margin"},
    {"--frozen-prefix", "cdep.frozen_prefix"},
    {"--early-stop-patience", "training.early_stop_patience"},
    {"--class-weights", "training.class_weights"},
    {"--init-checkpoint", "training.init_checkpoint"},
    {"--out", "output.dir"},
};

std::string describe(const std::string& key) {
  for (const auto& [k, d] : config_schema()) {
    if (k == key) return d + " [" + key + "]";
  }
  return key;
}

void add_config_options(CLI::App* app, Sources& src, bool seed_required) {
  app->add_option("--config", src.config_file, "sectioned key=value config file");
  app->add_option("--set", src.sets, "override any config key: section.key=value");
  for (const auto& [flag, key] : kFlags) {
    const std::string k = key;
    CLI::Option* opt = app->add_option_function<std::string>(
        flag, [&src, k](const std::string& v) { src.flags[k] = v; }, describe(k));
    if (seed_required && k == "experiment.seed") opt->required();
  }
}

ExperimentConfig resolve(const Sources& src) {
  const KeyValues file = src.config_file.empty() ? KeyValues{} : read_config_file(src.config_file);
  KeyValues over = src.flags;
  for (const std::string& s : src.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    over[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return resolve_config(file, over);
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--lambdas: '" + item + "' is not a number");
    }
  }
  return out;
}

void print_report(const char* label, const EvalReport& r) {
  std::printf("%s accuracy %.4f", label, r.accuracy);
  if (r.auc && r.positive_class == 1) std::printf("  auc %.4f  f1 %.4f", *r.auc, r.f1);
  for (const auto& [g, s] : r.groups) std::printf("  wcr_%s %.4f", g.c_str(), s.wcr);
  std::printf("\n");
}

int run(int argc, char** argv) {
  CLI::App app{"Contextual decomposition explanation penalization experiments"};
  app.require_subcommand(1);

  Sources build_src, train_src, sweep_src, bench_src;
  CLI::App* build = app.add_subcommand("build-data", "build and cache the dataset splits");
  add_config_options(build, build_src, false);
  CLI::App* train_cmd = app.add_subcommand("train", "train one model and write its run directory");
  add_config_options(train_cmd, train_src, true);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train one model per lambda and select the best");
  add_config_options(sweep_cmd, sweep_src, true);
  std::string lambdas;
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambda grid")->required();
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
  std::string checkpoint, eval_root;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
  eval_cmd->add_option("--data-root", eval_root, "dataset root override");
  CLI::App* bench_cmd = app.add_subcommand("bench", "time and memory per method");
  add_config_options(bench_cmd, bench_src, false);
  std::size_t steps = 20;
  bench_cmd->add_option("--steps", steps, "timed steps per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\nerror: " << e.what() << "\n";
    return kExitConfig;
  }

  if (build->parsed()) {
    const ExperimentConfig c = resolve(build_src);
    const PreparedData d = prepare_data(c);
    std::printf("%s: train %zu, val %zu, test %zu\n", dataset_name(c.dataset).c_str(),
                d.train.size(), d.val.size(), d.test.size());
    for (const std::string& f : d.cache_files) std::printf("cached %s\n", f.c_str());
    if (d.train.bias_masks.defined()) {
      std::filesystem::create_directories(c.out_dir);
      const std::string masks = (std::filesystem::path(c.out_dir) / "train_masks.txt").string();
      write_mask_file(masks, d.train.bias_masks);
      std::printf("masks %s\n", masks.c_str());
    }
  } else if (train_cmd->parsed()) {
    const ExperimentConfig c = resolve(train_src);
    const RunResult r = train(c);
    for (const EpochRecord& e : r.epochs) {
      std::printf("epoch %zu  pred %.4f  expl %.4g  %.1fs  val acc %.4f  test acc %.4f\n", e.epoch,
                  e.pred_err, e.expl_err, e.seconds, e.val.accuracy, e.test.accuracy);
    }
    std::printf("best epoch %zu%s\n", r.best_epoch, r.stopped_early ? " (stopped early)" : "");
    print_report("test", r.best_test);
    std::printf("wrote %s/{manifest.json,metrics.csv,best.ckpt}\n", c.out_dir.c_str());
  } else if (sweep_cmd->parsed()) {
    const ExperimentConfig c = resolve(sweep_src);
    const SweepResult s = sweep(c, parse_lambdas(lambdas));
    for (std::size_t i = 0; i < s.lambdas.size(); ++i) {
      std::printf("lambda %-10g val acc %.4f  test acc %.4f%s\n", s.lambdas[i],
                  s.runs[i].best_val.accuracy, s.runs[i].best_test.accuracy,
                  i == s.best ? "  *" : "");
    }
    std::printf("wrote %s/{sweep.csv,sweep.json}\n", c.out_dir.c_str());
  } else if (eval_cmd->parsed()) {
    const EvalReport r = eval_checkpoint(checkpoint, eval_root);
    std::printf("%s\n", to_json(r).dump(2).c_str());
  } else if (bench_cmd->parsed()) {
    const ExperimentConfig c = resolve(bench_src);
    const BenchResult b = bench(c, steps);
    for (const BenchRow& r : b.rows) {
      std::printf("%-12s batches %2zu  %.4f s/step  %.2f s/epoch  peak %zu B\n", r.method.c_str(),
                  r.batches, r.seconds_per_step, r.seconds_per_epoch, r.peak_bytes);
    }
    std::printf("cdep/vanilla time %.2f  frozen/cdep time %.2f  overhead slope %.1f B/batch\n",
                b.time_ratio, b.frozen_ratio, b.overhead_slope);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cdep::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cdep::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const cdep::IoError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
