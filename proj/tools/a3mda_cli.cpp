/* Copyright 2026 The A3MDA Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// a3mda: generate tasks, train, evaluate, run ablations and gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "a3mda/bench.hpp"
#include "a3mda/gradsuite.hpp"

namespace fs = std::filesystem;
using namespace a3mda;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::vector<std::string> overrides;
};

ExperimentConfig load(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  if (!fs::exists(c.config)) throw ConfigError("config file '" + c.config + "' does not exist");
  ExperimentConfig cfg = load_config(c.config);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.mode.empty()) cfg.prediction = PredictionSpec::parse(c.mode);
  cfg.validate();
  if (cfg.data_manifest.empty()) throw ConfigError(c.config + ": data.manifest is not set");
  if (!fs::exists(cfg.data_manifest)) {
    throw DataError("manifest '" + cfg.data_manifest + "' does not exist (run `a3mda gen` first)");
  }
  return cfg;
}

void add_config_flags(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config file")->required();
  app->add_option("--seed", c.seed, "Override train.seed");
  app->add_option("--set", c.overrides, "Override any config key, e.g. --set train.epochs=20");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_gen(const std::string& out, std::optional<std::uint64_t> seed, const std::string& task,
            const std::string& base) {
  TaskSpec spec = task == "control" ? control_task() : default_task();
  if (task != "control" && task != "default") throw ConfigError("unknown task '" + task + "'");
  if (!base.empty()) spec.base = parse_base(base);
  if (seed) spec.seed = *seed;
  const std::string manifest = write_task(generate_task(spec), out);
  std::cout << "wrote " << manifest << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const TrainingData data = load_task(cfg.data_manifest);
  const LabeledSet truth = load_target_labels(cfg.data_manifest);
  const std::string out = c.out.empty() ? "runs/train" : c.out;
  const ExperimentResult res = run_experiment(cfg, data, truth, out);
  for (const auto& m : res.train.metrics) {
    std::cout << "epoch " << m.epoch << " loss " << fmt(m.l_total) << " acc " << fmt(m.target_acc)
              << " pl_rate " << fmt(m.pl_rate) << '\n';
  }
  std::cout << "final " << cfg.prediction.str() << " accuracy "
            << fmt(res.final_accuracy.at(cfg.prediction.str())) << " (" << fmt(res.seconds)
            << " s), outputs in " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_arg, const Common& c) {
  std::string manifest = manifest_arg;
  if (manifest.empty()) {
    if (c.config.empty()) throw ConfigError("eval needs --manifest or --config");
    if (!fs::exists(c.config)) throw ConfigError("config file '" + c.config + "' does not exist");
    manifest = load_config(c.config).data_manifest;
  }
  if (!fs::exists(checkpoint)) throw DataError("checkpoint '" + checkpoint + "' does not exist");
  if (!fs::exists(manifest)) throw DataError("manifest '" + manifest + "' does not exist");
  const ModelState model = load_checkpoint(checkpoint);
  const LabeledSet truth = load_target_labels(manifest);
  const PredictionSpec mode = PredictionSpec::parse(c.mode.empty() ? "weighted" : c.mode);
  const EvalResult r = evaluate(model, truth, mode);
  std::cout << "mode " << mode.str() << " accuracy " << fmt(r.accuracy) << '\n';
  std::cout << "confusion (rows = true class):\n";
  for (const auto& row : r.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) std::cout << (j ? " " : "  ") << row[j];
    std::cout << '\n';
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& preset, const std::vector<std::uint64_t>& seeds) {
  const ExperimentConfig cfg = load(c);
  const TrainingData data = load_task(cfg.data_manifest);
  const LabeledSet truth = load_target_labels(cfg.data_manifest);
  const auto variants = ablation_preset(preset, data.sources.size());
  const std::vector<std::uint64_t> s = seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;
  const auto rows = run_ablation(cfg, data, truth, variants, s, [](const AblationRow& r) {
    std::cout << r.variant << " seed " << r.seed << ": "
              << (r.error.empty() ? fmt(r.accuracy) : "failed: " + r.error) << std::endl;
  });
  const std::string out = c.out.empty() ? "runs/ablate-" + preset : c.out;
  fs::create_directories(out);
  std::ofstream table(fs::path(out) / "table.csv", std::ios::binary);
  write_ablation_table(table, rows);
  std::ofstream summary(fs::path(out) / "summary.csv", std::ios::binary);
  const auto sums = summarize(rows);
  write_ablation_summary(summary, sums);
  std::cout << "\nvariant, mean accuracy +- std\n";
  for (const auto& s2 : sums) std::cout << s2.variant << ", " << fmt(s2.mean) << " +- " << fmt(s2.std) << '\n';
  bool failed = false;
  for (const auto& r : rows) failed |= !r.error.empty();
  return failed ? 1 : 0;
}

int cmd_gradcheck(std::optional<std::uint64_t> seed, double step, double tolerance) {
  ExperimentConfig cfg = gradcheck_toy_config();
  if (seed) cfg.seed = *seed;
  const GradSuite suite = run_gradcheck_suite(cfg, 3, 2, step);
  std::cout << "toy model: " << suite.parameters << " parameters\n";
  for (const auto& e : suite.entries) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-10s max rel error %.3e over %zu coordinates", e.loss.c_str(),
                  e.report.max_rel_error, e.report.coordinates);
    std::cout << buf << '\n';
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", suite.max_rel_error());
  std::cout << "max relative error " << buf << '\n';
  return suite.max_rel_error() <= tolerance ? 0 : 1;
}

int cmd_snapshot(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const TrainingData data = load_task(cfg.data_manifest);
  const TrainResult r = train(cfg, data);
  const std::string out = c.out.empty() ? "hardness_memory.csv" : c.out;
  fs::path path(out);
  if (fs::is_directory(path)) path /= "hardness_memory.csv";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  r.hardness.smooth.write_csv(os);
  std::cout << "wrote " << path.string() << " (" << r.hardness.smooth.snapshot().size()
            << " samples after " << r.metrics.size() << " epochs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-hardness multi-source domain adaptation lab"};
  app.require_subcommand(1);

  Common c;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_task = "default", gen_base, checkpoint, manifest, preset = "ladder";
  std::vector<std::uint64_t> seeds;
  double step = 1e-5, tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic multi-source task");
  gen->add_option("--out", c.out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--task", gen_task, "default | control");
  gen->add_option("--base", gen_base, "gaussian-mixture | two-moons");

  auto* tr = app.add_subcommand("train", "Train one configuration");
  add_config_flags(tr, c);
  tr->add_option("--out", c.out, "Output directory (metrics.csv, summary.json, checkpoints)");
  tr->add_option("--mode", c.mode, "Prediction mode: weighted | average | source-m");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the target domain");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--config", c.config, "Config whose data.manifest names the task");
  ev->add_option("--manifest", manifest, "Task manifest (instead of --config)");
  ev->add_option("--mode", c.mode, "Prediction mode: weighted | average | source-m");

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  add_config_flags(ab, c);
  ab->add_option("--preset", preset, "ladder | ahm-swap | prediction-modes");
  ab->add_option("--seeds", seeds, "Seeds (default: the config seed)")->delimiter(',');
  ab->add_option("--out", c.out, "Output directory (table.csv, summary.csv)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss on a toy model");
  gc->add_option("--seed", gen_seed, "Toy model seed");
  gc->add_option("--step", step, "Central difference step");
  gc->add_option("--tolerance", tolerance, "Maximum accepted relative error");

  auto* sh = app.add_subcommand("snapshot-hardness", "Train and dump the hardness memory");
  add_config_flags(sh, c);
  sh->add_option("--out", c.out, "Output CSV file or directory");

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == gen) return cmd_gen(c.out, gen_seed, gen_task, gen_base);
    if (active == tr) return cmd_train(c);
    if (active == ev) return cmd_eval(checkpoint, manifest, c);
    if (active == ab) return cmd_ablate(c, preset, seeds);
    if (active == gc) return cmd_gradcheck(gen_seed, step, tolerance);
    if (active == sh) return cmd_snapshot(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  }
  return 1;
}
