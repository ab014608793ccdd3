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

// Synthetic multi-source tasks, their on-disk form, and the experiment /
// ablation harness.

#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "a3mda/config.hpp"
#include "a3mda/pipeline.hpp"
#include "a3mda/rng.hpp"

namespace a3mda {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DomainRole { kSource, kTarget };
enum class BaseDistribution { kGaussianMixture, kTwoMoons };

inline std::string to_string(BaseDistribution b) {
  return b == BaseDistribution::kGaussianMixture ? "gaussian-mixture" : "two-moons";
}

inline BaseDistribution parse_base(const std::string& s) {
  if (s == "gaussian-mixture") return BaseDistribution::kGaussianMixture;
  if (s == "two-moons") return BaseDistribution::kTwoMoons;
  throw DataError("unknown base distribution '" + s + "'");
}

/// How one domain is derived from the shared base distribution:
/// x' = R(rotation) (scale * x) + translation + class_shift * u_k + noise * N(0, I),
/// with u_k the unit vector at angle 2 pi k / K + shift_phase in the first
/// two coordinates.
struct DomainSpec {
  std::string name;
  DomainRole role = DomainRole::kSource;
  double rotation_deg = 0.0;
  std::vector<double> translation;  // empty = zero
  std::vector<double> scale;        // empty = ones
  double class_shift = 0.0;
  double shift_phase_deg = 0.0;
  double noise = 0.0;
  std::size_t samples_per_class = 200;
};

struct TaskSpec {
  std::size_t input_dim = 2;
  std::size_t num_classes = 4;
  BaseDistribution base = BaseDistribution::kGaussianMixture;
  double base_radius = 3.0;  // distance of class centres from the origin
  double base_spread = 0.9;  // per-coordinate std of each class (mixture)
  std::uint64_t seed = 7;
  std::vector<DomainSpec> domains;  // sources first, exactly one target

  std::size_t num_sources() const {
    std::size_t n = 0;
    for (const auto& d : domains) n += d.role == DomainRole::kSource;
    return n;
  }

  void validate() const {
    if (num_classes < 2) throw DataError("task needs K >= 2");
    if (input_dim < 2) throw DataError("task needs D >= 2");
    std::size_t targets = 0;
    for (const auto& d : domains) {
      if (d.role == DomainRole::kTarget) ++targets;
      if (d.samples_per_class == 0) throw DataError("domain " + d.name + " has zero samples");
      if (!d.translation.empty() && d.translation.size() != input_dim) {
        throw DataError("domain " + d.name + ": translation has wrong length");
      }
      if (!d.scale.empty() && d.scale.size() != input_dim) {
        throw DataError("domain " + d.name + ": scale has wrong length");
      }
      if (d.noise < 0.0) throw DataError("domain " + d.name + ": negative noise");
    }
    if (targets != 1) throw DataError("task needs exactly one target domain");
    if (num_sources() < 1) throw DataError("task needs at least one source domain");
    if (domains.back().role != DomainRole::kTarget) throw DataError("target domain must come last");
  }
};

/// K=4, D=2, three sources at 0/25/-20 degrees with per-class shifts, target
/// at 40 degrees, 200 samples per class per domain.
inline TaskSpec default_task() {
  TaskSpec t;
  t.input_dim = 2;
  t.num_classes = 4;
  t.seed = 7;
  auto dom = [](std::string name, DomainRole role, double rot, double shift, double phase,
                std::vector<double> tr) {
    DomainSpec d;
    d.name = std::move(name);
    d.role = role;
    d.rotation_deg = rot;
    d.class_shift = shift;
    d.shift_phase_deg = phase;
    d.translation = std::move(tr);
    d.noise = 0.1;
    d.samples_per_class = 200;
    return d;
  };
  t.domains = {dom("s1", DomainRole::kSource, 0.0, 0.5, 0.0, {0.0, 0.0}),
               dom("s2", DomainRole::kSource, 25.0, 0.5, 90.0, {0.5, -0.5}),
               dom("s3", DomainRole::kSource, -20.0, 0.5, 180.0, {-0.5, 0.5}),
               dom("t", DomainRole::kTarget, 40.0, 0.0, 0.0, {0.0, 0.0})};
  return t;
}

/// All domains are the base distribution untouched.
inline TaskSpec control_task(std::size_t sources = 2, std::size_t per_class = 50) {
  TaskSpec t;
  for (std::size_t m = 0; m < sources; ++m) {
    DomainSpec d;
    d.name = "s" + std::to_string(m + 1);
    d.samples_per_class = per_class;
    t.domains.push_back(d);
  }
  DomainSpec d;
  d.name = "t";
  d.role = DomainRole::kTarget;
  d.samples_per_class = per_class;
  t.domains.push_back(d);
  return t;
}

namespace detail {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// One draw from class k of the base distribution. Consumes D normals and
/// one uniform whatever the base, so domain streams stay aligned.
inline std::vector<double> base_sample(const TaskSpec& t, std::size_t k, Rng& rng) {
  const std::size_t D = t.input_dim;
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(t.num_classes);
  std::vector<double> z(D);
  for (double& v : z) v = normal01(rng);
  const double u = uniform01(rng);
  std::vector<double> x(D, 0.0);
  if (t.base == BaseDistribution::kGaussianMixture) {
    x[0] = t.base_radius * std::cos(angle);
    x[1] = t.base_radius * std::sin(angle);
    for (std::size_t j = 0; j < D; ++j) x[j] += t.base_spread * z[j];
  } else {
    // Half-moon of radius base_radius / 2 opening towards the origin, centred
    // on the class direction.
    const double r = 0.5 * t.base_radius;
    const double a = angle + std::numbers::pi * (u - 0.5);
    x[0] = t.base_radius * std::cos(angle) - r * std::cos(angle) + r * std::cos(a);
    x[1] = t.base_radius * std::sin(angle) - r * std::sin(angle) + r * std::sin(a);
    const double s = 0.25 * t.base_spread;
    for (std::size_t j = 0; j < D; ++j) x[j] += s * z[j];
  }
  return x;
}

}  // namespace detail

/// Samples one domain: class-balanced, classes interleaved (row i has label
/// i mod K).
inline DomainData generate_domain(const TaskSpec& t, std::size_t index) {
  const DomainSpec& d = t.domains.at(index);
  const std::size_t D = t.input_dim;
  const std::size_t K = t.num_classes;
  const std::size_t n = d.samples_per_class * K;
  Rng rng = make_rng({t.seed, index, 0x47454EULL});
  const double th = detail::deg2rad(d.rotation_deg);
  const double c = std::cos(th), s = std::sin(th);
  DomainData out;
  out.features = Tensor(n, D);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % K;
    std::vector<double> x = detail::base_sample(t, k, rng);
    for (std::size_t j = 0; j < D; ++j) {
      if (!d.scale.empty()) x[j] *= d.scale[j];
    }
    const double x0 = x[0], x1 = x[1];
    x[0] = c * x0 - s * x1;
    x[1] = s * x0 + c * x1;
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K) +
                         detail::deg2rad(d.shift_phase_deg);
    x[0] += d.class_shift * std::cos(phase);
    x[1] += d.class_shift * std::sin(phase);
    for (std::size_t j = 0; j < D; ++j) {
      if (!d.translation.empty()) x[j] += d.translation[j];
      x[j] += d.noise * normal01(rng);
    }
    for (std::size_t j = 0; j < D; ++j) out.features(i, j) = x[j];
    out.labels[i] = k;
  }
  return out;
}

/// In-memory task: trainer-visible data plus the held-out target truth.
struct Task {
  TaskSpec spec;
  TrainingData train;
  LabeledSet target_truth;
};

inline Task generate_task(const TaskSpec& spec) {
  spec.validate();
  Task task;
  task.spec = spec;
  task.train.num_classes = spec.num_classes;
  for (std::size_t i = 0; i < spec.domains.size(); ++i) {
    DomainData d = generate_domain(spec, i);
    if (spec.domains[i].role == DomainRole::kSource) {
      task.train.sources.push_back(std::move(d));
    } else {
      task.train.target = d.features;
      task.target_truth = {std::move(d.features), std::move(d.labels)};
    }
  }
  return task;
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt_double(v[i]);
  return s;
}

inline std::vector<double> split_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string tok;
  while (is >> tok) out.push_back(parse_double(key, tok));
  return out;
}

inline double parse_cell(const std::string& cell, const std::string& file, std::size_t line) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || cell.empty()) {
    throw DataError(file + ":" + std::to_string(line) + ": malformed value '" + cell + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Tensor read_features(const std::string& path, std::size_t rows, std::size_t dim) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open feature file '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty file");
  if (split_csv(trim(line)).size() != dim) {
    throw DataError(path + ":1: header does not have " + std::to_string(dim) + " columns");
  }
  Tensor out(rows, dim);
  std::size_t r = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(trim(line));
    if (cells.size() != dim) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                      " values, got " + std::to_string(cells.size()));
    }
    if (r >= rows) throw DataError(path + ":" + std::to_string(lineno) + ": more rows than the manifest declares");
    for (std::size_t j = 0; j < dim; ++j) out(r, j) = parse_cell(cells[j], path, lineno);
    ++r;
  }
  if (r != rows) {
    throw DataError(path + ": expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
  }
  return out;
}

inline std::vector<std::size_t> read_labels(const std::string& path, std::size_t rows,
                                            std::size_t num_classes) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open label file '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty file");
  std::vector<std::size_t> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string cell = trim(line);
    if (cell.empty()) continue;
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed label '" + cell + "'");
    }
    if (v >= num_classes) {
      throw DataError(path + ":" + std::to_string(lineno) + ": label " + std::to_string(v) +
                      " out of range [0," + std::to_string(num_classes) + ")");
    }
    if (out.size() >= rows) throw DataError(path + ":" + std::to_string(lineno) + ": more rows than the manifest declares");
    out.push_back(v);
  }
  if (out.size() != rows) {
    throw DataError(path + ": expected " + std::to_string(rows) + " rows, found " +
                    std::to_string(out.size()));
  }
  return out;
}

inline void write_features(const std::string& path, const Tensor& x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << "feat_" << j;
  os << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << fmt_double(x(i, j));
    os << '\n';
  }
}

inline void write_labels(const std::string& path, const std::vector<std::size_t>& y) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << "label\n";
  for (std::size_t v : y) os << v << '\n';
}

/// Section -> key -> value, in the config file syntax.
using IniDoc = std::map<std::string, std::map<std::string, std::string>>;

inline IniDoc read_ini(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path + "'");
  IniDoc doc;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
    doc[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return doc;
}

inline const std::string& ini_get(const IniDoc& doc, const std::string& section,
                                  const std::string& key, const std::string& path) {
  const auto s = doc.find(section);
  if (s == doc.end()) throw DataError(path + ": missing section [" + section + "]");
  const auto k = s->second.find(key);
  if (k == s->second.end()) throw DataError(path + ": [" + section + "] missing key '" + key + "'");
  return k->second;
}

}  // namespace detail

/// Writes manifest.txt plus <domain>_features.csv / <domain>_labels.csv
/// into `dir`. Returns the manifest path.
inline std::string write_task(const Task& task, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const TaskSpec& s = task.spec;
  std::ofstream os(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!os) throw DataError("cannot write manifest in '" + dir + "'");
  os << "[task]\n"
     << "input_dim = " << s.input_dim << '\n'
     << "num_classes = " << s.num_classes << '\n'
     << "num_sources = " << s.num_sources() << '\n'
     << "base = " << to_string(s.base) << '\n'
     << "base_radius = " << detail::fmt_double(s.base_radius) << '\n'
     << "base_spread = " << detail::fmt_double(s.base_spread) << '\n'
     << "seed = " << s.seed << '\n';
  std::size_t m = 0;
  for (const DomainSpec& d : s.domains) {
    const bool src = d.role == DomainRole::kSource;
    const DomainData& data = src ? task.train.sources[m++]
                                 : DomainData{task.target_truth.features, task.target_truth.labels};
    os << "\n[domain." << d.name << "]\n"
       << "role = " << (src ? "source" : "target") << '\n'
       << "samples = " << data.features.rows() << '\n'
       << "features = " << d.name << "_features.csv\n"
       << "labels = " << d.name << "_labels.csv\n"
       << "rotation_deg = " << detail::fmt_double(d.rotation_deg) << '\n'
       << "translation = " << detail::join_doubles(d.translation) << '\n'
       << "scale = " << detail::join_doubles(d.scale) << '\n'
       << "class_shift = " << detail::fmt_double(d.class_shift) << '\n'
       << "shift_phase_deg = " << detail::fmt_double(d.shift_phase_deg) << '\n'
       << "noise = " << detail::fmt_double(d.noise) << '\n'
       << "samples_per_class = " << d.samples_per_class << '\n';
    detail::write_features((fs::path(dir) / (d.name + "_features.csv")).string(), data.features);
    detail::write_labels((fs::path(dir) / (d.name + "_labels.csv")).string(), data.labels);
  }
  return (fs::path(dir) / "manifest.txt").string();
}

namespace detail {

struct ManifestInfo {
  TaskSpec spec;
  std::vector<std::string> feature_files;
  std::vector<std::string> label_files;
  std::vector<std::size_t> samples;
};

inline ManifestInfo read_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  const IniDoc doc = read_ini(path);
  const fs::path base = fs::path(path).parent_path();
  ManifestInfo info;
  auto num = [&](const std::string& sec, const std::string& key) {
    return parse_uint(path + " [" + sec + "] " + key, ini_get(doc, sec, key, path));
  };
  auto real = [&](const std::string& sec, const std::string& key) {
    return parse_double(path + " [" + sec + "] " + key, ini_get(doc, sec, key, path));
  };
  TaskSpec& s = info.spec;
  s.input_dim = num("task", "input_dim");
  s.num_classes = num("task", "num_classes");
  s.base = parse_base(ini_get(doc, "task", "base", path));
  s.base_radius = real("task", "base_radius");
  s.base_spread = real("task", "base_spread");
  s.seed = num("task", "seed");
  const std::size_t sources = num("task", "num_sources");
  // Sections are stored sorted; restore source order s1..sM, then target.
  std::vector<std::string> names;
  for (std::size_t m = 1; m <= sources; ++m) names.push_back("s" + std::to_string(m));
  std::string target;
  for (const auto& [sec, kv] : doc) {
    if (sec.rfind("domain.", 0) != 0) continue;
    const auto r = kv.find("role");
    if (r != kv.end() && r->second == "target") {
      if (!target.empty()) throw DataError(path + ": more than one target domain");
      target = sec.substr(7);
    }
  }
  if (target.empty()) throw DataError(path + ": no target domain");
  names.push_back(target);
  for (const std::string& name : names) {
    const std::string sec = "domain." + name;
    DomainSpec d;
    d.name = name;
    d.role = ini_get(doc, sec, "role", path) == "target" ? DomainRole::kTarget : DomainRole::kSource;
    d.rotation_deg = real(sec, "rotation_deg");
    d.translation = split_doubles(sec + ".translation", ini_get(doc, sec, "translation", path));
    d.scale = split_doubles(sec + ".scale", ini_get(doc, sec, "scale", path));
    d.class_shift = real(sec, "class_shift");
    d.shift_phase_deg = real(sec, "shift_phase_deg");
    d.noise = real(sec, "noise");
    d.samples_per_class = num(sec, "samples_per_class");
    s.domains.push_back(d);
    info.samples.push_back(num(sec, "samples"));
    info.feature_files.push_back((base / ini_get(doc, sec, "features", path)).string());
    info.label_files.push_back((base / ini_get(doc, sec, "labels", path)).string());
  }
  s.validate();
  return info;
}

}  // namespace detail

/// Loads what the trainer may see. The target label file is not opened.
inline TrainingData load_task(const std::string& manifest) {
  const detail::ManifestInfo info = detail::read_manifest(manifest);
  TrainingData out;
  out.num_classes = info.spec.num_classes;
  for (std::size_t i = 0; i < info.spec.domains.size(); ++i) {
    Tensor x = detail::read_features(info.feature_files[i], info.samples[i], info.spec.input_dim);
    if (info.spec.domains[i].role == DomainRole::kTarget) {
      out.target = std::move(x);
    } else {
      out.sources.push_back(
          {std::move(x), detail::read_labels(info.label_files[i], info.samples[i], info.spec.num_classes)});
    }
  }
  return out;
}

/// Target features with their true labels, for evaluation.
inline LabeledSet load_target_labels(const std::string& manifest) {
  const detail::ManifestInfo info = detail::read_manifest(manifest);
  const std::size_t t = info.spec.domains.size() - 1;
  return {detail::read_features(info.feature_files[t], info.samples[t], info.spec.input_dim),
          detail::read_labels(info.label_files[t], info.samples[t], info.spec.num_classes)};
}

inline TaskSpec load_task_spec(const std::string& manifest) {
  return detail::read_manifest(manifest).spec;
}

// ---------------------------------------------------------------------------
// Experiments

/// Every prediction mode available for M sources: weighted, average, source-1..M.
inline std::vector<PredictionSpec> all_prediction_modes(std::size_t num_sources) {
  std::vector<PredictionSpec> out{{PredictionMode::kWeighted, 0}, {PredictionMode::kAverage, 0}};
  for (std::size_t m = 0; m < num_sources; ++m) out.push_back({PredictionMode::kSource, m});
  return out;
}

struct ExperimentResult {
  TrainResult train;
  std::map<std::string, double> final_accuracy;  // keyed by prediction mode string
  std::map<std::string, double> best_accuracy;
  double seconds = 0.0;
};

/// Trains `cfg` on `data`, scoring against `truth` after every epoch.
/// When `out_dir` is non-empty writes metrics.csv, summary.json,
/// hardness_memory.csv, checkpoint.txt and checkpoint_epoch_<n>.txt every
/// train.checkpoint_every epochs.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrainingData& data,
                                       const LabeledSet& truth, const std::string& out_dir = {}) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult res;
  const auto modes = all_prediction_modes(data.sources.size());
  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics.open(fs::path(out_dir) / "metrics.csv", std::ios::binary);
    if (!metrics) throw DataError("cannot write metrics.csv in '" + out_dir + "'");
    write_metrics_header(metrics);
  }
  auto score = [&](const ModelState& model) {
    const std::vector<EvalResult> r = evaluate_modes(model, truth, modes);
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const std::string key = modes[i].str();
      res.final_accuracy[key] = r[i].accuracy;
      auto it = res.best_accuracy.find(key);
      if (it == res.best_accuracy.end() || r[i].accuracy > it->second) res.best_accuracy[key] = r[i].accuracy;
    }
  };
  res.train = train(cfg, data, &truth, [&](const EpochMetrics& em, const TrainerState& st) {
    if (metrics.is_open()) {
      write_metrics_row(metrics, em);
      metrics.flush();
    }
    score(st.model);
    if (!out_dir.empty() && cfg.checkpoint_every && em.epoch % cfg.checkpoint_every == 0) {
      save_checkpoint((fs::path(out_dir) / ("checkpoint_epoch_" + std::to_string(em.epoch) + ".txt")).string(),
                      st.model);
    }
  });
  if (res.train.metrics.empty()) score(res.train.model);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "checkpoint.txt").string(), res.train.model);
    std::ofstream hm(fs::path(out_dir) / "hardness_memory.csv", std::ios::binary);
    res.train.hardness.smooth.write_csv(hm);
    nlohmann::ordered_json j;
    nlohmann::ordered_json c;
    for (const auto& [k, v] : config_entries(cfg)) c[k] = v;
    j["config"] = c;
    j["seed"] = cfg.seed;
    j["epochs"] = res.train.metrics.size();
    j["final_accuracy"] = res.final_accuracy;
    j["best_accuracy"] = res.best_accuracy;
    j["wall_clock_seconds"] = res.seconds;
    std::ofstream js(fs::path(out_dir) / "summary.json", std::ios::binary);
    js << j.dump(2) << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ablations

/// A named change applied on top of the base configuration. `mode` selects
/// which prediction accuracy is reported for the variant.
struct AblationVariant {
  std::string name;
  std::function<void(ExperimentConfig&)> apply;
  std::optional<PredictionSpec> mode;  // defaults to the config's own mode
};

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty when the run failed
};

struct AblationSummary {
  std::string variant;
  double mean = 0.0;
  double std = 0.0;
  std::size_t runs = 0;
};

/// Component ladder, each row adding one piece to the previous one.
inline std::vector<AblationVariant> ladder_preset() {
  auto set = [](bool aug, bool adj, bool wc, bool wgt, bool pcm, bool sel) {
    return [=](ExperimentConfig& c) {
      c.toggles.augmentation = aug;
      c.toggles.adjusting = adj;
      c.toggles.wc_mmd = wc;
      c.toggles.weighting = wgt;
      c.toggles.pcm = pcm;
      c.toggles.selecting = sel;
    };
  };
  return {{"baseline", set(false, false, false, false, false, false), {}},
          {"+Aug w/o Adjusting", set(true, false, false, false, false, false), {}},
          {"+Aug w/ Adjusting", set(true, true, false, false, false, false), {}},
          {"+WC w/o Weighting", set(true, true, true, false, false, false), {}},
          {"+WC w/ Weighting", set(true, true, true, true, false, false), {}},
          {"+PCM w/o Selecting", set(true, true, true, true, true, false), {}},
          {"+PCM w/ Selecting", set(true, true, true, true, true, true), {}}};
}

/// One variant per (scenario, measurement); other scenarios keep defaults.
inline std::vector<AblationVariant> ahm_swap_preset() {
  std::vector<AblationVariant> out;
  const HardnessKind kinds[] = {HardnessKind::kEntropy, HardnessKind::kBasic, HardnessKind::kSmooth,
                                HardnessKind::kComparative, HardnessKind::kComparativeClustered};
  for (const char* scenario : {"augmentation", "inter", "intra"}) {
    for (HardnessKind k : kinds) {
      const std::string sc = scenario;
      out.push_back({sc + ":" + to_string(k), [sc, k](ExperimentConfig& c) {
                       if (sc == "augmentation") c.ahm.augmentation = k;
                       else if (sc == "inter") c.ahm.inter = k;
                       else c.ahm.intra = k;
                     },
                     {}});
    }
  }
  return out;
}

/// The full method scored under every prediction mode.
inline std::vector<AblationVariant> prediction_modes_preset(std::size_t num_sources) {
  std::vector<AblationVariant> out;
  for (const PredictionSpec& m : all_prediction_modes(num_sources)) {
    out.push_back({m.str(), [](ExperimentConfig&) {}, m});
  }
  return out;
}

inline std::vector<AblationVariant> ablation_preset(const std::string& name, std::size_t num_sources) {
  if (name == "ladder") return ladder_preset();
  if (name == "ahm-swap") return ahm_swap_preset();
  if (name == "prediction-modes") return prediction_modes_preset(num_sources);
  throw ConfigError("unknown preset '" + name + "' (expected ladder, ahm-swap or prediction-modes)");
}

/// Trains every variant under every seed. Variants that change nothing in the
/// config share one training run per seed. A failing variant records its
/// error and the grid continues.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const TrainingData& data,
                                             const LabeledSet& truth,
                                             const std::vector<AblationVariant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  std::map<std::string, ModelState> cache;  // serialized config -> trained model
  for (const AblationVariant& v : variants) {
    for (std::uint64_t seed : seeds) {
      AblationRow row{v.name, seed, std::numeric_limits<double>::quiet_NaN(), {}};
      try {
        ExperimentConfig cfg = base;
        v.apply(cfg);
        cfg.seed = seed;
        cfg.validate();
        std::ostringstream key;
        write_config(key, cfg);
        auto it = cache.find(key.str());
        if (it == cache.end()) {
          it = cache.emplace(key.str(), train(cfg, data).model).first;
        }
        row.accuracy = evaluate(it->second, truth, v.mode.value_or(cfg.prediction)).accuracy;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Mean and population std of accuracy per variant, in first-seen order;
/// failed runs are left out.
inline std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  std::map<std::string, std::vector<double>> acc;
  for (const AblationRow& r : rows) {
    if (!acc.count(r.variant)) out.push_back({r.variant, 0.0, 0.0, 0});
    auto& a = acc[r.variant];
    if (r.error.empty()) a.push_back(r.accuracy);
  }
  for (AblationSummary& s : out) {
    std::tie(s.mean, s.std) = detail::mean_std(acc[s.variant]);
    s.runs = acc[s.variant].size();
  }
  return out;
}

inline void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,seed,accuracy\n";
  for (const AblationRow& r : rows) {
    os << '"' << r.variant << "\"," << r.seed << ',';
    if (r.error.empty()) os << detail::fmt_double(r.accuracy);
    else os << "nan";
    os << '\n';
  }
}

inline void write_ablation_summary(std::ostream& os, const std::vector<AblationSummary>& rows) {
  os << "variant,mean,std,runs\n";
  for (const AblationSummary& s : rows) {
    os << '"' << s.variant << "\"," << detail::fmt_double(s.mean) << ',' << detail::fmt_double(s.std)
       << ',' << s.runs << '\n';
  }
}

}  // namespace a3mda
