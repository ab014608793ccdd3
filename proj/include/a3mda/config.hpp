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

// Experiment configuration and its text format.
//
// The file is a flat list of `key = value` lines grouped under `[section]`
// headers; `#` starts a comment. Every field is addressed as
// `section.key`, the same name accepted by apply_override(). Unknown keys
// are errors.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "a3mda/augment.hpp"
#include "a3mda/hardness.hpp"

namespace a3mda {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PredictionMode { kWeighted, kAverage, kSource };

struct PredictionSpec {
  PredictionMode mode = PredictionMode::kWeighted;
  std::size_t source = 0;  // 0-based head for kSource

  std::string str() const {
    switch (mode) {
      case PredictionMode::kWeighted: return "weighted";
      case PredictionMode::kAverage: return "average";
      case PredictionMode::kSource: return "source-" + std::to_string(source + 1);
    }
    return "?";
  }

  /// "weighted", "average", or "source-m" with m 1-based.
  static PredictionSpec parse(const std::string& s) {
    if (s == "weighted") return {PredictionMode::kWeighted, 0};
    if (s == "average") return {PredictionMode::kAverage, 0};
    if (s.rfind("source-", 0) == 0) {
      char* end = nullptr;
      const long m = std::strtol(s.c_str() + 7, &end, 10);
      if (*end == '\0' && m >= 1) return {PredictionMode::kSource, static_cast<std::size_t>(m - 1)};
    }
    throw ConfigError("bad prediction mode '" + s + "' (weighted|average|source-m)");
  }
};

struct AhmSelection {
  HardnessKind augmentation = HardnessKind::kSmooth;
  HardnessKind inter = HardnessKind::kComparativeClustered;
  HardnessKind intra = HardnessKind::kComparative;
};

struct Toggles {
  bool augmentation = true;  // Aug
  bool adjusting = true;     // hardness-adaptive mixing; off = strong view for every sample
  bool wc_mmd = true;        // weighted-clustered MMD term
  bool weighting = true;     // hardness weights inside it; off = uniform
  bool pcm = true;           // intra-domain pseudo-contrastive loss
  bool selecting = true;     // hardness-ranked selection; off = random rows
};

struct Corruption {
  double ratio = 0.0;       // fraction of correct pseudo-labels reassigned
  std::size_t epochs = 0;   // applied during the first `epochs` epochs
};

struct ExperimentConfig {
  // 0 means "take from the dataset".
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t num_sources = 0;
  std::size_t hidden = 64;
  std::size_t feat_dim = 32;
  std::size_t align_hidden = 64;
  std::size_t align_dim = 32;

  double beta = 0.8;
  double tau = 0.6;
  double ratio = 0.4;
  double lambda2 = 0.7;
  double temperature = 0.15;
  double theta = 10.0;
  std::size_t batch_size = 32;

  std::size_t epochs = 200;
  double lr_backbone = 0.001;
  double lr_heads = 0.01;
  double lr_ensemble = 0.001;
  double momentum = 0.9;
  bool lr_decay = true;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 10;

  AhmSelection ahm;
  Toggles toggles;
  PredictionSpec prediction;
  Corruption corruption;
  AugmentPolicy augment_source;
  AugmentPolicy augment_target;

  std::string data_manifest;  // resolved relative to the config file

  void validate() const {
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0,1)");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0,1]");
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in (0,1]");
    if (!(lambda2 >= 0.0)) throw ConfigError("lambda2 must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(lr_backbone >= 0.0 && lr_heads >= 0.0 && lr_ensemble >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(corruption.ratio >= 0.0 && corruption.ratio <= 1.0)) {
      throw ConfigError("corruption.ratio must lie in [0,1]");
    }
    try {
      augment_source.validate();
      augment_target.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw ConfigError(key + ": expected a non-negative integer");
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return u;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = parse_double(key, v);
            } else {
              c.*member = static_cast<T>(parse_uint(key, v));
            }
          },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename Get>
Field double_field(std::string key, Get ref) {
  return {key, [key, ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
          [ref](const ExperimentConfig& c) { return fmt_double(ref(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Get>
Field bool_field(std::string key, Get ref) {
  return {key, [key, ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); },
          [ref](const ExperimentConfig& c) {
            return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Get>
Field kind_field(std::string key, Get ref) {
  return {key,
          [key, ref](ExperimentConfig& c, const std::string& v) {
            try {
              ref(c) = parse_hardness_kind(v);
            } catch (const std::invalid_argument& e) {
              throw ConfigError(key + ": " + e.what());
            }
          },
          [ref](const ExperimentConfig& c) {
            return std::string(to_string(ref(const_cast<ExperimentConfig&>(c))));
          }};
}

inline void augment_fields(std::vector<Field>& f, const std::string& section,
                           AugmentPolicy ExperimentConfig::*policy) {
  auto w = [policy](ExperimentConfig& c) -> WeakAugment& { return (c.*policy).weak; };
  auto s = [policy](ExperimentConfig& c) -> StrongAugment& { return (c.*policy).strong; };
  f.push_back(bool_field(section + ".weak_jitter", [w](ExperimentConfig& c) -> bool& { return w(c).jitter; }));
  f.push_back(double_field(section + ".weak_jitter_sigma", [w](ExperimentConfig& c) -> double& { return w(c).jitter_sigma; }));
  f.push_back(bool_field(section + ".weak_flip", [w](ExperimentConfig& c) -> bool& { return w(c).flip; }));
  f.push_back(double_field(section + ".weak_flip_prob", [w](ExperimentConfig& c) -> double& { return w(c).flip_prob; }));
  f.push_back(bool_field(section + ".weak_crop", [w](ExperimentConfig& c) -> bool& { return w(c).crop; }));
  f.push_back(double_field(section + ".weak_crop_prob", [w](ExperimentConfig& c) -> double& { return w(c).crop_prob; }));
  f.push_back(bool_field(section + ".strong_jitter", [s](ExperimentConfig& c) -> bool& { return s(c).jitter; }));
  f.push_back(double_field(section + ".strong_jitter_sigma", [s](ExperimentConfig& c) -> double& { return s(c).jitter_sigma; }));
  f.push_back(bool_field(section + ".strong_mask", [s](ExperimentConfig& c) -> bool& { return s(c).mask; }));
  f.push_back(double_field(section + ".strong_mask_prob", [s](ExperimentConfig& c) -> double& { return s(c).mask_prob; }));
  f.push_back(bool_field(section + ".strong_scale", [s](ExperimentConfig& c) -> bool& { return s(c).scale; }));
  f.push_back(double_field(section + ".strong_scale_low", [s](ExperimentConfig& c) -> double& { return s(c).scale_low; }));
  f.push_back(double_field(section + ".strong_scale_high", [s](ExperimentConfig& c) -> double& { return s(c).scale_high; }));
  f.push_back(bool_field(section + ".strong_invert", [s](ExperimentConfig& c) -> bool& { return s(c).invert; }));
  f.push_back(double_field(section + ".strong_invert_prob", [s](ExperimentConfig& c) -> double& { return s(c).invert_prob; }));
}

inline const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(number_field("model.input_dim", &C::input_dim));
    f.push_back(number_field("model.num_classes", &C::num_classes));
    f.push_back(number_field("model.num_sources", &C::num_sources));
    f.push_back(number_field("model.hidden", &C::hidden));
    f.push_back(number_field("model.feat_dim", &C::feat_dim));
    f.push_back(number_field("model.align_hidden", &C::align_hidden));
    f.push_back(number_field("model.align_dim", &C::align_dim));

    f.push_back(number_field("hyper.beta", &C::beta));
    f.push_back(number_field("hyper.tau", &C::tau));
    f.push_back(number_field("hyper.ratio", &C::ratio));
    f.push_back(number_field("hyper.lambda2", &C::lambda2));
    f.push_back(number_field("hyper.temperature", &C::temperature));
    f.push_back(number_field("hyper.theta", &C::theta));
    f.push_back(number_field("hyper.batch_size", &C::batch_size));

    f.push_back(number_field("train.epochs", &C::epochs));
    f.push_back(number_field("train.lr_backbone", &C::lr_backbone));
    f.push_back(number_field("train.lr_heads", &C::lr_heads));
    f.push_back(number_field("train.lr_ensemble", &C::lr_ensemble));
    f.push_back(number_field("train.momentum", &C::momentum));
    f.push_back(bool_field("train.lr_decay", [](C& c) -> bool& { return c.lr_decay; }));
    f.push_back(number_field("train.checkpoint_every", &C::checkpoint_every));
    f.push_back(number_field("train.seed", &C::seed));

    f.push_back(kind_field("ahm.augmentation", [](C& c) -> HardnessKind& { return c.ahm.augmentation; }));
    f.push_back(kind_field("ahm.inter", [](C& c) -> HardnessKind& { return c.ahm.inter; }));
    f.push_back(kind_field("ahm.intra", [](C& c) -> HardnessKind& { return c.ahm.intra; }));

    f.push_back(bool_field("toggles.augmentation", [](C& c) -> bool& { return c.toggles.augmentation; }));
    f.push_back(bool_field("toggles.adjusting", [](C& c) -> bool& { return c.toggles.adjusting; }));
    f.push_back(bool_field("toggles.wc_mmd", [](C& c) -> bool& { return c.toggles.wc_mmd; }));
    f.push_back(bool_field("toggles.weighting", [](C& c) -> bool& { return c.toggles.weighting; }));
    f.push_back(bool_field("toggles.pcm", [](C& c) -> bool& { return c.toggles.pcm; }));
    f.push_back(bool_field("toggles.selecting", [](C& c) -> bool& { return c.toggles.selecting; }));

    f.push_back({"prediction.mode",
                 [](C& c, const std::string& v) { c.prediction = PredictionSpec::parse(v); },
                 [](const C& c) { return c.prediction.str(); }});

    f.push_back(double_field("corruption.ratio", [](C& c) -> double& { return c.corruption.ratio; }));
    f.push_back({"corruption.epochs",
                 [](C& c, const std::string& v) { c.corruption.epochs = parse_uint("corruption.epochs", v); },
                 [](const C& c) { return std::to_string(c.corruption.epochs); }});

    augment_fields(f, "augment.source", &C::augment_source);
    augment_fields(f, "augment.target", &C::augment_target);

    f.push_back({"data.manifest", [](C& c, const std::string& v) { c.data_manifest = v; },
                 [](const C& c) { return c.data_manifest; }});
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Sets one field by its `section.key` name.
inline void apply_override(ExperimentConfig& config, const std::string& key,
                           const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Every field as (section.key, value) in declaration order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::config_fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

/// Parses the section/key-value format. `origin` names the source in errors.
inline ExperimentConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
  ExperimentConfig config;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      apply_override(config, full, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

/// Loads a config file; a relative data.manifest resolves against the file's
/// directory.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  ExperimentConfig c = parse_config(is, path);
  if (!c.data_manifest.empty()) {
    std::filesystem::path m(c.data_manifest);
    if (m.is_relative()) c.data_manifest = (std::filesystem::path(path).parent_path() / m).string();
  }
  return c;
}

inline void write_config(std::ostream& os, const ExperimentConfig& c) {
  std::string section;
  for (const auto& [key, value] : config_entries(c)) {
    const auto dot = key.rfind('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
}

}  // namespace a3mda
