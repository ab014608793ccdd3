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

// Multi-source network: a shared extractor F, per-source aligned extractors
// A_m and classifiers C_m, and ensemble logits u whose softmax gives the
// source weights w_m of the combined target prediction.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "a3mda/autodiff.hpp"
#include "a3mda/hardness.hpp"
#include "a3mda/rng.hpp"

namespace a3mda {

struct ModelShape {
  std::size_t input_dim = 2;
  std::size_t hidden = 64;       // F: input -> hidden -> feat, tanh
  std::size_t feat_dim = 32;
  std::size_t align_hidden = 64; // A_m: feat -> align_hidden -> align_dim, relu
  std::size_t align_dim = 32;
  std::size_t num_classes = 4;   // K
  std::size_t num_sources = 3;   // M

  void validate() const {
    if (num_sources < 1) throw std::invalid_argument("model: need at least one source");
    if (num_classes < 2) throw std::invalid_argument("model: need K >= 2");
    if (!input_dim || !hidden || !feat_dim || !align_hidden || !align_dim) {
      throw std::invalid_argument("model: layer widths must be positive");
    }
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

enum class ParamGroup { kBackbone, kHead, kEnsemble };

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::kHead;
  Tensor value;
};

class ModelState {
 public:
  ModelState() = default;

  /// Glorot-uniform weights, zero biases, zero ensemble logits.
  ModelState(const ModelShape& shape, std::uint64_t seed) : shape_(shape) {
    shape_.validate();
    Rng rng = make_rng({seed, 0x4D4F44454CULL});
    auto linear = [&](const std::string& prefix, ParamGroup g, std::size_t in, std::size_t out) {
      Tensor w(in, out);
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      for (double& v : w.data()) v = (2.0 * uniform01(rng) - 1.0) * a;
      params_.push_back({prefix + ".w", g, std::move(w)});
      params_.push_back({prefix + ".b", g, Tensor(1, out)});
    };
    linear("F.l1", ParamGroup::kBackbone, shape_.input_dim, shape_.hidden);
    linear("F.l2", ParamGroup::kBackbone, shape_.hidden, shape_.feat_dim);
    for (std::size_t m = 0; m < shape_.num_sources; ++m) {
      const std::string tag = std::to_string(m + 1);
      linear("A" + tag + ".l1", ParamGroup::kHead, shape_.feat_dim, shape_.align_hidden);
      linear("A" + tag + ".l2", ParamGroup::kHead, shape_.align_hidden, shape_.align_dim);
      linear("C" + tag, ParamGroup::kHead, shape_.align_dim, shape_.num_classes);
    }
    params_.push_back({"ensemble.u", ParamGroup::kEnsemble, Tensor(1, shape_.num_sources)});
  }

  const ModelShape& shape() const noexcept { return shape_; }
  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Layout: F uses params 0..3; source m uses 6 params from 4 + 6m; u is last.
  static constexpr std::size_t kBackboneParams = 4;
  static constexpr std::size_t kParamsPerSource = 6;
  std::size_t source_offset(std::size_t m) const { return kBackboneParams + kParamsPerSource * m; }
  std::size_t ensemble_index() const { return params_.size() - 1; }

  Tensor& ensemble_logits() { return params_.back().value; }
  const Tensor& ensemble_logits() const { return params_.back().value; }

  /// w = softmax(u).
  std::vector<double> source_weights() const {
    const Tensor w = softmax_rows(ensemble_logits());
    return w.values();
  }

  friend bool operator==(const ModelState& a, const ModelState& b) {
    if (!(a.shape_ == b.shape_) || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  ModelShape shape_;
  std::vector<Parameter> params_;
};

/// Model parameters placed on a tape, either as trainable leaves or constants.
struct BoundModel {
  const ModelState* state = nullptr;
  std::vector<Var> params;

  const Var& p(std::size_t i) const { return params.at(i); }
};

inline BoundModel bind(Tape& tape, const ModelState& state, bool trainable) {
  BoundModel b{&state, {}};
  b.params.reserve(state.params().size());
  for (const Parameter& p : state.params()) {
    b.params.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
  }
  return b;
}

/// Per-row probability matrix tagged with where it came from.
struct PredictionBatch {
  Tensor probs;
  DomainTag domain = DomainTag::target();
  std::optional<std::size_t> head;  // producing C_m, or nullopt for the weighted combination
  std::vector<std::size_t> sample_ids;
};

struct HeadOutput {
  Var features;  // A_m(F(x)), the aligned features used by the alignment losses
  Var probs;     // softmax(C_m(features))
};

struct TargetOutput {
  std::vector<HeadOutput> heads;
  Var weights;   // 1 x M
  Var weighted;  // P_w = sum_m w_m P_m
};

namespace detail {

inline Var affine(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

inline void check_input(const ModelShape& shape, const Var& x) {
  if (x.cols() != shape.input_dim) {
    throw ShapeError("model: input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(shape.input_dim));
  }
}

}  // namespace detail

inline Var shared_features(const BoundModel& model, const Var& x) {
  detail::check_input(model.state->shape(), x);
  const Var h = tanh(detail::affine(x, model.p(0), model.p(1)));
  return tanh(detail::affine(h, model.p(2), model.p(3)));
}

inline HeadOutput source_head(const BoundModel& model, const Var& shared, std::size_t m) {
  if (m >= model.state->shape().num_sources) {
    throw std::out_of_range("model: source index " + std::to_string(m) + " out of range");
  }
  const std::size_t o = model.state->source_offset(m);
  const Var a1 = relu(detail::affine(shared, model.p(o), model.p(o + 1)));
  const Var phi = relu(detail::affine(a1, model.p(o + 2), model.p(o + 3)));
  const Var logits = detail::affine(phi, model.p(o + 4), model.p(o + 5));
  return {phi, softmax_rows(logits)};
}

/// phi = A_m(F(x)), P = softmax(C_m(phi)).
inline HeadOutput forward_source(const BoundModel& model, const Var& x, std::size_t m) {
  return source_head(model, shared_features(model, x), m);
}

/// Target rows through every head plus the w-weighted combination.
inline TargetOutput forward_target(const BoundModel& model, const Var& x) {
  const Var shared = shared_features(model, x);
  TargetOutput out;
  const std::size_t M = model.state->shape().num_sources;
  out.weights = softmax_rows(model.p(model.state->ensemble_index()));
  const Var column = transpose(out.weights);
  for (std::size_t m = 0; m < M; ++m) {
    out.heads.push_back(source_head(model, shared, m));
    const Var term = mul(out.heads.back().probs, gather_rows(column, {m}));
    out.weighted = m == 0 ? term : add(out.weighted, term);
  }
  return out;
}

/// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

/// argmax class for rows whose top probability exceeds tau; nullopt otherwise.
inline std::vector<ClassLabel> pseudo_label(const Tensor& weighted_probs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("pseudo_label: tau outside [0,1]");
  std::vector<ClassLabel> out(weighted_probs.rows());
  for (std::size_t i = 0; i < weighted_probs.rows(); ++i) {
    auto row = weighted_probs.row_span(i);
    const std::size_t k = argmax(row);
    if (row[k] > tau) out[i] = k;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Text layout, one token stream:
//   a3mda-checkpoint 1
//   shape <input_dim> <hidden> <feat_dim> <align_hidden> <align_dim> <K> <M>
//   params <count>
//   then per parameter: <name> <group:backbone|head|ensemble> <rows> <cols> <values...>
// Values are written with 17 significant digits, which round-trips doubles
// exactly through strtod.

inline void write_checkpoint(std::ostream& os, const ModelState& state) {
  const ModelShape& s = state.shape();
  os << "a3mda-checkpoint 1\n";
  os << "shape " << s.input_dim << ' ' << s.hidden << ' ' << s.feat_dim << ' ' << s.align_hidden
     << ' ' << s.align_dim << ' ' << s.num_classes << ' ' << s.num_sources << '\n';
  os << "params " << state.params().size() << '\n';
  char buf[64];
  for (const Parameter& p : state.params()) {
    const char* group = p.group == ParamGroup::kBackbone   ? "backbone"
                        : p.group == ParamGroup::kEnsemble ? "ensemble"
                                                           : "head";
    os << p.name << ' ' << group << ' '
       << p.value.rows() << ' ' << p.value.cols() << '\n';
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p.value[i]);
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
}

inline ModelState read_checkpoint(std::istream& is) {
  auto fail = [](const std::string& what) -> ModelState {
    throw std::runtime_error("checkpoint: " + what);
  };
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "a3mda-checkpoint" || version != 1) {
    return fail("bad header");
  }
  std::string tag;
  ModelShape s;
  if (!(is >> tag >> s.input_dim >> s.hidden >> s.feat_dim >> s.align_hidden >> s.align_dim >>
        s.num_classes >> s.num_sources) ||
      tag != "shape") {
    return fail("bad shape line");
  }
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != "params") return fail("bad params line");
  ModelState state(s, 0);
  if (count != state.params().size()) return fail("parameter count does not match shape");
  for (Parameter& p : state.params()) {
    std::string name, group, token;
    std::size_t r = 0, c = 0;
    if (!(is >> name >> group >> r >> c)) return fail("truncated parameter header");
    if (name != p.name || r != p.value.rows() || c != p.value.cols()) {
      return fail("unexpected parameter '" + name + "'");
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!(is >> token)) return fail("truncated values for '" + name + "'");
      char* end = nullptr;
      p.value[i] = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') return fail("malformed value in '" + name + "'");
    }
  }
  return state;
}

inline void save_checkpoint(const std::string& path, const ModelState& state) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(os, state);
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace a3mda
