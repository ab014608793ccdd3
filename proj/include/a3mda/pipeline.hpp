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

// Mini-batch training procedure, objective, optimizer and epoch loop.
//
// One step runs in three phases:
//   1. forward_all: every source batch through its own head, the target
//      batch through all heads and the weighted combination;
//   2. derive_context: values only -> pseudo-labels, Basic/Smooth/Comparative
//      hardness, kernel bandwidths, hard-target selection (all detached);
//   3. assemble_loss: sum_m (lambda1 * L_inter + lambda2 * L_intra + L_cls)
//      on the tape, with the context frozen.
// Keeping phase 2 separate lets the gradient checker hold every discrete
// decision fixed while it perturbs parameters.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "a3mda/alignment.hpp"
#include "a3mda/augment.hpp"
#include "a3mda/autodiff.hpp"
#include "a3mda/config.hpp"
#include "a3mda/gradcheck.hpp"
#include "a3mda/hardness.hpp"
#include "a3mda/intra.hpp"
#include "a3mda/model.hpp"
#include "a3mda/rng.hpp"

namespace a3mda {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DomainData {
  Tensor features;
  std::vector<std::size_t> labels;
};

/// What the trainer may see: labeled sources and unlabeled target features.
struct TrainingData {
  std::vector<DomainData> sources;
  Tensor target;
  std::size_t num_classes = 0;
};

/// Features with ground truth, for evaluation only.
struct LabeledSet {
  Tensor features;
  std::vector<std::size_t> labels;
};

/// 2 / (1 + exp(-theta p)) - 1: 0 at p = 0, rising towards 1.
inline double lambda1_schedule(double progress, double theta) {
  return 2.0 / (1.0 + std::exp(-theta * progress)) - 1.0;
}

/// eta0 / (1 + 10 p)^0.75 when decay is on.
inline double learning_rate(double base, double progress, bool decay) {
  return decay ? base / std::pow(1.0 + 10.0 * progress, 0.75) : base;
}

inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Tensor out(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw std::out_of_range("label out of range");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

/// Mean over rows of -log p[row, label], log clamped at kLogFloor.
inline Var cross_entropy(const Var& probs, std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.rows()) + " rows");
  }
  const Var target = probs.tape()->constant(one_hot(labels, probs.cols()));
  return scale(mean(sum_rows(mul(log(probs), target))), -1.0);
}

struct ClassificationLoss {
  Var total;
  Var source;
  Var target;  // 0 when no target row carries a pseudo-label
  std::size_t target_rows = 0;
};

/// Source cross-entropy against real labels plus target cross-entropy of the
/// weighted prediction against pseudo-labels; unlabeled target rows are
/// masked out.
inline ClassificationLoss classification_loss(const Var& source_probs,
                                              std::span<const std::size_t> source_labels,
                                              const Var& target_weighted,
                                              std::span<const ClassLabel> pseudo) {
  ClassificationLoss out;
  out.source = cross_entropy(source_probs, source_labels);
  std::vector<std::size_t> rows, labels;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (pseudo[i]) {
      rows.push_back(i);
      labels.push_back(*pseudo[i]);
    }
  }
  out.target_rows = rows.size();
  if (rows.empty()) {
    out.target = source_probs.tape()->constant(Tensor::scalar(0.0));
    out.total = out.source;
  } else {
    out.target = cross_entropy(gather_rows(target_weighted, rows), labels);
    out.total = add(out.source, out.target);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step data

/// One mini-batch after augmentation.
struct StepBatch {
  std::vector<Tensor> source_x;
  std::vector<std::vector<std::size_t>> source_ids;
  std::vector<std::vector<std::size_t>> source_y;
  Tensor target_x;
  std::vector<std::size_t> target_ids;
};

struct ForwardPass {
  std::vector<HeadOutput> source;  // source m through head m
  TargetOutput target;
};

inline ForwardPass forward_all(Tape& tape, const BoundModel& model, const StepBatch& batch) {
  ForwardPass out;
  for (std::size_t m = 0; m < batch.source_x.size(); ++m) {
    out.source.push_back(forward_source(model, tape.constant(batch.source_x[m]), m));
  }
  out.target = forward_target(model, tape.constant(batch.target_x));
  return out;
}

/// Hardness of one batch under every measurement.
struct BatchHardness {
  std::vector<double> entropy;
  std::vector<double> basic;
  std::vector<double> smooth;
  std::vector<double> comparative;
  std::vector<double> clustered;

  const std::vector<double>& get(HardnessKind k) const {
    switch (k) {
      case HardnessKind::kEntropy: return entropy;
      case HardnessKind::kBasic: return basic;
      case HardnessKind::kSmooth: return smooth;
      case HardnessKind::kComparative: return comparative;
      case HardnessKind::kComparativeClustered: return clustered;
    }
    return smooth;
  }
};

/// Detached per-step quantities. Everything the loss needs besides the
/// forward pass itself.
struct StepContext {
  double lambda1 = 0.0;
  std::vector<ClassLabel> pseudo;
  std::vector<BatchHardness> source_hardness;
  BatchHardness target_hardness;
  std::vector<std::vector<double>> source_weights;  // inter-domain weights per source
  std::vector<double> target_weights;
  std::vector<KernelSpec> kernels;                   // per source
  HardTargetBatch hard;
  std::size_t pl_assigned = 0;
  std::size_t pl_correct = 0;
};

struct LossTerms {
  Var total;
  std::vector<Var> cls;
  std::vector<Var> inter;
  std::vector<Var> intra;
};

namespace detail {

inline std::vector<ClassLabel> as_labels(std::span<const std::size_t> y) {
  return std::vector<ClassLabel>(y.begin(), y.end());
}

/// Hardness values turned into per-row weights for the clustered MMD.
/// Cluster-wise comparative hardness already sums to one per group; any other
/// measurement is averaged over its group instead (value / group size).
inline std::vector<double> inter_weights(const BatchHardness& h, HardnessKind kind,
                                         std::span<const ClassLabel> groups) {
  if (kind == HardnessKind::kComparativeClustered) return h.clustered;
  const std::vector<double>& v = h.get(kind);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& g : groups) {
    if (g) ++counts[*g];
  }
  std::vector<double> w(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (groups[i]) w[i] = v[i] / static_cast<double>(counts[*groups[i]]);
  }
  return w;
}

/// Value stored in the augmentation bank for a measurement; entropy is
/// divided by log K so it lies in [0, 1] like the others.
inline double bank_value(const BatchHardness& h, HardnessKind kind, std::size_t i,
                         std::size_t num_classes) {
  const double v = h.get(kind)[i];
  if (kind == HardnessKind::kEntropy) return v / std::log(static_cast<double>(num_classes));
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// Hardness memories carried across steps and epochs.
struct HardnessState {
  HardnessMemory smooth;  // M_H
  HardnessMemory bank;    // previous-epoch values of the augmentation measurement when it is not S

  void advance_epoch() {
    smooth.advance_epoch();
    bank.advance_epoch();
  }
};

/// Hardness coefficient for adaptive augmentation: previous-epoch value of
/// the configured measurement, or 1 when the sample has none yet.
inline double augmentation_hardness(const HardnessState& hs, const ExperimentConfig& cfg,
                                    DomainTag domain, std::size_t id) {
  const HardnessMemory& src =
      cfg.ahm.augmentation == HardnessKind::kSmooth ? hs.smooth : hs.bank;
  return src.previous(domain, id).value_or(1.0);
}

struct CorruptionPlan {
  double ratio = 0.0;
  const std::vector<std::size_t>* truth = nullptr;  // target labels by sample id
};

/// Phase 2. Reads `hs` for the previous-epoch smooth values; does not write.
inline StepContext derive_context(const ForwardPass& fwd, const StepBatch& batch,
                                  const HardnessState& hs, const ExperimentConfig& cfg,
                                  double lambda1, Rng& rng, const CorruptionPlan& corruption = {},
                                  const std::vector<std::size_t>* truth = nullptr) {
  const std::size_t M = batch.source_x.size();
  const std::size_t K = fwd.target.weighted.cols();
  StepContext ctx;
  ctx.lambda1 = lambda1;

  const Tensor& pw = fwd.target.weighted.value();
  ctx.pseudo = pseudo_label(pw, cfg.tau);
  if (corruption.ratio > 0.0 && corruption.truth) {
    for (std::size_t i = 0; i < ctx.pseudo.size(); ++i) {
      const std::size_t y = (*corruption.truth)[batch.target_ids[i]];
      const double u = uniform01(rng);
      const std::size_t shift = 1 + uniform_index(rng, K - 1);
      if (ctx.pseudo[i] && *ctx.pseudo[i] == y && u < corruption.ratio) {
        ctx.pseudo[i] = (y + shift) % K;
      }
    }
  }
  for (std::size_t i = 0; i < ctx.pseudo.size(); ++i) {
    if (!ctx.pseudo[i]) continue;
    ++ctx.pl_assigned;
    if (truth && (*truth)[batch.target_ids[i]] == *ctx.pseudo[i]) ++ctx.pl_correct;
  }

  auto measure = [&](const Tensor& probs, std::span<const std::size_t> z, DomainTag domain,
                     std::span<const std::size_t> ids, std::span<const ClassLabel> groups) {
    BatchHardness h;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      const auto row = probs.row_span(i);
      h.entropy.push_back(shannon_entropy(row));
      h.basic.push_back(basic_ahm(row, z[i]));
      h.smooth.push_back(smooth_ahm(h.basic.back(), hs.smooth.previous(domain, ids[i]), cfg.beta));
    }
    h.comparative = comparative_ahm(h.smooth);
    h.clustered = comparative_ahm(h.smooth, groups);
    return h;
  };

  for (std::size_t m = 0; m < M; ++m) {
    const auto groups = detail::as_labels(batch.source_y[m]);
    ctx.source_hardness.push_back(measure(fwd.source[m].probs.value(), batch.source_y[m],
                                          DomainTag::source(m), batch.source_ids[m], groups));
    ctx.source_weights.push_back(
        detail::inter_weights(ctx.source_hardness.back(), cfg.ahm.inter, groups));
    ctx.kernels.push_back(KernelSpec::median_heuristic(fwd.source[m].features.value(),
                                                       fwd.target.heads[m].features.value()));
  }
  std::vector<std::size_t> dhat(pw.rows());
  for (std::size_t i = 0; i < pw.rows(); ++i) dhat[i] = argmax(pw.row_span(i));
  ctx.target_hardness = measure(pw, dhat, DomainTag::target(), batch.target_ids, ctx.pseudo);
  ctx.target_weights = detail::inter_weights(ctx.target_hardness, cfg.ahm.inter, ctx.pseudo);

  if (cfg.toggles.pcm) {
    if (cfg.toggles.selecting) {
      ctx.hard = select_hard_targets(ctx.target_hardness.get(cfg.ahm.intra), ctx.pseudo,
                                     cfg.ratio, batch.target_ids);
    } else {
      ctx.hard = select_random_targets(ctx.pseudo, cfg.ratio, rng);
    }
  }
  return ctx;
}

/// Writes this step's smooth hardness (and the augmentation measurement, if
/// it is not S) into the pending epoch buffers.
inline void record_hardness(HardnessState& hs, const StepContext& ctx, const StepBatch& batch,
                            const ExperimentConfig& cfg, std::size_t num_classes) {
  const bool bank = cfg.ahm.augmentation != HardnessKind::kSmooth;
  for (std::size_t m = 0; m < batch.source_ids.size(); ++m) {
    const BatchHardness& h = ctx.source_hardness[m];
    for (std::size_t i = 0; i < batch.source_ids[m].size(); ++i) {
      hs.smooth.record(DomainTag::source(m), batch.source_ids[m][i], h.smooth[i]);
      if (bank) {
        hs.bank.record(DomainTag::source(m), batch.source_ids[m][i],
                       detail::bank_value(h, cfg.ahm.augmentation, i, num_classes));
      }
    }
  }
  const BatchHardness& h = ctx.target_hardness;
  for (std::size_t i = 0; i < batch.target_ids.size(); ++i) {
    hs.smooth.record(DomainTag::target(), batch.target_ids[i], h.smooth[i]);
    if (bank) {
      hs.bank.record(DomainTag::target(), batch.target_ids[i],
                     detail::bank_value(h, cfg.ahm.augmentation, i, num_classes));
    }
  }
}

/// Phase 3: sum_m (lambda1 * L_inter_m + lambda2 * L_intra_m + L_cls_m).
inline LossTerms assemble_loss(Tape& tape, const ForwardPass& fwd, const StepBatch& batch,
                               const StepContext& ctx, const ExperimentConfig& cfg) {
  const std::size_t M = batch.source_x.size();
  const std::size_t K = fwd.target.weighted.cols();
  LossTerms out;
  const Var zero = tape.constant(Tensor::scalar(0.0));
  Tensor plm;
  if (!ctx.hard.empty()) plm = build_plm(ctx.hard.one_hot(K));

  for (std::size_t m = 0; m < M; ++m) {
    out.cls.push_back(classification_loss(fwd.source[m].probs, batch.source_y[m],
                                          fwd.target.weighted, ctx.pseudo)
                          .total);
    FeatureBatch src{fwd.source[m].features, detail::as_labels(batch.source_y[m]),
                     ctx.source_weights[m], DomainTag::source(m)};
    FeatureBatch tgt{fwd.target.heads[m].features, ctx.pseudo, ctx.target_weights,
                     DomainTag::target()};
    out.inter.push_back(
        inter_loss(src, tgt, ctx.kernels[m], cfg.toggles.weighting, cfg.toggles.wc_mmd).total);
    if (ctx.hard.empty()) {
      out.intra.push_back(zero);
    } else {
      const Var anchors = gather_rows(fwd.target.weighted, ctx.hard.rows);
      const Var views = gather_rows(fwd.target.heads[m].probs, ctx.hard.rows);
      out.intra.push_back(intra_loss(plm, build_pcm(anchors, views, cfg.temperature)));
    }
    const Var term =
        add(add(scale(out.inter[m], ctx.lambda1), scale(out.intra[m], cfg.lambda2)), out.cls[m]);
    out.total = m == 0 ? term : add(out.total, term);
  }
  return out;
}

/// L_total as a function of the model parameters alone, with batch and
/// context frozen; suitable for grad_check.
inline ScalarFn total_loss_fn(const ModelState& like, StepBatch batch, StepContext ctx,
                              ExperimentConfig cfg) {
  return [&like, batch = std::move(batch), ctx = std::move(ctx), cfg = std::move(cfg)](
             Tape& tape, std::span<const Var> params) {
    BoundModel model{&like, std::vector<Var>(params.begin(), params.end())};
    const ForwardPass fwd = forward_all(tape, model, batch);
    return assemble_loss(tape, fwd, batch, ctx, cfg).total;
  };
}

// ---------------------------------------------------------------------------
// Optimizer

/// SGD with momentum: v <- mu v + g; theta <- theta - lr v.
class MomentumSgd {
 public:
  explicit MomentumSgd(const ModelState& model) {
    for (const Parameter& p : model.params()) velocity_.emplace_back(p.value.shape(),
                                                std::vector<double>(p.value.size(), 0.0));
  }

  void step(ModelState& model, const std::vector<Tensor>& grads, double lr_backbone,
            double lr_heads, double lr_ensemble, double momentum) {
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      double lr = lr_heads;
      if (params[i].group == ParamGroup::kBackbone) lr = lr_backbone;
      if (params[i].group == ParamGroup::kEnsemble) lr = lr_ensemble;
      auto v = velocity_[i].data();
      auto g = grads[i].data();
      auto w = params[i].value.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum * v[j] + g[j];
        w[j] -= lr * v[j];
      }
    }
  }

 private:
  std::vector<Tensor> velocity_;
};

// ---------------------------------------------------------------------------
// Training

struct StepMetrics {
  double l_cls = 0.0;
  double l_inter = 0.0;
  double l_intra = 0.0;
  double l_total = 0.0;
  double lambda1 = 0.0;
  std::size_t target_rows = 0;
  std::size_t pl_assigned = 0;
  std::size_t pl_correct = 0;
};

struct TrainerState {
  ModelState model;
  HardnessState hardness;
  MomentumSgd optimizer;
  std::size_t global_step = 0;

  explicit TrainerState(ModelState m) : model(std::move(m)), optimizer(model) {}
};

struct StepSchedule {
  double progress = 0.0;  // in [0, 1]
  std::size_t epoch = 0;
  std::size_t step = 0;   // global step index
};

namespace detail {

inline std::string dump_batch(const StepBatch& batch, const LossTerms& terms) {
  std::ostringstream os;
  os << "non-finite loss; target ids:";
  for (std::size_t id : batch.target_ids) os << ' ' << id;
  for (std::size_t m = 0; m < terms.cls.size(); ++m) {
    os << "\n  source " << m + 1 << ": cls=" << terms.cls[m].value().item()
       << " inter=" << terms.inter[m].value().item()
       << " intra=" << terms.intra[m].value().item() << " ids:";
    for (std::size_t id : batch.source_ids[m]) os << ' ' << id;
  }
  return os.str();
}

}  // namespace detail

/// One optimization step on an already augmented batch.
inline StepMetrics train_step(TrainerState& state, const StepBatch& batch,
                              const ExperimentConfig& cfg, const StepSchedule& sched,
                              const CorruptionPlan& corruption = {},
                              const std::vector<std::size_t>* truth = nullptr) {
  Tape tape;
  const BoundModel model = bind(tape, state.model, true);
  const ForwardPass fwd = forward_all(tape, model, batch);
  const double lambda1 = lambda1_schedule(sched.progress, cfg.theta);
  Rng rng = make_rng({cfg.seed, sched.epoch, sched.step, 0x535445ULL});
  const StepContext ctx =
      derive_context(fwd, batch, state.hardness, cfg, lambda1, rng, corruption, truth);
  const LossTerms terms = assemble_loss(tape, fwd, batch, ctx, cfg);

  StepMetrics out;
  out.lambda1 = lambda1;
  for (std::size_t m = 0; m < terms.cls.size(); ++m) {
    out.l_cls += terms.cls[m].value().item();
    out.l_inter += terms.inter[m].value().item();
    out.l_intra += terms.intra[m].value().item();
  }
  out.l_total = terms.total.value().item();
  if (!std::isfinite(out.l_total)) throw TrainingError(detail::dump_batch(batch, terms));
  out.target_rows = batch.target_ids.size();
  out.pl_assigned = ctx.pl_assigned;
  out.pl_correct = ctx.pl_correct;

  record_hardness(state.hardness, ctx, batch, cfg, state.model.shape().num_classes);

  const Gradients grads = tape.backward(terms.total);
  std::vector<Tensor> g;
  g.reserve(model.params.size());
  for (const Var& p : model.params) g.push_back(grads[p]);
  state.optimizer.step(state.model, g, learning_rate(cfg.lr_backbone, sched.progress, cfg.lr_decay),
                       learning_rate(cfg.lr_heads, sched.progress, cfg.lr_decay),
                       learning_rate(cfg.lr_ensemble, sched.progress, cfg.lr_decay), cfg.momentum);
  ++state.global_step;
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

namespace detail {

inline Tensor mode_probs(const TargetOutput& out, const PredictionSpec& mode) {
  switch (mode.mode) {
    case PredictionMode::kWeighted:
      return out.weighted.value();
    case PredictionMode::kAverage: {
      Tensor avg = out.heads[0].probs.value();
      for (std::size_t m = 1; m < out.heads.size(); ++m) {
        auto src = out.heads[m].probs.value().data();
        auto dst = avg.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      for (double& v : avg.data()) v /= static_cast<double>(out.heads.size());
      return avg;
    }
    case PredictionMode::kSource:
      if (mode.source >= out.heads.size()) {
        throw std::out_of_range("predict: no source head " + std::to_string(mode.source + 1));
      }
      return out.heads[mode.source].probs.value();
  }
  return out.weighted.value();
}

inline EvalResult score(const Tensor& probs, std::span<const std::size_t> labels, std::size_t K) {
  EvalResult out;
  out.confusion.assign(K, std::vector<std::size_t>(K, 0));
  if (labels.empty()) return out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const std::size_t pred = argmax(probs.row_span(i));
    ++out.confusion.at(labels[i]).at(pred);
    if (pred == labels[i]) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return out;
}

}  // namespace detail

/// Class probabilities for `x` under a prediction mode: the weighted
/// combination, the plain average of heads, or one head.
inline Tensor predict(const ModelState& model, const Tensor& x, const PredictionSpec& mode) {
  Tape tape;
  const BoundModel bound = bind(tape, model, false);
  return detail::mode_probs(forward_target(bound, tape.constant(x)), mode);
}

inline EvalResult evaluate(const ModelState& model, const LabeledSet& set,
                           const PredictionSpec& mode) {
  if (set.labels.empty()) return detail::score(Tensor(), {}, model.shape().num_classes);
  return detail::score(predict(model, set.features, mode), set.labels, model.shape().num_classes);
}

/// Several prediction modes from a single forward pass.
inline std::vector<EvalResult> evaluate_modes(const ModelState& model, const LabeledSet& set,
                                              std::span<const PredictionSpec> modes) {
  std::vector<EvalResult> out;
  if (set.labels.empty()) {
    for (std::size_t i = 0; i < modes.size(); ++i) {
      out.push_back(detail::score(Tensor(), {}, model.shape().num_classes));
    }
    return out;
  }
  Tape tape;
  const BoundModel bound = bind(tape, model, false);
  const TargetOutput fwd = forward_target(bound, tape.constant(set.features));
  for (const PredictionSpec& m : modes) {
    out.push_back(detail::score(detail::mode_probs(fwd, m), set.labels, model.shape().num_classes));
  }
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double l_cls = 0.0;
  double l_inter = 0.0;
  double l_intra = 0.0;
  double l_total = 0.0;
  double lambda1 = 0.0;
  double target_acc = 0.0;
  double pl_rate = 0.0;
  double pl_acc = 0.0;
  double hard_src_mean = 0.0;
  double hard_src_std = 0.0;
  double hard_tgt_mean = 0.0;
  double hard_tgt_std = 0.0;
};

inline void write_metrics_header(std::ostream& os) {
  os << "epoch,l_cls,l_inter,l_intra,l_total,lambda1,target_acc,pl_rate,pl_acc,"
        "hard_src_mean,hard_src_std,hard_tgt_mean,hard_tgt_std\n";
}

inline void write_metrics_row(std::ostream& os, const EpochMetrics& e) {
  char buf[64];
  os << e.epoch;
  for (double v : {e.l_cls, e.l_inter, e.l_intra, e.l_total, e.lambda1, e.target_acc, e.pl_rate,
                   e.pl_acc, e.hard_src_mean, e.hard_src_std, e.hard_tgt_mean, e.hard_tgt_std}) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << ',' << buf;
  }
  os << '\n';
}

struct TrainResult {
  ModelState model;
  HardnessState hardness;
  std::vector<EpochMetrics> metrics;
};

/// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(const EpochMetrics&, const TrainerState&)>;

inline ModelShape resolve_shape(const ExperimentConfig& cfg, const TrainingData& data) {
  if (data.sources.empty()) throw ConfigError("training data has no source domains");
  ModelShape s;
  s.input_dim = data.target.cols();
  s.num_classes = data.num_classes;
  s.num_sources = data.sources.size();
  auto check = [](std::size_t configured, std::size_t actual, const char* what) {
    if (configured && configured != actual) {
      throw ConfigError(std::string("config ") + what + "=" + std::to_string(configured) +
                        " but data has " + std::to_string(actual));
    }
  };
  check(cfg.input_dim, s.input_dim, "model.input_dim");
  check(cfg.num_classes, s.num_classes, "model.num_classes");
  check(cfg.num_sources, s.num_sources, "model.num_sources");
  s.hidden = cfg.hidden;
  s.feat_dim = cfg.feat_dim;
  s.align_hidden = cfg.align_hidden;
  s.align_dim = cfg.align_dim;
  return s;
}

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  return {mu, std::sqrt(var / static_cast<double>(v.size()))};
}

inline std::vector<double> augment_rows(const Tensor& x, std::span<const std::size_t> ids,
                                        std::span<const double> hardness, bool enabled,
                                        const AugmentPolicy& policy, std::uint64_t seed,
                                        std::size_t epoch, std::size_t step,
                                        std::uint64_t domain_code) {
  const std::size_t D = x.cols();
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = x.row_span(ids[i]);
    std::vector<double> v;
    if (enabled) {
      Rng rng = make_rng({seed, epoch, step, domain_code, ids[i]});
      v = adaptive_augment(row, hardness[i], policy, rng);
    } else {
      v.assign(row.begin(), row.end());
    }
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(i * D));
  }
  return out;
}

}  // namespace detail

/// Runs the full schedule. `truth` (target labels) feeds only the
/// pseudo-label accuracy metric, the corruption experiment and target_acc;
/// the optimization never reads it otherwise.
inline TrainResult train(const ExperimentConfig& cfg, const TrainingData& data,
                         const LabeledSet* truth = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const ModelShape shape = resolve_shape(cfg, data);
  for (const auto& s : data.sources) {
    if (s.features.cols() != shape.input_dim || s.labels.size() != s.features.rows()) {
      throw ConfigError("source domain shape mismatch");
    }
  }
  TrainerState state(ModelState(shape, cfg.seed));
  TrainResult result{state.model, {}, {}};
  if (cfg.epochs == 0) return result;

  const std::size_t M = data.sources.size();
  const std::size_t B = cfg.batch_size;
  std::size_t steps_per_epoch = data.target.rows() / B;
  for (const auto& s : data.sources) steps_per_epoch = std::min(steps_per_epoch, s.features.rows() / B);
  if (steps_per_epoch == 0) throw ConfigError("every domain needs at least batch_size samples");
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::vector<std::size_t>* truth_labels = truth ? &truth->labels : nullptr;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> order(M + 1);
    for (std::size_t m = 0; m <= M; ++m) {
      const std::size_t n = m < M ? data.sources[m].features.rows() : data.target.rows();
      order[m].resize(n);
      std::iota(order[m].begin(), order[m].end(), std::size_t{0});
      Rng rng = make_rng({cfg.seed, epoch, m, 0x5348554646ULL});
      shuffle(order[m].begin(), order[m].end(), rng);
    }
    const bool corrupt = cfg.corruption.ratio > 0.0 && epoch < cfg.corruption.epochs;
    const CorruptionPlan plan{corrupt ? cfg.corruption.ratio : 0.0, corrupt ? truth_labels : nullptr};
    if (corrupt && !truth_labels) throw ConfigError("pseudo-label corruption needs target labels");

    EpochMetrics em;
    em.epoch = epoch + 1;
    std::size_t assigned = 0, correct = 0, seen = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t step = state.global_step;
      StepBatch batch;
      for (std::size_t m = 0; m <= M; ++m) {
        const bool is_target = m == M;
        const Tensor& x = is_target ? data.target : data.sources[m].features;
        const AugmentPolicy& policy = is_target ? cfg.augment_target : cfg.augment_source;
        const DomainTag tag = is_target ? DomainTag::target() : DomainTag::source(m);
        std::vector<std::size_t> ids(order[m].begin() + static_cast<std::ptrdiff_t>(s * B),
                                     order[m].begin() + static_cast<std::ptrdiff_t>((s + 1) * B));
        std::vector<double> h(ids.size(), 0.0);
        if (cfg.toggles.adjusting) {
          for (std::size_t i = 0; i < ids.size(); ++i) h[i] = augmentation_hardness(state.hardness, cfg, tag, ids[i]);
        }
        Tensor xa({B, x.cols()}, detail::augment_rows(x, ids, h, cfg.toggles.augmentation, policy,
                                                      cfg.seed, epoch, step, m));
        if (is_target) {
          batch.target_x = std::move(xa);
          batch.target_ids = std::move(ids);
        } else {
          std::vector<std::size_t> y;
          for (std::size_t id : ids) y.push_back(data.sources[m].labels[id]);
          batch.source_x.push_back(std::move(xa));
          batch.source_ids.push_back(std::move(ids));
          batch.source_y.push_back(std::move(y));
        }
      }
      const StepSchedule sched{static_cast<double>(step) / static_cast<double>(total_steps), epoch, step};
      const StepMetrics sm = train_step(state, batch, cfg, sched, plan, truth_labels);
      em.l_cls += sm.l_cls;
      em.l_inter += sm.l_inter;
      em.l_intra += sm.l_intra;
      em.l_total += sm.l_total;
      em.lambda1 += sm.lambda1;
      assigned += sm.pl_assigned;
      correct += sm.pl_correct;
      seen += sm.target_rows;
    }
    state.hardness.advance_epoch();

    const double steps = static_cast<double>(steps_per_epoch);
    em.l_cls /= steps;
    em.l_inter /= steps;
    em.l_intra /= steps;
    em.l_total /= steps;
    em.lambda1 /= steps;
    em.pl_rate = seen ? static_cast<double>(assigned) / static_cast<double>(seen) : 0.0;
    em.pl_acc = assigned ? static_cast<double>(correct) / static_cast<double>(assigned) : 0.0;
    if (truth) em.target_acc = evaluate(state.model, *truth, cfg.prediction).accuracy;
    std::vector<double> src, tgt;
    for (const HardnessRecord& r : state.hardness.smooth.snapshot()) {
      (r.domain.is_target() ? tgt : src).push_back(r.value);
    }
    std::tie(em.hard_src_mean, em.hard_src_std) = detail::mean_std(src);
    std::tie(em.hard_tgt_mean, em.hard_tgt_std) = detail::mean_std(tgt);
    result.metrics.push_back(em);
    if (on_epoch) on_epoch(em, state);
  }
  result.model = state.model;
  result.hardness = state.hardness;
  return result;
}

}  // namespace a3mda
