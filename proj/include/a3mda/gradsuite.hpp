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

// Finite-difference checks of every training loss on a small model.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "a3mda/gradcheck.hpp"
#include "a3mda/pipeline.hpp"

namespace a3mda {

/// Small enough for a full central-difference sweep (342 parameters).
inline ExperimentConfig gradcheck_toy_config() {
  ExperimentConfig c;
  c.hidden = 8;
  c.feat_dim = 6;
  c.align_hidden = 8;
  c.align_dim = 6;
  c.batch_size = 8;
  c.tau = 0.0;  // every target row pseudo-labeled, so no term is trivially 0
  c.ratio = 0.5;
  c.seed = 3;
  return c;
}

struct GradSuiteEntry {
  std::string loss;
  GradCheckReport report;
};

struct GradSuite {
  std::size_t parameters = 0;
  std::vector<GradSuiteEntry> entries;

  double max_rel_error() const {
    double e = 0.0;
    for (const auto& x : entries) e = std::max(e, x.report.max_rel_error);
    return e;
  }
};

/// Checks L_mmd, L_wc, L_intra, L_cls and L_total. Batches are random points,
/// pseudo-labels, hardness weights, bandwidths and the hard-target selection
/// are taken at the base parameters and then held fixed.
inline GradSuite run_gradcheck_suite(const ExperimentConfig& cfg = gradcheck_toy_config(),
                                     std::size_t num_classes = 3, std::size_t num_sources = 2,
                                     double step = 1e-5) {
  ModelShape shape;
  shape.input_dim = 2;
  shape.hidden = cfg.hidden;
  shape.feat_dim = cfg.feat_dim;
  shape.align_hidden = cfg.align_hidden;
  shape.align_dim = cfg.align_dim;
  shape.num_classes = num_classes;
  shape.num_sources = num_sources;
  const ModelState model(shape, cfg.seed);
  // Non-zero ensemble logits so the weighting path is exercised off its symmetric point.
  ModelState base = model;
  for (std::size_t m = 0; m < num_sources; ++m) base.ensemble_logits()(0, m) = 0.3 * static_cast<double>(m);

  Rng rng = make_rng({cfg.seed, 0x475244ULL});
  const std::size_t B = cfg.batch_size;
  StepBatch batch;
  for (std::size_t m = 0; m < num_sources; ++m) {
    Tensor x(B, 2);
    std::vector<std::size_t> ids, y;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < 2; ++j) x(i, j) = 2.0 * normal01(rng);
      ids.push_back(i);
      y.push_back(i % num_classes);
    }
    batch.source_x.push_back(x);
    batch.source_ids.push_back(ids);
    batch.source_y.push_back(y);
  }
  batch.target_x = Tensor(B, 2);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < 2; ++j) batch.target_x(i, j) = 2.0 * normal01(rng);
    batch.target_ids.push_back(i);
  }

  StepContext ctx;
  {
    Tape tape;
    const BoundModel bound = bind(tape, base, false);
    const ForwardPass fwd = forward_all(tape, bound, batch);
    HardnessState hs;
    Rng ctx_rng = make_rng({cfg.seed, 0x435458ULL});
    ctx = derive_context(fwd, batch, hs, cfg, 0.7, ctx_rng);
  }

  std::vector<Tensor> params;
  for (const Parameter& p : base.params()) params.push_back(p.value);

  using Pick = std::function<Var(Tape&, const ForwardPass&)>;
  auto fn = [&base, batch, ctx, cfg](Pick pick) -> ScalarFn {
    return [&base, batch, ctx, cfg, pick](Tape& tape, std::span<const Var> ps) {
      const BoundModel bound{&base, std::vector<Var>(ps.begin(), ps.end())};
      const ForwardPass fwd = forward_all(tape, bound, batch);
      return pick(tape, fwd);
    };
  };
  auto per_source = [&](std::function<Var(Tape&, const ForwardPass&, std::size_t)> term) {
    return fn([num_sources, term](Tape& tape, const ForwardPass& fwd) {
      Var total = term(tape, fwd, 0);
      for (std::size_t m = 1; m < num_sources; ++m) total = add(total, term(tape, fwd, m));
      return total;
    });
  };
  auto features = [&](const ForwardPass& fwd, std::size_t m) {
    return std::pair{
        FeatureBatch{fwd.source[m].features, detail::as_labels(batch.source_y[m]),
                     ctx.source_weights[m], DomainTag::source(m)},
        FeatureBatch{fwd.target.heads[m].features, ctx.pseudo, ctx.target_weights, DomainTag::target()}};
  };

  GradSuite suite;
  suite.parameters = base.parameter_count();
  suite.entries.push_back({"L_mmd", grad_check(per_source([&](Tape&, const ForwardPass& f, std::size_t m) {
                             return mmd2(f.source[m].features, f.target.heads[m].features, ctx.kernels[m]);
                           }), params, step)});
  suite.entries.push_back({"L_wc_mmd", grad_check(per_source([&](Tape&, const ForwardPass& f, std::size_t m) {
                             const auto [s, t] = features(f, m);
                             return wc_mmd2(s, t, ctx.kernels[m], true).value;
                           }), params, step)});
  suite.entries.push_back({"L_intra", grad_check(per_source([&](Tape&, const ForwardPass& f, std::size_t m) {
                             const Tensor plm = build_plm(ctx.hard.one_hot(num_classes));
                             return intra_loss(plm, build_pcm(gather_rows(f.target.weighted, ctx.hard.rows),
                                                              gather_rows(f.target.heads[m].probs, ctx.hard.rows),
                                                              cfg.temperature));
                           }), params, step)});
  suite.entries.push_back({"L_cls", grad_check(per_source([&](Tape&, const ForwardPass& f, std::size_t m) {
                             return classification_loss(f.source[m].probs, batch.source_y[m],
                                                        f.target.weighted, ctx.pseudo).total;
                           }), params, step)});
  suite.entries.push_back({"L_total", grad_check(total_loss_fn(base, batch, ctx, cfg), params, step)});
  return suite;
}

}  // namespace a3mda
