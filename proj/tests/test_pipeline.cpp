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

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "a3mda/pipeline.hpp"

using namespace a3mda;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.hidden = 8;
  c.feat_dim = 6;
  c.align_hidden = 8;
  c.align_dim = 6;
  c.batch_size = 8;
  c.tau = 0.0;
  c.ratio = 0.5;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

// Two sources and a target of three blobs each, 24 rows per domain.
TrainingData toy_data(std::uint64_t seed, LabeledSet* truth = nullptr) {
  Rng rng = make_rng({seed});
  const double centers[3][2] = {{2, 0}, {-1, 1.7}, {-1, -1.7}};
  auto domain = [&](double shift, std::vector<std::size_t>& y) {
    Tensor x(24, 2);
    for (std::size_t i = 0; i < 24; ++i) {
      y.push_back(i % 3);
      x(i, 0) = centers[i % 3][0] + shift + 0.3 * normal01(rng);
      x(i, 1) = centers[i % 3][1] + 0.3 * normal01(rng);
    }
    return x;
  };
  TrainingData d;
  d.num_classes = 3;
  for (double s : {0.0, 0.3}) {
    DomainData dom;
    dom.features = domain(s, dom.labels);
    d.sources.push_back(std::move(dom));
  }
  std::vector<std::size_t> ty;
  d.target = domain(0.6, ty);
  if (truth) *truth = {d.target, ty};
  return d;
}

StepBatch toy_batch(const TrainingData& d) {
  StepBatch b;
  std::vector<std::size_t> ids(8);
  for (std::size_t i = 0; i < 8; ++i) ids[i] = i;
  for (const auto& s : d.sources) {
    Tensor x(8, 2);
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 8; ++i) {
      x(i, 0) = s.features(i, 0);
      x(i, 1) = s.features(i, 1);
      y.push_back(s.labels[i]);
    }
    b.source_x.push_back(x);
    b.source_ids.push_back(ids);
    b.source_y.push_back(y);
  }
  b.target_x = Tensor(8, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    b.target_x(i, 0) = d.target(i, 0);
    b.target_x(i, 1) = d.target(i, 1);
  }
  b.target_ids = ids;
  return b;
}

ModelState toy_model(const ExperimentConfig& c, const TrainingData& d) {
  return ModelState(resolve_shape(c, d), c.seed);
}

struct Evaluated {
  BoundModel model;
  LossTerms terms;
  StepContext ctx;
  double total = 0.0;
};

Evaluated evaluate_step(Tape& tape, const ModelState& m, const StepBatch& b,
                        const ExperimentConfig& c, double lambda1) {
  Evaluated e;
  e.model = bind(tape, m, true);
  const ForwardPass f = forward_all(tape, e.model, b);
  Rng rng = make_rng({1});
  e.ctx = derive_context(f, b, HardnessState{}, c, lambda1, rng);
  e.terms = assemble_loss(tape, f, b, e.ctx, c);
  e.total = e.terms.total.value().item();
  return e;
}

}  // namespace

TEST(Schedules, LambdaAndLearningRate) {
  EXPECT_EQ(lambda1_schedule(0.0, 10.0), 0.0);
  EXPECT_NEAR(lambda1_schedule(0.5, 10.0), 0.986614, 1e-6);
  EXPECT_NEAR(lambda1_schedule(1.0, 10.0), 0.999909, 1e-6);
  EXPECT_EQ(learning_rate(0.01, 0.0, true), 0.01);
  EXPECT_NEAR(learning_rate(0.01, 1.0, true), 0.01 / std::pow(11.0, 0.75), 1e-15);
  EXPECT_EQ(learning_rate(0.01, 1.0, false), 0.01);
}

TEST(ClassificationLoss, UniformIsLogK) {
  Tape tape;
  const Var p = tape.constant(Tensor::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}));
  const std::vector<std::size_t> y = {0, 2};
  EXPECT_NEAR(cross_entropy(p, y).value().item(), std::log(3.0), 1e-12);
}

TEST(ClassificationLoss, MasksUnlabeledTargetRows) {
  Tape tape;
  const Var s = tape.constant(Tensor::matrix({{0.5, 0.5}}));
  const Var t = tape.constant(Tensor::matrix({{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}}));
  const std::vector<std::size_t> ys = {0};
  const std::vector<ClassLabel> none(3);
  const ClassificationLoss a = classification_loss(s, ys, t, none);
  EXPECT_EQ(a.target_rows, 0u);
  EXPECT_EQ(a.target.value().item(), 0.0);
  EXPECT_NEAR(a.total.value().item(), std::log(2.0), 1e-15);
  const std::vector<ClassLabel> some = {0, std::nullopt, 1};
  const ClassificationLoss b = classification_loss(s, ys, t, some);
  EXPECT_EQ(b.target_rows, 2u);
  EXPECT_NEAR(b.target.value().item(), -(std::log(0.9) + std::log(0.5)) / 2.0, 1e-15);
}

TEST(TotalLoss, AdditiveOverTerms) {
  const ExperimentConfig c = small_config();
  const TrainingData d = toy_data(1);
  const ModelState m = toy_model(c, d);
  const StepBatch b = toy_batch(d);
  Tape tape;
  const Evaluated e = evaluate_step(tape, m, b, c, 0.37);
  ASSERT_FALSE(e.ctx.hard.empty());
  double sum = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    sum += 0.37 * e.terms.inter[i].value().item() + c.lambda2 * e.terms.intra[i].value().item() +
           e.terms.cls[i].value().item();
  }
  EXPECT_NEAR(e.total, sum, 1e-12);
}

TEST(TotalLoss, ZeroWeightsLeaveClassification) {
  ExperimentConfig c = small_config();
  c.lambda2 = 0.0;
  const TrainingData d = toy_data(2);
  const ModelState m = toy_model(c, d);
  const StepBatch b = toy_batch(d);
  Tape tape;
  const Evaluated e = evaluate_step(tape, m, b, c, 0.0);
  double cls = 0.0;
  for (const Var& v : e.terms.cls) cls += v.value().item();
  EXPECT_NEAR(e.total, cls, 1e-12);
}

TEST(TotalLoss, ComponentsOffGradientEqualsClassificationGradient) {
  ExperimentConfig c = small_config();
  c.toggles.pcm = false;
  const TrainingData d = toy_data(3);
  const ModelState m = toy_model(c, d);
  const StepBatch b = toy_batch(d);
  Tape t1;
  const Evaluated e = evaluate_step(t1, m, b, c, 0.0);
  EXPECT_TRUE(e.ctx.hard.empty());
  const Gradients g1 = t1.backward(e.terms.total);

  // Classification alone, rebuilt on a fresh tape.
  Tape t2;
  const BoundModel bm = bind(t2, m, true);
  const ForwardPass f = forward_all(t2, bm, b);
  Var cls;
  for (std::size_t s = 0; s < 2; ++s) {
    const Var v = classification_loss(f.source[s].probs, b.source_y[s], f.target.weighted, e.ctx.pseudo).total;
    cls = s == 0 ? v : add(cls, v);
  }
  const Gradients g2 = t2.backward(cls);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const Tensor& a = g1[e.model.params[i]];
    const Tensor& r = g2[bm.params[i]];
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], r[j], 1e-12);
  }
}

TEST(Sgd, ZeroGradientWithZeroVelocityIsANoop) {
  const ExperimentConfig c = small_config();
  const TrainingData d = toy_data(4);
  ModelState m = toy_model(c, d);
  const ModelState before = m;
  MomentumSgd opt(m);
  std::vector<Tensor> g;
  for (const auto& p : m.params()) g.emplace_back(p.value.shape(), std::vector<double>(p.value.size(), 0.0));
  opt.step(m, g, 0.1, 0.1, 0.1, 0.9);
  EXPECT_TRUE(m == before);
}

TEST(Sgd, MomentumRecurrence) {
  const ExperimentConfig c = small_config();
  const TrainingData d = toy_data(5);
  ModelState m = toy_model(c, d);
  const double w0 = m.params()[0].value[0], h0 = m.params()[4].value[0];
  MomentumSgd opt(m);
  std::vector<Tensor> g;
  for (const auto& p : m.params()) g.emplace_back(p.value.shape(), std::vector<double>(p.value.size(), 1.0));
  opt.step(m, g, 0.1, 0.01, 0.01, 0.5);
  opt.step(m, g, 0.1, 0.01, 0.01, 0.5);
  // v1 = 1, v2 = 1.5.
  EXPECT_NEAR(m.params()[0].value[0], w0 - 0.1 * 1.0 - 0.1 * 1.5, 1e-15);
  EXPECT_NEAR(m.params()[4].value[0], h0 - 0.01 * 1.0 - 0.01 * 1.5, 1e-15);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  ExperimentConfig c = small_config();
  c.epochs = 0;
  const TrainingData d = toy_data(6);
  const TrainResult r = train(c, d);
  EXPECT_TRUE(r.model == toy_model(c, d));
  EXPECT_TRUE(r.metrics.empty());
}

TEST(Train, DeterministicAndFinite) {
  const ExperimentConfig c = small_config();
  LabeledSet truth;
  const TrainingData d = toy_data(7, &truth);
  const TrainResult a = train(c, d, &truth);
  const TrainResult b = train(c, d, &truth);
  EXPECT_TRUE(a.model == b.model);
  ASSERT_EQ(a.metrics.size(), 2u);
  std::ostringstream sa, sb;
  for (const auto& e : a.metrics) write_metrics_row(sa, e);
  for (const auto& e : b.metrics) write_metrics_row(sb, e);
  EXPECT_EQ(sa.str(), sb.str());
  for (const auto& e : a.metrics) {
    EXPECT_TRUE(std::isfinite(e.l_total));
    EXPECT_GE(e.target_acc, 0.0);
    EXPECT_LE(e.target_acc, 1.0);
    EXPECT_GE(e.hard_tgt_mean, 0.0);
    EXPECT_LE(e.hard_tgt_mean, 1.0);
  }
  EXPECT_FALSE(a.model == toy_model(c, d));
  // Every sample is recorded once per epoch.
  EXPECT_EQ(a.hardness.smooth.snapshot().size(), 3u * 24u);
}

TEST(Train, RejectsMismatchedConfigAndMissingTruth) {
  ExperimentConfig c = small_config();
  const TrainingData d = toy_data(8);
  c.num_classes = 5;
  EXPECT_THROW(train(c, d), ConfigError);
  c = small_config();
  c.batch_size = 100;
  EXPECT_THROW(train(c, d), ConfigError);
  c = small_config();
  c.corruption.ratio = 0.5;
  c.corruption.epochs = 1;
  EXPECT_THROW(train(c, d), ConfigError);
}

TEST(Evaluate, ModesAgreeWithPredictAndConfusionSums) {
  const ExperimentConfig c = small_config();
  LabeledSet truth;
  const TrainingData d = toy_data(9, &truth);
  ModelState m = toy_model(c, d);
  m.ensemble_logits() = Tensor::row({0.4, -0.4});
  const std::vector<PredictionSpec> modes = {PredictionSpec::parse("weighted"),
                                             PredictionSpec::parse("average"),
                                             PredictionSpec::parse("source-2")};
  const auto all = evaluate_modes(m, truth, modes);
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const Tensor p = predict(m, truth.features, modes[k]);
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      if (argmax(p.row_span(i)) == truth.labels[i]) ++correct;
    }
    for (const auto& row : all[k].confusion) {
      for (std::size_t v : row) total += v;
    }
    EXPECT_EQ(total, truth.labels.size());
    EXPECT_DOUBLE_EQ(all[k].accuracy, static_cast<double>(correct) / 24.0);
    EXPECT_EQ(evaluate(m, truth, modes[k]).accuracy, all[k].accuracy);
  }
  EXPECT_THROW(predict(m, truth.features, PredictionSpec::parse("source-3")), std::out_of_range);
}
