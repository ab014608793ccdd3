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

#include "a3mda/model.hpp"

using namespace a3mda;

namespace {

ModelShape small_shape(std::size_t M = 3) {
  ModelShape s;
  s.input_dim = 2;
  s.hidden = 5;
  s.feat_dim = 4;
  s.align_hidden = 6;
  s.align_dim = 3;
  s.num_classes = 4;
  s.num_sources = M;
  return s;
}

Tensor inputs(std::size_t n, Rng& rng) {
  Tensor x(n, 2);
  for (double& v : x.data()) v = normal01(rng);
  return x;
}

}  // namespace

TEST(Model, ParameterCountAndOrder) {
  const ModelShape s = small_shape();
  const ModelState m(s, 1);
  const std::size_t backbone = 2 * 5 + 5 + 5 * 4 + 4;
  const std::size_t head = 4 * 6 + 6 + 6 * 3 + 3 + 3 * 4 + 4;
  EXPECT_EQ(m.parameter_count(), backbone + 3 * head + 3);
  EXPECT_EQ(m.params().size(), 4u + 6u * 3u + 1u);
  EXPECT_EQ(m.params()[0].name, "F.l1.w");
  EXPECT_EQ(m.params()[m.source_offset(1)].name, "A2.l1.w");
  EXPECT_EQ(m.params()[m.source_offset(2) + 4].name, "C3.w");
  EXPECT_EQ(m.params().back().name, "ensemble.u");
  EXPECT_EQ(m.params()[0].group, ParamGroup::kBackbone);
  EXPECT_EQ(m.params()[4].group, ParamGroup::kHead);
  EXPECT_EQ(m.params().back().group, ParamGroup::kEnsemble);
  // Zero ensemble logits give uniform source weights.
  for (double w : m.source_weights()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Model, ForwardShapesAndSimplex) {
  const ModelState m(small_shape(), 2);
  Rng rng = make_rng({1});
  Tape tape;
  const BoundModel b = bind(tape, m, false);
  const Var x = tape.constant(inputs(7, rng));
  const HeadOutput h = forward_source(b, x, 1);
  EXPECT_EQ(h.features.rows(), 7u);
  EXPECT_EQ(h.features.cols(), 3u);
  EXPECT_EQ(h.probs.cols(), 4u);
  const TargetOutput t = forward_target(b, x);
  ASSERT_EQ(t.heads.size(), 3u);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += t.weighted.value()(i, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(forward_source(b, x, 3), std::out_of_range);
  EXPECT_THROW(forward_source(b, tape.constant(Tensor(2, 3)), 0), ShapeError);
}

TEST(Model, WeightedIsConvexCombinationOfHeads) {
  ModelState m(small_shape(), 3);
  m.ensemble_logits() = Tensor::row({0.3, -1.0, 2.0});
  const auto w = m.source_weights();
  Rng rng = make_rng({2});
  Tape tape;
  const BoundModel b = bind(tape, m, false);
  const TargetOutput t = forward_target(b, tape.constant(inputs(5, rng)));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double ref = 0.0;
      for (std::size_t s = 0; s < 3; ++s) ref += w[s] * t.heads[s].probs.value()(i, k);
      EXPECT_NEAR(t.weighted.value()(i, k), ref, 1e-15);
    }
  }
}

TEST(Model, SingleSourceWeightedEqualsHead) {
  const ModelState m(small_shape(1), 4);
  Rng rng = make_rng({3});
  Tape tape;
  const BoundModel b = bind(tape, m, false);
  const TargetOutput t = forward_target(b, tape.constant(inputs(6, rng)));
  EXPECT_EQ(m.source_weights()[0], 1.0);
  for (std::size_t i = 0; i < t.weighted.value().size(); ++i) {
    EXPECT_EQ(t.weighted.value()[i], t.heads[0].probs.value()[i]);
  }
}

TEST(Model, CheckpointRoundTripIsExact) {
  ModelState m(small_shape(), 5);
  m.ensemble_logits() = Tensor::row({0.1, 1.0 / 3.0, -2.5e-300});
  std::stringstream ss;
  write_checkpoint(ss, m);
  const ModelState back = read_checkpoint(ss);
  EXPECT_TRUE(back == m);
  std::stringstream trunc(ss.str().substr(0, ss.str().size() / 2));
  EXPECT_THROW(read_checkpoint(trunc), std::runtime_error);
  std::stringstream bad("not-a-checkpoint 1");
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
}

TEST(Model, SameSeedSameInit) {
  EXPECT_TRUE(ModelState(small_shape(), 9) == ModelState(small_shape(), 9));
  EXPECT_FALSE(ModelState(small_shape(), 9) == ModelState(small_shape(), 10));
}

TEST(PseudoLabel, ThresholdAndTies) {
  const Tensor p = Tensor::matrix({{0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}, {0.4, 0.4, 0.2}});
  const auto pl = pseudo_label(p, 0.6);
  EXPECT_EQ(pl[0], ClassLabel{0});
  EXPECT_FALSE(pl[1]);  // strict threshold
  EXPECT_FALSE(pl[2]);
  const auto all = pseudo_label(p, 0.0);
  EXPECT_EQ(all[2], ClassLabel{0});  // lowest index wins the tie
  EXPECT_THROW(pseudo_label(p, 1.5), std::invalid_argument);
}
