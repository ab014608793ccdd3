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
#include <set>
#include <vector>

#include "a3mda/gradcheck.hpp"
#include "a3mda/intra.hpp"

using namespace a3mda;

TEST(Selection, SizeFollowsRatioOfLabeledRows) {
  EXPECT_EQ(hard_batch_size(0, 0.4), 0u);
  EXPECT_EQ(hard_batch_size(1, 0.4), 1u);
  EXPECT_EQ(hard_batch_size(10, 0.4), 4u);
  EXPECT_EQ(hard_batch_size(7, 1.0), 7u);
  const std::vector<double> h = {0.9, 0.1, 0.8, 0.7, 0.2};
  const std::vector<ClassLabel> pl = {std::nullopt, 0, 1, 1, 2};
  const auto s = select_hard_targets(h, pl, 0.5);
  // 4 labeled rows, keep 2: rows 2 (0.8) and 3 (0.7); row 0 is unlabeled.
  EXPECT_EQ(s.rows, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(s.classes, (std::vector<std::size_t>{1, 1}));
}

TEST(Selection, TiesBreakOnLowerSampleId) {
  const std::vector<double> h = {0.5, 0.5, 0.5};
  const std::vector<ClassLabel> pl = {0, 1, 2};
  const std::vector<std::size_t> ids = {30, 10, 20};
  const auto s = select_hard_targets(h, pl, 0.5, ids);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.rows[0], 1u);
  EXPECT_THROW(select_hard_targets(h, pl, 0.0), std::invalid_argument);
}

TEST(Selection, RandomMatchesSizeAndOnlyPicksLabeled) {
  const std::vector<ClassLabel> pl = {0, std::nullopt, 1, 2, std::nullopt, 0, 1, 1};
  Rng rng = make_rng({3});
  for (int t = 0; t < 20; ++t) {
    const auto s = select_random_targets(pl, 0.4, rng);
    EXPECT_EQ(s.size(), hard_batch_size(6, 0.4));
    std::set<std::size_t> uniq(s.rows.begin(), s.rows.end());
    EXPECT_EQ(uniq.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      ASSERT_TRUE(pl[s.rows[i]]);
      EXPECT_EQ(*pl[s.rows[i]], s.classes[i]);
    }
  }
}

TEST(Plm, SymmetricBinaryUnitDiagonal) {
  HardTargetBatch b;
  b.rows = {0, 1, 2, 3};
  b.classes = {2, 0, 2, 1};
  const Tensor plm = build_plm(b.one_hot(3));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(plm(i, i), 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(plm(i, j), plm(j, i));
      EXPECT_EQ(plm(i, j), b.classes[i] == b.classes[j] ? 1.0 : 0.0);
    }
  }
  EXPECT_THROW(build_plm(Tensor::matrix({{0.5, 0.5}})), std::invalid_argument);
}

TEST(Pcm, RowsSumToOneAndLossBounded) {
  Rng rng = make_rng({4});
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 10), d = 1 + uniform_index(rng, 5);
    Tensor a(n, d), v(n, d);
    for (double& x : a.data()) x = normal01(rng);
    for (double& x : v.data()) x = normal01(rng);
    const Tensor pcm = build_pcm(a, v, 0.15);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(pcm(i, j), 0.0);
        s += pcm(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    HardTargetBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      b.rows.push_back(i);
      b.classes.push_back(uniform_index(rng, 3));
    }
    const double l = intra_loss(build_plm(b.one_hot(3)), pcm);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
  EXPECT_THROW(build_pcm(Tensor(2, 2), Tensor(3, 2), 0.1), ShapeError);
  EXPECT_THROW(build_pcm(Tensor(2, 2), Tensor(2, 2), 0.0), std::invalid_argument);
}

TEST(Intra, TwoByTwoByHand) {
  // Anchors and views as unit vectors; tau = 1.
  const Tensor a = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor v = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor pcm = build_pcm(a, v, 1.0);
  const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(pcm(0, 0), p, 1e-15);
  EXPECT_NEAR(pcm(0, 1), 1.0 - p, 1e-15);
  // Different classes: PLM = I, loss = mean(|1-p|, |1-p|, |1-p|, |1-p|).
  EXPECT_NEAR(intra_loss(Tensor::identity(2), pcm), 1.0 - p, 1e-15);
  // Same class: PLM all ones, loss = mean(1-p, p, p, 1-p) = 0.5.
  EXPECT_NEAR(intra_loss(Tensor::matrix({{1, 1}, {1, 1}}), pcm), 0.5, 1e-15);
}

TEST(Intra, GradientThroughPcm) {
  Rng rng = make_rng({5});
  Tensor a(4, 3), v(4, 3);
  for (double& x : a.data()) x = normal01(rng);
  for (double& x : v.data()) x = normal01(rng);
  HardTargetBatch b;
  b.rows = {0, 1, 2, 3};
  b.classes = {0, 1, 0, 2};
  const Tensor plm = build_plm(b.one_hot(3));
  const ScalarFn f = [&](Tape&, std::span<const Var> p) {
    return intra_loss(plm, build_pcm(p[0], p[1], 0.5));
  };
  EXPECT_LE(grad_check(f, {a, v}).max_rel_error, 1e-6);
}
