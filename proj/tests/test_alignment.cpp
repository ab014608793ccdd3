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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "a3mda/alignment.hpp"
#include "a3mda/gradcheck.hpp"
#include "a3mda/rng.hpp"
#include "oracles.hpp"

using namespace a3mda;

namespace {

Tensor random_points(std::size_t n, std::size_t d, Rng& rng, double shift = 0.0) {
  Tensor t(n, d);
  for (double& v : t.data()) v = normal01(rng) + shift;
  return t;
}

oracle::Mat rows(const Tensor& t) {
  oracle::Mat m;
  for (std::size_t i = 0; i < t.rows(); ++i) m.emplace_back(t.row_span(i).begin(), t.row_span(i).end());
  return m;
}

double mmd_value(const Tensor& x, const Tensor& y, const KernelSpec& k) {
  Tape tape;
  return mmd2(tape.constant(x), tape.constant(y), k).value().item();
}

std::vector<ClassLabel> labels_of(const std::vector<long>& v) {
  std::vector<ClassLabel> out;
  for (long l : v) out.push_back(l < 0 ? ClassLabel{} : ClassLabel{static_cast<std::size_t>(l)});
  return out;
}

}  // namespace

TEST(Mmd, ClosedFormOneDimension) {
  const Tensor x = Tensor::matrix({{0.0}});
  const Tensor y = Tensor::matrix({{1.0}});
  EXPECT_NEAR(mmd_value(x, y, KernelSpec::single(1.0)), 2.0 - 2.0 * std::exp(-0.5), 1e-12);
}

TEST(Mmd, MatchesDoubleLoopOracle) {
  Rng rng = make_rng({21});
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 32), m = 1 + uniform_index(rng, 32);
    const std::size_t d = 1 + uniform_index(rng, 16);
    const Tensor x = random_points(n, d, rng);
    const Tensor y = random_points(m, d, rng, 0.5);
    const KernelSpec k = KernelSpec::median_heuristic(x, y);
    EXPECT_NEAR(mmd_value(x, y, k), oracle::mmd2(rows(x), rows(y), k.variances), 1e-10);
  }
}

TEST(Mmd, ZeroOnIdenticalBatchesAndSymmetric) {
  Rng rng = make_rng({22});
  const Tensor x = random_points(16, 5, rng);
  const Tensor y = random_points(12, 5, rng, 1.0);
  const KernelSpec k = KernelSpec::median_heuristic(x, y);
  EXPECT_NEAR(mmd_value(x, x, k), 0.0, 1e-12);
  EXPECT_NEAR(mmd_value(x, y, k), mmd_value(y, x, k), 1e-12);
  const double v = mmd_value(x, y, k);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 4.0);
}

TEST(Mmd, MedianHeuristicUsesPooledPairs) {
  const Tensor x = Tensor::matrix({{0.0}, {1.0}});
  const Tensor y = Tensor::matrix({{3.0}});
  // Pairwise squared distances: 1, 9, 4 -> median 4.
  const KernelSpec k = KernelSpec::median_heuristic(x, y);
  ASSERT_EQ(k.variances.size(), 5u);
  EXPECT_EQ(k.variances[0], 1.0);
  EXPECT_EQ(k.variances[2], 4.0);
  EXPECT_EQ(k.variances[4], 16.0);
  // Degenerate batch: every point equal -> falls back to 1.
  const Tensor z = Tensor::matrix({{2.0}, {2.0}});
  EXPECT_EQ(KernelSpec::median_heuristic(z, z).variances[2], 1.0);
}

TEST(Mmd, GradientsWithRespectToFeatures) {
  Rng rng = make_rng({23});
  const Tensor x = random_points(6, 3, rng);
  const Tensor y = random_points(5, 3, rng, 0.7);
  const KernelSpec k = KernelSpec::median_heuristic(x, y);
  const ScalarFn f = [&](Tape&, std::span<const Var> p) { return mmd2(p[0], p[1], k); };
  EXPECT_LE(grad_check(f, {x, y}).max_rel_error, 1e-6);
}

TEST(WcMmd, UniformHardnessEqualsUnweightedOracle) {
  Rng rng = make_rng({24});
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 20), m = 2 + uniform_index(rng, 20);
    const std::size_t d = 1 + uniform_index(rng, 6), K = 2 + uniform_index(rng, 3);
    const Tensor xs = random_points(n, d, rng);
    const Tensor xt = random_points(m, d, rng, 0.3);
    std::vector<long> ys(n), yt(m);
    for (auto& y : ys) y = static_cast<long>(uniform_index(rng, K));
    for (auto& y : yt) y = static_cast<long>(uniform_index(rng, K + 1)) - 1;  // -1: unlabeled
    const auto ls = labels_of(ys), lt = labels_of(yt);
    // Uniform smooth hardness -> clustered comparative weights 1/|group|.
    const auto ws = comparative_ahm(std::vector<double>(n, 0.3), ls);
    const auto wt = comparative_ahm(std::vector<double>(m, 0.3), lt);
    const KernelSpec k = KernelSpec::median_heuristic(xs, xt);
    Tape tape;
    const FeatureBatch s{tape.constant(xs), ls, ws, DomainTag::source(0)};
    const FeatureBatch tb{tape.constant(xt), lt, wt, DomainTag::target()};
    const ClusteredMmd r = wc_mmd2(s, tb, k, true);
    const double ref = oracle::clustered_mmd2(rows(xs), ys, rows(xt), yt, k.variances);
    EXPECT_NEAR(r.value.value().item(), ref, 1e-10);
    // Weighting off uses the same uniform weights.
    EXPECT_NEAR(wc_mmd2(s, tb, k, false).value.value().item(), ref, 1e-10);
  }
}

TEST(WcMmd, EmptyCommonClassesGivesExactZero) {
  Rng rng = make_rng({25});
  const Tensor xs = random_points(4, 2, rng), xt = random_points(4, 2, rng);
  Tape tape;
  const FeatureBatch s{tape.constant(xs), labels_of({0, 0, 1, 1}), {0.5, 0.5, 0.5, 0.5},
                       DomainTag::source(0)};
  const FeatureBatch none{tape.constant(xt), labels_of({-1, -1, -1, -1}), {0, 0, 0, 0},
                          DomainTag::target()};
  const ClusteredMmd a = wc_mmd2(s, none, KernelSpec::single(1.0));
  EXPECT_TRUE(a.skipped);
  EXPECT_EQ(a.value.value().item(), 0.0);
  const FeatureBatch other{tape.constant(xt), labels_of({2, 2, 3, 3}), {0.5, 0.5, 0.5, 0.5},
                           DomainTag::target()};
  const ClusteredMmd b = wc_mmd2(s, other, KernelSpec::single(1.0));
  EXPECT_TRUE(b.skipped);
  EXPECT_EQ(b.value.value().item(), 0.0);
}

TEST(WcMmd, SingleClassHasNoRepel) {
  Rng rng = make_rng({26});
  const Tensor xs = random_points(3, 2, rng), xt = random_points(4, 2, rng);
  const std::vector<double> ws = {0.2, 0.3, 0.5}, wt = {0.1, 0.2, 0.3, 0.4};
  Tape tape;
  const FeatureBatch s{tape.constant(xs), labels_of({1, 1, 1}), ws, DomainTag::source(0)};
  const FeatureBatch t{tape.constant(xt), labels_of({1, 1, 1, 1}), wt, DomainTag::target()};
  const KernelSpec k = KernelSpec::single(1.3);
  const ClusteredMmd r = wc_mmd2(s, t, k);
  EXPECT_EQ(r.repel.value().item(), 0.0);
  EXPECT_NEAR(r.value.value().item(), oracle::weighted_mmd2(rows(xs), ws, rows(xt), wt, k.variances),
              1e-12);
}

TEST(WcMmd, TermsBoundedAndPermutationInvariant) {
  Rng rng = make_rng({27});
  const std::size_t n = 10, m = 12;
  const Tensor xs = random_points(n, 3, rng), xt = random_points(m, 3, rng, 0.4);
  std::vector<long> ys(n), yt(m);
  for (auto& y : ys) y = static_cast<long>(uniform_index(rng, 3));
  for (auto& y : yt) y = static_cast<long>(uniform_index(rng, 4)) - 1;
  std::vector<double> ss(n), st(m);
  for (double& v : ss) v = uniform01(rng);
  for (double& v : st) v = uniform01(rng);
  const auto ws = comparative_ahm(ss, labels_of(ys));
  const auto wt = comparative_ahm(st, labels_of(yt));
  const KernelSpec k = KernelSpec::median_heuristic(xs, xt);
  Tape tape;
  const ClusteredMmd a = wc_mmd2({tape.constant(xs), labels_of(ys), ws, DomainTag::source(0)},
                                 {tape.constant(xt), labels_of(yt), wt, DomainTag::target()}, k);
  EXPECT_GE(a.attract.value().item(), 0.0);
  EXPECT_LE(a.attract.value().item(), 4.0 * static_cast<double>(a.common_classes));
  EXPECT_GE(a.repel.value().item(), 0.0);
  // Reverse the row order of both batches.
  std::vector<std::size_t> rs(n), rt(m);
  std::iota(rs.rbegin(), rs.rend(), std::size_t{0});
  std::iota(rt.rbegin(), rt.rend(), std::size_t{0});
  Tensor ps(n, 3), pt(m, 3);
  std::vector<long> pys, pyt;
  std::vector<double> pws, pwt;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) ps(i, j) = xs(rs[i], j);
    pys.push_back(ys[rs[i]]);
    pws.push_back(ws[rs[i]]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < 3; ++j) pt(i, j) = xt(rt[i], j);
    pyt.push_back(yt[rt[i]]);
    pwt.push_back(wt[rt[i]]);
  }
  const ClusteredMmd b = wc_mmd2({tape.constant(ps), labels_of(pys), pws, DomainTag::source(0)},
                                 {tape.constant(pt), labels_of(pyt), pwt, DomainTag::target()}, k);
  EXPECT_NEAR(a.value.value().item(), b.value.value().item(), 1e-12);
}

TEST(WcMmd, GradientsWithRespectToFeatures) {
  Rng rng = make_rng({28});
  const Tensor xs = random_points(6, 3, rng), xt = random_points(7, 3, rng, 0.5);
  const auto ls = labels_of({0, 1, 2, 0, 1, 2});
  const auto lt = labels_of({0, 0, 1, -1, 2, 2, 1});
  const std::vector<double> ss = {0.1, 0.5, 0.3, 0.9, 0.2, 0.4};
  const std::vector<double> st = {0.3, 0.6, 0.1, 0.5, 0.8, 0.2, 0.7};
  const auto ws = comparative_ahm(ss, ls), wt = comparative_ahm(st, lt);
  const KernelSpec k = KernelSpec::median_heuristic(xs, xt);
  const ScalarFn f = [&](Tape&, std::span<const Var> p) {
    return wc_mmd2({p[0], ls, ws, DomainTag::source(0)}, {p[1], lt, wt, DomainTag::target()}, k).value;
  };
  EXPECT_LE(grad_check(f, {xs, xt}).max_rel_error, 1e-6);
}

TEST(InterLoss, RecomposesFromTerms) {
  Rng rng = make_rng({29});
  const Tensor xs = random_points(8, 4, rng), xt = random_points(8, 4, rng, 0.2);
  const auto ls = labels_of({0, 1, 0, 1, 2, 2, 0, 1});
  const auto lt = labels_of({0, 1, -1, 1, 2, 0, 0, -1});
  const auto ws = comparative_ahm(std::vector<double>{.1, .2, .3, .4, .5, .6, .7, .8}, ls);
  const auto wt = comparative_ahm(std::vector<double>{.8, .7, .6, .5, .4, .3, .2, .1}, lt);
  const KernelSpec k = KernelSpec::median_heuristic(xs, xt);
  Tape tape;
  const FeatureBatch s{tape.constant(xs), ls, ws, DomainTag::source(0)};
  const FeatureBatch t{tape.constant(xt), lt, wt, DomainTag::target()};
  const InterLoss l = inter_loss(s, t, k);
  const double sep = mmd_value(xs, xt, k) + wc_mmd2(s, t, k).value.value().item();
  EXPECT_NEAR(l.total.value().item(), sep, 1e-12);
  EXPECT_NEAR(l.mmd.value().item(), mmd_value(xs, xt, k), 1e-12);
  // Clustered term off leaves plain MMD.
  EXPECT_NEAR(inter_loss(s, t, k, true, false).total.value().item(), mmd_value(xs, xt, k), 1e-12);
}

TEST(InterLoss, IdenticalSingleClassBatchesGiveZero) {
  Rng rng = make_rng({30});
  const Tensor x = random_points(5, 2, rng);
  const auto l = labels_of({0, 0, 0, 0, 0});
  const auto w = comparative_ahm(std::vector<double>(5, 0.5), l);
  Tape tape;
  const Var v = tape.constant(x);
  const InterLoss r = inter_loss({v, l, w, DomainTag::source(0)}, {v, l, w, DomainTag::target()},
                                 KernelSpec::median_heuristic(x, x));
  EXPECT_NEAR(r.total.value().item(), 0.0, 1e-12);
}
