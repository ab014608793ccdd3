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

// Inter-domain alignment: squared MMD between source and target features,
// and its weighted-clustered variant with per-class attract/repel terms.
//
// Kernel: k(x, y) = mean_b exp(-|x - y|^2 / (2 v_b)) over variances v_b.
// The median heuristic sets v_b = median(pooled pairwise |.|^2) * f_b with
// f_b in {0.25, 0.5, 1, 2, 4}; it is computed from values only and never
// enters the gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "a3mda/autodiff.hpp"
#include "a3mda/hardness.hpp"

namespace a3mda {

struct KernelSpec {
  std::vector<double> variances;

  static KernelSpec single(double sigma) { return KernelSpec{{sigma * sigma}}; }

  static KernelSpec median_heuristic(const Tensor& x, const Tensor& y,
                                     std::span<const double> factors = kDefaultFactors) {
    std::vector<std::span<const double>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(x.row_span(i));
    for (std::size_t i = 0; i < y.rows(); ++i) rows.push_back(y.row_span(i));
    std::vector<double> d2;
    d2.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) d2.push_back(squared_distance(rows[i], rows[j]));
    }
    double base = 1.0;
    if (!d2.empty()) {
      const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
      std::nth_element(d2.begin(), mid, d2.end());
      double med = *mid;
      if (d2.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(d2.begin(), mid));
      }
      if (med > 0.0 && std::isfinite(med)) base = med;
    }
    KernelSpec spec;
    for (double f : factors) spec.variances.push_back(base * f);
    return spec;
  }

  /// Reference evaluation on two vectors.
  double operator()(std::span<const double> a, std::span<const double> b) const {
    const double d2 = squared_distance(a, b);
    double acc = 0.0;
    for (double v : variances) acc += std::exp(-d2 / (2.0 * v));
    return acc / static_cast<double>(variances.size());
  }

  static double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[j];
      acc += d * d;
    }
    return acc;
  }

  static constexpr double kDefaultFactorValues[5] = {0.25, 0.5, 1.0, 2.0, 4.0};
  static constexpr std::span<const double> kDefaultFactors{kDefaultFactorValues};
};

/// Squared distances |x_i - y_j|^2 as |x_i|^2 + |y_j|^2 - 2 x_i.y_j.
inline Var pairwise_sq_dist(const Var& x, const Var& y) {
  if (x.cols() != y.cols()) {
    throw ShapeError("pairwise distance: feature widths " + std::to_string(x.cols()) + " vs " +
                     std::to_string(y.cols()));
  }
  const Var sx = sum_rows(mul(x, x));
  const Var sy = transpose(sum_rows(mul(y, y)));
  return sub(add(sx, sy), scale(matmul(x, transpose(y)), 2.0));
}

inline Var kernel_matrix(const Var& x, const Var& y, const KernelSpec& kernel) {
  if (kernel.variances.empty()) throw std::invalid_argument("kernel: no bandwidths");
  const Var d2 = pairwise_sq_dist(x, y);
  Var acc;
  for (std::size_t b = 0; b < kernel.variances.size(); ++b) {
    const Var kb = exp(scale(d2, -1.0 / (2.0 * kernel.variances[b])));
    acc = b == 0 ? kb : add(acc, kb);
  }
  return scale(acc, 1.0 / static_cast<double>(kernel.variances.size()));
}

/// Biased squared MMD: mean k(x,x') + mean k(y,y') - 2 mean k(x,y).
inline Var mmd2(const Var& x, const Var& y, const KernelSpec& kernel) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("mmd2: empty batch");
  const Var kxx = mean(kernel_matrix(x, x, kernel));
  const Var kyy = mean(kernel_matrix(y, y, kernel));
  const Var kxy = mean(kernel_matrix(x, y, kernel));
  return sub(add(kxx, kyy), scale(kxy, 2.0));
}

/// |sum_i a_i phi(x_i) - sum_j b_j phi(y_j)|^2 in the kernel's feature space.
inline Var weighted_mmd2(const Var& x, std::span<const double> wx, const Var& y,
                         std::span<const double> wy, const KernelSpec& kernel) {
  if (wx.size() != x.rows() || wy.size() != y.rows()) {
    throw std::invalid_argument("weighted_mmd2: weight count does not match rows");
  }
  Tape& tape = *x.tape();
  const Var a = tape.constant(Tensor::column(wx));
  const Var b = tape.constant(Tensor::column(wy));
  auto quad = [&](const Var& u, const Var& k, const Var& v) {
    return matmul(matmul(transpose(u), k), v);
  };
  const Var xx = quad(a, kernel_matrix(x, x, kernel), a);
  const Var yy = quad(b, kernel_matrix(y, y, kernel), b);
  const Var xy = quad(a, kernel_matrix(x, y, kernel), b);
  return sub(add(xx, yy), scale(xy, 2.0));
}

/// Features of one domain's batch with per-row class attributes and weights.
/// Source rows carry real labels; target rows carry pseudo-labels or nullopt.
struct FeatureBatch {
  Var features;
  std::vector<ClassLabel> labels;
  std::vector<double> weights;  // H^c per row, summing to 1 within each class
  DomainTag domain = DomainTag::target();
};

struct ClusteredMmd {
  Var value;
  Var attract;
  Var repel;
  std::size_t common_classes = 0;
  bool skipped = false;  // no class present on both sides
};

namespace detail {

inline std::vector<double> uniform_group_weights(std::span<const ClassLabel> labels) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& l : labels) {
    if (l) ++counts[*l];
  }
  std::vector<double> w(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) w[i] = 1.0 / static_cast<double>(counts[*labels[i]]);
  }
  return w;
}

}  // namespace detail

/// Kernel matrices between and within two batches, shared by every term
/// of the inter-domain loss.
struct KernelMatrices {
  Var ss;
  Var tt;
  Var st;

  static KernelMatrices build(const Var& s, const Var& t, const KernelSpec& kernel) {
    return {kernel_matrix(s, s, kernel), kernel_matrix(t, t, kernel), kernel_matrix(s, t, kernel)};
  }
};

namespace detail {

/// a^T Kss a + b^T Ktt b - 2 a^T Kst b with full-length (zero-padded)
/// weight columns.
inline Var quad_mmd2(const KernelMatrices& k, const std::vector<double>& a,
                     const std::vector<double>& b) {
  Tape& tape = *k.ss.tape();
  const Var wa = tape.constant(Tensor::column(a));
  const Var wb = tape.constant(Tensor::column(b));
  auto quad = [](const Var& u, const Var& m, const Var& v) {
    return matmul(matmul(transpose(u), m), v);
  };
  return sub(add(quad(wa, k.ss, wa), quad(wb, k.tt, wb)), scale(quad(wa, k.st, wb), 2.0));
}

}  // namespace detail

/// Weighted-clustered squared MMD.
///
/// For each class k present in both the source labels and the target
/// pseudo-labels: the weighted source cluster k is attracted to target
/// cluster k and repelled from the pool of every other pseudo-labeled target
/// row. Pool rows are weighted by hardness relative to their own class
/// (weight times class size), renormalized to sum to 1 over the pool.
/// With `weighting` off, uniform within-group weights replace the supplied
/// ones.
inline ClusteredMmd wc_mmd2(const FeatureBatch& source, const FeatureBatch& target,
                            const KernelMatrices& kernels, bool weighting = true) {
  Tape& tape = *source.features.tape();
  const std::size_t ns = source.features.rows();
  const std::size_t nt = target.features.rows();
  if (source.labels.size() != ns || target.labels.size() != nt) {
    throw std::invalid_argument("wc_mmd2: labels do not match feature rows");
  }
  const std::vector<double> ws =
      weighting ? source.weights : detail::uniform_group_weights(source.labels);
  const std::vector<double> wt =
      weighting ? target.weights : detail::uniform_group_weights(target.labels);
  if (ws.size() != ns || wt.size() != nt) {
    throw std::invalid_argument("wc_mmd2: weights do not match feature rows");
  }

  std::set<std::size_t> src_classes, tgt_classes;
  for (const auto& l : source.labels) {
    if (l) src_classes.insert(*l);
  }
  for (const auto& l : target.labels) {
    if (l) tgt_classes.insert(*l);
  }

  std::map<std::size_t, std::size_t> tgt_counts;
  for (const auto& l : target.labels) {
    if (l) ++tgt_counts[*l];
  }

  ClusteredMmd out;
  const Var zero = tape.constant(Tensor::scalar(0.0));
  out.value = out.attract = out.repel = zero;
  bool first = true;
  for (std::size_t k : src_classes) {
    if (!tgt_classes.count(k)) continue;
    ++out.common_classes;
    std::vector<double> a(ns, 0.0), b_same(nt, 0.0), b_pool(nt, 0.0);
    for (std::size_t i = 0; i < ns; ++i) {
      if (source.labels[i] == k) a[i] = ws[i];
    }
    double pool_sum = 0.0;
    std::size_t pool_count = 0;
    for (std::size_t i = 0; i < nt; ++i) {
      if (!target.labels[i]) continue;
      if (*target.labels[i] == k) {
        b_same[i] = wt[i];
      } else {
        // Row weight relative to its own class mean, so uniform hardness
        // gives every pooled row the same weight.
        b_pool[i] = wt[i] * static_cast<double>(tgt_counts[*target.labels[i]]);
        pool_sum += b_pool[i];
        ++pool_count;
      }
    }
    const Var attract = detail::quad_mmd2(kernels, a, b_same);
    Var repel = zero;
    if (pool_count) {
      for (std::size_t i = 0; i < nt; ++i) {
        if (!target.labels[i] || *target.labels[i] == k) continue;
        b_pool[i] = pool_sum > 0.0 ? b_pool[i] / pool_sum : 1.0 / static_cast<double>(pool_count);
      }
      repel = detail::quad_mmd2(kernels, a, b_pool);
    }
    if (first) {
      out.attract = attract;
      out.repel = repel;
      first = false;
    } else {
      out.attract = add(out.attract, attract);
      out.repel = add(out.repel, repel);
    }
  }
  out.skipped = out.common_classes == 0;
  if (!out.skipped) out.value = sub(out.attract, out.repel);
  return out;
}

inline ClusteredMmd wc_mmd2(const FeatureBatch& source, const FeatureBatch& target,
                            const KernelSpec& kernel, bool weighting = true) {
  return wc_mmd2(source, target, KernelMatrices::build(source.features, target.features, kernel),
                 weighting);
}

struct InterLoss {
  Var total;
  Var mmd;
  ClusteredMmd clustered;
};

/// mmd2 over the whole batches plus, when enabled, the weighted-clustered term.
inline InterLoss inter_loss(const FeatureBatch& source, const FeatureBatch& target,
                            const KernelSpec& kernel, bool weighting = true,
                            bool clustered = true) {
  if (source.features.rows() == 0 || target.features.rows() == 0) {
    throw std::invalid_argument("inter_loss: empty batch");
  }
  const KernelMatrices k = KernelMatrices::build(source.features, target.features, kernel);
  InterLoss out;
  out.mmd = sub(add(mean(k.ss), mean(k.tt)), scale(mean(k.st), 2.0));
  if (clustered) {
    out.clustered = wc_mmd2(source, target, k, weighting);
    out.total = add(out.mmd, out.clustered.value);
  } else {
    out.clustered.value = out.clustered.attract = out.clustered.repel =
        source.features.tape()->constant(Tensor::scalar(0.0));
    out.clustered.skipped = true;
    out.total = out.mmd;
  }
  return out;
}

}  // namespace a3mda
