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

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "a3mda/autodiff.hpp"
#include "a3mda/hardness.hpp"
#include "a3mda/rng.hpp"

namespace a3mda {

/// Rows of the target batch chosen for the pseudo-contrastive constraint,
/// with their pseudo-classes. Every selected row is pseudo-labeled.
struct HardTargetBatch {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> classes;

  bool empty() const noexcept { return rows.empty(); }
  std::size_t size() const noexcept { return rows.size(); }

  /// |rows| x K stacked one-hot pseudo-labels.
  Tensor one_hot(std::size_t num_classes) const {
    Tensor out(rows.size(), num_classes);
    for (std::size_t i = 0; i < classes.size(); ++i) out(i, classes[i]) = 1.0;
    return out;
  }
};

/// max(1, floor(ratio * eligible)), or 0 when nothing is eligible.
inline std::size_t hard_batch_size(std::size_t eligible, double ratio) {
  if (eligible == 0) return 0;
  const auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(eligible)));
  return std::clamp<std::size_t>(n, 1, eligible);
}

/// Keeps the top `ratio` of pseudo-labeled rows ranked by hardness,
/// descending; ties go to the lower sample id (row index when ids are absent).
inline HardTargetBatch select_hard_targets(std::span<const double> hardness,
                                           std::span<const ClassLabel> pseudo, double ratio,
                                           std::span<const std::size_t> sample_ids = {}) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("select_hard_targets: ratio must lie in (0,1]");
  }
  if (hardness.size() != pseudo.size() ||
      (!sample_ids.empty() && sample_ids.size() != pseudo.size())) {
    throw std::invalid_argument("select_hard_targets: input lengths differ");
  }
  auto id = [&](std::size_t r) { return sample_ids.empty() ? r : sample_ids[r]; };
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < pseudo.size(); ++r) {
    if (pseudo[r]) eligible.push_back(r);
  }
  std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    if (hardness[a] != hardness[b]) return hardness[a] > hardness[b];
    return id(a) < id(b);
  });
  eligible.resize(hard_batch_size(eligible.size(), ratio));
  HardTargetBatch out;
  for (std::size_t r : eligible) {
    out.rows.push_back(r);
    out.classes.push_back(*pseudo[r]);
  }
  return out;
}

/// Same size as select_hard_targets but drawn uniformly at random from the
/// pseudo-labeled rows (the no-selection ablation).
inline HardTargetBatch select_random_targets(std::span<const ClassLabel> pseudo, double ratio,
                                             Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < pseudo.size(); ++r) {
    if (pseudo[r]) eligible.push_back(r);
  }
  const std::size_t n = hard_batch_size(eligible.size(), ratio);
  shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(n);
  HardTargetBatch out;
  for (std::size_t r : eligible) {
    out.rows.push_back(r);
    out.classes.push_back(*pseudo[r]);
  }
  return out;
}

/// Pseudo-label matrix PL * PL^T from stacked one-hot rows.
inline Tensor build_plm(const Tensor& one_hot) {
  for (std::size_t i = 0; i < one_hot.rows(); ++i) {
    std::size_t ones = 0;
    for (double v : one_hot.row_span(i)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) {
      throw std::invalid_argument("build_plm: row " + std::to_string(i) + " is not one-hot");
    }
  }
  return matmul(one_hot, transpose(one_hot));
}

/// Row i is softmax_j(anchor_i . view_j / temperature) over every selected
/// row j, the anchor's own view included.
inline Var build_pcm(const Var& anchors, const Var& views, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("build_pcm: temperature must be > 0");
  if (anchors.rows() != views.rows() || anchors.cols() != views.cols()) {
    throw ShapeError("build_pcm: anchors " + shape_string({anchors.rows(), anchors.cols()}) +
                     " vs views " + shape_string({views.rows(), views.cols()}));
  }
  return softmax_rows(scale(matmul(anchors, transpose(views)), 1.0 / temperature));
}

inline Tensor build_pcm(const Tensor& anchors, const Tensor& views, double temperature) {
  Tape tape;
  return build_pcm(tape.constant(anchors), tape.constant(views), temperature).value();
}

/// Mean absolute difference between the constant PLM and a PCM.
inline Var intra_loss(const Tensor& plm, const Var& pcm) {
  if (!plm.same_shape(pcm.value())) {
    throw ShapeError("intra_loss: PLM " + shape_string({plm.rows(), plm.cols()}) + " vs PCM " +
                     shape_string({pcm.rows(), pcm.cols()}));
  }
  return mean(abs(sub(pcm.tape()->constant(plm), pcm)));
}

inline double intra_loss(const Tensor& plm, const Tensor& pcm) {
  Tape tape;
  return intra_loss(plm, tape.constant(pcm)).value().item();
}

}  // namespace a3mda
