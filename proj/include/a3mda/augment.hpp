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

// Weak and strong perturbations of input vectors and their hardness-adaptive
// convex mix.
//
// Random draws follow a fixed layout so that toggling one op never shifts the
// stream seen by another:
//   weak:   per coordinate j -> normal (jitter), uniform (flip), uniform (crop)
//   strong: uniform (scale), uniform (invert), then per coordinate j ->
//           normal (jitter), uniform (mask)
// adaptive_augment draws the weak view first, then the strong view.

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "a3mda/rng.hpp"

namespace a3mda {

struct WeakAugment {
  bool jitter = true;
  double jitter_sigma = 0.05;
  bool flip = true;
  double flip_prob = 0.0;   // per-coordinate sign flip
  bool crop = true;
  double crop_prob = 0.0;   // per-coordinate zero mask
};

struct StrongAugment {
  bool jitter = true;
  double jitter_sigma = 0.5;
  bool mask = true;
  double mask_prob = 0.1;
  bool scale = true;
  double scale_low = 0.6;
  double scale_high = 1.4;
  bool invert = true;
  double invert_prob = 0.05;  // whole-vector negation
};

struct AugmentPolicy {
  WeakAugment weak;
  StrongAugment strong;

  /// Every op disabled: both views reproduce the input.
  static AugmentPolicy identity() {
    AugmentPolicy p;
    p.weak.jitter = p.weak.flip = p.weak.crop = false;
    p.strong.jitter = p.strong.mask = p.strong.scale = p.strong.invert = false;
    return p;
  }

  void validate() const {
    auto prob = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(std::string("augment: ") + name + " must lie in [0,1]");
      }
    };
    prob(weak.flip_prob, "weak flip_prob");
    prob(weak.crop_prob, "weak crop_prob");
    prob(strong.mask_prob, "strong mask_prob");
    prob(strong.invert_prob, "strong invert_prob");
    if (weak.jitter_sigma < 0.0) throw std::invalid_argument("augment: weak sigma < 0");
    if (strong.jitter_sigma < weak.jitter_sigma) {
      throw std::invalid_argument("augment: strong sigma must not be below weak sigma");
    }
    if (strong.mask_prob < weak.crop_prob) {
      throw std::invalid_argument("augment: strong mask_prob must not be below weak crop_prob");
    }
    if (!(strong.scale_low > 0.0 && strong.scale_low <= strong.scale_high)) {
      throw std::invalid_argument("augment: scale range must satisfy 0 < low <= high");
    }
  }
};

inline std::vector<double> weak_augment(std::span<const double> x, const WeakAugment& p, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    const double noise = normal01(rng);
    const double u_flip = uniform01(rng);
    const double u_crop = uniform01(rng);
    if (p.jitter) v += p.jitter_sigma * noise;
    if (p.flip && u_flip < p.flip_prob) v = -v;
    if (p.crop && u_crop < p.crop_prob) v = 0.0;
  }
  return out;
}

inline std::vector<double> strong_augment(std::span<const double> x, const StrongAugment& p,
                                          Rng& rng) {
  const double u_scale = uniform01(rng);
  const double u_invert = uniform01(rng);
  const double factor = p.scale_low + (p.scale_high - p.scale_low) * u_scale;
  const bool inverted = p.invert && u_invert < p.invert_prob;
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    const double noise = normal01(rng);
    const double u_mask = uniform01(rng);
    if (p.scale) v *= factor;
    if (p.jitter) v += p.jitter_sigma * noise;
    if (p.mask && u_mask < p.mask_prob) v = 0.0;
    if (inverted) v = -v;
  }
  return out;
}

/// h * weak(x) + (1 - h) * strong(x). Harder samples (h near 1) stay close
/// to their weak view.
inline std::vector<double> adaptive_augment(std::span<const double> x, double h,
                                            const AugmentPolicy& policy, Rng& rng) {
  if (!(h >= 0.0 && h <= 1.0)) {
    throw std::invalid_argument("adaptive_augment: hardness " + std::to_string(h) +
                                " outside [0,1]");
  }
  const std::vector<double> weak = weak_augment(x, policy.weak, rng);
  const std::vector<double> strong = strong_augment(x, policy.strong, rng);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = h * weak[j] + (1.0 - h) * strong[j];
  return out;
}

}  // namespace a3mda
