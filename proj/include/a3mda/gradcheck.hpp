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
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "a3mda/autodiff.hpp"

namespace a3mda {

/// Builds a scalar loss on `tape` from parameter leaves.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

inline double evaluate_scalar(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  return f(tape, leaves).value().item();
}

/// Analytic gradients of `f` at `params`, one tensor per parameter.
inline std::vector<Tensor> analytic_gradient(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
  const Var loss = f(tape, leaves);
  const Gradients grads = tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& v : leaves) out.push_back(grads[v]);
  return out;
}

/// Compares reverse-mode gradients against central differences.
///
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|); the
/// report holds the maximum over every coordinate of every parameter.
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params,
                                  double step = 1e-5) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const std::vector<Tensor> analytic = analytic_gradient(f, params);
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + step;
      const double up = evaluate_scalar(f, params);
      params[p][i] = saved - step;
      const double down = evaluate_scalar(f, params);
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err =
          std::fabs(analytic[p][i] - numeric) / std::max(1.0, std::fabs(numeric));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace a3mda
