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

// Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tape records every operation in creation order, so the node list is
// already a topological order of the DAG; backward() walks it once in
// reverse. The op set is closed: matmul, add, subtract, scalar-multiply,
// elementwise-multiply, relu, tanh, exp, log, row-softmax, row-sum, mean,
// L2-norm, gather-rows, concatenate, plus transpose and abs which the MMD and
// intra-domain losses need. add/subtract/multiply broadcast dimensions of
// size 1.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "a3mda/tensor.hpp"

namespace a3mda {

inline constexpr double kLogFloor = 1e-12;

enum class Op {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kScale,
  kMul,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSoftmaxRows,
  kSumRows,
  kMean,
  kL2Norm,
  kGatherRows,
  kConcatRows,
  kTranspose,
  kAbs,
};

struct TapeNode {
  Op op = Op::kLeaf;
  std::vector<std::size_t> parents;
  Tensor value;
  bool requires_grad = false;
  double scalar = 0.0;                // scale factor for kScale
  std::vector<std::size_t> indices;   // row indices for kGatherRows
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient accumulators produced by one backward pass, indexed by node id.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& operator[](const Var& v) const { return grads_.at(v.id()); }
  const Tensor& at(std::size_t id) const { return grads_.at(id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; gradients flow into it.
  Var parameter(Tensor value) { return push(Op::kLeaf, {}, std::move(value), true); }
  /// Constant leaf; no gradient is tracked.
  Var constant(Tensor value) { return push(Op::kLeaf, {}, std::move(value), false); }

  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var push(Op op, std::vector<std::size_t> parents, Tensor value, bool requires_grad,
           double scalar = 0.0, std::vector<std::size_t> indices = {}) {
    TapeNode n;
    n.op = op;
    n.parents = std::move(parents);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.scalar = scalar;
    n.indices = std::move(indices);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool needs_grad(std::initializer_list<Var> vs) const {
    for (const Var& v : vs) {
      if (nodes_[v.id()].requires_grad) return true;
    }
    return false;
  }

  Gradients backward(const Var& loss) const;

 private:
  std::vector<TapeNode> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op, const Tensor& x,
                                 const Tensor& y) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " +
                   shape_string({x.rows(), x.cols()}) + " with " +
                   shape_string({y.rows(), y.cols()}));
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name, F f) {
  const std::size_t r = broadcast_dim(a.rows(), b.rows(), name, a, b);
  const std::size_t c = broadcast_dim(a.cols(), b.cols(), name, a, b);
  Tensor out(r, c);
  const bool ar = a.rows() == 1, ac = a.cols() == 1;
  const bool br = b.rows() == 1, bc = b.cols() == 1;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = f(a(ar ? 0 : i, ac ? 0 : j), b(br ? 0 : i, bc ? 0 : j));
    }
  }
  return out;
}

/// Sum a broadcast gradient back down to the operand's shape.
inline Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (g.rows() == like.rows() && g.cols() == like.cols()) {
    return Tensor(like.shape(), g.values());
  }
  Tensor out(like.rows(), like.cols());
  const bool rr = like.rows() == 1, rc = like.cols() == 1;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) out(rr ? 0 : i, rc ? 0 : j) += g(i, j);
  }
  return Tensor(like.shape(), std::move(out.values()));
}

inline void accumulate(Tensor& acc, const Tensor& g) {
  auto dst = acc.data();
  auto src = g.data();
  assert(dst.size() == src.size());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.push(Op::kMatmul, {a.id(), b.id()}, matmul(a.value(), b.value()), t.needs_grad({a, b}));
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.push(Op::kAdd, {a.id(), b.id()},
                detail::broadcast_binary(a.value(), b.value(), "add",
                                         [](double x, double y) { return x + y; }),
                t.needs_grad({a, b}));
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.push(Op::kSub, {a.id(), b.id()},
                detail::broadcast_binary(a.value(), b.value(), "subtract",
                                         [](double x, double y) { return x - y; }),
                t.needs_grad({a, b}));
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.push(Op::kMul, {a.id(), b.id()},
                detail::broadcast_binary(a.value(), b.value(), "multiply",
                                         [](double x, double y) { return x * y; }),
                t.needs_grad({a, b}));
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  return t.push(Op::kScale, {a.id()}, detail::map(a.value(), [s](double v) { return v * s; }),
                t.needs_grad({a}), s);
}

inline Var relu(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kRelu, {a.id()},
                detail::map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }),
                t.needs_grad({a}));
}

inline Var tanh(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kTanh, {a.id()}, detail::map(a.value(), [](double v) { return std::tanh(v); }),
                t.needs_grad({a}));
}

inline Var exp(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kExp, {a.id()}, detail::map(a.value(), [](double v) { return std::exp(v); }),
                t.needs_grad({a}));
}

/// Natural log with its argument clamped at kLogFloor; never produces NaN.
inline Var log(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kLog, {a.id()},
                detail::map(a.value(), [](double v) { return std::log(std::max(v, kLogFloor)); }),
                t.needs_grad({a}));
}

inline Var abs(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kAbs, {a.id()}, detail::map(a.value(), [](double v) { return std::fabs(v); }),
                t.needs_grad({a}));
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row_span(i);
    auto dst = out.row_span(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      dst[j] = std::exp(in[j] - mx);
      z += dst[j];
    }
    for (double& v : dst) v /= z;
  }
  return out;
}

inline Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kSoftmaxRows, {a.id()}, softmax_rows(a.value()), t.needs_grad({a}));
}

/// r x c -> r x 1.
inline Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double acc = 0.0;
    for (double v : x.row_span(i)) acc += v;
    out(i, 0) = acc;
  }
  Tape& t = *a.tape();
  return t.push(Op::kSumRows, {a.id()}, std::move(out), t.needs_grad({a}));
}

inline Var mean(const Var& a) {
  const Tensor& x = a.value();
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tape& t = *a.tape();
  return t.push(Op::kMean, {a.id()}, Tensor::scalar(acc / static_cast<double>(x.size())),
                t.needs_grad({a}));
}

/// Frobenius norm over every entry.
inline Var l2_norm(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v * v;
  Tape& t = *a.tape();
  return t.push(Op::kL2Norm, {a.id()}, Tensor::scalar(std::sqrt(acc)), t.needs_grad({a}));
}

inline Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_string({x.rows(), x.cols()}));
    }
    auto src = x.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  Tape& t = *a.tape();
  return t.push(Op::kGatherRows, {a.id()}, std::move(out), t.needs_grad({a}), 0.0,
                std::move(rows));
}

/// Vertical concatenation.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  bool grad = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " +
                       shape_string({p.rows(), p.cols()}) + " vs " +
                       shape_string({parts.front().rows(), c}));
    }
    r += p.rows();
    grad = grad || t.node(p.id()).requires_grad;
    ids.push_back(p.id());
  }
  Tensor out(r, c);
  std::size_t at = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += src.size();
  }
  return t.push(Op::kConcatRows, std::move(ids), std::move(out), grad);
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape();
  return t.push(Op::kTranspose, {a.id()}, transpose(a.value()), t.needs_grad({a}));
}

// ---------------------------------------------------------------------------
// Reverse pass

inline Gradients Tape::backward(const Var& loss) const {
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    grads[i] = Tensor(nodes_[i].value.shape(),
                      std::vector<double>(nodes_[i].value.size(), 0.0));
  }
  grads[loss.id()].data()[0] = 1.0;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const TapeNode& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kLeaf) continue;
    const Tensor& g = grads[id];
    const auto& p = n.parents;
    auto want = [&](std::size_t k) { return nodes_[p[k]].requires_grad; };
    auto val = [&](std::size_t k) -> const Tensor& { return nodes_[p[k]].value; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        if (want(0)) detail::accumulate(grads[p[0]], matmul(g, transpose(val(1))));
        if (want(1)) detail::accumulate(grads[p[1]], matmul(transpose(val(0)), g));
        break;
      }
      case Op::kAdd:
      case Op::kSub: {
        if (want(0)) detail::accumulate(grads[p[0]], detail::reduce_to(g, val(0)));
        if (want(1)) {
          Tensor gb = detail::reduce_to(g, val(1));
          if (n.op == Op::kSub) {
            for (double& v : gb.data()) v = -v;
          }
          detail::accumulate(grads[p[1]], gb);
        }
        break;
      }
      case Op::kMul: {
        if (want(0)) {
          Tensor ga = detail::broadcast_binary(g, val(1), "multiply",
                                               [](double x, double y) { return x * y; });
          detail::accumulate(grads[p[0]], detail::reduce_to(ga, val(0)));
        }
        if (want(1)) {
          Tensor gb = detail::broadcast_binary(g, val(0), "multiply",
                                               [](double x, double y) { return x * y; });
          detail::accumulate(grads[p[1]], detail::reduce_to(gb, val(1)));
        }
        break;
      }
      case Op::kScale: {
        Tensor ga = detail::map(g, [s = n.scalar](double v) { return v * s; });
        detail::accumulate(grads[p[0]], ga);
        break;
      }
      case Op::kRelu:
      case Op::kTanh:
      case Op::kExp:
      case Op::kLog:
      case Op::kAbs: {
        const Tensor& x = val(0);
        const Tensor& y = n.value;
        Tensor ga(x.shape(), std::vector<double>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i) {
          double d = 0.0;
          switch (n.op) {
            case Op::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
            case Op::kTanh: d = 1.0 - y[i] * y[i]; break;
            case Op::kExp: d = y[i]; break;
            case Op::kLog: d = x[i] > kLogFloor ? 1.0 / x[i] : 0.0; break;
            // Subgradient 0 at exact zeros.
            case Op::kAbs: d = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0); break;
            default: break;
          }
          ga[i] = g[i] * d;
        }
        detail::accumulate(grads[p[0]], ga);
        break;
      }
      case Op::kSoftmaxRows: {
        const Tensor& y = n.value;
        Tensor ga(y.shape(), std::vector<double>(y.size()));
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
        }
        detail::accumulate(grads[p[0]], ga);
        break;
      }
      case Op::kSumRows: {
        const Tensor& x = val(0);
        Tensor ga(x.shape(), std::vector<double>(x.size()));
        for (std::size_t i = 0; i < x.rows(); ++i) {
          for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = g(i, 0);
        }
        detail::accumulate(grads[p[0]], ga);
        break;
      }
      case Op::kMean: {
        const Tensor& x = val(0);
        const double each = g[0] / static_cast<double>(x.size());
        detail::accumulate(grads[p[0]], Tensor(x.shape(), std::vector<double>(x.size(), each)));
        break;
      }
      case Op::kL2Norm: {
        const Tensor& x = val(0);
        const double norm = n.value[0];
        Tensor ga(x.shape(), std::vector<double>(x.size(), 0.0));
        if (norm > 0.0) {
          for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[0] * x[i] / norm;
        }
        detail::accumulate(grads[p[0]], ga);
        break;
      }
      case Op::kGatherRows: {
        Tensor& dst = grads[p[0]];
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          auto src = g.row_span(i);
          auto out = dst.row_span(n.indices[i]);
          for (std::size_t j = 0; j < src.size(); ++j) out[j] += src[j];
        }
        break;
      }
      case Op::kConcatRows: {
        std::size_t at = 0;
        for (std::size_t k = 0; k < p.size(); ++k) {
          const std::size_t len = nodes_[p[k]].value.size();
          if (want(k)) {
            auto dst = grads[p[k]].data();
            for (std::size_t i = 0; i < len; ++i) dst[i] += g[at + i];
          }
          at += len;
        }
        break;
      }
      case Op::kTranspose: {
        Tensor gt = transpose(g);
        detail::accumulate(grads[p[0]], Tensor(val(0).shape(), std::move(gt.values())));
        break;
      }
    }
  }
  return Gradients(std::move(grads));
}

}  // namespace a3mda
