/* Copyright 2026 The dhoi Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dhoi/matrix.hpp"

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to Vars created on it. Nodes whose
// inputs carry no gradient are stored without a backward closure, so a tape
// built with record=false costs the same as plain evaluation.
namespace dhoi::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Gradient accumulated by the last backward(); empty when none reached it.
  const Matrix& grad() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf that receives a gradient on backward().
  Var variable(Matrix value);

  // Seeds d(scalar)/d(scalar) = 1 and propagates to every reachable leaf.
  void backward(const Var& scalar);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  const Matrix& value_of(int id) const { return nodes_[id].value; }
  const Matrix& grad_of(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  // Zero-initialized gradient buffer of node id, or nullptr when the node does
  // not need one.
  Matrix* grad_buffer(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// --- linear algebra ---
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T * b
Var transpose(const Var& a);

// --- elementwise ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);     // row is 1 x cols, broadcast down
Var mul_col(const Var& a, const Var& col);     // col is rows x 1, broadcast across
Var div_col(const Var& a, const Var& col);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);    // s is 1 x 1
Var div_scalar(const Var& a, const Var& s);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var relu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// --- reductions ---
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var col_sums(const Var& a);   // 1 x cols
Var row_sums(const Var& a);   // rows x 1
Var mean_rows(const Var& a);  // 1 x cols, average over rows
Var dot_all(const Var& a, const Var& b);
Var logsumexp_all(const Var& a);

// --- normalization ---
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var l2_normalize_all(const Var& a);   // whole matrix as one flattened vector
Var l2_normalize_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

// --- shape ---
Var reshape(const Var& a, int rows, int cols);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, int begin, int count);
Var slice_cols(const Var& a, int begin, int count);
Var gather_rows(const Var& a, std::span<const int> index);
Var element(const Var& a, int r, int c);  // 1 x 1

// --- spatial ---
// Patches of an h x w x c grid (rows = cells) laid out for a convolution.
Var im2col(const Var& grid, int height, int width, int channels, int kernel, int stride, int pad);
// (h*w) x (b*b*c) -> (h*b*w*b) x c, each cell expanding into a b x b block.
Var depth_to_space(const Var& a, int height, int width, int block, int channels);

// --- losses / pooling ---
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(const Var& logits, std::span<const int> targets);
// Weighted spatial average: out[k] = sum_c w[c,k] z[c] / sum_c w[c,k].
// Columns whose weights sum to zero fall back to the unweighted mean; the
// number of such columns is written to *fallbacks when given.
Var mask_pool(const Var& features, const Var& weights, int* fallbacks = nullptr);

}  // namespace dhoi::ad
