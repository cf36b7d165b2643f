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

#include "dhoi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "dhoi/errors.hpp"
#include "dhoi/kernels.hpp"

namespace dhoi::ad {

using kernels::Trans;

const Matrix& Var::value() const { return tape_->value_of(id_); }
const Matrix& Var::grad() const { return tape_->grad_of(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), record_, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ContractError("operands live on different tapes");
      needs = needs || nodes_[v.id()].needs_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix* Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty() && n.value.size() > 0) n.grad = Matrix(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Tape::backward(const Var& scalar) {
  if (scalar.tape() != this) throw ContractError("backward on a foreign Var");
  const Matrix& v = nodes_[scalar.id()].value;
  if (v.rows() != 1 || v.cols() != 1) throw DimensionError("backward needs a 1x1 output");
  for (Node& n : nodes_) n.grad = Matrix();
  Matrix* seed = grad_buffer(scalar.id());
  if (seed == nullptr) return;
  (*seed)(0, 0) = 1.0;
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("use of an unbound Var");
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

void require_scalar(const Var& s, const char* op) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError(std::string(op) + ": expects 1x1");
}

// Elementwise unary op whose derivative is a function of (x, y).
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia, deriv](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Matrix& xv = t.value_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  Matrix c;
  kernels::gemm(a.value(), Trans::kNo, b.value(), Trans::kNo, c, false);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(c), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia)) kernels::gemm(g, Trans::kNo, t.value_of(ib), Trans::kYes, *ga, true);
    if (Matrix* gb = t.grad_buffer(ib)) kernels::gemm(t.value_of(ia), Trans::kYes, g, Trans::kNo, *gb, true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Matrix c;
  kernels::gemm(a.value(), Trans::kNo, b.value(), Trans::kYes, c, false);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(c), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia)) kernels::gemm(g, Trans::kNo, t.value_of(ib), Trans::kNo, *ga, true);
    if (Matrix* gb = t.grad_buffer(ib)) kernels::gemm(g, Trans::kYes, t.value_of(ia), Trans::kNo, *gb, true);
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  Matrix c;
  kernels::gemm(a.value(), Trans::kYes, b.value(), Trans::kNo, c, false);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(c), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia)) kernels::gemm(t.value_of(ib), Trans::kNo, g, Trans::kYes, *ga, true);
    if (Matrix* gb = t.grad_buffer(ib)) kernels::gemm(t.value_of(ia), Trans::kNo, g, Trans::kNo, *gb, true);
  });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return tape_of(a).push(a.value().transposed(), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) (*ga)(c, r) += g(r, c);
  });
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& bv = t.value_of(ib);
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Matrix* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& bv = t.value_of(ib);
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
    if (Matrix* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * av[i] / (bv[i] * bv[i]);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: bad row shape");
  Matrix y = a.value();
  const Matrix& rv = row.value();
  for (int r = 0; r < y.rows(); ++r)
    for (int c = 0; c < y.cols(); ++c) y(r, c) += rv(0, c);
  const int ia = a.id(), ir = row.id();
  return tape_of(a).push(std::move(y), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gr = t.grad_buffer(ir))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) (*gr)(0, c) += g(r, c);
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw DimensionError("mul_col: bad column shape");
  Matrix y = a.value();
  const Matrix& cv = col.value();
  for (int r = 0; r < y.rows(); ++r)
    for (int c = 0; c < y.cols(); ++c) y(r, c) *= cv(r, 0);
  const int ia = a.id(), ic = col.id();
  return tape_of(a).push(std::move(y), {a, col}, [ia, ic](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& cv = t.value_of(ic);
    if (Matrix* ga = t.grad_buffer(ia))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) (*ga)(r, c) += g(r, c) * cv(r, 0);
    if (Matrix* gc = t.grad_buffer(ic))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) (*gc)(r, 0) += g(r, c) * av(r, c);
  });
}

Var div_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw DimensionError("div_col: bad column shape");
  Matrix y = a.value();
  const Matrix& cv = col.value();
  for (int r = 0; r < y.rows(); ++r)
    for (int c = 0; c < y.cols(); ++c) y(r, c) /= cv(r, 0);
  const int ia = a.id(), ic = col.id();
  return tape_of(a).push(std::move(y), {a, col}, [ia, ic](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& cv = t.value_of(ic);
    if (Matrix* ga = t.grad_buffer(ia))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) (*ga)(r, c) += g(r, c) / cv(r, 0);
    if (Matrix* gc = t.grad_buffer(ic))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c)
          (*gc)(r, 0) -= g(r, c) * av(r, c) / (cv(r, 0) * cv(r, 0));
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var mul_scalar(const Var& a, const Var& s) {
  require_scalar(s, "mul_scalar");
  const double sv = s.value()(0, 0);
  Matrix y = a.value();
  for (double& v : y.values()) v *= sv;
  const int ia = a.id(), is = s.id();
  return tape_of(a).push(std::move(y), {a, s}, [ia, is](Tape& t, const Matrix& g) {
    const double sv = t.value_of(is)(0, 0);
    const Matrix& av = t.value_of(ia);
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * sv;
    if (Matrix* gs = t.grad_buffer(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gs)(0, 0) += acc;
    }
  });
}

Var div_scalar(const Var& a, const Var& s) {
  require_scalar(s, "div_scalar");
  const double sv = s.value()(0, 0);
  Matrix y = a.value();
  for (double& v : y.values()) v /= sv;
  const int ia = a.id(), is = s.id();
  return tape_of(a).push(std::move(y), {a, s}, [ia, is](Tape& t, const Matrix& g) {
    const double sv = t.value_of(is)(0, 0);
    const Matrix& av = t.value_of(ia);
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / sv;
    if (Matrix* gs = t.grad_buffer(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gs)(0, 0) -= acc / (sv * sv);
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

namespace {
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_value, [](double x) {
    const double s = sigmoid_value(x);
    return s * (1.0 - s);
  });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * sigmoid_value(x); },
      [](double x) {
        const double s = sigmoid_value(x);
        return s + x * s * (1.0 - s);
      });
}

Var gelu(const Var& a) {
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x))); },
      [](double x) {
        const double th = std::tanh(kGeluK * (x + kGeluC * x * x * x));
        return 0.5 * (1.0 + th) +
               0.5 * x * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
      });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(const Var& a, const Var& b) {
  require_same_shape(a, b, "minimum");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], b.value()[i]);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& bv = t.value_of(ib);
    Matrix* ga = t.grad_buffer(ia);
    Matrix* gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (ga) (*ga)[i] += g[i];
      } else if (gb) {
        (*gb)[i] += g[i];
      }
    }
  });
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a, b, "maximum");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], b.value()[i]);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(std::move(y), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& av = t.value_of(ia);
    const Matrix& bv = t.value_of(ib);
    Matrix* ga = t.grad_buffer(ia);
    Matrix* gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (ga) (*ga)[i] += g[i];
      } else if (gb) {
        (*gb)[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
  const int ia = a.id();
  return tape_of(a).push(Matrix(1, 1, dhoi::sum(a.value())), {a}, [ia](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (double& v : ga->values()) v += g(0, 0);
  });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DimensionError("mean of an empty matrix");
  return scale(sum_all(a), 1.0 / n);
}

Var col_sums(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(1, x.cols());
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) y(0, c) += x(r, c);
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (int r = 0; r < ga->rows(); ++r)
        for (int c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g(0, c);
  });
}

Var row_sums(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), 1);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) y(r, 0) += x(r, c);
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (int r = 0; r < ga->rows(); ++r)
        for (int c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g(r, 0);
  });
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw DimensionError("mean_rows of an empty matrix");
  return scale(col_sums(a), 1.0 / a.rows());
}

Var dot_all(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot_all");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i] * b.value()[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).push(Matrix(1, 1, acc), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const double s = g(0, 0);
    if (Matrix* ga = t.grad_buffer(ia)) {
      const Matrix& bv = t.value_of(ib);
      for (std::size_t i = 0; i < bv.size(); ++i) (*ga)[i] += s * bv[i];
    }
    if (Matrix* gb = t.grad_buffer(ib)) {
      const Matrix& av = t.value_of(ia);
      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += s * av[i];
    }
  });
}

Var logsumexp_all(const Var& a) {
  const Matrix& x = a.value();
  if (x.size() == 0) throw DimensionError("logsumexp of an empty matrix");
  double mx = x[0];
  for (double v : x.values()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x.values()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  const int ia = a.id();
  return tape_of(a).push(Matrix(1, 1, lse), {a}, [ia, lse](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia)) {
      const Matrix& xv = t.value_of(ia);
      for (std::size_t i = 0; i < xv.size(); ++i) (*ga)[i] += g(0, 0) * std::exp(xv[i] - lse);
    }
  });
}

// ---------------------------------------------------------------- normalization

Var softmax_rows(const Var& a) {
  Matrix y;
  kernels::softmax_rows(a.value(), y);
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [ia, iy](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Matrix& yv = t.value_of(iy);
    for (int r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < g.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (int c = 0; c < g.cols(); ++c) (*ga)(r, c) += yv(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    double mx = x(r, 0);
    for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols(); ++c) z += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
  }
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [ia, iy](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Matrix& yv = t.value_of(iy);
    for (int r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (int c = 0; c < g.cols(); ++c) gs += g(r, c);
      for (int c = 0; c < g.cols(); ++c) (*ga)(r, c) += g(r, c) - std::exp(yv(r, c)) * gs;
    }
  });
}

Var l2_normalize_all(const Var& a) {
  const double n = frobenius_norm(a.value());
  if (!(n > 0.0)) throw NormalizationError("cannot l2-normalize a zero vector");
  Matrix y = a.value();
  for (double& v : y.values()) v /= n;
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [ia, iy, n](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Matrix& yv = t.value_of(iy);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += (g[i] - yv[i] * dot) / n;
  });
}

Var l2_normalize_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y = x;
  std::vector<double> norms(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < x.cols(); ++c) s += x(r, c) * x(r, c);
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw NormalizationError("cannot l2-normalize a zero row");
    for (int c = 0; c < x.cols(); ++c) y(r, c) /= norms[r];
  }
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [ia, iy, norms](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Matrix& yv = t.value_of(iy);
    for (int r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < g.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (int c = 0; c < g.cols(); ++c) (*ga)(r, c) += (g(r, c) - yv(r, c) * dot) / norms[r];
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Matrix& x = a.value();
  const int n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || !gamma.value().same_shape(beta.value())) {
    throw DimensionError("layer_norm: gain/bias shape");
  }
  Matrix xhat(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  Matrix y(x.rows(), n);
  for (int r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += x(r, c);
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < n; ++c) {
      xhat(r, c) = (x(r, c) - mu) * inv_std[r];
      y(r, c) = xhat(r, c) * gamma.value()(0, c) + beta.value()(0, c);
    }
  }
  const int ia = a.id(), ig = gamma.id(), ib = beta.id();
  return tape_of(a).push(std::move(y), {a, gamma, beta},
                         [ia, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
    const Matrix& gv = t.value_of(ig);
    const int n = g.cols();
    if (Matrix* gb = t.grad_buffer(ib))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < n; ++c) (*gb)(0, c) += g(r, c);
    if (Matrix* gg = t.grad_buffer(ig))
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < n; ++c) (*gg)(0, c) += g(r, c) * xhat(r, c);
    if (Matrix* ga = t.grad_buffer(ia)) {
      for (int r = 0; r < g.rows(); ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < n; ++c) {
          const double gx = g(r, c) * gv(0, c);
          m1 += gx;
          m2 += gx * xhat(r, c);
        }
        m1 /= n;
        m2 /= n;
        for (int c = 0; c < n; ++c) {
          const double gx = g(r, c) * gv(0, c);
          (*ga)(r, c) += inv_std[r] * (gx - m1 - xhat(r, c) * m2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------- shape

Var reshape(const Var& a, int rows, int cols) {
  const int ia = a.id();
  return tape_of(a).push(a.value().reshaped(rows, cols), {a}, [ia](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix y(rows, cols);
  std::vector<int> ids, offsets;
  int off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(),
              y.values().begin() + static_cast<std::ptrdiff_t>(off) * cols);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return tape_of(parts[0]).push(std::move(y), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Matrix* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      const std::size_t base = static_cast<std::size_t>(offsets[k]) * g.cols();
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += g[base + i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<int> ids, offsets;
  int off = 0;
  for (const Var& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p.cols(); ++c) y(r, off + c) = p.value()(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return tape_of(parts[0]).push(std::move(y), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Matrix* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      for (int r = 0; r < gp->rows(); ++r)
        for (int c = 0; c < gp->cols(); ++c) (*gp)(r, c) += g(r, offsets[k] + c);
    }
  });
}

Var slice_rows(const Var& a, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw RangeError("slice_rows out of range");
  const int cols = a.cols();
  const auto& src = a.value().values();
  std::vector<double> vals(src.begin() + static_cast<std::ptrdiff_t>(begin) * cols,
                           src.begin() + static_cast<std::ptrdiff_t>(begin + count) * cols);
  const int ia = a.id();
  return tape_of(a).push(Matrix(count, cols, std::move(vals)), {a}, [ia, begin](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    const std::size_t base = static_cast<std::size_t>(begin) * g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[base + i] += g[i];
  });
}

Var slice_cols(const Var& a, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw RangeError("slice_cols out of range");
  Matrix y(a.rows(), count);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < count; ++c) y(r, c) = a.value()(r, begin + c);
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia, begin](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) (*ga)(r, begin + c) += g(r, c);
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  Matrix y(static_cast<int>(index.size()), a.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= a.rows()) throw RangeError("gather_rows index out of range");
    for (int c = 0; c < a.cols(); ++c) y(static_cast<int>(k), c) = a.value()(index[k], c);
  }
  std::vector<int> idx(index.begin(), index.end());
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia, idx](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (int c = 0; c < g.cols(); ++c) (*ga)(idx[k], c) += g(static_cast<int>(k), c);
  });
}

Var element(const Var& a, int r, int c) {
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) throw RangeError("element out of range");
  const int ia = a.id();
  return tape_of(a).push(Matrix(1, 1, a.value()(r, c)), {a}, [ia, r, c](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(ia)) (*ga)(r, c) += g(0, 0);
  });
}

// ---------------------------------------------------------------- spatial

Var im2col(const Var& grid, int height, int width, int channels, int kernel, int stride, int pad) {
  const kernels::ConvGeometry geo{height, width, channels, kernel, stride, pad};
  Matrix cols;
  kernels::im2col(grid.value(), geo, cols);
  const int ig = grid.id();
  return tape_of(grid).push(std::move(cols), {grid}, [ig, geo](Tape& t, const Matrix& g) {
    if (Matrix* gg = t.grad_buffer(ig)) kernels::col2im_accumulate(g, geo, *gg);
  });
}

Var depth_to_space(const Var& a, int height, int width, int block, int channels) {
  if (a.rows() != height * width || a.cols() != block * block * channels) {
    throw DimensionError("depth_to_space: input does not match geometry");
  }
  const int out_w = width * block;
  Matrix y(height * block * out_w, channels);
  auto target_row = [=](int cell, int by, int bx) {
    const int yy = cell / width, xx = cell % width;
    return (yy * block + by) * out_w + (xx * block + bx);
  };
  for (int cell = 0; cell < a.rows(); ++cell)
    for (int by = 0; by < block; ++by)
      for (int bx = 0; bx < block; ++bx)
        for (int ch = 0; ch < channels; ++ch)
          y(target_row(cell, by, bx), ch) = a.value()(cell, (by * block + bx) * channels + ch);
  const int ia = a.id();
  return tape_of(a).push(std::move(y), {a}, [ia, block, channels, target_row](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (int cell = 0; cell < ga->rows(); ++cell)
      for (int by = 0; by < block; ++by)
        for (int bx = 0; bx < block; ++bx)
          for (int ch = 0; ch < channels; ++ch)
            (*ga)(cell, (by * block + bx) * channels + ch) += g(target_row(cell, by, bx), ch);
  });
}

// ---------------------------------------------------------------- losses / pooling

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Matrix& x = logits.value();
  if (static_cast<int>(targets.size()) != x.rows()) throw DimensionError("cross_entropy: target count");
  if (x.rows() == 0) throw DimensionError("cross_entropy over zero rows");
  Matrix prob(x.rows(), x.cols());
  double loss = 0.0;
  for (int r = 0; r < x.rows(); ++r) {
    const int tgt = targets[r];
    if (tgt < 0 || tgt >= x.cols()) throw RangeError("cross_entropy: target class out of range");
    double mx = x(r, 0);
    for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols(); ++c) z += std::exp(x(r, c) - mx);
    for (int c = 0; c < x.cols(); ++c) prob(r, c) = std::exp(x(r, c) - mx) / z;
    loss += mx + std::log(z) - x(r, tgt);
  }
  const int m = x.rows();
  loss /= m;
  std::vector<int> tg(targets.begin(), targets.end());
  const int il = logits.id();
  return tape_of(logits).push(Matrix(1, 1, loss), {logits}, [il, tg, prob, m](Tape& t, const Matrix& g) {
    Matrix* gl = t.grad_buffer(il);
    if (!gl) return;
    const double s = g(0, 0) / m;
    for (int r = 0; r < prob.rows(); ++r)
      for (int c = 0; c < prob.cols(); ++c)
        (*gl)(r, c) += s * (prob(r, c) - (c == tg[r] ? 1.0 : 0.0));
  });
}

Var mask_pool(const Var& features, const Var& weights, int* fallbacks) {
  const Matrix& z = features.value();
  const Matrix& w = weights.value();
  if (w.rows() != z.rows()) throw DimensionError("mask_pool: map and grid cell counts differ");
  if (z.rows() == 0) throw DimensionError("mask_pool over an empty grid");
  const int cells = z.rows(), k = w.cols(), d = z.cols();
  std::vector<double> totals(k, 0.0);
  std::vector<char> uniform(k, 0);
  int n_fallback = 0;
  for (int j = 0; j < k; ++j) {
    for (int c = 0; c < cells; ++c) totals[j] += w(c, j);
    if (!(totals[j] > 0.0)) {
      uniform[j] = 1;
      ++n_fallback;
    }
  }
  if (fallbacks) *fallbacks = n_fallback;
  Matrix y(k, d);
  for (int j = 0; j < k; ++j) {
    for (int c = 0; c < cells; ++c) {
      const double wt = uniform[j] ? 1.0 / cells : w(c, j) / totals[j];
      if (wt == 0.0) continue;
      for (int e = 0; e < d; ++e) y(j, e) += wt * z(c, e);
    }
  }
  const int iz = features.id(), iw = weights.id();
  Tape& t = tape_of(features);
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), {features, weights}, [iz, iw, iy, totals, uniform](Tape& t, const Matrix& g) {
    const Matrix& zv = t.value_of(iz);
    const Matrix& wv = t.value_of(iw);
    const Matrix& yv = t.value_of(iy);
    const int cells = zv.rows(), k = wv.cols(), d = zv.cols();
    Matrix* gz = t.grad_buffer(iz);
    Matrix* gw = t.grad_buffer(iw);
    for (int j = 0; j < k; ++j) {
      if (uniform[j]) {
        if (gz)
          for (int c = 0; c < cells; ++c)
            for (int e = 0; e < d; ++e) (*gz)(c, e) += g(j, e) / cells;
        continue;  // the fallback does not depend on the weights
      }
      double gy_dot_y = 0.0;
      for (int e = 0; e < d; ++e) gy_dot_y += g(j, e) * yv(j, e);
      for (int c = 0; c < cells; ++c) {
        if (gz) {
          const double wt = wv(c, j) / totals[j];
          for (int e = 0; e < d; ++e) (*gz)(c, e) += wt * g(j, e);
        }
        if (gw) {
          double gy_dot_z = 0.0;
          for (int e = 0; e < d; ++e) gy_dot_z += g(j, e) * zv(c, e);
          (*gw)(c, j) += (gy_dot_z - gy_dot_y) / totals[j];
        }
      }
    }
  });
}

}  // namespace dhoi::ad
