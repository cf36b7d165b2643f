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

#include "dhoi/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#include "dhoi/errors.hpp"

namespace dhoi::kernels {
namespace {

struct GemmShape {
  int m, n, k;
};

GemmShape check_gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c,
                     bool accumulate) {
  const int m = ta == Trans::kNo ? a.rows() : a.cols();
  const int ka = ta == Trans::kNo ? a.cols() : a.rows();
  const int kb = tb == Trans::kNo ? b.rows() : b.cols();
  const int n = tb == Trans::kNo ? b.cols() : b.rows();
  if (ka != kb) throw DimensionError("gemm inner dimensions differ");
  if (accumulate) {
    if (c.rows() != m || c.cols() != n) throw DimensionError("gemm accumulate target shape");
  } else if (c.rows() != m || c.cols() != n) {
    c = Matrix(m, n);
  }
  return {m, n, ka};
}

// Shared row kernel: computes row i of op(a) * op(b) into out (length n).
// The k loop always runs in ascending order so serial and parallel agree.
inline void gemm_row(const Matrix& a, Trans ta, const Matrix& b, Trans tb, const GemmShape& s,
                     int i, double* out) {
  std::fill(out, out + s.n, 0.0);
  if (tb == Trans::kNo) {
    for (int p = 0; p < s.k; ++p) {
      const double av = ta == Trans::kNo ? a(i, p) : a(p, i);
      const double* brow = b.data() + static_cast<std::size_t>(p) * s.n;
      for (int j = 0; j < s.n; ++j) out[j] += av * brow[j];
    }
  } else {
    for (int j = 0; j < s.n; ++j) {
      const double* brow = b.data() + static_cast<std::size_t>(j) * s.k;
      double acc = 0.0;
      if (ta == Trans::kNo) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * s.k;
        for (int p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      } else {
        for (int p = 0; p < s.k; ++p) acc += a(p, i) * brow[p];
      }
      out[j] = acc;
    }
  }
}

inline void softmax_row(const double* in, double* out, int n) {
  double mx = in[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= z;
}

void check_grid(const Matrix& grid, const ConvGeometry& g) {
  if (grid.rows() != g.height * g.width || grid.cols() != g.channels) {
    throw DimensionError("conv grid does not match geometry");
  }
  if (g.out_height() <= 0 || g.out_width() <= 0) throw DimensionError("conv output is empty");
}

inline void im2col_row(const Matrix& grid, const ConvGeometry& g, int orow, double* out) {
  const int ow = g.out_width();
  const int oy = orow / ow;
  const int ox = orow % ow;
  int idx = 0;
  for (int ky = 0; ky < g.kernel; ++ky) {
    const int y = oy * g.stride + ky - g.pad;
    for (int kx = 0; kx < g.kernel; ++kx) {
      const int x = ox * g.stride + kx - g.pad;
      const bool inside = y >= 0 && y < g.height && x >= 0 && x < g.width;
      for (int ch = 0; ch < g.channels; ++ch, ++idx) {
        out[idx] = inside ? grid(y * g.width + x, ch) : 0.0;
      }
    }
  }
}

std::atomic<std::size_t> g_threshold{1u << 15};

bool use_parallel(std::size_t work) { return work >= g_threshold.load(std::memory_order_relaxed); }

}  // namespace

namespace serial {

void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate) {
  const GemmShape s = check_gemm(a, ta, b, tb, c, accumulate);
  for (int i = 0; i < s.m; ++i) {
    for (int j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < s.k; ++p) {
        const double av = ta == Trans::kNo ? a(i, p) : a(p, i);
        const double bv = tb == Trans::kNo ? b(p, j) : b(j, p);
        acc += av * bv;
      }
      if (accumulate) {
        c(i, j) += acc;
      } else {
        c(i, j) = acc;
      }
    }
  }
}

void softmax_rows(const Matrix& in, Matrix& out) {
  if (!out.same_shape(in)) out = Matrix(in.rows(), in.cols());
  for (int r = 0; r < in.rows(); ++r) {
    softmax_row(in.data() + static_cast<std::size_t>(r) * in.cols(),
                out.data() + static_cast<std::size_t>(r) * in.cols(), in.cols());
  }
}

void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols) {
  check_grid(grid, g);
  const int rows = g.out_height() * g.out_width();
  cols = Matrix(rows, g.patch_size());
  for (int r = 0; r < rows; ++r) {
    im2col_row(grid, g, r, cols.data() + static_cast<std::size_t>(r) * cols.cols());
  }
}

void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid) {
  check_grid(grid, g);
  const int ow = g.out_width();
  for (int r = 0; r < cols.rows(); ++r) {
    const int oy = r / ow;
    const int ox = r % ow;
    int idx = 0;
    for (int ky = 0; ky < g.kernel; ++ky) {
      const int y = oy * g.stride + ky - g.pad;
      for (int kx = 0; kx < g.kernel; ++kx) {
        const int x = ox * g.stride + kx - g.pad;
        const bool inside = y >= 0 && y < g.height && x >= 0 && x < g.width;
        for (int ch = 0; ch < g.channels; ++ch, ++idx) {
          if (inside) grid(y * g.width + x, ch) += cols(r, idx);
        }
      }
    }
  }
}

}  // namespace serial

namespace parallel {

void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate) {
  const GemmShape s = check_gemm(a, ta, b, tb, c, accumulate);
#pragma omp parallel
  {
    std::vector<double> row(static_cast<std::size_t>(s.n));
#pragma omp for schedule(static)
    for (int i = 0; i < s.m; ++i) {
      gemm_row(a, ta, b, tb, s, i, row.data());
      double* crow = c.data() + static_cast<std::size_t>(i) * s.n;
      if (accumulate) {
        for (int j = 0; j < s.n; ++j) crow[j] += row[j];
      } else {
        std::copy(row.begin(), row.end(), crow);
      }
    }
  }
}

void softmax_rows(const Matrix& in, Matrix& out) {
  if (!out.same_shape(in)) out = Matrix(in.rows(), in.cols());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < in.rows(); ++r) {
    softmax_row(in.data() + static_cast<std::size_t>(r) * in.cols(),
                out.data() + static_cast<std::size_t>(r) * in.cols(), in.cols());
  }
}

void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols) {
  check_grid(grid, g);
  const int rows = g.out_height() * g.out_width();
  cols = Matrix(rows, g.patch_size());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    im2col_row(grid, g, r, cols.data() + static_cast<std::size_t>(r) * cols.cols());
  }
}

void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid) {
  // Scatter-add: output cells receive from several patches, so parallelize
  // over channels where writes never collide.
  check_grid(grid, g);
  const int ow = g.out_width();
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < g.channels; ++ch) {
    for (int r = 0; r < cols.rows(); ++r) {
      const int oy = r / ow;
      const int ox = r % ow;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int y = oy * g.stride + ky - g.pad;
        if (y < 0 || y >= g.height) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int x = ox * g.stride + kx - g.pad;
          if (x < 0 || x >= g.width) continue;
          grid(y * g.width + x, ch) += cols(r, (ky * g.kernel + kx) * g.channels + ch);
        }
      }
    }
  }
}

}  // namespace parallel

void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate) {
  const std::size_t m = ta == Trans::kNo ? a.rows() : a.cols();
  const std::size_t k = ta == Trans::kNo ? a.cols() : a.rows();
  const std::size_t n = tb == Trans::kNo ? b.cols() : b.rows();
  if (use_parallel(m * n * k)) {
    parallel::gemm(a, ta, b, tb, c, accumulate);
  } else {
    // The row kernel is faster than the naive reference and sums identically.
    const GemmShape s = check_gemm(a, ta, b, tb, c, accumulate);
    std::vector<double> row(static_cast<std::size_t>(s.n));
    for (int i = 0; i < s.m; ++i) {
      gemm_row(a, ta, b, tb, s, i, row.data());
      double* crow = c.data() + static_cast<std::size_t>(i) * s.n;
      if (accumulate) {
        for (int j = 0; j < s.n; ++j) crow[j] += row[j];
      } else {
        std::copy(row.begin(), row.end(), crow);
      }
    }
  }
}

void softmax_rows(const Matrix& in, Matrix& out) {
  if (use_parallel(in.size() * 8)) {
    parallel::softmax_rows(in, out);
  } else {
    serial::softmax_rows(in, out);
  }
}

void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols) {
  if (use_parallel(static_cast<std::size_t>(g.out_height()) * g.out_width() * g.patch_size())) {
    parallel::im2col(grid, g, cols);
  } else {
    serial::im2col(grid, g, cols);
  }
}

void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid) {
  if (use_parallel(cols.size())) {
    parallel::col2im_accumulate(cols, g, grid);
  } else {
    serial::col2im_accumulate(cols, g, grid);
  }
}

void set_parallel_threshold(std::size_t flops) { g_threshold.store(flops); }
std::size_t parallel_threshold() { return g_threshold.load(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  gemm(a, Trans::kNo, b, Trans::kNo, c, false);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c;
  gemm(a, Trans::kNo, b, Trans::kYes, c, false);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c;
  gemm(a, Trans::kYes, b, Trans::kNo, c, false);
  return c;
}

}  // namespace dhoi::kernels
