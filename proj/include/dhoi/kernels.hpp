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

#include <cstddef>

#include "dhoi/matrix.hpp"

// Dense compute kernels. Every kernel exists twice: a plain serial reference
// (kept for tests and benchmarks) and an OpenMP version. Both sum in the same
// order, so their results are bit-identical; the library front door picks
// the parallel path once the work is large enough to amortize thread startup.
namespace dhoi::kernels {

enum class Trans { kNo, kYes };

// Geometry of a square-kernel convolution over an h x w x c grid.
struct ConvGeometry {
  int height = 0;
  int width = 0;
  int channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return kernel * kernel * channels; }
};

namespace serial {
// c = op(a) * op(b), or c += op(a) * op(b) when accumulate is set.
void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate);
void softmax_rows(const Matrix& in, Matrix& out);
void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols);
void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid);
}  // namespace serial

namespace parallel {
void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate);
void softmax_rows(const Matrix& in, Matrix& out);
void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols);
void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid);
}  // namespace parallel

void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, bool accumulate);
void softmax_rows(const Matrix& in, Matrix& out);
void im2col(const Matrix& grid, const ConvGeometry& g, Matrix& cols);
void col2im_accumulate(const Matrix& cols, const ConvGeometry& g, Matrix& grid);

// Multiply-add count above which the front door switches to the OpenMP path.
void set_parallel_threshold(std::size_t flops);
std::size_t parallel_threshold();

// Convenience wrappers returning fresh matrices.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

}  // namespace dhoi::kernels
