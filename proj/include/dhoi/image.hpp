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

#include <string>

#include "dhoi/matrix.hpp"

namespace dhoi {

// RGB image with values in [0, 1]; pixels has one row per pixel (row-major
// over y, x) and three columns.
struct Image {
  int height = 0;
  int width = 0;
  Matrix pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(h * w, 3, fill) {}

  double& at(int y, int x, int c) { return pixels(y * width + x, c); }
  double at(int y, int x, int c) const { return pixels(y * width + x, c); }
};

Image read_png(const std::string& path);
// 8-bit RGB, values rounded from [0, 1].
void write_png(const std::string& path, const Image& image);
std::string encode_png(const Image& image);

// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& image, int height, int width);

// Output size for detector preprocessing: scale so the short side equals
// short_side unless that pushes the long side past long_max; then snap both
// down to multiples of 8 (minimum 8).
struct ResizePlan {
  int height = 0;
  int width = 0;
  double scale_y = 1.0;
  double scale_x = 1.0;
};
ResizePlan plan_resize(int height, int width, int short_side, int long_max);

}  // namespace dhoi
