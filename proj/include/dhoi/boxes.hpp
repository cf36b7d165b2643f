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

namespace dhoi {

// Axis-aligned pixel box, corners (x1, y1) and (x2, y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool inside(double w, double h) const { return x1 >= 0 && y1 >= 0 && x2 <= w && y2 <= h; }
  bool operator==(const Box&) const = default;
};

// Both throw ContractError on degenerate boxes.
double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

}  // namespace dhoi
