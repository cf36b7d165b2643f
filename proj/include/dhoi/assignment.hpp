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

#include <vector>

#include "dhoi/matrix.hpp"

namespace dhoi {

struct Assignment {
  // Column assigned to each row, -1 when the row is left out (rows > cols).
  std::vector<int> row_to_col;
  double cost = 0.0;
};

// Minimum-cost assignment on a rectangular matrix: min(rows, cols) pairs.
// Among equal-cost optima the potentials method keeps the earliest column
// for the earliest row, so identical rows map to the identity.
// Non-finite entries raise NumericalError.
Assignment solve_assignment(const Matrix& cost);

}  // namespace dhoi
