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

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dhoi/assignment.hpp"
#include "dhoi/errors.hpp"

namespace dhoi {
namespace {

// Exhaustive minimum over all injective maps of the smaller side.
double brute_force(const Matrix& c) {
  const bool flip = c.rows() > c.cols();
  const Matrix a = flip ? c.transposed() : c;
  std::vector<int> cols(a.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int r = 0; r < a.rows(); ++r) s += a(r, cols[r]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

TEST(Assignment, DiagonalOptimum) {
  const Assignment a = solve_assignment(Matrix(2, 2, std::vector<double>{0, 1, 1, 0}));
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1}));
  EXPECT_EQ(a.cost, 0.0);
}

TEST(Assignment, TiesGoToLowestIndex) {
  const Assignment a = solve_assignment(Matrix(4, 4, 2.5));
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1, 2, 3}));
  const Assignment wide = solve_assignment(Matrix(2, 5, 1.0));
  EXPECT_EQ(wide.row_to_col, (std::vector<int>{0, 1}));
  const Assignment tall = solve_assignment(Matrix(5, 2, 1.0));
  EXPECT_EQ(tall.row_to_col, (std::vector<int>{0, 1, -1, -1, -1}));
}

TEST(Assignment, EmptyAndErrors) {
  EXPECT_TRUE(solve_assignment(Matrix(0, 3)).row_to_col.empty());
  EXPECT_EQ(solve_assignment(Matrix(3, 0)).row_to_col, (std::vector<int>{-1, -1, -1}));
  Matrix m(2, 2, 1.0);
  m(1, 0) = std::nan("");
  EXPECT_THROW(solve_assignment(m), NumericalError);
}

TEST(Assignment, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 7);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix c(dim(rng), dim(rng));
    // Integer costs make exact equality meaningful and create many ties.
    for (double& v : c.values()) v = std::round(val(rng));
    const Assignment a = solve_assignment(c);
    EXPECT_EQ(a.cost, brute_force(c));
    std::vector<int> seen;
    for (int col : a.row_to_col)
      if (col >= 0) seen.push_back(col);
    EXPECT_EQ(static_cast<int>(seen.size()), std::min(c.rows(), c.cols()));
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  }
}

}  // namespace
}  // namespace dhoi
