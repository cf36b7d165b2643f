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

#include "dhoi/rng.hpp"

#include <cmath>

namespace dhoi {
namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632BE59BD9B4E019ull));
  return s;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng, double stddev) {
  // Box-Muller by hand: std::normal_distribution is not specified bit-for-bit
  // across standard libraries, and seeds here must reproduce files exactly.
  Matrix m(rows, cols);
  constexpr double kTwoPi = 6.283185307179586;
  std::size_t i = 0;
  while (i < m.size()) {
    const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    m[i++] = stddev * r * std::cos(kTwoPi * u2);
    if (i < m.size()) m[i++] = stddev * r * std::sin(kTwoPi * u2);
  }
  return m;
}

Matrix gaussian_matrix(int rows, int cols, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  return gaussian_matrix(rows, cols, rng, stddev);
}

}  // namespace dhoi
