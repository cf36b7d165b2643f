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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include "dhoi/matrix.hpp"

namespace dhoi {

// Mixes a base seed with any number of integer tags (sample id, epoch, ...)
// into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);
std::uint64_t fnv1a(std::string_view text);

Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0);
Matrix gaussian_matrix(int rows, int cols, std::uint64_t seed, double stddev = 1.0);

}  // namespace dhoi
