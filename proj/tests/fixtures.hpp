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

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dhoi/autograd.hpp"
#include "dhoi/matrix.hpp"

namespace dhoi::testing {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);

using LossFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
// over all parameter blocks, numeric from central differences.
double gradient_rel_error(const LossFn& loss, std::vector<Matrix> params, double step = 1e-3);

}  // namespace dhoi::testing

#include "dhoi/backbone.hpp"

namespace dhoi::testing {

// Mock backbone whose denoiser predicts zero noise; every other hook is the
// mock's own.
class ZeroNoiseBackbone : public MockBackbone {
 public:
  using MockBackbone::MockBackbone;
  explicit ZeroNoiseBackbone(const MockBackbone& base) : MockBackbone(base) {}
  DenoiseTrace denoise_tape(ad::Tape& tape, const ad::Var& z, int height, int width, int t,
                            const ad::Var& cond) const override;
};

Image random_image(int height, int width, std::mt19937_64& rng);

// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

}  // namespace dhoi::testing
