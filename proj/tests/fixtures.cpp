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

#include "fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace dhoi::testing {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

namespace {
double eval(const LossFn& loss, const std::vector<Matrix>& params) {
  ad::Tape tape(false);
  std::vector<ad::Var> vars;
  for (const Matrix& p : params) vars.push_back(tape.constant(p));
  return loss(tape, vars).value()(0, 0);
}
}  // namespace

double gradient_rel_error(const LossFn& loss, std::vector<Matrix> params, double step) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Matrix& p : params) vars.push_back(tape.variable(p));
  tape.backward(loss(tape, vars));

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix analytic = vars[k].grad();
    if (analytic.empty()) analytic = Matrix(params[k].rows(), params[k].cols());
    Matrix numeric(params[k].rows(), params[k].cols());
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double keep = params[k][i];
      params[k][i] = keep + step;
      const double up = eval(loss, params);
      params[k][i] = keep - step;
      const double down = eval(loss, params);
      params[k][i] = keep;
      numeric[i] = (up - down) / (2.0 * step);
    }
    Matrix diff = analytic;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= numeric[i];
    const double denom = std::max(frobenius_norm(analytic), frobenius_norm(numeric));
    if (denom < 1e-12) continue;
    worst = std::max(worst, frobenius_norm(diff) / denom);
  }
  return worst;
}

}  // namespace dhoi::testing

namespace dhoi::testing {

DenoiseTrace ZeroNoiseBackbone::denoise_tape(ad::Tape& tape, const ad::Var& z, int height, int width, int t,
                                             const ad::Var& cond) const {
  DenoiseTrace tr = MockBackbone::denoise_tape(tape, z, height, width, t, cond);
  tr.noise_pred = tape.constant(Matrix(z.rows(), z.cols()));
  return tr;
}

Image random_image(int height, int width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(height, width);
  for (double& v : img.pixels.values()) v = u(rng);
  return img;
}

std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("dhoi_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace dhoi::testing
