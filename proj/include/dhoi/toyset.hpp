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
#include <string>
#include <vector>

#include "dhoi/dataset.hpp"
#include "dhoi/image.hpp"

namespace dhoi {

// Rendered scenes with one human and one object whose placement encodes the
// action: enough structure for end-to-end fixtures without real data.
struct ToyOptions {
  int size = 64;
  std::vector<std::string> actions{"ride", "hold", "kick"};
  std::vector<std::string> objects{"horse", "cup", "ball"};
  // Triplet classes to draw from, cycled in order.
  std::vector<HoiClass> hois{{"ride", "horse"}, {"hold", "cup"}, {"kick", "ball"}};
  std::uint64_t seed = 0;
};

struct ToyScene {
  Image image;
  Box human;
  Box object;
  std::string action;
  std::string object_class;
};

ToyScene render_toy_scene(const ToyOptions& opt, const HoiClass& hoi, std::uint64_t seed);

// count scenes cycling through opt.hois; images named img_NNNN.png.
struct ToySet {
  std::vector<ToyScene> scenes;
  DatasetFile dataset;
};
ToySet make_toyset(const ToyOptions& opt, int count);

// Writes the PNGs and dataset.json under dir; returns the dataset path.
std::string write_toyset(const ToySet& set, const std::string& dir);

}  // namespace dhoi
