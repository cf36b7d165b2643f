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
#include <map>
#include <string>
#include <vector>

#include "dhoi/backbone.hpp"
#include "dhoi/detector.hpp"
#include "dhoi/evaluation.hpp"
#include "dhoi/inversion.hpp"

namespace dhoi {

struct TrainPhases {
  int epochs = 60;  // joint: synthetic + target
  double lr = 1e-4;
  int finetune_epochs = 30;  // target only
  double finetune_lr = 1e-5;
  double rel_lr = 1e-4;
  int batch = 16;
  std::string schedule = "constant";  // or "cosine", per phase
};

struct EvalSettings {
  Setup setup = Setup::kDefault;
  double iou_threshold = 0.5;
  int rare_below = 10;
  double score_threshold = 0.0;
  int top_k = 100;
};

struct SynthSettings {
  int samples = 64;
  int image_size = 64;
  int n_steps = 8;
  double threshold = 0.5;
  std::string captions;  // JSON Lines; templates when empty
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string backbone = "mock";
  MockConfig mock;
  InversionConfig inversion;
  int inversion_image_size = 64;
  TrainPhases train;
  DetectorConfig detector;
  EvalSettings eval;
  SynthSettings synth;
  std::string split_mode = "rf_uc";
  SplitOptions splits;

  // RangeError naming the offending key.
  void validate() const;
};

// Flat "key = value" lines with optional [section] headers (a TOML subset):
// integers, reals, quoted strings and arrays of quoted strings.
// Malformed lines raise UsageError with the line number, unknown keys with
// the key name.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

// Raw key -> value text of a config file, for tools that only need a few keys.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);

}  // namespace dhoi
