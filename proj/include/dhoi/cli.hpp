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
#include <vector>

#include "dhoi/backbone.hpp"
#include "dhoi/config.hpp"
#include "dhoi/evaluation.hpp"

namespace dhoi {

// Mock backbone for a run; cached as $DHOI_CACHE/mock-<fingerprint>.dhb when
// the variable is set.
MockBackbone make_backbone(const RunConfig& config);

// Relation inversion over every HOI instance of the dataset. Writes the RELV1
// table to out and the per-step losses to out + ".log.json".
void cmd_invert(const RunConfig& config, const std::string& dataset, const std::string& out);

// Pseudo-labelled dataset under out_dir (dataset.json + images/). The
// vocabulary, and the template prompts when no caption file is configured,
// come from vocab_dataset.
void cmd_synthesize(const RunConfig& config, const std::string& table, const std::string& vocab_dataset,
                    const std::string& out_dir);

struct TrainInputs {
  std::string target;                  // dataset whose vocabulary the detector uses
  std::vector<std::string> synthetic;  // joint-phase extras
  std::string table;                   // RELV1; initialized from the vocabulary when empty
};

// Joint phase over target + synthetic, then target only. Writes the detector
// checkpoint to out and the loss curve to out + ".loss.json".
void cmd_train(const RunConfig& config, const TrainInputs& inputs, const std::string& out);

struct EvalInputs {
  std::string checkpoint;
  std::string dataset;
  std::string split;  // split.json from cmd_splits: seen/unseen partitions
  std::string train;  // rare/non-rare counts; the evaluated dataset when empty
};

// Writes out_dir/report.json, report.txt and predictions.jsonl.
EvalReport cmd_eval(const RunConfig& config, const EvalInputs& inputs, const std::string& out_dir);

// Writes out_dir/train.json (unseen triplets removed), eval.json (all
// classes) and split.json (mode, seen and unseen class ids and names).
Split cmd_splits(const RunConfig& config, const std::string& dataset, const std::string& out_dir);

}  // namespace dhoi
