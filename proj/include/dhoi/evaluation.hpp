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

#include <map>
#include <string>
#include <vector>

#include "dhoi/dataset.hpp"
#include "dhoi/detector.hpp"
#include "json.hpp"

namespace dhoi {

enum class Setup { kDefault, kKnownObject };

struct EvalProtocol {
  Setup setup = Setup::kDefault;
  double iou_threshold = 0.5;
  // Named class-id sets; "full" is added when missing.
  std::map<std::string, std::vector<int>> partitions;

  void validate(int n_classes) const;
};

// Full / rare / non_rare from training instance counts per class.
std::map<std::string, std::vector<int>> rare_partitions(const std::vector<int>& train_counts, int rare_below = 10);
// Full / seen / unseen.
std::map<std::string, std::vector<int>> seen_partitions(int n_classes, const std::vector<int>& unseen);
// Instances per HOI class of a dataset.
std::vector<int> class_counts(const DatasetFile& ds);

struct GtPair {
  Box human;
  Box object;
};

// TP/FP flags of one image's detections of one class, already sorted by
// score. Degenerate predicted boxes never match.
std::vector<bool> match_detections(const std::vector<const Detection*>& dets, const std::vector<GtPair>& gts,
                                   double iou_threshold);

// All-point interpolated AP over flags in score order.
double average_precision(const std::vector<bool>& flags, int n_gt);

struct ClassResult {
  int hoi_id = 0;
  double ap = 0.0;
  int n_gt = 0;
  int n_det = 0;
  bool evaluated = false;  // false when the class has neither GT nor detections
};

struct EvalReport {
  std::string protocol;
  std::vector<ClassResult> per_class;
  // Mean AP over evaluated members; empty partitions are omitted.
  std::map<std::string, double> aggregates;
};

// Detection hoi_class indexes gt.vocab.hois; image_id must name a gt image.
EvalReport evaluate(const std::vector<Detection>& dets, const DatasetFile& gt, const EvalProtocol& protocol);

nlohmann::ordered_json to_json(const EvalReport& report);
std::string format_report(const EvalReport& report, const Vocab& vocab);

enum class SplitMode { kRfUc, kNfUc, kUv, kUo };
SplitMode parse_split_mode(const std::string& name);
std::string split_mode_name(SplitMode mode);

struct SplitOptions {
  int count = 120;                   // unseen triplets for rf_uc / nf_uc
  std::vector<std::string> verbs;    // uv
  std::vector<std::string> objects;  // uo
  int verb_count = 20;               // uv / uo without explicit names
  int object_count = 12;
};

struct Split {
  std::vector<int> seen;
  std::vector<int> unseen;
  DatasetFile train;  // unseen triplets removed
};

Split make_splits(const DatasetFile& ds, SplitMode mode, const SplitOptions& options = {});

}  // namespace dhoi
