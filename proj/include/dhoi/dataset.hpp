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
#include <utility>
#include <vector>

#include "dhoi/boxes.hpp"
#include "json.hpp"

namespace dhoi {

struct ImageEntry {
  int id = 0;
  std::string path;  // relative to the dataset file unless absolute
  int width = 0;
  int height = 0;
};

struct ObjectAnn {
  Box box;
  std::string category;
};

struct HoiAnn {
  int human_idx = 0;
  int object_idx = 0;
  std::string action;
};

struct Annotation {
  int image_id = 0;
  std::vector<Box> humans;
  std::vector<ObjectAnn> objects;
  std::vector<HoiAnn> hois;
};

struct HoiClass {
  std::string action;
  std::string object;
  bool operator==(const HoiClass&) const = default;
};

struct Vocab {
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  // HOI triplet classes; class id = position.
  std::vector<HoiClass> hois;
};

// One schema for real annotations and synthesized pseudo-annotations.
struct DatasetFile {
  std::string source = "real";  // "real" | "synthetic"
  std::vector<ImageEntry> images;
  std::vector<Annotation> annotations;
  Vocab vocab;
  int skipped = 0;

  // SchemaError naming the JSON path of the first violation.
  void validate() const;
  // Class id of (action, object), or -1.
  int hoi_index(const std::string& action, const std::string& object) const;
  const ImageEntry& image(int id) const;
};

nlohmann::ordered_json to_json(const DatasetFile& ds);
// Parses and validates. A missing vocab.hois is filled with every
// (action, object) pair that occurs, ordered by vocabulary position.
DatasetFile dataset_from_json(const nlohmann::ordered_json& j);

DatasetFile load_dataset(const std::string& path);
void save_dataset(const std::string& path, const DatasetFile& ds);
// Image path resolved against the dataset file location.
std::string resolve_image_path(const std::string& dataset_path, const ImageEntry& image);

}  // namespace dhoi
