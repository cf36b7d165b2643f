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

#include "dhoi/matrix.hpp"

namespace dhoi {

// One learnable embedding row per action class.
class RelationTable {
 public:
  RelationTable() = default;
  RelationTable(std::vector<std::string> actions, Matrix vectors);

  int size() const { return static_cast<int>(actions_.size()); }
  int dim() const { return vectors_.cols(); }
  const std::vector<std::string>& actions() const { return actions_; }
  const Matrix& vectors() const { return vectors_; }
  Matrix& vectors() { return vectors_; }

  bool contains(const std::string& action) const { return index_.count(action) != 0; }
  // LookupError naming the action when absent.
  int index_of(const std::string& action) const;
  Matrix row(const std::string& action) const;

  // RELV1 binary form.
  std::string encode() const;
  static RelationTable decode(const std::string& bytes);
  void save(const std::string& path) const;
  static RelationTable load(const std::string& path);

 private:
  std::vector<std::string> actions_;
  Matrix vectors_;
  std::map<std::string, int> index_;
};

}  // namespace dhoi
