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

#include "dhoi/relation_table.hpp"

#include <cstdint>
#include <cstring>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"

namespace dhoi {

RelationTable::RelationTable(std::vector<std::string> actions, Matrix vectors)
    : actions_(std::move(actions)), vectors_(std::move(vectors)) {
  if (vectors_.rows() != static_cast<int>(actions_.size())) {
    throw DimensionError("relation table: " + std::to_string(actions_.size()) + " actions but " +
                         std::to_string(vectors_.rows()) + " rows");
  }
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(actions_[i], i).second) {
      throw ContractError("relation table: duplicate action '" + actions_[i] + "'");
    }
  }
  if (!all_finite(vectors_)) throw NumericalError("relation table holds non-finite values");
}

int RelationTable::index_of(const std::string& action) const {
  auto it = index_.find(action);
  if (it == index_.end()) throw LookupError("unknown action '" + action + "'");
  return it->second;
}

Matrix RelationTable::row(const std::string& action) const {
  const int i = index_of(action);
  std::vector<double> v(vectors_.row(i).begin(), vectors_.row(i).end());
  return Matrix::row_vector(std::move(v));
}

std::string RelationTable::encode() const {
  std::string out = "RELV1";
  auto put32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  put32(static_cast<std::uint32_t>(size()));
  put32(static_cast<std::uint32_t>(dim()));
  for (int i = 0; i < size(); ++i) {
    const std::uint16_t len = static_cast<std::uint16_t>(actions_[i].size());
    out.append(reinterpret_cast<const char*>(&len), 2);
    out += actions_[i];
    for (double v : vectors_.row(i)) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  return out;
}

RelationTable RelationTable::decode(const std::string& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw IoError("truncated RELV1 table");
  };
  need(5);
  if (bytes.compare(0, 5, "RELV1") != 0) throw IoError("missing RELV1 magic");
  pos = 5;
  auto get32 = [&] {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  const std::uint32_t count = get32();
  const std::uint32_t dim = get32();
  std::vector<std::string> actions;
  Matrix vectors(static_cast<int>(count), static_cast<int>(dim));
  for (std::uint32_t i = 0; i < count; ++i) {
    need(2);
    std::uint16_t len;
    std::memcpy(&len, bytes.data() + pos, 2);
    pos += 2;
    need(len);
    actions.push_back(bytes.substr(pos, len));
    pos += len;
    need(static_cast<std::size_t>(dim) * 4);
    for (std::uint32_t j = 0; j < dim; ++j) {
      float f;
      std::memcpy(&f, bytes.data() + pos, 4);
      pos += 4;
      vectors(static_cast<int>(i), static_cast<int>(j)) = f;
    }
  }
  if (pos != bytes.size()) throw IoError("trailing bytes after RELV1 table");
  return RelationTable(std::move(actions), std::move(vectors));
}

void RelationTable::save(const std::string& path) const { write_file_atomic(path, encode()); }

RelationTable RelationTable::load(const std::string& path) { return decode(read_file(path)); }

}  // namespace dhoi
