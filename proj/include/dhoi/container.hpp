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

#include "dhoi/matrix.hpp"
#include "dhoi/params.hpp"

namespace dhoi {

// One named float32 array of a DHB1 container.
struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::string encode_dhb1(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_dhb1(const std::string& bytes);

NamedArray array_from_matrix(const std::string& name, const Matrix& m);
// Rank-1 arrays become a single row.
Matrix matrix_from_array(const NamedArray& a);

// Opaque bytes carried as a rank-1 array of byte values.
NamedArray array_from_blob(const std::string& name, const std::string& bytes);
std::string blob_from_array(const NamedArray& a);

std::vector<NamedArray> arrays_from_store(const ParameterStore& store, const std::string& prefix = "");
// Overwrites every store entry from the arrays (names must match, shapes too).
void load_store(ParameterStore& store, const std::vector<NamedArray>& arrays,
                const std::string& prefix = "");

const NamedArray& find_array(const std::vector<NamedArray>& arrays, const std::string& name);

// File helpers; writes go to a temp file first and are renamed into place.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace dhoi
