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

#include "dhoi/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dhoi/errors.hpp"

namespace dhoi {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("truncated DHB1 container");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_dhb1(const std::vector<NamedArray>& arrays) {
  std::string out = "DHB1";
  for (const NamedArray& a : arrays) {
    if (a.name.size() > 0xFFFF) throw IoError("array name too long: " + a.name.substr(0, 32));
    if (a.dims.size() > 0xFF) throw IoError("array rank too large: " + a.name);
    std::size_t n = 1;
    for (auto d : a.dims) n *= d;
    if (n != a.data.size()) throw DimensionError("array '" + a.name + "' payload/dims mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) put<std::uint32_t>(out, d);
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  return out;
}

std::vector<NamedArray> decode_dhb1(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "DHB1") != 0) throw IoError("missing DHB1 magic");
  Reader r(bytes);
  r.take(4);
  std::vector<NamedArray> out;
  while (!r.done()) {
    NamedArray a;
    a.name = r.take(r.get<std::uint16_t>());
    const int rank = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      a.dims.push_back(r.get<std::uint32_t>());
      n *= a.dims.back();
    }
    const std::string payload = r.take(n * sizeof(float));
    a.data.resize(n);
    std::memcpy(a.data.data(), payload.data(), payload.size());
    out.push_back(std::move(a));
  }
  return out;
}

NamedArray array_from_matrix(const std::string& name, const Matrix& m) {
  NamedArray a{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  a.data.reserve(m.size());
  for (double v : m.values()) a.data.push_back(static_cast<float>(v));
  return a;
}

Matrix matrix_from_array(const NamedArray& a) {
  int rows = 1, cols = 1;
  if (a.dims.size() == 1) {
    cols = static_cast<int>(a.dims[0]);
  } else if (a.dims.size() == 2) {
    rows = static_cast<int>(a.dims[0]);
    cols = static_cast<int>(a.dims[1]);
  } else {
    throw DimensionError("array '" + a.name + "' is not rank 1 or 2");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) m[i] = a.data[i];
  return m;
}

NamedArray array_from_blob(const std::string& name, const std::string& bytes) {
  NamedArray a{name, {static_cast<std::uint32_t>(bytes.size())}, {}};
  a.data.reserve(bytes.size());
  for (unsigned char c : bytes) a.data.push_back(static_cast<float>(c));
  return a;
}

std::string blob_from_array(const NamedArray& a) {
  std::string s;
  s.reserve(a.data.size());
  for (float f : a.data) {
    if (f < 0 || f > 255 || f != static_cast<float>(static_cast<int>(f))) {
      throw IoError("blob '" + a.name + "' holds a non-byte value");
    }
    s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  }
  return s;
}

std::vector<NamedArray> arrays_from_store(const ParameterStore& store, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const std::string& name : store.names()) out.push_back(array_from_matrix(prefix + name, store.get(name)));
  return out;
}

const NamedArray& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const NamedArray& a : arrays)
    if (a.name == name) return a;
  throw LookupError("container has no array '" + name + "'");
}

void load_store(ParameterStore& store, const std::vector<NamedArray>& arrays, const std::string& prefix) {
  for (const std::string& name : store.names()) {
    Matrix m = matrix_from_array(find_array(arrays, prefix + name));
    Matrix& dst = store.get(name);
    if (!dst.same_shape(m)) throw DimensionError("stored shape differs for '" + name + "'");
    dst = std::move(m);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace dhoi
