// Copyright 2026 The voxocc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "voxocc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace voxocc {

static_assert(std::endian::native == std::endian::little,
              "blob I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'C', 'C', 'F'};

std::uint8_t dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kUInt8: return 1;
    case torch::kFloat32: return 2;
    case torch::kInt64: return 3;
    case torch::kFloat64: return 4;
    default:
      throw ArgumentError(std::string("unsupported array dtype ") + c10::toString(t));
  }
}

torch::ScalarType tag_dtype(std::uint8_t tag, const std::filesystem::path& path) {
  switch (tag) {
    case 1: return torch::kUInt8;
    case 2: return torch::kFloat32;
    case 3: return torch::kInt64;
    case 4: return torch::kFloat64;
    default:
      throw FormatError(path.string() + ": unknown dtype tag " + std::to_string(tag));
  }
}

template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::filesystem::path path)
      : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get(const std::string& what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const char* take(std::size_t n, const std::string& what) {
    need(n, what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (data_.size() - pos_ < n) {
      throw FormatError(path_.string() + ": truncated while reading " + what + " (need " +
                        std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                        ", file has " + std::to_string(data_.size()) + ")");
    }
  }
  std::string data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_blob(const std::filesystem::path& path, const NamedArrays& arrays) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kBlobVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    const auto c = t.detach().cpu().contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, dtype_tag(c.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim()));
    for (auto d : c.sizes()) put<std::int64_t>(out, d);
    out.append(static_cast<const char*>(c.data_ptr()), c.nbytes());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

NamedArrays read_blob(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path);
  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic bytes (not an OCCF blob)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kBlobVersion) {
    throw FormatError(path.string() + ": blob version " + std::to_string(version) +
                      ", expected " + std::to_string(kBlobVersion));
  }
  const auto count = r.get<std::uint32_t>("array count");
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto what = "array " + std::to_string(i);
    const auto len = r.get<std::uint32_t>(what + " name length");
    std::string name(r.take(len, what + " name"), len);
    const auto dtype = tag_dtype(r.get<std::uint8_t>(name + " dtype"), path);
    const auto ndim = r.get<std::uint32_t>(name + " ndim");
    if (ndim > 16) throw FormatError(path.string() + ": '" + name + "' has ndim " + std::to_string(ndim));
    std::vector<std::int64_t> dims(ndim);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = r.get<std::int64_t>(name + " dims");
      if (d < 0) throw FormatError(path.string() + ": '" + name + "' has a negative dim");
      numel *= d;
    }
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    const auto bytes = static_cast<std::size_t>(numel) * t.element_size();
    std::memcpy(t.data_ptr(), r.take(bytes, "'" + name + "' data"), bytes);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after last array");
  return out;
}

const torch::Tensor& find_array(const NamedArrays& arrays, const std::string& name,
                                const std::filesystem::path& origin) {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw FormatError(origin.string() + ": missing array '" + name + "'");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json to_json(const GridMeta& meta) {
  return {{"resolution", {meta.resolution[0], meta.resolution[1], meta.resolution[2]}},
          {"voxel_size", {meta.voxel_size.x(), meta.voxel_size.y(), meta.voxel_size.z()}},
          {"origin", {meta.origin.x(), meta.origin.y(), meta.origin.z()}}};
}

GridMeta grid_meta_from_json(const nlohmann::json& j) {
  GridMeta m;
  for (int a = 0; a < 3; ++a) {
    m.resolution[a] = j.at("resolution").at(a).get<std::int64_t>();
    m.voxel_size[a] = j.at("voxel_size").at(a).get<double>();
    m.origin[a] = j.at("origin").at(a).get<double>();
  }
  m.validate();
  return m;
}

}  // namespace voxocc
