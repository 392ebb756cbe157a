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

// Named-array blobs shared by datasets and checkpoints.
//
// Layout (little-endian):
//   "OCCF" | u32 version | u32 count |
//   count x ( u32 name_len | name | u8 dtype | u32 ndim | i64 dims[ndim] | data )
// dtype: 1 = u8, 2 = f32, 3 = i64, 4 = f64. Data is row-major.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voxocc/core.hpp"

namespace voxocc {

// Raised on unreadable or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kBlobVersion = 1;

using NamedArrays = std::vector<std::pair<std::string, torch::Tensor>>;

void write_blob(const std::filesystem::path& path, const NamedArrays& arrays);
NamedArrays read_blob(const std::filesystem::path& path);

// First array called `name`; FormatError when missing.
const torch::Tensor& find_array(const NamedArrays& arrays, const std::string& name,
                                const std::filesystem::path& origin);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json to_json(const GridMeta& meta);
GridMeta grid_meta_from_json(const nlohmann::json& j);

}  // namespace voxocc
