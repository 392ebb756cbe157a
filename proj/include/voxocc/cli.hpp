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

// Command-line front end. Exit codes: 0 success, 2 invalid arguments or
// config, 1 runtime failure (I/O, malformed files).

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "voxocc/ablation.hpp"
#include "voxocc/data.hpp"
#include "voxocc/training.hpp"

namespace voxocc {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Seed of scene `index` in a dataset generated with `seed`.
std::uint64_t scene_seed(std::uint64_t seed, std::size_t index);

struct GenDataOptions {
  std::size_t scenes = 4;
  std::uint64_t seed = 0;
  Index3 grid{32, 32, 8};
  double voxel_size = 0.25;
  int lattice = 2;
  std::int64_t image_width = 64, image_height = 48;
};
Dataset generate_dataset(const GenDataOptions& options);

// "class count fraction" table over labeled voxels, with a total line.
std::string frequency_table(const ClassTable& classes, const ClassStats& stats);

struct SampleStatsRow {
  std::int64_t voxels = 0;   // n_c
  double weight = 0.0;      // w_c
  std::int64_t uniform_hits = 0, guided_hits = 0;
  double uniform_expected = 0.0, guided_expected = 0.0;
  double uniform_sigma = 0.0, guided_sigma = 0.0;  // of the empirical fraction
};
struct SampleStats {
  std::int64_t draws = 0, points_per_draw = 0;
  std::vector<SampleStatsRow> rows;
  // Every empirical fraction within 3 sigma of its expectation.
  bool within_tolerance() const;
};
// Draw d samples `points_per_draw` voxels from grid d % grids.size() with both
// sampling modes; expectations are n_c w_c / sum n w per grid, averaged.
SampleStats sample_stats(const std::vector<LabelGrid>& grids, int num_classes, double beta,
                         std::int64_t draws, std::int64_t points_per_draw, std::uint64_t seed);
std::string sample_stats_table(const ClassTable& classes, const SampleStats& stats);

// ASCII PLY with one colored vertex per non-free voxel center.
void write_occupancy_ply(const LabelGrid& labels, const ClassTable& classes,
                         const std::filesystem::path& path);

}  // namespace voxocc
