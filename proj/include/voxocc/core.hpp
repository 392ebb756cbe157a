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

#pragma once

#include <torch/torch.h>

#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxocc {

// Label value excluded from losses and metrics.
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Thrown on malformed arguments (bad shapes, non-positive factors, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Index3 = std::array<std::int64_t, 3>;

// World frame: X forward, Y left, Z up. Voxel (i,j,k) spans
// [origin + voxel_size * (i,j,k), origin + voxel_size * (i+1,j+1,k+1)).
struct GridMeta {
  Index3 resolution{1, 1, 1};
  Eigen::Vector3d voxel_size{1.0, 1.0, 1.0};
  Eigen::Vector3d origin{0.0, 0.0, 0.0};

  void validate() const;

  std::int64_t num_voxels() const {
    return resolution[0] * resolution[1] * resolution[2];
  }
  std::int64_t flat_index(const Index3& idx) const {
    return (idx[0] * resolution[1] + idx[1]) * resolution[2] + idx[2];
  }
  Index3 unflatten(std::int64_t flat) const;
  bool contains(const Index3& idx) const;

  // Center of voxel `idx`.
  Eigen::Vector3d world_of(const Index3& idx) const;
  // Voxel containing `world` (may lie outside the grid).
  Index3 index_of(const Eigen::Vector3d& world) const;
  // Continuous voxel-index coordinates: integer values are voxel centers.
  Eigen::Vector3d continuous_index_of(const Eigen::Vector3d& world) const;
  Eigen::Vector3d extent() const;

  // Same physical box at resolution / factor (or * factor).
  GridMeta downsampled(const Index3& factor) const;
  GridMeta upsampled(const Index3& factor) const;

  bool operator==(const GridMeta& other) const;
};

// Dense C x X x Y x Z array with world-frame metadata.
struct VoxelGrid {
  GridMeta meta;
  torch::Tensor data;

  VoxelGrid() = default;
  VoxelGrid(GridMeta m, torch::Tensor d);

  std::int64_t channels() const { return data.size(0); }
  void validate() const;
};

// X x Y x Z uint8 semantic labels; values < num_classes or kIgnoreLabel.
struct LabelGrid {
  GridMeta meta;
  torch::Tensor labels;

  void validate(int num_classes) const;
};

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate(double tol = 1e-6) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  Pose inverse() const;
};

enum class Padding { kZeros, kBorder };

// Samples `grid` (C x X x Y x Z) at continuous voxel-index coordinates
// `points` (M x 3). Returns M x C. kZeros gives out-of-bounds corners zero
// weight; kBorder clamps coordinates into [0, n-1] first. Differentiable
// with respect to both grid and points.
torch::Tensor trilinear_sample(const torch::Tensor& grid,
                               const torch::Tensor& points,
                               Padding padding = Padding::kZeros);

// Batched variant: grid B x C x X x Y x Z, points B x M x 3 -> B x M x C.
torch::Tensor trilinear_sample_batched(const torch::Tensor& grid,
                                       const torch::Tensor& points,
                                       Padding padding = Padding::kZeros);

// Max over (fx, fy, fz) windows; a ragged tail is padded with -inf.
VoxelGrid max_pool_3d(const VoxelGrid& grid, const Index3& factor);
torch::Tensor max_pool_3d(const torch::Tensor& data, const Index3& factor);

// Trilinear-interpolation downsampling: value at each coarse voxel center,
// interpolated from the fine grid (border clamped). For factor 2 this is the
// mean of the 2x2x2 window.
torch::Tensor downsample_trilinear(const torch::Tensor& data,
                                   const Index3& factor);

// Resamples to resolution * factor at the new voxel centers (border clamped).
torch::Tensor upsample_trilinear(const torch::Tensor& data,
                                 const Index3& factor);

// Mean over Z: [B x] C x X x Y x Z -> [B x] C x X x Y.
torch::Tensor avg_pool_height(const VoxelGrid& grid);
torch::Tensor avg_pool_height(const torch::Tensor& data);

// X*Y*Z x 3 voxel-center coordinates in row-major (i, j, k) order.
torch::Tensor voxel_world_coords(const GridMeta& meta,
                                 torch::Dtype dtype = torch::kFloat64);

// Continuous coordinates, in the voxel-index space of `coarse`, of the
// centers of voxels of `fine` listed by flat index.
torch::Tensor map_voxel_centers(const GridMeta& fine, const GridMeta& coarse,
                                const torch::Tensor& flat_indices,
                                torch::Dtype dtype = torch::kFloat64);

std::string to_string(const Index3& idx);

}  // namespace voxocc
