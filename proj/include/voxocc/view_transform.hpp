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

// Image-to-voxel lifting: a small strided backbone, per-pixel context and
// depth-distribution heads, the outer-product lift along camera rays and
// sum-pooling of the lifted points into a voxel volume.

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "voxocc/core.hpp"

namespace voxocc {

// Pinhole camera. Camera frame: x right, y down, z forward; pixel (r, c) has
// its center at image coordinates (c + 0.5, r + 0.5).
struct CameraView {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Pose pose;              // camera-to-world
  torch::Tensor image;    // 3 x H x W float
  torch::Tensor gt_depth; // H x W z-depth in meters, 0 = no return; optional
  // The image (and depth) were mirrored horizontally after capture; lifting
  // unprojects through the original column.
  bool image_flipped = false;

  std::int64_t height() const { return image.size(1); }
  std::int64_t width() const { return image.size(2); }
  bool has_depth() const { return gt_depth.defined(); }
  void validate() const;

  // World-frame point at z-depth `depth` behind image coordinates (u, v).
  Eigen::Vector3d unproject(double u, double v, double depth) const;
};

// Uniform bins [d_min + k*w, d_min + (k+1)*w), w = (d_max - d_min) / count.
struct DepthBins {
  double d_min = 0.5;
  double d_max = 8.5;
  int count = 16;

  void validate() const;
  double width() const { return (d_max - d_min) / count; }
  double center(int k) const { return d_min + (k + 0.5) * width(); }
  // Bin whose center is nearest to `depth`, or nullopt outside [d_min, d_max).
  std::optional<int> bin_of(double depth) const;
};

struct BackboneOptions {
  int in_channels = 3;
  int base_width = 16;
  int out_channels = 64;
  int stride = 8;  // power of two; one stride-2 block per factor of two
};

// Stack of stride-2 conv blocks (conv-GN-ReLU, conv-GN-ReLU).
class ImageBackboneImpl : public torch::nn::Module {
 public:
  explicit ImageBackboneImpl(const BackboneOptions& options);
  // N x C_in x H x W -> N x C_out x H/stride x W/stride
  torch::Tensor forward(const torch::Tensor& images);
  int stride() const { return options_.stride; }

 private:
  BackboneOptions options_;
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(ImageBackbone);

torch::Tensor backbone_forward(const std::vector<CameraView>& views,
                               ImageBackbone& backbone);

// Shared 3x3 conv, then separate 1x1 heads for context and depth logits.
class ContextDepthHeadImpl : public torch::nn::Module {
 public:
  ContextDepthHeadImpl(int in_channels, int context_channels, int depth_bins);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& features);
  int context_channels() const { return context_channels_; }
  int depth_bins() const { return depth_bins_; }

  torch::nn::Conv2d shared{nullptr};
  torch::nn::Conv2d context_head{nullptr};
  torch::nn::Conv2d depth_head{nullptr};

 private:
  int context_channels_;
  int depth_bins_;
};
TORCH_MODULE(ContextDepthHead);

// Returns (context N x C_con x H x W, depth_logits N x D x H x W).
std::pair<torch::Tensor, torch::Tensor> predict_context_and_depth(
    const torch::Tensor& features, ContextDepthHead& head,
    const DepthBins& bins);

// Flat voxel index for every (view, bin, row, col) lifted point, -1 when the
// point is outside the volume. Shape N*D*H*W, ordered (n, d, r, c).
torch::Tensor lift_voxel_indices(const std::vector<CameraView>& views,
                                 std::int64_t feat_h, std::int64_t feat_w,
                                 const DepthBins& bins, const GridMeta& meta);

// Outer product of context and depth distribution along every ray, then
// sum-pooled into `meta`. Differentiable in context and depth_logits.
VoxelGrid lift_and_pool(const torch::Tensor& context,
                        const torch::Tensor& depth_logits,
                        const std::vector<CameraView>& views,
                        const DepthBins& bins, const GridMeta& meta);

struct LiftOutput {
  torch::Tensor context;
  torch::Tensor depth_logits;
  VoxelGrid volume;
};

struct DepthTargets {
  torch::Tensor one_hot;  // D x H x W
  torch::Tensor valid;    // H x W, 1 where the cell has a usable return
};

// Per feature cell: minimum positive gt depth inside its stride x stride
// window, one-hot encoded by nearest bin center.
DepthTargets depth_targets(const CameraView& view, const DepthBins& bins,
                           int stride);

inline constexpr double kLogEpsilon = 1e-12;

// Mean over valid cells of the per-bin binary cross-entropy between
// softmax(depth_logits) and the one-hot target, summed over bins. Accepts
// [N x] D x H x W logits with matching targets.
torch::Tensor depth_bce_loss(const torch::Tensor& depth_logits,
                             const torch::Tensor& one_hot,
                             const torch::Tensor& valid);

}  // namespace voxocc
