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

#include "voxocc/view_transform.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <numeric>

namespace voxocc {

namespace nn = torch::nn;

void CameraView::validate() const {
  if (!image.defined() || image.dim() != 3) {
    throw ArgumentError("camera image must be C x H x W");
  }
  if (std::abs(intrinsics(2, 2) - 1.0) > 1e-9 || intrinsics(2, 0) != 0.0 ||
      intrinsics(2, 1) != 0.0) {
    throw ArgumentError("intrinsics must have last row (0, 0, 1)");
  }
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) {
    throw ArgumentError("intrinsics focal lengths must be positive");
  }
  if (std::abs(intrinsics.determinant()) < 1e-12) {
    throw ArgumentError("intrinsics are not invertible");
  }
  pose.validate();
  if (has_depth() && (gt_depth.dim() != 2 || gt_depth.size(0) != height() ||
                      gt_depth.size(1) != width())) {
    throw ArgumentError("gt_depth must be H x W");
  }
}

Eigen::Vector3d CameraView::unproject(double u, double v, double depth) const {
  if (image_flipped) u = static_cast<double>(width()) - u;
  const Eigen::Vector3d ray = intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0);
  return pose.apply(ray * depth);
}

void DepthBins::validate() const {
  if (!(d_min > 0.0) || !(d_max > d_min)) {
    throw ArgumentError("depth bins need 0 < d_min < d_max");
  }
  if (count < 2) throw ArgumentError("depth bins need at least 2 bins");
}

std::optional<int> DepthBins::bin_of(double depth) const {
  if (!(depth >= d_min) || !(depth < d_max)) return std::nullopt;
  const int k = static_cast<int>(std::floor((depth - d_min) / width()));
  return std::min(k, count - 1);
}

// ---------------------------------------------------------------------------

ImageBackboneImpl::ImageBackboneImpl(const BackboneOptions& options)
    : options_(options) {
  if (options.stride < 2 || (options.stride & (options.stride - 1)) != 0) {
    throw ArgumentError("backbone stride must be a power of two >= 2");
  }
  blocks_ = nn::Sequential();
  int in = options.in_channels;
  int levels = 0;
  for (int s = options.stride; s > 1; s /= 2) ++levels;
  for (int level = 0; level < levels; ++level) {
    const int out = level + 1 == levels ? options.out_channels
                                        : options.base_width * (1 << level);
    const int groups = std::gcd(out, 8);
    blocks_->push_back(nn::Conv2d(
        nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false)));
    blocks_->push_back(nn::GroupNorm(nn::GroupNormOptions(groups, out)));
    blocks_->push_back(nn::ReLU());
    blocks_->push_back(
        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
    blocks_->push_back(nn::GroupNorm(nn::GroupNormOptions(groups, out)));
    blocks_->push_back(nn::ReLU());
    in = out;
  }
  register_module("blocks", blocks_);
}

torch::Tensor ImageBackboneImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(2) % options_.stride != 0 ||
      images.size(3) % options_.stride != 0) {
    throw ArgumentError("image dims must be divisible by the backbone stride " +
                        std::to_string(options_.stride));
  }
  return blocks_->forward(images);
}

torch::Tensor backbone_forward(const std::vector<CameraView>& views,
                               ImageBackbone& backbone) {
  if (views.empty()) throw ArgumentError("backbone needs at least one view");
  std::vector<torch::Tensor> images;
  images.reserve(views.size());
  for (const auto& v : views) images.push_back(v.image);
  auto param = backbone->parameters().front();
  return backbone->forward(torch::stack(images).to(param.scalar_type()));
}

ContextDepthHeadImpl::ContextDepthHeadImpl(int in_channels,
                                           int context_channels,
                                           int depth_bins)
    : context_channels_(context_channels), depth_bins_(depth_bins) {
  shared = register_module(
      "shared",
      nn::Conv2d(nn::Conv2dOptions(in_channels, in_channels, 3).padding(1)));
  context_head = register_module(
      "context_head",
      nn::Conv2d(nn::Conv2dOptions(in_channels, context_channels, 1)));
  depth_head = register_module(
      "depth_head", nn::Conv2d(nn::Conv2dOptions(in_channels, depth_bins, 1)));
}

std::pair<torch::Tensor, torch::Tensor> ContextDepthHeadImpl::forward(
    const torch::Tensor& features) {
  auto x = torch::relu(shared->forward(features));
  return {context_head->forward(x), depth_head->forward(x)};
}

std::pair<torch::Tensor, torch::Tensor> predict_context_and_depth(
    const torch::Tensor& features, ContextDepthHead& head,
    const DepthBins& bins) {
  bins.validate();
  if (head->depth_bins() != bins.count) {
    throw ArgumentError("depth head size does not match the bin count");
  }
  return head->forward(features);
}

// ---------------------------------------------------------------------------

torch::Tensor lift_voxel_indices(const std::vector<CameraView>& views,
                                 std::int64_t feat_h, std::int64_t feat_w,
                                 const DepthBins& bins, const GridMeta& meta) {
  bins.validate();
  meta.validate();
  const std::int64_t n_views = static_cast<std::int64_t>(views.size());
  auto out = torch::empty({n_views * bins.count * feat_h * feat_w},
                          torch::TensorOptions().dtype(torch::kInt64));
  std::int64_t* dst = out.data_ptr<std::int64_t>();
  std::int64_t pos = 0;
  for (const auto& view : views) {
    view.validate();
    if (view.height() % feat_h != 0 || view.width() % feat_w != 0 ||
        view.height() / feat_h != view.width() / feat_w) {
      throw ArgumentError("feature map does not tile the image evenly");
    }
    const double stride = static_cast<double>(view.width() / feat_w);
    const Eigen::Matrix3d k_inv = view.intrinsics.inverse();
    for (int d = 0; d < bins.count; ++d) {
      const double depth = bins.center(d);
      for (std::int64_t r = 0; r < feat_h; ++r) {
        for (std::int64_t c = 0; c < feat_w; ++c) {
          double u = (static_cast<double>(c) + 0.5) * stride;
          const double v = (static_cast<double>(r) + 0.5) * stride;
          if (view.image_flipped) u = static_cast<double>(view.width()) - u;
          const Eigen::Vector3d cam = k_inv * Eigen::Vector3d(u, v, 1.0) * depth;
          const Index3 idx = meta.index_of(view.pose.apply(cam));
          dst[pos++] = meta.contains(idx) ? meta.flat_index(idx) : -1;
        }
      }
    }
  }
  return out;
}

VoxelGrid lift_and_pool(const torch::Tensor& context,
                        const torch::Tensor& depth_logits,
                        const std::vector<CameraView>& views,
                        const DepthBins& bins, const GridMeta& meta) {
  if (context.dim() != 4 || depth_logits.dim() != 4 ||
      context.size(0) != static_cast<std::int64_t>(views.size()) ||
      depth_logits.size(0) != context.size(0) ||
      depth_logits.size(1) != bins.count ||
      depth_logits.size(2) != context.size(2) ||
      depth_logits.size(3) != context.size(3)) {
    throw ArgumentError("lift_and_pool: context/depth/view shapes disagree");
  }
  const std::int64_t channels = context.size(1);
  const auto indices = lift_voxel_indices(views, context.size(2),
                                          context.size(3), bins, meta);
  const auto valid = torch::nonzero(indices >= 0).squeeze(1);
  const auto target = indices.index_select(0, valid);

  const auto probs = torch::softmax(depth_logits, 1);
  // (N, D, C, H, W) -> C x (N * D * H * W) in (n, d, r, c) order
  const auto points = (context.unsqueeze(1) * probs.unsqueeze(2))
                          .permute({2, 0, 1, 3, 4})
                          .reshape({channels, -1});
  auto volume = torch::zeros({channels, meta.num_voxels()}, context.options());
  volume = volume.index_add(1, target, points.index_select(1, valid));
  return VoxelGrid(meta, volume.reshape({channels, meta.resolution[0],
                                         meta.resolution[1],
                                         meta.resolution[2]}));
}

DepthTargets depth_targets(const CameraView& view, const DepthBins& bins,
                           int stride) {
  bins.validate();
  if (!view.has_depth()) throw ArgumentError("depth_targets needs gt_depth");
  if (stride < 1 || view.height() % stride != 0 || view.width() % stride != 0) {
    throw ArgumentError("depth_targets stride must tile the image");
  }
  const std::int64_t fh = view.height() / stride;
  const std::int64_t fw = view.width() / stride;
  const auto depth = view.gt_depth.to(torch::kFloat64).contiguous();
  const auto acc = depth.accessor<double, 2>();
  auto one_hot = torch::zeros({bins.count, fh, fw});
  auto valid = torch::zeros({fh, fw});
  auto oh = one_hot.accessor<float, 3>();
  auto va = valid.accessor<float, 2>();
  for (std::int64_t r = 0; r < fh; ++r) {
    for (std::int64_t c = 0; c < fw; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (int dr = 0; dr < stride; ++dr) {
        for (int dc = 0; dc < stride; ++dc) {
          const double d = acc[r * stride + dr][c * stride + dc];
          if (d > 0.0 && d < best) best = d;
        }
      }
      if (!std::isfinite(best)) continue;
      if (auto k = bins.bin_of(best)) {
        oh[*k][r][c] = 1.0f;
        va[r][c] = 1.0f;
      }
    }
  }
  return {one_hot, valid};
}

torch::Tensor depth_bce_loss(const torch::Tensor& depth_logits,
                             const torch::Tensor& one_hot,
                             const torch::Tensor& valid) {
  if (depth_logits.sizes() != one_hot.sizes()) {
    throw ArgumentError("depth_bce_loss: logits and targets differ in shape");
  }
  const int bin_dim = depth_logits.dim() - 3;
  const auto probs = torch::softmax(depth_logits, bin_dim);
  const auto y = one_hot.to(depth_logits.scalar_type());
  const auto bce = -(y * torch::log(torch::clamp_min(probs, kLogEpsilon)) +
                     (1.0 - y) * torch::log(torch::clamp_min(1.0 - probs,
                                                             kLogEpsilon)))
                        .sum(bin_dim);
  const auto mask = valid.to(depth_logits.scalar_type());
  const auto count = mask.sum();
  if (count.item<double>() <= 0.0) {
    return (depth_logits * 0.0).sum();
  }
  return (bce * mask).sum() / count;
}

}  // namespace voxocc
