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

// Dual-path voxel encoder. The local path runs shifted-window attention on
// every horizontal slice with one set of weights; the global path pools the
// height away, reuses the same attention on the BEV map and adds a bottleneck
// ASPP. A sigmoid gate per voxel blends the two.
//
// Volumes inside the modules are batched: B x C x X x Y x Z.

#pragma once

#include <string>
#include <vector>

#include "voxocc/core.hpp"

namespace voxocc {

struct DualPathConfig {
  int channels = 32;
  int window_size = 4;
  int heads = 4;
  std::vector<int> aspp_dilations{1, 2, 3};
  int aspp_bottleneck_ratio = 4;
  int mlp_ratio = 4;
  bool use_soft_sum = true;
  bool use_shared_attention = true;
  bool use_aspp = true;

  void validate() const;
};

enum class EncoderVariant { kDualPath, kLocalOnly, kGlobalOnly, kConv3d };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& name);

struct EncoderConfig {
  int in_channels = 32;
  int base_channels = 32;
  int stages = 4;
  int blocks_per_stage = 2;
  int max_channel_multiplier = 4;
  // One entry per gap between stages; empty means downsample at every gap.
  std::vector<bool> downsample_xy;
  EncoderVariant variant = EncoderVariant::kDualPath;
  DualPathConfig block;  // `channels` is overwritten per stage

  void validate() const;
  bool downsamples_after(int stage) const;
  int stage_channels(int stage) const;
};

// Pre-norm windowed multi-head self-attention with a feed-forward tail.
// Padding tokens never act as keys. Windows shrink to the map size along an
// axis that fits in one window, and such an axis is never shifted.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int channels, int heads, int window, int mlp_ratio = 4);

  // B x H x W x C -> B x H x W x C, full block with both residuals.
  torch::Tensor forward_cl(const torch::Tensor& x, bool shifted);
  // B x C x H x W -> B x C x H x W
  torch::Tensor forward(const torch::Tensor& x, bool shifted);
  // Windowed attention alone (after norm1, before the residual), channel-last.
  torch::Tensor attention(const torch::Tensor& x, bool shifted);

  int channels() const { return channels_; }
  int heads() const { return heads_; }
  int window() const { return window_; }

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};

 private:
  int channels_, heads_, window_;
};
TORCH_MODULE(WindowAttention);

torch::Tensor windowed_attention_2d(const torch::Tensor& feat,
                                    WindowAttention& attn, bool shifted);

// 1x1 reduce, parallel dilated 3x3 branches plus an image-pooling branch,
// 1x1 expand, residual.
class BevAsppImpl : public torch::nn::Module {
 public:
  BevAsppImpl(int channels, int bottleneck_ratio,
              const std::vector<int>& dilations);
  torch::Tensor forward(const torch::Tensor& bev);  // B x C x X x Y

  torch::nn::Conv2d reduce{nullptr};
  torch::nn::ModuleList branches{nullptr};
  torch::nn::Conv2d pooled_branch{nullptr};
  torch::nn::Conv2d expand{nullptr};
};
TORCH_MODULE(BevAspp);

// Every Z slice through `attn` with shared weights.
torch::Tensor local_path(const torch::Tensor& volume, WindowAttention& attn,
                         bool shifted);

// Height-pooled BEV, optionally through `attn` (pass an empty holder to skip)
// and `aspp`. Returns B x C x X x Y.
torch::Tensor global_path(const torch::Tensor& volume, WindowAttention* attn,
                          BevAspp* aspp, bool shifted);

// F_local + g * unsqueeze(F_global), g = sigmoid(gate(F_local)) per voxel,
// or g = 1 without the soft sum.
torch::Tensor fuse_dual_path(const torch::Tensor& f_local,
                             const torch::Tensor& f_global,
                             torch::nn::Linear& gate, bool use_soft_sum);

enum class PathMode { kDual, kLocalOnly, kGlobalOnly };

class DualPathBlockImpl : public torch::nn::Module {
 public:
  DualPathBlockImpl(const DualPathConfig& config, bool shifted,
                    PathMode mode = PathMode::kDual);
  torch::Tensor forward(const torch::Tensor& volume);
  torch::Tensor local(const torch::Tensor& volume);
  torch::Tensor global(const torch::Tensor& volume);

  const DualPathConfig& config() const { return config_; }
  bool shifted() const { return shifted_; }

  WindowAttention attn{nullptr};
  BevAspp aspp{nullptr};
  torch::nn::Linear gate{nullptr};
  torch::nn::LayerNorm out_norm{nullptr};
  torch::nn::Linear out_proj{nullptr};

 private:
  DualPathConfig config_;
  bool shifted_;
  PathMode mode_;
};
TORCH_MODULE(DualPathBlock);

torch::Tensor dual_path_block(const torch::Tensor& volume, DualPathBlock& block);

// Residual 3D basic block, the plain convolutional baseline.
class Conv3dBlockImpl : public torch::nn::Module {
 public:
  explicit Conv3dBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& volume);

  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(Conv3dBlock);

// 3x3x3 conv with X/Y stride, GroupNorm, ReLU; the inter-block locality layer and the
// inter-stage downsampler.
class ConvGnReluImpl : public torch::nn::Module {
 public:
  ConvGnReluImpl(int in, int out, std::int64_t stride_xy);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv3d conv{nullptr};
  torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(ConvGnRelu);

class VoxelEncoderImpl : public torch::nn::Module {
 public:
  explicit VoxelEncoderImpl(const EncoderConfig& config);
  // Returns one volume per stage, finest first.
  std::vector<torch::Tensor> forward(const torch::Tensor& volume);
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  torch::nn::AnyModule input_proj_;
  bool has_input_proj_ = false;
  std::vector<std::vector<torch::nn::AnyModule>> stage_layers_;
  std::vector<ConvGnRelu> downsamplers_;
};
TORCH_MODULE(VoxelEncoder);

// VoxelGrid entry point; level metas follow the X/Y downsampling.
std::vector<VoxelGrid> encoder_forward(const VoxelGrid& volume,
                                       VoxelEncoder& encoder);

std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace voxocc
