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

// Multi-scale deformable self-attention over a voxel pyramid. Every voxel of
// every level is a query; it samples P points per head from each level around
// its own normalized position and mixes them with softmax weights.

#pragma once

#include <vector>

#include "voxocc/core.hpp"

namespace voxocc {

struct DeformAttnConfig {
  int embed_channels = 48;  // C_e
  int mask_channels = 48;   // C_E of the per-voxel mask embedding
  int layers = 2;
  int heads = 4;
  int points = 4;  // per level per head
  int ffn_ratio = 4;

  void validate() const;
};

// Normalized [0,1]^3 voxel centers of a level, (X*Y*Z) x 3 in flat order.
torch::Tensor normalized_reference_points(const Index3& resolution,
                                          torch::ScalarType dtype);

class DeformAttn3dLayerImpl : public torch::nn::Module {
 public:
  DeformAttn3dLayerImpl(const DeformAttnConfig& config, int levels);

  // F + sum_j W_j * sample(level_j, ref + offset_j), per level, without the
  // feed-forward tail. Levels are B x C_e x X_i x Y_i x Z_i.
  std::vector<torch::Tensor> attention_update(
      const std::vector<torch::Tensor>& levels);
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& levels);

  // Softmaxed attention weights for the concatenated queries,
  // B x N x heads x (levels * points).
  torch::Tensor attention_probs(const torch::Tensor& queries);

  int levels() const { return levels_; }
  const DeformAttnConfig& config() const { return config_; }

  torch::nn::Linear value_proj{nullptr}, sampling_offsets{nullptr},
      attention_weights{nullptr}, output_proj{nullptr};
  torch::nn::LayerNorm ffn_norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::Tensor level_embed;  // levels x C_e

 private:
  DeformAttnConfig config_;
  int levels_;
};
TORCH_MODULE(DeformAttn3dLayer);

std::vector<torch::Tensor> deform_attn_3d_layer(
    const std::vector<torch::Tensor>& levels, DeformAttn3dLayer& layer);

struct PixelDecoderOutput {
  std::vector<torch::Tensor> levels;  // enhanced, finest first
  torch::Tensor mask_features;        // E_voxel, B x C_E x X_0 x Y_0 x Z_0
};

class PixelDecoderImpl : public torch::nn::Module {
 public:
  PixelDecoderImpl(const DeformAttnConfig& config,
                   const std::vector<int>& level_channels);
  // Levels finest first, B x C_i x X_i x Y_i x Z_i.
  PixelDecoderOutput forward(const std::vector<torch::Tensor>& levels);
  const DeformAttnConfig& config() const { return config_; }

  std::vector<torch::nn::Conv3d> input_proj;
  std::vector<torch::nn::GroupNorm> input_norm;
  std::vector<DeformAttn3dLayer> layers;
  torch::nn::Conv3d mask_proj{nullptr};

 private:
  DeformAttnConfig config_;
};
TORCH_MODULE(PixelDecoder);

PixelDecoderOutput pixel_decoder_forward(const std::vector<torch::Tensor>& levels,
                                         PixelDecoder& decoder);

}  // namespace voxocc
