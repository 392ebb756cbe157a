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

// Query-based mask-classification decoder. Learned queries cross-attend to
// one pyramid level per layer under a mask derived from their previous
// prediction, exchange context by self-attention, and are read out as a
// class distribution plus a 3D mask over the per-voxel embeddings.
//
// Batched layout: queries B x N_q x C, masks B x N_q x X x Y x Z.

#pragma once

#include <string>
#include <vector>

#include "voxocc/core.hpp"

namespace voxocc {

enum class PoolingMode { kMax, kTrilinear };

std::string to_string(PoolingMode m);
PoolingMode pooling_mode_from_string(const std::string& name);

inline constexpr double kMaskThreshold = 0.5;

struct OccDecoderConfig {
  int num_classes = 8;  // N_c, including free
  int queries = 16;     // N_q
  int channels = 48;    // query and key width, C_e
  int mask_channels = 48;
  int heads = 4;
  int layers = 3;
  int ffn_ratio = 4;
  PoolingMode pooling = PoolingMode::kMax;

  void validate() const;
};

struct MaskPrediction {
  torch::Tensor class_logits;  // B x N_q x (N_c + 1), last column = no object
  torch::Tensor class_probs;
  torch::Tensor mask_logits;   // B x N_q x X x Y x Z
  torch::Tensor mask_probs;
};

// Mask logits <E_mask_i, E_voxel[:, x, y, z]> and sigmoid probabilities.
MaskPrediction mask_prediction_from(const torch::Tensor& class_logits,
                                    const torch::Tensor& mask_embed,
                                    const torch::Tensor& voxel_embed);

// Additive attention mask B x N_q x (X' Y' Z'): 0 where the pooled mask
// probability is >= 0.5, -inf elsewhere. Pooling factors must be integers.
torch::Tensor make_attention_mask(const torch::Tensor& mask_probs,
                                  const Index3& target_resolution,
                                  PoolingMode mode);

// Fixed sine/cosine features of normalized voxel centers, N x channels.
// Each axis gets channels / 6 frequencies; leftover channels stay zero.
torch::Tensor sine_position_encoding(const Index3& resolution, int channels,
                                     torch::ScalarType dtype);

class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int channels, int heads);
  // q: B x L x C, k/v: B x S x C, mask: B x L x S additive (optional).
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k,
                        const torch::Tensor& v, const torch::Tensor& mask = {});
  // Softmax weights averaged over heads, B x L x S.
  torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k,
                                  const torch::Tensor& mask = {});

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr},
      out_proj{nullptr};

 private:
  torch::Tensor scores(const torch::Tensor& q, const torch::Tensor& k,
                       const torch::Tensor& mask);
  int channels_, heads_;
};
TORCH_MODULE(MultiHeadAttention);

// Masked cross-attention, query self-attention and feed-forward, each with a
// residual and a post-norm.
class MaskedAttentionLayerImpl : public torch::nn::Module {
 public:
  MaskedAttentionLayerImpl(int channels, int heads, int ffn_ratio);

  // Rows of `mask` that block every key are reset to all-zeros first.
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& query_pos,
                        const torch::Tensor& keys, const torch::Tensor& key_pos,
                        const torch::Tensor& mask);
  // Cross-attention output before residual and norm.
  torch::Tensor cross_attend(const torch::Tensor& queries, const torch::Tensor& query_pos,
                             const torch::Tensor& keys, const torch::Tensor& key_pos,
                             const torch::Tensor& mask);

  MultiHeadAttention cross_attn{nullptr}, self_attn{nullptr};
  torch::nn::LayerNorm cross_norm{nullptr}, self_norm{nullptr}, ffn_norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(MaskedAttentionLayer);

torch::Tensor fallback_blocked_rows(const torch::Tensor& mask);

// Layer norm, class linear head, 3-layer mask MLP.
class PredictionHeadImpl : public torch::nn::Module {
 public:
  PredictionHeadImpl(int channels, int num_classes, int mask_channels);
  MaskPrediction forward(const torch::Tensor& queries, const torch::Tensor& voxel_embed);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear class_head{nullptr};
  torch::nn::Sequential mask_mlp{nullptr};
};
TORCH_MODULE(PredictionHead);

MaskPrediction predict_class_and_mask(const torch::Tensor& queries,
                                      const torch::Tensor& voxel_embed,
                                      PredictionHead& head);

struct DecoderOutput {
  MaskPrediction final;
  std::vector<MaskPrediction> per_layer;  // layers + 1, initial queries first
  std::vector<int> level_schedule;        // level index used by each layer
};

class OccDecoderImpl : public torch::nn::Module {
 public:
  OccDecoderImpl(const OccDecoderConfig& config, int usable_levels);
  // `levels` coarse to fine (the finest pyramid level is only used through
  // `voxel_embed`), each B x C x X_l x Y_l x Z_l.
  DecoderOutput forward(const std::vector<torch::Tensor>& levels,
                        const torch::Tensor& voxel_embed);
  const OccDecoderConfig& config() const { return config_; }

  torch::Tensor query_feat, query_pos;  // N_q x C
  torch::Tensor level_embed;            // usable_levels x C
  std::vector<MaskedAttentionLayer> layers;
  PredictionHead head{nullptr};

 private:
  OccDecoderConfig config_;
  int usable_levels_;
};
TORCH_MODULE(OccDecoder);

DecoderOutput decoder_forward(const std::vector<torch::Tensor>& levels,
                              const torch::Tensor& voxel_embed, OccDecoder& decoder);

struct Occupancy {
  torch::Tensor scores;  // B x N_c x X x Y x Z
  torch::Tensor labels;  // B x X x Y x Z, uint8
};

// Y[c] = sum_i class_probs[i, c] * mask_probs[i], no-object column dropped.
Occupancy compose_occupancy(const MaskPrediction& pred);

// Trilinear upsampling of per-class scores (N_c x X x Y x Z), then argmax.
struct UpsampledOccupancy {
  VoxelGrid scores;
  LabelGrid labels;
};
UpsampledOccupancy upsample_prediction(const VoxelGrid& scores, int factor);

}  // namespace voxocc
