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

#include "voxocc/occ_decoder.hpp"

#include <cmath>
#include <limits>

namespace voxocc {

namespace nn = torch::nn;

std::string to_string(PoolingMode m) {
  return m == PoolingMode::kMax ? "max" : "trilinear";
}

PoolingMode pooling_mode_from_string(const std::string& name) {
  if (name == "max") return PoolingMode::kMax;
  if (name == "trilinear") return PoolingMode::kTrilinear;
  throw ArgumentError("unknown pooling mode '" + name + "' (max | trilinear)");
}

void OccDecoderConfig::validate() const {
  if (num_classes < 2) throw ArgumentError("decoder needs >= 2 classes");
  if (queries < 1) throw ArgumentError("decoder needs >= 1 query");
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw ArgumentError("decoder channels must be a positive multiple of heads");
  }
  if (mask_channels < 1) throw ArgumentError("mask_channels must be >= 1");
  if (layers < 0) throw ArgumentError("decoder layers must be >= 0");
  if (ffn_ratio < 1) throw ArgumentError("ffn_ratio must be >= 1");
}

MaskPrediction mask_prediction_from(const torch::Tensor& class_logits,
                                    const torch::Tensor& mask_embed,
                                    const torch::Tensor& voxel_embed) {
  if (mask_embed.dim() != 3 || voxel_embed.dim() != 5 ||
      mask_embed.size(2) != voxel_embed.size(1) ||
      mask_embed.size(0) != voxel_embed.size(0)) {
    throw ArgumentError("mask embedding and voxel embedding widths disagree");
  }
  MaskPrediction p;
  p.class_logits = class_logits;
  p.class_probs = torch::softmax(class_logits, -1);
  p.mask_logits = torch::einsum("bqc,bcxyz->bqxyz", {mask_embed, voxel_embed});
  p.mask_probs = torch::sigmoid(p.mask_logits);
  return p;
}

torch::Tensor make_attention_mask(const torch::Tensor& mask_probs,
                                  const Index3& target_resolution, PoolingMode mode) {
  if (mask_probs.dim() != 5) throw ArgumentError("mask_probs must be B x N_q x X x Y x Z");
  Index3 factor;
  for (int a = 0; a < 3; ++a) {
    const auto n = mask_probs.size(a + 2);
    if (target_resolution[a] < 1 || n % target_resolution[a] != 0) {
      throw ArgumentError("attention mask pooling factor is not an integer: " + std::to_string(n) +
                          " -> " + std::to_string(target_resolution[a]));
    }
    factor[a] = n / target_resolution[a];
  }
  torch::NoGradGuard ng;
  const auto b = mask_probs.size(0), q = mask_probs.size(1);
  const auto flat = mask_probs.detach().reshape(
      {b * q, mask_probs.size(2), mask_probs.size(3), mask_probs.size(4)});
  const auto pooled = mode == PoolingMode::kMax ? max_pool_3d(flat, factor)
                                                : downsample_trilinear(flat, factor);
  const auto blocked = torch::full({}, -std::numeric_limits<double>::infinity(),
                                   pooled.options());
  return torch::where(pooled >= kMaskThreshold, torch::zeros({}, pooled.options()), blocked)
      .view({b, q, -1});
}

torch::Tensor sine_position_encoding(const Index3& resolution, int channels,
                                     torch::ScalarType dtype) {
  const auto opts = torch::TensorOptions().dtype(dtype);
  const std::int64_t n = resolution[0] * resolution[1] * resolution[2];
  const int freqs = channels / 6;
  auto out = torch::zeros({n, channels}, opts);
  if (freqs == 0) return out;
  std::vector<torch::Tensor> axes;
  for (int a = 0; a < 3; ++a) {
    axes.push_back((torch::arange(resolution[a], opts) + 0.5) / static_cast<double>(resolution[a]));
  }
  auto mesh = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
  const auto omega = torch::pow(10000.0, -torch::arange(freqs, opts) / static_cast<double>(freqs));
  std::vector<torch::Tensor> parts;
  for (int a = 0; a < 3; ++a) {
    const auto arg = mesh[a].reshape({n, 1}) * (2.0 * M_PI) * omega.view({1, freqs});
    parts.push_back(torch::sin(arg));
    parts.push_back(torch::cos(arg));
  }
  out.slice(1, 0, 6 * freqs).copy_(torch::cat(parts, 1));
  return out;
}

// ---------------------------------------------------------------------------

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int channels, int heads)
    : channels_(channels), heads_(heads) {
  if (channels % heads != 0) throw ArgumentError("attention channels % heads != 0");
  q_proj = register_module("q_proj", nn::Linear(channels, channels));
  k_proj = register_module("k_proj", nn::Linear(channels, channels));
  v_proj = register_module("v_proj", nn::Linear(channels, channels));
  out_proj = register_module("out_proj", nn::Linear(channels, channels));
}

torch::Tensor MultiHeadAttentionImpl::scores(const torch::Tensor& q, const torch::Tensor& k,
                                             const torch::Tensor& mask) {
  const auto b = q.size(0), l = q.size(1), s = k.size(1);
  const auto d = channels_ / heads_;
  auto qh = q_proj->forward(q).view({b, l, heads_, d}).transpose(1, 2);
  auto kh = k_proj->forward(k).view({b, s, heads_, d}).transpose(1, 2);
  auto sc = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(d));
  if (mask.defined()) {
    if (mask.dim() != 3 || mask.size(0) != b || mask.size(1) != l || mask.size(2) != s) {
      throw ArgumentError("attention mask must be B x L x S");
    }
    sc = sc + mask.unsqueeze(1).to(sc.scalar_type());
  }
  return torch::softmax(sc, -1);
}

torch::Tensor MultiHeadAttentionImpl::attention_weights(const torch::Tensor& q,
                                                        const torch::Tensor& k,
                                                        const torch::Tensor& mask) {
  return scores(q, k, mask).mean(1);
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& k,
                                              const torch::Tensor& v,
                                              const torch::Tensor& mask) {
  const auto b = q.size(0), l = q.size(1), s = v.size(1);
  const auto d = channels_ / heads_;
  auto vh = v_proj->forward(v).view({b, s, heads_, d}).transpose(1, 2);
  auto out = torch::matmul(scores(q, k, mask), vh).transpose(1, 2).reshape({b, l, channels_});
  return out_proj->forward(out);
}

torch::Tensor fallback_blocked_rows(const torch::Tensor& mask) {
  const auto all_blocked = torch::isneginf(mask).all(-1, true);
  return torch::where(all_blocked, torch::zeros({}, mask.options()), mask);
}

MaskedAttentionLayerImpl::MaskedAttentionLayerImpl(int channels, int heads, int ffn_ratio) {
  cross_attn = register_module("cross_attn", MultiHeadAttention(channels, heads));
  self_attn = register_module("self_attn", MultiHeadAttention(channels, heads));
  cross_norm = register_module("cross_norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
  self_norm = register_module("self_norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
  ffn_norm = register_module("ffn_norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
  fc1 = register_module("fc1", nn::Linear(channels, ffn_ratio * channels));
  fc2 = register_module("fc2", nn::Linear(ffn_ratio * channels, channels));
}

torch::Tensor MaskedAttentionLayerImpl::cross_attend(const torch::Tensor& queries,
                                                     const torch::Tensor& query_pos,
                                                     const torch::Tensor& keys,
                                                     const torch::Tensor& key_pos,
                                                     const torch::Tensor& mask) {
  if (mask.defined() && (mask.dim() != 3 || mask.size(0) != queries.size(0) ||
                         mask.size(1) != queries.size(1) || mask.size(2) != keys.size(1))) {
    throw ArgumentError("attention mask must be B x N_q x (level voxels)");
  }
  const auto m = mask.defined() ? fallback_blocked_rows(mask) : mask;
  return cross_attn->forward(queries + query_pos, keys + key_pos, keys, m);
}

torch::Tensor MaskedAttentionLayerImpl::forward(const torch::Tensor& queries,
                                                const torch::Tensor& query_pos,
                                                const torch::Tensor& keys,
                                                const torch::Tensor& key_pos,
                                                const torch::Tensor& mask) {
  auto q = cross_norm->forward(queries + cross_attend(queries, query_pos, keys, key_pos, mask));
  auto qp = q + query_pos;
  q = self_norm->forward(q + self_attn->forward(qp, qp, q));
  return ffn_norm->forward(q + fc2->forward(torch::relu(fc1->forward(q))));
}

PredictionHeadImpl::PredictionHeadImpl(int channels, int num_classes, int mask_channels) {
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
  class_head = register_module("class_head", nn::Linear(channels, num_classes + 1));
  mask_mlp = register_module(
      "mask_mlp", nn::Sequential(nn::Linear(channels, channels), nn::ReLU(),
                                 nn::Linear(channels, channels), nn::ReLU(),
                                 nn::Linear(channels, mask_channels)));
}

MaskPrediction PredictionHeadImpl::forward(const torch::Tensor& queries,
                                           const torch::Tensor& voxel_embed) {
  const auto x = norm->forward(queries);
  return mask_prediction_from(class_head->forward(x), mask_mlp->forward(x), voxel_embed);
}

MaskPrediction predict_class_and_mask(const torch::Tensor& queries,
                                      const torch::Tensor& voxel_embed, PredictionHead& head) {
  return head->forward(queries, voxel_embed);
}

// ---------------------------------------------------------------------------

OccDecoderImpl::OccDecoderImpl(const OccDecoderConfig& config, int usable_levels)
    : config_(config), usable_levels_(usable_levels) {
  config.validate();
  if (usable_levels < 1 && config.layers > 0) {
    throw ArgumentError("decoder layers need at least one feature level");
  }
  const int c = config.channels;
  query_feat = register_parameter("query_feat", torch::randn({config.queries, c}));
  query_pos = register_parameter("query_pos", torch::randn({config.queries, c}));
  level_embed = register_parameter("level_embed", torch::randn({std::max(usable_levels, 1), c}));
  for (int l = 0; l < config.layers; ++l) {
    layers.push_back(register_module("layer" + std::to_string(l),
                                     MaskedAttentionLayer(c, config.heads, config.ffn_ratio)));
  }
  head = register_module("head", PredictionHead(c, config.num_classes, config.mask_channels));
}

DecoderOutput OccDecoderImpl::forward(const std::vector<torch::Tensor>& levels,
                                      const torch::Tensor& voxel_embed) {
  if (static_cast<int>(levels.size()) != usable_levels_ && config_.layers > 0) {
    throw ArgumentError("decoder expects " + std::to_string(usable_levels_) + " levels, got " +
                        std::to_string(levels.size()));
  }
  if (voxel_embed.dim() != 5) throw ArgumentError("voxel_embed must be B x C_E x X x Y x Z");
  const auto b = voxel_embed.size(0);
  const auto dtype = voxel_embed.scalar_type();
  auto q = query_feat.unsqueeze(0).expand({b, -1, -1}).to(dtype);
  const auto qpos = query_pos.unsqueeze(0).expand({b, -1, -1}).to(dtype);

  std::vector<torch::Tensor> keys, key_pos;
  std::vector<Index3> res;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    if (lv.dim() != 5 || lv.size(0) != b || lv.size(1) != config_.channels) {
      throw ArgumentError("decoder level " + std::to_string(l) + " must be B x C x X x Y x Z");
    }
    res.push_back({lv.size(2), lv.size(3), lv.size(4)});
    keys.push_back(lv.flatten(2).transpose(1, 2));
    key_pos.push_back((sine_position_encoding(res.back(), config_.channels, dtype) +
                       level_embed[static_cast<std::int64_t>(l)].to(dtype))
                          .unsqueeze(0));
  }

  DecoderOutput out;
  out.per_layer.push_back(head->forward(q, voxel_embed));
  for (int l = 0; l < config_.layers; ++l) {
    const int lvl = l % usable_levels_;
    const auto mask = make_attention_mask(out.per_layer.back().mask_probs, res[lvl], config_.pooling);
    q = layers[l]->forward(q, qpos, keys[lvl], key_pos[lvl].expand({b, -1, -1}), mask);
    out.per_layer.push_back(head->forward(q, voxel_embed));
    out.level_schedule.push_back(lvl);
  }
  out.final = out.per_layer.back();
  return out;
}

DecoderOutput decoder_forward(const std::vector<torch::Tensor>& levels,
                              const torch::Tensor& voxel_embed, OccDecoder& decoder) {
  return decoder->forward(levels, voxel_embed);
}

Occupancy compose_occupancy(const MaskPrediction& pred) {
  const auto nc = pred.class_probs.size(-1) - 1;
  Occupancy occ;
  occ.scores = torch::einsum("bqc,bqxyz->bcxyz",
                             {pred.class_probs.slice(-1, 0, nc), pred.mask_probs});
  occ.labels = occ.scores.argmax(1).to(torch::kUInt8);
  return occ;
}

UpsampledOccupancy upsample_prediction(const VoxelGrid& scores, int factor) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
  const Index3 f{factor, factor, factor};
  UpsampledOccupancy out;
  out.scores = VoxelGrid(scores.meta.upsampled(f), upsample_trilinear(scores.data, f));
  out.labels.meta = out.scores.meta;
  out.labels.labels = out.scores.data.argmax(0).to(torch::kUInt8);
  return out;
}

}  // namespace voxocc
