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

#include "voxocc/pixel_decoder.hpp"

#include <numeric>

namespace voxocc {

namespace nn = torch::nn;

void DeformAttnConfig::validate() const {
  if (embed_channels < 1 || heads < 1 || embed_channels % heads != 0) {
    throw ArgumentError("embed_channels must be a positive multiple of heads");
  }
  if (points < 1) throw ArgumentError("points per level must be >= 1");
  if (layers < 0) throw ArgumentError("deformable layers must be >= 0");
  if (mask_channels < 1) throw ArgumentError("mask_channels must be >= 1");
  if (ffn_ratio < 1) throw ArgumentError("ffn_ratio must be >= 1");
}

torch::Tensor normalized_reference_points(const Index3& resolution,
                                          torch::ScalarType dtype) {
  const auto opts = torch::TensorOptions().dtype(dtype);
  std::vector<torch::Tensor> axes;
  for (int a = 0; a < 3; ++a) {
    axes.push_back((torch::arange(resolution[a], opts) + 0.5) /
                   static_cast<double>(resolution[a]));
  }
  auto grids = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
  return torch::stack({grids[0].reshape(-1), grids[1].reshape(-1),
                       grids[2].reshape(-1)},
                      1);
}

DeformAttn3dLayerImpl::DeformAttn3dLayerImpl(const DeformAttnConfig& config,
                                             int levels)
    : config_(config), levels_(levels) {
  config.validate();
  if (levels < 1) throw ArgumentError("deformable attention needs >= 1 level");
  const int c = config.embed_channels;
  const int samples = config.heads * levels * config.points;
  value_proj = register_module("value_proj", nn::Linear(c, c));
  sampling_offsets = register_module("sampling_offsets", nn::Linear(c, samples * 3));
  attention_weights = register_module("attention_weights", nn::Linear(c, samples));
  output_proj = register_module("output_proj", nn::Linear(c, c));
  ffn_norm = register_module("ffn_norm", nn::LayerNorm(nn::LayerNormOptions({c})));
  fc1 = register_module("fc1", nn::Linear(c, config.ffn_ratio * c));
  fc2 = register_module("fc2", nn::Linear(config.ffn_ratio * c, c));
  level_embed = register_parameter("level_embed", torch::randn({levels, c}) * 0.02);
  torch::NoGradGuard ng;
  sampling_offsets->weight.zero_();
  sampling_offsets->bias.zero_();
  attention_weights->weight.normal_(0.0, 0.01);
  attention_weights->bias.zero_();
}

torch::Tensor DeformAttn3dLayerImpl::attention_probs(const torch::Tensor& queries) {
  const auto b = queries.size(0), n = queries.size(1);
  return torch::softmax(
      attention_weights->forward(queries).view(
          {b, n, config_.heads, levels_ * config_.points}),
      -1);
}

namespace {

struct Flattened {
  torch::Tensor tokens;  // B x N x C
  std::vector<std::int64_t> counts;
  std::vector<Index3> resolutions;
};

Flattened flatten_levels(const std::vector<torch::Tensor>& levels, int channels) {
  Flattened f;
  std::vector<torch::Tensor> parts;
  for (const auto& l : levels) {
    if (l.dim() != 5 || l.size(1) != channels || l.size(0) != levels[0].size(0)) {
      throw ArgumentError("deformable attention levels must be B x " +
                          std::to_string(channels) + " x X x Y x Z");
    }
    f.resolutions.push_back({l.size(2), l.size(3), l.size(4)});
    f.counts.push_back(l.size(2) * l.size(3) * l.size(4));
    parts.push_back(l.flatten(2).transpose(1, 2));
  }
  f.tokens = torch::cat(parts, 1);
  return f;
}

std::vector<torch::Tensor> unflatten_levels(const torch::Tensor& tokens,
                                            const Flattened& f) {
  std::vector<torch::Tensor> out;
  const auto b = tokens.size(0), c = tokens.size(2);
  auto parts = tokens.split_with_sizes(f.counts, 1);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& r = f.resolutions[i];
    out.push_back(parts[i].transpose(1, 2).reshape({b, c, r[0], r[1], r[2]}));
  }
  return out;
}

torch::Tensor deform_update_tokens(DeformAttn3dLayerImpl& layer, const Flattened& f) {
  const auto& cfg = layer.config();
  const int heads = cfg.heads, points = cfg.points, levels = layer.levels();
  const auto& x = f.tokens;
  const auto b = x.size(0), n = x.size(1), c = x.size(2);
  const auto d = c / heads;

  std::vector<torch::Tensor> embeds, refs;
  for (int i = 0; i < levels; ++i) {
    embeds.push_back(layer.level_embed[i].expand({f.counts[i], c}));
    refs.push_back(normalized_reference_points(f.resolutions[i], x.scalar_type()));
  }
  const auto queries = x + torch::cat(embeds, 0).unsqueeze(0).to(x.scalar_type());
  const auto ref = torch::cat(refs, 0).view({1, n, 1, 1, 3});

  const auto values = layer.value_proj->forward(x).split_with_sizes(f.counts, 1);
  const auto offsets =
      layer.sampling_offsets->forward(queries).view({b, n, heads, levels, points, 3});
  const auto probs = layer.attention_probs(queries).view({b, n, heads, levels, points});

  auto acc = torch::zeros({b, heads, n, d}, x.options());
  for (int j = 0; j < levels; ++j) {
    const auto& r = f.resolutions[j];
    const auto value = values[j]
                           .view({b, f.counts[j], heads, d})
                           .permute({0, 2, 3, 1})
                           .reshape({b * heads, d, r[0], r[1], r[2]});
    const auto scale = torch::tensor({static_cast<double>(r[0]), static_cast<double>(r[1]),
                                      static_cast<double>(r[2])},
                                     x.options());
    const auto loc = (ref + offsets.select(3, j)) * scale - 0.5;  // B x N x H x P x 3
    const auto pts = loc.permute({0, 2, 1, 3, 4}).reshape({b * heads, n * points, 3});
    const auto sampled =
        trilinear_sample_batched(value, pts, Padding::kZeros).view({b, heads, n, points, d});
    const auto w = probs.select(3, j).permute({0, 2, 1, 3}).unsqueeze(-1);
    acc = acc + (sampled * w).sum(3);
  }
  const auto mixed = acc.permute({0, 2, 1, 3}).reshape({b, n, c});
  return x + layer.output_proj->forward(mixed);
}

}  // namespace

std::vector<torch::Tensor> DeformAttn3dLayerImpl::attention_update(
    const std::vector<torch::Tensor>& levels) {
  if (levels.empty()) throw ArgumentError("deformable attention: empty level list");
  if (static_cast<int>(levels.size()) != levels_) {
    throw ArgumentError("deformable attention built for " + std::to_string(levels_) +
                        " levels, got " + std::to_string(levels.size()));
  }
  const auto f = flatten_levels(levels, config_.embed_channels);
  return unflatten_levels(deform_update_tokens(*this, f), f);
}

std::vector<torch::Tensor> DeformAttn3dLayerImpl::forward(
    const std::vector<torch::Tensor>& levels) {
  if (levels.empty()) throw ArgumentError("deformable attention: empty level list");
  if (static_cast<int>(levels.size()) != levels_) {
    throw ArgumentError("deformable attention built for " + std::to_string(levels_) +
                        " levels, got " + std::to_string(levels.size()));
  }
  const auto f = flatten_levels(levels, config_.embed_channels);
  auto y = deform_update_tokens(*this, f);
  y = y + fc2->forward(torch::relu(fc1->forward(ffn_norm->forward(y))));
  return unflatten_levels(y, f);
}

std::vector<torch::Tensor> deform_attn_3d_layer(const std::vector<torch::Tensor>& levels,
                                                DeformAttn3dLayer& layer) {
  return layer->forward(levels);
}

// ---------------------------------------------------------------------------

PixelDecoderImpl::PixelDecoderImpl(const DeformAttnConfig& config,
                                   const std::vector<int>& level_channels)
    : config_(config) {
  config.validate();
  if (level_channels.empty()) throw ArgumentError("pixel decoder needs >= 1 level");
  const int ce = config.embed_channels;
  for (std::size_t i = 0; i < level_channels.size(); ++i) {
    input_proj.push_back(register_module(
        "input_proj" + std::to_string(i),
        nn::Conv3d(nn::Conv3dOptions(level_channels[i], ce, 1))));
    input_norm.push_back(register_module("input_norm" + std::to_string(i),
                                         nn::GroupNorm(std::gcd(ce, 8), ce)));
  }
  for (int l = 0; l < config.layers; ++l) {
    layers.push_back(register_module(
        "layer" + std::to_string(l),
        DeformAttn3dLayer(config, static_cast<int>(level_channels.size()))));
  }
  mask_proj = register_module(
      "mask_proj", nn::Conv3d(nn::Conv3dOptions(ce, config.mask_channels, 1)));
}

PixelDecoderOutput PixelDecoderImpl::forward(const std::vector<torch::Tensor>& levels) {
  if (levels.size() != input_proj.size()) {
    throw ArgumentError("pixel decoder expects " + std::to_string(input_proj.size()) +
                        " levels");
  }
  std::vector<torch::Tensor> x;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    x.push_back(input_norm[i]->forward(input_proj[i]->forward(levels[i])));
  }
  for (auto& layer : layers) x = layer->forward(x);
  PixelDecoderOutput out;
  out.mask_features = mask_proj->forward(x.front());
  out.levels = std::move(x);
  return out;
}

PixelDecoderOutput pixel_decoder_forward(const std::vector<torch::Tensor>& levels,
                                         PixelDecoder& decoder) {
  return decoder->forward(levels);
}

}  // namespace voxocc
