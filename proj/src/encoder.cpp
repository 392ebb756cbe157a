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

#include "voxocc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace voxocc {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

int group_count(int channels) { return std::gcd(channels, 8); }

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct WindowLayout {
  std::int64_t win_h, win_w;      // effective window along each axis
  std::int64_t shift_h, shift_w;  // cyclic shift
  std::int64_t pad_h, pad_w;      // padded map size

  std::int64_t windows() const { return (pad_h / win_h) * (pad_w / win_w); }
  std::int64_t tokens() const { return win_h * win_w; }
  bool needs_mask(std::int64_t h, std::int64_t w) const {
    return shift_h != 0 || shift_w != 0 || pad_h != h || pad_w != w;
  }
};

WindowLayout window_layout(std::int64_t h, std::int64_t w, int window,
                           bool shifted) {
  WindowLayout l;
  l.win_h = std::min<std::int64_t>(window, h);
  l.win_w = std::min<std::int64_t>(window, w);
  l.shift_h = shifted && h > window ? window / 2 : 0;
  l.shift_w = shifted && w > window ? window / 2 : 0;
  l.pad_h = (h + l.win_h - 1) / l.win_h * l.win_h;
  l.pad_w = (w + l.win_w - 1) / l.win_w * l.win_w;
  return l;
}

// Additive mask (nW x N x N) in the rolled, padded frame. A pair may attend
// when both tokens fall in the same shifted region and the key is a real
// pixel; every token may always attend to itself.
torch::Tensor window_mask(const WindowLayout& l, std::int64_t h,
                          std::int64_t w, torch::ScalarType dtype) {
  const std::int64_t nh = l.pad_h / l.win_h;
  const std::int64_t nw = l.pad_w / l.win_w;
  const std::int64_t n = l.tokens();
  std::vector<std::int64_t> gr(l.pad_h), gc(l.pad_w);
  std::vector<bool> vr(l.pad_h), vc(l.pad_w);
  for (std::int64_t i = 0; i < l.pad_h; ++i) {
    const std::int64_t p = (i + l.shift_h) % l.pad_h;
    gr[i] = floor_div(p - l.shift_h, l.win_h);
    vr[i] = p < h;
  }
  for (std::int64_t j = 0; j < l.pad_w; ++j) {
    const std::int64_t p = (j + l.shift_w) % l.pad_w;
    gc[j] = floor_div(p - l.shift_w, l.win_w);
    vc[j] = p < w;
  }
  auto flat = torch::zeros({nh * nw, n, n}, torch::TensorOptions().dtype(torch::kFloat64));
  auto acc = flat.accessor<double, 3>();
  const double blocked = -std::numeric_limits<double>::infinity();
  for (std::int64_t a = 0; a < nh; ++a) {
    for (std::int64_t b = 0; b < nw; ++b) {
      const std::int64_t win = a * nw + b;
      for (std::int64_t q = 0; q < n; ++q) {
        const std::int64_t qi = a * l.win_h + q / l.win_w;
        const std::int64_t qj = b * l.win_w + q % l.win_w;
        for (std::int64_t k = 0; k < n; ++k) {
          const std::int64_t ki = a * l.win_h + k / l.win_w;
          const std::int64_t kj = b * l.win_w + k % l.win_w;
          const bool same = gr[qi] == gr[ki] && gc[qj] == gc[kj];
          const bool ok = (same && vr[ki] && vc[kj]) || q == k;
          if (!ok) acc[win][q][k] = blocked;
        }
      }
    }
  }
  return flat.to(dtype);
}

}  // namespace

void DualPathConfig::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw ArgumentError("dual-path channels must be a positive multiple of heads");
  }
  if (window_size < 1) throw ArgumentError("window_size must be >= 1");
  if (aspp_bottleneck_ratio < 1 || channels / aspp_bottleneck_ratio < 1) {
    throw ArgumentError("aspp_bottleneck_ratio must be in [1, channels]");
  }
  if (mlp_ratio < 1) throw ArgumentError("mlp_ratio must be >= 1");
  if (aspp_dilations.empty()) throw ArgumentError("aspp_dilations is empty");
  for (int d : aspp_dilations) {
    if (d < 1) throw ArgumentError("aspp dilations must be >= 1");
  }
}

std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::kDualPath: return "dual_path";
    case EncoderVariant::kLocalOnly: return "local_only";
    case EncoderVariant::kGlobalOnly: return "global_only";
    case EncoderVariant::kConv3d: return "conv3d";
  }
  return "unknown";
}

EncoderVariant encoder_variant_from_string(const std::string& name) {
  for (auto v : {EncoderVariant::kDualPath, EncoderVariant::kLocalOnly,
                 EncoderVariant::kGlobalOnly, EncoderVariant::kConv3d}) {
    if (to_string(v) == name) return v;
  }
  throw ArgumentError("unknown encoder variant '" + name + "'");
}

void EncoderConfig::validate() const {
  if (stages < 1) throw ArgumentError("encoder stages must be >= 1");
  if (blocks_per_stage < 1) throw ArgumentError("blocks_per_stage must be >= 1");
  if (in_channels < 1 || base_channels < 1) {
    throw ArgumentError("encoder channel counts must be positive");
  }
  if (max_channel_multiplier < 1) {
    throw ArgumentError("max_channel_multiplier must be >= 1");
  }
  if (!downsample_xy.empty() &&
      static_cast<int>(downsample_xy.size()) != stages - 1) {
    throw ArgumentError("downsample_xy needs one entry per stage gap");
  }
  for (int s = 0; s < stages; ++s) {
    DualPathConfig c = block;
    c.channels = stage_channels(s);
    c.validate();
  }
}

bool EncoderConfig::downsamples_after(int stage) const {
  if (stage < 0 || stage >= stages - 1) return false;
  return downsample_xy.empty() ? true : downsample_xy[stage];
}

int EncoderConfig::stage_channels(int stage) const {
  return base_channels * std::min(1 << stage, max_channel_multiplier);
}

// ---------------------------------------------------------------------------

WindowAttentionImpl::WindowAttentionImpl(int channels, int heads, int window,
                                         int mlp_ratio)
    : channels_(channels), heads_(heads), window_(window) {
  if (channels % heads != 0 || window < 1) {
    throw ArgumentError("window attention needs channels % heads == 0, window >= 1");
  }
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({channels})));
  qkv = register_module("qkv", nn::Linear(channels, 3 * channels));
  proj = register_module("proj", nn::Linear(channels, channels));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({channels})));
  fc1 = register_module("fc1", nn::Linear(channels, mlp_ratio * channels));
  fc2 = register_module("fc2", nn::Linear(mlp_ratio * channels, channels));
}

torch::Tensor WindowAttentionImpl::attention(const torch::Tensor& x,
                                             bool shifted) {
  if (x.dim() != 4 || x.size(3) != channels_) {
    throw ArgumentError("window attention expects B x H x W x C");
  }
  const std::int64_t b = x.size(0), h = x.size(1), w = x.size(2);
  const std::int64_t c = channels_;
  const WindowLayout l = window_layout(h, w, window_, shifted);

  auto t = x;
  if (l.pad_h != h || l.pad_w != w) {
    t = F::pad(t, F::PadFuncOptions({0, 0, 0, l.pad_w - w, 0, l.pad_h - h}));
  }
  if (l.shift_h != 0 || l.shift_w != 0) {
    t = torch::roll(t, {-l.shift_h, -l.shift_w}, {1, 2});
  }
  const std::int64_t nh = l.pad_h / l.win_h, nw = l.pad_w / l.win_w;
  const std::int64_t n = l.tokens(), n_win = l.windows();
  const std::int64_t d = c / heads_;
  t = t.view({b, nh, l.win_h, nw, l.win_w, c})
          .permute({0, 1, 3, 2, 4, 5})
          .reshape({b * n_win, n, c});

  auto qkv_t = qkv->forward(t).view({b * n_win, n, 3, heads_, d}).permute({2, 0, 3, 1, 4});
  auto q = qkv_t[0] * (1.0 / std::sqrt(static_cast<double>(d)));
  auto k = qkv_t[1];
  auto v = qkv_t[2];
  auto scores = torch::matmul(q, k.transpose(-2, -1));  // bW x heads x N x N
  if (l.needs_mask(h, w)) {
    auto mask = window_mask(l, h, w, scores.scalar_type()).to(scores.device());
    scores = (scores.view({b, n_win, heads_, n, n}) + mask.view({1, n_win, 1, n, n}))
                 .view({b * n_win, heads_, n, n});
  }
  auto out = torch::matmul(torch::softmax(scores, -1), v)
                 .transpose(1, 2)
                 .reshape({b * n_win, n, c});
  out = proj->forward(out);
  out = out.view({b, nh, nw, l.win_h, l.win_w, c})
            .permute({0, 1, 3, 2, 4, 5})
            .reshape({b, l.pad_h, l.pad_w, c});
  if (l.shift_h != 0 || l.shift_w != 0) {
    out = torch::roll(out, {l.shift_h, l.shift_w}, {1, 2});
  }
  if (l.pad_h != h || l.pad_w != w) {
    out = out.slice(1, 0, h).slice(2, 0, w);
  }
  return out;
}

torch::Tensor WindowAttentionImpl::forward_cl(const torch::Tensor& x,
                                              bool shifted) {
  auto y = x + attention(norm1->forward(x), shifted);
  return y + fc2->forward(torch::gelu(fc1->forward(norm2->forward(y))));
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x,
                                           bool shifted) {
  if (x.dim() != 4) throw ArgumentError("window attention expects B x C x H x W");
  return forward_cl(x.permute({0, 2, 3, 1}), shifted).permute({0, 3, 1, 2});
}

torch::Tensor windowed_attention_2d(const torch::Tensor& feat,
                                    WindowAttention& attn, bool shifted) {
  return attn->forward(feat, shifted);
}

// ---------------------------------------------------------------------------

BevAsppImpl::BevAsppImpl(int channels, int bottleneck_ratio,
                         const std::vector<int>& dilations) {
  const int mid = channels / bottleneck_ratio;
  reduce = register_module("reduce", nn::Conv2d(nn::Conv2dOptions(channels, mid, 1)));
  branches = register_module("branches", nn::ModuleList());
  for (int d : dilations) {
    branches->push_back(
        nn::Conv2d(nn::Conv2dOptions(mid, mid, 3).padding(d).dilation(d)));
  }
  pooled_branch = register_module("pooled_branch", nn::Conv2d(nn::Conv2dOptions(mid, mid, 1)));
  const int cat = mid * (static_cast<int>(dilations.size()) + 1);
  expand = register_module("expand", nn::Conv2d(nn::Conv2dOptions(cat, channels, 1)));
}

torch::Tensor BevAsppImpl::forward(const torch::Tensor& bev) {
  auto r = torch::relu(reduce->forward(bev));
  std::vector<torch::Tensor> parts;
  for (const auto& m : *branches) {
    parts.push_back(torch::relu(m->as<nn::Conv2d>()->forward(r)));
  }
  auto pooled = torch::relu(pooled_branch->forward(r.mean({2, 3}, true)));
  parts.push_back(pooled.expand_as(r));
  return bev + expand->forward(torch::cat(parts, 1));
}

// ---------------------------------------------------------------------------

torch::Tensor local_path(const torch::Tensor& volume, WindowAttention& attn,
                         bool shifted) {
  if (volume.dim() != 5) throw ArgumentError("local_path expects B x C x X x Y x Z");
  const auto b = volume.size(0), c = volume.size(1), x = volume.size(2),
             y = volume.size(3), z = volume.size(4);
  auto slices = volume.permute({0, 4, 2, 3, 1}).reshape({b * z, x, y, c});
  auto out = attn->forward_cl(slices, shifted);
  return out.view({b, z, x, y, c}).permute({0, 4, 2, 3, 1});
}

torch::Tensor global_path(const torch::Tensor& volume, WindowAttention* attn,
                          BevAspp* aspp, bool shifted) {
  if (volume.dim() != 5) throw ArgumentError("global_path expects B x C x X x Y x Z");
  auto bev = avg_pool_height(volume);
  if (attn != nullptr && !attn->is_empty()) bev = (*attn)->forward(bev, shifted);
  if (aspp != nullptr && !aspp->is_empty()) bev = (*aspp)->forward(bev);
  return bev;
}

torch::Tensor fuse_dual_path(const torch::Tensor& f_local,
                             const torch::Tensor& f_global,
                             nn::Linear& gate, bool use_soft_sum) {
  if (f_local.dim() != 5 || f_global.dim() != 4 ||
      f_local.size(1) != f_global.size(1) ||
      f_local.size(2) != f_global.size(2) || f_local.size(3) != f_global.size(3)) {
    throw ArgumentError("fuse_dual_path: local/global shapes disagree");
  }
  auto g_term = f_global.unsqueeze(-1);
  if (!use_soft_sum) return f_local + g_term;
  auto g = torch::sigmoid(gate->forward(f_local.permute({0, 2, 3, 4, 1})))
               .permute({0, 4, 1, 2, 3});
  return f_local + g * g_term;
}

DualPathBlockImpl::DualPathBlockImpl(const DualPathConfig& config, bool shifted,
                                     PathMode mode)
    : config_(config), shifted_(shifted), mode_(mode) {
  config.validate();
  const int c = config.channels;
  const bool needs_global = mode != PathMode::kLocalOnly;
  const bool needs_attn = mode != PathMode::kGlobalOnly ||
                          config.use_shared_attention;
  if (needs_attn) {
    attn = register_module(
        "attn", WindowAttention(c, config.heads, config.window_size, config.mlp_ratio));
  }
  if (needs_global && config.use_aspp) {
    aspp = register_module(
        "aspp", BevAspp(c, config.aspp_bottleneck_ratio, config.aspp_dilations));
  }
  if (needs_global && config.use_soft_sum) {
    gate = register_module("gate", nn::Linear(c, 1));
  }
  out_norm = register_module("out_norm", nn::LayerNorm(nn::LayerNormOptions({c})));
  out_proj = register_module("out_proj", nn::Linear(c, c));
}

torch::Tensor DualPathBlockImpl::local(const torch::Tensor& volume) {
  return local_path(volume, attn, shifted_);
}

torch::Tensor DualPathBlockImpl::global(const torch::Tensor& volume) {
  WindowAttention* shared = config_.use_shared_attention ? &attn : nullptr;
  return global_path(volume, shared, &aspp, shifted_);
}

torch::Tensor DualPathBlockImpl::forward(const torch::Tensor& volume) {
  torch::Tensor fused;
  switch (mode_) {
    case PathMode::kDual:
      fused = fuse_dual_path(local(volume), global(volume), gate, config_.use_soft_sum);
      break;
    case PathMode::kLocalOnly:
      fused = local(volume);
      break;
    case PathMode::kGlobalOnly:
      fused = fuse_dual_path(volume, global(volume), gate, config_.use_soft_sum);
      break;
  }
  auto cl = fused.permute({0, 2, 3, 4, 1});
  return volume + out_proj->forward(out_norm->forward(cl)).permute({0, 4, 1, 2, 3});
}

torch::Tensor dual_path_block(const torch::Tensor& volume, DualPathBlock& block) {
  return block->forward(volume);
}

Conv3dBlockImpl::Conv3dBlockImpl(int channels) {
  conv1 = register_module(
      "conv1", nn::Conv3d(nn::Conv3dOptions(channels, channels, 3).padding(1).bias(false)));
  norm1 = register_module("norm1", nn::GroupNorm(group_count(channels), channels));
  conv2 = register_module(
      "conv2", nn::Conv3d(nn::Conv3dOptions(channels, channels, 3).padding(1).bias(false)));
  norm2 = register_module("norm2", nn::GroupNorm(group_count(channels), channels));
}

torch::Tensor Conv3dBlockImpl::forward(const torch::Tensor& volume) {
  auto y = torch::relu(norm1->forward(conv1->forward(volume)));
  y = norm2->forward(conv2->forward(y));
  return torch::relu(volume + y);
}

ConvGnReluImpl::ConvGnReluImpl(int in, int out, std::int64_t stride_xy) {
  conv = register_module(
      "conv", nn::Conv3d(nn::Conv3dOptions(in, out, 3).stride({stride_xy, stride_xy, 1}).padding(1).bias(false)));
  norm = register_module("norm", nn::GroupNorm(group_count(out), out));
}

torch::Tensor ConvGnReluImpl::forward(const torch::Tensor& x) {
  return torch::relu(norm->forward(conv->forward(x)));
}

// ---------------------------------------------------------------------------

namespace {

PathMode path_mode(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::kLocalOnly: return PathMode::kLocalOnly;
    case EncoderVariant::kGlobalOnly: return PathMode::kGlobalOnly;
    default: return PathMode::kDual;
  }
}

}  // namespace

VoxelEncoderImpl::VoxelEncoderImpl(const EncoderConfig& config) : config_(config) {
  config.validate();
  if (config.in_channels != config.base_channels) {
    input_proj_ = nn::AnyModule(register_module(
        "input_proj",
        nn::Conv3d(nn::Conv3dOptions(config.in_channels, config.base_channels, 1))));
    has_input_proj_ = true;
  }
  for (int s = 0; s < config.stages; ++s) {
    const int c = config.stage_channels(s);
    DualPathConfig block_cfg = config.block;
    block_cfg.channels = c;
    std::vector<nn::AnyModule> layers;
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      if (b > 0) {
        layers.emplace_back(register_module(
            "stage" + std::to_string(s) + "_conv" + std::to_string(b),
            ConvGnRelu(c, c, 1)));
      }
      const std::string name = "stage" + std::to_string(s) + "_block" + std::to_string(b);
      if (config.variant == EncoderVariant::kConv3d) {
        layers.emplace_back(register_module(name, Conv3dBlock(c)));
      } else {
        layers.emplace_back(register_module(
            name, DualPathBlock(block_cfg, b % 2 == 1, path_mode(config.variant))));
      }
    }
    stage_layers_.push_back(std::move(layers));
    if (s + 1 < config.stages) {
      const int next = config.stage_channels(s + 1);
      const std::int64_t sxy = config.downsamples_after(s) ? 2 : 1;
      downsamplers_.push_back(register_module(
          "down" + std::to_string(s), ConvGnRelu(c, next, sxy)));
    }
  }
}

std::vector<torch::Tensor> VoxelEncoderImpl::forward(const torch::Tensor& volume) {
  if (volume.dim() != 5 || volume.size(1) != config_.in_channels) {
    throw ArgumentError("encoder expects B x " + std::to_string(config_.in_channels) +
                        " x X x Y x Z");
  }
  std::int64_t factor = 1;
  for (int s = 0; s + 1 < config_.stages; ++s) {
    if (config_.downsamples_after(s)) factor *= 2;
  }
  if (volume.size(2) % factor != 0 || volume.size(3) % factor != 0) {
    throw ArgumentError("encoder input X, Y must be divisible by " + std::to_string(factor));
  }
  auto x = has_input_proj_ ? input_proj_.forward(volume) : volume;
  std::vector<torch::Tensor> levels;
  for (int s = 0; s < config_.stages; ++s) {
    for (auto& layer : stage_layers_[s]) x = layer.forward(x);
    levels.push_back(x);
    if (s + 1 < config_.stages) x = downsamplers_[s]->forward(x);
  }
  return levels;
}

std::vector<VoxelGrid> encoder_forward(const VoxelGrid& volume, VoxelEncoder& encoder) {
  auto outs = encoder->forward(volume.data.unsqueeze(0));
  std::vector<VoxelGrid> levels;
  GridMeta meta = volume.meta;
  for (std::size_t s = 0; s < outs.size(); ++s) {
    levels.emplace_back(meta, outs[s].squeeze(0));
    if (encoder->config().downsamples_after(static_cast<int>(s))) {
      meta = meta.downsampled({2, 2, 1});
    }
  }
  return levels;
}

std::int64_t count_parameters(const nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace voxocc
