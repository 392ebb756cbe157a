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

#include "voxocc/model.hpp"

namespace voxocc {

void ModelConfig::validate() const {
  depth_bins.validate();
  encoder.validate();
  pixel_decoder.validate();
  decoder.validate();
  if (context_channels < 1) throw ArgumentError("context_channels must be >= 1");
  if (volume_downsample < 1) throw ArgumentError("volume_downsample must be >= 1");
  if (encoder.in_channels != context_channels) {
    throw ArgumentError("encoder.in_channels must equal context_channels");
  }
  if (decoder.channels != pixel_decoder.embed_channels) {
    throw ArgumentError("decoder.channels must equal pixel_decoder.embed_channels");
  }
  if (decoder.mask_channels != pixel_decoder.mask_channels) {
    throw ArgumentError("decoder.mask_channels must equal pixel_decoder.mask_channels");
  }
}

OccModelImpl::OccModelImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  backbone = register_module("backbone", ImageBackbone(config.backbone));
  depth_head = register_module(
      "depth_head", ContextDepthHead(config.backbone.out_channels, config.context_channels,
                                     config.depth_bins.count));
  encoder = register_module("encoder", VoxelEncoder(config.encoder));
  std::vector<int> level_channels;
  for (int s = 0; s < config.encoder.stages; ++s) {
    level_channels.push_back(config.encoder.stage_channels(s));
  }
  pixel_decoder = register_module("pixel_decoder", PixelDecoder(config.pixel_decoder, level_channels));
  decoder = register_module("decoder", OccDecoder(config.decoder, config.levels()));
}

GridMeta feature_meta_for(const GridMeta& gt_meta, int volume_downsample) {
  return gt_meta.downsampled({volume_downsample, volume_downsample, volume_downsample});
}

ModelOutput OccModelImpl::forward(const std::vector<const SceneSample*>& batch,
                                  const GridMeta& gt_meta) {
  if (batch.empty()) throw ArgumentError("model forward needs a non-empty batch");
  ModelOutput out;
  out.feature_meta = feature_meta_for(gt_meta, config_.volume_downsample);
  std::vector<CameraView> views;
  std::vector<std::int64_t> offsets{0};
  for (const auto* s : batch) {
    if (s->views.empty()) throw ArgumentError("every sample needs at least one view");
    views.insert(views.end(), s->views.begin(), s->views.end());
    offsets.push_back(static_cast<std::int64_t>(views.size()));
  }
  const auto feats = backbone_forward(views, backbone);
  const auto [context, depth_logits] =
      predict_context_and_depth(feats, depth_head, config_.depth_bins);

  std::vector<torch::Tensor> volumes;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto lo = offsets[b], hi = offsets[b + 1];
    const std::vector<CameraView> sv(views.begin() + lo, views.begin() + hi);
    const auto ctx = context.slice(0, lo, hi), dl = depth_logits.slice(0, lo, hi);
    volumes.push_back(lift_and_pool(ctx, dl, sv, config_.depth_bins, out.feature_meta).data);
    out.depth_logits.push_back(dl);
  }
  const auto levels = encoder->forward(torch::stack(volumes));
  const auto pix = pixel_decoder->forward(levels);
  out.decoder = decoder->forward(pix.levels, pix.mask_features);
  return out;
}

UpsampledOccupancy predict_occupancy(const ModelOutput& out, std::int64_t index,
                                     int volume_downsample) {
  torch::NoGradGuard no_grad;
  const auto occ = compose_occupancy(out.decoder.final);
  VoxelGrid scores(out.feature_meta, occ.scores[index].to(torch::kFloat64));
  return upsample_prediction(scores, volume_downsample);
}

}  // namespace voxocc
