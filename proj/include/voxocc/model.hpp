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

// The full network: image backbone, depth-distribution lifting into the
// feature volume, voxel encoder, pixel decoder and mask-classification
// occupancy decoder.

#pragma once

#include <vector>

#include "voxocc/data.hpp"
#include "voxocc/encoder.hpp"
#include "voxocc/occ_decoder.hpp"
#include "voxocc/pixel_decoder.hpp"
#include "voxocc/view_transform.hpp"

namespace voxocc {

struct ModelConfig {
  BackboneOptions backbone;
  int context_channels = 32;
  DepthBins depth_bins;
  // Ground-truth resolution / feature-volume resolution, per axis.
  int volume_downsample = 2;
  EncoderConfig encoder;
  DeformAttnConfig pixel_decoder;
  OccDecoderConfig decoder;

  // Throws ArgumentError naming the first inconsistency between sub-configs.
  void validate() const;
  int levels() const { return encoder.stages; }
};

struct ModelOutput {
  DecoderOutput decoder;
  std::vector<torch::Tensor> depth_logits;  // per sample, views x D x h x w
  GridMeta feature_meta;
};

class OccModelImpl : public torch::nn::Module {
 public:
  explicit OccModelImpl(const ModelConfig& config);

  // Every sample must carry at least one view; all share `gt_meta`.
  ModelOutput forward(const std::vector<const SceneSample*>& batch, const GridMeta& gt_meta);

  const ModelConfig& config() const { return config_; }

  ImageBackbone backbone{nullptr};
  ContextDepthHead depth_head{nullptr};
  VoxelEncoder encoder{nullptr};
  PixelDecoder pixel_decoder{nullptr};
  OccDecoder decoder{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(OccModel);

GridMeta feature_meta_for(const GridMeta& gt_meta, int volume_downsample);

// Per-class scores and argmax labels at ground-truth resolution for one batch
// element of the final prediction.
UpsampledOccupancy predict_occupancy(const ModelOutput& out, std::int64_t index,
                                     int volume_downsample);

}  // namespace voxocc
