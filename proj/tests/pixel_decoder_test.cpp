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

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

namespace voxocc {
namespace {

using testing::deform_layer_oracle;
using testing::f64;
using testing::max_gradient_error;

DeformAttnConfig small_config(int channels = 8, int heads = 2, int points = 2) {
  DeformAttnConfig c;
  c.embed_channels = channels;
  c.mask_channels = 6;
  c.heads = heads;
  c.points = points;
  c.layers = 1;
  return c;
}

// Random offsets large enough to leave the reference voxel.
void randomize_offsets(DeformAttn3dLayer& layer) {
  torch::NoGradGuard ng;
  layer->sampling_offsets->weight.normal_(0.0, 0.05);
  layer->sampling_offsets->bias.normal_(0.0, 0.2);
  layer->attention_weights->weight.normal_(0.0, 0.5);
}

std::vector<torch::Tensor> pyramid(int levels, int channels) {
  const std::int64_t sizes[][3] = {{4, 4, 2}, {2, 2, 2}, {2, 1, 2}, {1, 1, 1}};
  std::vector<torch::Tensor> out;
  for (int l = 0; l < levels; ++l) {
    out.push_back(torch::randn({1, channels, sizes[l][0], sizes[l][1], sizes[l][2]}, f64()));
  }
  return out;
}

TEST(ReferencePoints, MatchNormalizedWorldCoordinates) {
  GridMeta meta;
  meta.resolution = {4, 3, 2};
  meta.voxel_size = Eigen::Vector3d(0.5, 2.0, 1.0);
  meta.origin = Eigen::Vector3d(-1.0, 3.0, 0.5);
  auto world = voxel_world_coords(meta);
  auto origin = torch::tensor({-1.0, 3.0, 0.5}, f64());
  auto extent = torch::tensor({2.0, 6.0, 2.0}, f64());
  auto ref = normalized_reference_points(meta.resolution, torch::kFloat64);
  EXPECT_LT(((world - origin) / extent - ref).abs().max().item<double>(), 1e-15);
}

TEST(DeformAttn, DegenerateCaseDoublesEveryVoxel) {
  DeformAttn3dLayer layer(small_config(4, 1, 1), 1);
  layer->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    layer->value_proj->weight.copy_(torch::eye(4, f64()));
    layer->value_proj->bias.zero_();
    layer->output_proj->weight.copy_(torch::eye(4, f64()));
    layer->output_proj->bias.zero_();
  }
  auto f = torch::randn({1, 4, 3, 2, 2}, f64());
  torch::NoGradGuard ng;
  auto out = layer->attention_update({f});
  EXPECT_LT((out[0] - 2.0 * f).abs().max().item<double>(), 1e-12);
}

TEST(DeformAttn, OutOfBoundsSamplesContributeNothing) {
  DeformAttn3dLayer layer(small_config(4, 1, 2), 1);
  layer->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    layer->sampling_offsets->bias.fill_(5.0);
    layer->output_proj->bias.zero_();
  }
  auto f = torch::randn({1, 4, 3, 2, 2}, f64());
  torch::NoGradGuard ng;
  EXPECT_TRUE(torch::allclose(layer->attention_update({f})[0], f, 0, 1e-15));
}

TEST(DeformAttn, MatchesPerVoxelLoopOracle) {
  int instance = 0;
  for (int levels = 1; levels <= 4; ++levels) {
    for (int rep = 0; rep < 5; ++rep, ++instance) {
      torch::manual_seed(200 + instance);
      DeformAttn3dLayer layer(small_config(), levels);
      layer->to(torch::kFloat64);
      randomize_offsets(layer);
      auto in = pyramid(levels, 8);
      torch::NoGradGuard ng;
      auto got = layer->forward(in);
      auto want = deform_layer_oracle(layer, in, true);
      for (int l = 0; l < levels; ++l) {
        EXPECT_LT((got[l] - want[l]).abs().max().item<double>(), 1e-5)
            << "levels=" << levels << " rep=" << rep << " level " << l;
      }
    }
  }
}

TEST(DeformAttn, WeightsSumToOnePerHead) {
  torch::manual_seed(3);
  DeformAttn3dLayer layer(small_config(), 3);
  randomize_offsets(layer);
  torch::NoGradGuard ng;
  auto probs = layer->attention_probs(torch::randn({2, 17, 8}));
  EXPECT_EQ(probs.sizes(), (std::vector<std::int64_t>{2, 17, 2, 6}));
  EXPECT_LT((probs.sum(-1) - 1.0).abs().max().item<float>(), 1e-5f);
}

TEST(DeformAttn, ZeroOffsetsReadOnlyTheReferenceLocation) {
  torch::manual_seed(4);
  DeformAttn3dLayer layer(small_config(), 2);
  layer->to(torch::kFloat64);
  auto in = pyramid(2, 8);
  torch::NoGradGuard ng;
  auto base = layer->attention_update(in);
  auto bumped = in;
  bumped[0] = in[0].clone();
  bumped[0][0].index_put_({torch::indexing::Slice(), 1, 1, 0},
                          bumped[0][0].index({torch::indexing::Slice(), 1, 1, 0}) + 1.0);
  auto out = layer->attention_update(bumped);
  auto changed0 = (out[0] - base[0]).abs().sum(1)[0] > 1e-12;
  auto changed1 = (out[1] - base[1]).abs().sum(1)[0] > 1e-12;
  EXPECT_EQ(changed0.sum().item<std::int64_t>(), 1);
  EXPECT_TRUE(changed0[1][1][0].item<bool>());
  // Coarse voxel (0, 0, 0) covers fine cells x, y in {0, 1} at z = 0.
  EXPECT_EQ(changed1.sum().item<std::int64_t>(), 1);
  EXPECT_TRUE(changed1[0][0][0].item<bool>());
}

TEST(DeformAttn, RejectsEmptyOrMismatchedLevels) {
  DeformAttn3dLayer layer(small_config(), 2);
  EXPECT_THROW(layer->forward({}), ArgumentError);
  EXPECT_THROW(layer->forward({torch::zeros({1, 8, 2, 2, 2})}), ArgumentError);
  EXPECT_THROW(DeformAttn3dLayer(small_config(), 0), ArgumentError);
}

TEST(DeformAttn, GradientMatchesFiniteDifferences) {
  torch::manual_seed(5);
  DeformAttn3dLayer layer(small_config(4, 2, 2), 2);
  layer->to(torch::kFloat64);
  randomize_offsets(layer);
  auto a = torch::randn({1, 4, 3, 2, 2}, f64()).requires_grad_();
  auto b = torch::randn({1, 4, 2, 1, 2}, f64()).requires_grad_();
  auto wa = torch::randn({1, 4, 3, 2, 2}, f64());
  auto wb = torch::randn({1, 4, 2, 1, 2}, f64());
  auto f = [&] {
    auto out = layer->forward({a, b});
    return (out[0] * wa).sum() + (out[1] * wb).sum();
  };
  EXPECT_LE(max_gradient_error(f, {a, b, layer->sampling_offsets->weight,
                                   layer->attention_weights->bias, layer->value_proj->weight}),
            1e-4);
}

TEST(PixelDecoder, ZeroLayersOnlyProjects) {
  torch::manual_seed(6);
  auto cfg = small_config();
  cfg.layers = 0;
  PixelDecoder dec(cfg, std::vector<int>{5, 7});
  auto in0 = torch::randn({1, 5, 4, 4, 2}), in1 = torch::randn({1, 7, 2, 2, 2});
  torch::NoGradGuard ng;
  auto out = pixel_decoder_forward({in0, in1}, dec);
  ASSERT_EQ(out.levels.size(), 2u);
  auto p0 = dec->input_norm[0]->forward(dec->input_proj[0]->forward(in0));
  EXPECT_TRUE(torch::allclose(out.levels[0], p0));
  EXPECT_TRUE(torch::allclose(out.mask_features, dec->mask_proj->forward(p0)));
}

TEST(PixelDecoder, MaskFeaturesAtFinestResolution) {
  torch::manual_seed(7);
  auto cfg = small_config();
  cfg.layers = 2;
  PixelDecoder dec(cfg, std::vector<int>{4, 8, 8});
  torch::NoGradGuard ng;
  auto out = dec->forward({torch::randn({2, 4, 8, 8, 2}), torch::randn({2, 8, 4, 4, 2}),
                           torch::randn({2, 8, 2, 2, 2})});
  EXPECT_EQ(out.mask_features.sizes(), (std::vector<std::int64_t>{2, 6, 8, 8, 2}));
  EXPECT_EQ(out.levels[2].sizes(), (std::vector<std::int64_t>{2, 8, 2, 2, 2}));
}

TEST(PixelDecoder, GradientThroughOneLayer) {
  torch::manual_seed(8);
  auto cfg = small_config(4, 2, 2);
  PixelDecoder dec(cfg, std::vector<int>{3, 4});
  dec->to(torch::kFloat64);
  randomize_offsets(dec->layers[0]);
  auto a = torch::randn({1, 3, 2, 2, 2}, f64()).requires_grad_();
  auto b = torch::randn({1, 4, 1, 1, 2}, f64()).requires_grad_();
  auto w = torch::randn({1, 6, 2, 2, 2}, f64());
  auto f = [&] { return (dec->forward({a, b}).mask_features * w).sum(); };
  EXPECT_LE(max_gradient_error(f, {a, b}), 1e-4);
}

}  // namespace
}  // namespace voxocc
