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

#include <gtest/gtest.h>

#include <limits>

#include "oracles.hpp"
#include "test_util.hpp"

namespace voxocc {
namespace {

using testing::f64;
using testing::max_gradient_error;
using torch::indexing::Slice;

constexpr double kInf = std::numeric_limits<double>::infinity();

MaskedAttentionLayer small_layer(int channels = 8, int heads = 2) {
  MaskedAttentionLayer layer(channels, heads, 2);
  layer->to(torch::kFloat64);
  return layer;
}

// Multi-head attention of one query over an explicit key list.
std::vector<double> restricted_attention(MultiHeadAttention& mha, const std::vector<double>& q,
                                         const std::vector<std::vector<double>>& keys,
                                         const std::vector<std::vector<double>>& values,
                                         int heads) {
  using namespace testing;
  const auto wq = to_mat(mha->q_proj->weight), wk = to_mat(mha->k_proj->weight);
  const auto wv = to_mat(mha->v_proj->weight), wo = to_mat(mha->out_proj->weight);
  const auto bq = to_vec(mha->q_proj->bias), bk = to_vec(mha->k_proj->bias);
  const auto bv = to_vec(mha->v_proj->bias), bo = to_vec(mha->out_proj->bias);
  const std::size_t c = q.size(), d = c / heads;
  const auto qp = affine(wq, bq, q, 0, c);
  std::vector<double> mixed(c, 0.0);
  for (int h = 0; h < heads; ++h) {
    std::vector<double> s;
    double mx = -1e300, z = 0.0;
    for (const auto& k : keys) {
      const auto kp = affine(wk, bk, k, 0, c);
      double dot = 0.0;
      for (std::size_t e = 0; e < d; ++e) dot += qp[h * d + e] * kp[h * d + e];
      s.push_back(dot / std::sqrt(static_cast<double>(d)));
      mx = std::max(mx, s.back());
    }
    for (double& v : s) z += (v = std::exp(v - mx));
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const auto vp = affine(wv, bv, values[t], 0, c);
      for (std::size_t e = 0; e < d; ++e) mixed[h * d + e] += s[t] / z * vp[h * d + e];
    }
  }
  return affine(wo, bo, mixed, 0, c);
}

TEST(MaskedAttention, SingleAllowedVoxelGivesItsValueProjection) {
  torch::manual_seed(1);
  auto layer = small_layer();
  auto q = torch::randn({1, 3, 8}, f64()), qpos = torch::randn({1, 3, 8}, f64());
  auto k = torch::randn({1, 10, 8}, f64()), kpos = torch::randn({1, 10, 8}, f64());
  auto mask = torch::full({1, 3, 10}, -kInf, f64());
  mask.index_put_({0, 1, 6}, 0.0);
  torch::NoGradGuard ng;
  auto out = layer->cross_attend(q, qpos, k, kpos, mask);
  auto v = layer->cross_attn->out_proj->forward(layer->cross_attn->v_proj->forward(k[0][6]));
  EXPECT_LT((out[0][1] - v).abs().max().item<double>(), 1e-12);
}

TEST(MaskedAttention, AllBlockedRowFallsBackToFullAttention) {
  torch::manual_seed(2);
  auto layer = small_layer();
  auto q = torch::randn({2, 4, 8}, f64()), qpos = torch::randn({2, 4, 8}, f64());
  auto k = torch::randn({2, 9, 8}, f64()), kpos = torch::randn({2, 9, 8}, f64());
  auto mask = torch::where(torch::rand({2, 4, 9}, f64()) < 0.5, torch::tensor(0.0, f64()),
                           torch::tensor(-kInf, f64()));
  mask.index_put_({1, 2}, -kInf);
  mask.index_put_({0, 0}, -kInf);
  torch::NoGradGuard ng;
  auto masked = layer->forward(q, qpos, k, kpos, mask);
  // Only rows (0,0) and (1,2) are compared: other queries see their own masks,
  // which also flow into the shared self-attention.
  auto zero_mask = mask.clone();
  zero_mask.index_put_({1, 2}, 0.0);
  zero_mask.index_put_({0, 0}, 0.0);
  auto ca = layer->cross_attend(q, qpos, k, kpos, mask);
  auto cz = layer->cross_attend(q, qpos, k, kpos, zero_mask);
  EXPECT_LT((ca - cz).abs().max().item<double>(), 1e-14);
  EXPECT_LT((masked - layer->forward(q, qpos, k, kpos, zero_mask)).abs().max().item<double>(),
            1e-14);
  EXPECT_FALSE(torch::isnan(masked).any().item<bool>());
}

TEST(MaskedAttention, ZeroMaskEqualsUnmaskedAttention) {
  torch::manual_seed(3);
  auto layer = small_layer();
  auto q = torch::randn({1, 3, 8}, f64()), qpos = torch::randn({1, 3, 8}, f64());
  auto k = torch::randn({1, 7, 8}, f64()), kpos = torch::randn({1, 7, 8}, f64());
  torch::NoGradGuard ng;
  auto a = layer->cross_attend(q, qpos, k, kpos, torch::zeros({1, 3, 7}, f64()));
  auto b = layer->cross_attend(q, qpos, k, kpos, torch::Tensor());
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-14);
}

TEST(MaskedAttention, BlockedKeysMatchRestrictedKeySet) {
  for (int seed = 0; seed < 10; ++seed) {
    torch::manual_seed(40 + seed);
    auto layer = small_layer();
    const int nq = 3, nk = 12;
    auto q = torch::randn({1, nq, 8}, f64()), qpos = torch::randn({1, nq, 8}, f64());
    auto k = torch::randn({1, nk, 8}, f64()), kpos = torch::randn({1, nk, 8}, f64());
    auto allow = torch::rand({1, nq, nk}, f64()) < 0.4;
    allow.index_put_({0, Slice(), 0}, true);
    auto mask = torch::where(allow, torch::tensor(0.0, f64()), torch::tensor(-kInf, f64()));
    torch::NoGradGuard ng;
    auto got = layer->cross_attend(q, qpos, k, kpos, mask);
    for (int i = 0; i < nq; ++i) {
      std::vector<std::vector<double>> keys, values;
      for (int j = 0; j < nk; ++j) {
        if (!allow[0][i][j].item<bool>()) continue;
        keys.push_back(testing::to_vec(k[0][j] + kpos[0][j]));
        values.push_back(testing::to_vec(k[0][j]));
      }
      auto want = restricted_attention(layer->cross_attn, testing::to_vec(q[0][i] + qpos[0][i]),
                                       keys, values, 2);
      for (int c = 0; c < 8; ++c) {
        EXPECT_NEAR(got[0][i][c].item<double>(), want[c], 1e-12) << "seed " << seed;
      }
    }
  }
}

TEST(MaskedAttention, BlockedWeightsAreExactlyZero) {
  torch::manual_seed(5);
  MultiHeadAttention mha(8, 2);
  auto q = torch::randn({1, 2, 8}), k = torch::randn({1, 6, 8});
  auto mask = torch::zeros({1, 2, 6});
  mask.index_put_({Slice(), Slice(), Slice(0, 3)}, -kInf);
  torch::NoGradGuard ng;
  auto w = mha->attention_weights(q, k, mask);
  EXPECT_EQ(w.index({Slice(), Slice(), Slice(0, 3)}).abs().max().item<float>(), 0.0f);
  EXPECT_NEAR(w.sum(-1).min().item<float>(), 1.0f, 1e-6f);
}

TEST(MaskedAttention, RejectsMismatchedMask) {
  auto layer = small_layer();
  auto q = torch::randn({1, 3, 8}, f64()), k = torch::randn({1, 7, 8}, f64());
  EXPECT_THROW(layer->forward(q, q, k, k, torch::zeros({1, 3, 6}, f64())), ArgumentError);
  EXPECT_THROW(layer->forward(q, q, k, k, torch::zeros({3, 7}, f64())), ArgumentError);
}

TEST(PredictionHead, ZeroMaskEmbeddingGivesHalf) {
  auto logits = torch::randn({1, 2, 5});
  auto embed = torch::zeros({1, 2, 4});
  embed[0][1] = torch::randn({4});
  auto pred = mask_prediction_from(logits, embed, torch::randn({1, 4, 3, 2, 2}));
  EXPECT_TRUE(torch::allclose(pred.mask_probs[0][0], torch::full({3, 2, 2}, 0.5)));
  EXPECT_LT((pred.class_probs.sum(-1) - 1.0).abs().max().item<float>(), 1e-6f);
}

TEST(PredictionHead, AlignedVoxelReachesSigmoidOfTen) {
  auto voxel = torch::zeros({1, 3, 2, 2, 1}, f64());
  voxel.index_put_({0, Slice(), 1, 0, 0}, torch::tensor({2.0, 0.0, 0.0}, f64()));
  auto embed = torch::tensor({5.0, 0.0, 0.0}, f64()).view({1, 1, 3});
  auto pred = mask_prediction_from(torch::zeros({1, 1, 3}, f64()), embed, voxel);
  EXPECT_NEAR(pred.mask_probs[0][0][1][0][0].item<double>(), 0.99995, 1e-5);
  EXPECT_NEAR(pred.mask_probs[0][0][0][1][0].item<double>(), 0.5, 1e-15);
  EXPECT_NEAR(pred.mask_logits[0][0][1][0][0].item<double>(), 10.0, 1e-15);
}

TEST(PredictionHead, ZeroClassHeadIsUniform) {
  PredictionHead head(8, 5, 4);
  {
    torch::NoGradGuard ng;
    head->class_head->weight.zero_();
    head->class_head->bias.zero_();
  }
  torch::NoGradGuard ng;
  auto pred = head->forward(torch::randn({2, 3, 8}), torch::randn({2, 4, 2, 2, 2}));
  EXPECT_EQ(pred.class_logits.sizes(), (std::vector<std::int64_t>{2, 3, 6}));
  EXPECT_TRUE(torch::allclose(pred.class_probs, torch::full({2, 3, 6}, 1.0 / 6.0)));
  EXPECT_EQ(pred.mask_probs.sizes(), (std::vector<std::int64_t>{2, 3, 2, 2, 2}));
}

TEST(AttentionMask, MaxPoolKeepsLoneVoxelTrilinearDropsIt) {
  auto probs = torch::zeros({1, 1, 4, 4, 4}, f64());
  probs.index_put_({0, 0, 2, 1, 3}, 0.9);
  auto m_max = make_attention_mask(probs, {2, 2, 2}, PoolingMode::kMax).view({2, 2, 2});
  auto m_tri = make_attention_mask(probs, {2, 2, 2}, PoolingMode::kTrilinear).view({2, 2, 2});
  EXPECT_EQ(m_max[1][0][1].item<double>(), 0.0);
  EXPECT_EQ(torch::isneginf(m_max).sum().item<std::int64_t>(), 7);
  EXPECT_TRUE(torch::isneginf(m_tri).all().item<bool>());
  // The averaged value itself: 0.9 / 8.
  auto pooled = downsample_trilinear(probs[0], {2, 2, 2});
  EXPECT_NEAR(pooled[0][1][0][1].item<double>(), 0.1125, 1e-12);
}

TEST(AttentionMask, AllOnesIsAllZerosForEveryMode) {
  auto probs = torch::ones({2, 3, 4, 4, 2});
  for (auto mode : {PoolingMode::kMax, PoolingMode::kTrilinear}) {
    for (Index3 t : {Index3{4, 4, 2}, Index3{2, 2, 1}, Index3{1, 1, 1}, Index3{2, 4, 2}}) {
      auto m = make_attention_mask(probs, t, mode);
      EXPECT_EQ(m.size(2), t[0] * t[1] * t[2]);
      EXPECT_EQ(m.abs().max().item<float>(), 0.0f);
    }
  }
}

TEST(AttentionMask, NonIntegerFactorThrows) {
  auto probs = torch::rand({1, 2, 4, 4, 2});
  EXPECT_THROW(make_attention_mask(probs, {3, 4, 2}, PoolingMode::kMax), ArgumentError);
  EXPECT_THROW(make_attention_mask(probs, {4, 4, 0}, PoolingMode::kTrilinear), ArgumentError);
}

TEST(AttentionMask, MaxAttendableSetContainsTrilinearSet) {
  for (int seed = 0; seed < 50; ++seed) {
    torch::manual_seed(seed);
    auto probs = torch::rand({1, 4, 4, 4, 4}).pow(3);
    for (Index3 t : {Index3{2, 2, 2}, Index3{1, 2, 4}, Index3{4, 4, 4}}) {
      auto open_max = make_attention_mask(probs, t, PoolingMode::kMax) == 0;
      auto open_tri = make_attention_mask(probs, t, PoolingMode::kTrilinear) == 0;
      EXPECT_FALSE((open_tri & ~open_max).any().item<bool>()) << "seed " << seed;
    }
  }
}

TEST(AttentionMask, IgnoresGradient) {
  auto probs = torch::rand({1, 2, 2, 2, 2}).requires_grad_();
  auto m = make_attention_mask(probs, {1, 1, 1}, PoolingMode::kMax);
  EXPECT_FALSE(m.requires_grad());
}

TEST(PositionEncoding, ShapeRangeAndPadding) {
  auto pe = sine_position_encoding({4, 3, 2}, 20, torch::kFloat64);
  EXPECT_EQ(pe.sizes(), (std::vector<std::int64_t>{24, 20}));
  EXPECT_LE(pe.abs().max().item<double>(), 1.0);
  EXPECT_EQ(pe.index({Slice(), Slice(18, 20)}).abs().max().item<double>(), 0.0);
  // Lowest x frequency: sin(2 pi x) at x = (i + 0.5) / 4.
  EXPECT_NEAR(pe[6 * 1][0].item<double>(), std::sin(2.0 * M_PI * 0.375), 1e-12);
  // Distinct voxels get distinct codes.
  auto d = torch::cdist(pe, pe) + torch::eye(24, f64());
  EXPECT_GT(d.min().item<double>(), 1e-3);
}

OccDecoderConfig toy_config(int layers) {
  OccDecoderConfig c;
  c.num_classes = 4;
  c.queries = 5;
  c.channels = 8;
  c.mask_channels = 6;
  c.heads = 2;
  c.layers = layers;
  c.ffn_ratio = 2;
  return c;
}

std::vector<torch::Tensor> toy_levels(int batch, torch::ScalarType dtype = torch::kFloat32) {
  auto o = torch::TensorOptions().dtype(dtype);
  return {torch::randn({batch, 8, 1, 1, 1}, o), torch::randn({batch, 8, 2, 2, 1}, o),
          torch::randn({batch, 8, 4, 4, 2}, o)};
}

TEST(Decoder, ZeroLayersPredictsFromInitialQueries) {
  torch::manual_seed(6);
  OccDecoder dec(toy_config(0), 3);
  auto voxel = torch::randn({2, 6, 8, 8, 2});
  torch::NoGradGuard ng;
  auto out = dec->forward(toy_levels(2), voxel);
  ASSERT_EQ(out.per_layer.size(), 1u);
  EXPECT_TRUE(out.level_schedule.empty());
  auto direct = dec->head->forward(dec->query_feat.unsqueeze(0).expand({2, -1, -1}), voxel);
  EXPECT_TRUE(torch::allclose(out.final.mask_logits, direct.mask_logits));
}

TEST(Decoder, LevelScheduleCycles) {
  torch::manual_seed(7);
  auto voxel = torch::randn({1, 6, 8, 8, 2});
  torch::NoGradGuard ng;
  OccDecoder three(toy_config(3), 3);
  auto out = three->forward(toy_levels(1), voxel);
  EXPECT_EQ(out.per_layer.size(), 4u);
  EXPECT_EQ(out.level_schedule, (std::vector<int>{0, 1, 2}));
  OccDecoder five(toy_config(5), 3);
  out = five->forward(toy_levels(1), voxel);
  EXPECT_EQ(out.per_layer.size(), 6u);
  EXPECT_EQ(out.level_schedule, (std::vector<int>{0, 1, 2, 0, 1}));
  EXPECT_EQ(out.final.mask_probs.sizes(), (std::vector<std::int64_t>{1, 5, 8, 8, 2}));
}

TEST(Decoder, BatchElementsAreIndependent) {
  torch::manual_seed(8);
  OccDecoder dec(toy_config(2), 3);
  auto levels = toy_levels(2);
  auto voxel = torch::randn({2, 6, 8, 8, 2});
  torch::NoGradGuard ng;
  auto both = dec->forward(levels, voxel);
  std::vector<torch::Tensor> second;
  for (auto& l : levels) second.push_back(l.slice(0, 1, 2));
  auto one = dec->forward(second, voxel.slice(0, 1, 2));
  EXPECT_LT((both.final.mask_logits[1] - one.final.mask_logits[0]).abs().max().item<float>(),
            1e-4f);
}

TEST(Decoder, RejectsWrongLevelCount) {
  OccDecoder dec(toy_config(2), 3);
  auto levels = toy_levels(1);
  levels.pop_back();
  EXPECT_THROW(dec->forward(levels, torch::randn({1, 6, 8, 8, 2})), ArgumentError);
}

TEST(Decoder, GradientThroughOneLayer) {
  torch::manual_seed(9);
  OccDecoder dec(toy_config(1), 1);
  dec->to(torch::kFloat64);
  // Level at mask resolution with wide logits: the layer-0 mask blocks some keys.
  auto level = torch::randn({1, 8, 4, 4, 2}, f64()).requires_grad_();
  auto voxel = (3.0 * torch::randn({1, 6, 4, 4, 2}, f64())).requires_grad_();
  auto w = torch::randn({1, 5, 4, 4, 2}, f64());
  auto wc = torch::randn({1, 5, 5}, f64());
  {
    torch::NoGradGuard ng;
    auto m = make_attention_mask(dec->forward({level}, voxel).per_layer[0].mask_probs, {4, 4, 2},
                                 PoolingMode::kMax);
    ASSERT_TRUE(torch::isneginf(m).any().item<bool>());
    ASSERT_TRUE((m == 0).any().item<bool>());
  }
  auto f = [&] {
    auto out = dec->forward({level}, voxel);
    return (out.final.mask_probs * w).sum() + (out.final.class_probs * wc).sum();
  };
  EXPECT_LE(max_gradient_error(f, {level, voxel, dec->query_feat,
                                   dec->layers[0]->cross_attn->k_proj->weight}),
            1e-4);
}

TEST(Compose, SingleQueryOneHotLabelsEverything) {
  MaskPrediction p;
  p.class_probs = torch::tensor({0.0, 0.0, 1.0, 0.0, 0.0}).view({1, 1, 5});
  p.mask_probs = torch::ones({1, 1, 3, 2, 2});
  auto occ = compose_occupancy(p);
  EXPECT_EQ(occ.scores.sizes(), (std::vector<std::int64_t>{1, 4, 3, 2, 2}));
  EXPECT_TRUE((occ.labels == 2).all().item<bool>());
  EXPECT_EQ(occ.labels.scalar_type(), torch::kUInt8);
}

TEST(Compose, DisjointMasksPartitionTheVolume) {
  MaskPrediction p;
  p.class_probs = torch::zeros({1, 2, 4});
  p.class_probs.index_put_({0, 0, 1}, 1.0);
  p.class_probs.index_put_({0, 1, 2}, 1.0);
  auto m = torch::zeros({1, 2, 4, 1, 1});
  m.index_put_({0, 0, Slice(0, 2)}, 1.0);
  m.index_put_({0, 1, Slice(2, 4)}, 1.0);
  p.mask_probs = m;
  auto occ = compose_occupancy(p);
  auto labels = occ.labels.view(-1);
  EXPECT_EQ(labels[0].item<int>(), 1);
  EXPECT_EQ(labels[1].item<int>(), 1);
  EXPECT_EQ(labels[2].item<int>(), 2);
  EXPECT_EQ(labels[3].item<int>(), 2);
  EXPECT_TRUE(torch::allclose(occ.scores.sum(1), torch::ones({1, 4, 1, 1})));
}

TEST(Compose, MatchesDoubleLoopAndBounds) {
  for (int seed = 0; seed < 5; ++seed) {
    torch::manual_seed(60 + seed);
    MaskPrediction p;
    p.class_probs = torch::softmax(torch::randn({2, 4, 6}, f64()), -1);
    p.mask_probs = torch::rand({2, 4, 3, 2, 2}, f64());
    auto occ = compose_occupancy(p);
    EXPECT_LT((occ.scores - testing::compose_oracle(p.class_probs, p.mask_probs)).abs().max().item<double>(),
              1e-14);
    auto cap = p.class_probs.slice(-1, 0, 5).sum(1).view({2, 5, 1, 1, 1});
    EXPECT_GE(occ.scores.min().item<double>(), 0.0);
    EXPECT_TRUE((occ.scores <= cap + 1e-14).all().item<bool>());
    EXPECT_TRUE(torch::equal(occ.labels, occ.scores.argmax(1).to(torch::kUInt8)));
  }
}

VoxelGrid score_grid(torch::Tensor data) {
  GridMeta meta;
  meta.resolution = {data.size(1), data.size(2), data.size(3)};
  meta.voxel_size = Eigen::Vector3d(0.4, 0.4, 0.4);
  meta.origin = Eigen::Vector3d(0.0, -1.6, -0.4);
  return VoxelGrid(meta, std::move(data));
}

TEST(Upsample, ConstantScoresStayConstant) {
  auto g = score_grid(torch::full({3, 4, 4, 2}, 0.25));
  g.data[1].fill_(0.5);
  auto up = upsample_prediction(g, 2);
  EXPECT_EQ(up.scores.meta.resolution, (Index3{8, 8, 4}));
  EXPECT_NEAR(up.scores.meta.voxel_size.x(), 0.2, 1e-15);
  EXPECT_TRUE(up.scores.meta.origin.isApprox(g.meta.origin));
  EXPECT_LT((up.scores.data[0] - 0.25).abs().max().item<float>(), 1e-6f);
  EXPECT_TRUE((up.labels.labels == 1).all().item<bool>());
}

TEST(Upsample, FactorOneIsIdentity) {
  auto g = score_grid(torch::rand({4, 3, 2, 2}));
  auto up = upsample_prediction(g, 1);
  EXPECT_TRUE(torch::allclose(up.scores.data, g.data));
  EXPECT_TRUE(torch::equal(up.labels.labels, g.data.argmax(0).to(torch::kUInt8)));
}

TEST(Upsample, OneHotClassSurvives) {
  auto d = torch::zeros({4, 2, 3, 2});
  d[3].fill_(1.0);
  auto up = upsample_prediction(score_grid(d), 2);
  EXPECT_TRUE((up.labels.labels == 3).all().item<bool>());
  EXPECT_THROW(upsample_prediction(score_grid(d), 0), ArgumentError);
}

TEST(Config, Validation) {
  auto c = toy_config(2);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_EQ(pooling_mode_from_string("trilinear"), PoolingMode::kTrilinear);
  EXPECT_EQ(to_string(PoolingMode::kMax), "max");
  EXPECT_THROW(pooling_mode_from_string("avg"), ArgumentError);
}

}  // namespace
}  // namespace voxocc
