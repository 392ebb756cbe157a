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

#include "voxocc/core.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace voxocc {
namespace {

using testing::f64;
using testing::max_gradient_error;
using testing::naive_trilinear;

GridMeta unit_meta(Index3 res) {
  GridMeta m;
  m.resolution = res;
  return m;
}

TEST(TrilinearSample, IntegerIndexReturnsNodeValue) {
  torch::manual_seed(0);
  auto grid = torch::randn({2, 3, 4, 5}, f64());
  auto pts = torch::tensor({{1.0, 2.0, 3.0}}, f64());
  auto out = trilinear_sample(grid, pts);
  EXPECT_TRUE(torch::allclose(out[0], grid.index({torch::indexing::Slice(), 1, 2, 3})));
}

TEST(TrilinearSample, MidpointAveragesNeighbours) {
  auto grid = torch::zeros({1, 2, 1, 1}, f64());
  grid[0][0][0][0] = 3.0;
  grid[0][1][0][0] = 7.0;
  auto out = trilinear_sample(grid, torch::tensor({{0.5, 0.0, 0.0}}, f64()));
  EXPECT_DOUBLE_EQ(out[0][0].item<double>(), 5.0);
}

TEST(TrilinearSample, MatchesCornerLoopOracle) {
  torch::manual_seed(1);
  auto grid = torch::randn({3, 5, 5, 5}, f64());
  auto pts = torch::rand({100, 3}, f64()) * 5.0 - 0.5;  // some out of bounds
  auto out = trilinear_sample(grid, pts);
  for (int m = 0; m < 100; ++m) {
    auto ref = naive_trilinear(grid, pts[m][0].item<double>(),
                               pts[m][1].item<double>(), pts[m][2].item<double>());
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(out[m][c].item<double>(), ref[c], 1e-6);
    }
  }
}

TEST(TrilinearSample, OutOfBoundsIsZero) {
  auto grid = torch::ones({1, 2, 2, 2}, f64());
  auto out = trilinear_sample(grid, torch::tensor({{-2.0, 0.0, 0.0}, {0.0, 5.0, 0.0}}, f64()));
  EXPECT_EQ(out.abs().sum().item<double>(), 0.0);
}

TEST(TrilinearSample, BorderPaddingClamps) {
  auto grid = torch::arange(4, f64()).reshape({1, 4, 1, 1});
  auto out = trilinear_sample(grid, torch::tensor({{-0.25, 0.0, 0.0}, {3.5, 0.0, 0.0}}, f64()),
                              Padding::kBorder);
  EXPECT_DOUBLE_EQ(out[0][0].item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(out[1][0].item<double>(), 3.0);
}

TEST(TrilinearSample, RejectsBadShapes) {
  auto grid = torch::zeros({1, 2, 2, 2}, f64());
  EXPECT_THROW(trilinear_sample(grid, torch::zeros({4, 2}, f64())), ArgumentError);
  EXPECT_THROW(trilinear_sample(torch::zeros({2, 2, 2}, f64()), torch::zeros({4, 3}, f64())),
               ArgumentError);
}

TEST(TrilinearSample, LinearInGrid) {
  torch::manual_seed(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = torch::randn({2, 4, 3, 5}, f64());
    auto b = torch::randn({2, 4, 3, 5}, f64());
    auto pts = torch::rand({30, 3}, f64()) * 4.0;
    const double alpha = 0.7, beta = -1.3;
    auto lhs = trilinear_sample(alpha * a + beta * b, pts);
    auto rhs = alpha * trilinear_sample(a, pts) + beta * trilinear_sample(b, pts);
    EXPECT_LT((lhs - rhs).abs().max().item<double>(), 1e-6);
  }
}

TEST(TrilinearSample, GradientsMatchFiniteDifferences) {
  torch::manual_seed(3);
  for (Padding pad : {Padding::kZeros, Padding::kBorder}) {
    auto grid = torch::randn({2, 3, 4, 3}, f64()).requires_grad_();
    auto pts = (torch::rand({12, 3}, f64()) * 4.0 - 0.5).requires_grad_();
    auto weights = torch::randn({12, 2}, f64());
    const double err = max_gradient_error(
        [&] { return (trilinear_sample(grid, pts, pad) * weights).sum(); }, {grid, pts});
    EXPECT_LE(err, 1e-4);
  }
}

TEST(TrilinearSample, BatchedMatchesPerBatch) {
  torch::manual_seed(4);
  auto grid = torch::randn({3, 2, 4, 4, 2}, f64());
  auto pts = torch::rand({3, 7, 3}, f64()) * 3.0;
  auto out = trilinear_sample_batched(grid, pts);
  for (int b = 0; b < 3; ++b) {
    EXPECT_TRUE(torch::allclose(out[b], trilinear_sample(grid[b], pts[b])));
  }
}

TEST(MaxPool3d, AllZeroStaysZero) {
  VoxelGrid g(unit_meta({4, 4, 4}), torch::zeros({1, 4, 4, 4}, f64()));
  auto out = max_pool_3d(g, {2, 2, 2});
  EXPECT_EQ(out.meta.resolution, (Index3{2, 2, 2}));
  EXPECT_EQ(out.data.abs().sum().item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(out.meta.voxel_size[0], 2.0);
}

TEST(MaxPool3d, PreservesLonePositiveWhileAveragingDilutes) {
  auto data = torch::zeros({1, 4, 4, 4}, f64());
  data[0][2][1][3] = 1.0;
  auto pooled = max_pool_3d(data, {2, 2, 2});
  EXPECT_EQ((pooled == 1.0).sum().item<int>(), 1);
  EXPECT_DOUBLE_EQ(pooled[0][1][0][1].item<double>(), 1.0);

  auto averaged = downsample_trilinear(data, {2, 2, 2});
  EXPECT_DOUBLE_EQ(averaged[0][1][0][1].item<double>(), 0.125);
  EXPECT_LT(averaged.max().item<double>(), 0.5);
}

TEST(MaxPool3d, BoundsAndIdentity) {
  torch::manual_seed(5);
  auto data = torch::randn({2, 6, 4, 4}, f64());
  auto pooled = max_pool_3d(data, {2, 2, 2});
  EXPECT_LE(pooled.max().item<double>(), data.max().item<double>());
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) {
        for (int c = 0; c < 2; ++c) {
          EXPECT_GE(pooled[c][i / 2][j / 2][k / 2].item<double>(),
                    data[c][i][j][k].item<double>());
        }
      }
    }
  }
  EXPECT_TRUE(torch::equal(max_pool_3d(data, {1, 1, 1}), data));
}

TEST(MaxPool3d, RaggedResolutionPadsWithNegativeInfinity) {
  auto data = -torch::ones({1, 3, 2, 2}, f64());
  auto pooled = max_pool_3d(data, {2, 2, 2});
  EXPECT_EQ(pooled.size(1), 2);
  // the padded window still reports the real (negative) value, not 0
  EXPECT_DOUBLE_EQ(pooled[0][1][0][0].item<double>(), -1.0);
}

TEST(MaxPool3d, RejectsNonPositiveFactor) {
  auto data = torch::zeros({1, 2, 2, 2}, f64());
  EXPECT_THROW(max_pool_3d(data, {0, 1, 1}), ArgumentError);
  EXPECT_THROW(max_pool_3d(data, {1, -2, 1}), ArgumentError);
}

TEST(MaxPool3d, GradientMatchesFiniteDifferences) {
  torch::manual_seed(6);
  auto data = torch::randn({2, 4, 4, 2}, f64()).requires_grad_();
  auto w = torch::randn({2, 2, 2, 1}, f64());
  EXPECT_LE(max_gradient_error([&] { return (max_pool_3d(data, {2, 2, 2}) * w).sum(); }, {data}),
            1e-4);
}

TEST(DownsampleTrilinear, GradientMatchesFiniteDifferences) {
  torch::manual_seed(7);
  auto data = torch::randn({2, 4, 4, 2}, f64()).requires_grad_();
  auto w = torch::randn({2, 2, 2, 1}, f64());
  EXPECT_LE(max_gradient_error([&] { return (downsample_trilinear(data, {2, 2, 2}) * w).sum(); },
                               {data}),
            1e-4);
}

TEST(UpsampleTrilinear, ConstantAndIdentity) {
  auto data = torch::full({2, 2, 3, 1}, 4.5, f64());
  auto up = upsample_trilinear(data, {2, 2, 2});
  EXPECT_EQ(up.sizes(), (std::vector<std::int64_t>{2, 4, 6, 2}));
  EXPECT_TRUE(torch::allclose(up, torch::full_like(up, 4.5)));
  auto r = torch::randn({1, 3, 3, 3}, f64());
  EXPECT_TRUE(torch::equal(upsample_trilinear(r, {1, 1, 1}), r));
}

TEST(AvgPoolHeight, ConstantAndTwoSlices) {
  auto c = torch::full({2, 3, 3, 4}, 1.25, f64());
  EXPECT_TRUE(torch::allclose(avg_pool_height(c), torch::full({2, 3, 3}, 1.25, f64())));

  auto a = torch::randn({1, 2, 2, 1}, f64());
  auto b = torch::randn({1, 2, 2, 1}, f64());
  auto g = torch::cat({a, b}, 3);
  EXPECT_TRUE(torch::allclose(avg_pool_height(g), ((a + b) / 2).squeeze(3)));
}

TEST(AvgPoolHeight, MatchesMeanLoopAndCommutesWithAffine) {
  torch::manual_seed(8);
  auto g = torch::randn({3, 4, 4, 4}, f64());
  auto out = avg_pool_height(g);
  for (int c = 0; c < 3; ++c) {
    for (int x = 0; x < 4; ++x) {
      for (int y = 0; y < 4; ++y) {
        double s = 0.0;
        for (int z = 0; z < 4; ++z) s += g[c][x][y][z].item<double>();
        EXPECT_NEAR(out[c][x][y].item<double>(), s / 4.0, 1e-12);
      }
    }
  }
  auto scale = torch::randn({3, 1, 1, 1}, f64());
  auto shift = torch::randn({3, 1, 1, 1}, f64());
  auto lhs = avg_pool_height(g * scale + shift);
  auto rhs = out * scale.squeeze(3) + shift.squeeze(3);
  EXPECT_TRUE(torch::allclose(lhs, rhs));
}

TEST(AvgPoolHeight, GradientMatchesFiniteDifferences) {
  torch::manual_seed(9);
  auto g = torch::randn({2, 3, 2, 3}, f64()).requires_grad_();
  auto w = torch::randn({2, 3, 2}, f64());
  EXPECT_LE(max_gradient_error([&] { return (avg_pool_height(g) * w).sum(); }, {g}), 1e-4);
}

TEST(VoxelWorldCoords, CentersFollowHalfOffset) {
  GridMeta m = unit_meta({2, 2, 2});
  auto coords = voxel_world_coords(m);
  EXPECT_TRUE(torch::allclose(coords[0], torch::tensor({0.5, 0.5, 0.5}, f64())));

  GridMeta n;
  n.resolution = {4, 4, 4};
  n.voxel_size = Eigen::Vector3d::Constant(0.5);
  n.origin = Eigen::Vector3d(-2.0, -2.0, 0.0);
  auto c2 = voxel_world_coords(n);
  EXPECT_TRUE(torch::allclose(c2[n.flat_index({1, 0, 2})],
                              torch::tensor({-1.25, -1.75, 1.25}, f64())));
}

TEST(VoxelWorldCoords, IndexOfInvertsWorldOf) {
  GridMeta m;
  m.resolution = {4, 4, 2};
  m.voxel_size = Eigen::Vector3d(0.3, 0.2, 0.5);
  m.origin = Eigen::Vector3d(1.0, -3.0, 0.25);
  auto coords = voxel_world_coords(m);
  for (std::int64_t f = 0; f < m.num_voxels(); ++f) {
    const Index3 idx = m.unflatten(f);
    EXPECT_EQ(m.index_of(m.world_of(idx)), idx);
    Eigen::Vector3d w(coords[f][0].item<double>(), coords[f][1].item<double>(),
                      coords[f][2].item<double>());
    EXPECT_EQ(m.index_of(w), idx);
  }
}

TEST(GridMeta, ValidatesAndResamples) {
  GridMeta bad = unit_meta({0, 1, 1});
  EXPECT_THROW(bad.validate(), ArgumentError);
  GridMeta m = unit_meta({4, 4, 2});
  EXPECT_THROW(m.downsampled({3, 1, 1}), ArgumentError);
  auto d = m.downsampled({2, 2, 1});
  EXPECT_EQ(d.resolution, (Index3{2, 2, 2}));
  EXPECT_EQ(d.upsampled({2, 2, 1}), m);
}

TEST(Pose, ValidatesRotation) {
  Pose p;
  EXPECT_NO_THROW(p.validate());
  p.rotation(0, 0) = -1.0;  // reflection
  EXPECT_THROW(p.validate(), ArgumentError);
  Pose q;
  q.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  q.translation = Eigen::Vector3d(1, 2, 3);
  const Eigen::Vector3d x(0.2, -0.4, 1.1);
  EXPECT_LT((q.inverse().apply(q.apply(x)) - x).norm(), 1e-12);
}

}  // namespace
}  // namespace voxocc
