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

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace voxocc {

void GridMeta::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (resolution[a] < 1) {
      throw ArgumentError("grid resolution must be >= 1, got " +
                          to_string(resolution));
    }
    if (!(voxel_size[a] > 0.0)) {
      throw ArgumentError("voxel size must be positive");
    }
  }
}

Index3 GridMeta::unflatten(std::int64_t flat) const {
  const std::int64_t k = flat % resolution[2];
  const std::int64_t rest = flat / resolution[2];
  return {rest / resolution[1], rest % resolution[1], k};
}

bool GridMeta::contains(const Index3& idx) const {
  for (int a = 0; a < 3; ++a) {
    if (idx[a] < 0 || idx[a] >= resolution[a]) return false;
  }
  return true;
}

Eigen::Vector3d GridMeta::world_of(const Index3& idx) const {
  Eigen::Vector3d out;
  for (int a = 0; a < 3; ++a) {
    out[a] = origin[a] + voxel_size[a] * (static_cast<double>(idx[a]) + 0.5);
  }
  return out;
}

Index3 GridMeta::index_of(const Eigen::Vector3d& world) const {
  Index3 out;
  for (int a = 0; a < 3; ++a) {
    out[a] = static_cast<std::int64_t>(
        std::floor((world[a] - origin[a]) / voxel_size[a]));
  }
  return out;
}

Eigen::Vector3d GridMeta::continuous_index_of(
    const Eigen::Vector3d& world) const {
  return ((world - origin).array() / voxel_size.array() - 0.5).matrix();
}

Eigen::Vector3d GridMeta::extent() const {
  return Eigen::Vector3d(resolution[0] * voxel_size[0],
                         resolution[1] * voxel_size[1],
                         resolution[2] * voxel_size[2]);
}

GridMeta GridMeta::downsampled(const Index3& factor) const {
  GridMeta out = *this;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1 || resolution[a] % factor[a] != 0) {
      throw ArgumentError("cannot downsample resolution " +
                          to_string(resolution) + " by " + to_string(factor));
    }
    out.resolution[a] = resolution[a] / factor[a];
    out.voxel_size[a] = voxel_size[a] * static_cast<double>(factor[a]);
  }
  return out;
}

GridMeta GridMeta::upsampled(const Index3& factor) const {
  GridMeta out = *this;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1) throw ArgumentError("upsample factor must be >= 1");
    out.resolution[a] = resolution[a] * factor[a];
    out.voxel_size[a] = voxel_size[a] / static_cast<double>(factor[a]);
  }
  return out;
}

bool GridMeta::operator==(const GridMeta& other) const {
  return resolution == other.resolution && voxel_size == other.voxel_size &&
         origin == other.origin;
}

VoxelGrid::VoxelGrid(GridMeta m, torch::Tensor d)
    : meta(std::move(m)), data(std::move(d)) {
  validate();
}

void VoxelGrid::validate() const {
  meta.validate();
  if (!data.defined() || data.dim() != 4 || data.size(1) != meta.resolution[0] ||
      data.size(2) != meta.resolution[1] || data.size(3) != meta.resolution[2]) {
    throw ArgumentError("voxel grid data must be C x " +
                        to_string(meta.resolution));
  }
}

void LabelGrid::validate(int num_classes) const {
  meta.validate();
  if (!labels.defined() || labels.dim() != 3 ||
      labels.scalar_type() != torch::kUInt8 ||
      labels.size(0) != meta.resolution[0] ||
      labels.size(1) != meta.resolution[1] ||
      labels.size(2) != meta.resolution[2]) {
    throw ArgumentError("label grid must be uint8 " +
                        to_string(meta.resolution));
  }
  const auto flat = labels.contiguous();
  const std::uint8_t* p = flat.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    if (p[i] != kIgnoreLabel && p[i] >= num_classes) {
      throw ArgumentError("label " + std::to_string(p[i]) +
                          " out of range for " + std::to_string(num_classes) +
                          " classes");
    }
  }
}

void Pose::validate(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if (!gram.isApprox(Eigen::Matrix3d::Identity(), tol) ||
      (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) {
    throw ArgumentError("pose rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > tol) {
    throw ArgumentError("pose rotation must have determinant +1");
  }
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

std::string to_string(const Index3& idx) {
  std::ostringstream os;
  os << "(" << idx[0] << ", " << idx[1] << ", " << idx[2] << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Trilinear sampling kernels. The grid is handled channel-last internally so
// that the per-corner channel loop is contiguous.

namespace {

struct Corner {
  std::int64_t offset;  // into a channel-last X*Y*Z*C block, or -1
  double weight;
  double dwx, dwy, dwz;  // weight derivatives with respect to x, y, z
};

// Computes the 8 corners of a sample plus the derivative mask for clamped
// coordinates. Returns false for coordinates that are not finite.
inline bool sample_corners(double x, double y, double z, const Index3& res,
                           std::int64_t channels, Padding padding,
                           std::array<Corner, 8>& corners,
                           std::array<double, 3>& grad_mask) {
  grad_mask = {1.0, 1.0, 1.0};
  double c[3] = {x, y, z};
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(c[a])) return false;
    if (padding == Padding::kBorder) {
      const double hi = static_cast<double>(res[a] - 1);
      if (c[a] < 0.0 || c[a] > hi) {
        grad_mask[a] = 0.0;
        c[a] = std::clamp(c[a], 0.0, hi);
      }
    }
  }
  std::int64_t base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(c[a]);
    base[a] = static_cast<std::int64_t>(f);
    frac[a] = c[a] - f;
  }
  int n = 0;
  for (int dx = 0; dx < 2; ++dx) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dz = 0; dz < 2; ++dz) {
        const std::int64_t ix = base[0] + dx;
        const std::int64_t iy = base[1] + dy;
        const std::int64_t iz = base[2] + dz;
        const double wx = dx ? frac[0] : 1.0 - frac[0];
        const double wy = dy ? frac[1] : 1.0 - frac[1];
        const double wz = dz ? frac[2] : 1.0 - frac[2];
        const double sx = dx ? 1.0 : -1.0;
        const double sy = dy ? 1.0 : -1.0;
        const double sz = dz ? 1.0 : -1.0;
        Corner& cr = corners[n++];
        const bool inside = ix >= 0 && ix < res[0] && iy >= 0 && iy < res[1] &&
                            iz >= 0 && iz < res[2];
        cr.offset =
            inside ? ((ix * res[1] + iy) * res[2] + iz) * channels : -1;
        cr.weight = wx * wy * wz;
        cr.dwx = sx * wy * wz;
        cr.dwy = wx * sy * wz;
        cr.dwz = wx * wy * sz;
      }
    }
  }
  return true;
}

template <typename scalar_t>
void trilinear_forward_kernel(const scalar_t* grid, const scalar_t* points,
                              scalar_t* out, std::int64_t batch,
                              std::int64_t channels, const Index3& res,
                              std::int64_t num_points, Padding padding) {
  const std::int64_t volume = res[0] * res[1] * res[2] * channels;
  std::array<Corner, 8> corners;
  std::array<double, 3> mask;
  for (std::int64_t b = 0; b < batch; ++b) {
    const scalar_t* g = grid + b * volume;
    for (std::int64_t m = 0; m < num_points; ++m) {
      const scalar_t* p = points + (b * num_points + m) * 3;
      scalar_t* o = out + (b * num_points + m) * channels;
      std::fill(o, o + channels, scalar_t(0));
      if (!sample_corners(p[0], p[1], p[2], res, channels, padding, corners,
                          mask)) {
        continue;
      }
      for (const Corner& cr : corners) {
        if (cr.offset < 0 || cr.weight == 0.0) continue;
        const scalar_t w = static_cast<scalar_t>(cr.weight);
        const scalar_t* v = g + cr.offset;
        for (std::int64_t c = 0; c < channels; ++c) o[c] += w * v[c];
      }
    }
  }
}

template <typename scalar_t>
void trilinear_backward_kernel(const scalar_t* grid, const scalar_t* points,
                               const scalar_t* grad_out, scalar_t* grad_grid,
                               scalar_t* grad_points, std::int64_t batch,
                               std::int64_t channels, const Index3& res,
                               std::int64_t num_points, Padding padding) {
  const std::int64_t volume = res[0] * res[1] * res[2] * channels;
  std::array<Corner, 8> corners;
  std::array<double, 3> mask;
  for (std::int64_t b = 0; b < batch; ++b) {
    const scalar_t* g = grid + b * volume;
    scalar_t* gg = grad_grid ? grad_grid + b * volume : nullptr;
    for (std::int64_t m = 0; m < num_points; ++m) {
      const std::int64_t row = b * num_points + m;
      const scalar_t* p = points + row * 3;
      const scalar_t* go = grad_out + row * channels;
      scalar_t* gp = grad_points ? grad_points + row * 3 : nullptr;
      if (!sample_corners(p[0], p[1], p[2], res, channels, padding, corners,
                          mask)) {
        continue;
      }
      double acc[3] = {0.0, 0.0, 0.0};
      for (const Corner& cr : corners) {
        if (cr.offset < 0) continue;
        if (gg != nullptr && cr.weight != 0.0) {
          const scalar_t w = static_cast<scalar_t>(cr.weight);
          scalar_t* dst = gg + cr.offset;
          for (std::int64_t c = 0; c < channels; ++c) dst[c] += w * go[c];
        }
        if (gp != nullptr) {
          const scalar_t* v = g + cr.offset;
          double dot = 0.0;
          for (std::int64_t c = 0; c < channels; ++c) dot += go[c] * v[c];
          acc[0] += cr.dwx * dot;
          acc[1] += cr.dwy * dot;
          acc[2] += cr.dwz * dot;
        }
      }
      if (gp != nullptr) {
        for (int a = 0; a < 3; ++a) {
          gp[a] = static_cast<scalar_t>(acc[a] * mask[a]);
        }
      }
    }
  }
}

// Grid arrives as B x C x X x Y x Z.
torch::Tensor to_channel_last(const torch::Tensor& grid) {
  return grid.permute({0, 2, 3, 4, 1}).contiguous();
}

class TrilinearSampleFunction
    : public torch::autograd::Function<TrilinearSampleFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx,
                               const torch::Tensor& grid,
                               const torch::Tensor& points,
                               std::int64_t padding) {
    const auto grid_cl = to_channel_last(grid);
    const auto pts = points.contiguous();
    const std::int64_t batch = grid.size(0);
    const std::int64_t channels = grid.size(1);
    const Index3 res{grid.size(2), grid.size(3), grid.size(4)};
    const std::int64_t num_points = points.size(1);
    auto out = torch::empty({batch, num_points, channels}, grid.options());
    AT_DISPATCH_FLOATING_TYPES(grid.scalar_type(), "trilinear_forward", [&] {
      trilinear_forward_kernel<scalar_t>(
          grid_cl.data_ptr<scalar_t>(), pts.data_ptr<scalar_t>(),
          out.data_ptr<scalar_t>(), batch, channels, res, num_points,
          static_cast<Padding>(padding));
    });
    ctx->save_for_backward({grid_cl, pts});
    ctx->saved_data["padding"] = padding;
    ctx->saved_data["needs_grid"] = grid.requires_grad();
    ctx->saved_data["needs_points"] = points.requires_grad();
    return out;
  }

  static torch::autograd::variable_list backward(
      torch::autograd::AutogradContext* ctx,
      torch::autograd::variable_list grad_outputs) {
    const auto saved = ctx->get_saved_variables();
    const auto& grid_cl = saved[0];
    const auto& pts = saved[1];
    const auto padding = static_cast<Padding>(ctx->saved_data["padding"].toInt());
    const bool needs_grid = ctx->saved_data["needs_grid"].toBool();
    const bool needs_points = ctx->saved_data["needs_points"].toBool();
    const auto grad_out = grad_outputs[0].contiguous();
    const std::int64_t batch = grid_cl.size(0);
    const Index3 res{grid_cl.size(1), grid_cl.size(2), grid_cl.size(3)};
    const std::int64_t channels = grid_cl.size(4);
    const std::int64_t num_points = pts.size(1);
    torch::Tensor grad_grid_cl;
    torch::Tensor grad_points;
    if (needs_grid) grad_grid_cl = torch::zeros_like(grid_cl);
    if (needs_points) grad_points = torch::zeros_like(pts);
    AT_DISPATCH_FLOATING_TYPES(grid_cl.scalar_type(), "trilinear_backward", [&] {
      trilinear_backward_kernel<scalar_t>(
          grid_cl.data_ptr<scalar_t>(), pts.data_ptr<scalar_t>(),
          grad_out.data_ptr<scalar_t>(),
          needs_grid ? grad_grid_cl.data_ptr<scalar_t>() : nullptr,
          needs_points ? grad_points.data_ptr<scalar_t>() : nullptr, batch,
          channels, res, num_points, padding);
    });
    torch::Tensor grad_grid;
    if (needs_grid) grad_grid = grad_grid_cl.permute({0, 4, 1, 2, 3});
    return {grad_grid, grad_points, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor trilinear_sample_batched(const torch::Tensor& grid,
                                       const torch::Tensor& points,
                                       Padding padding) {
  if (grid.dim() != 5) {
    throw ArgumentError("batched trilinear_sample expects B x C x X x Y x Z");
  }
  if (points.dim() != 3 || points.size(2) != 3 ||
      points.size(0) != grid.size(0)) {
    throw ArgumentError("batched trilinear_sample expects B x M x 3 points");
  }
  const auto pts = points.to(grid.scalar_type());
  return TrilinearSampleFunction::apply(grid, pts,
                                        static_cast<std::int64_t>(padding));
}

torch::Tensor trilinear_sample(const torch::Tensor& grid,
                               const torch::Tensor& points, Padding padding) {
  if (grid.dim() != 4) {
    throw ArgumentError("trilinear_sample expects a C x X x Y x Z grid");
  }
  if (points.dim() != 2 || points.size(1) != 3) {
    throw ArgumentError("trilinear_sample expects M x 3 points");
  }
  return trilinear_sample_batched(grid.unsqueeze(0), points.unsqueeze(0),
                                  padding)
      .squeeze(0);
}

// ---------------------------------------------------------------------------

torch::Tensor max_pool_3d(const torch::Tensor& data, const Index3& factor) {
  if (data.dim() != 4) throw ArgumentError("max_pool_3d expects C x X x Y x Z");
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1) {
      throw ArgumentError("max_pool_3d factor must be positive, got " +
                          to_string(factor));
    }
  }
  std::vector<std::int64_t> pad(6, 0);
  bool needs_pad = false;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t n = data.size(a + 1);
    const std::int64_t rem = (factor[a] - n % factor[a]) % factor[a];
    // constant_pad_nd lists the last dimension first.
    pad[(2 - a) * 2 + 1] = rem;
    needs_pad = needs_pad || rem > 0;
  }
  auto input = data;
  if (needs_pad) {
    input = torch::constant_pad_nd(input, pad,
                                   -std::numeric_limits<double>::infinity());
  }
  const std::vector<std::int64_t> k(factor.begin(), factor.end());
  return torch::max_pool3d(input.unsqueeze(0), k, k).squeeze(0);
}

VoxelGrid max_pool_3d(const VoxelGrid& grid, const Index3& factor) {
  grid.validate();
  auto pooled = max_pool_3d(grid.data, factor);
  GridMeta meta = grid.meta;
  for (int a = 0; a < 3; ++a) {
    meta.resolution[a] = pooled.size(a + 1);
    meta.voxel_size[a] *= static_cast<double>(factor[a]);
  }
  return VoxelGrid(meta, pooled);
}

namespace {

torch::Tensor resample_centers(const torch::Tensor& data, const Index3& out_res,
                               const std::array<double, 3>& scale) {
  // out voxel i center maps to in continuous coord (i + 0.5) * scale - 0.5
  const auto opts = torch::TensorOptions().dtype(data.scalar_type());
  std::vector<torch::Tensor> axes;
  for (int a = 0; a < 3; ++a) {
    axes.push_back((torch::arange(out_res[a], opts) + 0.5) * scale[a] - 0.5);
  }
  auto mesh = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
  auto pts = torch::stack({mesh[0].reshape(-1), mesh[1].reshape(-1),
                           mesh[2].reshape(-1)},
                          1);
  auto sampled = trilinear_sample(data, pts, Padding::kBorder);
  return sampled.transpose(0, 1).reshape(
      {data.size(0), out_res[0], out_res[1], out_res[2]});
}

}  // namespace

torch::Tensor downsample_trilinear(const torch::Tensor& data,
                                   const Index3& factor) {
  if (data.dim() != 4) {
    throw ArgumentError("downsample_trilinear expects C x X x Y x Z");
  }
  Index3 out_res;
  std::array<double, 3> scale;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1 || data.size(a + 1) % factor[a] != 0) {
      throw ArgumentError("downsample_trilinear factor " + to_string(factor) +
                          " does not divide the resolution");
    }
    out_res[a] = data.size(a + 1) / factor[a];
    scale[a] = static_cast<double>(factor[a]);
  }
  return resample_centers(data, out_res, scale);
}

torch::Tensor upsample_trilinear(const torch::Tensor& data,
                                 const Index3& factor) {
  if (data.dim() != 4) {
    throw ArgumentError("upsample_trilinear expects C x X x Y x Z");
  }
  Index3 out_res;
  std::array<double, 3> scale;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1) throw ArgumentError("upsample factor must be >= 1");
    out_res[a] = data.size(a + 1) * factor[a];
    scale[a] = 1.0 / static_cast<double>(factor[a]);
  }
  if (factor == Index3{1, 1, 1}) return data;
  return resample_centers(data, out_res, scale);
}

torch::Tensor avg_pool_height(const torch::Tensor& data) {
  if (data.dim() != 4 && data.dim() != 5) {
    throw ArgumentError("avg_pool_height expects [B x] C x X x Y x Z");
  }
  return data.mean(-1);
}

torch::Tensor avg_pool_height(const VoxelGrid& grid) {
  return avg_pool_height(grid.data);
}

torch::Tensor voxel_world_coords(const GridMeta& meta, torch::Dtype dtype) {
  meta.validate();
  const auto opts = torch::TensorOptions().dtype(dtype);
  std::vector<torch::Tensor> axes;
  for (int a = 0; a < 3; ++a) {
    axes.push_back(meta.origin[a] +
                   meta.voxel_size[a] *
                       (torch::arange(meta.resolution[a], opts) + 0.5));
  }
  auto mesh = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
  return torch::stack(
      {mesh[0].reshape(-1), mesh[1].reshape(-1), mesh[2].reshape(-1)}, 1);
}

torch::Tensor map_voxel_centers(const GridMeta& fine, const GridMeta& coarse,
                                const torch::Tensor& flat_indices,
                                torch::Dtype dtype) {
  const auto idx = flat_indices.to(torch::kInt64).contiguous();
  const std::int64_t n = idx.numel();
  auto out = torch::empty({n, 3}, torch::TensorOptions().dtype(torch::kFloat64));
  auto acc = out.accessor<double, 2>();
  const std::int64_t* p = idx.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const Eigen::Vector3d w = fine.world_of(fine.unflatten(p[i]));
    const Eigen::Vector3d c = coarse.continuous_index_of(w);
    acc[i][0] = c[0];
    acc[i][1] = c[1];
    acc[i][2] = c[2];
  }
  return out.to(dtype);
}

}  // namespace voxocc
