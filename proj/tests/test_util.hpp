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

// Shared helpers for the unit and acceptance suites: finite-difference
// gradient checks and a naive trilinear oracle that never touches the
// library's sampling kernel.

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace voxocc::testing {

// Relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const torch::Tensor& a, const torch::Tensor& b,
                             double floor = 1e-12) {
  const double diff = (a - b).norm().item<double>();
  const double scale =
      std::max({a.norm().item<double>(), b.norm().item<double>(), floor});
  return diff / scale;
}

// Central finite differences of a scalar function of `input` (double).
// `input` is perturbed in place and restored.
inline torch::Tensor numeric_gradient(
    const std::function<double()>& f, torch::Tensor input, double step = 1e-5) {
  torch::NoGradGuard no_grad;
  auto grad = torch::zeros_like(input);
  auto flat = input.view(-1);
  auto gflat = grad.view(-1);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double plus = f();
    flat[i] = orig - step;
    const double minus = f();
    flat[i] = orig;
    gflat[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

// Analytic gradient of scalar `f` with respect to each tensor in `inputs`,
// compared against central differences. Returns the worst relative error.
inline double max_gradient_error(
    const std::function<torch::Tensor()>& f,
    const std::vector<torch::Tensor>& inputs, double step = 1e-5) {
  auto out = f();
  auto grads = torch::autograd::grad({out}, inputs, {}, false, false, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto analytic = grads[i].defined() ? grads[i].detach().clone()
                                       : torch::zeros_like(inputs[i]);
    auto numeric = numeric_gradient(
        [&] {
          torch::NoGradGuard ng;
          return f().item<double>();
        },
        inputs[i].detach(), step);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

// Naive trilinear interpolation with zero padding: grid C x X x Y x Z,
// point in continuous voxel-index coordinates.
inline std::vector<double> naive_trilinear(const torch::Tensor& grid, double x,
                                           double y, double z) {
  const auto g = grid.to(torch::kFloat64).contiguous();
  const auto acc = g.accessor<double, 4>();
  const std::int64_t C = g.size(0);
  std::vector<double> out(C, 0.0);
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  for (int dx = 0; dx < 2; ++dx) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dz = 0; dz < 2; ++dz) {
        const std::int64_t i = static_cast<std::int64_t>(fx) + dx;
        const std::int64_t j = static_cast<std::int64_t>(fy) + dy;
        const std::int64_t k = static_cast<std::int64_t>(fz) + dz;
        if (i < 0 || j < 0 || k < 0 || i >= g.size(1) || j >= g.size(2) ||
            k >= g.size(3)) {
          continue;
        }
        const double w = (dx ? x - fx : 1.0 - (x - fx)) *
                         (dy ? y - fy : 1.0 - (y - fy)) *
                         (dz ? z - fz : 1.0 - (z - fz));
        for (std::int64_t c = 0; c < C; ++c) out[c] += w * acc[c][i][j][k];
      }
    }
  }
  return out;
}

inline torch::TensorOptions f64() {
  return torch::TensorOptions().dtype(torch::kFloat64);
}

}  // namespace voxocc::testing
