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

// Supervision for the mask-classification decoder: class statistics and
// class-guided point sampling, bipartite matching of queries to per-class
// segments, and the point-sampled loss.

#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "voxocc/core.hpp"
#include "voxocc/occ_decoder.hpp"

namespace voxocc {

inline constexpr double kProbEps = 1e-12;
// Label of sparse-mode random samples: a mask negative for every segment.
inline constexpr std::int64_t kUnlabeled = -1;

struct ClassStats {
  std::vector<std::int64_t> counts;  // n_c
  std::vector<double> weights;       // w_c, empty until computed
  double beta = 0.25;
};

// Per-class labeled voxel counts over `grids`; kIgnoreLabel is skipped.
ClassStats class_frequencies(const std::vector<LabelGrid>& grids, int num_classes);

// w = (1/n / min(1/n))^beta; classes with n = 0 get weight 0.
std::vector<double> sampling_weights(const std::vector<std::int64_t>& counts, double beta);

enum class SamplingMode { kClassGuided, kUniform };

std::string to_string(SamplingMode m);
SamplingMode sampling_mode_from_string(const std::string& name);

struct SampleSet {
  torch::Tensor indices;  // K, int64 flat voxel indices into the label grid
  torch::Tensor labels;   // K, int64 class or kUnlabeled
  bool sparse = false;
};

// K voxels drawn with replacement, voxel v with probability proportional to
// weights[label(v)] (or 1 for every labeled voxel in uniform mode).
SampleSet sample_points(const LabelGrid& grid, const std::vector<double>& weights,
                        std::int64_t k, SamplingMode mode, std::mt19937_64& rng);

// K/2 voxels of surface points (uniform over the in-bounds points, with
// replacement) carrying the point labels, then K/2 uniform random voxels
// without labels. points: M x 3 world coordinates, labels: M.
SampleSet sample_points_sparse(const torch::Tensor& points, const torch::Tensor& labels,
                               const GridMeta& meta, std::int64_t k, std::mt19937_64& rng);

// Classes present in `labels` (any shape), ascending; ignore and unlabeled
// entries are skipped. These are the ground-truth segments of a sample.
std::vector<int> present_classes(const torch::Tensor& labels, int num_classes);

// Binary targets N_gt x K: sample k belongs to segment j iff its label is
// classes[j].
torch::Tensor segment_targets(const SampleSet& samples, const std::vector<int>& classes);

// Mask logits N_q x X' x Y' x Z' read at the centers of label-grid voxels
// `indices` (label grid resolution `label_res`), trilinear with border
// clamping. Returns N_q x K.
torch::Tensor sample_mask_logits(const torch::Tensor& mask_logits, const Index3& label_res,
                                 const torch::Tensor& indices);

struct LossCoeffs {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double no_object = 0.1;
};

// Mean point BCE and (1 + 2 sum pt) / (1 + sum p + sum t) Dice loss between
// every prediction row (N_q x K probabilities) and every target row
// (N_gt x K). Returns N_q x N_gt each.
torch::Tensor pairwise_bce(const torch::Tensor& probs, const torch::Tensor& targets);
torch::Tensor pairwise_dice(const torch::Tensor& probs, const torch::Tensor& targets);

// cost[i, j] = -cls * class_probs[i, c_j] + bce * BCE + dice * Dice.
// class_probs N_q x (N_c + 1), point_probs N_q x K.
torch::Tensor matching_cost(const torch::Tensor& class_probs, const torch::Tensor& point_probs,
                            const torch::Tensor& targets, const std::vector<int>& classes,
                            const LossCoeffs& coeffs);

// Minimum-cost injective gt -> query assignment for cost N_q x N_gt. Among
// optimal assignments the lexicographically smallest (query of gt 0, query of
// gt 1, ...) is returned. Result[j] = query matched to gt j.
std::vector<int> hungarian_match(const torch::Tensor& cost);
double assignment_cost(const torch::Tensor& cost, const std::vector<int>& assignment);

// Ground truth for one batch element.
struct SampleTarget {
  SampleSet samples;
  std::vector<int> classes;  // segments
  torch::Tensor targets;     // N_gt x K
};

SampleTarget make_sample_target(SampleSet samples, std::vector<int> classes);

struct LossBreakdown {
  torch::Tensor total;  // scalar, differentiable
  double cls = 0.0, bce = 0.0, dice = 0.0;  // unweighted means
  std::vector<std::vector<int>> assignments;  // per batch element
};

// Matching on the final layer, reused for every layer in `per_layer`; the
// weighted sum of class cross-entropy (no-object targets down-weighted),
// point BCE and point Dice, averaged over layers and batch elements.
LossBreakdown mask_cls_loss(const std::vector<MaskPrediction>& per_layer,
                            const std::vector<SampleTarget>& batch, const Index3& label_res,
                            const LossCoeffs& coeffs);

torch::Tensor total_loss(const torch::Tensor& mask_cls, const torch::Tensor& depth);

}  // namespace voxocc
