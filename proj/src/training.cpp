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

#include "voxocc/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxocc {

namespace F = torch::nn::functional;

ClassStats class_frequencies(const std::vector<LabelGrid>& grids, int num_classes) {
  if (grids.empty()) throw ArgumentError("class frequencies of an empty dataset");
  ClassStats stats;
  stats.counts.assign(num_classes, 0);
  for (const auto& g : grids) {
    g.validate(num_classes);
    const auto flat = g.labels.reshape(-1).to(torch::kInt64);
    const auto hist =
        torch::bincount(flat.masked_select(flat != kIgnoreLabel), {}, num_classes);
    const auto acc = hist.accessor<std::int64_t, 1>();
    for (int c = 0; c < num_classes; ++c) stats.counts[c] += acc[c];
  }
  return stats;
}

std::vector<double> sampling_weights(const std::vector<std::int64_t>& counts, double beta) {
  if (beta < 0.0) throw ArgumentError("sampling beta must be >= 0");
  std::int64_t n_max = 0;
  for (auto n : counts) {
    if (n < 0) throw ArgumentError("negative class count");
    n_max = std::max(n_max, n);
  }
  if (n_max == 0) throw ArgumentError("sampling weights need a class with nonzero count");
  std::vector<double> w(counts.size(), 0.0);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    // (1/n) / min_c'(1/n_c') = n_max / n.
    if (counts[c] > 0) w[c] = std::pow(static_cast<double>(n_max) / counts[c], beta);
  }
  return w;
}

std::string to_string(SamplingMode m) {
  return m == SamplingMode::kClassGuided ? "class_guided" : "uniform";
}

SamplingMode sampling_mode_from_string(const std::string& name) {
  if (name == "class_guided") return SamplingMode::kClassGuided;
  if (name == "uniform") return SamplingMode::kUniform;
  throw ArgumentError("unknown sampling mode '" + name + "' (class_guided | uniform)");
}

SampleSet sample_points(const LabelGrid& grid, const std::vector<double>& weights,
                        std::int64_t k, SamplingMode mode, std::mt19937_64& rng) {
  if (k < 1) throw ArgumentError("sample count must be >= 1");
  const auto flat = grid.labels.reshape(-1).to(torch::kInt64).contiguous();
  const auto* lab = flat.data_ptr<std::int64_t>();
  std::vector<double> vw(flat.numel(), 0.0);
  double total = 0.0;
  for (std::int64_t v = 0; v < flat.numel(); ++v) {
    if (lab[v] == kIgnoreLabel) continue;
    if (lab[v] < 0 || lab[v] >= static_cast<std::int64_t>(weights.size())) {
      throw ArgumentError("label " + std::to_string(lab[v]) + " has no sampling weight");
    }
    vw[v] = mode == SamplingMode::kUniform ? 1.0 : weights[lab[v]];
    total += vw[v];
  }
  if (total <= 0.0) throw ArgumentError("label grid has no sampleable voxel");
  std::discrete_distribution<std::int64_t> dist(vw.begin(), vw.end());
  SampleSet s;
  s.indices = torch::empty({k}, torch::kInt64);
  s.labels = torch::empty({k}, torch::kInt64);
  auto* idx = s.indices.data_ptr<std::int64_t>();
  auto* out = s.labels.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < k; ++i) {
    idx[i] = dist(rng);
    out[i] = lab[idx[i]];
  }
  return s;
}

SampleSet sample_points_sparse(const torch::Tensor& points, const torch::Tensor& labels,
                               const GridMeta& meta, std::int64_t k, std::mt19937_64& rng) {
  if (k < 2 || k % 2 != 0) throw ArgumentError("sparse sampling needs an even K >= 2");
  if (points.dim() != 2 || points.size(1) != 3 || labels.numel() != points.size(0)) {
    throw ArgumentError("surface points must be M x 3 with M labels");
  }
  const auto p = points.to(torch::kFloat64).contiguous();
  const auto l = labels.reshape(-1).to(torch::kInt64).contiguous();
  const auto pa = p.accessor<double, 2>();
  const auto la = l.accessor<std::int64_t, 1>();
  const auto& r = meta.resolution;
  std::vector<std::int64_t> vox, vlab;
  for (std::int64_t m = 0; m < p.size(0); ++m) {
    if (la[m] == kIgnoreLabel) continue;
    std::int64_t ijk[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      ijk[a] = static_cast<std::int64_t>(std::floor((pa[m][a] - meta.origin[a]) / meta.voxel_size[a]));
      inside = inside && ijk[a] >= 0 && ijk[a] < r[a];
    }
    if (!inside) continue;
    vox.push_back((ijk[0] * r[1] + ijk[1]) * r[2] + ijk[2]);
    vlab.push_back(la[m]);
  }
  if (vox.empty()) throw ArgumentError("no labeled surface point inside the grid");
  std::uniform_int_distribution<std::size_t> pick(0, vox.size() - 1);
  std::uniform_int_distribution<std::int64_t> any(0, r[0] * r[1] * r[2] - 1);
  SampleSet s;
  s.sparse = true;
  s.indices = torch::empty({k}, torch::kInt64);
  s.labels = torch::empty({k}, torch::kInt64);
  auto* idx = s.indices.data_ptr<std::int64_t>();
  auto* out = s.labels.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < k / 2; ++i) {
    const auto j = pick(rng);
    idx[i] = vox[j];
    out[i] = vlab[j];
  }
  for (std::int64_t i = k / 2; i < k; ++i) {
    idx[i] = any(rng);
    out[i] = kUnlabeled;
  }
  return s;
}

std::vector<int> present_classes(const torch::Tensor& labels, int num_classes) {
  const auto flat = labels.reshape(-1).to(torch::kInt64);
  const auto valid = flat.masked_select((flat != kIgnoreLabel) & (flat != kUnlabeled));
  if (valid.numel() > 0 && (valid.min().item<std::int64_t>() < 0 ||
                            valid.max().item<std::int64_t>() >= num_classes)) {
    throw ArgumentError("label out of range for " + std::to_string(num_classes) + " classes");
  }
  const auto hist = torch::bincount(valid, {}, num_classes);
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) {
    if (hist[c].item<std::int64_t>() > 0) out.push_back(c);
  }
  return out;
}

torch::Tensor segment_targets(const SampleSet& samples, const std::vector<int>& classes) {
  const auto k = samples.labels.numel();
  if (classes.empty()) return torch::zeros({0, k});
  const auto cls = torch::tensor(std::vector<std::int64_t>(classes.begin(), classes.end()));
  return (samples.labels.unsqueeze(0) == cls.unsqueeze(1)).to(torch::kFloat32);
}

torch::Tensor sample_mask_logits(const torch::Tensor& mask_logits, const Index3& label_res,
                                 const torch::Tensor& indices) {
  if (mask_logits.dim() != 4) throw ArgumentError("mask logits must be N_q x X x Y x Z");
  const auto idx = indices.to(torch::kInt64);
  const std::int64_t yz = label_res[1] * label_res[2];
  const auto ijk = torch::stack({idx.div(yz, "floor"), idx.div(label_res[2], "floor")
                                                           .remainder(label_res[1]),
                                 idx.remainder(label_res[2])},
                                1)
                       .to(mask_logits.scalar_type());
  std::vector<double> scale(3);
  for (int a = 0; a < 3; ++a) {
    scale[a] = static_cast<double>(mask_logits.size(a + 1)) / static_cast<double>(label_res[a]);
  }
  const auto pts = (ijk + 0.5) * torch::tensor(scale, mask_logits.options()) - 0.5;
  return trilinear_sample(mask_logits, pts, Padding::kBorder).t();
}

torch::Tensor pairwise_bce(const torch::Tensor& probs, const torch::Tensor& targets) {
  const auto t = targets.to(probs.scalar_type());
  const auto k = std::max<std::int64_t>(probs.size(1), 1);
  const auto lp = torch::log(probs.clamp(kProbEps, 1.0));
  const auto ln = torch::log((1.0 - probs).clamp(kProbEps, 1.0));
  return -(torch::matmul(lp, t.t()) + torch::matmul(ln, (1.0 - t).t())) / static_cast<double>(k);
}

torch::Tensor pairwise_dice(const torch::Tensor& probs, const torch::Tensor& targets) {
  const auto t = targets.to(probs.scalar_type());
  const auto num = 2.0 * torch::matmul(probs, t.t()) + 1.0;
  const auto den = probs.sum(1).unsqueeze(1) + t.sum(1).unsqueeze(0) + 1.0;
  return 1.0 - num / den;
}

torch::Tensor matching_cost(const torch::Tensor& class_probs, const torch::Tensor& point_probs,
                            const torch::Tensor& targets, const std::vector<int>& classes,
                            const LossCoeffs& coeffs) {
  if (classes.empty()) return torch::zeros({class_probs.size(0), 0}, class_probs.options());
  if (targets.size(0) != static_cast<std::int64_t>(classes.size()) ||
      targets.size(1) != point_probs.size(1)) {
    throw ArgumentError("segment targets do not match classes / samples");
  }
  const auto cls = torch::tensor(std::vector<std::int64_t>(classes.begin(), classes.end()));
  return -coeffs.cls * class_probs.index_select(1, cls) +
         coeffs.bce * pairwise_bce(point_probs, targets) +
         coeffs.dice * pairwise_dice(point_probs, targets);
}

namespace {

using Matrix = std::vector<std::vector<double>>;

// Rows <= columns; returns the minimum total and the column of every row.
double solve_assignment(const Matrix& a, std::vector<int>* row_to_col) {
  const int n = static_cast<int>(a.size());
  if (n == 0) {
    if (row_to_col) row_to_col->clear();
    return 0.0;
  }
  const int m = static_cast<int>(a[0].size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> r(n, -1);
  double total = 0.0;
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) r[p[j] - 1] = j - 1;
  }
  for (int i = 0; i < n; ++i) total += a[i][r[i]];
  if (row_to_col) *row_to_col = std::move(r);
  return total;
}

// Optimum of rows [first, n) over the columns not yet taken.
double reduced_optimum(const Matrix& a, std::size_t first, const std::vector<char>& taken) {
  Matrix sub;
  for (std::size_t i = first; i < a.size(); ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      if (!taken[j]) row.push_back(a[i][j]);
    }
    sub.push_back(std::move(row));
  }
  return solve_assignment(sub, nullptr);
}

}  // namespace

std::vector<int> hungarian_match(const torch::Tensor& cost) {
  if (cost.dim() != 2) throw ArgumentError("cost matrix must be N_q x N_gt");
  const auto nq = cost.size(0), ng = cost.size(1);
  if (ng > nq) {
    throw ArgumentError("more segments (" + std::to_string(ng) + ") than queries (" +
                        std::to_string(nq) + ")");
  }
  if (ng == 0) return {};
  const auto c = cost.detach().to(torch::kFloat64).contiguous();
  if (!torch::isfinite(c).all().item<bool>()) throw ArgumentError("cost matrix is not finite");
  const auto acc = c.accessor<double, 2>();
  Matrix a(ng, std::vector<double>(nq));  // gt rows, query columns
  for (std::int64_t j = 0; j < ng; ++j)
    for (std::int64_t i = 0; i < nq; ++i) a[j][i] = acc[i][j];

  std::vector<int> result;
  const double best = solve_assignment(a, &result);
  const double tol = 1e-9 * (1.0 + std::abs(best));
  // Walk gts in order, giving each the lowest query still completing an
  // optimal assignment.
  std::vector<char> taken(nq, 0);
  double fixed = 0.0;
  for (std::int64_t j = 0; j < ng; ++j) {
    for (std::int64_t i = 0; i < nq; ++i) {
      if (taken[i]) continue;
      taken[i] = 1;
      const double total = fixed + a[j][i] + reduced_optimum(a, j + 1, taken);
      if (total <= best + tol) {
        result[j] = static_cast<int>(i);
        fixed += a[j][i];
        break;
      }
      taken[i] = 0;
    }
  }
  return result;
}

double assignment_cost(const torch::Tensor& cost, const std::vector<int>& assignment) {
  double s = 0.0;
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    s += cost[assignment[j]][static_cast<std::int64_t>(j)].item<double>();
  }
  return s;
}

SampleTarget make_sample_target(SampleSet samples, std::vector<int> classes) {
  SampleTarget t;
  t.targets = segment_targets(samples, classes);
  t.samples = std::move(samples);
  t.classes = std::move(classes);
  return t;
}

LossBreakdown mask_cls_loss(const std::vector<MaskPrediction>& per_layer,
                            const std::vector<SampleTarget>& batch, const Index3& label_res,
                            const LossCoeffs& coeffs) {
  if (per_layer.empty()) throw ArgumentError("no predictions to supervise");
  const auto& last = per_layer.back();
  if (last.mask_logits.size(0) != static_cast<std::int64_t>(batch.size())) {
    throw ArgumentError("batch size of predictions and targets differ");
  }
  const auto nq = last.class_logits.size(1);
  const auto nc1 = last.class_logits.size(2);
  const auto opts = last.class_logits.options();
  auto class_weight = torch::ones({nc1}, opts);
  class_weight[nc1 - 1] = coeffs.no_object;

  LossBreakdown out;
  out.total = torch::zeros({}, opts);
  double terms = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tgt = batch[b];
    const auto bi = static_cast<std::int64_t>(b);
    std::vector<int> assign;
    {
      torch::NoGradGuard ng;
      const auto probs =
          torch::sigmoid(sample_mask_logits(last.mask_logits[bi], label_res, tgt.samples.indices));
      assign = hungarian_match(matching_cost(last.class_probs[bi], probs, tgt.targets,
                                             tgt.classes, coeffs));
    }
    auto cls_target = torch::full({nq}, nc1 - 1, torch::kInt64);
    for (std::size_t j = 0; j < assign.size(); ++j) cls_target[assign[j]] = tgt.classes[j];
    const auto matched = torch::tensor(std::vector<std::int64_t>(assign.begin(), assign.end()),
                                       torch::kInt64);

    for (const auto& pred : per_layer) {
      const auto ce = F::cross_entropy(pred.class_logits[bi], cls_target,
                                       F::CrossEntropyFuncOptions().weight(class_weight));
      auto layer_loss = coeffs.cls * ce;
      out.cls += ce.item<double>();
      if (!assign.empty()) {
        const auto logits = sample_mask_logits(pred.mask_logits[bi].index_select(0, matched),
                                               label_res, tgt.samples.indices);
        const auto p = torch::sigmoid(logits);
        const auto t = tgt.targets.to(p.scalar_type());
        const auto bce = -(t * torch::log(p.clamp(kProbEps, 1.0)) +
                           (1.0 - t) * torch::log((1.0 - p).clamp(kProbEps, 1.0)))
                              .mean(1)
                              .mean();
        const auto dice =
            (1.0 - (2.0 * (p * t).sum(1) + 1.0) / (p.sum(1) + t.sum(1) + 1.0)).mean();
        layer_loss = layer_loss + coeffs.bce * bce + coeffs.dice * dice;
        out.bce += bce.item<double>();
        out.dice += dice.item<double>();
      }
      out.total = out.total + layer_loss;
      terms += 1.0;
    }
    out.assignments.push_back(std::move(assign));
  }
  out.total = out.total / terms;
  out.cls /= terms;
  out.bce /= terms;
  out.dice /= terms;
  return out;
}

torch::Tensor total_loss(const torch::Tensor& mask_cls, const torch::Tensor& depth) {
  return mask_cls + depth;
}

}  // namespace voxocc
