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

// Occupancy evaluation: confusion matrices, completion IoU, per-class IoU
// and point queries into a predicted volume.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxocc/core.hpp"

namespace voxocc {

// Rows are ground truth, columns prediction. Voxels with gt kIgnoreLabel
// are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void accumulate(const torch::Tensor& pred, const torch::Tensor& gt);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return n_; }
  std::int64_t at(int gt, int pred) const { return counts_[gt * n_ + pred]; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  bool operator==(const ConfusionMatrix& o) const { return n_ == o.n_ && counts_ == o.counts_; }

 private:
  int n_;
  std::vector<std::int64_t> counts_;
};

// TP / (TP + FP + FN) per class; 0 when the denominator is 0.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;  // aligned with the requested class ids
};

// Mean IoU over `class_ids`. With exclude_absent, classes whose IoU
// denominator is 0 are left out of the mean (they still report 0).
MiouResult ssc_miou(const ConfusionMatrix& cm, const std::vector<int>& class_ids,
                    bool exclude_absent = false);

// IoU of the occupied (label != free_class) set.
double sc_iou(const ConfusionMatrix& cm, int free_class);
double sc_iou(const torch::Tensor& pred, const torch::Tensor& gt, int free_class);

// Argmax class of the voxel containing each world point (M x 3), or
// kIgnoreLabel outside the grid. scores: N_c x X x Y x Z. Returns M uint8.
torch::Tensor point_query_segmentation(const VoxelGrid& scores, const torch::Tensor& points);

struct MetricsReport {
  std::vector<std::string> class_names;  // all N_c classes
  int free_class = 0;
  double sc_iou = 0.0;
  double ssc_miou = 0.0;
  std::vector<double> class_iou;  // N_c entries; the free entry is not in the mean
  std::optional<double> point_miou;
  std::int64_t voxels = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  // key = value lines.
  std::string to_text() const;
};

MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          int free_class, bool exclude_absent = false);

}  // namespace voxocc
