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

#include "voxocc/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace voxocc {

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 1) throw ArgumentError("confusion matrix needs >= 1 class");
  counts_.assign(static_cast<std::size_t>(n_) * n_, 0);
}

void ConfusionMatrix::accumulate(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) {
    throw ArgumentError("prediction and ground truth shapes differ: " +
                        std::to_string(pred.numel()) + " vs " + std::to_string(gt.numel()));
  }
  const auto g = gt.reshape(-1).to(torch::kInt64);
  const auto p = pred.reshape(-1).to(torch::kInt64);
  const auto keep = g != kIgnoreLabel;
  const auto gk = g.masked_select(keep), pk = p.masked_select(keep);
  if (gk.numel() == 0) return;
  if (gk.min().item<std::int64_t>() < 0 || gk.max().item<std::int64_t>() >= n_ ||
      pk.min().item<std::int64_t>() < 0 || pk.max().item<std::int64_t>() >= n_) {
    throw ArgumentError("label outside [0, " + std::to_string(n_) + ")");
  }
  const auto hist = torch::bincount(gk * n_ + pk, {}, n_ * n_);
  const auto acc = hist.accessor<std::int64_t, 1>();
  for (int i = 0; i < n_ * n_; ++i) counts_[i] += acc[i];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ArgumentError("merging confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

namespace {

struct ClassCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::int64_t denom() const { return tp + fp + fn; }
};

ClassCounts class_counts(const ConfusionMatrix& cm, int c) {
  ClassCounts k;
  const int n = cm.num_classes();
  k.tp = cm.at(c, c);
  for (int o = 0; o < n; ++o) {
    if (o == c) continue;
    k.fp += cm.at(o, c);
    k.fn += cm.at(c, o);
  }
  return k;
}

double ratio(std::int64_t a, std::int64_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.num_classes());
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto k = class_counts(cm, c);
    out[c] = ratio(k.tp, k.denom());
  }
  return out;
}

MiouResult ssc_miou(const ConfusionMatrix& cm, const std::vector<int>& class_ids,
                    bool exclude_absent) {
  MiouResult r;
  double sum = 0.0;
  int used = 0;
  for (int c : class_ids) {
    if (c < 0 || c >= cm.num_classes()) throw ArgumentError("class id out of range");
    const auto k = class_counts(cm, c);
    r.per_class.push_back(ratio(k.tp, k.denom()));
    if (exclude_absent && k.denom() == 0) continue;
    sum += r.per_class.back();
    ++used;
  }
  r.miou = used == 0 ? 0.0 : sum / used;
  return r;
}

double sc_iou(const ConfusionMatrix& cm, int free_class) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (int g = 0; g < cm.num_classes(); ++g) {
    for (int p = 0; p < cm.num_classes(); ++p) {
      const bool go = g != free_class, po = p != free_class;
      if (go && po) tp += cm.at(g, p);
      if (!go && po) fp += cm.at(g, p);
      if (go && !po) fn += cm.at(g, p);
    }
  }
  return ratio(tp, tp + fp + fn);
}

double sc_iou(const torch::Tensor& pred, const torch::Tensor& gt, int free_class) {
  if (pred.sizes() != gt.sizes()) throw ArgumentError("prediction and ground truth shapes differ");
  const auto g = gt.to(torch::kInt64), p = pred.to(torch::kInt64);
  const auto valid = g != kIgnoreLabel;
  const auto go = valid & (g != free_class), po = valid & (p != free_class);
  return ratio((go & po).sum().item<std::int64_t>(), (go | po).sum().item<std::int64_t>());
}

torch::Tensor point_query_segmentation(const VoxelGrid& scores, const torch::Tensor& points) {
  if (points.dim() != 2 || points.size(1) != 3) throw ArgumentError("points must be M x 3");
  const auto& m = scores.meta;
  const auto labels = scores.data.argmax(0).to(torch::kUInt8).contiguous();
  const auto la = labels.accessor<std::uint8_t, 3>();
  const auto p = points.to(torch::kFloat64).contiguous();
  const auto pa = p.accessor<double, 2>();
  auto out = torch::full({p.size(0)}, kIgnoreLabel, torch::kUInt8);
  auto* o = out.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < p.size(0); ++i) {
    std::int64_t ijk[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      ijk[a] = static_cast<std::int64_t>(std::floor((pa[i][a] - m.origin[a]) / m.voxel_size[a]));
      inside = inside && ijk[a] >= 0 && ijk[a] < m.resolution[a];
    }
    if (inside) o[i] = la[ijk[0]][ijk[1]][ijk[2]];
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["sc_iou"] = sc_iou;
  j["ssc_miou"] = ssc_miou;
  j["free_class"] = free_class;
  j["voxels"] = voxels;
  j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < class_iou.size(); ++c) {
    j["classes"].push_back({{"id", c},
                            {"name", c < class_names.size() ? class_names[c] : ""},
                            {"iou", class_iou[c]}});
  }
  if (point_miou) j["point_miou"] = *point_miou;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.sc_iou = j.at("sc_iou").get<double>();
  r.ssc_miou = j.at("ssc_miou").get<double>();
  r.free_class = j.at("free_class").get<int>();
  r.voxels = j.at("voxels").get<std::int64_t>();
  for (const auto& c : j.at("classes")) {
    r.class_names.push_back(c.at("name").get<std::string>());
    r.class_iou.push_back(c.at("iou").get<double>());
  }
  if (j.contains("point_miou")) r.point_miou = j.at("point_miou").get<double>();
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "sc_iou = " << sc_iou << "\n";
  os << "ssc_miou = " << ssc_miou << "\n";
  if (point_miou) os << "point_miou = " << *point_miou << "\n";
  os << "voxels = " << voxels << "\n";
  for (std::size_t c = 0; c < class_iou.size(); ++c) {
    os << "iou." << (c < class_names.size() ? class_names[c] : std::to_string(c)) << " = "
       << class_iou[c] << "\n";
  }
  return os.str();
}

MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          int free_class, bool exclude_absent) {
  MetricsReport r;
  r.class_names = class_names;
  r.free_class = free_class;
  r.voxels = cm.total();
  std::vector<int> semantic;
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (c != free_class) semantic.push_back(c);
  }
  r.ssc_miou = ssc_miou(cm, semantic, exclude_absent).miou;
  r.sc_iou = sc_iou(cm, free_class);
  r.class_iou = per_class_iou(cm);
  return r;
}

}  // namespace voxocc
