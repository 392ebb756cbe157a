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

#include "voxocc/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace voxocc {

const std::vector<Toggle>& ablation_toggles() {
  static const std::vector<Toggle> toggles = {
      {"pooling", {"max", "trilinear"}},
      {"sampling", {"class_guided", "uniform"}},
      {"encoder", {"dual_path", "local_only", "global_only", "conv3d"}},
      {"soft_sum", {"on", "off"}},
      {"shared_attention", {"on", "off"}},
      {"aspp", {"on", "off"}},
      {"flip_3d", {"on", "off"}},
      {"image_flip", {"on", "off"}},
  };
  return toggles;
}

Variant parse_variant(const std::string& spec) {
  Variant out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ArgumentError("variant entry '" + item + "' needs key=value");
    const auto key = item.substr(0, eq), value = item.substr(eq + 1);
    const auto& ts = ablation_toggles();
    const auto t = std::find_if(ts.begin(), ts.end(), [&](const Toggle& x) { return x.key == key; });
    if (t == ts.end()) throw ArgumentError("unknown variant toggle '" + key + "'");
    if (std::find(t->values.begin(), t->values.end(), value) == t->values.end()) {
      throw ArgumentError("toggle '" + key + "' has no value '" + value + "'");
    }
    for (const auto& [k, _] : out) {
      if (k == key) throw ArgumentError("toggle '" + key + "' given twice");
    }
    out.emplace_back(key, value);
  }
  return out;
}

std::string variant_name(const Variant& v) {
  if (v.empty()) return "base";
  std::string s;
  for (const auto& [k, val] : v) s += (s.empty() ? "" : ",") + k + "=" + val;
  return s;
}

RunConfig apply_variant(RunConfig c, const Variant& v) {
  for (const auto& [k, val] : v) {
    const bool on = val == "on";
    auto& b = c.model.encoder.block;
    if (k == "pooling") c.model.decoder.pooling = pooling_mode_from_string(val);
    if (k == "sampling") c.train.sampling = sampling_mode_from_string(val);
    if (k == "encoder") c.model.encoder.variant = encoder_variant_from_string(val);
    if (k == "soft_sum") b.use_soft_sum = on;
    if (k == "shared_attention") b.use_shared_attention = on;
    if (k == "aspp") b.use_aspp = on;
    if (k == "flip_3d") c.train.flip_3d = on;
    if (k == "image_flip") c.train.image_flip = on;
  }
  return c;
}

std::vector<Variant> pooling_sampling_sweep() {
  std::vector<Variant> out;
  for (const char* p : {"trilinear", "max"}) {
    for (const char* s : {"uniform", "class_guided"}) {
      out.push_back({{"pooling", p}, {"sampling", s}});
    }
  }
  return out;
}

AblationRow run_variant(const RunConfig& base, const Variant& v, std::uint64_t seed,
                        const Dataset& train, const Dataset& eval) {
  RunConfig c = apply_variant(base, v);
  c.seed = seed;
  Trainer t(c, train);
  const auto steps = planned_steps(c.train, train.samples.size());
  for (std::int64_t s = 0; s < steps; ++s) t.step();
  AblationRow row;
  row.variant = variant_name(v);
  row.seed = seed;
  row.steps = steps;
  row.report = evaluate(t.model(), c, eval, false);
  return row;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double m = 0.0;
  for (double v : x) m += v / n;
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, x.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

}  // namespace

AblationSummary summarize(const std::vector<AblationRow>& rows) {
  if (rows.empty()) throw ArgumentError("nothing to summarize");
  AblationSummary s;
  s.variant = rows.front().variant;
  s.steps = rows.front().steps;
  std::vector<double> ssc, sc;
  s.class_iou.assign(rows.front().report.class_iou.size(), 0.0);
  for (const auto& r : rows) {
    if (r.variant != s.variant) throw ArgumentError("rows from different variants");
    s.seeds.push_back(r.seed);
    ssc.push_back(r.report.ssc_miou);
    sc.push_back(r.report.sc_iou);
    for (std::size_t c = 0; c < s.class_iou.size(); ++c) {
      s.class_iou[c] += r.report.class_iou[c] / static_cast<double>(rows.size());
    }
  }
  std::tie(s.ssc_miou, s.ssc_miou_std) = mean_std(ssc);
  std::tie(s.sc_iou, s.sc_iou_std) = mean_std(sc);
  return s;
}

std::string ablation_csv_header(const std::vector<std::string>& class_names) {
  std::string s = "variant,seeds,steps,ssc_miou,ssc_miou_std,sc_iou,sc_iou_std";
  for (const auto& n : class_names) s += ",iou." + n;
  return s;
}

std::string ablation_csv_row(const AblationSummary& row) {
  std::ostringstream out;
  char buf[32];
  // Variant names contain commas.
  out << '"' << row.variant << "\"," << row.seeds.size() << "," << row.steps;
  auto put = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    out << "," << buf;
  };
  put(row.ssc_miou);
  put(row.ssc_miou_std);
  put(row.sc_iou);
  put(row.sc_iou_std);
  for (double x : row.class_iou) put(x);
  return out.str();
}

}  // namespace voxocc
