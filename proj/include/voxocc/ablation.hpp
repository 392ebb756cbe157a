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

// Ablation variants as "key=value,key=value" toggle lists over a base config,
// and the train-then-evaluate runner behind the sweep tables.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxocc/config.hpp"
#include "voxocc/trainer.hpp"

namespace voxocc {

struct Toggle {
  std::string key;
  std::vector<std::string> values;
};

// pooling, sampling, encoder, soft_sum, shared_attention, aspp, flip_3d,
// image_flip.
const std::vector<Toggle>& ablation_toggles();

using Variant = std::vector<std::pair<std::string, std::string>>;

// Throws ArgumentError on unknown keys or values. An empty string is the
// base config.
Variant parse_variant(const std::string& spec);
std::string variant_name(const Variant& v);
RunConfig apply_variant(RunConfig base, const Variant& v);

// The four pooling x sampling cells.
std::vector<Variant> pooling_sampling_sweep();

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  MetricsReport report;
};

AblationRow run_variant(const RunConfig& base, const Variant& v, std::uint64_t seed,
                        const Dataset& train, const Dataset& eval);

// Mean and sample standard deviation over seeds of one variant.
struct AblationSummary {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::int64_t steps = 0;
  double ssc_miou = 0.0, ssc_miou_std = 0.0;
  double sc_iou = 0.0, sc_iou_std = 0.0;
  std::vector<double> class_iou;
};
AblationSummary summarize(const std::vector<AblationRow>& rows);

std::string ablation_csv_header(const std::vector<std::string>& class_names);
std::string ablation_csv_row(const AblationSummary& row);

}  // namespace voxocc
