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

// Run configuration: model, optimization and ablation toggles, stored as a
// JSON document. Parsing collects every violated field before failing.

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "voxocc/model.hpp"
#include "voxocc/training.hpp"

namespace voxocc {

class ConfigError : public ArgumentError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct TrainConfig {
  std::int64_t steps = 500;
  // When > 0, overrides `steps` with epochs * ceil(scenes / batch_size).
  std::int64_t epochs = 0;
  std::int64_t batch_size = 1;
  double lr = 2e-3;
  double weight_decay = 0.01;
  std::vector<std::int64_t> lr_milestones{350, 450};
  double lr_gamma = 0.2;
  std::int64_t sample_points = 2048;  // K
  double beta = 0.25;
  SamplingMode sampling = SamplingMode::kClassGuided;
  bool sparse_supervision = false;
  LossCoeffs loss;
  double depth_weight = 1.0;
  bool flip_3d = false;
  bool image_flip = false;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  int threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir;
  ModelConfig model;
  TrainConfig train;

  bool operator==(const RunConfig& o) const;
};

// Desk-scale default used by tests and acceptance runs.
RunConfig toy_config();
// Full-scale hyperparameters (128 x 128 x 16 volume, 192-channel decoder,
// K = 50176, lr 1e-4).
RunConfig full_config();
RunConfig preset_config(const std::string& name);  // "toy" | "full"

nlohmann::json to_json(const RunConfig& config);
// Fields missing from `j` keep their toy defaults. Unknown keys, wrong types
// and out-of-range values are all reported in one ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Range and consistency checks; empty when valid.
std::vector<std::string> config_problems(const RunConfig& config);

}  // namespace voxocc
