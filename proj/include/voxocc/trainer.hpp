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

// Training loop, checkpoints and evaluation.
//
// A checkpoint is a directory holding manifest.json (config, step, class
// table, grid, sampler weights, rng state) and state.occf (parameters,
// buffers and AdamW moments as named arrays).

#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "voxocc/config.hpp"
#include "voxocc/data.hpp"
#include "voxocc/metrics.hpp"
#include "voxocc/model.hpp"
#include "voxocc/training.hpp"

namespace voxocc {

inline constexpr int kCheckpointVersion = 1;

struct StepLog {
  std::int64_t step = 0;  // 1-based index of the step just taken
  double lr = 0.0;
  double total = 0.0, mask_cls = 0.0, cls = 0.0, bce = 0.0, dice = 0.0, depth = 0.0;
};

std::string loss_csv_header();
std::string loss_csv_row(const StepLog& log);

// Step size for the given 0-based step: lr * gamma^(milestones passed).
double learning_rate_at(const TrainConfig& config, std::int64_t step);
std::int64_t planned_steps(const TrainConfig& config, std::size_t scenes);

class Trainer {
 public:
  // Seeds torch and the sampler from config.seed; the dataset must outlive
  // the trainer.
  Trainer(RunConfig config, const Dataset& dataset);

  // Restores model, optimizer and sampler state; the config and dataset
  // grid must match what the checkpoint was trained with.
  static Trainer resume(const std::filesystem::path& checkpoint, const Dataset& dataset);

  StepLog step();
  // One update on the given scenes, drawing samples and augmentations from
  // `rng`. Does not advance the schedule position used by step().
  StepLog step_on(const std::vector<std::size_t>& scenes, std::mt19937_64& rng);
  // Fixed-input loss without an update, for probes and tests.
  LossBreakdown loss_on(const std::vector<std::size_t>& scenes, std::mt19937_64& rng,
                        double* depth_loss = nullptr);

  void save_checkpoint(const std::filesystem::path& dir) const;

  std::int64_t steps_done() const { return step_; }
  const RunConfig& config() const { return config_; }
  OccModel& model() { return model_; }
  const ClassStats& class_stats() const { return stats_; }

 private:
  std::vector<std::size_t> batch_for(std::int64_t step) const;
  void set_lr(double lr);

  RunConfig config_;
  const Dataset* dataset_;
  OccModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optim_;
  ClassStats stats_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
};

// Trains to completion, writing loss.csv, periodic checkpoints under
// out/checkpoints/step_NNNNNN and the final one at out/final.
void train_run(const RunConfig& config, const Dataset& dataset, const std::filesystem::path& out,
               bool quiet = false);

struct LoadedModel {
  RunConfig config;
  ClassTable classes;
  GridMeta gt_meta;
  OccModel model{nullptr};
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

// Dense confusion at ground-truth resolution; with `points`, also point
// queries against the stored surface labels.
MetricsReport evaluate(OccModel& model, const RunConfig& config, const Dataset& dataset,
                       bool points, bool exclude_absent = false);

// Final-layer labels at ground-truth resolution for one scene.
LabelGrid predict_scene(OccModel& model, const RunConfig& config, const SceneSample& sample,
                        const GridMeta& gt_meta);

}  // namespace voxocc
