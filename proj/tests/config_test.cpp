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

#include "voxocc/config.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "voxocc/trainer.hpp"

namespace voxocc {
namespace {

bool mentions(const std::vector<std::string>& problems, const std::string& key) {
  return std::any_of(problems.begin(), problems.end(),
                     [&](const std::string& p) { return p.rfind(key, 0) == 0; });
}

std::vector<std::string> problems_of(const nlohmann::json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

TEST(Config, PresetsAreValid) {
  EXPECT_TRUE(config_problems(toy_config()).empty());
  EXPECT_TRUE(config_problems(full_config()).empty());
  EXPECT_EQ(preset_config("toy"), toy_config());
  EXPECT_EQ(preset_config("full"), full_config());
  EXPECT_THROW(preset_config("huge"), ArgumentError);
}

TEST(Config, FullScalePresetValues) {
  const auto c = full_config();
  EXPECT_EQ(c.model.decoder.queries, 100);
  EXPECT_EQ(c.model.decoder.layers, 9);
  EXPECT_EQ(c.model.decoder.channels, 192);
  EXPECT_EQ(c.model.pixel_decoder.layers, 6);
  EXPECT_EQ(c.model.depth_bins.count, 112);
  EXPECT_EQ(c.train.sample_points, 50176);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.loss.cls, 2.0);
  EXPECT_DOUBLE_EQ(c.train.loss.bce, 5.0);
  EXPECT_DOUBLE_EQ(c.train.loss.dice, 5.0);
  EXPECT_DOUBLE_EQ(c.train.loss.no_object, 0.1);
}

TEST(Config, JsonRoundTrip) {
  for (const auto& c : {toy_config(), full_config()}) {
    const auto j = to_json(c);
    EXPECT_EQ(run_config_from_json(j), c);
    EXPECT_EQ(run_config_from_json(nlohmann::json::parse(j.dump())), c);
  }
}

TEST(Config, RandomizedRoundTrip) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    RunConfig c = toy_config();
    c.seed = rng();
    c.data_dir = "scenes_" + std::to_string(trial);
    c.train.steps = static_cast<std::int64_t>(rng() % 1000);
    c.train.lr = std::uniform_real_distribution<double>(1e-5, 1e-2)(rng);
    c.train.beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    c.train.sampling = rng() % 2 ? SamplingMode::kUniform : SamplingMode::kClassGuided;
    c.model.decoder.pooling = rng() % 2 ? PoolingMode::kTrilinear : PoolingMode::kMax;
    c.model.encoder.block.use_aspp = rng() % 2;
    c.train.flip_3d = rng() % 2;
    c.train.lr_milestones = {static_cast<std::int64_t>(1 + rng() % 50),
                             static_cast<std::int64_t>(60 + rng() % 50)};
    ASSERT_TRUE(config_problems(c).empty());
    EXPECT_EQ(run_config_from_json(to_json(c)), c);
  }
}

TEST(Config, MissingFieldsKeepDefaults) {
  const auto c = run_config_from_json(nlohmann::json::parse(R"({"seed": 9, "train": {"steps": 7}})"));
  RunConfig want = toy_config();
  want.seed = 9;
  want.train.steps = 7;
  EXPECT_EQ(c, want);
  EXPECT_EQ(run_config_from_json(nlohmann::json::object()), toy_config());
}

TEST(Config, EveryRangeViolationIsListed) {
  auto j = to_json(toy_config());
  j["train"]["lr"] = -1.0;
  j["train"]["batch_size"] = 0;
  j["train"]["beta"] = -0.5;
  j["model"]["decoder"]["queries"] = 0;
  j["model"]["backbone"]["stride"] = 3;
  const auto p = problems_of(j);
  EXPECT_EQ(p.size(), 5u);
  for (const char* key : {"train.lr", "train.batch_size", "train.beta", "model.decoder.queries",
                          "model.backbone.stride"}) {
    EXPECT_TRUE(mentions(p, key)) << key;
  }
}

TEST(Config, TypeAndUnknownFieldErrorsAreCombined) {
  auto j = to_json(toy_config());
  j["train"]["steps"] = "many";
  j["train"]["learning_rate"] = 0.1;
  j["model"]["encoder"]["variant"] = "transformer";
  j["train"]["threads"] = 0;
  const auto p = problems_of(j);
  EXPECT_TRUE(mentions(p, "train.steps")) << "wrong type";
  EXPECT_TRUE(mentions(p, "train.learning_rate")) << "unknown";
  EXPECT_TRUE(mentions(p, "model.encoder.variant")) << "bad enum";
  EXPECT_TRUE(mentions(p, "train.threads")) << "range";
  EXPECT_EQ(p.size(), 4u);
}

TEST(Config, CrossFieldConsistency) {
  RunConfig c = toy_config();
  c.model.decoder.channels = 48;
  c.model.encoder.in_channels = 16;
  const auto p = config_problems(c);
  EXPECT_TRUE(mentions(p, "model.decoder.channels"));
  EXPECT_TRUE(mentions(p, "model.encoder.in_channels"));
}

TEST(Config, NonObjectRoot) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_FALSE(problems_of(nlohmann::json(3)).empty());
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "voxocc_config_test.json";
  {
    std::ofstream f(path);
    f << to_json(full_config()).dump(2);
  }
  EXPECT_EQ(load_run_config(path), full_config());
  {
    std::ofstream f(path);
    f << "{ not json";
  }
  EXPECT_THROW(load_run_config(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path), ConfigError);
}

TEST(Schedule, StepDecayAtMilestones) {
  TrainConfig t;
  t.lr = 1.0;
  t.lr_gamma = 0.5;
  t.lr_milestones = {3, 5};
  const double want[] = {1, 1, 1, 0.5, 0.5, 0.25, 0.25};
  for (int s = 0; s < 7; ++s) EXPECT_DOUBLE_EQ(learning_rate_at(t, s), want[s]) << s;
}

TEST(Schedule, EpochsOverrideSteps) {
  TrainConfig t;
  t.steps = 11;
  EXPECT_EQ(planned_steps(t, 5), 11);
  t.epochs = 3;
  t.batch_size = 2;
  EXPECT_EQ(planned_steps(t, 5), 9);
  EXPECT_EQ(planned_steps(t, 4), 6);
}

}  // namespace
}  // namespace voxocc
