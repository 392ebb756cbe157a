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

#include "voxocc/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "voxocc/io.hpp"

namespace voxocc {

std::string loss_csv_header() { return "step,lr,total,mask_cls,cls,bce,dice,depth"; }

std::string loss_csv_row(const StepLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(l.step), l.lr, l.total, l.mask_cls, l.cls, l.bce, l.dice,
                l.depth);
  return buf;
}

double learning_rate_at(const TrainConfig& config, std::int64_t step) {
  double lr = config.lr;
  for (auto m : config.lr_milestones) {
    if (step >= m) lr *= config.lr_gamma;
  }
  return lr;
}

std::int64_t planned_steps(const TrainConfig& config, std::size_t scenes) {
  if (config.epochs <= 0) return config.steps;
  const auto n = static_cast<std::int64_t>(scenes);
  return config.epochs * ((n + config.batch_size - 1) / config.batch_size);
}

namespace {

std::vector<LabelGrid> label_grids(const Dataset& d) {
  std::vector<LabelGrid> out;
  for (const auto& s : d.samples) out.push_back(s.labels);
  return out;
}

void check_dataset(const RunConfig& config, const Dataset& dataset) {
  if (dataset.samples.empty()) throw ArgumentError("training dataset has no samples");
  if (dataset.classes.size() != config.model.decoder.num_classes) {
    throw ArgumentError("dataset has " + std::to_string(dataset.classes.size()) +
                        " classes, model.decoder.num_classes is " +
                        std::to_string(config.model.decoder.num_classes));
  }
  for (int a = 0; a < 3; ++a) {
    if (dataset.meta.resolution[a] % config.model.volume_downsample != 0) {
      throw ArgumentError("dataset grid " + to_string(dataset.meta.resolution) +
                          " is not divisible by model.volume_downsample");
    }
  }
}

CameraView mirror_image(const CameraView& v) {
  CameraView out = v;
  out.image = torch::flip(v.image, {2});
  if (v.has_depth()) out.gt_depth = torch::flip(v.gt_depth, {1});
  out.image_flipped = !v.image_flipped;
  return out;
}

}  // namespace

Trainer::Trainer(RunConfig config, const Dataset& dataset)
    : config_(std::move(config)), dataset_(&dataset), rng_(config_.seed) {
  const auto problems = config_problems(config_);
  if (!problems.empty()) throw ConfigError(problems);
  check_dataset(config_, dataset);
  torch::set_num_threads(config_.train.threads);
  torch::manual_seed(config_.seed);
  model_ = OccModel(config_.model);
  optim_ = std::make_unique<torch::optim::AdamW>(
      model_->parameters(),
      torch::optim::AdamWOptions(config_.train.lr).weight_decay(config_.train.weight_decay));
  stats_ = class_frequencies(label_grids(dataset), dataset.classes.size());
  stats_.beta = config_.train.beta;
  stats_.weights = sampling_weights(stats_.counts, stats_.beta);
}

std::vector<std::size_t> Trainer::batch_for(std::int64_t step) const {
  const auto n = dataset_->samples.size();
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order(n);
  for (std::int64_t i = 0; i < config_.train.batch_size; ++i) {
    const std::int64_t g = step * config_.train.batch_size + i;
    const std::int64_t epoch = g / static_cast<std::int64_t>(n);
    if (epoch != cached_epoch) {
      // Per-epoch permutation from its own stream, so resuming needs no
      // extra state.
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle(config_.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
      std::shuffle(order.begin(), order.end(), shuffle);
      cached_epoch = epoch;
    }
    out.push_back(order[g % n]);
  }
  return out;
}

void Trainer::set_lr(double lr) {
  for (auto& g : optim_->param_groups()) {
    static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
  }
}

LossBreakdown Trainer::loss_on(const std::vector<std::size_t>& scenes, std::mt19937_64& rng,
                               double* depth_loss) {
  const auto& t = config_.train;
  const int nc = config_.model.decoder.num_classes;
  std::vector<SceneSample> augmented;
  augmented.reserve(scenes.size());
  for (auto idx : scenes) {
    SceneSample s = dataset_->samples.at(idx);
    if (t.flip_3d) {
      const auto pick = std::uniform_int_distribution<int>(0, 2)(rng);
      if (pick == 1) s = flip_3d(s, FlipAxis::kX);
      if (pick == 2) s = flip_3d(s, FlipAxis::kY);
    }
    if (t.image_flip) {
      for (auto& v : s.views) {
        if (std::uniform_int_distribution<int>(0, 1)(rng)) v = mirror_image(v);
      }
    }
    augmented.push_back(std::move(s));
  }
  std::vector<const SceneSample*> batch;
  for (const auto& s : augmented) batch.push_back(&s);
  const auto out = model_->forward(batch, dataset_->meta);

  std::vector<SampleTarget> targets;
  for (const auto& s : augmented) {
    SampleSet set = t.sparse_supervision
                        ? sample_points_sparse(s.points, s.point_labels, s.labels.meta,
                                               t.sample_points, rng)
                        : sample_points(s.labels, stats_.weights, t.sample_points, t.sampling, rng);
    auto classes = present_classes(set.labels, nc);
    targets.push_back(make_sample_target(std::move(set), std::move(classes)));
  }
  auto loss = mask_cls_loss(out.decoder.per_layer, targets, dataset_->meta.resolution, t.loss);

  torch::Tensor depth = torch::zeros({}, loss.total.options());
  int depth_terms = 0;
  const int stride = config_.model.backbone.stride;
  for (std::size_t b = 0; b < augmented.size(); ++b) {
    const auto& views = augmented[b].views;
    std::vector<torch::Tensor> oh, valid;
    for (const auto& v : views) {
      if (!v.has_depth()) continue;
      const auto dt = depth_targets(v, config_.model.depth_bins, stride);
      oh.push_back(dt.one_hot);
      valid.push_back(dt.valid);
    }
    if (oh.size() != views.size()) continue;
    depth = depth + depth_bce_loss(out.depth_logits[b], torch::stack(oh), torch::stack(valid));
    ++depth_terms;
  }
  if (depth_terms > 0) depth = depth / depth_terms;
  if (depth_loss) *depth_loss = depth.item<double>();
  loss.total = total_loss(loss.total, t.depth_weight * depth);
  return loss;
}

StepLog Trainer::step() {
  auto log = step_on(batch_for(step_), rng_);
  ++step_;
  log.step = step_;
  return log;
}

StepLog Trainer::step_on(const std::vector<std::size_t>& scenes, std::mt19937_64& rng) {
  model_->train();
  const double lr = learning_rate_at(config_.train, step_);
  set_lr(lr);
  StepLog log;
  double depth = 0.0;
  auto loss = loss_on(scenes, rng, &depth);
  optim_->zero_grad();
  loss.total.backward();
  optim_->step();
  log.step = step_ + 1;
  log.lr = lr;
  log.total = loss.total.item<double>();
  log.depth = depth;
  log.mask_cls = log.total - config_.train.depth_weight * depth;
  log.cls = loss.cls;
  log.bce = loss.bce;
  log.dice = loss.dice;
  return log;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  NamedArrays arrays;
  std::vector<std::string> names;
  for (const auto& p : model_->named_parameters()) {
    arrays.emplace_back("param." + p.key(), p.value().detach());
    const auto it = optim_->state().find(p.value().unsafeGetTensorImpl());
    if (it == optim_->state().end()) continue;
    const auto& st = static_cast<const torch::optim::AdamWParamState&>(*it->second);
    arrays.emplace_back("adam." + p.key() + ".exp_avg", st.exp_avg());
    arrays.emplace_back("adam." + p.key() + ".exp_avg_sq", st.exp_avg_sq());
    arrays.emplace_back("adam." + p.key() + ".step",
                        torch::tensor(std::vector<std::int64_t>{st.step()}));
  }
  for (const auto& b : model_->named_buffers()) arrays.emplace_back("buffer." + b.key(), b.value());
  write_blob(dir / "state.occf", arrays);

  std::ostringstream rng_state;
  rng_state << rng_;
  nlohmann::json m;
  m["format"] = "voxocc-checkpoint";
  m["version"] = kCheckpointVersion;
  m["step"] = step_;
  m["config"] = to_json(config_);
  m["class_table"] = to_json(dataset_->classes);
  m["grid"] = to_json(dataset_->meta);
  m["class_counts"] = stats_.counts;
  m["class_weights"] = stats_.weights;
  m["rng"] = rng_state.str();
  write_json(dir / "manifest.json", m);
}

namespace {

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw FormatError("no checkpoint at " + dir.string() + " (manifest.json missing)");
  }
  auto m = read_json(path);
  if (m.value("format", "") != "voxocc-checkpoint") {
    throw FormatError(path.string() + ": not a voxocc checkpoint manifest");
  }
  const int version = m.value("version", -1);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  }
  return m;
}

void load_parameters(OccModel& model, const NamedArrays& arrays, const std::filesystem::path& path) {
  torch::NoGradGuard no_grad;
  for (auto& p : model->named_parameters()) {
    const auto& src = find_array(arrays, "param." + p.key(), path);
    if (src.sizes() != p.value().sizes() || src.scalar_type() != p.value().scalar_type()) {
      throw FormatError(path.string() + ": parameter '" + p.key() + "' has the wrong shape");
    }
    p.value().copy_(src);
  }
  for (auto& b : model->named_buffers()) b.value().copy_(find_array(arrays, "buffer." + b.key(), path));
}

}  // namespace

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const Dataset& dataset) {
  const auto m = read_checkpoint_manifest(checkpoint);
  const auto state_path = checkpoint / "state.occf";
  try {
    Trainer t(run_config_from_json(m.at("config")), dataset);
    if (!(grid_meta_from_json(m.at("grid")) == dataset.meta)) {
      throw ArgumentError("checkpoint grid differs from the dataset grid");
    }
    const auto arrays = read_blob(state_path);
    load_parameters(t.model_, arrays, state_path);
    for (const auto& p : t.model_->named_parameters()) {
      const auto key = "adam." + p.key();
      const bool has = std::any_of(arrays.begin(), arrays.end(),
                                   [&](const auto& a) { return a.first == key + ".step"; });
      if (!has) continue;
      auto st = std::make_unique<torch::optim::AdamWParamState>();
      st->step(find_array(arrays, key + ".step", state_path).item<std::int64_t>());
      st->exp_avg(find_array(arrays, key + ".exp_avg", state_path).clone());
      st->exp_avg_sq(find_array(arrays, key + ".exp_avg_sq", state_path).clone());
      t.optim_->state()[p.value().unsafeGetTensorImpl()] = std::move(st);
    }
    t.step_ = m.at("step").get<std::int64_t>();
    t.stats_.counts = m.at("class_counts").get<std::vector<std::int64_t>>();
    t.stats_.weights = m.at("class_weights").get<std::vector<double>>();
    std::istringstream rng_state(m.at("rng").get<std::string>());
    rng_state >> t.rng_;
    if (!rng_state) throw FormatError(checkpoint.string() + ": unreadable rng state");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(checkpoint.string() + ": " + e.what());
  }
}

void train_run(const RunConfig& config, const Dataset& dataset, const std::filesystem::path& out,
               bool quiet) {
  std::filesystem::create_directories(out);
  Trainer trainer(config, dataset);
  write_json(out / "config.json", to_json(config));
  std::ofstream csv(out / "loss.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + (out / "loss.csv").string());
  csv << loss_csv_header() << "\n";
  const auto total = planned_steps(config.train, dataset.samples.size());
  for (std::int64_t s = 0; s < total; ++s) {
    const auto log = trainer.step();
    csv << loss_csv_row(log) << "\n";
    if (!quiet && (log.step % 25 == 0 || log.step == total)) {
      std::cout << "step " << log.step << "/" << total << " loss " << log.total << "\n"
                << std::flush;
    }
    const auto every = config.train.checkpoint_every;
    if (every > 0 && log.step % every == 0 && log.step != total) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06lld", static_cast<long long>(log.step));
      trainer.save_checkpoint(out / "checkpoints" / name);
    }
  }
  trainer.save_checkpoint(out / "final");
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  const auto m = read_checkpoint_manifest(checkpoint);
  try {
    LoadedModel out;
    out.config = run_config_from_json(m.at("config"));
    out.classes = class_table_from_json(m.at("class_table"));
    out.gt_meta = grid_meta_from_json(m.at("grid"));
    torch::set_num_threads(out.config.train.threads);
    out.model = OccModel(out.config.model);
    const auto state_path = checkpoint / "state.occf";
    load_parameters(out.model, read_blob(state_path), state_path);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(checkpoint.string() + ": " + e.what());
  }
}

namespace {

UpsampledOccupancy predict(OccModel& model, const RunConfig& config, const SceneSample& sample,
                           const GridMeta& gt_meta) {
  torch::NoGradGuard no_grad;
  model->eval();
  const auto out = model->forward({&sample}, gt_meta);
  return predict_occupancy(out, 0, config.model.volume_downsample);
}

}  // namespace

LabelGrid predict_scene(OccModel& model, const RunConfig& config, const SceneSample& sample,
                        const GridMeta& gt_meta) {
  return predict(model, config, sample, gt_meta).labels;
}

MetricsReport evaluate(OccModel& model, const RunConfig& config, const Dataset& dataset,
                       bool points, bool exclude_absent) {
  const int nc = dataset.classes.size();
  if (nc != config.model.decoder.num_classes) {
    throw ArgumentError("dataset class count does not match the model");
  }
  ConfusionMatrix cm(nc), pcm(nc);
  for (const auto& s : dataset.samples) {
    const auto pred = predict(model, config, s, dataset.meta);
    cm.accumulate(pred.labels.labels, s.labels.labels);
    if (points && s.points.size(0) > 0) {
      pcm.accumulate(point_query_segmentation(pred.scores, s.points.to(torch::kFloat64)),
                     s.point_labels);
    }
  }
  auto report = make_report(cm, dataset.classes.names(), dataset.classes.free_class, exclude_absent);
  if (points) {
    std::vector<int> ids;
    for (int c = 0; c < nc; ++c) {
      if (c != dataset.classes.free_class) ids.push_back(c);
    }
    // Surface points never carry the free class.
    report.point_miou = ssc_miou(pcm, ids, true).miou;
  }
  return report;
}

}  // namespace voxocc
