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

#include <functional>
#include <set>
#include <sstream>

#include "voxocc/io.hpp"

namespace voxocc {

namespace {

std::string join_problems(const std::vector<std::string>& p) {
  std::ostringstream out;
  out << "invalid config (" << p.size() << " problem" << (p.size() == 1 ? "" : "s") << ")";
  for (const auto& s : p) out << "\n  " << s;
  return out.str();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ArgumentError(join_problems(problems)), problems_(std::move(problems)) {}

// One field list drives both serialization and parsing, so the two can not
// drift apart.
namespace {

class Writer {
 public:
  nlohmann::json root = nlohmann::json::object();

  void group(const std::string& name, const std::function<void()>& body) {
    nlohmann::json* parent = cur_;
    (*cur_)[name] = nlohmann::json::object();
    cur_ = &(*cur_)[name];
    body();
    cur_ = parent;
  }
  template <typename T>
  void field(const std::string& name, T& v) {
    (*cur_)[name] = v;
  }
  template <typename E>
  void enum_field(const std::string& name, E& v, std::string (*to)(E), E (*)(const std::string&)) {
    (*cur_)[name] = to(v);
  }

 private:
  nlohmann::json* cur_ = &root;
};

class Reader {
 public:
  explicit Reader(const nlohmann::json& j) : cur_(&j) {
    if (!j.is_object()) problems.push_back("config root must be a JSON object");
  }
  std::vector<std::string> problems;

  void group(const std::string& name, const std::function<void()>& body) {
    if (!cur_->is_object()) return;
    seen_.back().insert(name);
    if (!cur_->contains(name)) return;
    const auto& child = (*cur_)[name];
    if (!child.is_object()) {
      problems.push_back(path(name) + ": expected an object");
      return;
    }
    const nlohmann::json* parent = cur_;
    cur_ = &child;
    prefix_.push_back(name);
    seen_.emplace_back();
    body();
    check_unknown();
    seen_.pop_back();
    prefix_.pop_back();
    cur_ = parent;
  }
  template <typename T>
  void field(const std::string& name, T& v) {
    if (!cur_->is_object()) return;
    seen_.back().insert(name);
    if (!cur_->contains(name)) return;
    const auto& x = (*cur_)[name];
    if (!type_ok<T>(x)) {
      problems.push_back(path(name) + ": wrong type (" + std::string(x.type_name()) + ")");
      return;
    }
    try {
      v = x.get<T>();
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(path(name) + ": " + e.what());
    }
  }
  template <typename E>
  void enum_field(const std::string& name, E& v, std::string (*)(E),
                  E (*from)(const std::string&)) {
    std::string s;
    const auto before = problems.size();
    bool present = cur_->is_object() && cur_->contains(name);
    field(name, s);
    if (!present || problems.size() != before) return;
    try {
      v = from(s);
    } catch (const std::exception& e) {
      problems.push_back(path(name) + ": " + e.what());
    }
  }
  void finish() {
    if (cur_->is_object()) check_unknown();
  }

 private:
  template <typename T>
  static bool type_ok(const nlohmann::json& x) {
    if constexpr (std::is_same_v<T, bool>) {
      return x.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      return x.is_number_integer() && (std::is_signed_v<T> || x.is_number_unsigned() ||
                                       x.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
      return x.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return x.is_string();
    } else {
      // Vectors: element types are checked by get<T>().
      if (!x.is_array()) return false;
      for (const auto& e : x) {
        if (!type_ok<typename T::value_type>(e)) return false;
      }
      return true;
    }
  }
  std::string path(const std::string& name) const {
    std::string p;
    for (const auto& s : prefix_) p += s + ".";
    return p + name;
  }
  void check_unknown() {
    for (const auto& [k, _] : cur_->items()) {
      if (!seen_.back().count(k)) problems.push_back(path(k) + ": unknown field");
    }
  }

  const nlohmann::json* cur_;
  std::vector<std::string> prefix_;
  std::vector<std::set<std::string>> seen_{1};
};

template <typename V>
void visit(V& v, RunConfig& c) {
  v.field("seed", c.seed);
  v.field("data_dir", c.data_dir);
  auto& m = c.model;
  v.group("model", [&] {
    v.group("backbone", [&] {
      v.field("in_channels", m.backbone.in_channels);
      v.field("base_width", m.backbone.base_width);
      v.field("out_channels", m.backbone.out_channels);
      v.field("stride", m.backbone.stride);
    });
    v.field("context_channels", m.context_channels);
    v.group("depth_bins", [&] {
      v.field("d_min", m.depth_bins.d_min);
      v.field("d_max", m.depth_bins.d_max);
      v.field("count", m.depth_bins.count);
    });
    v.field("volume_downsample", m.volume_downsample);
    auto& e = m.encoder;
    v.group("encoder", [&] {
      v.enum_field("variant", e.variant, &voxocc::to_string, &encoder_variant_from_string);
      v.field("in_channels", e.in_channels);
      v.field("base_channels", e.base_channels);
      v.field("stages", e.stages);
      v.field("blocks_per_stage", e.blocks_per_stage);
      v.field("max_channel_multiplier", e.max_channel_multiplier);
      v.field("downsample_xy", e.downsample_xy);
      v.field("window_size", e.block.window_size);
      v.field("heads", e.block.heads);
      v.field("mlp_ratio", e.block.mlp_ratio);
      v.field("aspp_dilations", e.block.aspp_dilations);
      v.field("aspp_bottleneck_ratio", e.block.aspp_bottleneck_ratio);
      v.field("use_soft_sum", e.block.use_soft_sum);
      v.field("use_shared_attention", e.block.use_shared_attention);
      v.field("use_aspp", e.block.use_aspp);
    });
    auto& p = m.pixel_decoder;
    v.group("pixel_decoder", [&] {
      v.field("embed_channels", p.embed_channels);
      v.field("mask_channels", p.mask_channels);
      v.field("layers", p.layers);
      v.field("heads", p.heads);
      v.field("points", p.points);
      v.field("ffn_ratio", p.ffn_ratio);
    });
    auto& d = m.decoder;
    v.group("decoder", [&] {
      v.field("num_classes", d.num_classes);
      v.field("queries", d.queries);
      v.field("channels", d.channels);
      v.field("mask_channels", d.mask_channels);
      v.field("heads", d.heads);
      v.field("layers", d.layers);
      v.field("ffn_ratio", d.ffn_ratio);
      v.enum_field("pooling", d.pooling, &voxocc::to_string, &pooling_mode_from_string);
    });
  });
  auto& t = c.train;
  v.group("train", [&] {
    v.field("steps", t.steps);
    v.field("epochs", t.epochs);
    v.field("batch_size", t.batch_size);
    v.field("lr", t.lr);
    v.field("weight_decay", t.weight_decay);
    v.field("lr_milestones", t.lr_milestones);
    v.field("lr_gamma", t.lr_gamma);
    v.field("sample_points", t.sample_points);
    v.field("beta", t.beta);
    v.enum_field("sampling", t.sampling, &voxocc::to_string, &sampling_mode_from_string);
    v.field("sparse_supervision", t.sparse_supervision);
    v.group("loss", [&] {
      v.field("cls", t.loss.cls);
      v.field("bce", t.loss.bce);
      v.field("dice", t.loss.dice);
      v.field("no_object", t.loss.no_object);
      v.field("depth", t.depth_weight);
    });
    v.field("flip_3d", t.flip_3d);
    v.field("image_flip", t.image_flip);
    v.field("checkpoint_every", t.checkpoint_every);
    v.field("threads", t.threads);
  });
}

}  // namespace

bool RunConfig::operator==(const RunConfig& o) const {
  return to_json(*this) == to_json(o);
}

RunConfig toy_config() {
  RunConfig c;
  auto& m = c.model;
  m.backbone.in_channels = 3;
  m.backbone.base_width = 16;
  m.backbone.out_channels = 64;
  m.backbone.stride = 4;
  m.context_channels = 32;
  m.depth_bins.d_min = 1.0;
  m.depth_bins.d_max = 11.0;
  m.depth_bins.count = 20;
  m.volume_downsample = 2;
  auto& e = m.encoder;
  e.variant = EncoderVariant::kDualPath;
  e.in_channels = 32;
  e.base_channels = 32;
  e.stages = 2;
  e.blocks_per_stage = 2;
  e.max_channel_multiplier = 2;
  e.downsample_xy = {true};
  e.block.window_size = 4;
  e.block.heads = 4;
  e.block.mlp_ratio = 2;
  e.block.aspp_dilations = {1, 2};
  e.block.aspp_bottleneck_ratio = 2;
  m.pixel_decoder.embed_channels = 64;
  m.pixel_decoder.mask_channels = 64;
  m.pixel_decoder.layers = 2;
  m.pixel_decoder.heads = 4;
  m.pixel_decoder.points = 4;
  m.pixel_decoder.ffn_ratio = 2;
  m.decoder.num_classes = 8;
  m.decoder.queries = 16;
  m.decoder.channels = 64;
  m.decoder.mask_channels = 64;
  m.decoder.heads = 4;
  m.decoder.layers = 3;
  m.decoder.ffn_ratio = 2;
  m.decoder.pooling = PoolingMode::kMax;
  return c;
}

RunConfig full_config() {
  RunConfig c = toy_config();
  auto& m = c.model;
  m.backbone.base_width = 64;
  m.backbone.out_channels = 256;
  m.backbone.stride = 8;
  m.context_channels = 128;
  m.depth_bins = DepthBins{2.0, 58.0, 112};
  m.volume_downsample = 2;
  auto& e = m.encoder;
  e.in_channels = 128;
  e.base_channels = 128;
  e.stages = 4;
  e.blocks_per_stage = 2;
  e.max_channel_multiplier = 4;
  e.downsample_xy = {true, true, true};
  e.block.window_size = 7;
  e.block.heads = 8;
  e.block.mlp_ratio = 4;
  e.block.aspp_dilations = {1, 6, 12, 18};
  e.block.aspp_bottleneck_ratio = 4;
  m.pixel_decoder = DeformAttnConfig{192, 192, 6, 8, 4, 4};
  m.decoder.num_classes = 20;
  m.decoder.queries = 100;
  m.decoder.channels = 192;
  m.decoder.mask_channels = 192;
  m.decoder.heads = 8;
  m.decoder.layers = 9;
  m.decoder.ffn_ratio = 8;
  auto& t = c.train;
  t.epochs = 30;
  t.batch_size = 8;
  t.lr = 1e-4;
  t.weight_decay = 0.01;
  t.lr_milestones = {};
  t.lr_gamma = 0.1;
  t.sample_points = 50176;
  t.beta = 0.25;
  t.flip_3d = true;
  t.image_flip = true;
  return c;
}

RunConfig preset_config(const std::string& name) {
  if (name == "toy") return toy_config();
  if (name == "full") return full_config();
  throw ArgumentError("unknown preset '" + name + "' (expected toy or full)");
}

nlohmann::json to_json(const RunConfig& config) {
  Writer w;
  RunConfig copy = config;
  visit(w, copy);
  return w.root;
}

std::vector<std::string> config_problems(const RunConfig& c) {
  std::vector<std::string> p;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  const auto& m = c.model;
  const int s = m.backbone.stride;
  need(m.backbone.in_channels == 3, "model.backbone.in_channels: must be 3 (RGB)");
  need(m.backbone.base_width >= 1, "model.backbone.base_width: must be >= 1");
  need(m.backbone.out_channels >= 1, "model.backbone.out_channels: must be >= 1");
  need(s >= 1 && (s & (s - 1)) == 0, "model.backbone.stride: must be a power of two");
  need(m.context_channels >= 1, "model.context_channels: must be >= 1");
  need(m.depth_bins.d_min > 0.0, "model.depth_bins.d_min: must be > 0");
  need(m.depth_bins.d_max > m.depth_bins.d_min, "model.depth_bins.d_max: must exceed d_min");
  need(m.depth_bins.count >= 2, "model.depth_bins.count: must be >= 2");
  need(m.volume_downsample >= 1, "model.volume_downsample: must be >= 1");
  const auto& e = m.encoder;
  need(e.in_channels == m.context_channels,
       "model.encoder.in_channels: must equal model.context_channels");
  need(e.base_channels >= 1, "model.encoder.base_channels: must be >= 1");
  need(e.stages >= 1, "model.encoder.stages: must be >= 1");
  need(e.blocks_per_stage >= 1, "model.encoder.blocks_per_stage: must be >= 1");
  need(e.max_channel_multiplier >= 1, "model.encoder.max_channel_multiplier: must be >= 1");
  need(e.downsample_xy.empty() || static_cast<int>(e.downsample_xy.size()) == e.stages - 1,
       "model.encoder.downsample_xy: needs stages - 1 entries");
  need(e.block.window_size >= 1, "model.encoder.window_size: must be >= 1");
  need(e.block.heads >= 1, "model.encoder.heads: must be >= 1");
  if (e.block.heads >= 1 && e.base_channels >= 1) {
    need(e.base_channels % e.block.heads == 0,
         "model.encoder.heads: must divide model.encoder.base_channels");
  }
  need(e.block.mlp_ratio >= 1, "model.encoder.mlp_ratio: must be >= 1");
  need(!e.block.aspp_dilations.empty(), "model.encoder.aspp_dilations: must not be empty");
  for (int d : e.block.aspp_dilations) {
    need(d >= 1, "model.encoder.aspp_dilations: entries must be >= 1");
  }
  need(e.block.aspp_bottleneck_ratio >= 1 && e.block.aspp_bottleneck_ratio <= e.base_channels,
       "model.encoder.aspp_bottleneck_ratio: must be in [1, base_channels]");
  const auto& pd = m.pixel_decoder;
  need(pd.embed_channels >= 1 && pd.heads >= 1 && pd.embed_channels % pd.heads == 0,
       "model.pixel_decoder.embed_channels: must be a positive multiple of heads");
  need(pd.mask_channels >= 1, "model.pixel_decoder.mask_channels: must be >= 1");
  need(pd.layers >= 0, "model.pixel_decoder.layers: must be >= 0");
  need(pd.points >= 1, "model.pixel_decoder.points: must be >= 1");
  need(pd.ffn_ratio >= 1, "model.pixel_decoder.ffn_ratio: must be >= 1");
  const auto& d = m.decoder;
  need(d.num_classes >= 2 && d.num_classes <= 255, "model.decoder.num_classes: must be in [2, 255]");
  need(d.queries >= 1, "model.decoder.queries: must be >= 1");
  need(d.channels == pd.embed_channels,
       "model.decoder.channels: must equal model.pixel_decoder.embed_channels");
  need(d.mask_channels == pd.mask_channels,
       "model.decoder.mask_channels: must equal model.pixel_decoder.mask_channels");
  need(d.heads >= 1 && d.channels % std::max(d.heads, 1) == 0,
       "model.decoder.heads: must divide model.decoder.channels");
  need(d.layers >= 0, "model.decoder.layers: must be >= 0");
  need(d.ffn_ratio >= 1, "model.decoder.ffn_ratio: must be >= 1");
  const auto& t = c.train;
  need(t.steps >= 0, "train.steps: must be >= 0");
  need(t.epochs >= 0, "train.epochs: must be >= 0");
  need(t.batch_size >= 1, "train.batch_size: must be >= 1");
  need(t.lr > 0.0, "train.lr: must be > 0");
  need(t.weight_decay >= 0.0, "train.weight_decay: must be >= 0");
  for (std::size_t i = 0; i < t.lr_milestones.size(); ++i) {
    need(t.lr_milestones[i] > 0 && (i == 0 || t.lr_milestones[i] > t.lr_milestones[i - 1]),
         "train.lr_milestones: must be positive and strictly increasing");
  }
  need(t.lr_gamma > 0.0 && t.lr_gamma <= 1.0, "train.lr_gamma: must be in (0, 1]");
  need(t.sample_points >= 1, "train.sample_points: must be >= 1");
  need(t.beta >= 0.0, "train.beta: must be >= 0");
  need(t.loss.cls >= 0.0, "train.loss.cls: must be >= 0");
  need(t.loss.bce >= 0.0, "train.loss.bce: must be >= 0");
  need(t.loss.dice >= 0.0, "train.loss.dice: must be >= 0");
  need(t.loss.no_object >= 0.0, "train.loss.no_object: must be >= 0");
  need(t.depth_weight >= 0.0, "train.loss.depth: must be >= 0");
  need(t.checkpoint_every >= 0, "train.checkpoint_every: must be >= 0");
  need(t.threads >= 1, "train.threads: must be >= 1");
  if (p.empty()) {
    try {
      m.validate();
    } catch (const ArgumentError& ex) {
      p.push_back(std::string("model: ") + ex.what());
    }
  }
  return p;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = toy_config();
  Reader r(j);
  if (j.is_object()) {
    visit(r, c);
    r.finish();
  }
  auto problems = r.problems;
  for (auto& q : config_problems(c)) problems.push_back(std::move(q));
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const FormatError& e) {
    throw ConfigError({e.what()});
  }
  return run_config_from_json(j);
}

}  // namespace voxocc
