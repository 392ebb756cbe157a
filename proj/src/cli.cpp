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

#include "voxocc/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "voxocc/config.hpp"
#include "voxocc/io.hpp"
#include "voxocc/trainer.hpp"

namespace voxocc {

std::uint64_t scene_seed(std::uint64_t seed, std::size_t index) {
  return seed * 1000003ULL + index;
}

Dataset generate_dataset(const GenDataOptions& o) {
  SceneOptions so;
  so.meta.resolution = o.grid;
  so.meta.voxel_size = Eigen::Vector3d::Constant(o.voxel_size);
  so.meta.origin = Eigen::Vector3d(0.0, -0.5 * o.grid[1] * o.voxel_size, 0.0);
  so.lattice = o.lattice;
  so.image_width = o.image_width;
  so.image_height = o.image_height;
  Dataset d;
  d.meta = so.meta;
  for (std::size_t i = 0; i < o.scenes; ++i) {
    d.samples.push_back(generate_scene(random_scene_spec(scene_seed(o.seed, i), so)));
  }
  return d;
}

std::string frequency_table(const ClassTable& classes, const ClassStats& stats) {
  std::int64_t total = 0;
  for (auto n : stats.counts) total += n;
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-3s %-12s %10s %9s\n", "id", "class", "voxels", "fraction");
  out << buf;
  for (int c = 0; c < classes.size(); ++c) {
    const double f = total > 0 ? static_cast<double>(stats.counts[c]) / total : 0.0;
    std::snprintf(buf, sizeof(buf), "%-3d %-12s %10lld %9.6f\n", c, classes.classes[c].name.c_str(),
                  static_cast<long long>(stats.counts[c]), f);
    out << buf;
  }
  out << "total labeled voxels " << total << "\n";
  return out.str();
}

namespace {

std::int64_t total_points(const SampleStats& s) { return s.draws * s.points_per_draw; }

}  // namespace

bool SampleStats::within_tolerance() const {
  const double n = static_cast<double>(total_points(*this));
  for (const auto& r : rows) {
    const double fu = r.uniform_hits / n, fg = r.guided_hits / n;
    if (std::abs(fu - r.uniform_expected) > 3.0 * r.uniform_sigma + 1e-12) return false;
    if (std::abs(fg - r.guided_expected) > 3.0 * r.guided_sigma + 1e-12) return false;
  }
  return true;
}

SampleStats sample_stats(const std::vector<LabelGrid>& grids, int num_classes, double beta,
                         std::int64_t draws, std::int64_t points_per_draw, std::uint64_t seed) {
  if (grids.empty()) throw ArgumentError("sample-stats needs at least one grid");
  if (draws < 1 || points_per_draw < 1) throw ArgumentError("draws and points must be >= 1");
  const auto stats = class_frequencies(grids, num_classes);
  const auto weights = sampling_weights(stats.counts, beta);
  SampleStats out;
  out.draws = draws;
  out.points_per_draw = points_per_draw;
  out.rows.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    out.rows[c].voxels = stats.counts[c];
    out.rows[c].weight = weights[c];
  }
  // Per-grid class expectations; the empirical fraction's variance is the
  // sum of per-point Bernoulli variances.
  std::vector<ClassStats> per_grid;
  for (const auto& g : grids) per_grid.push_back(class_frequencies({g}, num_classes));
  const double n_total = static_cast<double>(draws * points_per_draw);
  std::vector<double> var_u(num_classes, 0.0), var_g(num_classes, 0.0);
  std::mt19937_64 rng(seed);
  for (std::int64_t d = 0; d < draws; ++d) {
    const auto gi = static_cast<std::size_t>(d) % grids.size();
    const auto& counts = per_grid[gi].counts;
    double su = 0.0, sg = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      su += counts[c];
      sg += counts[c] * weights[c];
    }
    for (int c = 0; c < num_classes; ++c) {
      const double pu = counts[c] / su, pg = counts[c] * weights[c] / sg;
      out.rows[c].uniform_expected += pu * points_per_draw / n_total;
      out.rows[c].guided_expected += pg * points_per_draw / n_total;
      var_u[c] += pu * (1 - pu) * points_per_draw;
      var_g[c] += pg * (1 - pg) * points_per_draw;
    }
    for (auto mode : {SamplingMode::kUniform, SamplingMode::kClassGuided}) {
      const auto set = sample_points(grids[gi], weights, points_per_draw, mode, rng);
      const auto hist = torch::bincount(set.labels, {}, num_classes);
      const auto h = hist.accessor<std::int64_t, 1>();
      for (int c = 0; c < num_classes; ++c) {
        (mode == SamplingMode::kUniform ? out.rows[c].uniform_hits : out.rows[c].guided_hits) += h[c];
      }
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    out.rows[c].uniform_sigma = std::sqrt(var_u[c]) / n_total;
    out.rows[c].guided_sigma = std::sqrt(var_g[c]) / n_total;
  }
  return out;
}

std::string sample_stats_table(const ClassTable& classes, const SampleStats& s) {
  std::ostringstream out;
  char buf[256];
  const double n = static_cast<double>(total_points(s));
  out << "draws " << s.draws << " x " << s.points_per_draw << " points\n";
  std::snprintf(buf, sizeof(buf), "%-12s %10s %9s %10s %9s %9s %10s %9s %9s\n", "class", "voxels",
                "weight", "uni.hits", "uni.frac", "uni.exp", "cg.hits", "cg.frac", "cg.exp");
  out << buf;
  for (int c = 0; c < static_cast<int>(s.rows.size()); ++c) {
    const auto& r = s.rows[c];
    const std::string name = c < classes.size() ? classes.classes[c].name : std::to_string(c);
    std::snprintf(buf, sizeof(buf), "%-12s %10lld %9.5f %10lld %9.6f %9.6f %10lld %9.6f %9.6f\n",
                  name.c_str(), static_cast<long long>(r.voxels), r.weight,
                  static_cast<long long>(r.uniform_hits), r.uniform_hits / n, r.uniform_expected,
                  static_cast<long long>(r.guided_hits), r.guided_hits / n, r.guided_expected);
    out << buf;
  }
  out << "within 3 sigma: " << (s.within_tolerance() ? "yes" : "no") << "\n";
  return out.str();
}

void write_occupancy_ply(const LabelGrid& labels, const ClassTable& classes,
                         const std::filesystem::path& path) {
  const auto& m = labels.meta;
  const auto l = labels.labels.to(torch::kUInt8).contiguous();
  const auto acc = l.accessor<std::uint8_t, 3>();
  std::ostringstream body;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < m.resolution[0]; ++i)
    for (std::int64_t j = 0; j < m.resolution[1]; ++j)
      for (std::int64_t k = 0; k < m.resolution[2]; ++k) {
        const int c = acc[i][j][k];
        if (c == classes.free_class || c == kIgnoreLabel) continue;
        if (c >= classes.size()) throw ArgumentError("label " + std::to_string(c) + " has no color");
        const auto p = m.world_of({i, j, k});
        const auto& col = classes.classes[c].color;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d %d\n", p.x(), p.y(), p.z(), col[0],
                      col[1], col[2]);
        body << buf;
        ++count;
      }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "ply\nformat ascii 1.0\nelement vertex " << count
    << "\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    << body.str();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

Index3 parse_index3(const std::string& s, const std::string& what) {
  Index3 out{};
  char extra;
  long long a, b, c;
  if (std::sscanf(s.c_str(), "%lld,%lld,%lld%c", &a, &b, &c, &extra) != 3) {
    throw ArgumentError(what + " must look like X,Y,Z (got '" + s + "')");
  }
  out = {a, b, c};
  return out;
}

std::pair<std::int64_t, std::int64_t> parse_pair(const std::string& s, const std::string& what) {
  char extra;
  long long a, b;
  if (std::sscanf(s.c_str(), "%lld,%lld%c", &a, &b, &extra) != 2) {
    throw ArgumentError(what + " must look like W,H (got '" + s + "')");
  }
  return {a, b};
}

std::vector<LabelGrid> grids_of(const Dataset& d) {
  std::vector<LabelGrid> out;
  for (const auto& s : d.samples) out.push_back(s.labels);
  return out;
}

std::string resolve_data(const std::string& flag, const RunConfig& config) {
  const auto dir = flag.empty() ? config.data_dir : flag;
  if (dir.empty()) throw ArgumentError("no dataset given (--data or data_dir in the config)");
  return dir;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"voxocc: camera-based 3D semantic occupancy on synthetic scenes"};
  app.require_subcommand(1);

  GenDataOptions gen;
  std::string gen_out, gen_grid = "32,32,8", gen_image = "64,48";
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--scenes", gen.scenes, "number of scenes")->required();
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--grid", gen_grid, "ground-truth grid X,Y,Z");
  gen_cmd->add_option("--voxel", gen.voxel_size, "voxel edge in meters");
  gen_cmd->add_option("--lattice", gen.lattice, "rasterization block in voxels");
  gen_cmd->add_option("--image", gen_image, "image size W,H");

  std::string train_config, train_out, train_data, train_resume, preset = "toy";
  bool dump_defaults = false;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", train_config, "run config (JSON)");
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--data", train_data, "dataset directory (overrides data_dir)");
  train_cmd->add_option("--resume", train_resume, "checkpoint to continue from");
  train_cmd->add_flag("--dump-defaults", dump_defaults, "print the preset config and exit");
  train_cmd->add_option("--preset", preset, "defaults preset: toy | full");

  std::string eval_ckpt, eval_data, eval_report;
  bool eval_points = false, eval_exclude = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--report", eval_report, "JSON report path")->required();
  eval_cmd->add_flag("--points", eval_points, "also score surface-point queries");
  eval_cmd->add_flag("--exclude-absent", eval_exclude,
                     "drop classes absent from gt and prediction from the mean");

  std::string abl_variant, abl_sweep, abl_config, abl_data, abl_eval_data, abl_out;
  int abl_seeds = 1;
  std::uint64_t abl_seed0 = 0;
  bool abl_list = false;
  auto* abl_cmd = app.add_subcommand("ablate", "train and evaluate ablation variants");
  abl_cmd->add_option("--variant", abl_variant, "toggles, e.g. pooling=trilinear,sampling=uniform");
  abl_cmd->add_option("--sweep", abl_sweep, "named sweep: pooling_sampling");
  abl_cmd->add_option("--config", abl_config, "base run config (JSON)");
  abl_cmd->add_option("--data", abl_data, "training dataset (overrides data_dir)");
  abl_cmd->add_option("--eval-data", abl_eval_data, "evaluation dataset (default: training set)");
  abl_cmd->add_option("--seeds", abl_seeds, "seeds per variant");
  abl_cmd->add_option("--seed", abl_seed0, "first seed");
  abl_cmd->add_option("--out", abl_out, "CSV output path (default: stdout only)");
  abl_cmd->add_flag("--list", abl_list, "list the toggles and exit");

  std::string ss_data, ss_counts;
  double ss_beta = 0.25;
  std::int64_t ss_draws = 10000, ss_points = 1;
  std::uint64_t ss_seed = 0;
  auto* ss_cmd = app.add_subcommand("sample-stats", "empirical class sampling ratios");
  ss_cmd->add_option("--data", ss_data, "dataset directory");
  ss_cmd->add_option("--counts", ss_counts, "synthetic grid with these class counts, e.g. 99,1");
  ss_cmd->add_option("--beta", ss_beta, "weight exponent");
  ss_cmd->add_option("--draws", ss_draws, "number of sampling rounds");
  ss_cmd->add_option("--points", ss_points, "points per round");
  ss_cmd->add_option("--seed", ss_seed, "sampler seed");

  std::string ex_ckpt, ex_data, ex_out;
  std::size_t ex_scene = 0;
  auto* ex_cmd = app.add_subcommand("export-occ", "write predicted occupancy as a PLY point cloud");
  ex_cmd->add_option("--ckpt", ex_ckpt, "checkpoint directory")->required();
  ex_cmd->add_option("--scene", ex_scene, "scene index")->required();
  ex_cmd->add_option("--out", ex_out, "PLY path")->required();
  ex_cmd->add_option("--data", ex_data, "dataset directory (default: the config's data_dir)");

  std::vector<std::string> storage{"voxocc"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) {
      gen.grid = parse_index3(gen_grid, "--grid");
      std::tie(gen.image_width, gen.image_height) = parse_pair(gen_image, "--image");
      const auto d = generate_dataset(gen);
      save_dataset(d, gen_out);
      out << "wrote " << d.samples.size() << " scenes to " << gen_out << "\n";
      if (!d.samples.empty()) {
        out << frequency_table(d.classes, class_frequencies(grids_of(d), d.classes.size()));
      } else {
        out << "total labeled voxels 0\n";
      }
      return 0;
    }
    if (*train_cmd) {
      if (dump_defaults) {
        out << to_json(preset_config(preset)).dump(2) << "\n";
        return 0;
      }
      if (train_out.empty()) throw ArgumentError("train needs --out");
      RunConfig config = train_config.empty() ? toy_config() : load_run_config(train_config);
      const auto data_dir = resolve_data(train_data, config);
      config.data_dir = data_dir;
      const auto dataset = load_dataset(data_dir);
      if (train_resume.empty()) {
        train_run(config, dataset, train_out);
      } else {
        auto t = Trainer::resume(train_resume, dataset);
        std::filesystem::create_directories(train_out);
        std::ofstream csv(std::filesystem::path(train_out) / "loss.csv", std::ios::app);
        const auto total = planned_steps(t.config().train, dataset.samples.size());
        while (t.steps_done() < total) csv << loss_csv_row(t.step()) << "\n";
        t.save_checkpoint(std::filesystem::path(train_out) / "final");
      }
      out << "checkpoint " << (std::filesystem::path(train_out) / "final").string() << "\n";
      return 0;
    }
    if (*eval_cmd) {
      auto loaded = load_model(eval_ckpt);
      const auto dataset = load_dataset(eval_data);
      const auto report = evaluate(loaded.model, loaded.config, dataset, eval_points, eval_exclude);
      write_json(eval_report, report.to_json());
      out << report.to_text();
      return 0;
    }
    if (*abl_cmd) {
      if (abl_list) {
        for (const auto& t : ablation_toggles()) {
          out << t.key << ":";
          for (const auto& v : t.values) out << " " << v;
          out << "\n";
        }
        return 0;
      }
      if (abl_seeds < 1) throw ArgumentError("--seeds must be >= 1");
      std::vector<Variant> variants;
      if (!abl_sweep.empty()) {
        if (abl_sweep != "pooling_sampling") {
          throw ArgumentError("unknown sweep '" + abl_sweep + "' (pooling_sampling)");
        }
        variants = pooling_sampling_sweep();
      } else {
        variants.push_back(parse_variant(abl_variant));
      }
      const RunConfig base = abl_config.empty() ? toy_config() : load_run_config(abl_config);
      const auto train = load_dataset(resolve_data(abl_data, base));
      const auto eval = abl_eval_data.empty() ? train : load_dataset(abl_eval_data);
      std::ostringstream csv;
      csv << ablation_csv_header(train.classes.names()) << "\n";
      for (const auto& v : variants) {
        std::vector<AblationRow> rows;
        for (int s = 0; s < abl_seeds; ++s) {
          rows.push_back(run_variant(base, v, abl_seed0 + s, train, eval));
        }
        csv << ablation_csv_row(summarize(rows)) << "\n";
      }
      out << csv.str();
      if (!abl_out.empty()) {
        std::ofstream f(abl_out, std::ios::trunc);
        f << csv.str();
        if (!f) throw std::runtime_error("cannot write " + abl_out);
      }
      return 0;
    }
    if (*ss_cmd) {
      std::vector<LabelGrid> grids;
      ClassTable classes = default_class_table();
      if (!ss_counts.empty()) {
        std::vector<std::int64_t> counts;
        std::stringstream in(ss_counts);
        std::string tok;
        while (std::getline(in, tok, ',')) counts.push_back(std::stoll(tok));
        if (counts.size() < 2) throw ArgumentError("--counts needs at least two classes");
        std::vector<std::uint8_t> labels;
        for (std::size_t c = 0; c < counts.size(); ++c) {
          if (counts[c] < 0) throw ArgumentError("--counts entries must be >= 0");
          labels.insert(labels.end(), counts[c], static_cast<std::uint8_t>(c));
        }
        LabelGrid g;
        g.meta.resolution = {static_cast<std::int64_t>(labels.size()), 1, 1};
        g.labels = torch::from_blob(labels.data(), {g.meta.resolution[0], 1, 1}, torch::kUInt8).clone();
        grids.push_back(g);
        classes.classes.resize(counts.size());
        for (std::size_t c = 0; c < counts.size(); ++c) {
          if (c >= 8) classes.classes[c] = {"class" + std::to_string(c), {0, 0, 0}};
        }
      } else {
        if (ss_data.empty()) throw ArgumentError("sample-stats needs --data or --counts");
        const auto d = load_dataset(ss_data);
        grids = grids_of(d);
        classes = d.classes;
      }
      const auto stats = sample_stats(grids, classes.size(), ss_beta, ss_draws, ss_points, ss_seed);
      out << sample_stats_table(classes, stats);
      return stats.within_tolerance() ? 0 : 1;
    }
    if (*ex_cmd) {
      auto loaded = load_model(ex_ckpt);
      const auto dataset = load_dataset(resolve_data(ex_data, loaded.config));
      if (ex_scene >= dataset.samples.size()) {
        throw ArgumentError("--scene " + std::to_string(ex_scene) + " out of range (" +
                            std::to_string(dataset.samples.size()) + " scenes)");
      }
      const auto labels =
          predict_scene(loaded.model, loaded.config, dataset.samples[ex_scene], dataset.meta);
      write_occupancy_ply(labels, loaded.classes, ex_out);
      out << "wrote " << ex_out << "\n";
      return 0;
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace voxocc
