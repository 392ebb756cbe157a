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

// Miniature street scenes: primitives rasterized into a label grid, camera
// views rendered by voxel traversal, surface points on the hit faces, the
// mirror augmentation and on-disk datasets.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxocc/core.hpp"
#include "voxocc/io.hpp"
#include "voxocc/view_transform.hpp"

namespace voxocc {

struct ClassInfo {
  std::string name;
  std::array<std::uint8_t, 3> color;
};

struct ClassTable {
  std::vector<ClassInfo> classes;
  int free_class = 0;

  int size() const { return static_cast<int>(classes.size()); }
  std::vector<std::string> names() const;
  int id_of(const std::string& name) const;
  bool operator==(const ClassTable& o) const;
};

// free, road, building, car, person, pole, vegetation, terrain.
ClassTable default_class_table();

enum class PrimitiveKind { kBox, kCylinder, kSphere };

// Box: axis-aligned, `size` = full extents. Cylinder: vertical, radius
// size.x, height size.z. Sphere: radius size.x.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kBox;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  int class_id = 1;

  bool contains(const Eigen::Vector3d& p) const;
};

struct CameraSpec {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Pose pose;
  std::int64_t width = 64, height = 48;
};

// Camera at `eye` looking at `target` with world Z up.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);
Eigen::Matrix3d pinhole(std::int64_t width, std::int64_t height, double hfov_deg);

struct SceneSpec {
  std::uint64_t seed = 0;
  GridMeta meta;
  // Rasterization cell in voxels: a lattice x lattice x lattice block is
  // labeled as a whole by testing its center.
  int lattice = 1;
  std::vector<Primitive> primitives;
  std::vector<CameraSpec> cameras;
  ClassTable classes = default_class_table();

  void validate() const;
};

struct SceneOptions {
  GridMeta meta;             // 32 x 32 x 8, 0.25 m voxels by default
  int lattice = 2;
  std::int64_t image_width = 64, image_height = 48;
  double hfov_deg = 90.0;
  SceneOptions();
};

// Ground, road, buildings, cars, people, poles and trees at random lattice
// positions, viewed by three elevated cameras outside the volume.
SceneSpec random_scene_spec(std::uint64_t seed, const SceneOptions& options);

struct SceneSample {
  std::uint64_t seed = 0;
  std::vector<CameraView> views;  // images 3 x H x W f32, gt_depth H x W f32
  torch::Tensor points;           // M x 3 f32 world coordinates
  torch::Tensor point_labels;     // M u8
  LabelGrid labels;
};

// Later primitives overwrite earlier ones.
LabelGrid rasterize(const SceneSpec& spec);

struct RayHit {
  double t = 0.0;  // ray parameter; z-depth when the direction has unit camera z
  Index3 voxel{0, 0, 0};
  int face_axis = -1;  // axis of the entry face, -1 when the ray starts inside
};

// First voxel along origin + t * dir (t >= 0) whose label is neither free nor
// ignore, by exact 3D-DDA stepping.
std::optional<RayHit> cast_ray(const LabelGrid& grid, int free_class,
                               const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

struct Rendering {
  torch::Tensor image;      // 3 x H x W
  torch::Tensor depth;      // H x W, 0 where nothing is hit
  torch::Tensor hit_class;  // H x W int64, -1 where nothing is hit
  std::vector<RayHit> hits;
};

// One ray per pixel center. Color = class color / 255 / (1 + 0.1 depth).
Rendering render_view(const LabelGrid& grid, const ClassTable& classes, const CameraSpec& cam);

// Throws ArgumentError when a camera sits inside solid geometry.
SceneSample generate_scene(const SceneSpec& spec);

enum class FlipAxis { kX = 0, kY = 1 };

// Mirror of the world about the grid's mid-plane: labels, points and camera
// poses (with mirrored image columns and principal point).
SceneSample flip_3d(const SceneSample& sample, FlipAxis axis);
SceneSpec flip_spec(const SceneSpec& spec, FlipAxis axis);

struct Dataset {
  ClassTable classes = default_class_table();
  GridMeta meta;
  std::vector<SceneSample> samples;
};

inline constexpr int kDatasetVersion = 1;

// Directory with manifest.json and one OCCF blob per sample.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const ClassTable& table);
ClassTable class_table_from_json(const nlohmann::json& j);

}  // namespace voxocc
