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

#include "voxocc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>
#include <tuple>

namespace voxocc {

std::vector<std::string> ClassTable::names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

int ClassTable::id_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (classes[i].name == name) return i;
  }
  throw ArgumentError("unknown class '" + name + "'");
}

bool ClassTable::operator==(const ClassTable& o) const {
  if (free_class != o.free_class || classes.size() != o.classes.size()) return false;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name != o.classes[i].name || classes[i].color != o.classes[i].color) {
      return false;
    }
  }
  return true;
}

ClassTable default_class_table() {
  ClassTable t;
  t.classes = {{"free", {0, 0, 0}},        {"road", {255, 0, 255}},
               {"building", {255, 200, 0}}, {"car", {100, 150, 245}},
               {"person", {255, 30, 30}},   {"pole", {255, 240, 150}},
               {"vegetation", {0, 175, 0}}, {"terrain", {150, 240, 80}}};
  t.free_class = 0;
  return t;
}

bool Primitive::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d d = p - center;
  switch (kind) {
    case PrimitiveKind::kBox:
      return std::abs(d.x()) <= 0.5 * size.x() && std::abs(d.y()) <= 0.5 * size.y() &&
             std::abs(d.z()) <= 0.5 * size.z();
    case PrimitiveKind::kCylinder:
      return d.x() * d.x() + d.y() * d.y() <= size.x() * size.x() &&
             std::abs(d.z()) <= 0.5 * size.z();
    case PrimitiveKind::kSphere:
      return d.squaredNorm() <= size.x() * size.x();
  }
  return false;
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d r = f.cross(Eigen::Vector3d::UnitZ());
  if (r.norm() < 1e-9) r = f.cross(Eigen::Vector3d::UnitX());
  r.normalize();
  const Eigen::Vector3d d = f.cross(r);
  Pose p;
  p.rotation.col(0) = r;
  p.rotation.col(1) = d;
  p.rotation.col(2) = f;
  p.translation = eye;
  return p;
}

Eigen::Matrix3d pinhole(std::int64_t width, std::int64_t height, double hfov_deg) {
  const double f = 0.5 * width / std::tan(0.5 * hfov_deg * M_PI / 180.0);
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = f;
  k(1, 1) = f;
  k(0, 2) = 0.5 * width;
  k(1, 2) = 0.5 * height;
  return k;
}

void SceneSpec::validate() const {
  meta.validate();
  if (lattice < 1) throw ArgumentError("lattice must be >= 1");
  for (int a = 0; a < 3; ++a) {
    if (meta.resolution[a] % lattice != 0) {
      throw ArgumentError("grid resolution " + to_string(meta.resolution) +
                          " is not a multiple of lattice " + std::to_string(lattice));
    }
  }
  for (const auto& p : primitives) {
    if (p.class_id < 0 || p.class_id >= classes.size()) {
      throw ArgumentError("primitive class id " + std::to_string(p.class_id) + " out of range");
    }
  }
  for (const auto& c : cameras) {
    if (c.width < 1 || c.height < 1) throw ArgumentError("camera image size must be positive");
    c.pose.validate();
  }
}

SceneOptions::SceneOptions() {
  meta.resolution = {32, 32, 8};
  meta.voxel_size = Eigen::Vector3d(0.25, 0.25, 0.25);
  meta.origin = Eigen::Vector3d(0.0, -4.0, 0.0);
}

namespace {

// Box over lattice blocks [lo, hi) of `meta`.
Primitive block_box(const GridMeta& meta, int lattice, const Index3& lo, const Index3& hi,
                    int cls) {
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.class_id = cls;
  for (int a = 0; a < 3; ++a) {
    const double bs = lattice * meta.voxel_size[a];
    p.center[a] = meta.origin[a] + 0.5 * (lo[a] + hi[a]) * bs;
    p.size[a] = (hi[a] - lo[a]) * bs;
  }
  return p;
}

Eigen::Vector3d block_center(const GridMeta& meta, int lattice, double i, double j, double k) {
  const Eigen::Vector3d b = lattice * meta.voxel_size;
  return meta.origin + Eigen::Vector3d((i + 0.5) * b.x(), (j + 0.5) * b.y(), (k + 0.5) * b.z());
}

}  // namespace

SceneSpec random_scene_spec(std::uint64_t seed, const SceneOptions& options) {
  SceneSpec s;
  s.seed = seed;
  s.meta = options.meta;
  s.lattice = options.lattice;
  s.validate();
  const auto& m = s.meta;
  const int L = s.lattice;
  const std::int64_t bx = m.resolution[0] / L, by = m.resolution[1] / L, bz = m.resolution[2] / L;
  const auto& ct = s.classes;
  std::mt19937_64 rng(seed);
  auto uni = [&](std::int64_t lo, std::int64_t hi) {  // inclusive
    return std::uniform_int_distribution<std::int64_t>(lo, std::max(lo, hi))(rng);
  };
  const std::int64_t top = std::max<std::int64_t>(bz, 2);
  const std::int64_t mid = by / 2, half_road = std::max<std::int64_t>(by / 8, 1);

  s.primitives.push_back(block_box(m, L, {0, 0, 0}, {bx, by, 1}, ct.id_of("terrain")));
  s.primitives.push_back(
      block_box(m, L, {0, mid - half_road, 0}, {bx, mid + half_road, 1}, ct.id_of("road")));

  const int trees = static_cast<int>(uni(1, 2));
  for (int t = 0; t < trees; ++t) {
    const bool left = uni(0, 1);
    Primitive p;
    p.kind = PrimitiveKind::kSphere;
    p.class_id = ct.id_of("vegetation");
    const double j = left ? uni(by - by / 4, by - 2) : uni(1, by / 4 - 1);
    p.center = block_center(m, L, static_cast<double>(uni(1, bx - 2)), j,
                            std::min<double>(2.0, top - 1.0));
    p.size = Eigen::Vector3d::Constant(1.2 * L * m.voxel_size.x());
    s.primitives.push_back(p);
  }
  const int buildings = static_cast<int>(uni(1, 2));
  const bool first_left = uni(0, 1);
  for (int b = 0; b < buildings; ++b) {
    const bool left = b == 0 ? first_left : !first_left;
    const std::int64_t depth = uni(2, 3), len = uni(3, bx / 2), x0 = uni(0, bx - len);
    const std::int64_t h = uni(2, bz - 1);
    const std::int64_t y0 = left ? by - depth : 0;
    s.primitives.push_back(
        block_box(m, L, {x0, y0, 1}, {x0 + len, y0 + depth, 1 + h}, ct.id_of("building")));
  }
  const int poles = static_cast<int>(uni(1, 2));
  for (int q = 0; q < poles; ++q) {
    Primitive p;
    p.kind = PrimitiveKind::kCylinder;
    p.class_id = ct.id_of("pole");
    const bool left = uni(0, 1);
    const double j = left ? mid + half_road : mid - half_road - 1;
    const double h = static_cast<double>(std::max<std::int64_t>(bz - 1, 1));
    p.center = block_center(m, L, static_cast<double>(uni(0, bx - 1)), j, 0.5 * h);
    p.center.z() = m.origin.z() + (1.0 + 0.5 * h) * L * m.voxel_size.z();
    p.size = Eigen::Vector3d(0.45 * L * m.voxel_size.x(), 0.0, h * L * m.voxel_size.z());
    s.primitives.push_back(p);
  }
  const int cars = static_cast<int>(uni(1, 2));
  for (int c = 0; c < cars; ++c) {
    const std::int64_t len = 3, x0 = uni(0, bx - len);
    const std::int64_t y0 = c == 0 ? mid - half_road : mid;
    const std::int64_t w = std::max<std::int64_t>(half_road, 1);
    s.primitives.push_back(
        block_box(m, L, {x0, y0, 1}, {x0 + len, y0 + w, std::min<std::int64_t>(3, top)},
                  ct.id_of("car")));
  }
  {
    const bool left = uni(0, 1);
    const std::int64_t x0 = uni(0, bx - 1);
    const std::int64_t y0 = left ? mid + half_road + 1 : mid - half_road - 2;
    s.primitives.push_back(block_box(m, L, {x0, y0, 1}, {x0 + 1, y0 + 1, std::min<std::int64_t>(3, top)},
                                     ct.id_of("person")));
  }

  const Eigen::Vector3d e = m.extent();
  const Eigen::Vector3d c = m.origin + 0.5 * e;
  const Eigen::Vector3d ground(c.x(), c.y(), m.origin.z());
  const double hz = m.origin.z() + 2.0 * e.z();
  const std::vector<Eigen::Vector3d> eyes = {
      {m.origin.x() - 0.125 * e.x(), c.y(), hz},
      {c.x(), m.origin.y() - 0.2 * e.y(), hz},
      {c.x(), m.origin.y() + 1.2 * e.y(), hz}};
  for (const auto& eye : eyes) {
    CameraSpec cam;
    cam.width = options.image_width;
    cam.height = options.image_height;
    cam.intrinsics = pinhole(cam.width, cam.height, options.hfov_deg);
    cam.pose = look_at(eye, ground);
    s.cameras.push_back(cam);
  }
  return s;
}

LabelGrid rasterize(const SceneSpec& spec) {
  spec.validate();
  const auto& m = spec.meta;
  const int L = spec.lattice;
  LabelGrid g;
  g.meta = m;
  g.labels = torch::full({m.resolution[0], m.resolution[1], m.resolution[2]},
                         spec.classes.free_class, torch::kUInt8);
  auto acc = g.labels.accessor<std::uint8_t, 3>();
  for (std::int64_t bi = 0; bi < m.resolution[0] / L; ++bi)
    for (std::int64_t bj = 0; bj < m.resolution[1] / L; ++bj)
      for (std::int64_t bk = 0; bk < m.resolution[2] / L; ++bk) {
        const auto p = block_center(m, L, bi, bj, bk);
        int cls = -1;
        for (const auto& prim : spec.primitives) {
          if (prim.contains(p)) cls = prim.class_id;
        }
        if (cls < 0) continue;
        for (int di = 0; di < L; ++di)
          for (int dj = 0; dj < L; ++dj)
            for (int dk = 0; dk < L; ++dk) {
              acc[bi * L + di][bj * L + dj][bk * L + dk] = static_cast<std::uint8_t>(cls);
            }
      }
  return g;
}

std::optional<RayHit> cast_ray(const LabelGrid& grid, int free_class,
                               const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const auto& m = grid.meta;
  const Eigen::Vector3d lo = m.origin, hi = m.origin + m.extent();
  const double inf = std::numeric_limits<double>::infinity();
  double t_enter = -inf, t_exit = inf;
  int entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < lo[a] || origin[a] >= hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (lo[a] - origin[a]) / dir[a], t2 = (hi[a] - origin[a]) / dir[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_enter) {
      t_enter = t1;
      entry_axis = a;
    }
    t_exit = std::min(t_exit, t2);
  }
  if (t_exit < std::max(t_enter, 0.0)) return std::nullopt;
  double t = std::max(t_enter, 0.0);
  int face = t_enter > 0.0 ? entry_axis : -1;

  const auto acc = grid.labels.accessor<std::uint8_t, 3>();
  const Eigen::Vector3d p = origin + t * dir;
  Index3 idx;
  int step[3];
  double t_max[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    idx[a] = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::floor((p[a] - lo[a]) / m.voxel_size[a])), 0,
        m.resolution[a] - 1);
    // The entry face pins the index regardless of rounding in p.
    if (a == face) idx[a] = dir[a] > 0 ? 0 : m.resolution[a] - 1;
    if (dir[a] > 0) {
      step[a] = 1;
      t_max[a] = (lo[a] + (idx[a] + 1) * m.voxel_size[a] - origin[a]) / dir[a];
      t_delta[a] = m.voxel_size[a] / dir[a];
    } else if (dir[a] < 0) {
      step[a] = -1;
      t_max[a] = (lo[a] + idx[a] * m.voxel_size[a] - origin[a]) / dir[a];
      t_delta[a] = -m.voxel_size[a] / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = inf;
      t_delta[a] = inf;
    }
  }
  while (true) {
    const int label = acc[idx[0]][idx[1]][idx[2]];
    if (label != free_class && label != kIgnoreLabel) return RayHit{t, idx, face};
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    if (t_max[a] > t_exit) return std::nullopt;
    t = t_max[a];
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= m.resolution[a]) return std::nullopt;
    t_max[a] += t_delta[a];
    face = a;
  }
}

Rendering render_view(const LabelGrid& grid, const ClassTable& classes, const CameraSpec& cam) {
  const auto h = cam.height, w = cam.width;
  Rendering r;
  r.image = torch::zeros({3, h, w});
  r.depth = torch::zeros({h, w});
  r.hit_class = torch::full({h, w}, -1, torch::kInt64);
  auto img = r.image.accessor<float, 3>();
  auto dep = r.depth.accessor<float, 2>();
  auto hc = r.hit_class.accessor<std::int64_t, 2>();
  const auto labels = grid.labels.accessor<std::uint8_t, 3>();
  const Eigen::Matrix3d k_inv = cam.intrinsics.inverse();
  for (std::int64_t row = 0; row < h; ++row) {
    for (std::int64_t col = 0; col < w; ++col) {
      const Eigen::Vector3d ray = k_inv * Eigen::Vector3d(col + 0.5, row + 0.5, 1.0);
      const Eigen::Vector3d dir = cam.pose.rotation * (ray / ray.z());
      const auto hit = cast_ray(grid, classes.free_class, cam.pose.translation, dir);
      if (!hit) continue;
      const int cls = labels[hit->voxel[0]][hit->voxel[1]][hit->voxel[2]];
      const double shade = 1.0 / (1.0 + 0.1 * hit->t);
      for (int ch = 0; ch < 3; ++ch) {
        img[ch][row][col] = static_cast<float>(classes.classes[cls].color[ch] / 255.0 * shade);
      }
      dep[row][col] = static_cast<float>(hit->t);
      hc[row][col] = cls;
      r.hits.push_back(*hit);
    }
  }
  return r;
}

namespace {

// Points are kept on a 2^-16 m lattice so that float32 mirroring is exact.
constexpr double kPointQuantum = 1.0 / 65536.0;

double quantize(double v) { return std::round(v / kPointQuantum) * kPointQuantum; }

}  // namespace

SceneSample generate_scene(const SceneSpec& spec) {
  SceneSample s;
  s.seed = spec.seed;
  s.labels = rasterize(spec);
  const auto& m = spec.meta;
  const auto acc = s.labels.labels.accessor<std::uint8_t, 3>();
  for (std::size_t i = 0; i < spec.cameras.size(); ++i) {
    const auto idx = m.index_of(spec.cameras[i].pose.translation);
    if (m.contains(idx)) {
      const int l = acc[idx[0]][idx[1]][idx[2]];
      if (l != spec.classes.free_class && l != kIgnoreLabel) {
        throw ArgumentError("camera " + std::to_string(i) + " is inside solid geometry");
      }
    }
  }

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::set<std::tuple<std::int64_t, int, int>> seen;
  std::vector<float> pts;
  std::vector<std::uint8_t> plab;
  for (const auto& cam : spec.cameras) {
    auto r = render_view(s.labels, spec.classes, cam);
    const auto hit_class = r.hit_class.accessor<std::int64_t, 2>();
    CameraView v;
    v.intrinsics = cam.intrinsics;
    v.pose = cam.pose;
    v.image = r.image;
    v.gt_depth = r.depth;
    s.views.push_back(v);

    const Eigen::Matrix3d k_inv = cam.intrinsics.inverse();
    std::size_t next = 0;
    for (std::int64_t row = 0; row < cam.height; ++row) {
      for (std::int64_t col = 0; col < cam.width; ++col) {
        if (hit_class[row][col] < 0) continue;
        const auto& hit = r.hits[next++];
        if (hit.face_axis < 0) continue;
        const Eigen::Vector3d ray = k_inv * Eigen::Vector3d(col + 0.5, row + 0.5, 1.0);
        const Eigen::Vector3d dir = cam.pose.rotation * ray;
        const int a = hit.face_axis;
        const int low_face = dir[a] > 0 ? 1 : 0;
        if (!seen.emplace(m.flat_index(hit.voxel), a, low_face).second) continue;
        Eigen::Vector3d p;
        for (int b = 0; b < 3; ++b) {
          const double v0 = m.origin[b] + hit.voxel[b] * m.voxel_size[b];
          const double nudge = 1e-3 * m.voxel_size[b];
          if (b == a) {
            p[b] = low_face ? v0 + nudge : v0 + m.voxel_size[b] - nudge;
          } else {
            p[b] = v0 + nudge + unit(rng) * (m.voxel_size[b] - 2 * nudge);
          }
          pts.push_back(static_cast<float>(quantize(p[b])));
        }
        plab.push_back(acc[hit.voxel[0]][hit.voxel[1]][hit.voxel[2]]);
      }
    }
  }
  const auto n = static_cast<std::int64_t>(plab.size());
  s.points = torch::from_blob(pts.data(), {n, 3}, torch::kFloat32).clone();
  s.point_labels = torch::from_blob(plab.data(), {n}, torch::kUInt8).clone();
  return s;
}

namespace {

Eigen::Matrix3d mirror(FlipAxis axis) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(static_cast<int>(axis), static_cast<int>(axis)) = -1.0;
  return m;
}

double mid_plane(const GridMeta& meta, FlipAxis axis) {
  const int a = static_cast<int>(axis);
  return meta.origin[a] + 0.5 * meta.extent()[a];
}

// Reflected world, reflected camera x axis: R' = M R S keeps det +1.
Pose flip_pose(const Pose& p, FlipAxis axis, double c) {
  const int a = static_cast<int>(axis);
  Pose out;
  out.rotation = mirror(axis) * p.rotation * mirror(FlipAxis::kX);
  out.translation = p.translation;
  out.translation[a] = 2.0 * c - p.translation[a];
  return out;
}

Eigen::Matrix3d flip_intrinsics(const Eigen::Matrix3d& k, std::int64_t width) {
  Eigen::Matrix3d out = k;
  out(0, 2) = static_cast<double>(width) - k(0, 2);
  return out;
}

}  // namespace

SceneSample flip_3d(const SceneSample& sample, FlipAxis axis) {
  const int a = static_cast<int>(axis);
  const auto& meta = sample.labels.meta;
  const double c = mid_plane(meta, axis);
  SceneSample out = sample;
  out.labels.labels = torch::flip(sample.labels.labels, {a});
  out.points = sample.points.clone();
  if (out.points.numel() > 0) {
    out.points.select(1, a).copy_(static_cast<float>(2.0 * c) - sample.points.select(1, a));
  }
  out.views.clear();
  for (const auto& v : sample.views) {
    CameraView f = v;
    f.pose = flip_pose(v.pose, axis, c);
    f.intrinsics = flip_intrinsics(v.intrinsics, v.width());
    f.image = torch::flip(v.image, {2});
    if (v.has_depth()) f.gt_depth = torch::flip(v.gt_depth, {1});
    out.views.push_back(f);
  }
  return out;
}

SceneSpec flip_spec(const SceneSpec& spec, FlipAxis axis) {
  const int a = static_cast<int>(axis);
  const double c = mid_plane(spec.meta, axis);
  SceneSpec out = spec;
  for (auto& p : out.primitives) p.center[a] = 2.0 * c - p.center[a];
  for (auto& cam : out.cameras) {
    cam.pose = flip_pose(cam.pose, axis, c);
    cam.intrinsics = flip_intrinsics(cam.intrinsics, cam.width);
  }
  return out;
}

nlohmann::json to_json(const ClassTable& table) {
  nlohmann::json j;
  j["free_class"] = table.free_class;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : table.classes) {
    j["classes"].push_back({{"name", c.name}, {"color", {c.color[0], c.color[1], c.color[2]}}});
  }
  return j;
}

ClassTable class_table_from_json(const nlohmann::json& j) {
  ClassTable t;
  t.free_class = j.at("free_class").get<int>();
  for (const auto& c : j.at("classes")) {
    ClassInfo info;
    info.name = c.at("name").get<std::string>();
    for (int i = 0; i < 3; ++i) info.color[i] = c.at("color").at(i).get<std::uint8_t>();
    t.classes.push_back(info);
  }
  if (t.free_class < 0 || t.free_class >= t.size()) {
    throw FormatError("class table free_class out of range");
  }
  return t;
}

namespace {

nlohmann::json matrix_json(const Eigen::Matrix3d& m) {
  nlohmann::json j = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) j.push_back(m(r, c));
  return j;
}

Eigen::Matrix3d matrix_from_json(const nlohmann::json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r * 3 + c).get<double>();
  return m;
}

std::string blob_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05zu.occf", i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "voxocc-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["class_table"] = to_json(dataset.classes);
  manifest["grid"] = to_json(dataset.meta);
  manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (!(s.labels.meta == dataset.meta)) {
      throw ArgumentError("sample " + std::to_string(i) + " grid differs from the dataset grid");
    }
    NamedArrays arrays{{"labels", s.labels.labels.to(torch::kUInt8)},
                       {"points", s.points.to(torch::kFloat32)},
                       {"point_labels", s.point_labels.to(torch::kUInt8)}};
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t v = 0; v < s.views.size(); ++v) {
      const auto& view = s.views[v];
      arrays.emplace_back("image." + std::to_string(v), view.image.to(torch::kFloat32));
      if (view.has_depth()) {
        arrays.emplace_back("depth." + std::to_string(v), view.gt_depth.to(torch::kFloat32));
      }
      views.push_back({{"intrinsics", matrix_json(view.intrinsics)},
                       {"rotation", matrix_json(view.pose.rotation)},
                       {"translation",
                        {view.pose.translation.x(), view.pose.translation.y(),
                         view.pose.translation.z()}},
                       {"image_flipped", view.image_flipped},
                       {"has_depth", view.has_depth()}});
    }
    write_blob(dir / blob_name(i), arrays);
    manifest["samples"].push_back({{"file", blob_name(i)}, {"seed", s.seed}, {"views", views}});
  }
  write_json(dir / "manifest.json", manifest);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw FormatError("no dataset at " + dir.string() + " (manifest.json missing)");
  }
  const auto manifest = read_json(path);
  try {
    if (manifest.value("format", "") != "voxocc-dataset") {
      throw FormatError(path.string() + ": not a voxocc dataset manifest");
    }
    const int version = manifest.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw FormatError(path.string() + ": dataset version " + std::to_string(version) +
                        ", expected " + std::to_string(kDatasetVersion));
    }
    Dataset d;
    d.classes = class_table_from_json(manifest.at("class_table"));
    d.meta = grid_meta_from_json(manifest.at("grid"));
    for (const auto& entry : manifest.at("samples")) {
      const auto blob_path = dir / entry.at("file").get<std::string>();
      const auto arrays = read_blob(blob_path);
      SceneSample s;
      s.seed = entry.at("seed").get<std::uint64_t>();
      s.labels.meta = d.meta;
      s.labels.labels = find_array(arrays, "labels", blob_path);
      s.labels.validate(d.classes.size());
      s.points = find_array(arrays, "points", blob_path);
      s.point_labels = find_array(arrays, "point_labels", blob_path);
      const auto& views = entry.at("views");
      for (std::size_t v = 0; v < views.size(); ++v) {
        CameraView view;
        view.intrinsics = matrix_from_json(views[v].at("intrinsics"));
        view.pose.rotation = matrix_from_json(views[v].at("rotation"));
        for (int a = 0; a < 3; ++a) {
          view.pose.translation[a] = views[v].at("translation").at(a).get<double>();
        }
        view.image_flipped = views[v].at("image_flipped").get<bool>();
        view.image = find_array(arrays, "image." + std::to_string(v), blob_path);
        if (views[v].at("has_depth").get<bool>()) {
          view.gt_depth = find_array(arrays, "depth." + std::to_string(v), blob_path);
        }
        s.views.push_back(view);
      }
      d.samples.push_back(std::move(s));
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace voxocc
