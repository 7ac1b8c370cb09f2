#include "rlf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "json_detail.hpp"
#include "rlf/errors.hpp"
#include "rlf/iou.hpp"
#include "rlf/random.hpp"

namespace rlf::synth {
namespace {

float f32(double v) { return static_cast<float>(v); }
// The volatile keeps GCC 11's SLP vectorizer from dropping the rounding (-O3).
double q32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

void warn(std::vector<std::string>* sink, const std::string& msg) {
  if (sink) sink->push_back(msg);
  std::cerr << "warning: " << msg << '\n';
}

// Unit line-of-sight in BEV from the sensor at the origin.
std::array<double, 2> line_of_sight(double x, double y) {
  const double r = std::hypot(x, y);
  if (r < 1e-9) return {1.0, 0.0};
  return {x / r, y / r};
}

bool inside_any(const std::vector<Box3D>& boxes, double x, double y) {
  return std::any_of(boxes.begin(), boxes.end(), [&](const Box3D& b) { return bev_contains(b, x, y); });
}

void add_object_lidar(const Box3D& box, const ClassPrior& prior, const SceneSpec& spec, bool sparse, Rng& rng,
                      std::vector<LidarPoint>& out) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double range = std::max(1.0, std::hypot(box.cx, box.cy));
  // Faces: +l, -l, +w, -w in the box frame, plus the top.
  struct Face {
    double nx, ny;  // outward normal (box frame)
    double extent;  // along-face width
    double offset;  // distance from center to face
  };
  const std::array<Face, 4> faces{{{1, 0, box.w, box.l / 2}, {-1, 0, box.w, box.l / 2},
                                   {0, 1, box.l, box.w / 2}, {0, -1, box.l, box.w / 2}}};
  std::vector<std::size_t> visible;
  double area = box.l * box.w;  // top
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const Face& f = faces[i];
    const double wx = c * f.nx - s * f.ny, wy = s * f.nx + c * f.ny;
    const double fx = box.cx + wx * f.offset, fy = box.cy + wy * f.offset;
    if (wx * fx + wy * fy < 0.0) {
      visible.push_back(i);
      area += f.extent * box.h;
    }
  }
  int n;
  if (sparse) {
    n = rng.poisson(1.0);
  } else {
    n = static_cast<int>(std::round(spec.lidar_surface_density * area * 10.0 / range));
    n = std::clamp(n, 3, 400);
  }
  const double top_area = box.l * box.w;
  for (int k = 0; k < n; ++k) {
    double u, v, z;  // box frame
    double pick = rng.uniform(0.0, area);
    if (pick < top_area || visible.empty()) {
      u = rng.uniform(-0.45, 0.45) * box.l;
      v = rng.uniform(-0.45, 0.45) * box.w;
      z = box.h * 0.98;
    } else {
      pick -= top_area;
      std::size_t fi = visible.back();
      for (std::size_t i : visible) {
        const double a = faces[i].extent * box.h;
        if (pick < a) {
          fi = i;
          break;
        }
        pick -= a;
      }
      const Face& f = faces[fi];
      const double along = rng.uniform(-0.45, 0.45) * f.extent;
      if (f.nx != 0) {
        u = f.nx * f.offset * 0.95;
        v = along;
      } else {
        u = along;
        v = f.ny * f.offset * 0.95;
      }
      z = rng.uniform(0.05, 0.98) * box.h;
    }
    u = std::clamp(u + rng.normal(0.0, spec.lidar_noise), -0.49 * box.l, 0.49 * box.l);
    v = std::clamp(v + rng.normal(0.0, spec.lidar_noise), -0.49 * box.w, 0.49 * box.w);
    LidarPoint p;
    p.x = f32(box.cx + c * u - s * v);
    p.y = f32(box.cy + s * u + c * v);
    p.z = f32(box.cz - 0.5 * box.h + z);
    p.intensity = f32(std::clamp(rng.normal(prior.intensity, 0.08), 0.0, 1.0));
    out.push_back(p);
  }
}

}  // namespace

void SceneSpec::validate() const {
  for (const auto& c : classes) {
    if (c.min_count < 0 || c.max_count < c.min_count) throw ConfigError("scene class counts must satisfy 0 <= min <= max");
    if (!(c.l > 0 && c.w > 0 && c.h > 0)) throw ConfigError("scene class sizes must be positive");
    if (c.speed_min < 0 || c.speed_max < c.speed_min) throw ConfigError("scene class speeds must satisfy 0 <= min <= max");
    if (c.stationary_fraction < 0 || c.stationary_fraction > 1) throw ConfigError("stationary_fraction outside [0, 1]");
  }
  if (ego_speed_min < 0 || ego_speed_max < ego_speed_min) throw ConfigError("ego speed range invalid");
  if (!(area_x_max > area_x_min && area_y_max > area_y_min)) throw ConfigError("placement area is empty");
  if (clutter_rate < 0 || lidar_ground_points < 0 || radar_density < 0) throw ConfigError("negative point rate");
}

bool operator==(const Frame& a, const Frame& b) {
  auto eq_r = [](const RadarPoint& p, const RadarPoint& q) {
    return p.x == q.x && p.y == q.y && p.z == q.z && p.v_r == q.v_r && p.v_a == q.v_a && p.rcs == q.rcs;
  };
  auto eq_l = [](const LidarPoint& p, const LidarPoint& q) {
    return p.x == q.x && p.y == q.y && p.z == q.z && p.intensity == q.intensity;
  };
  auto eq_b = [](const Box3D& p, const Box3D& q) {
    return p.cx == q.cx && p.cy == q.cy && p.cz == q.cz && p.l == q.l && p.w == q.w && p.h == q.h && p.yaw == q.yaw &&
           p.class_id == q.class_id && p.velocity == q.velocity;
  };
  return a.frame_id == b.frame_id && a.ego_velocity == b.ego_velocity &&
         std::equal(a.radar.begin(), a.radar.end(), b.radar.begin(), b.radar.end(), eq_r) &&
         std::equal(a.lidar.begin(), a.lidar.end(), b.lidar.begin(), b.lidar.end(), eq_l) &&
         std::equal(a.labels.begin(), a.labels.end(), b.labels.begin(), b.labels.end(), eq_b) && a.sparse == b.sparse;
}

Frame generate_frame(const SceneSpec& spec, std::int64_t frame_id, std::vector<std::string>* warnings) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(frame_id)));
  Frame frame;
  frame.frame_id = frame_id;
  frame.ego_velocity = {q32(rng.uniform(spec.ego_speed_min, spec.ego_speed_max)), 0.0};

  // Object placement with BEV clearance.
  for (int cls = 0; cls < kNumClasses; ++cls) {
    const ClassPrior& prior = spec.classes[static_cast<std::size_t>(cls)];
    const int count = prior.min_count + static_cast<int>(rng.index(static_cast<std::size_t>(prior.max_count - prior.min_count + 1)));
    for (int k = 0; k < count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < spec.placement_retries && !placed; ++attempt) {
        Box3D b;
        b.class_id = cls;
        b.l = q32(prior.l * std::clamp(1.0 + prior.size_jitter * rng.normal(), 0.7, 1.3));
        b.w = q32(prior.w * std::clamp(1.0 + prior.size_jitter * rng.normal(), 0.7, 1.3));
        b.h = q32(prior.h * std::clamp(1.0 + prior.size_jitter * rng.normal(), 0.7, 1.3));
        b.yaw = q32(normalize_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi)));
        const double r = 0.5 * std::hypot(b.l, b.w);
        if (spec.area_x_max - spec.area_x_min <= 2 * r || spec.area_y_max - spec.area_y_min <= 2 * r) break;
        b.cx = q32(rng.uniform(spec.area_x_min + r, spec.area_x_max - r));
        b.cy = q32(rng.uniform(spec.area_y_min + r, spec.area_y_max - r));
        b.cz = q32(0.5 * b.h);
        Box3D grown = b;
        grown.l += spec.min_gap;
        grown.w += spec.min_gap;
        const bool clash = std::any_of(frame.labels.begin(), frame.labels.end(), [&](const Box3D& o) {
          Box3D og = o;
          og.l += spec.min_gap;
          og.w += spec.min_gap;
          return rotated_iou_bev(grown, og) > 0.0;
        });
        if (clash) continue;
        const bool moving = !rng.bernoulli(prior.stationary_fraction);
        const double speed = moving ? rng.uniform(std::max(prior.speed_min, 0.0), prior.speed_max) : 0.0;
        b.velocity = {q32(speed * std::cos(b.yaw)), q32(speed * std::sin(b.yaw))};
        frame.labels.push_back(b);
        frame.sparse.push_back(rng.bernoulli(spec.sparse_fraction) ? 1 : 0);
        placed = true;
      }
      if (!placed) {
        warn(warnings, "frame " + std::to_string(frame_id) + ": could not place a " + std::string(class_name(cls)) +
                           " without overlap; generating fewer objects");
      }
    }
  }

  const std::array<double, 2> ego = frame.ego_velocity;
  auto make_radar = [&](double x, double y, double z, double true_va, double rcs) {
    const auto los = line_of_sight(x, y);
    const double ego_los = ego[0] * los[0] + ego[1] * los[1];
    RadarPoint p;
    p.x = f32(x);
    p.y = f32(y);
    p.z = f32(z);
    p.v_a = f32(true_va + rng.normal(0.0, spec.velocity_noise));
    p.v_r = f32(true_va - ego_los + rng.normal(0.0, spec.velocity_noise));
    p.rcs = f32(rcs);
    return p;
  };

  for (std::size_t i = 0; i < frame.labels.size(); ++i) {
    const Box3D& b = frame.labels[i];
    const ClassPrior& prior = spec.classes[static_cast<std::size_t>(b.class_id)];
    add_object_lidar(b, prior, spec, frame.sparse[i] != 0, rng, frame.lidar);

    const double lambda = std::max(spec.radar_min_mean, spec.radar_density * b.l * b.w);
    const int n = rng.poisson(lambda);
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    for (int k = 0; k < n; ++k) {
      const double u = rng.uniform(-0.5, 0.5) * b.l + rng.normal(0.0, spec.radar_position_noise);
      const double v = rng.uniform(-0.5, 0.5) * b.w + rng.normal(0.0, spec.radar_position_noise);
      const double x = b.cx + c * u - s * v;
      const double y = b.cy + s * u + c * v;
      const double z = rng.uniform(0.2, 1.0) * b.h;
      const auto los = line_of_sight(x, y);
      const double va = b.velocity[0] * los[0] + b.velocity[1] * los[1];
      frame.radar.push_back(make_radar(x, y, z, va, rng.normal(prior.rcs_mean, prior.rcs_sd)));
    }
  }

  // Ground returns, density falling off as 1/range.
  const int ground = rng.poisson(spec.lidar_ground_points);
  for (int k = 0; k < ground; ++k) {
    const double r = rng.uniform(1.0, 30.0);
    const double az = rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
    const double x = r * std::cos(az), y = r * std::sin(az);
    if (x < spec.area_x_min - 1.0 || x > spec.area_x_max + 1.0 || y < spec.area_y_min - 1.0 ||
        y > spec.area_y_max + 1.0 || inside_any(frame.labels, x, y)) {
      continue;
    }
    LidarPoint p;
    p.x = f32(x);
    p.y = f32(y);
    p.z = f32(rng.normal(0.0, 0.03));
    p.intensity = f32(std::clamp(rng.normal(0.1, 0.04), 0.0, 1.0));
    frame.lidar.push_back(p);
  }

  // Stationary clutter: v_a near zero, v_r carries the ego motion.
  const int clutter = rng.poisson(spec.clutter_rate);
  for (int k = 0; k < clutter; ++k) {
    const double x = rng.uniform(spec.area_x_min, spec.area_x_max);
    const double y = rng.uniform(spec.area_y_min, spec.area_y_max);
    if (inside_any(frame.labels, x, y)) continue;
    frame.radar.push_back(make_radar(x, y, rng.uniform(0.0, 2.0), 0.0, rng.normal(0.0, 5.0)));
  }
  return frame;
}

namespace {

using detail::json;

json prior_to_json(const ClassPrior& p) {
  return {{"min_count", p.min_count},   {"max_count", p.max_count}, {"size", {p.l, p.w, p.h}},
          {"size_jitter", p.size_jitter}, {"speed", {p.speed_min, p.speed_max}},
          {"stationary_fraction", p.stationary_fraction},         {"rcs", {p.rcs_mean, p.rcs_sd}},
          {"intensity", p.intensity}};
}

void prior_from_json(const json& j, ClassPrior& p, const std::string& where) {
  detail::maybe(j, "min_count", p.min_count, where);
  detail::maybe(j, "max_count", p.max_count, where);
  if (j.contains("size")) {
    const auto v = detail::get_as<std::array<double, 3>>(j["size"], where + ".size");
    p.l = v[0];
    p.w = v[1];
    p.h = v[2];
  }
  detail::maybe(j, "size_jitter", p.size_jitter, where);
  if (j.contains("speed")) {
    const auto v = detail::get_as<std::array<double, 2>>(j["speed"], where + ".speed");
    p.speed_min = v[0];
    p.speed_max = v[1];
  }
  detail::maybe(j, "stationary_fraction", p.stationary_fraction, where);
  if (j.contains("rcs")) {
    const auto v = detail::get_as<std::array<double, 2>>(j["rcs"], where + ".rcs");
    p.rcs_mean = v[0];
    p.rcs_sd = v[1];
  }
  detail::maybe(j, "intensity", p.intensity, where);
}

}  // namespace

std::string scene_spec_to_json(const SceneSpec& s) {
  json classes = json::object();
  for (int c = 0; c < kNumClasses; ++c) classes[std::string(class_name(c))] = prior_to_json(s.classes[static_cast<std::size_t>(c)]);
  json j = {{"classes", classes},
            {"ego_speed", {s.ego_speed_min, s.ego_speed_max}},
            {"area", {s.area_x_min, s.area_x_max, s.area_y_min, s.area_y_max}},
            {"min_gap", s.min_gap},
            {"placement_retries", s.placement_retries},
            {"lidar_surface_density", s.lidar_surface_density},
            {"lidar_ground_points", s.lidar_ground_points},
            {"lidar_noise", s.lidar_noise},
            {"sparse_fraction", s.sparse_fraction},
            {"radar_density", s.radar_density},
            {"radar_min_mean", s.radar_min_mean},
            {"radar_position_noise", s.radar_position_noise},
            {"clutter_rate", s.clutter_rate},
            {"velocity_noise", s.velocity_noise},
            {"seed", s.seed}};
  return j.dump(2);
}

SceneSpec scene_spec_from_json(const std::string& text) {
  const json j = detail::parse_text(text, "scene spec");
  SceneSpec s;
  if (j.contains("classes")) {
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string name(class_name(c));
      if (j["classes"].contains(name)) prior_from_json(j["classes"][name], s.classes[static_cast<std::size_t>(c)], "classes." + name);
    }
  }
  if (j.contains("ego_speed")) {
    const auto v = detail::get_as<std::array<double, 2>>(j["ego_speed"], "ego_speed");
    s.ego_speed_min = v[0];
    s.ego_speed_max = v[1];
  }
  if (j.contains("area")) {
    const auto v = detail::get_as<std::array<double, 4>>(j["area"], "area");
    s.area_x_min = v[0];
    s.area_x_max = v[1];
    s.area_y_min = v[2];
    s.area_y_max = v[3];
  }
  detail::maybe(j, "min_gap", s.min_gap);
  detail::maybe(j, "placement_retries", s.placement_retries);
  detail::maybe(j, "lidar_surface_density", s.lidar_surface_density);
  detail::maybe(j, "lidar_ground_points", s.lidar_ground_points);
  detail::maybe(j, "lidar_noise", s.lidar_noise);
  detail::maybe(j, "sparse_fraction", s.sparse_fraction);
  detail::maybe(j, "radar_density", s.radar_density);
  detail::maybe(j, "radar_min_mean", s.radar_min_mean);
  detail::maybe(j, "radar_position_noise", s.radar_position_noise);
  detail::maybe(j, "clutter_rate", s.clutter_rate);
  detail::maybe(j, "velocity_noise", s.velocity_noise);
  detail::maybe(j, "seed", s.seed);
  s.validate();
  return s;
}

}  // namespace rlf::synth
