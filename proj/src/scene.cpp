#include "featfield/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "featfield/gnft.hpp"
#include "featfield/rng.hpp"

namespace ff {

namespace fs = std::filesystem;
using nlohmann::json;

bool Primitive::contains(const Vec3& p) const {
  if (kind == Kind::Box) {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
           p.z <= hi.z;
  }
  return (p - center).norm() <= radius;
}

bool Primitive::intersect(const Ray& r, double& t0, double& t1) const {
  if (kind == Kind::Box) {
    double tmin = -1e300, tmax = 1e300;
    const double o[3] = {r.o.x, r.o.y, r.o.z};
    const double d[3] = {r.d.x, r.d.y, r.d.z};
    const double blo[3] = {lo.x, lo.y, lo.z};
    const double bhi[3] = {hi.x, hi.y, hi.z};
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-12) {
        if (o[a] < blo[a] || o[a] > bhi[a]) return false;
        continue;
      }
      double ta = (blo[a] - o[a]) / d[a];
      double tb = (bhi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      tmin = std::max(tmin, ta);
      tmax = std::min(tmax, tb);
    }
    if (tmin > tmax) return false;
    t0 = tmin;
    t1 = tmax;
    return true;
  }
  // Sphere: |o + t d - c|^2 = r^2 with |d| = 1.
  const Vec3 oc = r.o - center;
  const double b = oc.dot(r.d);
  const double c = oc.dot(oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  t0 = -b - sq;
  t1 = -b + sq;
  return true;
}

SceneSpec generate_scene(uint64_t seed, const SceneGenConfig& cfg) {
  if (cfg.feat_dim < 1) throw std::runtime_error("generate_scene: feat_dim must be >= 1");
  if (cfg.min_prims < 1 || cfg.max_prims < cfg.min_prims)
    throw std::runtime_error("generate_scene: invalid primitive count range");
  Rng rng(seed);
  SceneSpec s;
  s.ws_lo = cfg.ws_lo;
  s.ws_hi = cfg.ws_hi;
  s.background = cfg.background;
  s.feat_dim = cfg.feat_dim;
  const int n = cfg.min_prims + static_cast<int>(rng.below(
                                    static_cast<uint64_t>(cfg.max_prims - cfg.min_prims + 1)));
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.kind = rng.uniform() < 0.5 ? Primitive::Kind::Box : Primitive::Kind::Sphere;
    const double size = cfg.min_size + (cfg.max_size - cfg.min_size) * rng.uniform();
    Vec3 c;
    // Keep the primitive strictly inside the workspace.
    c.x = s.ws_lo.x + size + (s.ws_hi.x - s.ws_lo.x - 2 * size) * rng.uniform();
    c.y = s.ws_lo.y + size + (s.ws_hi.y - s.ws_lo.y - 2 * size) * rng.uniform();
    c.z = s.ws_lo.z + size + (s.ws_hi.z - s.ws_lo.z - 2 * size) * rng.uniform();
    if (p.kind == Primitive::Kind::Box) {
      Vec3 half(size, size * (0.6 + 0.4 * rng.uniform()), size * (0.6 + 0.4 * rng.uniform()));
      p.lo = c - half;
      p.hi = c + half;
    } else {
      p.center = c;
      p.radius = size;
    }
    p.sigma = cfg.sigma_lo + (cfg.sigma_hi - cfg.sigma_lo) * rng.uniform();
    p.color = Vec3(0.15 + 0.85 * rng.uniform(), 0.15 + 0.85 * rng.uniform(),
                   0.15 + 0.85 * rng.uniform());
    p.feature.resize(cfg.feat_dim);
    double nrm = 0;
    for (auto& f : p.feature) {
      f = static_cast<float>(rng.normal());
      nrm += static_cast<double>(f) * f;
    }
    nrm = std::sqrt(std::max(nrm, 1e-30));
    for (auto& f : p.feature) f = static_cast<float>(f / nrm);
    s.primitives.push_back(std::move(p));
  }
  return s;
}

AnalyticTrace trace_analytic(const SceneSpec& scene, const Ray& ray) {
  AnalyticTrace out;
  out.feat.assign(scene.feat_dim, 0.0);
  out.rgb_fg = Vec3(0, 0, 0);

  // Clip each primitive's entry/exit to [t_n, t_f] and collect the boundaries.
  struct Span {
    double t0, t1;
    const Primitive* p;
  };
  std::vector<Span> spans;
  std::vector<double> cuts{ray.t_n, ray.t_f};
  for (const auto& p : scene.primitives) {
    double t0, t1;
    if (!p.intersect(ray, t0, t1)) continue;
    t0 = std::max(t0, ray.t_n);
    t1 = std::min(t1, ray.t_f);
    if (t1 <= t0) continue;
    spans.push_back({t0, t1, &p});
    cuts.push_back(t0);
    cuts.push_back(t1);
  }
  std::sort(cuts.begin(), cuts.end());

  double T = 1.0;       // transmittance entering the current segment
  double depth_acc = 0; // E[t] over the termination distribution
  for (size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    const double len = b - a;
    if (len <= 1e-12) continue;
    const double mid = 0.5 * (a + b);
    double sig = 0;
    Vec3 col(0, 0, 0);
    for (const auto& sp : spans) {
      if (mid >= sp.t0 && mid <= sp.t1) {
        sig += sp.p->sigma;
        col = col + sp.p->color * sp.p->sigma;
      }
    }
    if (sig <= 0) continue;
    const double alpha = 1.0 - std::exp(-sig * len);
    const double w = T * alpha;
    col = col / sig;  // density-weighted average color
    out.rgb_fg = out.rgb_fg + col * w;
    for (const auto& sp : spans) {
      if (mid >= sp.t0 && mid <= sp.t1) {
        const double fw = w * sp.p->sigma / sig;
        for (size_t j = 0; j < scene.feat_dim && j < sp.p->feature.size(); ++j)
          out.feat[j] += fw * static_cast<double>(sp.p->feature[j]);
      }
    }
    depth_acc += w * mid;
    T *= 1.0 - alpha;
  }
  out.depth = depth_acc + T * ray.t_f;  // residual mass terminates at the far plane
  out.acc = 1.0 - T;
  return out;
}

ViewImages render_analytic(const SceneSpec& scene, const CameraModel& cam) {
  const size_t H = static_cast<size_t>(cam.h), W = static_cast<size_t>(cam.w);
  const size_t F = scene.feat_dim;
  ViewImages v;
  v.rgb = Tensor::zeros({H, W, 3}, Dtype::F32);
  v.depth = Tensor::zeros({H, W}, Dtype::F32);
  v.feat = Tensor::zeros({H, W, F}, Dtype::F32);
  auto* rgb = v.rgb.f32();
  auto* dep = v.depth.f32();
  auto* fea = v.feat.f32();
  for (size_t iy = 0; iy < H; ++iy) {
    for (size_t ix = 0; ix < W; ++ix) {
      const Ray r = ray_for_pixel(cam, static_cast<int>(ix), static_cast<int>(iy));
      const AnalyticTrace t = trace_analytic(scene, r);
      const double rem = 1.0 - t.acc;
      const size_t pix = iy * W + ix;
      rgb[pix * 3 + 0] = static_cast<float>(t.rgb_fg.x + rem * scene.background.x);
      rgb[pix * 3 + 1] = static_cast<float>(t.rgb_fg.y + rem * scene.background.y);
      rgb[pix * 3 + 2] = static_cast<float>(t.rgb_fg.z + rem * scene.background.z);
      dep[pix] = static_cast<float>(t.depth);
      for (size_t j = 0; j < F; ++j) fea[pix * F + j] = static_cast<float>(t.feat[j]);
    }
  }
  return v;
}

std::vector<CameraModel> make_camera_rig(const SceneSpec& scene, int k_aux, int img_hw) {
  if (k_aux < 0 || img_hw < 2) throw std::runtime_error("make_camera_rig: invalid rig request");
  const Vec3 c = (scene.ws_lo + scene.ws_hi) * 0.5;
  const double rs = (scene.ws_hi - scene.ws_lo).norm() * 0.5;  // bounding-sphere radius
  const double dist = 2.4 * rs;
  const double near = std::max(0.05, dist - 1.2 * rs);
  const double far = dist + 1.2 * rs;
  const double f = static_cast<double>(img_hw);  // focal in pixels

  auto make = [&](const Vec3& dir) {
    const Vec3 eye = c + dir * dist;
    return CameraModel::look_at(eye, c, Vec3(0, 0, 1), f, f, img_hw / 2.0, img_hw / 2.0, img_hw,
                                img_hw, near, far);
  };

  std::vector<CameraModel> rig;
  // Front observation camera: along -y, elevated.
  const double el_front = 35.0 * M_PI / 180.0;
  rig.push_back(make(Vec3(0, -std::cos(el_front), std::sin(el_front))));
  const double el_ring = 30.0 * M_PI / 180.0;
  for (int i = 0; i < k_aux; ++i) {
    const double az = 2.0 * M_PI * i / std::max(1, k_aux) + 0.37;
    rig.push_back(make(
        Vec3(std::cos(az) * std::cos(el_ring), std::sin(az) * std::cos(el_ring), std::sin(el_ring))));
  }
  return rig;
}

namespace {

Vec3 clamp_ws(const SceneSpec& s, Vec3 p, double margin) {
  p.x = std::clamp(p.x, s.ws_lo.x + margin, s.ws_hi.x - margin);
  p.y = std::clamp(p.y, s.ws_lo.y + margin, s.ws_hi.y - margin);
  p.z = std::clamp(p.z, s.ws_lo.z + margin, s.ws_hi.z - margin);
  return p;
}

struct ScriptBuilder {
  SyntheticDemo demo;
  std::vector<DemoFrame> raw;

  void frame(const Vec3& pose, const Vec3& euler, int open, double vel, int collide) {
    DemoFrame f;
    f.pose = pose;
    f.euler = euler;
    f.open = open;
    f.joint_vel = vel;
    f.collide = collide;
    raw.push_back(f);
  }
  // Interpolated transit frames between a and b (excluding endpoints).
  void transit(const Vec3& a, const Vec3& b, const Vec3& euler, int open, int n, double vel,
               int collide) {
    for (int i = 1; i <= n; ++i) {
      const double t = static_cast<double>(i) / (n + 1);
      frame(a + (b - a) * t, euler, open, vel, collide);
    }
  }
  SyntheticDemo finish(const std::string& task) {
    demo.task = task;
    demo.frames = std::move(raw);
    const size_t n = demo.frames.size();
    for (size_t i = 0; i < n; ++i)
      demo.frames[i].timestep = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    return std::move(demo);
  }
};

constexpr double kDipVel = 1e-4;  // below the keyframe threshold

}  // namespace

SyntheticDemo script_demo(const SceneSpec& scene, const std::string& task, uint64_t seed) {
  if (scene.primitives.empty())
    throw std::runtime_error("script_demo: scene has no primitives to act on");
  Rng rng(seed ^ 0x5e1fD3A0u);
  const Vec3 ext = scene.ws_hi - scene.ws_lo;
  const Vec3 home(scene.ws_lo.x + 0.12 * ext.x, scene.ws_lo.y + 0.12 * ext.y,
                  scene.ws_hi.z - 0.08 * ext.z);
  const Vec3 target = clamp_ws(scene, scene.primitives[0].centroid(), 0.02);

  ScriptBuilder b;
  if (task == "reach-primitive") {
    Vec3 hover = target;
    hover.z = std::min(target.z + 0.12, scene.ws_hi.z - 0.02);
    const Vec3 e_transit(0, 0, 0), e_grasp(0, 0, 90);
    b.frame(home, e_transit, 1, 0.5, 1);
    b.transit(home, hover, e_transit, 1, 3, 0.4, 1);
    b.frame(hover, e_transit, 1, kDipVel, 1);          // keyframe: hover (transit)
    b.transit(hover, target, e_grasp, 1, 2, 0.3, 0);
    b.frame(target, e_grasp, 1, kDipVel, 0);           // keyframe: pre-grasp contact
    b.frame(target, e_grasp, 0, kDipVel, 0);           // gripper toggles; not a keyframe
    b.frame(target, e_grasp, 0, kDipVel, 0);           // keyframe: final grasp
    return b.finish(task);
  }
  if (task == "push-primitive-to-target") {
    // Push along the axis direction with the most room in the workspace.
    Vec3 dir(1, 0, 0);
    double best = -1;
    const Vec3 room_hi = scene.ws_hi - target, room_lo = target - scene.ws_lo;
    const Vec3 cand[4] = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0)};
    const double room[4] = {room_hi.x, room_lo.x, room_hi.y, room_lo.y};
    // Deterministic tie-noise keeps the chosen direction varied across seeds.
    for (int i = 0; i < 4; ++i) {
      const double r = room[i] + 1e-3 * rng.uniform();
      if (r > best) {
        best = r;
        dir = cand[i];
      }
    }
    const double push_len = std::min(0.15, best - 0.04);
    const Vec3 goal = clamp_ws(scene, target + dir * push_len, 0.02);
    const Vec3 start = clamp_ws(scene, target - dir * 0.08, 0.02);
    Vec3 hover = start;
    hover.z = std::min(start.z + 0.10, scene.ws_hi.z - 0.02);
    Vec3 retreat = goal;
    retreat.z = std::min(goal.z + 0.10, scene.ws_hi.z - 0.02);
    const double yaw = std::fmod(std::atan2(dir.y, dir.x) * 180.0 / M_PI + 360.0, 360.0);
    const Vec3 e(0, 0, yaw);
    b.frame(home, e, 0, 0.5, 1);
    b.transit(home, hover, e, 0, 3, 0.4, 1);
    b.frame(hover, e, 0, kDipVel, 1);    // keyframe: hover behind object (transit)
    b.transit(hover, start, e, 0, 2, 0.3, 0);
    b.frame(start, e, 0, kDipVel, 0);    // keyframe: contact at push start
    b.transit(start, goal, e, 0, 2, 0.25, 0);
    b.frame(goal, e, 0, kDipVel, 0);     // keyframe: push end
    b.frame(retreat, e, 0, 0.3, 1);
    b.frame(retreat, e, 0, kDipVel, 1);  // keyframe: final retreat
    return b.finish(task);
  }
  throw std::runtime_error("script_demo: unknown task '" + task +
                           "' (expected reach-primitive or push-primitive-to-target)");
}

void export_dataset(const std::string& dir, const std::vector<SceneSpec>& scenes,
                    const std::vector<std::vector<CameraModel>>& cams,
                    const std::vector<std::vector<SyntheticDemo>>& demos) {
  if (scenes.size() != cams.size() || scenes.size() != demos.size())
    throw std::runtime_error("export_dataset: scenes/cams/demos length mismatch");
  for (size_t si = 0; si < scenes.size(); ++si) {
    const fs::path sdir = fs::path(dir) / ("scene_" + std::to_string(si));
    const fs::path vdir = sdir / "views";
    fs::create_directories(vdir);
    for (size_t k = 0; k < cams[si].size(); ++k) {
      const ViewImages v = render_analytic(scenes[si], cams[si][k]);
      const std::string stem = (vdir / std::to_string(k)).string();
      gnft::save(stem + ".rgb.gnft", v.rgb);
      gnft::save(stem + ".depth.gnft", v.depth);
      gnft::save(stem + ".feat.gnft", v.feat);
      cams[si][k].save_json(stem + ".cam.json");
    }
    for (size_t j = 0; j < demos[si].size(); ++j) {
      const fs::path ddir = sdir / ("demo_" + std::to_string(j));
      fs::create_directories(ddir);
      std::ofstream fj(ddir / "frames.jsonl");
      if (!fj) throw std::runtime_error("export_dataset: cannot write " + (ddir / "frames.jsonl").string());
      for (const auto& f : demos[si][j].frames) {
        json row{{"pose", {f.pose.x, f.pose.y, f.pose.z}},
                 {"euler", {f.euler.x, f.euler.y, f.euler.z}},
                 {"open", f.open},
                 {"timestep", f.timestep},
                 {"joint_vel", f.joint_vel},
                 {"collide", f.collide}};
        fj << row.dump() << "\n";
      }
      std::ofstream fl(ddir / "lang.txt");
      fl << demos[si][j].task << "\n";
    }
  }
}

}  // namespace ff
