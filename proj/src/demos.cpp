#include "featfield/demos.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "featfield/gnft.hpp"
#include "featfield/voxelize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ff {

size_t Dataset::feat_dim() const {
  for (const auto& s : scenes)
    for (const auto& v : s.views)
      if (v.feat.rank() == 3) return v.feat.shape()[2];
  return 0;
}

static SyntheticDemo load_demo(const fs::path& ddir) {
  SyntheticDemo demo;
  const fs::path fpath = ddir / "frames.jsonl";
  std::ifstream f(fpath);
  if (!f) throw std::runtime_error("load_dataset: missing " + fpath.string());
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: " + fpath.string() + " line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    DemoFrame fr;
    auto p = row.at("pose");
    fr.pose = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    auto e = row.at("euler");
    fr.euler = Vec3(e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>());
    fr.open = row.at("open").get<int>();
    fr.timestep = row.at("timestep").get<double>();
    fr.joint_vel = row.at("joint_vel").get<double>();
    fr.collide = row.value("collide", 1);
    demo.frames.push_back(fr);
  }
  const fs::path lpath = ddir / "lang.txt";
  std::ifstream fl(lpath);
  if (!fl) throw std::runtime_error("load_dataset: missing " + lpath.string());
  std::getline(fl, demo.task);
  while (!demo.task.empty() && (demo.task.back() == '\n' || demo.task.back() == '\r' ||
                                demo.task.back() == ' '))
    demo.task.pop_back();
  return demo;
}

LoadedScene load_scene(const std::string& scene_dir) {
  const fs::path sdir(scene_dir);
  if (!fs::is_directory(sdir))
    throw std::runtime_error("load_scene: no such directory " + scene_dir);
  LoadedScene scene;
  const fs::path vdir = sdir / "views";
  for (size_t k = 0;; ++k) {
    const std::string stem = (vdir / std::to_string(k)).string();
    const bool any = fs::exists(stem + ".rgb.gnft") || fs::exists(stem + ".depth.gnft") ||
                     fs::exists(stem + ".feat.gnft") || fs::exists(stem + ".cam.json");
    if (!any) break;
    if (!fs::exists(stem + ".cam.json"))
      throw std::runtime_error("load_scene: missing camera file " + stem + ".cam.json");
    LoadedView v;
    v.cam = CameraModel::load_json(stem + ".cam.json");
    v.rgb = gnft::load(stem + ".rgb.gnft");
    v.depth = gnft::load(stem + ".depth.gnft");
    v.feat = gnft::load(stem + ".feat.gnft");
    scene.views.push_back(std::move(v));
  }
  for (size_t j = 0;; ++j) {
    const fs::path ddir = sdir / ("demo_" + std::to_string(j));
    if (!fs::is_directory(ddir)) break;
    scene.demos.push_back(load_demo(ddir));
  }
  return scene;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  for (size_t si = 0;; ++si) {
    const fs::path sdir = fs::path(dir) / ("scene_" + std::to_string(si));
    if (!fs::is_directory(sdir)) break;
    ds.scenes.push_back(load_scene(sdir.string()));
  }
  if (ds.scenes.empty())
    throw std::runtime_error("load_dataset: no scene_<i> directories under " + dir);
  return ds;
}

std::vector<Keyframe> extract_keyframes(const SyntheticDemo& demo, double eps_v,
                                        size_t demo_id) {
  if (eps_v <= 0) throw std::invalid_argument("extract_keyframes: eps_v must be positive");
  const auto& fr = demo.frames;
  if (fr.size() < 2)
    throw std::invalid_argument("extract_keyframes: demo has fewer than 2 frames");

  auto as_kf = [&](size_t i) {
    Keyframe k;
    k.frame = i;
    k.pose = fr[i].pose;
    k.euler = fr[i].euler;
    k.open = fr[i].open;
    k.collide = fr[i].collide;
    k.demo_id = demo_id;
    return k;
  };

  std::vector<Keyframe> out;
  bool prev_flagged = false;
  for (size_t i = 1; i < fr.size(); ++i) {
    const bool flagged = fr[i].joint_vel < eps_v && fr[i].open == fr[i - 1].open;
    if (flagged && !prev_flagged) out.push_back(as_kf(i));
    prev_flagged = flagged;
  }
  if (out.empty() || out.back().frame != fr.size() - 1) out.push_back(as_kf(fr.size() - 1));
  return out;
}

DiscretizedAction discretize_action(const Vec3& pose, const Vec3& euler, int open, int collide,
                                    const Vec3& ws_lo, const Vec3& ws_hi, size_t grid,
                                    size_t rot_bins) {
  if (grid < 1) throw std::invalid_argument("discretize_action: grid must be >= 1");
  DiscretizedAction a;
  for (int ax = 0; ax < 3; ++ax) {
    const double lo = ws_lo[ax], hi = ws_hi[ax];
    if (!(hi > lo)) throw std::invalid_argument("discretize_action: empty workspace extent");
    const double x = (pose[ax] - lo) / (hi - lo);
    const double c = std::floor(x * (double)grid);
    if (!(x >= 0.0) || c < 0 || c >= (double)grid)
      throw std::domain_error("discretize_action: pose outside workspace");
    a.cell[ax] = (int)c;
    a.rot[ax] = rot_bin_of(euler[ax], (int)rot_bins);
  }
  a.open = open ? 1 : 0;
  a.collide = collide ? 1 : 0;
  return a;
}

void undiscretize_action(const DiscretizedAction& a, const Vec3& ws_lo, const Vec3& ws_hi,
                         size_t grid, Vec3* pose, Vec3* euler, size_t rot_bins) {
  for (int ax = 0; ax < 3; ++ax) {
    (*pose)[ax] = ws_lo[ax] + (a.cell[ax] + 0.5) / (double)grid * (ws_hi[ax] - ws_lo[ax]);
    (*euler)[ax] = rot_bin_center(a.rot[ax], (int)rot_bins);
  }
}

std::vector<TrainingTuple> make_training_tuples(const SyntheticDemo& demo,
                                                const std::vector<Keyframe>& keyframes,
                                                const LoadedScene& scene, const Vec3& ws_lo,
                                                const Vec3& ws_hi, size_t grid,
                                                size_t rot_bins) {
  if (scene.views.empty())
    throw std::invalid_argument("make_training_tuples: scene has no views");
  if (demo.frames.empty())
    throw std::invalid_argument("make_training_tuples: demo has no frames");
  const LoadedView& front = scene.views[0];
  Tensor obs = voxelize_rgbd(front.rgb, front.depth, front.cam, ws_lo, ws_hi, grid);

  std::vector<TrainingTuple> out;
  for (size_t j = 0; j < keyframes.size(); ++j) {
    const Keyframe& kf = keyframes[j];
    DiscretizedAction action;
    try {
      action = discretize_action(kf.pose, kf.euler, kf.open, kf.collide, ws_lo, ws_hi, grid,
                                 rot_bins);
    } catch (const std::domain_error&) {
      std::fprintf(stderr,
                   "[demos] warning: keyframe %zu pose outside workspace; tuple skipped\n",
                   kf.frame);
      continue;
    }
    const size_t obs_frame = j == 0 ? 0 : keyframes[j - 1].frame;
    const DemoFrame& of = demo.frames.at(obs_frame);
    Tensor proprio = Tensor::zeros({4}, Dtype::F32);
    proprio.set(0, of.open);
    proprio.set(1, of.open);
    proprio.set(2, of.open);
    proprio.set(3, of.timestep);

    TrainingTuple t;
    t.obs = obs;  // shared handle: the scene is static across the demo
    t.proprio = proprio;
    t.task = demo.task;
    t.action = action;
    t.obs_frame = obs_frame;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ff
