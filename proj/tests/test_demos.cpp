#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "featfield/demos.hpp"
#include "featfield/rng.hpp"
#include "featfield/scene.hpp"

using namespace ff;
namespace fs = std::filesystem;

namespace {

SyntheticDemo demo_from(const std::vector<double>& vel, const std::vector<int>& open) {
  SyntheticDemo d;
  d.task = "test";
  for (size_t i = 0; i < vel.size(); ++i) {
    DemoFrame f;
    f.pose = Vec3(0.1 * (double)i, 0.2, 0.3);
    f.euler = Vec3(5.0 * (double)i, 0, 0);
    f.open = open[i];
    f.timestep = vel.size() > 1 ? (double)i / (double)(vel.size() - 1) : 0.0;
    f.joint_vel = vel[i];
    f.collide = (int)(i % 2);
    d.frames.push_back(f);
  }
  return d;
}

std::vector<size_t> kf_frames(const std::vector<Keyframe>& kfs) {
  std::vector<size_t> out;
  for (const auto& k : kfs) out.push_back(k.frame);
  return out;
}

// Independent brute-force reimplementation: materialize the per-frame flag
// array, then find run starts, then apply the final-frame rule.
std::vector<size_t> brute_force_keyframes(const SyntheticDemo& d, double eps) {
  const size_t n = d.frames.size();
  std::vector<bool> flag(n, false);
  for (size_t i = 1; i < n; ++i)
    flag[i] = d.frames[i].joint_vel < eps && d.frames[i].open == d.frames[i - 1].open;
  std::vector<size_t> out;
  size_t i = 0;
  while (i < n) {
    if (flag[i]) {
      out.push_back(i);
      while (i < n && flag[i]) ++i;
    } else {
      ++i;
    }
  }
  if (out.empty() || out.back() != n - 1) out.push_back(n - 1);
  return out;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("extract_keyframes: pinned examples") {
  // Velocity dip with constant open: run start + final frame.
  auto d = demo_from({1, 1, 0, 0, 1}, {1, 1, 1, 1, 1});
  CHECK(kf_frames(extract_keyframes(d, 0.1)) == std::vector<size_t>{2, 4});

  // Never slow: only the final frame.
  d = demo_from({1, 1, 1, 1}, {0, 0, 0, 0});
  CHECK(kf_frames(extract_keyframes(d, 0.1)) == std::vector<size_t>{3});

  // Zero-velocity frame right after an open toggle is not flagged.
  d = demo_from({1, 0, 1}, {1, 0, 0});
  CHECK(kf_frames(extract_keyframes(d, 0.1)) == std::vector<size_t>{2});

  // Single dip, final appended.
  d = demo_from({0.2, 0.2, 0.0, 0.2}, {1, 1, 1, 1});
  CHECK(kf_frames(extract_keyframes(d, 1e-3)) == std::vector<size_t>{2, 3});

  // Final frame flagged: not duplicated.
  d = demo_from({1, 1, 0}, {1, 1, 1});
  CHECK(kf_frames(extract_keyframes(d, 0.1)) == std::vector<size_t>{2});

  // Keyframe carries the frame's fields.
  d = demo_from({1, 0, 1}, {1, 1, 1});
  auto kfs = extract_keyframes(d, 0.1, /*demo_id=*/7);
  REQUIRE(kfs.size() == 2);
  CHECK(kfs[0].frame == 1);
  CHECK(kfs[0].pose.x == doctest::Approx(0.1));
  CHECK(kfs[0].euler.x == doctest::Approx(5.0));
  CHECK(kfs[0].collide == 1);
  CHECK(kfs[0].demo_id == 7);

  SyntheticDemo tiny;
  tiny.frames.resize(1);
  CHECK_THROWS_AS(extract_keyframes(tiny, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(extract_keyframes(d, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(extract_keyframes(d, -1.0), std::invalid_argument);
}

TEST_CASE("extract_keyframes matches a brute-force scan on random trajectories") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    size_t n = 2 + rng.below(28);
    std::vector<double> vel(n);
    std::vector<int> open(n);
    int cur = (int)rng.below(2);
    for (size_t i = 0; i < n; ++i) {
      vel[i] = rng.uniform() < 0.4 ? 0.0 : 0.2 + 0.5 * rng.uniform();
      if (rng.uniform() < 0.25) cur = 1 - cur;
      open[i] = cur;
    }
    auto d = demo_from(vel, open);
    auto got = kf_frames(extract_keyframes(d, 0.1));
    auto want = brute_force_keyframes(d, 0.1);
    CHECK(got == want);
    // Indices strictly increasing, final frame always present.
    for (size_t i = 1; i < got.size(); ++i) CHECK(got[i] > got[i - 1]);
    CHECK(got.back() == n - 1);
  }
}

TEST_CASE("scripted demos produce the expected keyframe skeletons") {
  SceneGenConfig cfg;
  cfg.feat_dim = 4;
  SceneSpec scene = generate_scene(11, cfg);

  SyntheticDemo reach = script_demo(scene, "reach-primitive", 1);
  auto rk = extract_keyframes(reach);
  CHECK(kf_frames(rk) == std::vector<size_t>{4, 7, 9});
  CHECK(rk[0].collide == 1);  // transit keyframe avoids collisions
  CHECK(rk[1].collide == 0);  // contact keyframe allows them

  SyntheticDemo push = script_demo(scene, "push-primitive-to-target", 2);
  auto pk = extract_keyframes(push);
  CHECK(kf_frames(pk) == std::vector<size_t>{4, 7, 10, 12});
  CHECK(pk[0].collide == 1);
  CHECK(pk[1].collide == 0);
  CHECK(pk[3].collide == 1);
}

TEST_CASE("discretize_action: floor rule, rotation bins, range errors") {
  Vec3 lo(0, 0, 0), hi(0.64, 0.64, 0.64);
  auto a = discretize_action(Vec3(0.32, 0.32, 0.32), Vec3(0, 0, 0), 1, 0, lo, hi, 100);
  CHECK(a.cell[0] == 50);
  CHECK(a.cell[1] == 50);
  CHECK(a.cell[2] == 50);
  CHECK(a.rot[0] == 0);
  CHECK(a.rot[1] == 0);
  CHECK(a.rot[2] == 0);
  CHECK(a.open == 1);
  CHECK(a.collide == 0);

  a = discretize_action(Vec3(0.0, 0.639, 0.32), Vec3(7.0, 359.9, 182.5), 0, 1, lo, hi, 100);
  CHECK(a.cell[0] == 0);
  CHECK(a.cell[1] == 99);
  CHECK(a.rot[0] == 1);
  CHECK(a.rot[1] == 71);
  CHECK(a.rot[2] == 36);

  CHECK_THROWS_AS(discretize_action(Vec3(-0.01, 0.3, 0.3), Vec3(0, 0, 0), 1, 1, lo, hi, 100),
                  std::domain_error);
  CHECK_THROWS_AS(discretize_action(Vec3(0.64, 0.3, 0.3), Vec3(0, 0, 0), 1, 1, lo, hi, 100),
                  std::domain_error);
}

TEST_CASE("discretize -> undiscretize -> discretize is a fixed point") {
  Rng rng(5150);
  Vec3 lo(0.1, -0.2, 0.0), hi(0.7, 0.4, 0.9);
  size_t grid = 32;
  for (int trial = 0; trial < 200; ++trial) {
    DiscretizedAction a;
    for (int ax = 0; ax < 3; ++ax) {
      a.cell[ax] = (int)rng.below(grid);
      a.rot[ax] = (int)rng.below(72);
    }
    a.open = (int)rng.below(2);
    a.collide = (int)rng.below(2);

    Vec3 pose, euler;
    undiscretize_action(a, lo, hi, grid, &pose, &euler);
    DiscretizedAction b = discretize_action(pose, euler, a.open, a.collide, lo, hi, grid);
    for (int ax = 0; ax < 3; ++ax) {
      CHECK(b.cell[ax] == a.cell[ax]);
      CHECK(b.rot[ax] == a.rot[ax]);
    }
    CHECK(b.open == a.open);
    CHECK(b.collide == a.collide);
  }
}

TEST_CASE("export -> load round-trips tensors, cameras, and demo frames") {
  SceneGenConfig cfg;
  cfg.feat_dim = 4;
  std::vector<SceneSpec> scenes = {generate_scene(21, cfg), generate_scene(22, cfg)};
  std::vector<std::vector<CameraModel>> cams = {make_camera_rig(scenes[0], 1, 8),
                                                make_camera_rig(scenes[1], 1, 8)};
  std::vector<std::vector<SyntheticDemo>> demos = {
      {script_demo(scenes[0], "reach-primitive", 1)},
      {script_demo(scenes[1], "push-primitive-to-target", 2)}};

  fs::path dir = fresh_dir("ff_demos_roundtrip");
  export_dataset(dir.string(), scenes, cams, demos);
  Dataset ds = load_dataset(dir.string());

  REQUIRE(ds.scenes.size() == 2);
  CHECK(ds.feat_dim() == 4);
  for (size_t si = 0; si < 2; ++si) {
    REQUIRE(ds.scenes[si].views.size() == 2);  // front + 1 auxiliary
    for (size_t k = 0; k < 2; ++k) {
      const LoadedView& v = ds.scenes[si].views[k];
      ViewImages ref = render_analytic(scenes[si], cams[si][k]);
      REQUIRE(v.rgb.shape() == ref.rgb.shape());
      REQUIRE(v.depth.shape() == ref.depth.shape());
      REQUIRE(v.feat.shape() == ref.feat.shape());
      for (size_t i = 0; i < ref.rgb.numel(); ++i) CHECK(v.rgb.at(i) == ref.rgb.at(i));
      for (size_t i = 0; i < ref.depth.numel(); ++i) CHECK(v.depth.at(i) == ref.depth.at(i));
      for (size_t i = 0; i < ref.feat.numel(); ++i) CHECK(v.feat.at(i) == ref.feat.at(i));
      CHECK(v.cam.fx == cams[si][k].fx);
      CHECK(v.cam.cx == cams[si][k].cx);
      CHECK(v.cam.h == cams[si][k].h);
      for (int i = 0; i < 16; ++i) CHECK(v.cam.c2w[i] == cams[si][k].c2w[i]);
    }
    REQUIRE(ds.scenes[si].demos.size() == 1);
    const SyntheticDemo& got = ds.scenes[si].demos[0];
    const SyntheticDemo& want = demos[si][0];
    CHECK(got.task == want.task);
    REQUIRE(got.frames.size() == want.frames.size());
    for (size_t i = 0; i < want.frames.size(); ++i) {
      CHECK(got.frames[i].pose.x == want.frames[i].pose.x);
      CHECK(got.frames[i].pose.z == want.frames[i].pose.z);
      CHECK(got.frames[i].euler.y == want.frames[i].euler.y);
      CHECK(got.frames[i].open == want.frames[i].open);
      CHECK(got.frames[i].timestep == want.frames[i].timestep);
      CHECK(got.frames[i].joint_vel == want.frames[i].joint_vel);
      CHECK(got.frames[i].collide == want.frames[i].collide);
    }
  }
}

TEST_CASE("load_dataset error paths and the collide default") {
  SceneGenConfig cfg;
  cfg.feat_dim = 4;
  std::vector<SceneSpec> scenes = {generate_scene(31, cfg)};
  std::vector<std::vector<CameraModel>> cams = {make_camera_rig(scenes[0], 0, 8)};
  std::vector<std::vector<SyntheticDemo>> demos = {{script_demo(scenes[0], "reach-primitive", 3)}};

  fs::path dir = fresh_dir("ff_demos_errors");
  export_dataset(dir.string(), scenes, cams, demos);

  // Missing camera file names the view.
  fs::path cam0 = dir / "scene_0" / "views" / "0.cam.json";
  fs::rename(cam0, dir / "kept.json");
  try {
    load_dataset(dir.string());
    FAIL("expected a missing-camera error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("0.cam.json") != std::string::npos);
  }
  fs::rename(dir / "kept.json", cam0);

  // A frame without the optional collide key defaults it to 1.
  {
    std::ofstream f(dir / "scene_0" / "demo_0" / "frames.jsonl", std::ios::trunc);
    f << R"({"pose":[0.1,0.2,0.3],"euler":[0,0,0],"open":1,"timestep":0.0,"joint_vel":0.5})" << "\n";
    f << R"({"pose":[0.1,0.2,0.3],"euler":[0,0,0],"open":1,"timestep":1.0,"joint_vel":0.0,"collide":0})" << "\n";
  }
  Dataset ds = load_dataset(dir.string());
  REQUIRE(ds.scenes[0].demos[0].frames.size() == 2);
  CHECK(ds.scenes[0].demos[0].frames[0].collide == 1);
  CHECK(ds.scenes[0].demos[0].frames[1].collide == 0);

  // Corrupt tensor: error carries path and byte offset.
  {
    std::ofstream f(dir / "scene_0" / "views" / "0.rgb.gnft", std::ios::trunc | std::ios::binary);
    f << "JUNKJUNKJUNKJUNK";
  }
  try {
    load_dataset(dir.string());
    FAIL("expected a GNFT decode error");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("0.rgb.gnft") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }

  CHECK_THROWS_AS(load_dataset((dir / "nonexistent").string()), std::runtime_error);
}

TEST_CASE("make_training_tuples: observation frame rule, skips, invariants") {
  SceneGenConfig cfg;
  cfg.feat_dim = 4;
  SceneSpec scene = generate_scene(41, cfg);
  std::vector<CameraModel> cams = make_camera_rig(scene, 1, 16);
  SyntheticDemo demo = script_demo(scene, "reach-primitive", 4);

  fs::path dir = fresh_dir("ff_demos_tuples");
  export_dataset(dir.string(), {scene}, {cams}, {{demo}});
  Dataset ds = load_dataset(dir.string());
  const LoadedScene& ls = ds.scenes[0];

  Vec3 lo = cfg.ws_lo, hi = cfg.ws_hi;
  auto kfs = extract_keyframes(demo);
  REQUIRE(kfs.size() == 3);
  auto tuples = make_training_tuples(demo, kfs, ls, lo, hi, 32);
  REQUIRE(tuples.size() == 3);  // all scripted keyframes lie inside the workspace

  // Observation frames: frame 0, then each previous keyframe.
  CHECK(tuples[0].obs_frame == 0);
  CHECK(tuples[1].obs_frame == kfs[0].frame);
  CHECK(tuples[2].obs_frame == kfs[1].frame);

  // Proprioception: open, two fingers (duplicated), normalized timestep.
  for (const auto& t : tuples) {
    REQUIRE(t.proprio.shape() == std::vector<size_t>{4});
    const DemoFrame& f = demo.frames[t.obs_frame];
    CHECK(t.proprio.at(0) == doctest::Approx((double)f.open));
    CHECK(t.proprio.at(1) == t.proprio.at(0));
    CHECK(t.proprio.at(2) == t.proprio.at(0));
    CHECK(t.proprio.at(3) == doctest::Approx(f.timestep));
    for (int i = 0; i < 4; ++i) {
      CHECK(t.proprio.at(i) >= 0.0);
      CHECK(t.proprio.at(i) <= 1.0);
    }
    CHECK(t.task == "reach-primitive");
    // Target indices respect their ranges.
    for (int ax = 0; ax < 3; ++ax) {
      CHECK(t.action.cell[ax] >= 0);
      CHECK(t.action.cell[ax] < 32);
      CHECK(t.action.rot[ax] >= 0);
      CHECK(t.action.rot[ax] < 72);
    }
    CHECK((t.action.open == 0 || t.action.open == 1));
    CHECK((t.action.collide == 0 || t.action.collide == 1));
  }

  // The observation voxel grid is shared (same buffer), shaped [N,N,N,10].
  REQUIRE(tuples[0].obs.shape() == std::vector<size_t>{32, 32, 32, 10});
  CHECK(tuples[0].obs.f32() == tuples[1].obs.f32());

  // A keyframe outside the workspace is skipped with a warning.
  auto kfs_bad = kfs;
  kfs_bad[1].pose = Vec3(10.0, 0.0, 0.0);
  auto tuples2 = make_training_tuples(demo, kfs_bad, ls, lo, hi, 32);
  CHECK(tuples2.size() == 2);

  LoadedScene empty;
  CHECK_THROWS_AS(make_training_tuples(demo, kfs, empty, lo, hi, 32), std::invalid_argument);
}
