#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featfield/camera.hpp"
#include "featfield/tensor.hpp"
#include "featfield/vec3.hpp"

namespace ff {

// Axis-aligned box or sphere filled with a homogeneous emissive-absorbing
// medium.
struct Primitive {
  enum class Kind { Box, Sphere };
  Kind kind = Kind::Box;
  Vec3 lo, hi;      // box corners
  Vec3 center;      // sphere
  double radius = 0;
  double sigma = 0;             // density, >= 0
  Vec3 color;                   // [0,1]^3
  std::vector<float> feature;   // unit L2 norm, D_f entries

  Vec3 centroid() const { return kind == Kind::Box ? (lo + hi) * 0.5 : center; }
  bool contains(const Vec3& p) const;
  // Entry/exit parameters along the ray; false when the ray misses.
  bool intersect(const Ray& r, double& t0, double& t1) const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Vec3 ws_lo{0, 0, 0}, ws_hi{0.64, 0.64, 0.64};  // workspace bounds (m)
  Vec3 background{0.10, 0.12, 0.16};
  size_t feat_dim = 64;
};

struct SceneGenConfig {
  int min_prims = 1, max_prims = 3;
  size_t feat_dim = 64;
  Vec3 ws_lo{0, 0, 0}, ws_hi{0.64, 0.64, 0.64};
  Vec3 background{0.10, 0.12, 0.16};
  double min_size = 0.05, max_size = 0.13;  // half-extent / radius (m)
  double sigma_lo = 25, sigma_hi = 75;
};

// Deterministic in the seed. Primitives always lie inside the workspace.
SceneSpec generate_scene(uint64_t seed, const SceneGenConfig& cfg);

// Closed-form emission-absorption integral along one ray through the
// piecewise-constant medium. rgb_fg excludes the background term; depth is
// the transmittance-weighted expected termination depth with the residual
// assigned to t_f; acc is the accumulated weight (1 - final transmittance).
struct AnalyticTrace {
  Vec3 rgb_fg;
  std::vector<double> feat;
  double depth = 0;
  double acc = 0;
};
AnalyticTrace trace_analytic(const SceneSpec& scene, const Ray& ray);

struct ViewImages {
  Tensor rgb;    // [H,W,3] f32, background composited
  Tensor depth;  // [H,W] f32, meters
  Tensor feat;   // [H,W,D_f] f32, zero-feature background
};
ViewImages render_analytic(const SceneSpec& scene, const CameraModel& cam);

// 1 + k_aux cameras: index 0 is the front observation view, the rest sit on
// a ring around the workspace. All see the whole workspace.
std::vector<CameraModel> make_camera_rig(const SceneSpec& scene, int k_aux, int img_hw);

struct DemoFrame {
  Vec3 pose;
  Vec3 euler;          // degrees in [0,360)
  int open = 1;        // gripper open flag
  double timestep = 0; // normalized, strictly increasing
  double joint_vel = 0;
  int collide = 1;     // collision-avoidance flag for the move ending here
};

struct SyntheticDemo {
  std::vector<DemoFrame> frames;
  std::string task;
};

// task: "reach-primitive" or "push-primitive-to-target"; throws otherwise.
SyntheticDemo script_demo(const SceneSpec& scene, const std::string& task, uint64_t seed);

// Writes the dataset layout:
//   dir/scene_<id>/views/<k>.{rgb,depth,feat}.gnft + <k>.cam.json
//   dir/scene_<id>/demo_<j>/frames.jsonl + lang.txt
void export_dataset(const std::string& dir, const std::vector<SceneSpec>& scenes,
                    const std::vector<std::vector<CameraModel>>& cams,
                    const std::vector<std::vector<SyntheticDemo>>& demos);

}  // namespace ff
