#pragma once

#include <string>
#include <vector>

#include "featfield/camera.hpp"
#include "featfield/policy.hpp"
#include "featfield/scene.hpp"
#include "featfield/tensor.hpp"

namespace ff {

// One rendered view loaded back from disk.
struct LoadedView {
  CameraModel cam;
  Tensor rgb;    // [H,W,3] f32
  Tensor depth;  // [H,W]   f32
  Tensor feat;   // [H,W,D_f] f32
};

struct LoadedScene {
  std::vector<LoadedView> views;
  std::vector<SyntheticDemo> demos;
};

struct Dataset {
  std::vector<LoadedScene> scenes;
  size_t feat_dim() const;  // last extent of the first view's feature map
};

// Reads the export layout: scene_<i>/views/<k>.{rgb,depth,feat}.gnft +
// <k>.cam.json, scene_<i>/demo_<j>/frames.jsonl + lang.txt. A view with
// tensors but no camera file is an error naming that camera path; tensor
// decode errors carry file path and byte offset. Demo frames missing the
// optional "collide" key default it to 1.
Dataset load_dataset(const std::string& dir);
// Loads one scene directory (views/ plus demo_<j>/ subdirectories).
LoadedScene load_scene(const std::string& scene_dir);

// A detected keyframe of a demonstration.
struct Keyframe {
  size_t frame = 0;
  Vec3 pose{0, 0, 0};
  Vec3 euler{0, 0, 0};
  int open = 1;
  int collide = 1;
  size_t demo_id = 0;
};

// Frame i (i >= 1) is flagged when joint_vel_i < eps_v and open_i == open_{i-1};
// of each consecutive flagged run only the first is kept; the final frame is
// appended if absent. Demos shorter than 2 frames are an error.
std::vector<Keyframe> extract_keyframes(const SyntheticDemo& demo, double eps_v = 1e-3,
                                        size_t demo_id = 0);

// Pose/euler -> discretized action over an N^3 grid and 5-degree rotation
// bins. Throws std::domain_error when the pose lies outside the workspace.
DiscretizedAction discretize_action(const Vec3& pose, const Vec3& euler, int open, int collide,
                                    const Vec3& ws_lo, const Vec3& ws_hi, size_t grid,
                                    size_t rot_bins = 72);

// Inverse map to cell / bin centers.
void undiscretize_action(const DiscretizedAction& a, const Vec3& ws_lo, const Vec3& ws_hi,
                         size_t grid, Vec3* pose, Vec3* euler, size_t rot_bins = 72);

// One supervised example: observation voxel grid (shared across tuples of a
// scene), proprioception at the observation frame, task string, and the
// discretized target action of the next keyframe.
struct TrainingTuple {
  Tensor obs;      // [N,N,N,10] f32
  Tensor proprio;  // [4] f32: open, finger, finger, normalized timestep
  std::string task;
  DiscretizedAction action;
  size_t obs_frame = 0;
};

// For keyframe k_j the observation is taken at the previous keyframe (frame 0
// for j=0). Keyframes whose pose falls outside the workspace are skipped with
// a warning on stderr. The observation voxelizes the scene's first (front)
// view.
std::vector<TrainingTuple> make_training_tuples(const SyntheticDemo& demo,
                                                const std::vector<Keyframe>& keyframes,
                                                const LoadedScene& scene, const Vec3& ws_lo,
                                                const Vec3& ws_hi, size_t grid,
                                                size_t rot_bins = 72);

}  // namespace ff
