// featfield command-line interface: dataset generation, keyframe extraction,
// joint training, rendering, evaluation, gradient checks, and shape dry runs.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "featfield/gnft.hpp"
#include "featfield/gradcheck.hpp"
#include "featfield/scene.hpp"
#include "featfield/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ff;

namespace {

// 8-bit binary PPM preview of an [H,W,3] image in [0,1].
void write_ppm(const std::string& path, const Tensor& rgb) {
  const size_t h = rgb.shape()[0], w = rgb.shape()[1];
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (size_t i = 0; i < h * w * 3; ++i) {
    const double v = std::clamp(rgb.at(i), 0.0, 1.0);
    f.put((char)(unsigned char)std::lround(v * 255.0));
  }
}

int cmd_gen_scenes(uint64_t seed, size_t n_scenes, int views, int size, size_t feat_dim,
                   size_t demos_per_scene, const std::string& task, int min_prims, int max_prims,
                   const std::string& out) {
  SceneGenConfig sg;
  sg.feat_dim = feat_dim;
  sg.min_prims = min_prims;
  sg.max_prims = max_prims;
  std::vector<SceneSpec> scenes;
  std::vector<std::vector<CameraModel>> cams;
  std::vector<std::vector<SyntheticDemo>> demos;
  for (size_t i = 0; i < n_scenes; ++i) {
    SceneSpec s = generate_scene(seed + i, sg);
    cams.push_back(make_camera_rig(s, views, size));
    std::vector<SyntheticDemo> ds;
    for (size_t j = 0; j < demos_per_scene; ++j)
      ds.push_back(script_demo(s, task, seed + 1000 + i * demos_per_scene + j));
    demos.push_back(std::move(ds));
    scenes.push_back(std::move(s));
  }
  export_dataset(out, scenes, cams, demos);
  std::cout << json{{"scenes", n_scenes},
                    {"views_per_scene", views + 1},
                    {"demos_per_scene", demos_per_scene},
                    {"image_size", size},
                    {"feat_dim", feat_dim},
                    {"out", out}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_extract_keyframes(const std::string& data, double eps_v) {
  Dataset ds = load_dataset(data);
  for (size_t si = 0; si < ds.scenes.size(); ++si) {
    for (size_t di = 0; di < ds.scenes[si].demos.size(); ++di) {
      const SyntheticDemo& demo = ds.scenes[si].demos[di];
      auto kfs = extract_keyframes(demo, eps_v, di);
      json frames = json::array();
      for (const Keyframe& k : kfs) frames.push_back(k.frame);
      std::cout << json{{"scene", si},
                        {"demo", di},
                        {"task", demo.task},
                        {"frames", demo.frames.size()},
                        {"keyframes", frames}}
                       .dump()
                << "\n";
    }
  }
  return 0;
}

int cmd_train(const std::string& data, const std::string& config, const std::string& out,
              const std::string& preset) {
  TrainConfig cfg = preset_config(preset);
  if (!config.empty()) cfg = load_config_over(cfg, config);
  fs::create_directories(out);
  save_config(cfg, out + "/config.json");
  TrainResult res = train(cfg, data, out);
  std::cout << json{{"iterations_run", res.iterations_run},
                    {"final_checkpoint", res.final_checkpoint},
                    {"metrics", res.metrics_path},
                    {"aborted_non_finite", res.aborted_non_finite}}
                   .dump(2)
            << "\n";
  return res.aborted_non_finite ? 3 : 0;
}

int cmd_render(const std::string& ckpt, const std::string& scene_dir, size_t view,
               const std::string& out) {
  Models m;
  TrainConfig cfg;
  load_checkpoint(ckpt, m, &cfg);
  LoadedScene scene = load_scene(scene_dir);
  RenderedView rv = render_view(m, cfg, scene, view);
  fs::create_directories(out);
  gnft::save(out + "/rgb.gnft", rv.rgb);
  gnft::save(out + "/feat.gnft", rv.feat);
  write_ppm(out + "/preview.ppm", rv.rgb);
  auto evs = evaluate_render(m, cfg, scene, {view});
  std::cout << json{{"view", view},
                    {"psnr", evs[0].psnr},
                    {"feat_mse", evs[0].feat_mse},
                    {"out", out}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data) {
  Models m;
  TrainConfig cfg;
  load_checkpoint(ckpt, m, &cfg);
  PolicyEval ev = evaluate_policy(m, cfg, data);
  std::cout << ev.to_json() << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& suite) {
  std::vector<SuiteEntry> entries;
  if (suite == "ops")
    entries = gradcheck_ops_suite();
  else if (suite == "render")
    entries = gradcheck_render_suite();
  else if (suite == "policy")
    entries = gradcheck_policy_suite();
  bool all_ok = true;
  for (const SuiteEntry& e : entries) {
    all_ok = all_ok && e.result.ok;
    std::printf("%-28s %s  max_rel_err=%.3g%s%s\n", e.name.c_str(),
                e.result.ok ? "PASS" : "FAIL", e.result.max_rel_err,
                e.result.ok ? "" : "  worst=", e.result.ok ? "" : e.result.worst.c_str());
  }
  std::printf("%s: %zu/%zu passed\n", suite.c_str(),
              (size_t)std::count_if(entries.begin(), entries.end(),
                                    [](const SuiteEntry& e) { return e.result.ok; }),
              entries.size());
  return all_ok ? 0 : 1;
}

int cmd_shapecheck(const std::string& preset) {
  TrainConfig cfg = preset_config(preset);
  const bool paper = preset == "paper-shapes";
  std::vector<std::string> lines;
  const bool ok = run_shapecheck(cfg, paper ? 200000 : 1, paper ? 400000 : SIZE_MAX, &lines);
  for (const std::string& l : lines) std::cout << l << "\n";
  std::cout << (ok ? "shapecheck: PASS" : "shapecheck: FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"featfield: joint feature-field rendering and keyframe action prediction"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  size_t n_scenes = 1, feat_dim = 64, demos_per_scene = 1, view = 1;
  int views = 4, size = 32;
  double eps_v = 1e-3;
  int min_prims = 1, max_prims = 3;
  std::string out, data, config, preset = "desk", ckpt, scene_dir, task = "reach-primitive";
  std::string suite, shape_preset = "paper-shapes";

  CLI::App* gen = app.add_subcommand("gen-scenes", "Generate synthetic scenes with views and scripted demos");
  gen->add_option("--seed", seed, "Base RNG seed");
  gen->add_option("--scenes", n_scenes, "Number of scenes");
  gen->add_option("--views", views, "Auxiliary views per scene (plus the front view)");
  gen->add_option("--size", size, "Square image size in pixels");
  gen->add_option("--feat-dim", feat_dim, "Descriptor dimension of the feature images");
  gen->add_option("--demos", demos_per_scene, "Scripted demos per scene");
  gen->add_option("--task", task, "Scripted task name");
  gen->add_option("--min-prims", min_prims, "Minimum primitives per scene");
  gen->add_option("--max-prims", max_prims, "Maximum primitives per scene");
  gen->add_option("--out", out, "Output dataset directory")->required();

  CLI::App* ek = app.add_subcommand("extract-keyframes", "Print keyframe indices for every demo");
  ek->add_option("--data", data, "Dataset directory")->required();
  ek->add_option("--eps-v", eps_v, "Joint-velocity threshold");

  CLI::App* tr = app.add_subcommand("train", "Joint training run");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "Flat JSON config overlay");
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--preset", preset, "Base preset")
      ->check(CLI::IsMember({"desk", "paper-shapes", "realworld"}));

  CLI::App* rd = app.add_subcommand("render", "Render one view from a checkpoint");
  rd->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  rd->add_option("--scene", scene_dir, "Scene directory (scene_<i>)")->required();
  rd->add_option("--view", view, "View index");
  rd->add_option("--out", out, "Output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "Score decoded actions against a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Dataset directory")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "Run a named gradient-check suite");
  gc->add_option("--suite", suite, "Suite name")
      ->required()
      ->check(CLI::IsMember({"ops", "render", "policy"}));

  CLI::App* sc = app.add_subcommand("shapecheck", "Dry-run extent assertions without training");
  sc->add_option("--preset", shape_preset, "Config preset")
      ->check(CLI::IsMember({"desk", "paper-shapes", "realworld"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_scenes(seed, n_scenes, views, size, feat_dim,
                                             demos_per_scene, task, min_prims, max_prims, out);
    if (ek->parsed()) return cmd_extract_keyframes(data, eps_v);
    if (tr->parsed()) return cmd_train(data, config, out, preset);
    if (rd->parsed()) return cmd_render(ckpt, scene_dir, view, out);
    if (ev->parsed()) return cmd_eval(ckpt, data);
    if (gc->parsed()) return cmd_gradcheck(suite);
    if (sc->parsed()) return cmd_shapecheck(shape_preset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
