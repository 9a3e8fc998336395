#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featfield/demos.hpp"
#include "featfield/encoder.hpp"
#include "featfield/gnf.hpp"
#include "featfield/optim.hpp"
#include "featfield/policy.hpp"
#include "featfield/vec3.hpp"

namespace ff {

// Flat training configuration; serializes to/from flat JSON (Vec3 fields as
// 3-element arrays).
struct TrainConfig {
  // loss weights
  double lambda_action = 1.0;
  double lambda_recon = 0.01;
  double lambda_feat = 0.01;
  // ray sampling
  size_t b_ray = 64;
  size_t n_coarse = 24;           // depths of the proposal pass
  size_t n_fine_importance = 8;   // importance-sampled extra depths
  size_t n_fine_depth = 8;        // depth-guided extra depths
  // optimization
  double lr = 5e-4;
  size_t iterations = 2000;
  size_t batch_size = 1;
  std::uint64_t seed = 1;
  bool lamb = false;
  // workspace / volume geometry
  Vec3 ws_lo{0.0, 0.0, 0.0};
  Vec3 ws_hi{0.64, 0.64, 0.64};
  size_t grid = 32;
  Vec3 background{0.10, 0.12, 0.16};
  // encoder widths
  size_t cv = 32;
  size_t enc_c0 = 8, enc_c1 = 16, enc_c2 = 24, enc_c3 = 32;
  size_t enc_out_kernel = 1;
  // field widths
  size_t df = 64;
  size_t gnf_width = 64, gnf_blocks = 2, pe_bands = 6, rgb_hidden = 32;
  // policy widths
  size_t condense_stride = 4;
  size_t d_lang = 32, t_lang = 16;
  size_t latents = 64, p_blocks = 2, heads = 4, ffn_mult = 2;
  size_t trans_hidden = 16, agg_hidden = 64, rot_bins = 72;
  // demonstrations
  double eps_v = 1e-3;
  // ablations
  bool no_gnf = false, no_rgb = false, no_feat = false, no_dgs = false, no_skip = false;
  std::string feature_source = "dataset";
  // runtime
  std::string precision = "f32";  // "f32" or "f64"
  bool deterministic = true;
  size_t checkpoint_every = 0;  // 0: only the final checkpoint
  size_t log_every = 1;

  Dtype dtype() const;
  void validate() const;
};

// Named presets: "desk" (default config above), "paper-shapes" (publication-
// scale extents for dry runs), "realworld" (recon-dominant loss weighting).
TrainConfig preset_config(const std::string& name);
TrainConfig load_config(const std::string& path);
void save_config(const TrainConfig& cfg, const std::string& path);
// Overlays the flat JSON keys in `path` over `base` (unknown keys error).
TrainConfig load_config_over(const TrainConfig& base, const std::string& path);

// The jointly trained parameter set.
struct Models {
  ParamStore store;
  VoxelEncoder encoder;
  GNFNetwork gnf;
  PerceiverPolicy policy;
};
void build_models(Models& m, const TrainConfig& cfg);

// Checkpoint directory: params/ (parameter manifest), optim/ (moment state),
// meta.json (iteration + config snapshot).
void save_checkpoint(const std::string& dir, const Models& m, const Adam* optim, size_t iter,
                     const TrainConfig& cfg);
// Rebuilds models from the stored config; returns the stored iteration.
size_t load_checkpoint(const std::string& dir, Models& m, TrainConfig* cfg_out);
void load_optim_state(const std::string& dir, Adam& optim);

struct TrainResult {
  size_t iterations_run = 0;
  std::string final_checkpoint;
  std::string metrics_path;
  bool aborted_non_finite = false;
};

// Joint optimization over a dataset directory. Writes out_dir/metrics.jsonl
// (one {iter, loss, l_action, l_recon_rgb, l_recon_feat} object per logged
// iteration), periodic out_dir/ckpt_last_good, and out_dir/ckpt_final.
// A non-finite loss aborts, retaining the last good checkpoint.
TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir);

struct PolicyEval {
  double trans_exact = 0, trans_within1 = 0, rot_exact = 0, rot_per_axis = 0, open_acc = 0,
         collide_acc = 0;
  size_t count = 0;
  std::string to_json() const;
};
// Decodes actions for every tuple of every demo in the directory and scores
// them against the discretized targets. Empty tuple set is an error.
PolicyEval evaluate_policy(Models& m, const TrainConfig& cfg, const std::string& data_dir);

struct RenderEval {
  double psnr = 0;      // 10 log10(1/MSE) on [0,1] RGB, capped at 99
  double feat_mse = 0;  // per-element descriptor MSE
};
// Renders full train views of one scene with the fine sampling pipeline.
std::vector<RenderEval> evaluate_render(Models& m, const TrainConfig& cfg,
                                        const LoadedScene& scene,
                                        const std::vector<size_t>& view_indices);

// Renders one full view; returns rgb [H,W,3] (background composited) and
// feat [H,W,df], both f32.
struct RenderedView {
  Tensor rgb, feat;
};
RenderedView render_view(Models& m, const TrainConfig& cfg, const LoadedScene& scene,
                         size_t view_index);

// Dry-run extent assertions: builds the models for `cfg`, runs the encoder,
// condense, sequence assembly, latent bottleneck, and volume restoration on
// synthetic input, and checks every intermediate shape plus the field widths
// and the encoder parameter count against [enc_params_lo, enc_params_hi].
// Appends one line per assertion to `lines` (if given); returns overall pass.
bool run_shapecheck(const TrainConfig& cfg, size_t enc_params_lo, size_t enc_params_hi,
                    std::vector<std::string>* lines);

}  // namespace ff
