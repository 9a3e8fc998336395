#pragma once

#include <vector>

#include "featfield/camera.hpp"
#include "featfield/nn.hpp"
#include "featfield/vec3.hpp"

namespace ff {

// Sin/cos positional encoding with `bands` octaves over inputs in [0,1]:
// per coordinate, [sin(2^l pi u), cos(2^l pi u)] for l = 0..bands-1, where
// u = 2x-1. Output: [M, 2 * bands * C] for input [M, C].
Tensor positional_encoding(const Tensor& x, size_t bands);

struct GNFConfig {
  size_t cv = 128;      // volume feature channels
  size_t df = 512;      // rendered descriptor dimension
  size_t width = 128;   // trunk width
  size_t n_blocks = 5;  // residual FC blocks in the trunk
  size_t pe_bands = 6;
  size_t rgb_hidden = 64;
  // When set (default), the descriptor head sees a zeroed view direction, so
  // rendered descriptors are view-independent. Color stays view-dependent.
  bool feature_view_independent = true;
  Dtype dtype = Dtype::F32;

  size_t input_dim() const { return 6 * pe_bands + 3 + 3 + cv; }   // 42 + cv at defaults
  size_t output_dim() const { return 3 + 1 + df; }
};

// Neural field over the encoded volume: maps (position, view direction,
// sampled volume feature) to (rgb, density, descriptor).
class GNFNetwork {
 public:
  GNFNetwork() = default;
  GNFNetwork(ParamStore& store, const std::string& prefix, const GNFConfig& cfg, Rng& rng);

  // in: [M, input_dim()] laid out as [pe | x (3, in [0,1]) | d (3) | vox feat].
  // out: [M, output_dim()] laid out as [rgb (sigmoid) | sigma (softplus) | descriptor].
  Tensor forward_packed(const Tensor& in) const;

  // Assembles the packed input from x01 [M,3] (workspace-normalized), dirs
  // [M,3] (unit), and vox [M,cv], then runs forward_packed.
  Tensor forward(const Tensor& x01, const Tensor& dirs, const Tensor& vox) const;

  const GNFConfig& config() const { return cfg_; }

 private:
  GNFConfig cfg_;
  Linear in_;
  std::vector<Linear> blk_a_, blk_b_;
  Linear sigma_, feat_, rgb0_, rgb1_;
};

// ---- depth samplers ----------------------------------------------------

// n midpoint samples of [t_n,t_f]; jitter draws each sample uniformly within
// its own stratum instead of at the center. Always sorted.
std::vector<double> sample_stratified(double t_n, double t_f, size_t n, Rng& rng, bool jitter);

// Inverse-CDF draws over the piecewise-constant distribution defined by
// `weights` on the intervals [edges[i], edges[i+1]). All-zero (or negative-
// clipped-to-zero) weights fall back to stratified sampling over the full
// range. Result is sorted.
std::vector<double> sample_importance(const std::vector<double>& edges,
                                      const std::vector<double>& weights, size_t n, Rng& rng,
                                      bool jitter);

// Gaussian samples around a ground-truth depth with std 5% of (t_f - t_n),
// clamped to [t_n, t_f]. A depth outside (t_n, t_f) or non-finite counts as
// missing and falls back to uniform sampling. Result is sorted.
std::vector<double> sample_depth_guided(double depth_gt, double t_n, double t_f, size_t n,
                                        Rng& rng);

// ---- quadrature ---------------------------------------------------------

struct CompositeOut {
  Tensor rgb;      // [R,3] foreground only (no background term)
  Tensor feat;     // [R,df]
  Tensor depth;    // [R] expected termination depth over the sample weights
  Tensor acc;      // [R] accumulated weight = 1 - residual transmittance
  Tensor weights;  // [R,n-1] per-interval weights (graph-connected)
};

// Emission-absorption quadrature: with per-ray sorted depths t_0..t_{n-1},
// interval i in [0,n-2] has delta_i = t_{i+1}-t_i, alpha_i = 1-exp(-sigma_i
// delta_i), transmittance T_i = exp(-sum_{j<i} sigma_j delta_j), weight
// w_i = T_i alpha_i. rgb/feat/depth are weight-sums of the per-interval
// values. Requires at least two depths per ray.
CompositeOut composite_quadrature(const Tensor& sigma /*[R,n-1]*/, const Tensor& rgb /*[R,n-1,3]*/,
                                  const Tensor& feat /*[R,n-1,df]*/,
                                  const std::vector<std::vector<double>>& ts);

// ---- ray rendering ------------------------------------------------------

struct RenderBatch {
  Tensor rgb;    // [R,3]
  Tensor feat;   // [R,df]
  Tensor depth;  // [R]
  Tensor acc;    // [R]
  std::vector<std::vector<double>> weights;  // detached, for importance sampling
  std::vector<std::vector<double>> ts;       // depths actually used
};

// Evaluates the field at o + t d over each ray's sorted depth list and
// composites. All rays must carry the same number of depths (>= 2). Ray
// directions must be unit-norm (1e-9) with t_n < t_f; violations throw.
// `volume` is the encoded grid [N,N,N,cv] over [ws_lo, ws_hi].
RenderBatch render_rays(const GNFNetwork& net, const Tensor& volume,
                        const std::vector<Ray>& rays,
                        const std::vector<std::vector<double>>& ts, const Vec3& ws_lo,
                        const Vec3& ws_hi);

struct RayRender {
  Tensor rgb, feat, depth, acc;  // [3], [df], [1], [1]
  std::vector<double> weights;
  std::vector<double> ts;
};
RayRender render_ray(const GNFNetwork& net, const Tensor& volume, const Ray& ray,
                     const std::vector<double>& ts, const Vec3& ws_lo, const Vec3& ws_hi);

// ---- reconstruction loss ------------------------------------------------

struct ReconLossParts {
  Tensor total;  // rgb + lambda_feat * feat, summed over rays
  Tensor rgb;    // sum_r || C_gt - (C_fg + (1-acc) bg) ||^2
  Tensor feat;   // sum_r || F_gt - F_hat ||^2
};
ReconLossParts recon_loss(const RenderBatch& rb, const Tensor& rgb_gt, const Tensor& feat_gt,
                          const Vec3& background, double lambda_feat);

}  // namespace ff
