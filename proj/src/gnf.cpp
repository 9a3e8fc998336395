#include "featfield/gnf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ff {

using namespace ff::ops;

Tensor positional_encoding(const Tensor& x, size_t bands) {
  if (x.rank() != 2) throw std::runtime_error("positional_encoding: expected [M,C] input");
  const Tensor u = add_scalar(scale(x, 2.0), -1.0);  // [0,1] -> [-1,1]
  std::vector<Tensor> parts;
  parts.reserve(2 * bands);
  for (size_t l = 0; l < bands; ++l) {
    const double f = std::ldexp(M_PI, static_cast<int>(l));  // 2^l * pi
    const Tensor v = scale(u, f);
    parts.push_back(vsin(v));
    parts.push_back(vcos(v));
  }
  return concat(parts, 1);
}

GNFNetwork::GNFNetwork(ParamStore& store, const std::string& prefix, const GNFConfig& cfg,
                       Rng& rng)
    : cfg_(cfg) {
  const size_t trunk_in = 6 * cfg.pe_bands + 3 + cfg.cv;  // pe + x + volume feature
  in_ = make_linear(store, prefix + "/in", trunk_in, cfg.width, rng, cfg.dtype);
  for (size_t b = 0; b < cfg.n_blocks; ++b) {
    blk_a_.push_back(make_linear(store, prefix + "/blk" + std::to_string(b) + "/a", cfg.width,
                                 cfg.width, rng, cfg.dtype));
    blk_b_.push_back(make_linear(store, prefix + "/blk" + std::to_string(b) + "/b", cfg.width,
                                 cfg.width, rng, cfg.dtype));
  }
  sigma_ = make_linear(store, prefix + "/sigma", cfg.width, 1, rng, cfg.dtype);
  feat_ = make_linear(store, prefix + "/feat", cfg.width + 3, cfg.df, rng, cfg.dtype);
  rgb0_ = make_linear(store, prefix + "/rgb0", cfg.width + 3, cfg.rgb_hidden, rng, cfg.dtype);
  rgb1_ = make_linear(store, prefix + "/rgb1", cfg.rgb_hidden, 3, rng, cfg.dtype);
}

Tensor GNFNetwork::forward_packed(const Tensor& in) const {
  if (in.rank() != 2 || in.shape()[1] != cfg_.input_dim())
    throw std::runtime_error("GNFNetwork: expected [M," + std::to_string(cfg_.input_dim()) +
                             "] input, got " + in.shape_str());
  const size_t pe_x = 6 * cfg_.pe_bands + 3;
  const Tensor pos = slice(in, 1, 0, pe_x);
  const Tensor dir = slice(in, 1, pe_x, 3);
  const Tensor vox = slice(in, 1, pe_x + 3, cfg_.cv);

  Tensor h = in_.forward(concat({pos, vox}, 1));
  for (size_t b = 0; b < blk_a_.size(); ++b) {
    const Tensor t = blk_b_[b].forward(relu(blk_a_[b].forward(relu(h))));
    h = add(h, t);
  }
  const Tensor sigma = softplus(sigma_.forward(h));
  const Tensor dir_f = cfg_.feature_view_independent ? scale(dir, 0.0) : dir;
  const Tensor feat = feat_.forward(concat({h, dir_f}, 1));
  const Tensor rgb = sigmoid(rgb1_.forward(relu(rgb0_.forward(concat({h, dir}, 1)))));
  return concat({rgb, sigma, feat}, 1);
}

Tensor GNFNetwork::forward(const Tensor& x01, const Tensor& dirs, const Tensor& vox) const {
  const Tensor pe = positional_encoding(x01, cfg_.pe_bands);
  return forward_packed(concat({pe, x01, dirs, vox}, 1));
}

// ---- samplers ------------------------------------------------------------

std::vector<double> sample_stratified(double t_n, double t_f, size_t n, Rng& rng, bool jitter) {
  if (n == 0 || !(t_n < t_f)) throw std::runtime_error("sample_stratified: bad range or count");
  std::vector<double> out(n);
  const double span = t_f - t_n;
  for (size_t i = 0; i < n; ++i) {
    const double u = jitter ? rng.uniform() : 0.5;
    out[i] = t_n + (static_cast<double>(i) + u) / static_cast<double>(n) * span;
  }
  return out;
}

std::vector<double> sample_importance(const std::vector<double>& edges,
                                      const std::vector<double>& weights, size_t n, Rng& rng,
                                      bool jitter) {
  if (edges.size() != weights.size() + 1 || weights.empty())
    throw std::runtime_error("sample_importance: edges must bracket weights");
  double wsum = 0;
  for (double w : weights) wsum += std::max(w, 0.0);
  if (!(wsum > 0)) return sample_stratified(edges.front(), edges.back(), n, rng, jitter);

  std::vector<double> cdf(weights.size() + 1, 0.0);
  for (size_t k = 0; k < weights.size(); ++k)
    cdf[k + 1] = cdf[k] + std::max(weights[k], 0.0) / wsum;
  cdf.back() = 1.0;

  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double u =
        (static_cast<double>(i) + (jitter ? rng.uniform() : 0.5)) / static_cast<double>(n);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const size_t k = std::min(weights.size() - 1,
                              static_cast<size_t>(std::max<std::ptrdiff_t>(
                                  0, std::distance(cdf.begin(), it) - 1)));
    const double den = cdf[k + 1] - cdf[k];
    const double frac = den > 0 ? (u - cdf[k]) / den : 0.5;
    out[i] = edges[k] + frac * (edges[k + 1] - edges[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> sample_depth_guided(double depth_gt, double t_n, double t_f, size_t n,
                                        Rng& rng) {
  if (n == 0 || !(t_n < t_f)) throw std::runtime_error("sample_depth_guided: bad range or count");
  std::vector<double> out(n);
  const bool missing = !std::isfinite(depth_gt) || depth_gt <= t_n || depth_gt >= t_f;
  if (missing) {
    for (size_t i = 0; i < n; ++i) out[i] = t_n + rng.uniform() * (t_f - t_n);
  } else {
    const double s = 0.05 * (t_f - t_n);
    for (size_t i = 0; i < n; ++i)
      out[i] = std::clamp(depth_gt + s * rng.normal(), t_n, t_f);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- quadrature ----------------------------------------------------------

CompositeOut composite_quadrature(const Tensor& sigma, const Tensor& rgb, const Tensor& feat,
                                  const std::vector<std::vector<double>>& ts) {
  const size_t R = ts.size();
  if (R == 0) throw std::runtime_error("composite_quadrature: no rays");
  const size_t n = ts[0].size();
  if (n < 2) throw std::runtime_error("composite_quadrature: needs at least 2 depths per ray");
  for (const auto& t : ts) {
    if (t.size() != n) throw std::runtime_error("composite_quadrature: ragged depth lists");
    for (size_t i = 0; i + 1 < t.size(); ++i)
      if (!(t[i] <= t[i + 1])) throw std::runtime_error("composite_quadrature: depths not sorted");
  }
  const size_t ni = n - 1;
  const Dtype dt = sigma.dtype();
  if (sigma.shape() != std::vector<size_t>{R, ni})
    throw std::runtime_error("composite_quadrature: sigma must be [R,n-1], got " +
                             sigma.shape_str());
  if (rgb.rank() != 3 || rgb.shape()[0] != R || rgb.shape()[1] != ni || rgb.shape()[2] != 3)
    throw std::runtime_error("composite_quadrature: rgb must be [R,n-1,3], got " +
                             rgb.shape_str());
  if (feat.rank() != 3 || feat.shape()[0] != R || feat.shape()[1] != ni)
    throw std::runtime_error("composite_quadrature: feat must be [R,n-1,df], got " +
                             feat.shape_str());
  const size_t df = feat.shape()[2];

  Tensor delta = Tensor::zeros({R, ni}, dt);
  Tensor tstart = Tensor::zeros({R, ni}, dt);
  for (size_t r = 0; r < R; ++r)
    for (size_t i = 0; i < ni; ++i) {
      delta.set(r * ni + i, ts[r][i + 1] - ts[r][i]);
      tstart.set(r * ni + i, ts[r][i]);
    }

  const Tensor optical = mul(sigma, delta);
  const Tensor trans = vexp(neg(exclusive_cumsum(optical, 1)));       // T_i
  const Tensor alpha = add_scalar(neg(vexp(neg(optical))), 1.0);      // 1-exp(-sigma delta)
  const Tensor w = mul(trans, alpha);                                 // [R,ni]
  const Tensor w_flat = reshape(w, {R * ni});

  CompositeOut out;
  out.weights = w;
  out.rgb = sum_axis(reshape(mul_prefix(reshape(rgb, {R * ni, 3}), w_flat), {R, ni, 3}), 1);
  out.feat = sum_axis(reshape(mul_prefix(reshape(feat, {R * ni, df}), w_flat), {R, ni, df}), 1);
  out.depth = sum_axis(mul(w, tstart), 1);
  out.acc = sum_axis(w, 1);
  return out;
}

// ---- ray rendering ---------------------------------------------------------

RenderBatch render_rays(const GNFNetwork& net, const Tensor& volume,
                        const std::vector<Ray>& rays,
                        const std::vector<std::vector<double>>& ts, const Vec3& ws_lo,
                        const Vec3& ws_hi) {
  if (rays.empty() || rays.size() != ts.size())
    throw std::runtime_error("render_rays: rays/depths mismatch");
  const size_t n = ts[0].size();
  if (n < 2) throw std::runtime_error("render_rays: needs at least 2 depths per ray");
  for (size_t r = 0; r < rays.size(); ++r) {
    if (std::abs(rays[r].d.norm() - 1.0) > 1e-9)
      throw std::runtime_error("render_rays: ray direction must be unit length");
    if (!(rays[r].t_n < rays[r].t_f))
      throw std::runtime_error("render_rays: ray must satisfy t_n < t_f");
    if (ts[r].size() != n) throw std::runtime_error("render_rays: ragged depth lists");
  }
  if (volume.rank() != 4 || volume.shape()[3] != net.config().cv)
    throw std::runtime_error("render_rays: volume must be [N,N,N," +
                             std::to_string(net.config().cv) + "], got " + volume.shape_str());

  const size_t R = rays.size(), ni = n - 1, M = R * ni;
  const Dtype dt = volume.dtype();
  const Vec3 ext = ws_hi - ws_lo;
  Tensor pts = Tensor::zeros({M, 3}, dt);
  Tensor dirs = Tensor::zeros({M, 3}, dt);
  for (size_t r = 0; r < R; ++r) {
    for (size_t i = 0; i < ni; ++i) {
      const Vec3 p = rays[r].o + rays[r].d * ts[r][i];
      const size_t row = r * ni + i;
      pts.set(row * 3 + 0, (p.x - ws_lo.x) / ext.x);
      pts.set(row * 3 + 1, (p.y - ws_lo.y) / ext.y);
      pts.set(row * 3 + 2, (p.z - ws_lo.z) / ext.z);
      dirs.set(row * 3 + 0, rays[r].d.x);
      dirs.set(row * 3 + 1, rays[r].d.y);
      dirs.set(row * 3 + 2, rays[r].d.z);
    }
  }
  const Tensor vox = grid_sample_trilinear(volume, pts);
  const Tensor out = net.forward(pts, dirs, vox);  // [M, 4+df]
  const size_t df = net.config().df;
  const Tensor rgb = reshape(slice(out, 1, 0, 3), {R, ni, 3});
  const Tensor sigma = reshape(slice(out, 1, 3, 1), {R, ni});
  const Tensor feat = reshape(slice(out, 1, 4, df), {R, ni, df});
  CompositeOut co = composite_quadrature(sigma, rgb, feat, ts);

  RenderBatch rb;
  rb.rgb = co.rgb;
  rb.feat = co.feat;
  rb.depth = co.depth;
  rb.acc = co.acc;
  rb.ts = ts;
  rb.weights.assign(R, std::vector<double>(ni, 0.0));
  for (size_t r = 0; r < R; ++r)
    for (size_t i = 0; i < ni; ++i) rb.weights[r][i] = co.weights.at(r * ni + i);
  return rb;
}

RayRender render_ray(const GNFNetwork& net, const Tensor& volume, const Ray& ray,
                     const std::vector<double>& ts, const Vec3& ws_lo, const Vec3& ws_hi) {
  RenderBatch rb = render_rays(net, volume, {ray}, {ts}, ws_lo, ws_hi);
  RayRender rr;
  rr.rgb = reshape(rb.rgb, {3});
  rr.feat = reshape(rb.feat, {net.config().df});
  rr.depth = rb.depth;
  rr.acc = rb.acc;
  rr.weights = rb.weights[0];
  rr.ts = rb.ts[0];
  return rr;
}

// ---- reconstruction loss ---------------------------------------------------

ReconLossParts recon_loss(const RenderBatch& rb, const Tensor& rgb_gt, const Tensor& feat_gt,
                          const Vec3& background, double lambda_feat) {
  const size_t R = rb.rgb.shape()[0];
  if (rgb_gt.shape() != rb.rgb.shape())
    throw std::runtime_error("recon_loss: rgb target shape mismatch (" + rgb_gt.shape_str() +
                             " vs " + rb.rgb.shape_str() + ")");
  if (feat_gt.shape() != rb.feat.shape())
    throw std::runtime_error("recon_loss: feature target shape mismatch (" + feat_gt.shape_str() +
                             " vs " + rb.feat.shape_str() + ")");
  const Dtype dt = rb.rgb.dtype();
  Tensor bg = Tensor::zeros({R, 3}, dt);
  for (size_t r = 0; r < R; ++r) {
    bg.set(r * 3 + 0, background.x);
    bg.set(r * 3 + 1, background.y);
    bg.set(r * 3 + 2, background.z);
  }
  const Tensor resid = add_scalar(neg(rb.acc), 1.0);  // 1 - acc
  const Tensor rgb_full = add(rb.rgb, mul_prefix(bg, resid));
  ReconLossParts parts;
  parts.rgb = sum_all(square(sub(rgb_gt, rgb_full)));
  parts.feat = sum_all(square(sub(feat_gt, rb.feat)));
  parts.total = add(parts.rgb, scale(parts.feat, lambda_feat));
  return parts;
}

}  // namespace ff
