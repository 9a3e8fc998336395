#include <cmath>

#include "featfield/gnf.hpp"
#include "featfield/gradcheck.hpp"
#include "featfield/nn.hpp"
#include "featfield/ops.hpp"
#include "featfield/policy.hpp"
#include "featfield/rng.hpp"

namespace ff {

namespace {

using ff::ops::sum_all;

Tensor rand_f64(Rng& rng, std::vector<size_t> shape, double lo = -1.5, double hi = 1.5) {
  Tensor t = Tensor::zeros(std::move(shape), Dtype::F64);
  for (size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

// Deterministic random projection to a scalar so every output coordinate
// influences the loss.
Tensor project(const Tensor& out, uint64_t salt) {
  Rng rng(0x5eedba5e ^ salt);
  Tensor p = rand_f64(rng, out.shape(), 0.25, 1.75);
  return sum_all(ff::ops::mul(out, p));
}

// Interior query points that avoid trilinear cell-center kinks of an n-cell
// grid along every axis.
Tensor interior_points(Rng& rng, size_t count, size_t n) {
  Tensor pts = Tensor::zeros({count, 3}, Dtype::F64);
  for (size_t i = 0; i < pts.numel(); ++i) {
    double v;
    do {
      v = rng.uniform(0.15, 0.85);
    } while (std::abs(v * (double)n - 0.5 - std::round(v * (double)n - 0.5)) < 0.02);
    pts.set(i, v);
  }
  return pts;
}

GNFConfig toy_gnf_config() {
  GNFConfig gc;
  gc.cv = 4;
  gc.df = 3;
  gc.width = 8;
  gc.n_blocks = 1;
  gc.pe_bands = 1;
  gc.rgb_hidden = 4;
  gc.dtype = Dtype::F64;
  return gc;
}

PolicyConfig toy_policy_config() {
  PolicyConfig pc;
  pc.grid = 4;
  pc.cv = 3;
  pc.condense_stride = 2;
  pc.d_tok = 6;
  pc.d_lang = 4;
  pc.t_lang = 2;
  pc.latents = 3;
  pc.blocks = 1;
  pc.heads = 2;
  pc.ffn_mult = 2;
  pc.rot_bins = 6;
  pc.trans_hidden = 2;
  pc.agg_hidden = 4;
  pc.dtype = Dtype::F64;
  return pc;
}

}  // namespace

std::vector<SuiteEntry> gradcheck_render_suite() {
  namespace o = ff::ops;
  std::vector<SuiteEntry> out;
  auto run = [&](const std::string& name, std::vector<Tensor> inputs,
                 std::function<Tensor(const std::vector<Tensor>&)> fn) {
    out.push_back({name, gradcheck(fn, std::move(inputs))});
  };
  Rng rng(20240818);

  // Trilinear volume sampling on a 4-cell grid.
  {
    Rng prng(1123);
    run("trilinear_sampling", {rand_f64(rng, {4, 4, 4, 5}), interior_points(prng, 8, 4)},
        [](const std::vector<Tensor>& in) {
          return project(o::grid_sample_trilinear(in[0], in[1]), 41);
        });
  }

  // Sinusoidal position featurization.
  run("positional_encoding", {rand_f64(rng, {5, 3}, 0.05, 0.95)},
      [](const std::vector<Tensor>& in) { return project(positional_encoding(in[0], 3), 42); });

  // Field network: (position, direction, sampled volume feature) -> outputs.
  {
    ParamStore store;
    Rng init(7);
    GNFNetwork net(store, "g", toy_gnf_config(), init);
    std::vector<Tensor> inputs;
    inputs.push_back(rand_f64(rng, {4, 3}, 0.1, 0.9));   // x01
    inputs.push_back(rand_f64(rng, {4, 3}, -0.9, 0.9));  // dirs
    inputs.push_back(rand_f64(rng, {4, 4}, -1.0, 1.0));  // vox features
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    run("field_eval", inputs, [net](const std::vector<Tensor>& in) {
      return project(net.forward(in[0], in[1], in[2]), 43);
    });
  }

  // Emission-absorption quadrature on fixed depth lists.
  {
    std::vector<std::vector<double>> ts = {{0.1, 0.4, 0.7, 1.0}, {0.2, 0.45, 0.8, 1.1}};
    run("composite_quadrature",
        {rand_f64(rng, {2, 3}, 0.2, 2.0), rand_f64(rng, {2, 3, 3}, 0.0, 1.0),
         rand_f64(rng, {2, 3, 2}, -1.0, 1.0)},
        [ts](const std::vector<Tensor>& in) {
          CompositeOut co = composite_quadrature(in[0], in[1], in[2], ts);
          Tensor s = o::add(project(co.rgb, 44), project(co.feat, 45));
          s = o::add(s, project(co.depth, 46));
          return o::add(s, project(co.acc, 47));
        });
  }

  // Two rays through a 4^3 volume down to the reconstruction loss.
  {
    ParamStore store;
    Rng init(8);
    GNFNetwork net(store, "g", toy_gnf_config(), init);
    std::vector<Ray> rays(2);
    rays[0].o = Vec3(0.5, 0.45, -0.6);
    rays[0].d = Vec3(0, 0, 1);
    rays[0].t_n = 0.7;
    rays[0].t_f = 1.5;
    rays[1].o = Vec3(-0.4, 0.45, 0.55);
    rays[1].d = Vec3(1, 0, 0);
    rays[1].t_n = 0.5;
    rays[1].t_f = 1.3;
    std::vector<std::vector<double>> ts = {{0.72, 0.95, 1.18, 1.42}, {0.52, 0.78, 1.02, 1.27}};
    const Vec3 lo(0, 0, 0), hi(1, 1, 1), bg(0.2, 0.3, 0.4);

    std::vector<Tensor> inputs;
    inputs.push_back(rand_f64(rng, {4, 4, 4, 4}, -1.0, 1.0));  // volume
    inputs.push_back(rand_f64(rng, {2, 3}, 0.0, 1.0));         // rgb gt
    inputs.push_back(rand_f64(rng, {2, 3}, -1.0, 1.0));        // feat gt
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    run("render_ray_to_recon_loss", inputs, [net, rays, ts, lo, hi, bg](const std::vector<Tensor>& in) {
      RenderBatch rb = render_rays(net, in[0], rays, ts, lo, hi);
      return recon_loss(rb, in[1], in[2], bg, 0.7).total;
    });
  }

  return out;
}

std::vector<SuiteEntry> gradcheck_policy_suite() {
  namespace o = ff::ops;
  std::vector<SuiteEntry> out;
  auto run = [&](const std::string& name, std::vector<Tensor> inputs,
                 std::function<Tensor(const std::vector<Tensor>&)> fn) {
    out.push_back({name, gradcheck(fn, std::move(inputs))});
  };
  Rng rng(20240819);
  const PolicyConfig pc = toy_policy_config();

  // Strided condensation of the volume into coarse tokens.
  {
    ParamStore store;
    Rng init(9);
    PerceiverPolicy pol(store, "p", pc, init);
    std::vector<Tensor> inputs;
    inputs.push_back(rand_f64(rng, {4, 4, 4, 3}, -1.0, 1.0));
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    run("condense", inputs, [pol](const std::vector<Tensor>& in) {
      return project(pol.condense(in[0]), 51);
    });
  }

  // Full policy forward on toy extents, both heads.
  {
    ParamStore store;
    Rng init(10);
    PerceiverPolicy pol(store, "p", pc, init);
    std::vector<Tensor> inputs;
    inputs.push_back(rand_f64(rng, {4, 4, 4, 3}, -1.0, 1.0));            // volume
    inputs.push_back(rand_f64(rng, {4}, 0.05, 0.95));                    // proprio
    inputs.push_back(rand_f64(rng, {pc.t_lang, pc.d_lang}, -1.0, 1.0));  // lang tokens
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    run("perceiver_forward", inputs, [pol](const std::vector<Tensor>& in) {
      PolicyOutput po = pol.forward(in[0], in[1], in[2]);
      return o::add(project(po.q_trans, 52), project(po.agg, 53));
    });
  }

  // Cross-entropy action objective through the whole pathway.
  {
    ParamStore store;
    Rng init(11);
    PerceiverPolicy pol(store, "p", pc, init);
    DiscretizedAction target;
    target.cell[0] = 1;
    target.cell[1] = 3;
    target.cell[2] = 0;
    target.rot[0] = 2;
    target.rot[1] = 0;
    target.rot[2] = 5;
    target.open = 1;
    target.collide = 0;
    std::vector<Tensor> inputs;
    inputs.push_back(rand_f64(rng, {4, 4, 4, 3}, -1.0, 1.0));
    inputs.push_back(rand_f64(rng, {4}, 0.05, 0.95));
    inputs.push_back(rand_f64(rng, {pc.t_lang, pc.d_lang}, -1.0, 1.0));
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    run("action_loss_end_to_end", inputs, [pol, target, pc](const std::vector<Tensor>& in) {
      PolicyOutput po = pol.forward(in[0], in[1], in[2]);
      return action_loss(po, target, pc.grid, pc.rot_bins).total;
    });
  }

  return out;
}

}  // namespace ff
