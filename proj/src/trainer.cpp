#include "featfield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "featfield/ops.hpp"
#include "featfield/voxelize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ff {

using namespace ff::ops;

Dtype TrainConfig::dtype() const { return precision == "f64" ? Dtype::F64 : Dtype::F32; }

void TrainConfig::validate() const {
  if (lambda_action < 0 || lambda_recon < 0 || lambda_feat < 0)
    throw std::invalid_argument("config: loss weights must be >= 0");
  if (b_ray < 1) throw std::invalid_argument("config: b_ray must be >= 1");
  if (n_coarse < 2) throw std::invalid_argument("config: n_coarse must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (grid < 2) throw std::invalid_argument("config: grid must be >= 2");
  if (precision != "f32" && precision != "f64")
    throw std::invalid_argument("config: precision must be \"f32\" or \"f64\"");
  if (feature_source != "dataset")
    throw std::invalid_argument("config: feature_source supports only \"dataset\"");
  for (int a = 0; a < 3; ++a)
    if (!(ws_hi[a] > ws_lo[a]))
      throw std::invalid_argument("config: workspace extents must be positive");
  if (grid % condense_stride != 0)
    throw std::invalid_argument("config: grid must be divisible by condense_stride");
  if (eps_v <= 0) throw std::invalid_argument("config: eps_v must be positive");
}

// ---------------------------------------------------------------------------
// Config JSON

static json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
static Vec3 vec3_from_json(const json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

static json config_to_json(const TrainConfig& c) {
  json j;
  j["lambda_action"] = c.lambda_action;
  j["lambda_recon"] = c.lambda_recon;
  j["lambda_feat"] = c.lambda_feat;
  j["b_ray"] = c.b_ray;
  j["n_coarse"] = c.n_coarse;
  j["n_fine_importance"] = c.n_fine_importance;
  j["n_fine_depth"] = c.n_fine_depth;
  j["lr"] = c.lr;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["lamb"] = c.lamb;
  j["ws_lo"] = vec3_to_json(c.ws_lo);
  j["ws_hi"] = vec3_to_json(c.ws_hi);
  j["grid"] = c.grid;
  j["background"] = vec3_to_json(c.background);
  j["cv"] = c.cv;
  j["enc_c0"] = c.enc_c0;
  j["enc_c1"] = c.enc_c1;
  j["enc_c2"] = c.enc_c2;
  j["enc_c3"] = c.enc_c3;
  j["enc_out_kernel"] = c.enc_out_kernel;
  j["df"] = c.df;
  j["gnf_width"] = c.gnf_width;
  j["gnf_blocks"] = c.gnf_blocks;
  j["pe_bands"] = c.pe_bands;
  j["rgb_hidden"] = c.rgb_hidden;
  j["condense_stride"] = c.condense_stride;
  j["d_lang"] = c.d_lang;
  j["t_lang"] = c.t_lang;
  j["latents"] = c.latents;
  j["p_blocks"] = c.p_blocks;
  j["heads"] = c.heads;
  j["ffn_mult"] = c.ffn_mult;
  j["trans_hidden"] = c.trans_hidden;
  j["agg_hidden"] = c.agg_hidden;
  j["rot_bins"] = c.rot_bins;
  j["eps_v"] = c.eps_v;
  j["no_gnf"] = c.no_gnf;
  j["no_rgb"] = c.no_rgb;
  j["no_feat"] = c.no_feat;
  j["no_dgs"] = c.no_dgs;
  j["no_skip"] = c.no_skip;
  j["feature_source"] = c.feature_source;
  j["precision"] = c.precision;
  j["deterministic"] = c.deterministic;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  return j;
}

static TrainConfig config_from_json(const json& j, TrainConfig c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "lambda_action") c.lambda_action = v.get<double>();
    else if (k == "lambda_recon") c.lambda_recon = v.get<double>();
    else if (k == "lambda_feat") c.lambda_feat = v.get<double>();
    else if (k == "b_ray") c.b_ray = v.get<size_t>();
    else if (k == "n_coarse") c.n_coarse = v.get<size_t>();
    else if (k == "n_fine_importance") c.n_fine_importance = v.get<size_t>();
    else if (k == "n_fine_depth") c.n_fine_depth = v.get<size_t>();
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "iterations") c.iterations = v.get<size_t>();
    else if (k == "batch_size") c.batch_size = v.get<size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "lamb") c.lamb = v.get<bool>();
    else if (k == "ws_lo") c.ws_lo = vec3_from_json(v);
    else if (k == "ws_hi") c.ws_hi = vec3_from_json(v);
    else if (k == "grid") c.grid = v.get<size_t>();
    else if (k == "background") c.background = vec3_from_json(v);
    else if (k == "cv") c.cv = v.get<size_t>();
    else if (k == "enc_c0") c.enc_c0 = v.get<size_t>();
    else if (k == "enc_c1") c.enc_c1 = v.get<size_t>();
    else if (k == "enc_c2") c.enc_c2 = v.get<size_t>();
    else if (k == "enc_c3") c.enc_c3 = v.get<size_t>();
    else if (k == "enc_out_kernel") c.enc_out_kernel = v.get<size_t>();
    else if (k == "df") c.df = v.get<size_t>();
    else if (k == "gnf_width") c.gnf_width = v.get<size_t>();
    else if (k == "gnf_blocks") c.gnf_blocks = v.get<size_t>();
    else if (k == "pe_bands") c.pe_bands = v.get<size_t>();
    else if (k == "rgb_hidden") c.rgb_hidden = v.get<size_t>();
    else if (k == "condense_stride") c.condense_stride = v.get<size_t>();
    else if (k == "d_lang") c.d_lang = v.get<size_t>();
    else if (k == "t_lang") c.t_lang = v.get<size_t>();
    else if (k == "latents") c.latents = v.get<size_t>();
    else if (k == "p_blocks") c.p_blocks = v.get<size_t>();
    else if (k == "heads") c.heads = v.get<size_t>();
    else if (k == "ffn_mult") c.ffn_mult = v.get<size_t>();
    else if (k == "trans_hidden") c.trans_hidden = v.get<size_t>();
    else if (k == "agg_hidden") c.agg_hidden = v.get<size_t>();
    else if (k == "rot_bins") c.rot_bins = v.get<size_t>();
    else if (k == "eps_v") c.eps_v = v.get<double>();
    else if (k == "no_gnf") c.no_gnf = v.get<bool>();
    else if (k == "no_rgb") c.no_rgb = v.get<bool>();
    else if (k == "no_feat") c.no_feat = v.get<bool>();
    else if (k == "no_dgs") c.no_dgs = v.get<bool>();
    else if (k == "no_skip") c.no_skip = v.get<bool>();
    else if (k == "feature_source") c.feature_source = v.get<std::string>();
    else if (k == "precision") c.precision = v.get<std::string>();
    else if (k == "deterministic") c.deterministic = v.get<bool>();
    else if (k == "checkpoint_every") c.checkpoint_every = v.get<size_t>();
    else if (k == "log_every") c.log_every = v.get<size_t>();
    else throw std::invalid_argument("config: unknown key \"" + k + "\"");
  }
  return c;
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;  // defaults == desk
  if (name == "desk") return c;
  if (name == "paper-shapes") {
    c.grid = 100;
    c.cv = 128;
    c.df = 512;
    c.enc_c0 = 8;
    c.enc_c1 = 16;
    c.enc_c2 = 32;
    c.enc_c3 = 64;
    c.enc_out_kernel = 3;
    c.gnf_width = 128;
    c.gnf_blocks = 5;
    c.rgb_hidden = 64;
    c.condense_stride = 5;
    c.d_lang = 512;
    c.t_lang = 77;
    c.latents = 2048;
    c.p_blocks = 6;
    c.heads = 8;
    c.b_ray = 512;
    c.n_coarse = 64;
    c.n_fine_importance = 32;
    c.n_fine_depth = 32;
    return c;
  }
  if (name == "realworld") {
    c.lambda_action = 0.1;
    c.lambda_recon = 1.0;
    return c;
  }
  throw std::invalid_argument("unknown preset \"" + name +
                              "\" (expected desk, paper-shapes, or realworld)");
}

TrainConfig load_config_over(const TrainConfig& base, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  json j = json::parse(f);
  TrainConfig c = config_from_json(j, base);
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) { return load_config_over(TrainConfig{}, path); }

void save_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write " + path);
  f << config_to_json(cfg).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Models

void build_models(Models& m, const TrainConfig& cfg) {
  cfg.validate();
  Rng base(cfg.seed);
  Rng r_enc = base.fork(1), r_gnf = base.fork(2), r_pol = base.fork(3);

  EncoderConfig ec;
  ec.in_channels = kVoxelChannels;
  ec.c0 = cfg.enc_c0;
  ec.c1 = cfg.enc_c1;
  ec.c2 = cfg.enc_c2;
  ec.c3 = cfg.enc_c3;
  ec.out_channels = cfg.cv;
  ec.out_kernel = cfg.enc_out_kernel;
  ec.skips = !cfg.no_skip;
  ec.dtype = cfg.dtype();
  m.encoder = VoxelEncoder(m.store, "enc", ec, r_enc);

  GNFConfig gc;
  gc.cv = cfg.cv;
  gc.df = cfg.df;
  gc.width = cfg.gnf_width;
  gc.n_blocks = cfg.gnf_blocks;
  gc.pe_bands = cfg.pe_bands;
  gc.rgb_hidden = cfg.rgb_hidden;
  gc.dtype = cfg.dtype();
  m.gnf = GNFNetwork(m.store, "gnf", gc, r_gnf);

  PolicyConfig pc;
  pc.grid = cfg.grid;
  pc.cv = cfg.cv;
  pc.condense_stride = cfg.condense_stride;
  pc.d_tok = 2 * cfg.cv;
  pc.d_lang = cfg.d_lang;
  pc.t_lang = cfg.t_lang;
  pc.latents = cfg.latents;
  pc.blocks = cfg.p_blocks;
  pc.heads = cfg.heads;
  pc.ffn_mult = cfg.ffn_mult;
  pc.rot_bins = cfg.rot_bins;
  pc.trans_hidden = cfg.trans_hidden;
  pc.agg_hidden = cfg.agg_hidden;
  pc.dtype = cfg.dtype();
  m.policy = PerceiverPolicy(m.store, "pol", pc, r_pol);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& dir, const Models& m, const Adam* optim, size_t iter,
                     const TrainConfig& cfg) {
  fs::create_directories(dir);
  m.store.save(dir + "/params");
  if (optim) optim->save(dir + "/optim");
  json meta{{"iter", iter}, {"config", config_to_json(cfg)}};
  std::ofstream f(dir + "/meta.json");
  if (!f) throw std::runtime_error("checkpoint: cannot write " + dir + "/meta.json");
  f << meta.dump(2) << "\n";
}

size_t load_checkpoint(const std::string& dir, Models& m, TrainConfig* cfg_out) {
  std::ifstream f(dir + "/meta.json");
  if (!f) throw std::runtime_error("checkpoint: missing " + dir + "/meta.json");
  json meta = json::parse(f);
  TrainConfig cfg = config_from_json(meta.at("config"), TrainConfig{});
  build_models(m, cfg);
  m.store.load(dir + "/params");
  if (cfg_out) *cfg_out = cfg;
  return meta.at("iter").get<size_t>();
}

void load_optim_state(const std::string& dir, Adam& optim) { optim.load(dir + "/optim"); }

// ---------------------------------------------------------------------------
// Tuple assembly

namespace {

struct ScenePack {
  const LoadedScene* scene = nullptr;
  std::vector<TrainingTuple> tuples;
};

std::vector<ScenePack> build_packs(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<ScenePack> packs;
  for (const LoadedScene& s : ds.scenes) {
    ScenePack p;
    p.scene = &s;
    for (size_t d = 0; d < s.demos.size(); ++d) {
      auto kfs = extract_keyframes(s.demos[d], cfg.eps_v, d);
      auto tups = make_training_tuples(s.demos[d], kfs, s, cfg.ws_lo, cfg.ws_hi, cfg.grid,
                                       cfg.rot_bins);
      for (auto& t : tups) p.tuples.push_back(std::move(t));
    }
    packs.push_back(std::move(p));
  }
  return packs;
}

struct TupleRef {
  size_t pack, tuple;
};

std::vector<TupleRef> flatten(const std::vector<ScenePack>& packs) {
  std::vector<TupleRef> flat;
  for (size_t p = 0; p < packs.size(); ++p)
    for (size_t t = 0; t < packs[p].tuples.size(); ++t) flat.push_back({p, t});
  return flat;
}

Tensor to_dtype(const Tensor& t, Dtype dt) { return t.dtype() == dt ? t : t.to(dt); }

// Per-ray depth plan: stratified proposal, a no-grad proposal render for
// importance weights, optional depth-guided samples, merged and sorted.
std::vector<std::vector<double>> plan_depths(const GNFNetwork& net, const Tensor& volume,
                                             const std::vector<Ray>& rays,
                                             const std::vector<double>& depth_gt,
                                             const TrainConfig& cfg, Rng& rng, bool jitter) {
  const size_t R = rays.size();
  std::vector<std::vector<double>> coarse(R);
  for (size_t r = 0; r < R; ++r)
    coarse[r] = sample_stratified(rays[r].t_n, rays[r].t_f, cfg.n_coarse, rng, jitter);

  std::vector<std::vector<double>> weights;
  if (cfg.n_fine_importance > 0 || (cfg.n_fine_depth > 0 && cfg.no_dgs)) {
    NoGrad ng;
    RenderBatch rb = render_rays(net, volume, rays, coarse, cfg.ws_lo, cfg.ws_hi);
    weights = std::move(rb.weights);
  }

  std::vector<std::vector<double>> out(R);
  for (size_t r = 0; r < R; ++r) {
    std::vector<double> ts = coarse[r];
    if (cfg.n_fine_importance > 0) {
      auto fine = sample_importance(coarse[r], weights[r], cfg.n_fine_importance, rng, jitter);
      ts.insert(ts.end(), fine.begin(), fine.end());
    }
    if (cfg.n_fine_depth > 0) {
      std::vector<double> fine;
      if (cfg.no_dgs)
        fine = sample_importance(coarse[r], weights[r], cfg.n_fine_depth, rng, jitter);
      else
        fine = sample_depth_guided(depth_gt[r], rays[r].t_n, rays[r].t_f, cfg.n_fine_depth, rng);
      ts.insert(ts.end(), fine.begin(), fine.end());
    }
    std::sort(ts.begin(), ts.end());
    out[r] = std::move(ts);
  }
  return out;
}

// Ground truth for a set of pixels of one view.
void gather_gt(const LoadedView& vw, const std::vector<size_t>& pixels, Dtype dt, Tensor* rgb_gt,
               Tensor* feat_gt, std::vector<double>* depth_gt) {
  const size_t R = pixels.size();
  const size_t df = vw.feat.shape()[2];
  *rgb_gt = Tensor::zeros({R, 3}, dt);
  *feat_gt = Tensor::zeros({R, df}, dt);
  depth_gt->resize(R);
  for (size_t r = 0; r < R; ++r) {
    const size_t p = pixels[r];
    for (size_t c = 0; c < 3; ++c) rgb_gt->set(r * 3 + c, vw.rgb.at(p * 3 + c));
    for (size_t c = 0; c < df; ++c) feat_gt->set(r * df + c, vw.feat.at(p * df + c));
    (*depth_gt)[r] = vw.depth.at(p);
  }
}

std::vector<Ray> rays_for_pixels(const CameraModel& cam, const std::vector<size_t>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  const size_t W = (size_t)cam.w;
  for (size_t p : pixels) rays.push_back(ray_for_pixel(cam, p % W, p / W));
  return rays;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);

  Dataset ds = load_dataset(data_dir);
  std::vector<ScenePack> packs = build_packs(ds, cfg);
  std::vector<TupleRef> flat = flatten(packs);
  if (flat.empty()) throw std::runtime_error("train: dataset produced no training tuples");

  const bool render_on = !cfg.no_gnf && !(cfg.no_rgb && cfg.no_feat);
  if (render_on)
    for (const auto& p : packs)
      if (p.scene->views.size() < 2)
        throw std::runtime_error(
            "train: reconstruction requires auxiliary views (scene has only the front view)");

  Models m;
  build_models(m, cfg);
  OptimConfig oc;
  oc.lr = cfg.lr;
  oc.lamb = cfg.lamb;
  Adam adam(m.store.tensors(), oc);

  Rng base(cfg.seed);
  Rng rng_action = base.fork(101);
  Rng rng_ray = base.fork(202);
  const Dtype dt = cfg.dtype();

  std::map<std::string, Tensor> lang_cache;
  auto lang_for = [&](const std::string& task) {
    auto it = lang_cache.find(task);
    if (it != lang_cache.end()) return it->second;
    Tensor e = embed_language(task, cfg.t_lang, cfg.d_lang, dt);
    lang_cache.emplace(task, e);
    return e;
  };

  const std::string metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream mf(metrics_path, std::ios::trunc);
  if (!mf) throw std::runtime_error("train: cannot write " + metrics_path);

  const std::string last_good = out_dir + "/ckpt_last_good";
  save_checkpoint(last_good, m, &adam, 0, cfg);

  TrainResult res;
  res.metrics_path = metrics_path;

  for (size_t it = 1; it <= cfg.iterations; ++it) {
    adam.zero_grad();

    // --- action batch (its own RNG stream) ---
    std::vector<TupleRef> batch(cfg.batch_size);
    for (size_t b = 0; b < cfg.batch_size; ++b) batch[b] = flat[rng_action.below(flat.size())];

    std::vector<Tensor> volumes(cfg.batch_size);
    Tensor action_sum;
    for (size_t b = 0; b < cfg.batch_size; ++b) {
      const TrainingTuple& tup = packs[batch[b].pack].tuples[batch[b].tuple];
      Tensor v = m.encoder.forward(to_dtype(tup.obs, dt));
      volumes[b] = v;
      PolicyOutput po = m.policy.forward(v, to_dtype(tup.proprio, dt), lang_for(tup.task));
      ActionLossParts ap = action_loss(po, tup.action, cfg.grid, cfg.rot_bins);
      action_sum = b == 0 ? ap.total : add(action_sum, ap.total);
    }
    Tensor action_mean = scale(action_sum, 1.0 / (double)cfg.batch_size);
    const double l_action = action_mean.item();

    // --- pooled ray batch (independent RNG stream) ---
    double l_rgb = 0.0, l_feat = 0.0;
    Tensor recon_rgb_sum, recon_feat_sum;
    bool have_recon = false;
    if (render_on) {
      std::vector<std::vector<std::pair<size_t, size_t>>> draws(cfg.batch_size);
      for (size_t r = 0; r < cfg.b_ray; ++r) {
        const size_t bi = rng_ray.below(cfg.batch_size);
        const LoadedScene* sc = packs[batch[bi].pack].scene;
        const size_t view = 1 + rng_ray.below(sc->views.size() - 1);
        const size_t hw = sc->views[view].rgb.shape()[0] * sc->views[view].rgb.shape()[1];
        draws[bi].push_back({view, rng_ray.below(hw)});
      }
      for (size_t b = 0; b < cfg.batch_size; ++b) {
        // group this item's rays by view so gather stays simple
        std::map<size_t, std::vector<size_t>> by_view;
        for (auto& d : draws[b]) by_view[d.first].push_back(d.second);
        const LoadedScene* sc = packs[batch[b].pack].scene;
        for (auto& [view, pixels] : by_view) {
          const LoadedView& vw = sc->views[view];
          Tensor rgb_gt, feat_gt;
          std::vector<double> depth_gt;
          gather_gt(vw, pixels, dt, &rgb_gt, &feat_gt, &depth_gt);
          std::vector<Ray> rays = rays_for_pixels(vw.cam, pixels);
          auto ts = plan_depths(m.gnf, volumes[b], rays, depth_gt, cfg, rng_ray, true);
          RenderBatch rb = render_rays(m.gnf, volumes[b], rays, ts, cfg.ws_lo, cfg.ws_hi);
          ReconLossParts rp = recon_loss(rb, rgb_gt, feat_gt, cfg.background, cfg.lambda_feat);
          recon_rgb_sum = have_recon ? add(recon_rgb_sum, rp.rgb) : rp.rgb;
          recon_feat_sum = have_recon ? add(recon_feat_sum, rp.feat) : rp.feat;
          have_recon = true;
        }
      }
      if (have_recon) {
        l_rgb = cfg.no_rgb ? 0.0 : recon_rgb_sum.item();
        l_feat = cfg.no_feat ? 0.0 : recon_feat_sum.item();
      }
    }

    // --- total and step ---
    Tensor total = scale(action_mean, cfg.lambda_action);
    if (have_recon && !(cfg.no_rgb && cfg.no_feat)) {
      Tensor recon;
      if (cfg.no_rgb)
        recon = scale(recon_feat_sum, cfg.lambda_feat);
      else if (cfg.no_feat)
        recon = recon_rgb_sum;
      else
        recon = add(recon_rgb_sum, scale(recon_feat_sum, cfg.lambda_feat));
      total = add(total, scale(recon, cfg.lambda_recon));
    }
    total.backward();
    adam.step();

    const double loss =
        cfg.lambda_action * l_action + cfg.lambda_recon * (l_rgb + cfg.lambda_feat * l_feat);
    if (cfg.log_every > 0 && it % cfg.log_every == 0) {
      json row{{"iter", it},
               {"loss", loss},
               {"l_action", l_action},
               {"l_recon_rgb", l_rgb},
               {"l_recon_feat", l_feat}};
      mf << row.dump() << "\n";
    }
    res.iterations_run = it;

    if (!std::isfinite(loss)) {
      std::fprintf(stderr, "[train] non-finite loss at iteration %zu; aborting (last good checkpoint: %s)\n",
                   it, last_good.c_str());
      res.aborted_non_finite = true;
      res.final_checkpoint = last_good;
      mf.flush();
      return res;
    }
    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0)
      save_checkpoint(last_good, m, &adam, it, cfg);
  }

  const std::string final_dir = out_dir + "/ckpt_final";
  save_checkpoint(final_dir, m, &adam, cfg.iterations, cfg);
  res.final_checkpoint = final_dir;
  mf.flush();
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string PolicyEval::to_json() const {
  json j{{"trans_exact", trans_exact},   {"trans_within1", trans_within1},
         {"rot_exact", rot_exact},       {"rot_per_axis", rot_per_axis},
         {"open_acc", open_acc},         {"collide_acc", collide_acc},
         {"count", count}};
  return j.dump(2);
}

PolicyEval evaluate_policy(Models& m, const TrainConfig& cfg, const std::string& data_dir) {
  Dataset ds = load_dataset(data_dir);
  std::vector<ScenePack> packs = build_packs(ds, cfg);
  std::vector<TupleRef> flat = flatten(packs);
  if (flat.empty()) throw std::invalid_argument("evaluate_policy: no tuples in " + data_dir);

  const Dtype dt = cfg.dtype();
  std::map<std::string, Tensor> lang_cache;
  PolicyEval ev;
  ev.count = flat.size();
  NoGrad ng;
  for (const TupleRef& ref : flat) {
    const TrainingTuple& tup = packs[ref.pack].tuples[ref.tuple];
    Tensor v = m.encoder.forward(to_dtype(tup.obs, dt));
    auto it = lang_cache.find(tup.task);
    if (it == lang_cache.end())
      it = lang_cache.emplace(tup.task, embed_language(tup.task, cfg.t_lang, cfg.d_lang, dt)).first;
    PolicyOutput po = m.policy.forward(v, to_dtype(tup.proprio, dt), it->second);
    DiscretizedAction got = decode_action(po, cfg.grid, cfg.rot_bins);
    const DiscretizedAction& want = tup.action;

    bool exact = true;
    int cheb = 0;
    for (int a = 0; a < 3; ++a) {
      exact = exact && got.cell[a] == want.cell[a];
      cheb = std::max(cheb, std::abs(got.cell[a] - want.cell[a]));
    }
    ev.trans_exact += exact ? 1.0 : 0.0;
    ev.trans_within1 += cheb <= 1 ? 1.0 : 0.0;
    int rot_hits = 0;
    for (int a = 0; a < 3; ++a) rot_hits += got.rot[a] == want.rot[a] ? 1 : 0;
    ev.rot_exact += rot_hits == 3 ? 1.0 : 0.0;
    ev.rot_per_axis += rot_hits / 3.0;
    ev.open_acc += got.open == want.open ? 1.0 : 0.0;
    ev.collide_acc += got.collide == want.collide ? 1.0 : 0.0;
  }
  const double n = (double)ev.count;
  ev.trans_exact /= n;
  ev.trans_within1 /= n;
  ev.rot_exact /= n;
  ev.rot_per_axis /= n;
  ev.open_acc /= n;
  ev.collide_acc /= n;
  return ev;
}

RenderedView render_view(Models& m, const TrainConfig& cfg, const LoadedScene& scene,
                         size_t view_index) {
  if (scene.views.empty()) throw std::invalid_argument("render_view: scene has no views");
  if (view_index >= scene.views.size())
    throw std::invalid_argument("render_view: view index out of range");
  const LoadedView& front = scene.views[0];
  const LoadedView& vw = scene.views[view_index];
  const Dtype dt = cfg.dtype();

  NoGrad ng;
  Tensor obs = voxelize_rgbd(front.rgb, front.depth, front.cam, cfg.ws_lo, cfg.ws_hi, cfg.grid);
  Tensor volume = m.encoder.forward(to_dtype(obs, dt));

  const size_t H = vw.rgb.shape()[0], W = vw.rgb.shape()[1];
  const size_t df = m.gnf.config().df;
  RenderedView out;
  out.rgb = Tensor::zeros({H, W, 3}, Dtype::F32);
  out.feat = Tensor::zeros({H, W, df}, Dtype::F32);

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const size_t chunk = 128;
  std::vector<size_t> pixels;
  for (size_t p0 = 0; p0 < H * W; p0 += chunk) {
    pixels.clear();
    for (size_t p = p0; p < std::min(H * W, p0 + chunk); ++p) pixels.push_back(p);
    Tensor rgb_gt, feat_gt;
    std::vector<double> depth_gt;
    gather_gt(vw, pixels, dt, &rgb_gt, &feat_gt, &depth_gt);
    std::vector<Ray> rays = rays_for_pixels(vw.cam, pixels);
    auto ts = plan_depths(m.gnf, volume, rays, depth_gt, cfg, rng, false);
    RenderBatch rb = render_rays(m.gnf, volume, rays, ts, cfg.ws_lo, cfg.ws_hi);
    for (size_t r = 0; r < pixels.size(); ++r) {
      const double resid = 1.0 - rb.acc.at(r);
      for (size_t c = 0; c < 3; ++c)
        out.rgb.set(pixels[r] * 3 + c, rb.rgb.at(r * 3 + c) + resid * cfg.background[(int)c]);
      for (size_t c = 0; c < df; ++c) out.feat.set(pixels[r] * df + c, rb.feat.at(r * df + c));
    }
  }
  return out;
}

std::vector<RenderEval> evaluate_render(Models& m, const TrainConfig& cfg,
                                        const LoadedScene& scene,
                                        const std::vector<size_t>& view_indices) {
  std::vector<RenderEval> out;
  for (size_t vi : view_indices) {
    const LoadedView& vw = scene.views.at(vi);
    RenderedView rv = render_view(m, cfg, scene, vi);
    double mse = 0.0;
    for (size_t i = 0; i < rv.rgb.numel(); ++i) {
      const double d = rv.rgb.at(i) - vw.rgb.at(i);
      mse += d * d;
    }
    mse /= (double)rv.rgb.numel();
    double fmse = 0.0;
    for (size_t i = 0; i < rv.feat.numel(); ++i) {
      const double d = rv.feat.at(i) - vw.feat.at(i);
      fmse += d * d;
    }
    fmse /= (double)rv.feat.numel();
    RenderEval re;
    re.psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
    re.feat_mse = fmse;
    out.push_back(re);
  }
  return out;
}

}  // namespace ff
