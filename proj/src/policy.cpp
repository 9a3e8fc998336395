#include "featfield/policy.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "featfield/ops.hpp"

namespace ff {

using namespace ff::ops;

int rot_bin_of(double degrees, int bins) {
  long long b = (long long)std::floor(degrees / 5.0);
  long long m = b % bins;
  if (m < 0) m += bins;
  return (int)m;
}

double rot_bin_center(int bin, int bins) {
  int m = bin % bins;
  if (m < 0) m += bins;
  return m * 5.0 + 2.5;
}

static std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= (std::uint64_t)c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor embed_language(const std::string& text, size_t t_lang, size_t d_lang, Dtype dt) {
  if (text.empty()) throw std::invalid_argument("embed_language: empty task string");
  if (t_lang == 0 || d_lang == 0)
    throw std::invalid_argument("embed_language: zero embedding dims");
  Rng rng(fnv1a64(text));
  Tensor out = Tensor::zeros({t_lang, d_lang}, dt);
  for (size_t i = 0; i < out.numel(); ++i) out.set(i, rng.normal());
  return out;
}

Tensor attention_probs(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.shape()[1] != k.shape()[1])
    throw std::invalid_argument("attention_probs: q,k must be [Nq,d],[Nk,d]");
  double inv = 1.0 / std::sqrt((double)q.shape()[1]);
  return softmax(scale(matmul(q, transpose2d(k)), inv), 1);
}

// ---------------------------------------------------------------------------
// PerceiverPolicy

PerceiverPolicy::Attn PerceiverPolicy::make_attn(ParamStore& s, const std::string& name,
                                                 Rng& rng) const {
  Attn a;
  size_t d = cfg_.d_tok;
  a.lnq_g = s.add(name + ".lnq.g", {d}, cfg_.dtype);
  a.lnq_b = s.add(name + ".lnq.b", {d}, cfg_.dtype);
  a.lnk_g = s.add(name + ".lnk.g", {d}, cfg_.dtype);
  a.lnk_b = s.add(name + ".lnk.b", {d}, cfg_.dtype);
  for (size_t i = 0; i < d; ++i) {
    a.lnq_g.set(i, 1.0);
    a.lnk_g.set(i, 1.0);
  }
  a.wq = make_linear(s, name + ".wq", d, d, rng, cfg_.dtype, /*bias=*/false);
  a.wk = make_linear(s, name + ".wk", d, d, rng, cfg_.dtype, /*bias=*/false);
  a.wv = make_linear(s, name + ".wv", d, d, rng, cfg_.dtype, /*bias=*/false);
  a.wo = make_linear(s, name + ".wo", d, d, rng, cfg_.dtype, /*bias=*/true);
  return a;
}

PerceiverPolicy::Ffn PerceiverPolicy::make_ffn(ParamStore& s, const std::string& name,
                                               Rng& rng) const {
  Ffn f;
  size_t d = cfg_.d_tok, h = cfg_.d_tok * cfg_.ffn_mult;
  f.ln_g = s.add(name + ".ln.g", {d}, cfg_.dtype);
  f.ln_b = s.add(name + ".ln.b", {d}, cfg_.dtype);
  for (size_t i = 0; i < d; ++i) f.ln_g.set(i, 1.0);
  f.w1 = make_linear(s, name + ".w1", d, h, rng, cfg_.dtype);
  f.w2 = make_linear(s, name + ".w2", h, d, rng, cfg_.dtype);
  return f;
}

PerceiverPolicy::PerceiverPolicy(ParamStore& store, const std::string& prefix,
                                 const PolicyConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg_.d_tok <= cfg_.cv)
    throw std::invalid_argument("policy: d_tok must exceed cv to fit the proprio slot");
  if (cfg_.d_tok % cfg_.heads != 0)
    throw std::invalid_argument("policy: heads must divide d_tok");
  if (cfg_.condense_stride == 0 || cfg_.grid % cfg_.condense_stride != 0) {
    size_t s = cfg_.condense_stride ? cfg_.condense_stride : 1;
    size_t padded = (cfg_.grid + s - 1) / s * s;
    throw std::invalid_argument("policy: grid " + std::to_string(cfg_.grid) +
                                " not divisible by condense stride " + std::to_string(s) +
                                "; pad the volume to " + std::to_string(padded) + "^3");
  }

  size_t k = cfg_.condense_stride;
  cond_w_ = store.add(prefix + ".cond.w", {k, k, k, cfg_.cv, cfg_.cv}, cfg_.dtype);
  cond_b_ = store.add(prefix + ".cond.b", {cfg_.cv}, cfg_.dtype);
  {
    double std = std::sqrt(2.0 / (double)(k * k * k * cfg_.cv));
    for (size_t i = 0; i < cond_w_.numel(); ++i) cond_w_.set(i, std * rng.normal());
  }

  proprio_ = make_linear(store, prefix + ".proprio", 4, cfg_.d_tok - cfg_.cv, rng, cfg_.dtype);
  lang_ = make_linear(store, prefix + ".lang", cfg_.d_lang, cfg_.d_tok, rng, cfg_.dtype);

  pos_ = store.add(prefix + ".pos", {cfg_.seq_len(), cfg_.d_tok}, cfg_.dtype);
  lat_ = store.add(prefix + ".latents", {cfg_.latents, cfg_.d_tok}, cfg_.dtype);
  for (size_t i = 0; i < pos_.numel(); ++i) pos_.set(i, 0.02 * rng.normal());
  for (size_t i = 0; i < lat_.numel(); ++i) lat_.set(i, 0.02 * rng.normal());

  enc_cross_ = make_attn(store, prefix + ".enc_cross", rng);
  enc_ffn_ = make_ffn(store, prefix + ".enc_ffn", rng);
  for (size_t b = 0; b < cfg_.blocks; ++b) {
    self_.push_back(make_attn(store, prefix + ".self" + std::to_string(b), rng));
    self_ffn_.push_back(make_ffn(store, prefix + ".self_ffn" + std::to_string(b), rng));
  }
  dec_cross_ = make_attn(store, prefix + ".dec_cross", rng);
  dec_ffn_ = make_ffn(store, prefix + ".dec_ffn", rng);

  restore_ = make_linear(store, prefix + ".restore", cfg_.d_tok, cfg_.cv, rng, cfg_.dtype);

  trans0_ = make_conv_block(store, prefix + ".trans0", 2 * cfg_.cv, cfg_.trans_hidden,
                            cfg_.trans_kernel, 1, cfg_.trans_kernel / 2, rng, cfg_.dtype,
                            /*norm=*/false, /*act=*/true);
  trans1_ = make_conv_block(store, prefix + ".trans1", cfg_.trans_hidden, 1, 1, 1, 0, rng,
                            cfg_.dtype, /*norm=*/false, /*act=*/false);

  size_t cf = 2 * cfg_.cv;           // fused channels
  size_t agg_in = cf + 3 * cf;       // max-pool + spatial-softmax expectations
  agg0_ = make_linear(store, prefix + ".agg0", agg_in, cfg_.agg_hidden, rng, cfg_.dtype);
  agg1_ = make_linear(store, prefix + ".agg1", cfg_.agg_hidden, cfg_.agg_out(), rng, cfg_.dtype);

  size_t n = cfg_.grid;
  coords_ = Tensor::zeros({n * n * n, 3}, cfg_.dtype);
  size_t idx = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t l = 0; l < n; ++l) {
        coords_.set(idx * 3 + 0, (i + 0.5) / n);
        coords_.set(idx * 3 + 1, (j + 0.5) / n);
        coords_.set(idx * 3 + 2, (l + 0.5) / n);
        ++idx;
      }
}

Tensor PerceiverPolicy::condense(const Tensor& v) const {
  if (v.rank() != 4 || v.shape()[3] != cfg_.cv)
    throw std::invalid_argument("condense: volume must be [n,n,n," + std::to_string(cfg_.cv) +
                                "]");
  size_t n = v.shape()[0], s = cfg_.condense_stride;
  if (n % s != 0) {
    size_t padded = (n + s - 1) / s * s;
    throw std::invalid_argument("condense: grid " + std::to_string(n) +
                                " not divisible by stride " + std::to_string(s) +
                                "; pad the volume to " + std::to_string(padded) + "^3");
  }
  return relu(conv3d(v, cond_w_, cond_b_, s, 0));
}

Tensor PerceiverPolicy::build_sequence(const Tensor& vol_tokens, const Tensor& proprio,
                                       const Tensor& lang) const {
  size_t nt = cfg_.n_vol_tokens();
  if (vol_tokens.rank() != 2 || vol_tokens.shape()[0] != nt || vol_tokens.shape()[1] != cfg_.cv)
    throw std::invalid_argument("build_sequence: volume tokens must be [" + std::to_string(nt) +
                                "," + std::to_string(cfg_.cv) + "]");
  if (proprio.numel() != 4)
    throw std::invalid_argument("build_sequence: proprioception must have 4 entries");
  if (lang.rank() != 2 || lang.shape()[0] != cfg_.t_lang || lang.shape()[1] != cfg_.d_lang)
    throw std::invalid_argument("build_sequence: language must be [" +
                                std::to_string(cfg_.t_lang) + "," +
                                std::to_string(cfg_.d_lang) + "]");

  Tensor pp = proprio_.forward(reshape(proprio, {1, 4}));
  Tensor pp_rep = repeat_rows(reshape(pp, {cfg_.d_tok - cfg_.cv}), nt);
  Tensor vol = concat({vol_tokens, pp_rep}, 1);      // [nt, d_tok]
  Tensor lng = lang_.forward(lang);                  // [t_lang, d_tok]
  Tensor seq = concat({vol, lng}, 0);                // [S, d_tok]
  return add(seq, pos_);
}

Tensor PerceiverPolicy::attend(const Attn& p, const Tensor& q_in, const Tensor& kv_in) const {
  Tensor qn = add(mul(norm_lastdim(q_in, 1e-5), p.lnq_g), p.lnq_b);
  Tensor kn = add(mul(norm_lastdim(kv_in, 1e-5), p.lnk_g), p.lnk_b);
  Tensor q = p.wq.forward(qn);
  Tensor k = p.wk.forward(kn);
  Tensor v = p.wv.forward(kn);
  size_t dh = cfg_.d_tok / cfg_.heads;
  std::vector<Tensor> outs;
  outs.reserve(cfg_.heads);
  for (size_t h = 0; h < cfg_.heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, dh);
    Tensor kh = slice(k, 1, h * dh, dh);
    Tensor vh = slice(v, 1, h * dh, dh);
    Tensor a = attention_probs(qh, kh);  // [Nq,Nk], rows sum to 1
    outs.push_back(matmul(a, vh));
  }
  return add(q_in, p.wo.forward(concat(outs, 1)));
}

Tensor PerceiverPolicy::ffn(const Ffn& p, const Tensor& x) const {
  Tensor xn = add(mul(norm_lastdim(x, 1e-5), p.ln_g), p.ln_b);
  return add(x, p.w2.forward(relu(p.w1.forward(xn))));
}

Tensor PerceiverPolicy::perceive(const Tensor& seq) const {
  if (seq.rank() != 2 || seq.shape()[0] != cfg_.seq_len() || seq.shape()[1] != cfg_.d_tok)
    throw std::invalid_argument("perceive: sequence must be [" + std::to_string(cfg_.seq_len()) +
                                "," + std::to_string(cfg_.d_tok) + "]");
  Tensor h = attend(enc_cross_, lat_, seq);
  h = ffn(enc_ffn_, h);
  for (size_t b = 0; b < cfg_.blocks; ++b) {
    h = attend(self_[b], h, h);
    h = ffn(self_ffn_[b], h);
  }
  Tensor vol_q = slice(seq, 0, 0, cfg_.n_vol_tokens());
  Tensor o = attend(dec_cross_, vol_q, h);
  return ffn(dec_ffn_, o);
}

Tensor PerceiverPolicy::restore_volume(const Tensor& tokens) const {
  size_t nt = cfg_.n_vol_tokens();
  if (tokens.rank() != 2 || tokens.shape()[0] != nt || tokens.shape()[1] != cfg_.d_tok)
    throw std::invalid_argument("restore_volume: expected " + std::to_string(nt) +
                                " tokens of width " + std::to_string(cfg_.d_tok) + ", got [" +
                                (tokens.rank() ? std::to_string(tokens.shape()[0]) : "?") + "," +
                                (tokens.rank() == 2 ? std::to_string(tokens.shape()[1]) : "?") +
                                "]");
  size_t nc = cfg_.n_cond();
  Tensor proj = restore_.forward(tokens);                 // [nt, cv]
  Tensor grid = reshape(proj, {nc, nc, nc, cfg_.cv});
  return upsample_trilinear3d(grid, cfg_.grid, cfg_.grid, cfg_.grid);
}

PolicyOutput PerceiverPolicy::forward(const Tensor& v, const Tensor& proprio,
                                      const Tensor& lang) const {
  size_t n = cfg_.grid;
  if (v.rank() != 4 || v.shape()[0] != n || v.shape()[1] != n || v.shape()[2] != n ||
      v.shape()[3] != cfg_.cv)
    throw std::invalid_argument("policy forward: volume must be [" + std::to_string(n) + "," +
                                std::to_string(n) + "," + std::to_string(n) + "," +
                                std::to_string(cfg_.cv) + "]");
  size_t nc = cfg_.n_cond();
  Tensor cond = condense(v);
  Tensor vol_tokens = reshape(cond, {nc * nc * nc, cfg_.cv});
  Tensor seq = build_sequence(vol_tokens, proprio, lang);
  Tensor out_tokens = perceive(seq);
  Tensor v_pt = restore_volume(out_tokens);

  Tensor fused = concat({v, v_pt}, 3);  // [n,n,n,2cv]

  Tensor q = trans1_.forward(trans0_.forward(fused));   // [n,n,n,1]
  Tensor q_trans = reshape(q, {n * n * n});

  size_t cf = 2 * cfg_.cv;
  Tensor cells = reshape(fused, {n * n * n, cf});
  Tensor mx = max_axis(cells, 0);                       // [cf]
  Tensor sm = softmax(cells, 0);                        // per-channel over cells
  Tensor exp_xyz = matmul(transpose2d(sm), coords_);    // [cf,3]
  Tensor agg_in = concat({mx, reshape(exp_xyz, {3 * cf})}, 0);
  Tensor hid = relu(agg0_.forward(reshape(agg_in, {1, 4 * cf})));
  Tensor agg = reshape(agg1_.forward(hid), {cfg_.agg_out()});

  PolicyOutput out;
  out.q_trans = q_trans;
  out.agg = agg;
  out.v_pt = v_pt;
  return out;
}

// ---------------------------------------------------------------------------
// Loss / decode

static Tensor ce_1d(const Tensor& logits, size_t index, const std::string& what) {
  if (logits.rank() != 1)
    throw std::invalid_argument("action_loss: " + what + " logits must be rank 1");
  if (index >= logits.shape()[0])
    throw std::invalid_argument("action_loss: " + what + " target " + std::to_string(index) +
                                " out of range " + std::to_string(logits.shape()[0]));
  Tensor l2 = reshape(logits, {1, logits.shape()[0]});
  Tensor lp = take_per_row(log_softmax(l2, 1), {index});
  return neg(sum_all(lp));
}

ActionLossParts action_loss(const PolicyOutput& out, const DiscretizedAction& target,
                            size_t grid, size_t rot_bins) {
  if (out.q_trans.rank() != 1 || out.q_trans.shape()[0] != grid * grid * grid)
    throw std::invalid_argument("action_loss: q_trans must have grid^3 entries");
  size_t agg_n = 3 * rot_bins + 4;
  if (out.agg.rank() != 1 || out.agg.shape()[0] != agg_n)
    throw std::invalid_argument("action_loss: agg must have " + std::to_string(agg_n) +
                                " entries");
  for (int a = 0; a < 3; ++a) {
    if (target.cell[a] < 0 || (size_t)target.cell[a] >= grid)
      throw std::invalid_argument("action_loss: translation cell out of range");
    if (target.rot[a] < 0 || (size_t)target.rot[a] >= rot_bins)
      throw std::invalid_argument("action_loss: rotation bin out of range");
  }
  if (target.open < 0 || target.open > 1 || target.collide < 0 || target.collide > 1)
    throw std::invalid_argument("action_loss: open/collide must be 0 or 1");

  size_t flat = ((size_t)target.cell[0] * grid + (size_t)target.cell[1]) * grid +
                (size_t)target.cell[2];
  ActionLossParts p;
  p.trans = ce_1d(out.q_trans, flat, "translation");
  p.rot_x = ce_1d(slice(out.agg, 0, 0, rot_bins), (size_t)target.rot[0], "rot_x");
  p.rot_y = ce_1d(slice(out.agg, 0, rot_bins, rot_bins), (size_t)target.rot[1], "rot_y");
  p.rot_z = ce_1d(slice(out.agg, 0, 2 * rot_bins, rot_bins), (size_t)target.rot[2], "rot_z");
  p.open = ce_1d(slice(out.agg, 0, 3 * rot_bins, 2), (size_t)target.open, "open");
  p.collide = ce_1d(slice(out.agg, 0, 3 * rot_bins + 2, 2), (size_t)target.collide, "collide");
  p.total = add(add(add(p.trans, p.rot_x), add(p.rot_y, p.rot_z)), add(p.open, p.collide));
  return p;
}

static size_t argmax_first(const Tensor& t, size_t start, size_t len) {
  size_t best = 0;
  double bv = t.at(start);
  for (size_t i = 1; i < len; ++i) {
    double v = t.at(start + i);
    if (v > bv) {
      bv = v;
      best = i;
    }
  }
  return best;
}

DiscretizedAction decode_action(const PolicyOutput& out, size_t grid, size_t rot_bins) {
  if (out.q_trans.rank() != 1 || out.q_trans.shape()[0] != grid * grid * grid)
    throw std::invalid_argument("decode_action: q_trans must have grid^3 entries");
  if (out.agg.rank() != 1 || out.agg.shape()[0] != 3 * rot_bins + 4)
    throw std::invalid_argument("decode_action: agg has wrong length");
  DiscretizedAction a;
  size_t flat = argmax_first(out.q_trans, 0, grid * grid * grid);
  a.cell[2] = (int)(flat % grid);
  a.cell[1] = (int)((flat / grid) % grid);
  a.cell[0] = (int)(flat / (grid * grid));
  for (int ax = 0; ax < 3; ++ax)
    a.rot[ax] = (int)argmax_first(out.agg, (size_t)ax * rot_bins, rot_bins);
  a.open = (int)argmax_first(out.agg, 3 * rot_bins, 2);
  a.collide = (int)argmax_first(out.agg, 3 * rot_bins + 2, 2);
  return a;
}

}  // namespace ff
