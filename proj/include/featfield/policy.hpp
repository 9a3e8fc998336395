#pragma once

#include <string>
#include <vector>

#include "featfield/nn.hpp"

namespace ff {

// Discretized gripper action: voxel cell of the next keyframe position,
// per-axis rotation bins, binary open state, binary collision-avoidance flag.
struct DiscretizedAction {
  int cell[3] = {0, 0, 0};
  int rot[3] = {0, 0, 0};
  int open = 1;
  int collide = 1;
};

// Rotation discretization: 5-degree bins, 72 per axis, centers at bin*5+2.5.
int rot_bin_of(double degrees, int bins = 72);
double rot_bin_center(int bin, int bins = 72);

// Deterministic pseudo-embedding of a task string: a stable 64-bit hash of the
// text seeds the generator, entries are unit-variance normals. Empty text is
// an error. Output: [t_lang, d_lang].
Tensor embed_language(const std::string& text, size_t t_lang, size_t d_lang,
                      Dtype dt = Dtype::F32);

// Row-stochastic attention matrix softmax(q k^T / sqrt(d), rows) for q [Nq,d],
// k [Nk,d]. Exposed for testing; the transformer uses it per head.
Tensor attention_probs(const Tensor& q, const Tensor& k);

struct PolicyConfig {
  size_t grid = 100;           // voxel resolution of the incoming volume
  size_t cv = 128;             // volume feature channels
  size_t condense_stride = 5;  // patchify factor; grid must be divisible
  size_t d_tok = 256;          // token width (condensed feature + proprio slot)
  size_t d_lang = 512;
  size_t t_lang = 77;
  size_t latents = 256;
  size_t blocks = 6;  // latent self-attention blocks
  size_t heads = 8;
  size_t ffn_mult = 2;
  size_t rot_bins = 72;
  size_t trans_hidden = 16;  // channels of the translation head's mid conv
  size_t trans_kernel = 1;
  size_t agg_hidden = 64;
  Dtype dtype = Dtype::F32;

  size_t n_cond() const { return grid / condense_stride; }
  size_t n_vol_tokens() const { return n_cond() * n_cond() * n_cond(); }
  size_t seq_len() const { return n_vol_tokens() + t_lang; }
  size_t agg_out() const { return 3 * rot_bins + 2 + 2; }
};

struct PolicyOutput {
  Tensor q_trans;  // [grid^3] translation logits, row-major cells
  Tensor agg;      // [3*rot_bins+4] rotation/open/collide logits
  Tensor v_pt;     // [grid,grid,grid,cv] transformer-refined volume
};

// Perceiver-style policy over the encoded volume: condense to tokens, attend
// with proprioception and language, restore a refined volume, and read out
// discretized action value maps from the fusion of both volumes.
class PerceiverPolicy {
 public:
  PerceiverPolicy() = default;
  PerceiverPolicy(ParamStore& store, const std::string& prefix, const PolicyConfig& cfg,
                  Rng& rng);

  // [n,n,n,cv] -> [nc,nc,nc,cv] by a k=stride, s=stride conv. Throws when the
  // grid is not divisible by the stride, naming the padded size that would fix
  // it.
  Tensor condense(const Tensor& v) const;

  // Volume tokens [nc^3,cv] + proprio [4] + language [t_lang,d_lang] ->
  // sequence [nc^3+t_lang, d_tok] with the learned positional encoding added.
  // The proprio projection is concatenated onto every volume token.
  Tensor build_sequence(const Tensor& vol_tokens, const Tensor& proprio,
                        const Tensor& lang) const;

  // Latent bottleneck: cross-attend latents <- sequence, self-attention
  // blocks, then decode the volume token positions. [S,d_tok] -> [nc^3,d_tok].
  Tensor perceive(const Tensor& seq) const;

  // [nc^3,d_tok] -> project to cv -> trilinear upsample -> [n,n,n,cv].
  // Throws when the token count does not match nc^3.
  Tensor restore_volume(const Tensor& tokens) const;

  PolicyOutput forward(const Tensor& v, const Tensor& proprio, const Tensor& lang) const;

  const PolicyConfig& config() const { return cfg_; }

 private:
  struct Attn {
    Tensor lnq_g, lnq_b, lnk_g, lnk_b;
    Linear wq, wk, wv, wo;
  };
  struct Ffn {
    Tensor ln_g, ln_b;
    Linear w1, w2;
  };
  Attn make_attn(ParamStore& s, const std::string& name, Rng& rng) const;
  Ffn make_ffn(ParamStore& s, const std::string& name, Rng& rng) const;
  Tensor attend(const Attn& p, const Tensor& q_in, const Tensor& kv_in) const;
  Tensor ffn(const Ffn& p, const Tensor& x) const;

  PolicyConfig cfg_;
  Tensor cond_w_, cond_b_;
  Linear proprio_, lang_;
  Tensor pos_, lat_;
  Attn enc_cross_, dec_cross_;
  Ffn enc_ffn_, dec_ffn_;
  std::vector<Attn> self_;
  std::vector<Ffn> self_ffn_;
  Linear restore_;
  Conv3dBlock trans0_, trans1_;
  Linear agg0_, agg1_;
  Tensor coords_;  // [grid^3,3] normalized cell centers (constant)
};

// Sum of six cross-entropies: translation cell over grid^3, three rotation
// axes, open, collide.
struct ActionLossParts {
  Tensor total, trans, rot_x, rot_y, rot_z, open, collide;
};
ActionLossParts action_loss(const PolicyOutput& out, const DiscretizedAction& target,
                            size_t grid, size_t rot_bins = 72);

// Greedy decode; ties resolve to the smallest row-major index.
DiscretizedAction decode_action(const PolicyOutput& out, size_t grid, size_t rot_bins = 72);

}  // namespace ff
