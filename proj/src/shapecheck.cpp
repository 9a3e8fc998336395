#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "featfield/ops.hpp"
#include "featfield/trainer.hpp"
#include "featfield/voxelize.hpp"

namespace ff {

using namespace ff::ops;

namespace {

std::string shape_str(const std::vector<size_t>& s) {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << "]";
  return ss.str();
}

}  // namespace

bool run_shapecheck(const TrainConfig& cfg, size_t enc_params_lo, size_t enc_params_hi,
                    std::vector<std::string>* lines) {
  bool all_ok = true;
  auto note = [&](const std::string& name, bool ok, const std::string& detail) {
    all_ok = all_ok && ok;
    if (lines) lines->push_back(name + ": " + detail + (ok ? " OK" : " FAIL"));
  };
  auto shape_is = [&](const std::string& name, const Tensor& t, std::vector<size_t> want) {
    note(name, t.shape() == want, shape_str(t.shape()) + " want " + shape_str(want));
  };

  Models m;
  build_models(m, cfg);
  const size_t n = cfg.grid, cv = cfg.cv;
  const size_t nc = n / cfg.condense_stride;
  const size_t d_tok = m.policy.config().d_tok;

  const size_t ep = m.store.scalar_count("enc/");
  note("encoder_params",
       ep >= enc_params_lo && ep <= enc_params_hi,
       std::to_string(ep) + " want [" + std::to_string(enc_params_lo) + "," +
           std::to_string(enc_params_hi) + "]");

  const size_t in_w = m.gnf.config().input_dim();
  const size_t out_w = m.gnf.config().output_dim();
  note("gnf_input_width", in_w == 6 * cfg.pe_bands + 3 + 3 + cv, std::to_string(in_w));
  note("gnf_output_width", out_w == 3 + 1 + cfg.df, std::to_string(out_w));

  NoGrad ng;
  Rng rng(cfg.seed ^ 0xabcdefULL);

  {
    Tensor gin = Tensor::zeros({2, in_w}, cfg.dtype());
    for (size_t i = 0; i < gin.numel(); ++i) gin.set(i, rng.uniform(-0.5, 0.5));
    shape_is("gnf_forward", m.gnf.forward_packed(gin), {2, out_w});
  }

  Tensor proprio = Tensor::zeros({4}, cfg.dtype());
  for (size_t i = 0; i < 4; ++i) proprio.set(i, rng.uniform(0.0, 1.0));
  Tensor lang = embed_language("stack the wine bottle to the cabinet", cfg.t_lang, cfg.d_lang,
                               cfg.dtype());
  shape_is("language_tokens", lang, {cfg.t_lang, cfg.d_lang});

  Tensor seq;
  {
    Tensor obs = Tensor::zeros({n, n, n, kVoxelChannels}, cfg.dtype());
    for (size_t i = 0; i < obs.numel(); ++i) obs.set(i, rng.uniform(0.0, 1.0));
    shape_is("observation", obs, {n, n, n, kVoxelChannels});

    Tensor v = m.encoder.forward(obs);
    shape_is("volume", v, {n, n, n, cv});

    Tensor cond = m.policy.condense(v);
    shape_is("condensed", cond, {nc, nc, nc, cv});

    Tensor vol_tokens = reshape(cond, {nc * nc * nc, cv});
    seq = m.policy.build_sequence(vol_tokens, proprio, lang);
    Tensor vt = slice(seq, 0, 0, nc * nc * nc);
    shape_is("volume_tokens", vt, {nc * nc * nc, d_tok});
    shape_is("sequence", seq, {nc * nc * nc + cfg.t_lang, d_tok});
  }

  Tensor dec = m.policy.perceive(seq);
  shape_is("decoded_tokens", dec, {nc * nc * nc, d_tok});
  shape_is("decoded_grid", reshape(dec, {nc, nc, nc, d_tok}), {nc, nc, nc, d_tok});

  Tensor v_pt = m.policy.restore_volume(dec);
  shape_is("upsampled_volume", v_pt, {n, n, n, cv});

  return all_ok;
}

}  // namespace ff
