#pragma once

#include <optional>

#include "kmamba/bkm.hpp"
#include "kmamba/config.hpp"
#include "kmamba/hsa.hpp"
#include "kmamba/mda.hpp"

namespace kmamba {

// Network-level configuration. Stage 1 runs at input resolution; stages 2-5
// halve it, so inputs must be divisible by 16.
struct ModelConfig {
  int64_t in_channels = 4;
  int64_t num_classes = 4;
  std::array<int64_t, 5> stage_channels{8, 16, 32, 64, 128};
  std::vector<int> bkm_stages{4, 5};  // 1-indexed stages running BKM blocks
  int64_t kan_hidden = 64;
  int64_t d_state = 16;
  int64_t hsa_expand = 2;
  int64_t patch_size = 64;
  bool use_hsa = true;
  bool use_bkm = true;
  bool use_mda = true;
  uint64_t seed = 1;

  void validate() const {
    check_value(in_channels >= 1 && num_classes >= 2, "model: need >=1 input channel, >=2 classes");
    for (int k = 0; k < 4; ++k)
      check_value(stage_channels[size_t(k)] < stage_channels[size_t(k + 1)],
                  "model: stage_channels must be strictly increasing");
    check_value(patch_size % 16 == 0, "model: patch_size must be divisible by 16");
    for (int s : bkm_stages)
      check_value(s >= 1 && s <= 5, "model: bkm_stages entries must lie in 1..5");
  }

  bool stage_uses_bkm(int stage1idx) const {
    for (int s : bkm_stages)
      if (s == stage1idx) return true;
    return false;
  }

  static ModelConfig from_config(const Config& c) {
    ModelConfig m;
    m.in_channels = c.get_int("model.in_channels", m.in_channels);
    m.num_classes = c.get_int("model.num_classes", m.num_classes);
    const auto sc = c.get_int_list("model.stage_channels",
                                   {m.stage_channels[0], m.stage_channels[1], m.stage_channels[2],
                                    m.stage_channels[3], m.stage_channels[4]});
    check_value(sc.size() == 5, "model.stage_channels must have 5 entries");
    for (int k = 0; k < 5; ++k) m.stage_channels[size_t(k)] = sc[size_t(k)];
    const auto bs = c.get_int_list("model.bkm_stages", {4, 5});
    m.bkm_stages.assign(bs.begin(), bs.end());
    m.kan_hidden = c.get_int("model.kan_hidden", m.kan_hidden);
    m.d_state = c.get_int("model.d_state", m.d_state);
    m.hsa_expand = c.get_int("model.hsa_expand", m.hsa_expand);
    m.patch_size = c.get_int("model.patch_size", m.patch_size);
    m.use_hsa = c.get_bool("model.use_hsa", m.use_hsa);
    m.use_bkm = c.get_bool("model.use_bkm", m.use_bkm);
    m.use_mda = c.get_bool("model.use_mda", m.use_mda);
    m.seed = static_cast<uint64_t>(c.get_int("model.seed", int64_t(m.seed)));
    m.validate();
    return m;
  }

  void to_config(Config& c) const {
    c.set("model.in_channels", std::to_string(in_channels));
    c.set("model.num_classes", std::to_string(num_classes));
    std::string sc;
    for (int k = 0; k < 5; ++k) sc += (k ? "," : "") + std::to_string(stage_channels[size_t(k)]);
    c.set("model.stage_channels", sc);
    std::string bs;
    for (size_t i = 0; i < bkm_stages.size(); ++i)
      bs += (i ? "," : "") + std::to_string(bkm_stages[i]);
    c.set("model.bkm_stages", bs.empty() ? "4,5" : bs);
    c.set("model.kan_hidden", std::to_string(kan_hidden));
    c.set("model.d_state", std::to_string(d_state));
    c.set("model.hsa_expand", std::to_string(hsa_expand));
    c.set("model.patch_size", std::to_string(patch_size));
    c.set("model.use_hsa", use_hsa ? "true" : "false");
    c.set("model.use_bkm", use_bkm ? "true" : "false");
    c.set("model.use_mda", use_mda ? "true" : "false");
    c.set("model.seed", std::to_string(seed));
  }
};

// One encoder stage body: HSA, BKM, or a plain conv block (ablation
// fallback and non-BKM deep stages when HSA is off).
template <class T>
struct StageBlock {
  enum class Kind { hsa, bkm, plain } kind = Kind::plain;
  std::optional<HsaBlock<T>> hsa;
  std::optional<BkmBlock<T>> bkm;
  Conv3dLayer<T> plain_conv;
  ChannelNormLayer<T> plain_norm;

  static StageBlock make(Kind kind, int64_t c, const ModelConfig& cfg, Rng& rng) {
    StageBlock b;
    b.kind = kind;
    switch (kind) {
      case Kind::hsa:
        b.hsa = HsaBlock<T>::create(c, rng, cfg.hsa_expand);
        break;
      case Kind::bkm:
        b.bkm = BkmBlock<T>::create(c, cfg.d_state, cfg.kan_hidden, rng);
        break;
      case Kind::plain:
        b.plain_conv = Conv3dLayer<T>::create(c, c, ConvSpec::same(3), rng);
        b.plain_norm = ChannelNormLayer<T>::create(c);
        break;
    }
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    switch (kind) {
      case Kind::hsa:
        return hsa_forward(x, *hsa, training);
      case Kind::bkm:
        return bkm_forward(x, *bkm);
      case Kind::plain:
      default:
        (void)training;
        return relu(plain_norm(plain_conv(x)));
    }
  }

  int64_t param_count() const {
    switch (kind) {
      case Kind::hsa:
        return hsa->param_count();
      case Kind::bkm:
        return bkm->param_count();
      case Kind::plain:
      default:
        return plain_conv.param_count() + plain_norm.param_count();
    }
  }

  void params(const std::string& prefix, ParamList<T>& out) const {
    switch (kind) {
      case Kind::hsa:
        hsa->params(prefix, out);
        break;
      case Kind::bkm:
        bkm->params(prefix, out);
        break;
      case Kind::plain:
        plain_conv.params(prefix + ".conv", out);
        plain_norm.params(prefix + ".norm", out);
        break;
    }
  }
};

template <class T>
struct ForwardResult {
  Tensor<T> main_logits;                 // [num_classes, S, S, S]
  std::array<Tensor<T>, 4> aux_logits;   // student-path logits per scale (MDA on)
  ScaleFeatureSet<T> scales;
};

// Five-level encoder (HSA on shallow stages, BKM at low resolution), MDA
// bridge, transposed-conv decoder with skip concatenation.
template <class T>
struct Model {
  ModelConfig cfg;

  Conv3dLayer<T> stem;
  ChannelNormLayer<T> stem_norm;
  std::array<Conv3dLayer<T>, 4> down;      // stride-2 between stages
  std::array<ChannelNormLayer<T>, 4> down_norm;
  std::array<StageBlock<T>, 5> stages;
  std::optional<MdaModule<T>> mda;

  std::array<ConvTranspose3dLayer<T>, 4> up;  // level i: c_{i+1} -> c_i
  std::array<Conv3dLayer<T>, 4> dec_conv1;    // 2*c_i -> c_i
  std::array<ChannelNormLayer<T>, 4> dec_norm1;
  std::array<Conv3dLayer<T>, 4> dec_conv2;    // c_i -> c_i
  std::array<ChannelNormLayer<T>, 4> dec_norm2;
  Conv3dLayer<T> head;  // c_1 -> num_classes, pointwise

  static Model create(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const auto& sc = cfg.stage_channels;

    m.stem = Conv3dLayer<T>::create(cfg.in_channels, sc[0], ConvSpec::same(3), rng);
    m.stem_norm = ChannelNormLayer<T>::create(sc[0]);
    for (int k = 0; k < 4; ++k) {
      m.down[size_t(k)] = Conv3dLayer<T>::create(sc[size_t(k)], sc[size_t(k + 1)],
                                                 ConvSpec::strided(3, 2, 1), rng);
      m.down_norm[size_t(k)] = ChannelNormLayer<T>::create(sc[size_t(k + 1)]);
    }
    for (int k = 0; k < 5; ++k) {
      using Kind = typename StageBlock<T>::Kind;
      Kind kind = Kind::plain;
      if (cfg.stage_uses_bkm(k + 1)) {
        if (cfg.use_bkm) kind = Kind::bkm;
      } else if (cfg.use_hsa) {
        kind = Kind::hsa;
      }
      m.stages[size_t(k)] = StageBlock<T>::make(kind, sc[size_t(k)], cfg, rng);
    }
    if (cfg.use_mda) m.mda = MdaModule<T>::create(sc, cfg.num_classes, rng);

    for (int i = 0; i < 4; ++i) {
      m.up[size_t(i)] = ConvTranspose3dLayer<T>::create(sc[size_t(i + 1)], sc[size_t(i)], 2, rng);
      m.dec_conv1[size_t(i)] =
          Conv3dLayer<T>::create(2 * sc[size_t(i)], sc[size_t(i)], ConvSpec::same(3), rng);
      m.dec_norm1[size_t(i)] = ChannelNormLayer<T>::create(sc[size_t(i)]);
      m.dec_conv2[size_t(i)] =
          Conv3dLayer<T>::create(sc[size_t(i)], sc[size_t(i)], ConvSpec::same(3), rng);
      m.dec_norm2[size_t(i)] = ChannelNormLayer<T>::create(sc[size_t(i)]);
    }
    m.head = Conv3dLayer<T>::create(sc[0], cfg.num_classes, ConvSpec::pointwise(), rng);
    return m;
  }

  ForwardResult<T> forward(const Tensor<T>& x, bool training) {
    check_shape(x.rank() == 4 && x.dim(0) == cfg.in_channels,
                "model: input must be [" + std::to_string(cfg.in_channels) + ",S,S,S]");
    for (int a = 1; a <= 3; ++a)
      check_spec(x.dim(a) % 16 == 0, "model: spatial size " + std::to_string(x.dim(a)) +
                                         " must be divisible by 16");

    std::array<Tensor<T>, 5> feats;
    Tensor<T> cur = relu(stem_norm(stem(x)));
    feats[0] = stages[0](cur, training);
    for (int k = 1; k < 5; ++k) {
      cur = relu(down_norm[size_t(k - 1)](down[size_t(k - 1)](feats[size_t(k - 1)])));
      feats[size_t(k)] = stages[size_t(k)](cur, training);
    }

    ForwardResult<T> res;
    res.scales = make_scale_set<T>(feats);
    if (mda) {
      res.scales.teacher_heads = mda->teacher_heads;
      res.scales.student_heads = mda->student_heads;
      Tensor<T> nu = fuse_pyramid(res.scales, *mda);
      redistribute(nu, res.scales, *mda);
      for (int i = 0; i < 4; ++i)
        res.aux_logits[size_t(i)] = mda->student_heads[size_t(i)](res.scales.refined[size_t(i)]);
    } else {
      for (int i = 0; i < 4; ++i) res.scales.set_refined(i, res.scales.features[size_t(i)]);
      res.scales.has_refined = true;
    }

    Tensor<T> dec = res.scales.features[4];
    for (int i = 3; i >= 0; --i) {
      const Tensor<T>& skip = res.scales.refined[size_t(i)];
      Tensor<T> upp = up[size_t(i)](dec);
      Tensor<T> cat = concat_channels<T>({upp, skip});
      Tensor<T> h1 = relu(dec_norm1[size_t(i)](dec_conv1[size_t(i)](cat)));
      dec = relu(dec_norm2[size_t(i)](dec_conv2[size_t(i)](h1)));
    }
    res.main_logits = head(dec);
    return res;
  }

  ParamList<T> named_params() const {
    ParamList<T> out;
    stem.params("stem", out);
    stem_norm.params("stem_norm", out);
    for (int k = 0; k < 4; ++k) {
      down[size_t(k)].params("down" + std::to_string(k + 2), out);
      down_norm[size_t(k)].params("down" + std::to_string(k + 2) + "_norm", out);
    }
    for (int k = 0; k < 5; ++k) stages[size_t(k)].params("stage" + std::to_string(k + 1), out);
    if (mda) mda->params("mda", out);
    for (int i = 0; i < 4; ++i) {
      up[size_t(i)].params("up" + std::to_string(i + 1), out);
      dec_conv1[size_t(i)].params("dec" + std::to_string(i + 1) + "a", out);
      dec_norm1[size_t(i)].params("dec" + std::to_string(i + 1) + "a_norm", out);
      dec_conv2[size_t(i)].params("dec" + std::to_string(i + 1) + "b", out);
      dec_norm2[size_t(i)].params("dec" + std::to_string(i + 1) + "b_norm", out);
    }
    head.params("head", out);
    return out;
  }

  // Exact count of learnable scalars (running statistics excluded).
  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : named_params())
      if (e.trainable) n += e.tensor.numel();
    return n;
  }
};

}  // namespace kmamba
