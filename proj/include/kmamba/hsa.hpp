#pragma once

#include "kmamba/layers.hpp"

namespace kmamba {

// 1-D convolution over the channel axis of a [C] descriptor (kernel k, zero
// padding, no bias) - the channel-attention mixing step.
template <class T>
Tensor<T> conv1d_channels(const Tensor<T>& x, const Tensor<T>& w) {
  check_shape(x.rank() == 1, "conv1d_channels: input must be [C]");
  check_shape(w.rank() == 1 && w.numel() % 2 == 1, "conv1d_channels: kernel must be odd-length");
  const int64_t c = x.numel(), k = w.numel(), half = k / 2;
  std::vector<T> out(static_cast<size_t>(c), T(0));
  const auto xd = x.data(), wd = w.data();
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < k; ++j) {
      const int64_t src = i + j - half;
      if (src >= 0 && src < c) out[size_t(i)] += wd[size_t(j)] * xd[size_t(src)];
    }
  return detail::make_node<T>({c}, std::move(out), {x, w}, [x, w, c, k, half](TensorNode<T>& n) {
    const auto xd2 = x.data(), wd2 = w.data();
    for (int64_t i = 0; i < c; ++i) {
      const T g = n.grad[size_t(i)];
      for (int64_t j = 0; j < k; ++j) {
        const int64_t src = i + j - half;
        if (src < 0 || src >= c) continue;
        if (x.requires_grad()) x.node()->ensure_grad()[size_t(src)] += g * wd2[size_t(j)];
        if (w.requires_grad()) w.node()->ensure_grad()[size_t(j)] += g * xd2[size_t(src)];
      }
    }
  });
}

// Hierarchical semantic alignment block: a channel-separated convolution
// branch, a channel-attention branch, and a selective-receptive-field
// refinement with residual. Output shape equals input shape.
template <class T>
struct HsaBlock {
  int64_t in_channels = 0;
  int64_t csc_out_channels = 0;
  int64_t part = 0;  // channels per split part; projection width is 4*part

  Conv3dLayer<T> pw;           // compression, C -> C
  BatchNorm3dLayer<T> bn;
  Conv3dLayer<T> proj;         // expansion P, C -> 4*part
  Conv3dLayer<T> dw_inc;       // depthwise 3x3x3 over the 3*part increase channels
  Conv3dLayer<T> pw_inc;       // pointwise mix after the depthwise
  Conv3dLayer<T> m1, m2;       // fusion maps, part -> part
  Conv3dLayer<T> m_out;        // part -> csc_out_channels
  Tensor<T> c1d_weight;        // [3] channel attention kernel
  Conv3dLayer<T> srf_dw5;      // depthwise 5x5x5, bias-less
  Conv3dLayer<T> srf_dw7;      // depthwise 7x7x7, bias-less
  Conv3dLayer<T> srf_merge;    // pointwise merge, C -> C

  static int64_t projected_width(int64_t c, int64_t expand) {
    const int64_t want = c * expand;
    return (want + 3) / 4 * 4;  // pad up to the 1+3 part structure
  }

  static HsaBlock create(int64_t c, Rng& rng, int64_t expand = 2, int64_t c_out = -1) {
    if (c_out < 0) c_out = c;
    HsaBlock h;
    h.in_channels = c;
    h.csc_out_channels = c_out;
    const int64_t wproj = projected_width(c, expand);
    h.part = wproj / 4;
    h.pw = Conv3dLayer<T>::create(c, c, ConvSpec::pointwise(), rng);
    h.bn = BatchNorm3dLayer<T>::create(c);
    h.proj = Conv3dLayer<T>::create(c, wproj, ConvSpec::pointwise(), rng);
    h.dw_inc = Conv3dLayer<T>::create(3 * h.part, 3 * h.part, ConvSpec::same(3).with_groups(3 * h.part),
                                      rng, /*with_bias=*/false);
    h.pw_inc = Conv3dLayer<T>::create(3 * h.part, 3 * h.part, ConvSpec::pointwise(), rng);
    h.m1 = Conv3dLayer<T>::create(h.part, h.part, ConvSpec::pointwise(), rng);
    h.m2 = Conv3dLayer<T>::create(h.part, h.part, ConvSpec::pointwise(), rng);
    h.m_out = Conv3dLayer<T>::create(h.part, c_out, ConvSpec::pointwise(), rng);
    h.c1d_weight = Tensor<T>::randn({3}, rng, T(0.5));
    h.c1d_weight.set_requires_grad();
    h.srf_dw5 = Conv3dLayer<T>::create(c, c, ConvSpec::same(5).with_groups(c), rng, false);
    h.srf_dw7 = Conv3dLayer<T>::create(c, c, ConvSpec::same(7).with_groups(c), rng, false);
    h.srf_merge = Conv3dLayer<T>::create(c, c, ConvSpec::pointwise(), rng);
    return h;
  }

  static HsaBlock zero_init(int64_t c, int64_t expand = 2, int64_t c_out = -1) {
    if (c_out < 0) c_out = c;
    HsaBlock h;
    h.in_channels = c;
    h.csc_out_channels = c_out;
    const int64_t wproj = projected_width(c, expand);
    h.part = wproj / 4;
    h.pw = Conv3dLayer<T>::zero_init(c, c, ConvSpec::pointwise());
    h.bn = BatchNorm3dLayer<T>::create(c);
    h.bn.gamma = Tensor<T>::zeros({c});
    h.bn.gamma.set_requires_grad();
    h.proj = Conv3dLayer<T>::zero_init(c, wproj, ConvSpec::pointwise());
    h.dw_inc = Conv3dLayer<T>::zero_init(3 * h.part, 3 * h.part, ConvSpec::same(3).with_groups(3 * h.part), false);
    h.pw_inc = Conv3dLayer<T>::zero_init(3 * h.part, 3 * h.part, ConvSpec::pointwise());
    h.m1 = Conv3dLayer<T>::zero_init(h.part, h.part, ConvSpec::pointwise());
    h.m2 = Conv3dLayer<T>::zero_init(h.part, h.part, ConvSpec::pointwise());
    h.m_out = Conv3dLayer<T>::zero_init(h.part, c_out, ConvSpec::pointwise());
    h.c1d_weight = Tensor<T>::zeros({3});
    h.c1d_weight.set_requires_grad();
    h.srf_dw5 = Conv3dLayer<T>::zero_init(c, c, ConvSpec::same(5).with_groups(c), false);
    h.srf_dw7 = Conv3dLayer<T>::zero_init(c, c, ConvSpec::same(7).with_groups(c), false);
    h.srf_merge = Conv3dLayer<T>::zero_init(c, c, ConvSpec::pointwise());
    return h;
  }

  int64_t param_count() const {
    return pw.param_count() + bn.param_count() + proj.param_count() + dw_inc.param_count() +
           pw_inc.param_count() + m1.param_count() + m2.param_count() + m_out.param_count() +
           c1d_weight.numel() + srf_dw5.param_count() + srf_dw7.param_count() +
           srf_merge.param_count();
  }

  void params(const std::string& prefix, ParamList<T>& out) const {
    pw.params(prefix + ".pw", out);
    bn.params(prefix + ".bn", out);
    proj.params(prefix + ".proj", out);
    dw_inc.params(prefix + ".dw_inc", out);
    pw_inc.params(prefix + ".pw_inc", out);
    m1.params(prefix + ".m1", out);
    m2.params(prefix + ".m2", out);
    m_out.params(prefix + ".m_out", out);
    add_param(out, prefix + ".c1d", c1d_weight);
    srf_dw5.params(prefix + ".srf_dw5", out);
    srf_dw7.params(prefix + ".srf_dw7", out);
    srf_merge.params(prefix + ".srf_merge", out);
  }
};

// Channel-separated convolution branch: compress, expand, split into a base
// part plus three refined parts, then fold them together pairwise.
template <class T>
Tensor<T> csc_branch(const Tensor<T>& f_in, HsaBlock<T>& block, bool training = true) {
  check_shape(f_in.rank() == 4 && f_in.dim(0) == block.in_channels,
              "csc_branch: input channels must match block configuration");
  Tensor<T> zeta = relu(block.bn(block.pw(f_in), training));
  Tensor<T> pj = block.proj(zeta);
  const int64_t w = block.part;
  Tensor<T> base = slice_channels(pj, 0, w);
  Tensor<T> inc = slice_channels(pj, w, 3 * w);
  Tensor<T> refined = block.pw_inc(block.dw_inc(inc));
  Tensor<T> e0 = slice_channels(refined, 0, w);
  Tensor<T> e1 = slice_channels(refined, w, w);
  Tensor<T> e2 = slice_channels(refined, 2 * w, w);
  return block.m_out(add(block.m2(add(block.m1(add(base, e0)), e1)), e2));
}

// Channel-attention branch; returns the reweighted [C] descriptor.
template <class T>
Tensor<T> channel_attention(const Tensor<T>& f_in, const HsaBlock<T>& block) {
  Tensor<T> desc = global_avg_pool(f_in);
  Tensor<T> gate = sigmoid(conv1d_channels(desc, block.c1d_weight));
  return mul(desc, gate);
}

// Full HSA block: Z = SRF(A1 + B2) + F_in.
template <class T>
Tensor<T> hsa_forward(const Tensor<T>& f_in, HsaBlock<T>& block, bool training = true) {
  check_shape(block.csc_out_channels == block.in_channels,
              "hsa_forward: csc output width must equal input channels for the residual");
  Tensor<T> a1 = csc_branch(f_in, block, training);
  Tensor<T> b2 = channel_attention(f_in, block);
  Tensor<T> x = add_channel_broadcast(a1, b2);
  Tensor<T> srf = block.srf_merge(add(block.srf_dw5(x), block.srf_dw7(x)));
  return add(srf, f_in);
}

}  // namespace kmamba
