#pragma once

#include <array>
#include <cmath>

#include "kmamba/parallel.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

// Per-axis convolution geometry. Axes follow the [C,H,W,D] layout.
struct ConvSpec {
  std::array<int64_t, 3> kernel{1, 1, 1};
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
  std::array<int64_t, 3> dilation{1, 1, 1};
  int64_t groups = 1;

  static ConvSpec pointwise() { return {}; }

  // Cubic kernel with same-padding at stride 1 (odd k).
  static ConvSpec same(int64_t k) {
    ConvSpec s;
    s.kernel = {k, k, k};
    s.padding = {(k - 1) / 2, (k - 1) / 2, (k - 1) / 2};
    return s;
  }

  static ConvSpec strided(int64_t k, int64_t stride, int64_t pad) {
    ConvSpec s;
    s.kernel = {k, k, k};
    s.stride = {stride, stride, stride};
    s.padding = {pad, pad, pad};
    return s;
  }

  ConvSpec with_groups(int64_t g) const {
    ConvSpec s = *this;
    s.groups = g;
    return s;
  }

  int64_t out_dim(int64_t in, int axis) const {
    return (in + 2 * padding[axis] - dilation[axis] * (kernel[axis] - 1) - 1) / stride[axis] + 1;
  }
};

namespace detail {

struct ConvDims {
  int64_t cin, h, w, d;
  int64_t cout, oh, ow, od;
  int64_t cg, og;  // channels per group (in / out)
  int64_t kvol, ocols;
};

template <class T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
  check_shape(input.rank() == 4, "conv3d: input must be rank 4 [C,H,W,D], got " + shape_str(input.shape()));
  check_shape(weights.rank() == 5, "conv3d: weights must be rank 5 [Cout,Cin/g,kh,kw,kd]");
  ConvDims dm{};
  dm.cin = input.dim(0);
  dm.h = input.dim(1);
  dm.w = input.dim(2);
  dm.d = input.dim(3);
  dm.cout = weights.dim(0);
  check_spec(spec.groups >= 1 && dm.cin % spec.groups == 0 && dm.cout % spec.groups == 0,
             "conv3d: groups=" + std::to_string(spec.groups) + " must divide channel counts " +
                 std::to_string(dm.cin) + "->" + std::to_string(dm.cout));
  dm.cg = dm.cin / spec.groups;
  dm.og = dm.cout / spec.groups;
  check_shape(weights.dim(1) == dm.cg && weights.dim(2) == spec.kernel[0] &&
                  weights.dim(3) == spec.kernel[1] && weights.dim(4) == spec.kernel[2],
              "conv3d: weight shape " + shape_str(weights.shape()) + " inconsistent with spec");
  dm.oh = spec.out_dim(dm.h, 0);
  dm.ow = spec.out_dim(dm.w, 1);
  dm.od = spec.out_dim(dm.d, 2);
  check_spec(dm.oh >= 1 && dm.ow >= 1 && dm.od >= 1,
             "conv3d: empty output for input " + shape_str(input.shape()));
  dm.kvol = spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  dm.ocols = dm.oh * dm.ow * dm.od;
  return dm;
}

// Gather one group's input patches into col [cg*kvol, ocols].
template <class T>
void im2col_group(const T* x, const ConvDims& dm, const ConvSpec& sp, int64_t cbase, T* col) {
  const int64_t wd = dm.w * dm.d;
  for (int64_t c = 0; c < dm.cg; ++c) {
    const T* xc = x + (cbase + c) * dm.h * wd;
    for (int64_t kh = 0; kh < sp.kernel[0]; ++kh)
      for (int64_t kw = 0; kw < sp.kernel[1]; ++kw)
        for (int64_t kd = 0; kd < sp.kernel[2]; ++kd) {
          T* row = col + (((c * sp.kernel[0] + kh) * sp.kernel[1] + kw) * sp.kernel[2] + kd) * dm.ocols;
          int64_t idx = 0;
          for (int64_t oh = 0; oh < dm.oh; ++oh) {
            const int64_t ih = oh * sp.stride[0] - sp.padding[0] + kh * sp.dilation[0];
            const bool hok = ih >= 0 && ih < dm.h;
            for (int64_t ow = 0; ow < dm.ow; ++ow) {
              const int64_t iw = ow * sp.stride[1] - sp.padding[1] + kw * sp.dilation[1];
              const bool wok = iw >= 0 && iw < dm.w;
              for (int64_t od = 0; od < dm.od; ++od, ++idx) {
                const int64_t id = od * sp.stride[2] - sp.padding[2] + kd * sp.dilation[2];
                row[idx] = (hok && wok && id >= 0 && id < dm.d) ? xc[ih * wd + iw * dm.d + id] : T(0);
              }
            }
          }
        }
  }
}

// Scatter-add the col layout back onto the input gradient.
template <class T>
void col2im_group(const T* col, const ConvDims& dm, const ConvSpec& sp, int64_t cbase, T* gx) {
  const int64_t wd = dm.w * dm.d;
  for (int64_t c = 0; c < dm.cg; ++c) {
    T* gc = gx + (cbase + c) * dm.h * wd;
    for (int64_t kh = 0; kh < sp.kernel[0]; ++kh)
      for (int64_t kw = 0; kw < sp.kernel[1]; ++kw)
        for (int64_t kd = 0; kd < sp.kernel[2]; ++kd) {
          const T* row = col + (((c * sp.kernel[0] + kh) * sp.kernel[1] + kw) * sp.kernel[2] + kd) * dm.ocols;
          int64_t idx = 0;
          for (int64_t oh = 0; oh < dm.oh; ++oh) {
            const int64_t ih = oh * sp.stride[0] - sp.padding[0] + kh * sp.dilation[0];
            const bool hok = ih >= 0 && ih < dm.h;
            for (int64_t ow = 0; ow < dm.ow; ++ow) {
              const int64_t iw = ow * sp.stride[1] - sp.padding[1] + kw * sp.dilation[1];
              const bool wok = iw >= 0 && iw < dm.w;
              for (int64_t od = 0; od < dm.od; ++od, ++idx) {
                const int64_t id = od * sp.stride[2] - sp.padding[2] + kd * sp.dilation[2];
                if (hok && wok && id >= 0 && id < dm.d) gc[ih * wd + iw * dm.d + id] += row[idx];
              }
            }
          }
        }
  }
}

template <class T>
bool is_depthwise(const ConvDims& dm, const ConvSpec& sp) {
  return sp.groups == dm.cin && dm.cg == 1;
}

// Direct depthwise kernel; each output channel is written by one worker.
template <class T>
void depthwise_forward(const T* x, const T* w, const ConvDims& dm, const ConvSpec& sp, T* out) {
  const int64_t m = dm.cout / dm.cin;  // channel multiplier
  const int64_t wd = dm.w * dm.d;
  parallel_for(0, dm.cout, [&](int64_t oc) {
    const int64_t ic = oc / m;
    const T* xc = x + ic * dm.h * wd;
    const T* wk = w + oc * dm.kvol;
    T* oz = out + oc * dm.ocols;
    int64_t idx = 0;
    for (int64_t oh = 0; oh < dm.oh; ++oh)
      for (int64_t ow = 0; ow < dm.ow; ++ow)
        for (int64_t od = 0; od < dm.od; ++od, ++idx) {
          T acc = T(0);
          for (int64_t kh = 0; kh < sp.kernel[0]; ++kh) {
            const int64_t ih = oh * sp.stride[0] - sp.padding[0] + kh * sp.dilation[0];
            if (ih < 0 || ih >= dm.h) continue;
            for (int64_t kw = 0; kw < sp.kernel[1]; ++kw) {
              const int64_t iw = ow * sp.stride[1] - sp.padding[1] + kw * sp.dilation[1];
              if (iw < 0 || iw >= dm.w) continue;
              const T* xrow = xc + ih * wd + iw * dm.d;
              const T* wrow = wk + (kh * sp.kernel[1] + kw) * sp.kernel[2];
              for (int64_t kd = 0; kd < sp.kernel[2]; ++kd) {
                const int64_t id = od * sp.stride[2] - sp.padding[2] + kd * sp.dilation[2];
                if (id >= 0 && id < dm.d) acc += xrow[id] * wrow[kd];
              }
            }
          }
          oz[idx] = acc;
        }
  });
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvDims& dm,
                        const ConvSpec& sp, T* gx, T* gw) {
  const int64_t m = dm.cout / dm.cin;
  const int64_t wd = dm.w * dm.d;
  // Input channels own disjoint gx slices; the inner loop walks each input
  // channel's multiplier outputs so both gradients are filled in one pass.
  parallel_for(0, dm.cin, [&](int64_t ic) {
    for (int64_t j = 0; j < m; ++j) {
      const int64_t oc = ic * m + j;
      const T* xc = x + ic * dm.h * wd;
      const T* wk = w + oc * dm.kvol;
      const T* go = gout + oc * dm.ocols;
      T* gxc = gx ? gx + ic * dm.h * wd : nullptr;
      T* gwk = gw ? gw + oc * dm.kvol : nullptr;
      int64_t idx = 0;
      for (int64_t oh = 0; oh < dm.oh; ++oh)
        for (int64_t ow = 0; ow < dm.ow; ++ow)
          for (int64_t od = 0; od < dm.od; ++od, ++idx) {
            const T g = go[idx];
            if (g == T(0)) continue;
            for (int64_t kh = 0; kh < sp.kernel[0]; ++kh) {
              const int64_t ih = oh * sp.stride[0] - sp.padding[0] + kh * sp.dilation[0];
              if (ih < 0 || ih >= dm.h) continue;
              for (int64_t kw = 0; kw < sp.kernel[1]; ++kw) {
                const int64_t iw = ow * sp.stride[1] - sp.padding[1] + kw * sp.dilation[1];
                if (iw < 0 || iw >= dm.w) continue;
                for (int64_t kd = 0; kd < sp.kernel[2]; ++kd) {
                  const int64_t id = od * sp.stride[2] - sp.padding[2] + kd * sp.dilation[2];
                  if (id < 0 || id >= dm.d) continue;
                  const int64_t xi = ih * wd + iw * dm.d + id;
                  const int64_t wi = (kh * sp.kernel[1] + kw) * sp.kernel[2] + kd;
                  if (gxc) gxc[xi] += g * wk[wi];
                  if (gwk) gwk[wi] += g * xc[xi];
                }
              }
            }
          }
    }
  });
}

}  // namespace detail

// Direct (non-FFT) 3D convolution over a channels-first volume. Dense and
// grouped paths run as im2col + GEMM; pure depthwise runs direct loops.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
  const detail::ConvDims dm = detail::conv_dims(input, weights, spec);
  std::vector<T> out(static_cast<size_t>(dm.cout * dm.ocols));

  if (detail::is_depthwise<T>(dm, spec)) {
    detail::depthwise_forward(input.data().data(), weights.data().data(), dm, spec, out.data());
  } else {
    std::vector<T> col(static_cast<size_t>(dm.cg * dm.kvol * dm.ocols));
    for (int64_t g = 0; g < spec.groups; ++g) {
      detail::im2col_group(input.data().data(), dm, spec, g * dm.cg, col.data());
      detail::ECMap<T> W(weights.data().data() + g * dm.og * dm.cg * dm.kvol, dm.og, dm.cg * dm.kvol);
      detail::ECMap<T> C(col.data(), dm.cg * dm.kvol, dm.ocols);
      detail::EMap<T>(out.data() + g * dm.og * dm.ocols, dm.og, dm.ocols).noalias() = W * C;
    }
  }

  auto backward = [input, weights, spec, dm](TensorNode<T>& n) {
    T* gx = nullptr;
    T* gw = nullptr;
    if (input.requires_grad()) gx = input.node()->ensure_grad().data();
    if (weights.requires_grad()) gw = weights.node()->ensure_grad().data();
    if (!gx && !gw) return;
    if (detail::is_depthwise<T>(dm, spec)) {
      detail::depthwise_backward(input.data().data(), weights.data().data(), n.grad.data(), dm,
                                 spec, gx, gw);
      return;
    }
    std::vector<T> col(static_cast<size_t>(dm.cg * dm.kvol * dm.ocols));
    std::vector<T> dcol(gx ? col.size() : 0);
    for (int64_t g = 0; g < spec.groups; ++g) {
      detail::ECMap<T> G(n.grad.data() + g * dm.og * dm.ocols, dm.og, dm.ocols);
      if (gw) {
        detail::im2col_group(input.data().data(), dm, spec, g * dm.cg, col.data());
        detail::ECMap<T> C(col.data(), dm.cg * dm.kvol, dm.ocols);
        detail::EMap<T>(gw + g * dm.og * dm.cg * dm.kvol, dm.og, dm.cg * dm.kvol).noalias() +=
            G * C.transpose();
      }
      if (gx) {
        detail::ECMap<T> W(weights.data().data() + g * dm.og * dm.cg * dm.kvol, dm.og, dm.cg * dm.kvol);
        detail::EMap<T>(dcol.data(), dm.cg * dm.kvol, dm.ocols).noalias() = W.transpose() * G;
        detail::col2im_group(dcol.data(), dm, spec, g * dm.cg, gx);
      }
    }
  };

  return detail::make_node<T>({dm.cout, dm.oh, dm.ow, dm.od}, std::move(out), {input, weights},
                              std::move(backward));
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  return add_channel_broadcast(conv3d(input, weights, spec), bias);
}

// Transposed convolution with kernel == stride and no padding (the decoder's
// upsampling case): every input voxel expands into a disjoint k^3 block.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weights, int64_t k) {
  check_shape(input.rank() == 4, "conv_transpose3d: input must be rank 4");
  check_shape(weights.rank() == 5 && weights.dim(0) == input.dim(0),
              "conv_transpose3d: weights must be [Cin,Cout,k,k,k]");
  check_shape(weights.dim(2) == k && weights.dim(3) == k && weights.dim(4) == k,
              "conv_transpose3d: kernel dims must equal stride");
  const int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2), d = input.dim(3);
  const int64_t cout = weights.dim(1);
  const int64_t kvol = k * k * k, cols = h * w * d;
  const int64_t oh = h * k, ow = w * k, od = d * k;

  // Blocks[cout*kvol, cols] = W2^T[cout*kvol, cin] * In[cin, cols]
  std::vector<T> blocks(static_cast<size_t>(cout * kvol * cols));
  detail::ECMap<T> W2(weights.data().data(), cin, cout * kvol);
  detail::ECMap<T> X(input.data().data(), cin, cols);
  detail::EMap<T>(blocks.data(), cout * kvol, cols).noalias() = W2.transpose() * X;

  std::vector<T> out(static_cast<size_t>(cout * oh * ow * od));
  auto scatter = [&](const T* blk, T* dst) {
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < k; ++j)
          for (int64_t l = 0; l < k; ++l) {
            const T* row = blk + (((oc * k + i) * k + j) * k + l) * cols;
            int64_t idx = 0;
            for (int64_t hh = 0; hh < h; ++hh)
              for (int64_t ww = 0; ww < w; ++ww)
                for (int64_t dd = 0; dd < d; ++dd, ++idx)
                  dst[((oc * oh + hh * k + i) * ow + ww * k + j) * od + dd * k + l] = row[idx];
          }
  };
  scatter(blocks.data(), out.data());

  auto backward = [input, weights, k, cin, cout, h, w, d, kvol, cols, oh, ow, od](TensorNode<T>& n) {
    // Gather dOut back into block layout (inverse of the scatter).
    std::vector<T> dblocks(static_cast<size_t>(cout * kvol * cols));
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < k; ++j)
          for (int64_t l = 0; l < k; ++l) {
            T* row = dblocks.data() + (((oc * k + i) * k + j) * k + l) * cols;
            int64_t idx = 0;
            for (int64_t hh = 0; hh < h; ++hh)
              for (int64_t ww = 0; ww < w; ++ww)
                for (int64_t dd = 0; dd < d; ++dd, ++idx)
                  row[idx] = n.grad[size_t(((oc * oh + hh * k + i) * ow + ww * k + j) * od + dd * k + l)];
          }
    detail::ECMap<T> DB(dblocks.data(), cout * kvol, cols);
    if (input.requires_grad()) {
      detail::ECMap<T> W2(weights.data().data(), cin, cout * kvol);
      detail::EMap<T>(input.node()->ensure_grad().data(), cin, cols).noalias() += W2 * DB;
    }
    if (weights.requires_grad()) {
      detail::ECMap<T> X(input.data().data(), cin, cols);
      detail::EMap<T>(weights.node()->ensure_grad().data(), cin, cout * kvol).noalias() +=
          X * DB.transpose();
    }
  };

  return detail::make_node<T>({cout, oh, ow, od}, std::move(out), {input, weights}, std::move(backward));
}

// Non-overlapping average pooling (kernel == stride); dims must divide.
template <class T>
Tensor<T> avg_pool3d(const Tensor<T>& x, std::array<int64_t, 3> k) {
  check_shape(x.rank() == 4, "avg_pool3d: input must be rank 4");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  check_spec(k[0] >= 1 && k[1] >= 1 && k[2] >= 1 && h % k[0] == 0 && w % k[1] == 0 && d % k[2] == 0,
             "avg_pool3d: kernel " + std::to_string(k[0]) + "x" + std::to_string(k[1]) + "x" +
                 std::to_string(k[2]) + " must divide dims " + shape_str(x.shape()));
  const int64_t oh = h / k[0], ow = w / k[1], od = d / k[2];
  const T inv = T(1) / static_cast<T>(k[0] * k[1] * k[2]);
  std::vector<T> out(static_cast<size_t>(c * oh * ow * od));
  const auto xd = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        for (int64_t l = 0; l < od; ++l) {
          T acc = T(0);
          for (int64_t a = 0; a < k[0]; ++a)
            for (int64_t b = 0; b < k[1]; ++b)
              for (int64_t e = 0; e < k[2]; ++e)
                acc += xd[size_t(((ch * h + i * k[0] + a) * w + j * k[1] + b) * d + l * k[2] + e)];
          out[size_t(((ch * oh + i) * ow + j) * od + l)] = acc * inv;
        }
  return detail::make_node<T>({c, oh, ow, od}, std::move(out), {x},
                              [x, c, h, w, d, oh, ow, od, k, inv](TensorNode<T>& n) {
                                auto& g = x.node()->ensure_grad();
                                for (int64_t ch = 0; ch < c; ++ch)
                                  for (int64_t i = 0; i < oh; ++i)
                                    for (int64_t j = 0; j < ow; ++j)
                                      for (int64_t l = 0; l < od; ++l) {
                                        const T gv = n.grad[size_t(((ch * oh + i) * ow + j) * od + l)] * inv;
                                        for (int64_t a = 0; a < k[0]; ++a)
                                          for (int64_t b = 0; b < k[1]; ++b)
                                            for (int64_t e = 0; e < k[2]; ++e)
                                              g[size_t(((ch * h + i * k[0] + a) * w + j * k[1] + b) * d +
                                                       l * k[2] + e)] += gv;
                                      }
                              });
}

// Global average pooling [C,H,W,D] -> [C].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_shape(x.rank() == 4, "global_avg_pool: input must be rank 4");
  const int64_t c = x.dim(0);
  const int64_t v = x.numel() / c;
  const T inv = T(1) / static_cast<T>(v);
  std::vector<T> out(static_cast<size_t>(c));
  const auto xd = x.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (int64_t i = 0; i < v; ++i) acc += xd[size_t(ch * v + i)];
    out[size_t(ch)] = acc * inv;
  }
  return detail::make_node<T>({c}, std::move(out), {x}, [x, c, v, inv](TensorNode<T>& n) {
    auto& g = x.node()->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const T gv = n.grad[size_t(ch)] * inv;
      for (int64_t i = 0; i < v; ++i) g[size_t(ch * v + i)] += gv;
    }
  });
}

namespace detail {
struct LerpIdx {
  int64_t lo, hi;
  double frac;
};

// align_corners=false source coordinate with edge clamping.
inline LerpIdx resample_index(int64_t i, int64_t in, int64_t out) {
  const double src = (static_cast<double>(i) + 0.5) * (static_cast<double>(in) / static_cast<double>(out)) - 0.5;
  const double fl = std::floor(src);
  LerpIdx r;
  r.frac = src - fl;
  const int64_t i0 = static_cast<int64_t>(fl);
  r.lo = std::min(std::max(i0, int64_t(0)), in - 1);
  r.hi = std::min(std::max(i0 + 1, int64_t(0)), in - 1);
  return r;
}
}  // namespace detail

// Trilinear resampling (align_corners=false). Identity when target == source.
template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& x, std::array<int64_t, 3> target) {
  check_shape(x.rank() == 4, "resample_trilinear: input must be rank 4");
  check_spec(target[0] >= 1 && target[1] >= 1 && target[2] >= 1,
             "resample_trilinear: target dims must be >= 1");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  const int64_t oh = target[0], ow = target[1], od = target[2];

  if (oh == h && ow == w && od == d) {
    // Exact identity fast path (bitwise).
    std::vector<T> out(x.values());
    return detail::make_node<T>(x.shape(), std::move(out), {x}, [x](TensorNode<T>& n) {
      detail::accumulate(*x.node(), n.grad.data(), n.numel());
    });
  }

  std::vector<detail::LerpIdx> ih(static_cast<size_t>(oh)), iw(static_cast<size_t>(ow)), id(static_cast<size_t>(od));
  for (int64_t i = 0; i < oh; ++i) ih[size_t(i)] = detail::resample_index(i, h, oh);
  for (int64_t i = 0; i < ow; ++i) iw[size_t(i)] = detail::resample_index(i, w, ow);
  for (int64_t i = 0; i < od; ++i) id[size_t(i)] = detail::resample_index(i, d, od);

  std::vector<T> out(static_cast<size_t>(c * oh * ow * od));
  const auto xd = x.data();
  auto lerp = [](T a, T b, T f) { return a + f * (b - a); };
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* xc = xd.data() + ch * h * w * d;
    T* oz = out.data() + ch * oh * ow * od;
    int64_t idx = 0;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        for (int64_t l = 0; l < od; ++l, ++idx) {
          const auto &ai = ih[size_t(i)], &aj = iw[size_t(j)], &al = id[size_t(l)];
          const T fh = T(ai.frac), fw = T(aj.frac), fd = T(al.frac);
          auto at = [&](int64_t a, int64_t b, int64_t e) { return xc[(a * w + b) * d + e]; };
          const T c00 = lerp(at(ai.lo, aj.lo, al.lo), at(ai.lo, aj.lo, al.hi), fd);
          const T c01 = lerp(at(ai.lo, aj.hi, al.lo), at(ai.lo, aj.hi, al.hi), fd);
          const T c10 = lerp(at(ai.hi, aj.lo, al.lo), at(ai.hi, aj.lo, al.hi), fd);
          const T c11 = lerp(at(ai.hi, aj.hi, al.lo), at(ai.hi, aj.hi, al.hi), fd);
          oz[idx] = lerp(lerp(c00, c01, fw), lerp(c10, c11, fw), fh);
        }
  }

  auto backward = [x, c, h, w, d, oh, ow, od, ih, iw, id](TensorNode<T>& n) {
    auto& g = x.node()->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      T* gc = g.data() + ch * h * w * d;
      const T* gn = n.grad.data() + ch * oh * ow * od;
      int64_t idx = 0;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j)
          for (int64_t l = 0; l < od; ++l, ++idx) {
            const auto &ai = ih[size_t(i)], &aj = iw[size_t(j)], &al = id[size_t(l)];
            const T fh = T(ai.frac), fw = T(aj.frac), fd = T(al.frac);
            const T gv = gn[idx];
            auto put = [&](int64_t a, int64_t b, int64_t e, T wgt) {
              gc[(a * w + b) * d + e] += gv * wgt;
            };
            put(ai.lo, aj.lo, al.lo, (T(1) - fh) * (T(1) - fw) * (T(1) - fd));
            put(ai.lo, aj.lo, al.hi, (T(1) - fh) * (T(1) - fw) * fd);
            put(ai.lo, aj.hi, al.lo, (T(1) - fh) * fw * (T(1) - fd));
            put(ai.lo, aj.hi, al.hi, (T(1) - fh) * fw * fd);
            put(ai.hi, aj.lo, al.lo, fh * (T(1) - fw) * (T(1) - fd));
            put(ai.hi, aj.lo, al.hi, fh * (T(1) - fw) * fd);
            put(ai.hi, aj.hi, al.lo, fh * fw * (T(1) - fd));
            put(ai.hi, aj.hi, al.hi, fh * fw * fd);
          }
    }
  };

  return detail::make_node<T>({c, oh, ow, od}, std::move(out), {x}, std::move(backward));
}

}  // namespace kmamba
