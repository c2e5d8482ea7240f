#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kmamba/conv.hpp"
#include "kmamba/norm.hpp"

namespace kmamba {

// Named parameter registry entry. Buffers (running statistics) are saved in
// checkpoints but skipped by the optimizer.
template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <class T>
using ParamList = std::vector<ParamEntry<T>>;

template <class T>
void add_param(ParamList<T>& list, std::string name, const Tensor<T>& t, bool trainable = true) {
  list.push_back({std::move(name), t, trainable});
}

// 3D convolution layer (weight [Cout, Cin/g, k,k,k], optional bias).
template <class T>
struct Conv3dLayer {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when bias-less
  ConvSpec spec;

  static Conv3dLayer create(int64_t cin, int64_t cout, const ConvSpec& spec, Rng& rng,
                            bool with_bias = true) {
    Conv3dLayer l;
    l.spec = spec;
    const int64_t fan_in = (cin / spec.groups) * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
    const T stddev = std::sqrt(T(2) / static_cast<T>(fan_in));
    l.weight = Tensor<T>::randn({cout, cin / spec.groups, spec.kernel[0], spec.kernel[1], spec.kernel[2]},
                                rng, stddev);
    l.weight.set_requires_grad();
    if (with_bias) {
      l.bias = Tensor<T>::zeros({cout});
      l.bias.set_requires_grad();
    }
    return l;
  }

  static Conv3dLayer zero_init(int64_t cin, int64_t cout, const ConvSpec& spec, bool with_bias = true) {
    Conv3dLayer l;
    l.spec = spec;
    l.weight = Tensor<T>::zeros({cout, cin / spec.groups, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
    l.weight.set_requires_grad();
    if (with_bias) {
      l.bias = Tensor<T>::zeros({cout});
      l.bias.set_requires_grad();
    }
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return bias.defined() ? conv3d(x, weight, bias, spec) : conv3d(x, weight, spec);
  }

  int64_t param_count() const { return weight.numel() + (bias.defined() ? bias.numel() : 0); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".weight", weight);
    if (bias.defined()) add_param(out, prefix + ".bias", bias);
  }
};

// Transposed conv layer for decoder upsampling (kernel == stride).
template <class T>
struct ConvTranspose3dLayer {
  Tensor<T> weight;  // [Cin, Cout, k, k, k]
  int64_t k = 2;

  static ConvTranspose3dLayer create(int64_t cin, int64_t cout, int64_t k, Rng& rng) {
    ConvTranspose3dLayer l;
    l.k = k;
    const T stddev = std::sqrt(T(2) / static_cast<T>(cin * k * k * k));
    l.weight = Tensor<T>::randn({cin, cout, k, k, k}, rng, stddev);
    l.weight.set_requires_grad();
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose3d(x, weight, k); }

  int64_t param_count() const { return weight.numel(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".weight", weight);
  }
};

template <class T>
struct BatchNorm3dLayer {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNorm3dLayer create(int64_t c) {
    BatchNorm3dLayer l;
    l.gamma = Tensor<T>::filled({c}, T(1));
    l.gamma.set_requires_grad();
    l.beta = Tensor<T>::zeros({c});
    l.beta.set_requires_grad();
    l.running_mean = Tensor<T>::zeros({c});
    l.running_var = Tensor<T>::filled({c}, T(1));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }

  int64_t param_count() const { return gamma.numel() + beta.numel(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
    add_param(out, prefix + ".running_mean", running_mean, /*trainable=*/false);
    add_param(out, prefix + ".running_var", running_var, /*trainable=*/false);
  }
};

// Per-voxel channel normalization for [C, ...] volumes; stateless, which
// keeps small-volume stages well behaved at eval time.
template <class T>
struct ChannelNormLayer {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static ChannelNormLayer create(int64_t c) {
    ChannelNormLayer l;
    l.gamma = Tensor<T>::filled({c}, T(1));
    l.gamma.set_requires_grad();
    l.beta = Tensor<T>::zeros({c});
    l.beta.set_requires_grad();
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_channels(x, gamma, beta, eps); }

  int64_t param_count() const { return gamma.numel() + beta.numel(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
  }
};

template <class T>
struct LayerNormRows {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static LayerNormRows create(int64_t c) {
    LayerNormRows l;
    l.gamma = Tensor<T>::filled({c}, T(1));
    l.gamma.set_requires_grad();
    l.beta = Tensor<T>::zeros({c});
    l.beta.set_requires_grad();
    return l;
  }

  static LayerNormRows zero_init(int64_t c) {
    LayerNormRows l;
    l.gamma = Tensor<T>::zeros({c});
    l.gamma.set_requires_grad();
    l.beta = Tensor<T>::zeros({c});
    l.beta.set_requires_grad();
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_rows(x, gamma, beta, eps); }

  int64_t param_count() const { return gamma.numel() + beta.numel(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
  }
};

// Dense layer on [N, in] rows.
template <class T>
struct LinearLayer {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], optional

  static LinearLayer create(int64_t in, int64_t out, Rng& rng, bool with_bias = true) {
    LinearLayer l;
    const T stddev = std::sqrt(T(2) / static_cast<T>(in));
    l.weight = Tensor<T>::randn({in, out}, rng, stddev);
    l.weight.set_requires_grad();
    if (with_bias) {
      l.bias = Tensor<T>::zeros({out});
      l.bias.set_requires_grad();
    }
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, weight);
    return bias.defined() ? add_row_bias(y, bias) : y;
  }

  int64_t param_count() const { return weight.numel() + (bias.defined() ? bias.numel() : 0); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".weight", weight);
    if (bias.defined()) add_param(out, prefix + ".bias", bias);
  }
};

}  // namespace kmamba
