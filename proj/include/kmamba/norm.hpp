#pragma once

#include <cmath>

#include "kmamba/tensor.hpp"

namespace kmamba {

// Softmax over the channel axis (axis 0) at each voxel position, computed
// with max-subtraction.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  check_shape(x.rank() >= 1 && x.dim(0) >= 1, "softmax_channels: need at least one channel");
  const int64_t c = x.dim(0);
  const int64_t v = x.numel() / c;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto xd = x.data();
  for (int64_t i = 0; i < v; ++i) {
    T mx = xd[size_t(i)];
    for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, xd[size_t(ch * v + i)]);
    T denom = T(0);
    for (int64_t ch = 0; ch < c; ++ch) {
      const T e = std::exp(xd[size_t(ch * v + i)] - mx);
      out[size_t(ch * v + i)] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (int64_t ch = 0; ch < c; ++ch) out[size_t(ch * v + i)] *= inv;
  }
  return detail::make_node<T>(x.shape(), std::move(out), {x}, [x, c, v](TensorNode<T>& n) {
    auto& g = x.node()->ensure_grad();
    for (int64_t i = 0; i < v; ++i) {
      T dot = T(0);
      for (int64_t ch = 0; ch < c; ++ch)
        dot += n.grad[size_t(ch * v + i)] * n.values[size_t(ch * v + i)];
      for (int64_t ch = 0; ch < c; ++ch) {
        const T p = n.values[size_t(ch * v + i)];
        g[size_t(ch * v + i)] += p * (n.grad[size_t(ch * v + i)] - dot);
      }
    }
  });
}

// Batch normalization over all non-channel elements of a [C, ...] tensor.
// Training mode normalizes with batch statistics and updates the running
// estimates in place; eval mode uses the frozen running statistics.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  const int64_t c = x.dim(0);
  const int64_t v = x.numel() / c;
  check_shape(gamma.numel() == c && beta.numel() == c, "batch_norm: affine params must have C entries");
  check_shape(running_mean.numel() == c && running_var.numel() == c,
              "batch_norm: running stats must have C entries");

  auto rmean = running_mean.mutable_data();
  auto rvar = running_var.mutable_data();
  std::vector<T> mu(static_cast<size_t>(c)), istd(static_cast<size_t>(c));
  const auto xd = x.data();
  const T invv = T(1) / static_cast<T>(v);
  for (int64_t ch = 0; ch < c; ++ch) {
    T m, var;
    if (training) {
      T acc = T(0);
      for (int64_t i = 0; i < v; ++i) acc += xd[size_t(ch * v + i)];
      m = acc * invv;
      T acc2 = T(0);
      for (int64_t i = 0; i < v; ++i) {
        const T dlt = xd[size_t(ch * v + i)] - m;
        acc2 += dlt * dlt;
      }
      var = acc2 * invv;
      rmean[size_t(ch)] = (T(1) - momentum) * rmean[size_t(ch)] + momentum * m;
      rvar[size_t(ch)] = (T(1) - momentum) * rvar[size_t(ch)] + momentum * var;
    } else {
      m = rmean[size_t(ch)];
      var = rvar[size_t(ch)];
    }
    mu[size_t(ch)] = m;
    istd[size_t(ch)] = T(1) / std::sqrt(var + eps);
  }

  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto gd = gamma.data(), bd = beta.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < v; ++i)
      out[size_t(ch * v + i)] =
          gd[size_t(ch)] * (xd[size_t(ch * v + i)] - mu[size_t(ch)]) * istd[size_t(ch)] + bd[size_t(ch)];

  auto backward = [x, gamma, beta, c, v, mu, istd, training, invv](TensorNode<T>& n) {
    const auto xd2 = x.data();
    const auto gd2 = gamma.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      const T m = mu[size_t(ch)], is = istd[size_t(ch)], gm = gd2[size_t(ch)];
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int64_t i = 0; i < v; ++i) {
        const T dy = n.grad[size_t(ch * v + i)];
        sum_dy += dy;
        sum_dy_xhat += dy * (xd2[size_t(ch * v + i)] - m) * is;
      }
      if (gamma.requires_grad()) gamma.node()->ensure_grad()[size_t(ch)] += sum_dy_xhat;
      if (beta.requires_grad()) beta.node()->ensure_grad()[size_t(ch)] += sum_dy;
      if (x.requires_grad()) {
        auto& gx = x.node()->ensure_grad();
        if (training) {
          const T mean_dy = sum_dy * invv, mean_dy_xhat = sum_dy_xhat * invv;
          for (int64_t i = 0; i < v; ++i) {
            const T xhat = (xd2[size_t(ch * v + i)] - m) * is;
            gx[size_t(ch * v + i)] += gm * is * (n.grad[size_t(ch * v + i)] - mean_dy - xhat * mean_dy_xhat);
          }
        } else {
          for (int64_t i = 0; i < v; ++i) gx[size_t(ch * v + i)] += gm * is * n.grad[size_t(ch * v + i)];
        }
      }
    }
  };

  return detail::make_node<T>(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward));
}

// Layer normalization over the last axis of an [N, C] matrix (one feature
// vector per row, i.e. per voxel when rows are flattened positions).
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  check_shape(x.rank() == 2, "layer_norm_rows: input must be [N, C]");
  const int64_t n = x.dim(0), c = x.dim(1);
  check_shape(gamma.numel() == c && beta.numel() == c, "layer_norm_rows: affine params must have C entries");

  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> mu(static_cast<size_t>(n)), istd(static_cast<size_t>(n));
  const auto xd = x.data();
  const auto gd = gamma.data(), bd = beta.data();
  const T invc = T(1) / static_cast<T>(c);
  for (int64_t r = 0; r < n; ++r) {
    T acc = T(0);
    for (int64_t j = 0; j < c; ++j) acc += xd[size_t(r * c + j)];
    const T m = acc * invc;
    T acc2 = T(0);
    for (int64_t j = 0; j < c; ++j) {
      const T dlt = xd[size_t(r * c + j)] - m;
      acc2 += dlt * dlt;
    }
    const T is = T(1) / std::sqrt(acc2 * invc + eps);
    mu[size_t(r)] = m;
    istd[size_t(r)] = is;
    for (int64_t j = 0; j < c; ++j)
      out[size_t(r * c + j)] = gd[size_t(j)] * (xd[size_t(r * c + j)] - m) * is + bd[size_t(j)];
  }

  auto backward = [x, gamma, beta, n, c, mu, istd, invc](TensorNode<T>& nd) {
    const auto xd2 = x.data();
    const auto gd2 = gamma.data();
    for (int64_t r = 0; r < n; ++r) {
      const T m = mu[size_t(r)], is = istd[size_t(r)];
      T sum_gdy = T(0), sum_gdy_xhat = T(0);
      for (int64_t j = 0; j < c; ++j) {
        const T gdy = nd.grad[size_t(r * c + j)] * gd2[size_t(j)];
        sum_gdy += gdy;
        sum_gdy_xhat += gdy * (xd2[size_t(r * c + j)] - m) * is;
      }
      if (x.requires_grad()) {
        auto& gx = x.node()->ensure_grad();
        const T mean_gdy = sum_gdy * invc, mean_gdy_xhat = sum_gdy_xhat * invc;
        for (int64_t j = 0; j < c; ++j) {
          const T xhat = (xd2[size_t(r * c + j)] - m) * is;
          gx[size_t(r * c + j)] +=
              is * (nd.grad[size_t(r * c + j)] * gd2[size_t(j)] - mean_gdy - xhat * mean_gdy_xhat);
        }
      }
      if (gamma.requires_grad()) {
        auto& gg = gamma.node()->ensure_grad();
        for (int64_t j = 0; j < c; ++j)
          gg[size_t(j)] += nd.grad[size_t(r * c + j)] * (xd2[size_t(r * c + j)] - m) * is;
      }
      if (beta.requires_grad()) {
        auto& gb = beta.node()->ensure_grad();
        for (int64_t j = 0; j < c; ++j) gb[size_t(j)] += nd.grad[size_t(r * c + j)];
      }
    }
  };

  return detail::make_node<T>(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward));
}

// Layer normalization over the channel axis of a [C, ...] volume (per-voxel
// statistics across channels; stateless, so train and eval agree).
template <class T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              T eps = T(1e-5)) {
  check_shape(x.rank() >= 2, "layer_norm_channels: input must be [C, ...]");
  const int64_t c = x.dim(0);
  const int64_t v = x.numel() / c;
  check_shape(gamma.numel() == c && beta.numel() == c,
              "layer_norm_channels: affine params must have C entries");

  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> mu(static_cast<size_t>(v)), istd(static_cast<size_t>(v));
  const auto xd = x.data();
  const auto gd = gamma.data(), bd = beta.data();
  const T invc = T(1) / static_cast<T>(c);
  for (int64_t i = 0; i < v; ++i) {
    T acc = T(0);
    for (int64_t ch = 0; ch < c; ++ch) acc += xd[size_t(ch * v + i)];
    const T m = acc * invc;
    T acc2 = T(0);
    for (int64_t ch = 0; ch < c; ++ch) {
      const T dlt = xd[size_t(ch * v + i)] - m;
      acc2 += dlt * dlt;
    }
    const T is = T(1) / std::sqrt(acc2 * invc + eps);
    mu[size_t(i)] = m;
    istd[size_t(i)] = is;
    for (int64_t ch = 0; ch < c; ++ch)
      out[size_t(ch * v + i)] = gd[size_t(ch)] * (xd[size_t(ch * v + i)] - m) * is + bd[size_t(ch)];
  }

  auto backward = [x, gamma, beta, c, v, mu, istd, invc](TensorNode<T>& nd) {
    const auto xd2 = x.data();
    const auto gd2 = gamma.data();
    for (int64_t i = 0; i < v; ++i) {
      const T m = mu[size_t(i)], is = istd[size_t(i)];
      T sum_gdy = T(0), sum_gdy_xhat = T(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T gdy = nd.grad[size_t(ch * v + i)] * gd2[size_t(ch)];
        sum_gdy += gdy;
        sum_gdy_xhat += gdy * (xd2[size_t(ch * v + i)] - m) * is;
      }
      if (x.requires_grad()) {
        auto& gx = x.node()->ensure_grad();
        const T mean_gdy = sum_gdy * invc, mean_gdy_xhat = sum_gdy_xhat * invc;
        for (int64_t ch = 0; ch < c; ++ch) {
          const T xhat = (xd2[size_t(ch * v + i)] - m) * is;
          gx[size_t(ch * v + i)] +=
              is * (nd.grad[size_t(ch * v + i)] * gd2[size_t(ch)] - mean_gdy - xhat * mean_gdy_xhat);
        }
      }
      if (gamma.requires_grad()) {
        auto& gg = gamma.node()->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch)
          gg[size_t(ch)] += nd.grad[size_t(ch * v + i)] * (xd2[size_t(ch * v + i)] - m) * is;
      }
      if (beta.requires_grad()) {
        auto& gb = beta.node()->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch) gb[size_t(ch)] += nd.grad[size_t(ch * v + i)];
      }
    }
  };

  return detail::make_node<T>(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward));
}

}  // namespace kmamba
