#pragma once

#include "kmamba/metrics.hpp"
#include "kmamba/norm.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

struct LossWeights {
  double beta = 0.5;     // cross-entropy vs soft-Dice trade-off
  double lambda1 = 1.0;  // original-objective weight
  double lambda2 = 0.1;  // self-distillation weight

  void validate() const {
    check_value(beta >= 0.0 && beta <= 1.0, "loss.beta must lie in [0,1]");
    check_value(lambda1 >= 0.0 && lambda2 >= 0.0, "loss.lambda1/lambda2 must be nonnegative");
  }
};

namespace detail {
template <class T>
void check_target(const Tensor<T>& logits, const LabelVolume& target) {
  check_shape(logits.rank() == 4, "loss: logits must be [C,H,W,D]");
  check_shape(logits.dim(1) == target.dims[0] && logits.dim(2) == target.dims[1] &&
                  logits.dim(3) == target.dims[2],
              "loss: logits spatial dims do not match target");
  const uint8_t c = static_cast<uint8_t>(logits.dim(0));
  for (uint8_t l : target.labels)
    if (l >= c)
      throw ValueError("loss: label " + std::to_string(int(l)) + " out of range for " +
                       std::to_string(int(c)) + " classes");
}
}  // namespace detail

// Voxel-mean negative log softmax probability of the true class.
template <class T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const LabelVolume& target) {
  detail::check_target(logits, target);
  const int64_t c = logits.dim(0);
  const int64_t v = logits.numel() / c;
  const auto xd = logits.data();
  T acc = T(0);
  for (int64_t i = 0; i < v; ++i) {
    T mx = xd[size_t(i)];
    for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, xd[size_t(ch * v + i)]);
    T lse = T(0);
    for (int64_t ch = 0; ch < c; ++ch) lse += std::exp(xd[size_t(ch * v + i)] - mx);
    lse = std::log(lse) + mx;
    acc += lse - xd[size_t(target.labels[size_t(i)] * v + i)];
  }
  const T inv = T(1) / static_cast<T>(v);
  std::vector<uint8_t> labels = target.labels;
  return detail::make_node<T>({1}, {acc * inv}, {logits}, [logits, labels, c, v, inv](TensorNode<T>& n) {
    const T g = n.grad[0] * inv;
    const auto xd2 = logits.data();
    auto& gx = logits.node()->ensure_grad();
    for (int64_t i = 0; i < v; ++i) {
      T mx = xd2[size_t(i)];
      for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, xd2[size_t(ch * v + i)]);
      T denom = T(0);
      for (int64_t ch = 0; ch < c; ++ch) denom += std::exp(xd2[size_t(ch * v + i)] - mx);
      const T inv_denom = T(1) / denom;
      for (int64_t ch = 0; ch < c; ++ch) {
        const T p = std::exp(xd2[size_t(ch * v + i)] - mx) * inv_denom;
        gx[size_t(ch * v + i)] += g * (p - (labels[size_t(i)] == ch ? T(1) : T(0)));
      }
    }
  });
}

// 1 - mean soft Dice over classes present in the target, epsilon-smoothed.
template <class T>
Tensor<T> soft_dice_mean(const Tensor<T>& probs, const LabelVolume& target, T eps = T(1e-5)) {
  detail::check_target(probs, target);
  const int64_t c = probs.dim(0);
  const int64_t v = probs.numel() / c;
  const auto pd = probs.data();

  std::vector<int64_t> count(static_cast<size_t>(c), 0);
  for (uint8_t l : target.labels) ++count[size_t(l)];
  std::vector<T> s_pt(static_cast<size_t>(c), T(0)), s_p(static_cast<size_t>(c), T(0));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < v; ++i) {
      const T p = pd[size_t(ch * v + i)];
      s_p[size_t(ch)] += p;
      if (target.labels[size_t(i)] == ch) s_pt[size_t(ch)] += p;
    }

  int64_t present = 0;
  T acc = T(0);
  std::vector<T> numer(static_cast<size_t>(c)), denom(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    if (count[size_t(ch)] == 0) continue;
    ++present;
    numer[size_t(ch)] = T(2) * s_pt[size_t(ch)] + eps;
    denom[size_t(ch)] = s_p[size_t(ch)] + static_cast<T>(count[size_t(ch)]) + eps;
    acc += numer[size_t(ch)] / denom[size_t(ch)];
  }
  check_value(present > 0, "soft_dice_mean: target has no voxels");
  const T invk = T(1) / static_cast<T>(present);
  const T loss = T(1) - acc * invk;

  std::vector<uint8_t> labels = target.labels;
  auto backward = [probs, labels, c, v, invk, count, numer, denom](TensorNode<T>& n) {
    const T g = n.grad[0];
    auto& gp = probs.node()->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      if (count[size_t(ch)] == 0) continue;
      const T nm = numer[size_t(ch)], dn = denom[size_t(ch)];
      const T inv_dn = T(1) / dn;
      for (int64_t i = 0; i < v; ++i) {
        const T t = labels[size_t(i)] == ch ? T(1) : T(0);
        // d dice_c / dp = (2 t dn - nm) / dn^2 ; loss takes -1/K of it
        gp[size_t(ch * v + i)] -= g * invk * (T(2) * t * dn - nm) * inv_dn * inv_dn;
      }
    }
  };
  return detail::make_node<T>({1}, {loss}, {probs}, std::move(backward));
}

// beta * L_CE + (1 - beta) * L_Dice. Endpoint weights skip the unused branch
// entirely.
template <class T>
Tensor<T> origin_loss(const Tensor<T>& logits, const LabelVolume& target, const LossWeights& w) {
  w.validate();
  const T beta = static_cast<T>(w.beta);
  Tensor<T> out;
  if (w.beta > 0.0) out = scale(cross_entropy_mean(logits, target), beta);
  if (w.beta < 1.0) {
    Tensor<T> dice_term = scale(soft_dice_mean(softmax_channels(logits), target), T(1) - beta);
    out = out.defined() ? add(out, dice_term) : dice_term;
  }
  return out;
}

// lambda1 * origin + lambda2 * sd.
template <class T>
Tensor<T> total_loss(const Tensor<T>& origin, const Tensor<T>& sd, const LossWeights& w) {
  w.validate();
  return add(scale(origin, static_cast<T>(w.lambda1)), scale(sd, static_cast<T>(w.lambda2)));
}

}  // namespace kmamba
