#pragma once

#include <cmath>

#include "kmamba/layers.hpp"

namespace kmamba {

// Bias-corrected Adam over a fixed parameter list. Parameter tensors are
// updated in place between graph constructions.
template <class T>
struct Adam {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  int64_t step_count = 0;

  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;

  static Adam create(const ParamList<T>& params, T lr = T(1e-3)) {
    Adam a;
    a.lr = lr;
    for (const auto& e : params) {
      if (!e.trainable) continue;
      Slot s;
      s.name = e.name;
      s.param = e.tensor;
      s.m.assign(static_cast<size_t>(e.tensor.numel()), T(0));
      s.v.assign(static_cast<size_t>(e.tensor.numel()), T(0));
      a.slots.push_back(std::move(s));
    }
    return a;
  }

  void zero_grad() {
    for (auto& s : slots) s.param.zero_grad();
  }

  // One update step reading gradients accumulated on the parameter tensors.
  // Missing gradients count as zero; non-finite gradients abort.
  void step() {
    ++step_count;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
    for (auto& s : slots) {
      auto vals = s.param.mutable_data();
      const auto grads = s.param.grad();
      const int64_t n = s.param.numel();
      for (int64_t i = 0; i < n; ++i) {
        const T g = grads.empty() ? T(0) : grads[size_t(i)];
        if (!std::isfinite(double(g)))
          throw ValueError("adam: non-finite gradient in parameter '" + s.name + "'");
        s.m[size_t(i)] = beta1 * s.m[size_t(i)] + (T(1) - beta1) * g;
        s.v[size_t(i)] = beta2 * s.v[size_t(i)] + (T(1) - beta2) * g * g;
        const T mhat = s.m[size_t(i)] / bc1;
        const T vhat = s.v[size_t(i)] / bc2;
        vals[size_t(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  int64_t param_scalars() const {
    int64_t n = 0;
    for (const auto& s : slots) n += s.param.numel();
    return n;
  }
};

}  // namespace kmamba
