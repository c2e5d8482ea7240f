#pragma once

#include <functional>
#include <string>

#include "kmamba/rng.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

struct GradCheckReport {
  bool pass = true;
  double worst_rel = 0.0;   // |ad - fd| / (floor + max(|ad|, |fd|))
  std::string worst_site;   // "<leaf>[i]"
  int64_t coords_checked = 0;
};

// Central finite-difference check of reverse-mode gradients.
//   forward: rebuilds the graph from the (mutated) leaf values, returns the
//            scalar objective.
//   leaves:  named tensors to perturb; their autodiff gradients are compared
//            coordinate by coordinate.
// Passing criterion per coordinate: |ad - fd| <= atol + rtol*max(|ad|,|fd|).
// max_coords > 0 subsamples coordinates of large leaves deterministically.
template <class T>
GradCheckReport gradcheck(const std::function<Tensor<T>()>& forward,
                          const std::vector<std::pair<std::string, Tensor<T>>>& leaves,
                          T step = T(1e-4), double rtol = 1e-4, double atol = 1e-7,
                          int64_t max_coords = -1, uint64_t sample_seed = 17) {
  for (auto& [name, leaf] : leaves) {
    check_value(leaf.requires_grad(), "gradcheck: leaf '" + name + "' must require grad");
    const_cast<Tensor<T>&>(leaf).zero_grad();
  }

  Tensor<T> root = forward();
  backward(root);

  GradCheckReport rep;
  const double floor = atol / rtol;
  Rng rng(sample_seed);
  for (auto& [name, leaf] : leaves) {
    auto& tensor = const_cast<Tensor<T>&>(leaf);
    const int64_t n = tensor.numel();
    std::vector<int64_t> coords;
    if (max_coords > 0 && n > max_coords) {
      for (int64_t j = 0; j < max_coords; ++j)
        coords.push_back(static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n))));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t j = 0; j < n; ++j) coords[size_t(j)] = j;
    }
    const auto ad = tensor.grad();
    for (int64_t i : coords) {
      auto vals = tensor.mutable_data();
      const T keep = vals[size_t(i)];
      vals[size_t(i)] = keep + step;
      const T fplus = forward().item();
      vals[size_t(i)] = keep - step;
      const T fminus = forward().item();
      vals[size_t(i)] = keep;
      const double fd = (double(fplus) - double(fminus)) / (2.0 * double(step));
      const double a = ad.empty() ? 0.0 : double(ad[size_t(i)]);
      const double rel = std::abs(a - fd) / (floor + std::max(std::abs(a), std::abs(fd)));
      ++rep.coords_checked;
      if (rel > rep.worst_rel) {
        rep.worst_rel = rel;
        rep.worst_site = name + "[" + std::to_string(i) + "]";
      }
      if (rel > rtol) rep.pass = false;
    }
  }
  return rep;
}

}  // namespace kmamba
