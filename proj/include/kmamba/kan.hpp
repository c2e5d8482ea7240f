#pragma once

#include <vector>

#include "kmamba/layers.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

namespace bspline {

// Extended knot vector: `grid` interval boundaries padded by `order` uniform
// steps on each side so every basis function has full support on the grid.
template <class T>
std::vector<T> extend_knots(const std::vector<T>& grid, int order) {
  if (static_cast<int>(grid.size()) < order + 2)
    throw InvalidSpecError("bspline: grid needs at least order+2 knots");
  for (size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InvalidSpecError("bspline: grid must be strictly increasing");
  const T h_lo = grid[1] - grid[0];
  const T h_hi = grid[grid.size() - 1] - grid[grid.size() - 2];
  std::vector<T> kt;
  kt.reserve(grid.size() + 2 * static_cast<size_t>(order));
  for (int i = order; i >= 1; --i) kt.push_back(grid.front() - static_cast<T>(i) * h_lo);
  kt.insert(kt.end(), grid.begin(), grid.end());
  for (int i = 1; i <= order; ++i) kt.push_back(grid.back() + static_cast<T>(i) * h_hi);
  return kt;
}

template <class T>
int64_t num_basis(const std::vector<T>& grid, int order) {
  return static_cast<int64_t>(grid.size()) - 1 + order;
}

// Nonzero basis values (and optionally first derivatives) at x, which must
// lie inside [grid.front(), grid.back()]. Writes order+1 values covering
// basis indices [span-order, span]; returns span-order (first basis index).
template <class T>
int64_t basis_at(const std::vector<T>& kt, int order, int64_t nbasis, T x, T* vals, T* derivs) {
  const int k = order;
  // span i such that kt[i] <= x < kt[i+1], clamped to the supported range.
  int64_t lo = k, hi = nbasis - 1;  // valid spans: [k, nbasis-1]
  int64_t i = hi;
  if (x < kt[size_t(hi)]) {
    while (lo < hi) {
      const int64_t mid = (lo + hi) / 2;
      if (x < kt[size_t(mid + 1)])
        hi = mid;
      else
        lo = mid + 1;
    }
    i = lo;
  }

  std::vector<T> left(static_cast<size_t>(k + 1)), right(static_cast<size_t>(k + 1));
  std::vector<T> lower;  // degree k-1 values when derivatives are requested
  vals[0] = T(1);
  for (int j = 1; j <= k; ++j) {
    if (derivs && j == k) lower.assign(vals, vals + k);
    left[size_t(j)] = x - kt[size_t(i + 1 - j)];
    right[size_t(j)] = kt[size_t(i + j)] - x;
    T saved = T(0);
    for (int r = 0; r < j; ++r) {
      const T temp = vals[r] / (right[size_t(r + 1)] + left[size_t(j - r)]);
      vals[r] = saved + right[size_t(r + 1)] * temp;
      saved = left[size_t(j - r)] * temp;
    }
    vals[j] = saved;
  }

  if (derivs) {
    if (k == 0) {
      derivs[0] = T(0);
    } else {
      // B'_{b,k} = k * ( B_{b,k-1}/(kt[b+k]-kt[b]) - B_{b+1,k-1}/(kt[b+k+1]-kt[b+1]) )
      for (int r = 0; r <= k; ++r) {
        const int64_t b = i - k + r;
        T acc = T(0);
        if (r >= 1) acc += lower[size_t(r - 1)] / (kt[size_t(b + k)] - kt[size_t(b)]);
        if (r <= k - 1) acc -= lower[size_t(r)] / (kt[size_t(b + k + 1)] - kt[size_t(b + 1)]);
        derivs[r] = static_cast<T>(k) * acc;
      }
    }
  }
  return i - k;
}

// Coefficients that reproduce f(x) = x exactly (Greville abscissae).
template <class T>
std::vector<T> identity_coeffs(const std::vector<T>& grid, int order) {
  const auto kt = extend_knots(grid, order);
  const int64_t nb = num_basis(grid, order);
  std::vector<T> c(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b) {
    T acc = T(0);
    for (int j = 1; j <= order; ++j) acc += kt[size_t(b + j)];
    c[size_t(b)] = order > 0 ? acc / static_cast<T>(order) : (kt[size_t(b)] + kt[size_t(b + 1)]) / T(2);
  }
  return c;
}

}  // namespace bspline

// Scalar piecewise-polynomial evaluation; inputs outside the grid are
// linearly extrapolated from the boundary value and slope.
template <class T>
T eval_univariate(T x, std::span<const T> coeffs, const std::vector<T>& grid, int order) {
  const auto kt = bspline::extend_knots(grid, order);
  const int64_t nb = bspline::num_basis(grid, order);
  check_shape(static_cast<int64_t>(coeffs.size()) == nb,
              "eval_univariate: expected " + std::to_string(nb) + " coefficients");
  const T lo = grid.front(), hi = grid.back();
  const T xq = std::min(std::max(x, lo), hi);
  std::vector<T> vals(static_cast<size_t>(order + 1)), der(static_cast<size_t>(order + 1));
  const bool outside = x < lo || x > hi;
  const int64_t first = bspline::basis_at(kt, order, nb, xq, vals.data(), outside ? der.data() : nullptr);
  T f = T(0), df = T(0);
  for (int r = 0; r <= order; ++r) {
    f += coeffs[size_t(first + r)] * vals[size_t(r)];
    if (outside) df += coeffs[size_t(first + r)] * der[size_t(r)];
  }
  return outside ? f + df * (x - xq) : f;
}

enum class BaseActivation { linear, silu };

// One bank of learnable univariate functions applied feature-wise and summed:
//   y[n,o] = sum_p f_{o,p}(x[n,p]),  f given by B-spline coefficients.
template <class T>
Tensor<T> spline_layer(const Tensor<T>& x, const Tensor<T>& coeffs, const std::vector<T>& grid,
                       int order) {
  check_shape(x.rank() == 2, "spline_layer: input must be [N, P]");
  check_shape(coeffs.rank() == 3, "spline_layer: coeffs must be [P_out, P, B]");
  const int64_t n = x.dim(0), p = x.dim(1), pout = coeffs.dim(0);
  const int64_t nb = bspline::num_basis(grid, order);
  check_shape(coeffs.dim(1) == p && coeffs.dim(2) == nb,
              "spline_layer: coeffs shape " + shape_str(coeffs.shape()) + " inconsistent");
  const auto kt = bspline::extend_knots(grid, order);
  const T lo = grid.front(), hi = grid.back();

  std::vector<T> out(static_cast<size_t>(n * pout), T(0));
  const auto xd = x.data();
  const auto cd = coeffs.data();
  const int k1 = order + 1;
  std::vector<T> vals(static_cast<size_t>(k1)), der(static_cast<size_t>(k1));
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t j = 0; j < p; ++j) {
      const T xv = xd[size_t(r * p + j)];
      const T xq = std::min(std::max(xv, lo), hi);
      const bool outside = xv < lo || xv > hi;
      const int64_t first =
          bspline::basis_at(kt, order, nb, xq, vals.data(), outside ? der.data() : nullptr);
      for (int64_t o = 0; o < pout; ++o) {
        const T* c = cd.data() + (o * p + j) * nb + first;
        T f = T(0);
        for (int i = 0; i < k1; ++i) f += c[i] * vals[size_t(i)];
        if (outside) {
          T df = T(0);
          for (int i = 0; i < k1; ++i) df += c[i] * der[size_t(i)];
          f += df * (xv - xq);
        }
        out[size_t(r * pout + o)] += f;
      }
    }
  }

  auto backward = [x, coeffs, grid, order, kt, n, p, pout, nb, lo, hi](TensorNode<T>& nd) {
    const auto xd2 = x.data();
    const auto cd2 = coeffs.data();
    T* gx = x.requires_grad() ? x.node()->ensure_grad().data() : nullptr;
    T* gc = coeffs.requires_grad() ? coeffs.node()->ensure_grad().data() : nullptr;
    if (!gx && !gc) return;
    const int k1 = order + 1;
    std::vector<T> vals(static_cast<size_t>(k1)), der(static_cast<size_t>(k1));
    for (int64_t r = 0; r < n; ++r) {
      for (int64_t j = 0; j < p; ++j) {
        const T xv = xd2[size_t(r * p + j)];
        const T xq = std::min(std::max(xv, lo), hi);
        const bool outside = xv < lo || xv > hi;
        const int64_t first = bspline::basis_at(kt, order, nb, xq, vals.data(), der.data());
        T dxacc = T(0);
        for (int64_t o = 0; o < pout; ++o) {
          const T g = nd.grad[size_t(r * pout + o)];
          if (g == T(0)) continue;
          const int64_t cbase = (o * p + j) * nb + first;
          if (gc) {
            if (outside) {
              // d/dc of f(xq) + f'(xq)*(x-xq)
              for (int i = 0; i < k1; ++i)
                gc[size_t(cbase + i)] += g * (vals[size_t(i)] + der[size_t(i)] * (xv - xq));
            } else {
              for (int i = 0; i < k1; ++i) gc[size_t(cbase + i)] += g * vals[size_t(i)];
            }
          }
          if (gx) {
            const T* c = cd2.data() + cbase;
            T df = T(0);
            for (int i = 0; i < k1; ++i) df += c[i] * der[size_t(i)];
            dxacc += g * df;  // outside the grid the slope is the boundary slope
          }
        }
        if (gx) gx[size_t(r * p + j)] += dxacc;
      }
    }
  };

  return detail::make_node<T>({n, pout}, std::move(out), {x, coeffs}, std::move(backward));
}

// Kolmogorov-Arnold style operator on feature vectors: an inner bank maps
// P -> Q, an outer bank maps Q -> P_out, plus a gated linear bypass. No
// explicit activation separates the two kernel stages.
template <class T>
struct KanLayer {
  int64_t in_dim = 0;    // P
  int64_t hidden = 0;    // Q
  int64_t out_dim = 0;   // P_out
  std::vector<T> grid;   // knot positions over [-g, g]
  int spline_order = 3;
  Tensor<T> inner_coeffs;  // [Q, P, B]
  Tensor<T> outer_coeffs;  // [P_out, Q, B]
  Tensor<T> base_weight;   // [P, P_out]
  BaseActivation base_act = BaseActivation::silu;

  static std::vector<T> default_grid(int64_t intervals = 8, T half_range = T(3)) {
    std::vector<T> g(static_cast<size_t>(intervals + 1));
    for (int64_t i = 0; i <= intervals; ++i)
      g[size_t(i)] = -half_range + T(2) * half_range * static_cast<T>(i) / static_cast<T>(intervals);
    return g;
  }

  static KanLayer create(int64_t p, int64_t q, int64_t p_out, Rng& rng,
                         std::vector<T> grid_in = default_grid(), int order = 3) {
    KanLayer l;
    l.in_dim = p;
    l.hidden = q;
    l.out_dim = p_out;
    l.grid = std::move(grid_in);
    l.spline_order = order;
    const int64_t nb = bspline::num_basis(l.grid, order);
    l.inner_coeffs = Tensor<T>::randn({q, p, nb}, rng, T(0.1) / std::sqrt(static_cast<T>(p)));
    l.inner_coeffs.set_requires_grad();
    l.outer_coeffs = Tensor<T>::randn({p_out, q, nb}, rng, T(0.1) / std::sqrt(static_cast<T>(q)));
    l.outer_coeffs.set_requires_grad();
    // Near-identity bypass carries the signal while the kernel banks are
    // still a small perturbation.
    l.base_weight = Tensor<T>::zeros({p, p_out});
    for (int64_t i = 0; i < std::min(p, p_out); ++i)
      l.base_weight.mutable_data()[size_t(i * p_out + i)] = T(1);
    l.base_weight.set_requires_grad();
    return l;
  }

  static KanLayer zero_init(int64_t p, int64_t q, int64_t p_out,
                            std::vector<T> grid_in = default_grid(), int order = 3) {
    KanLayer l;
    l.in_dim = p;
    l.hidden = q;
    l.out_dim = p_out;
    l.grid = std::move(grid_in);
    l.spline_order = order;
    const int64_t nb = bspline::num_basis(l.grid, order);
    l.inner_coeffs = Tensor<T>::zeros({q, p, nb});
    l.inner_coeffs.set_requires_grad();
    l.outer_coeffs = Tensor<T>::zeros({p_out, q, nb});
    l.outer_coeffs.set_requires_grad();
    l.base_weight = Tensor<T>::zeros({p, p_out});
    l.base_weight.set_requires_grad();
    return l;
  }

  int64_t param_count() const {
    return inner_coeffs.numel() + outer_coeffs.numel() + base_weight.numel();
  }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".inner_coeffs", inner_coeffs);
    add_param(out, prefix + ".outer_coeffs", outer_coeffs);
    add_param(out, prefix + ".base_weight", base_weight);
  }
};

template <class T>
Tensor<T> kan_forward(const Tensor<T>& x, const KanLayer<T>& layer) {
  check_shape(x.rank() == 2 && x.dim(1) == layer.in_dim,
              "kan_forward: input must be [N, " + std::to_string(layer.in_dim) + "]");
  Tensor<T> z = spline_layer(x, layer.inner_coeffs, layer.grid, layer.spline_order);
  Tensor<T> y = spline_layer(z, layer.outer_coeffs, layer.grid, layer.spline_order);
  Tensor<T> base = layer.base_act == BaseActivation::silu ? silu(x) : x;
  return add(y, matmul(base, layer.base_weight));
}

}  // namespace kmamba
