#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive and share no code with the library paths they check.

#include <array>
#include <cstdint>
#include <vector>

#include "kmamba/conv.hpp"

namespace oracle {

// Plain nested-loop 3D convolution (channels-first, grouped, padded,
// strided, dilated).
template <class T>
std::vector<T> conv3d_loops(const std::vector<T>& x, int64_t cin, int64_t h, int64_t w, int64_t d,
                            const std::vector<T>& wts, int64_t cout, const kmamba::ConvSpec& sp) {
  const int64_t cg = cin / sp.groups;
  const int64_t og = cout / sp.groups;
  const int64_t oh = sp.out_dim(h, 0), ow = sp.out_dim(w, 1), od = sp.out_dim(d, 2);
  std::vector<T> out(static_cast<size_t>(cout * oh * ow * od), T(0));
  for (int64_t oc = 0; oc < cout; ++oc) {
    const int64_t g = oc / og;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        for (int64_t l = 0; l < od; ++l) {
          T acc = T(0);
          for (int64_t c = 0; c < cg; ++c)
            for (int64_t a = 0; a < sp.kernel[0]; ++a)
              for (int64_t b = 0; b < sp.kernel[1]; ++b)
                for (int64_t e = 0; e < sp.kernel[2]; ++e) {
                  const int64_t ih = i * sp.stride[0] - sp.padding[0] + a * sp.dilation[0];
                  const int64_t iw = j * sp.stride[1] - sp.padding[1] + b * sp.dilation[1];
                  const int64_t id = l * sp.stride[2] - sp.padding[2] + e * sp.dilation[2];
                  if (ih < 0 || ih >= h || iw < 0 || iw >= w || id < 0 || id >= d) continue;
                  const T xv = x[size_t((((g * cg + c) * h + ih) * w + iw) * d + id)];
                  const T wv = wts[size_t((((oc * cg + c) * sp.kernel[0] + a) * sp.kernel[1] + b) *
                                              sp.kernel[2] +
                                          e)];
                  acc += xv * wv;
                }
          out[size_t(((oc * oh + i) * ow + j) * od + l)] = acc;
        }
  }
  return out;
}

// Scalar trilinear sampling oracle, align_corners=false, computed with corner
// weight products rather than nested lerps.
template <class T>
T trilinear_sample(const std::vector<T>& x, int64_t h, int64_t w, int64_t d, double sh, double sw,
                   double sd) {
  auto prep = [](double src, int64_t n) {
    const double fl = std::floor(src);
    int64_t lo = static_cast<int64_t>(fl);
    const double f = src - fl;
    int64_t hi = lo + 1;
    lo = std::min(std::max(lo, int64_t(0)), n - 1);
    hi = std::min(std::max(hi, int64_t(0)), n - 1);
    return std::array<double, 3>{double(lo), double(hi), f};
  };
  const auto ah = prep(sh, h), aw = prep(sw, w), ad = prep(sd, d);
  T acc = T(0);
  for (int ci = 0; ci < 2; ++ci)
    for (int cj = 0; cj < 2; ++cj)
      for (int cl = 0; cl < 2; ++cl) {
        const double wgt = (ci ? ah[2] : 1.0 - ah[2]) * (cj ? aw[2] : 1.0 - aw[2]) *
                           (cl ? ad[2] : 1.0 - ad[2]);
        const int64_t ih = static_cast<int64_t>(ci ? ah[1] : ah[0]);
        const int64_t iw = static_cast<int64_t>(cj ? aw[1] : aw[0]);
        const int64_t id = static_cast<int64_t>(cl ? ad[1] : ad[0]);
        acc += static_cast<T>(wgt) * x[size_t((ih * w + iw) * d + id)];
      }
  return acc;
}

// Cox-de Boor recursion, the direct piecewise-polynomial route.
inline double bspline_basis_recursive(const std::vector<double>& kt, int64_t j, int k, double x) {
  if (k == 0) return (kt[size_t(j)] <= x && x < kt[size_t(j + 1)]) ? 1.0 : 0.0;
  double acc = 0.0;
  const double dl = kt[size_t(j + k)] - kt[size_t(j)];
  if (dl > 0.0) acc += (x - kt[size_t(j)]) / dl * bspline_basis_recursive(kt, j, k - 1, x);
  const double dr = kt[size_t(j + k + 1)] - kt[size_t(j + 1)];
  if (dr > 0.0) acc += (kt[size_t(j + k + 1)] - x) / dr * bspline_basis_recursive(kt, j + 1, k - 1, x);
  return acc;
}

inline double bspline_value_recursive(const std::vector<double>& kt, const std::vector<double>& coeffs,
                                      int k, double x) {
  double acc = 0.0;
  for (size_t b = 0; b < coeffs.size(); ++b)
    acc += coeffs[b] * bspline_basis_recursive(kt, static_cast<int64_t>(b), k, x);
  return acc;
}

// Hand-stepped scalar Adam trace.
struct ScalarAdam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int64_t t = 0;

  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, double(t)));
    const double vh = v / (1 - std::pow(b2, double(t)));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
