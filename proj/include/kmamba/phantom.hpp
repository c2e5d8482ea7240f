#pragma once

#include "kmamba/metrics.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

// Synthetic multi-modal test object: nested ellipsoids (whole > core >
// enhancing sphere) over background, with modality-specific contrast
// profiles. Labels: 0 background, 1 whole-only, 2 core-only, 3 enhancing.
template <class T>
struct Phantom {
  Tensor<T> intensities;  // [modalities, S, S, S]
  LabelVolume labels;
  uint64_t seed = 0;
};

namespace detail {
// Region contrast table [modality % 4][region]: background, whole, core,
// enhancing. Profiles differ per modality the way multi-parametric MR
// channels do.
inline constexpr double kContrast[4][4] = {
    {0.20, 0.35, 0.50, 0.80},
    {0.18, 0.30, 0.45, 0.95},
    {0.25, 0.70, 0.55, 0.40},
    {0.15, 0.80, 0.60, 0.50},
};
}  // namespace detail

template <class T>
Phantom<T> generate_phantom(uint64_t seed, int64_t size, double noise_sigma,
                            int64_t modalities = 4) {
  check_spec(size >= 16, "generate_phantom: size must be >= 16");
  check_spec(modalities >= 1, "generate_phantom: need at least one modality");
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);

  const double s = double(size);
  // Outer ellipsoid: center jitter and semi-axes chosen so the foreground
  // fraction stays in the low percent range.
  std::array<double, 3> center, whole_ax, core_ax;
  for (auto& c : center) c = s * 0.5 + rng.uniform(-s / 16.0, s / 16.0);
  for (auto& a : whole_ax) a = s * rng.uniform(0.22, 0.30);
  for (int i = 0; i < 3; ++i) core_ax[size_t(i)] = whole_ax[size_t(i)] * rng.uniform(0.50, 0.62);
  std::array<double, 3> enh_center;
  for (int i = 0; i < 3; ++i)
    enh_center[size_t(i)] = center[size_t(i)] + core_ax[size_t(i)] * rng.uniform(-0.15, 0.15);
  double enh_r = std::min({core_ax[0], core_ax[1], core_ax[2]}) * rng.uniform(0.35, 0.50);

  // Per-seed contrast jitter and a gentle per-modality intensity gradient.
  std::vector<double> jitter(static_cast<size_t>(modalities * 4));
  for (auto& j : jitter) j = rng.uniform(-0.05, 0.05);
  std::vector<double> grad_dir(static_cast<size_t>(modalities));
  for (auto& g : grad_dir) g = rng.uniform(-0.08, 0.08);

  std::vector<uint8_t> labels(static_cast<size_t>(size * size * size), 0);
  auto inside = [](double x, double y, double z, const std::array<double, 3>& c,
                   const std::array<double, 3>& ax) {
    const double u = (x - c[0]) / ax[0], v = (y - c[1]) / ax[1], w = (z - c[2]) / ax[2];
    return u * u + v * v + w * w <= 1.0;
  };
  for (int64_t i = 0; i < size; ++i)
    for (int64_t j = 0; j < size; ++j)
      for (int64_t l = 0; l < size; ++l) {
        const double x = double(i) + 0.5, y = double(j) + 0.5, z = double(l) + 0.5;
        if (!inside(x, y, z, center, whole_ax)) continue;
        uint8_t lab = 1;
        if (inside(x, y, z, center, core_ax)) {
          lab = 2;
          const double dx = x - enh_center[0], dy = y - enh_center[1], dz = z - enh_center[2];
          if (dx * dx + dy * dy + dz * dz <= enh_r * enh_r) lab = 3;
        }
        labels[size_t((i * size + j) * size + l)] = lab;
      }

  Tensor<T> vol = Tensor<T>::zeros({modalities, size, size, size});
  auto vd = vol.mutable_data();
  const int64_t v = size * size * size;
  for (int64_t m = 0; m < modalities; ++m) {
    const auto& base = detail::kContrast[m % 4];
    for (int64_t i = 0; i < size; ++i) {
      const double gradient = grad_dir[size_t(m)] * (double(i) / s - 0.5);
      for (int64_t j = 0; j < size; ++j)
        for (int64_t l = 0; l < size; ++l) {
          const int64_t idx = (i * size + j) * size + l;
          const int lab = labels[size_t(idx)];
          double val = base[lab] + jitter[size_t(m * 4 + lab)] + gradient;
          if (noise_sigma > 0.0) val += rng.normal(0.0, noise_sigma);
          vd[size_t(m * v + idx)] = static_cast<T>(val);
        }
    }
  }

  Phantom<T> p;
  p.intensities = vol;
  p.labels = LabelVolume::create({size, size, size}, std::move(labels));
  p.seed = seed;
  return p;
}

}  // namespace kmamba
