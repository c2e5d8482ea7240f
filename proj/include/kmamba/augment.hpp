#pragma once

#include "kmamba/metrics.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

// Training-time augmentation: random axis flips (intensities and labels
// together), random crop, additive Gaussian noise (intensities only).
struct AugmentConfig {
  double flip_prob = 0.5;
  std::array<int64_t, 3> crop{0, 0, 0};  // 0 means keep full size
  double noise_sigma = 0.0;
};

template <class T>
Tensor<T> flip_volume(const Tensor<T>& x, std::array<bool, 3> axes) {
  check_shape(x.rank() == 4, "flip_volume: input must be [C,H,W,D]");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto xd = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        for (int64_t l = 0; l < d; ++l) {
          const int64_t si = axes[0] ? h - 1 - i : i;
          const int64_t sj = axes[1] ? w - 1 - j : j;
          const int64_t sl = axes[2] ? d - 1 - l : l;
          out[size_t(((ch * h + i) * w + j) * d + l)] = xd[size_t(((ch * h + si) * w + sj) * d + sl)];
        }
  return Tensor<T>::from(x.shape(), std::move(out));
}

inline LabelVolume flip_labels(const LabelVolume& v, std::array<bool, 3> axes) {
  const int64_t h = v.dims[0], w = v.dims[1], d = v.dims[2];
  std::vector<uint8_t> out(v.labels.size());
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t l = 0; l < d; ++l) {
        const int64_t si = axes[0] ? h - 1 - i : i;
        const int64_t sj = axes[1] ? w - 1 - j : j;
        const int64_t sl = axes[2] ? d - 1 - l : l;
        out[size_t((i * w + j) * d + l)] = v.labels[size_t((si * w + sj) * d + sl)];
      }
  return LabelVolume::create(v.dims, std::move(out), v.spacing);
}

template <class T>
Tensor<T> crop_volume(const Tensor<T>& x, std::array<int64_t, 3> origin, std::array<int64_t, 3> size) {
  check_shape(x.rank() == 4, "crop_volume: input must be [C,H,W,D]");
  for (int a = 0; a < 3; ++a)
    check_spec(size[size_t(a)] >= 1 && origin[size_t(a)] >= 0 &&
                   origin[size_t(a)] + size[size_t(a)] <= x.dim(a + 1),
               "crop_volume: crop window out of bounds");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  std::vector<T> out(static_cast<size_t>(c * size[0] * size[1] * size[2]));
  const auto xd = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < size[0]; ++i)
      for (int64_t j = 0; j < size[1]; ++j)
        for (int64_t l = 0; l < size[2]; ++l)
          out[size_t(((ch * size[0] + i) * size[1] + j) * size[2] + l)] =
              xd[size_t(((ch * h + origin[0] + i) * w + origin[1] + j) * d + origin[2] + l)];
  return Tensor<T>::from({c, size[0], size[1], size[2]}, std::move(out));
}

inline LabelVolume crop_labels(const LabelVolume& v, std::array<int64_t, 3> origin,
                               std::array<int64_t, 3> size) {
  std::vector<uint8_t> out(static_cast<size_t>(size[0] * size[1] * size[2]));
  for (int64_t i = 0; i < size[0]; ++i)
    for (int64_t j = 0; j < size[1]; ++j)
      for (int64_t l = 0; l < size[2]; ++l)
        out[size_t((i * size[1] + j) * size[2] + l)] =
            v.labels[size_t(((origin[0] + i) * v.dims[1] + origin[1] + j) * v.dims[2] + origin[2] + l)];
  return LabelVolume::create(size, std::move(out), v.spacing);
}

// Flips and crop apply identically to intensities and labels; noise touches
// intensities only, so the label value set never changes.
template <class T>
std::pair<Tensor<T>, LabelVolume> augment(const Tensor<T>& x, const LabelVolume& labels,
                                          uint64_t seed, const AugmentConfig& cfg) {
  check_shape(x.dim(1) == labels.dims[0] && x.dim(2) == labels.dims[1] && x.dim(3) == labels.dims[2],
              "augment: intensity/label dims mismatch");
  Rng rng(seed ^ 0xA076152A4BD53ull);

  std::array<bool, 3> axes{};
  for (auto& a : axes) a = rng.bernoulli(cfg.flip_prob);
  Tensor<T> img = flip_volume(x, axes);
  LabelVolume lab = flip_labels(labels, axes);

  std::array<int64_t, 3> size = cfg.crop;
  for (int a = 0; a < 3; ++a)
    if (size[size_t(a)] <= 0) size[size_t(a)] = lab.dims[size_t(a)];
  std::array<int64_t, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    check_spec(size[size_t(a)] <= lab.dims[size_t(a)], "augment: crop larger than volume");
    const int64_t slack = lab.dims[size_t(a)] - size[size_t(a)];
    origin[size_t(a)] = slack > 0 ? int64_t(rng.uniform_index(uint64_t(slack + 1))) : 0;
  }
  if (size != lab.dims || origin != std::array<int64_t, 3>{0, 0, 0}) {
    img = crop_volume(img, origin, size);
    lab = crop_labels(lab, origin, size);
  }

  if (cfg.noise_sigma > 0.0) {
    auto data = img.mutable_data();
    for (auto& v : data) v += static_cast<T>(rng.normal(0.0, cfg.noise_sigma));
  }
  return {std::move(img), std::move(lab)};
}

}  // namespace kmamba
