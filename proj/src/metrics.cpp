#include "kmamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kmamba {

namespace {

constexpr double kInf = 1e30;

void check_dims(const LabelVolume& a, const LabelVolume& b) {
  check_shape(a.dims == b.dims, "metrics: volume dims mismatch");
}

struct OverlapCounts {
  int64_t na = 0, nb = 0, nab = 0;
};

OverlapCounts overlap(const LabelVolume& a, const LabelVolume& b, int cls) {
  check_dims(a, b);
  OverlapCounts c;
  const uint8_t u = static_cast<uint8_t>(cls);
  for (int64_t i = 0; i < a.voxels(); ++i) {
    const bool ia = a.labels[size_t(i)] == u;
    const bool ib = b.labels[size_t(i)] == u;
    c.na += ia;
    c.nb += ib;
    c.nab += ia && ib;
  }
  return c;
}

// One-dimensional squared-distance transform (lower envelope of parabolas),
// exact for grid-sampled inputs. w2 is the squared axis spacing.
void dt1d(const double* f, int64_t n, double w2, double* d, double* z, int64_t* v) {
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int64_t q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const double fq = f[q] + w2 * double(q) * double(q);
      const double fv = f[v[k]] + w2 * double(v[k]) * double(v[k]);
      s = (fq - fv) / (2.0 * w2 * double(q - v[k]));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q - v[k]);
    d[q] = w2 * dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from every voxel to the nearest seed voxel.
// Passes run D, then W, then H so the addition order matches the brute-force
// route term for term.
std::vector<double> edt_squared(const std::array<int64_t, 3>& dims,
                                const std::array<double, 3>& spacing,
                                const std::vector<uint8_t>& seed) {
  const int64_t h = dims[0], w = dims[1], d = dims[2];
  std::vector<double> g(static_cast<size_t>(h * w * d));
  for (int64_t i = 0; i < h * w * d; ++i) g[size_t(i)] = seed[size_t(i)] ? 0.0 : kInf;

  const int64_t nmax = std::max({h, w, d});
  std::vector<double> f(static_cast<size_t>(nmax)), out(static_cast<size_t>(nmax));
  std::vector<double> z(static_cast<size_t>(nmax + 1));
  std::vector<int64_t> v(static_cast<size_t>(nmax));

  // D axis (stride 1)
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double* row = g.data() + (i * w + j) * d;
      dt1d(row, d, spacing[2] * spacing[2], out.data(), z.data(), v.data());
      std::copy(out.begin(), out.begin() + d, row);
    }
  // W axis
  for (int64_t i = 0; i < h; ++i)
    for (int64_t l = 0; l < d; ++l) {
      for (int64_t j = 0; j < w; ++j) f[size_t(j)] = g[size_t((i * w + j) * d + l)];
      dt1d(f.data(), w, spacing[1] * spacing[1], out.data(), z.data(), v.data());
      for (int64_t j = 0; j < w; ++j) g[size_t((i * w + j) * d + l)] = out[size_t(j)];
    }
  // H axis
  for (int64_t j = 0; j < w; ++j)
    for (int64_t l = 0; l < d; ++l) {
      for (int64_t i = 0; i < h; ++i) f[size_t(i)] = g[size_t((i * w + j) * d + l)];
      dt1d(f.data(), h, spacing[0] * spacing[0], out.data(), z.data(), v.data());
      for (int64_t i = 0; i < h; ++i) g[size_t((i * w + j) * d + l)] = out[size_t(i)];
    }
  return g;
}

// ceil(0.95 * n)-th smallest of the pooled squared distances, as a distance.
double percentile95(std::vector<double>& sq) {
  const int64_t n = static_cast<int64_t>(sq.size());
  int64_t rank = (95 * n + 99) / 100;  // ceil(0.95 n), integer arithmetic
  rank = std::max<int64_t>(1, std::min(rank, n));
  std::nth_element(sq.begin(), sq.begin() + (rank - 1), sq.end());
  return std::sqrt(sq[size_t(rank - 1)]);
}

std::vector<uint8_t> surface_mask(const LabelVolume& vol, int cls) {
  const int64_t h = vol.dims[0], w = vol.dims[1], d = vol.dims[2];
  const uint8_t u = static_cast<uint8_t>(cls);
  std::vector<uint8_t> mask(static_cast<size_t>(h * w * d), 0);
  auto in_set = [&](int64_t i, int64_t j, int64_t l) {
    if (i < 0 || i >= h || j < 0 || j >= w || l < 0 || l >= d) return false;
    return vol.labels[size_t((i * w + j) * d + l)] == u;
  };
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t l = 0; l < d; ++l) {
        if (!in_set(i, j, l)) continue;
        const bool boundary = !in_set(i - 1, j, l) || !in_set(i + 1, j, l) || !in_set(i, j - 1, l) ||
                              !in_set(i, j + 1, l) || !in_set(i, j, l - 1) || !in_set(i, j, l + 1);
        if (boundary) mask[size_t((i * w + j) * d + l)] = 1;
      }
  return mask;
}

}  // namespace

LabelVolume LabelVolume::create(std::array<int64_t, 3> dims, std::vector<uint8_t> labels,
                                std::array<double, 3> spacing) {
  check_shape(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, "LabelVolume: dims must be >= 1");
  check_shape(static_cast<int64_t>(labels.size()) == dims[0] * dims[1] * dims[2],
              "LabelVolume: label count does not match dims");
  LabelVolume v;
  v.dims = dims;
  v.labels = std::move(labels);
  v.spacing = spacing;
  return v;
}

double dice(const LabelVolume& a, const LabelVolume& b, int cls) {
  const OverlapCounts c = overlap(a, b, cls);
  if (c.na == 0 && c.nb == 0) return 1.0;
  return 2.0 * double(c.nab) / double(c.na + c.nb);
}

double iou(const LabelVolume& a, const LabelVolume& b, int cls) {
  const OverlapCounts c = overlap(a, b, cls);
  const int64_t uni = c.na + c.nb - c.nab;
  if (uni == 0) return 1.0;
  return double(c.nab) / double(uni);
}

std::vector<std::array<int64_t, 3>> surface_voxels(const LabelVolume& v, int cls) {
  const auto mask = surface_mask(v, cls);
  std::vector<std::array<int64_t, 3>> pts;
  const int64_t h = v.dims[0], w = v.dims[1], d = v.dims[2];
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t l = 0; l < d; ++l)
        if (mask[size_t((i * w + j) * d + l)]) pts.push_back({i, j, l});
  return pts;
}

double hd95_bruteforce(const LabelVolume& a, const LabelVolume& b, int cls) {
  check_dims(a, b);
  const auto sa = surface_voxels(a, cls);
  const auto sb = surface_voxels(b, cls);
  if (sa.empty() || sb.empty())
    throw UndefinedMetricError("hd95: empty boundary set for class " + std::to_string(cls));
  const double sh = a.spacing[0], sw = a.spacing[1], sd = a.spacing[2];
  auto directed = [&](const std::vector<std::array<int64_t, 3>>& from,
                      const std::vector<std::array<int64_t, 3>>& to, std::vector<double>& pool) {
    for (const auto& p : from) {
      double best = kInf;
      for (const auto& q : to) {
        const double dd = double(p[2] - q[2]) * sd;
        const double dw = double(p[1] - q[1]) * sw;
        const double dh = double(p[0] - q[0]) * sh;
        // Term order matches the distance-transform accumulation (D, W, H).
        double s = dd * dd;
        s += dw * dw;
        s += dh * dh;
        if (s < best) best = s;
      }
      pool.push_back(best);
    }
  };
  std::vector<double> pool;
  pool.reserve(sa.size() + sb.size());
  directed(sa, sb, pool);
  directed(sb, sa, pool);
  return percentile95(pool);
}

double hd95_distance_transform(const LabelVolume& a, const LabelVolume& b, int cls) {
  check_dims(a, b);
  const auto ma = surface_mask(a, cls);
  const auto mb = surface_mask(b, cls);
  const bool ea = std::find(ma.begin(), ma.end(), uint8_t(1)) == ma.end();
  const bool eb = std::find(mb.begin(), mb.end(), uint8_t(1)) == mb.end();
  if (ea || eb) throw UndefinedMetricError("hd95: empty boundary set for class " + std::to_string(cls));

  const auto dta = edt_squared(a.dims, a.spacing, ma);  // distance to surface(a)
  const auto dtb = edt_squared(b.dims, b.spacing, mb);
  std::vector<double> pool;
  for (int64_t i = 0; i < a.voxels(); ++i) {
    if (ma[size_t(i)]) pool.push_back(dtb[size_t(i)]);
    if (mb[size_t(i)]) pool.push_back(dta[size_t(i)]);
  }
  return percentile95(pool);
}

double hd95(const LabelVolume& a, const LabelVolume& b, int cls) {
  constexpr int64_t kBruteVoxelLimit = 24 * 24 * 24;
  if (a.voxels() <= kBruteVoxelLimit) return hd95_bruteforce(a, b, cls);
  return hd95_distance_transform(a, b, cls);
}

}  // namespace kmamba
