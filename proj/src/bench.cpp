#include "kmamba/bench.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kmamba/parallel.hpp"
#include "kmamba/rng.hpp"
#include "kmamba/ssm.hpp"

namespace kmamba {

namespace {

using Clock = std::chrono::steady_clock;

double now_ns() {
  return double(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch())
                    .count());
}

// exp(x) via 2^(x*log2 e) with a cubic fit of 2^f on [0,1). Branchless and
// bit_cast-based so the compiler can vectorize loops over it; relative error
// ~2e-4, which only has to be consistent across sequence lengths here.
inline float fast_exp(float x) {
  x = std::max(std::min(x, 80.0f), -80.0f);
  const float t = x * 1.4426950408889634f;
  const float fi = std::floor(t);
  const float f = t - fi;
  const float p = 1.0f + f * (0.69583f + f * (0.22606f + f * 0.07811f));
  const int32_t bits = (static_cast<int32_t>(fi) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

struct Stats {
  double mean = 0.0, stdev = 0.0;
};

template <class Fn>
Stats time_reps(int reps, Fn&& fn) {
  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_ns();
    fn();
    samples.push_back(now_ns() - t0);
  }
  Stats s;
  for (double v : samples) s.mean += v;
  s.mean /= double(samples.size());
  for (double v : samples) s.stdev += (v - s.mean) * (v - s.mean);
  s.stdev = std::sqrt(s.stdev / double(samples.size()));
  return s;
}

}  // namespace

void attention_naive(const float* q, const float* k, const float* v, float* out, int64_t t,
                     int64_t d) {
  std::vector<float> scores(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) {
    float mx = -1e30f;
    for (int64_t j = 0; j < t; ++j) {
      float s = 0.0f;
      for (int64_t e = 0; e < d; ++e) s += q[i * d + e] * k[j * d + e];
      scores[size_t(j)] = s;
      mx = std::max(mx, s);
    }
    float denom = 0.0f;
    for (int64_t j = 0; j < t; ++j) {
      scores[size_t(j)] = std::exp(scores[size_t(j)] - mx);
      denom += scores[size_t(j)];
    }
    for (int64_t e = 0; e < d; ++e) {
      float acc = 0.0f;
      for (int64_t j = 0; j < t; ++j) acc += scores[size_t(j)] * v[j * d + e];
      out[i * d + e] = acc / denom;
    }
  }
}

// Cache-tiled single-head attention with online softmax. Work is Theta(T^2 d);
// memory stays O(T d + tiles). Keys/values are transposed to [d][T] so every
// inner pass streams contiguous lanes; each query row belongs to one worker.
void attention_tiled(const float* q, const float* k, const float* v, float* out, int64_t t,
                     int64_t d) {
  std::vector<float> kt(static_cast<size_t>(d * t)), vt(static_cast<size_t>(d * t));
  for (int64_t j = 0; j < t; ++j)
    for (int64_t e = 0; e < d; ++e) {
      kt[size_t(e * t + j)] = k[j * d + e];
      vt[size_t(e * t + j)] = v[j * d + e];
    }

  constexpr int64_t kQ = 64, kK = 4096;
  parallel_for(0, (t + kQ - 1) / kQ, [&](int64_t qb) {
    const int64_t q0 = qb * kQ, q1 = std::min(t, q0 + kQ);
    const int64_t nq = q1 - q0;
    std::vector<float> m(static_cast<size_t>(nq), -1e30f);
    std::vector<float> l(static_cast<size_t>(nq), 0.0f);
    std::vector<float> acc(static_cast<size_t>(nq * d), 0.0f);
    std::vector<float> s(static_cast<size_t>(kK));
    for (int64_t k0 = 0; k0 < t; k0 += kK) {
      const int64_t nk = std::min(t, k0 + kK) - k0;
      for (int64_t i = 0; i < nq; ++i) {
        const float* qi = q + (q0 + i) * d;
        float* si = s.data();
        {
          const float* kr = kt.data() + k0;
          const float q0v = qi[0];
          for (int64_t j = 0; j < nk; ++j) si[j] = q0v * kr[j];
        }
        for (int64_t e = 1; e < d; ++e) {
          const float* kr = kt.data() + e * t + k0;
          const float qe = qi[e];
          for (int64_t j = 0; j < nk; ++j) si[j] += qe * kr[j];
        }
        float bm = m[size_t(i)];
        for (int64_t j = 0; j < nk; ++j) bm = std::max(bm, si[j]);
        const float rescale = fast_exp(m[size_t(i)] - bm);
        m[size_t(i)] = bm;
        float lsum = 0.0f;
        for (int64_t j = 0; j < nk; ++j) {
          si[j] = fast_exp(si[j] - bm);
          lsum += si[j];
        }
        l[size_t(i)] = l[size_t(i)] * rescale + lsum;
        float* ai = acc.data() + i * d;
        for (int64_t e = 0; e < d; ++e) {
          const float* vr = vt.data() + e * t + k0;
          float dot = 0.0f;
          for (int64_t j = 0; j < nk; ++j) dot += si[j] * vr[j];
          ai[e] = ai[e] * rescale + dot;
        }
      }
    }
    for (int64_t i = 0; i < nq; ++i) {
      const float inv = 1.0f / l[size_t(i)];
      for (int64_t e = 0; e < d; ++e) out[(q0 + i) * d + e] = acc[size_t(i * d + e)] * inv;
    }
  });
}

double fit_loglog_slope(const std::vector<BenchRow>& rows) {
  const double n = double(rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    const double x = std::log(double(r.t));
    const double y = std::log(r.mean_ns);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BenchResult bench_scan(const std::vector<int64_t>& sizes, int64_t d_state, int64_t d_feat,
                       int64_t chunk, int reps, uint64_t seed) {
  Rng rng(seed);
  SsmParameters<float> p = SsmParameters<float>::create(d_state, d_feat, d_feat,
                                                        ScanDirection::forward, rng);
  p.lambda_raw.set_requires_grad(false);
  p.gamma.set_requires_grad(false);
  p.tau.set_requires_grad(false);

  BenchResult res;
  for (int64_t t : sizes) {
    Tensor<float> u = Tensor<float>::randn({t, d_feat}, rng, 1.0f);
    volatile float sink = scan_chunked(u, p, chunk)[0];  // warmup
    (void)sink;
    const Stats s = time_reps(reps, [&] {
      Tensor<float> w = scan_chunked(u, p, chunk);
      sink = w[w.numel() - 1];
    });
    res.rows.push_back({t, s.mean, s.stdev});
  }
  res.slope = fit_loglog_slope(res.rows);
  return res;
}

BenchResult bench_attention(const std::vector<int64_t>& sizes, int64_t d_head, int reps,
                            uint64_t seed) {
  Rng rng(seed);
  BenchResult res;
  for (int64_t t : sizes) {
    std::vector<float> q(static_cast<size_t>(t * d_head)), k(q.size()), v(q.size()),
        out(q.size());
    for (auto* buf : {&q, &k, &v})
      for (auto& x : *buf) x = float(rng.normal(0.0, 1.0 / std::sqrt(double(d_head))));
    // Cap repetitions once a single pass is already >= ~1e8 ns of work.
    const int eff_reps = t >= (1 << 14) ? 1 : reps;
    attention_tiled(q.data(), k.data(), v.data(), out.data(), std::min<int64_t>(t, 1024), d_head);
    const Stats s = time_reps(eff_reps, [&] {
      attention_tiled(q.data(), k.data(), v.data(), out.data(), t, d_head);
    });
    res.rows.push_back({t, s.mean, s.stdev});
  }
  res.slope = fit_loglog_slope(res.rows);
  return res;
}

void write_bench_csv(const std::string& path, const BenchResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("bench: cannot open '" + path + "'");
  out << "T,mean_ns,std_ns,slope_fit\n";
  for (const auto& row : r.rows)
    out << row.t << "," << row.mean_ns << "," << row.std_ns << "," << r.slope << "\n";
}

}  // namespace kmamba
