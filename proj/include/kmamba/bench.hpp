#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kmamba {

struct BenchRow {
  int64_t t = 0;
  double mean_ns = 0.0;
  double std_ns = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double slope = 0.0;  // OLS slope of log(mean_ns) vs log(T)
};

// Forward scan timing (chunked state-space recurrence), one row per length.
BenchResult bench_scan(const std::vector<int64_t>& sizes, int64_t d_state, int64_t d_feat,
                       int64_t chunk, int reps, uint64_t seed);

// Reference quadratic self-attention timing over the same lengths. reps_cap
// limits repetitions at the largest sizes.
BenchResult bench_attention(const std::vector<int64_t>& sizes, int64_t d_head, int reps,
                            uint64_t seed);

double fit_loglog_slope(const std::vector<BenchRow>& rows);

void write_bench_csv(const std::string& path, const BenchResult& r);

// Exposed for correctness tests of the timed kernel.
void attention_naive(const float* q, const float* k, const float* v, float* out, int64_t t, int64_t d);
void attention_tiled(const float* q, const float* k, const float* v, float* out, int64_t t, int64_t d);

}  // namespace kmamba
