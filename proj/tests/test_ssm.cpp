#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kmamba/gradcheck.hpp"
#include "kmamba/ssm.hpp"

using namespace kmamba;
using D = double;

namespace {

// Test-local per-step loop, independent of the library scan code.
std::vector<D> loop_scan(const std::vector<D>& u, int64_t tlen, int64_t din,
                         const std::vector<D>& lam, const std::vector<D>& gamma,
                         const std::vector<D>& tau, int64_t ds, int64_t dout, bool backward_dir) {
  std::vector<D> s(static_cast<size_t>(ds), 0.0), out(static_cast<size_t>(tlen * dout), 0.0);
  for (int64_t j = 0; j < tlen; ++j) {
    const int64_t r = backward_dir ? tlen - 1 - j : j;
    std::vector<D> snew(static_cast<size_t>(ds), 0.0);
    for (int64_t k = 0; k < ds; ++k) {
      D acc = lam[size_t(k)] * s[size_t(k)];
      for (int64_t e = 0; e < din; ++e) acc += gamma[size_t(k * din + e)] * u[size_t(r * din + e)];
      snew[size_t(k)] = acc;
    }
    s = snew;
    for (int64_t o = 0; o < dout; ++o) {
      D acc = 0;
      for (int64_t k = 0; k < ds; ++k) acc += tau[size_t(o * ds + k)] * s[size_t(k)];
      out[size_t(r * dout + o)] = acc;
    }
  }
  return out;
}

std::vector<D> as_vec(const Tensor<D>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("forced lambda=0 gives the memoryless map w_t = tau*gamma*u_t") {
  Rng rng(31);
  SsmParameters<D> p = SsmParameters<D>::create(3, 2, 2, ScanDirection::forward, rng);
  p.forced_lambda = 0.0;
  Tensor<D> u = Tensor<D>::randn({5, 2}, rng);
  Tensor<D> w = scan_naive(u, p);
  for (int64_t t = 0; t < 5; ++t)
    for (int64_t o = 0; o < 2; ++o) {
      D acc = 0;
      for (int64_t k = 0; k < 3; ++k) {
        D gu = 0;
        for (int64_t e = 0; e < 2; ++e) gu += p.gamma[k * 2 + e] * u[t * 2 + e];
        acc += p.tau[o * 3 + k] * gu;
      }
      CHECK(w[t * 2 + o] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("forced lambda=1 with unit gamma/tau is a prefix sum") {
  Rng rng(32);
  SsmParameters<D> p;
  p.direction = ScanDirection::forward;
  p.lambda_raw = Tensor<D>::zeros({1});
  p.gamma = Tensor<D>::filled({1, 1}, 1.0);
  p.tau = Tensor<D>::filled({1, 1}, 1.0);
  p.forced_lambda = 1.0;
  Tensor<D> u = Tensor<D>::randn({8, 1}, rng);
  Tensor<D> w = scan_naive(u, p);
  D acc = 0;
  for (int64_t t = 0; t < 8; ++t) {
    acc += u[t];
    CHECK(w[t] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("scan_naive matches the independent loop oracle to 1e-12 (both directions)") {
  Rng rng(33);
  for (bool bwd : {false, true}) {
    SsmParameters<D> p = SsmParameters<D>::create(4, 4, 4,
                                                  bwd ? ScanDirection::backward : ScanDirection::forward,
                                                  rng);
    Tensor<D> u = Tensor<D>::randn({64, 4}, rng);
    const auto lam = p.effective_lambda();
    const auto ref = loop_scan(as_vec(u), 64, 4, lam, as_vec(p.gamma), as_vec(p.tau), 4, 4, bwd);
    Tensor<D> w = scan_naive(u, p);
    for (int64_t i = 0; i < w.numel(); ++i)
      CHECK(w[i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("scan_chunked equals scan_naive for chunk in {1, 16, T}") {
  Rng rng(34);
  SsmParameters<D> p = SsmParameters<D>::create(6, 3, 5, ScanDirection::forward, rng);
  Tensor<D> u = Tensor<D>::randn({128, 3}, rng);
  Tensor<D> ref = scan_naive(u, p);
  for (int64_t chunk : {int64_t(1), int64_t(16), int64_t(128)}) {
    Tensor<D> w = scan_chunked(u, p, chunk);
    double worst = 0;
    for (int64_t i = 0; i < w.numel(); ++i) worst = std::max(worst, std::abs(w[i] - ref[i]));
    CHECK(worst < 1e-10);
  }
  CHECK_THROWS_AS(scan_chunked(u, p, 0), InvalidSpecError);
}

TEST_CASE("scan is linear in its input") {
  Rng rng(35);
  SsmParameters<D> p = SsmParameters<D>::create(4, 2, 3, ScanDirection::forward, rng);
  Tensor<D> u = Tensor<D>::randn({40, 2}, rng);
  Tensor<D> v = Tensor<D>::randn({40, 2}, rng);
  const D a = 1.7, b = -0.6;
  Tensor<D> lhs = scan_naive(add(scale(u, a), scale(v, b)), p);
  Tensor<D> rhs = add(scale(scan_naive(u, p), a), scale(scan_naive(v, p), b));
  for (int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(std::abs(lhs[i] - rhs[i]) < 1e-10);
}

TEST_CASE("long-sequence stability at lambda=0.999 stays within the geometric bound") {
  Rng rng(36);
  SsmParameters<D> p = SsmParameters<D>::create(2, 1, 1, ScanDirection::forward, rng);
  p.forced_lambda = 0.999;
  // |w_t| <= |tau| |gamma| M / (1 - lambda)
  const int64_t tlen = 1000000;
  Tensor<D> u = Tensor<D>::rand_uniform({tlen, 1}, rng, -1.0, 1.0);
  Tensor<D> w = scan_chunked(u, p, 4096);
  double norm_tau = 0, norm_gamma = 0;
  for (auto x : p.tau.data()) norm_tau += std::abs(x);
  for (auto x : p.gamma.data()) norm_gamma = std::max(norm_gamma, std::abs(x));
  const double bound = norm_tau * norm_gamma * 1.0 / (1.0 - 0.999);
  double peak = 0;
  for (auto x : w.data()) {
    CHECK(std::isfinite(x));
    peak = std::max(peak, std::abs(x));
  }
  CHECK(peak <= bound);
}

TEST_CASE("scan gradients (u, gamma, tau, lambda_raw) pass FD checks") {
  Rng rng(37);
  for (bool bwd : {false, true}) {
    SsmParameters<D> p = SsmParameters<D>::create(3, 2, 2,
                                                  bwd ? ScanDirection::backward : ScanDirection::forward,
                                                  rng);
    Tensor<D> u = Tensor<D>::randn({16, 2}, rng);
    Tensor<D> probe = Tensor<D>::randn({16, 2}, rng);
    u.set_requires_grad();
    auto fwd = [&] { return sum(mul(scan_naive(u, p), probe)); };
    auto rep = gradcheck<D>(fwd, {{"u", u},
                                  {"gamma", p.gamma},
                                  {"tau", p.tau},
                                  {"lambda_raw", p.lambda_raw}},
                            1e-5);
    CHECK(rep.pass);

    auto fwd_chunked = [&] { return sum(mul(scan_chunked(u, p, 5), probe)); };
    CHECK(gradcheck<D>(fwd_chunked, {{"u", u}, {"gamma", p.gamma}}, 1e-5).pass);
  }
}

TEST_CASE("scan rejects dimension mismatches") {
  Rng rng(38);
  SsmParameters<D> p = SsmParameters<D>::create(3, 2, 2, ScanDirection::forward, rng);
  CHECK_THROWS_AS(scan_naive(Tensor<D>::zeros({4, 3}), p), ShapeError);
}

TEST_CASE("flatten/unflatten: round trip, reversal, all six permutations") {
  Rng rng(39);
  Tensor<D> x = Tensor<D>::randn({2, 3, 4, 5}, rng);

  // round trip with the default order
  Tensor<D> seq = flatten_volume(x, ScanOrder::row_major());
  CHECK(unflatten_volume(seq, {3, 4, 5}, ScanOrder::row_major()).values() == x.values());

  // full reversal of a 1x1x1x3 volume reverses the sequence
  Tensor<D> abc = Tensor<D>::from({1, 1, 1, 3}, {1.0, 2.0, 3.0});
  Tensor<D> rev = flatten_volume(abc, ScanOrder::full_reversal());
  CHECK(rev[0] == 3.0);
  CHECK(rev[1] == 2.0);
  CHECK(rev[2] == 1.0);

  // exhaustive permutations (with assorted reversal flags)
  int perm_idx = 0;
  std::array<int, 3> axes{0, 1, 2};
  std::sort(axes.begin(), axes.end());
  do {
    ScanOrder order;
    order.perm = axes;
    order.reversed = {perm_idx % 2 == 0, perm_idx % 3 == 0, perm_idx % 4 == 0};
    Tensor<D> s2 = flatten_volume(x, order);
    CHECK(unflatten_volume(s2, {3, 4, 5}, order).values() == x.values());
    ++perm_idx;
  } while (std::next_permutation(axes.begin(), axes.end()));

  ScanOrder bad;
  bad.perm = {0, 0, 2};
  CHECK_THROWS_AS(flatten_volume(x, bad), InvalidSpecError);

  // gradients flow through the gather/scatter pair
  x.set_requires_grad();
  Tensor<D> probe = Tensor<D>::randn({60, 2}, rng);
  auto fwd = [&] { return sum(mul(flatten_volume(x, ScanOrder::full_reversal()), probe)); };
  CHECK(gradcheck<D>(fwd, {{"x", x}}, 1e-5).pass);
}
