#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kmamba/conv.hpp"
#include "kmamba/gradcheck.hpp"
#include "oracles.hpp"

using namespace kmamba;
using D = double;

TEST_CASE("pointwise conv on all-ones input with weight 2 doubles everything") {
  Tensor<D> x = Tensor<D>::filled({1, 2, 2, 2}, 1.0);
  Tensor<D> w = Tensor<D>::filled({1, 1, 1, 1, 1}, 2.0);
  Tensor<D> y = conv3d(x, w, ConvSpec::pointwise());
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  for (auto v : y.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("3x3x3 delta kernel with padding 1 is the identity map") {
  Rng rng(21);
  Tensor<D> x = Tensor<D>::randn({2, 3, 4, 3}, rng);
  Tensor<D> w = Tensor<D>::zeros({2, 1, 3, 3, 3});
  // center tap = 1 for each channel (depthwise identity)
  for (int64_t c = 0; c < 2; ++c) w.mutable_data()[size_t(c * 27 + 13)] = 1.0;
  Tensor<D> y = conv3d(x, w, ConvSpec::same(3).with_groups(2));
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("depthwise conv matches the seven-nested-loop oracle to 1e-12") {
  Rng rng(22);
  Tensor<D> x = Tensor<D>::randn({2, 4, 4, 4}, rng);
  Tensor<D> w = Tensor<D>::randn({2, 1, 3, 3, 3}, rng);
  ConvSpec sp = ConvSpec::same(3).with_groups(2);
  Tensor<D> y = conv3d(x, w, sp);
  const auto ref = oracle::conv3d_loops(std::vector<D>(x.data().begin(), x.data().end()), 2, 4, 4, 4,
                                        std::vector<D>(w.data().begin(), w.data().end()), 2, sp);
  REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("dense, grouped, strided, and dilated convs match the oracle") {
  Rng rng(23);
  struct Case {
    int64_t cin, cout, h, w, d;
    ConvSpec sp;
  };
  std::vector<Case> cases;
  cases.push_back({3, 4, 5, 5, 5, ConvSpec::same(3)});
  cases.push_back({4, 6, 6, 5, 4, ConvSpec::strided(3, 2, 1).with_groups(2)});
  {
    ConvSpec sp = ConvSpec::same(3);
    sp.dilation = {2, 2, 2};
    sp.padding = {2, 2, 2};
    cases.push_back({2, 2, 7, 6, 7, sp});
  }
  {
    ConvSpec sp;
    sp.kernel = {2, 1, 3};
    sp.stride = {2, 1, 1};
    sp.padding = {0, 0, 1};
    cases.push_back({3, 3, 6, 4, 5, sp});
  }
  for (const auto& c : cases) {
    Tensor<D> x = Tensor<D>::randn({c.cin, c.h, c.w, c.d}, rng);
    Tensor<D> w = Tensor<D>::randn(
        {c.cout, c.cin / c.sp.groups, c.sp.kernel[0], c.sp.kernel[1], c.sp.kernel[2]}, rng);
    Tensor<D> y = conv3d(x, w, c.sp);
    const auto ref =
        oracle::conv3d_loops(std::vector<D>(x.data().begin(), x.data().end()), c.cin, c.h, c.w, c.d,
                             std::vector<D>(w.data().begin(), w.data().end()), c.cout, c.sp);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d rejects inconsistent shapes and empty outputs") {
  Tensor<D> x = Tensor<D>::zeros({2, 4, 4, 4});
  CHECK_THROWS_AS(conv3d(x, Tensor<D>::zeros({2, 2, 3, 3, 3}), ConvSpec::same(3).with_groups(2)),
                  ShapeError);
  // 5^3 kernel on a 4^3 volume with no padding -> empty output
  CHECK_THROWS_AS(conv3d(x, Tensor<D>::zeros({2, 2, 5, 5, 5}), ConvSpec{{5, 5, 5}}),
                  InvalidSpecError);
  // groups must divide channels
  CHECK_THROWS_AS(conv3d(x, Tensor<D>::zeros({3, 1, 1, 1, 1}), ConvSpec::pointwise().with_groups(3)),
                  InvalidSpecError);
}

TEST_CASE("conv3d gradients (dense + depthwise + bias) pass FD checks") {
  Rng rng(24);
  Tensor<D> x = Tensor<D>::randn({2, 3, 3, 3}, rng);
  Tensor<D> w = Tensor<D>::randn({3, 2, 3, 3, 3}, rng, 0.4);
  Tensor<D> b = Tensor<D>::randn({3}, rng, 0.2);
  Tensor<D> probe = Tensor<D>::randn({3, 3, 3, 3}, rng);
  x.set_requires_grad();
  w.set_requires_grad();
  b.set_requires_grad();
  auto fwd = [&] { return sum(mul(conv3d(x, w, b, ConvSpec::same(3)), probe)); };
  auto rep = gradcheck<D>(fwd, {{"x", x}, {"w", w}, {"b", b}}, 1e-5);
  CHECK(rep.pass);

  Tensor<D> xd = Tensor<D>::randn({3, 3, 3, 3}, rng);
  Tensor<D> wd = Tensor<D>::randn({3, 1, 3, 3, 3}, rng, 0.4);
  Tensor<D> probe_d = Tensor<D>::randn({3, 3, 3, 3}, rng);
  xd.set_requires_grad();
  wd.set_requires_grad();
  auto fwd_dw = [&] {
    return sum(mul(conv3d(xd, wd, ConvSpec::same(3).with_groups(3)), probe_d));
  };
  CHECK(gradcheck<D>(fwd_dw, {{"x", xd}, {"w", wd}}, 1e-5).pass);
}

TEST_CASE("conv_transpose3d expands disjoint blocks and differentiates") {
  Rng rng(25);
  Tensor<D> x = Tensor<D>::randn({2, 2, 2, 2}, rng);
  Tensor<D> w = Tensor<D>::randn({2, 3, 2, 2, 2}, rng);
  Tensor<D> y = conv_transpose3d(x, w, 2);
  REQUIRE(y.shape() == Shape{3, 4, 4, 4});
  // hand-check one output element: out[oc, 2h+i, 2w+j, 2d+l] = sum_c x[c,hwd] * w[c,oc,i,j,l]
  for (int64_t oc = 0; oc < 3; ++oc)
    for (int64_t i = 0; i < 2; ++i) {
      D acc = 0;
      for (int64_t c = 0; c < 2; ++c)
        acc += x[((c * 2 + 1) * 2 + 0) * 2 + 1] * w[(((c * 3 + oc) * 2 + i) * 2 + 0) * 2 + 1];
      CHECK(y[((oc * 4 + 2 + i) * 4 + 0) * 4 + 3] == doctest::Approx(acc).epsilon(1e-12));
    }

  Tensor<D> probe = Tensor<D>::randn({3, 4, 4, 4}, rng);
  x.set_requires_grad();
  w.set_requires_grad();
  auto fwd = [&] { return sum(mul(conv_transpose3d(x, w, 2), probe)); };
  CHECK(gradcheck<D>(fwd, {{"x", x}, {"w", w}}, 1e-5).pass);
}

TEST_CASE("avg_pool3d and global_avg_pool: values and gradients") {
  Rng rng(26);
  Tensor<D> x = Tensor<D>::randn({2, 4, 4, 4}, rng);
  Tensor<D> y = avg_pool3d(x, {2, 2, 2});
  REQUIRE(y.shape() == Shape{2, 2, 2, 2});
  D acc = 0;
  for (int64_t a = 0; a < 2; ++a)
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t e = 0; e < 2; ++e) acc += x[((0 * 4 + a) * 4 + b) * 4 + e];
  CHECK(y[0] == doctest::Approx(acc / 8).epsilon(1e-12));
  CHECK_THROWS_AS(avg_pool3d(x, {3, 2, 2}), InvalidSpecError);

  Tensor<D> g = global_avg_pool(x);
  REQUIRE(g.shape() == Shape{2});
  D m = 0;
  for (int64_t i = 0; i < 64; ++i) m += x[i];
  CHECK(g[0] == doctest::Approx(m / 64).epsilon(1e-12));

  x.set_requires_grad();
  Tensor<D> probe = Tensor<D>::randn({2, 2, 2, 2}, rng);
  auto fwd = [&] {
    Tensor<D> pooled = avg_pool3d(x, {2, 2, 2});
    return add(sum(mul(pooled, probe)), sum(square(global_avg_pool(x))));
  };
  CHECK(gradcheck<D>(fwd, {{"x", x}}, 1e-5).pass);
}

TEST_CASE("resample_trilinear: constants, identity, ramp oracle, gradient") {
  // constant field stays exact at any target size
  Tensor<D> cst = Tensor<D>::filled({2, 3, 3, 3}, 4.25);
  for (auto tgt : std::vector<std::array<int64_t, 3>>{{5, 7, 2}, {1, 1, 1}, {6, 6, 6}}) {
    Tensor<D> y = resample_trilinear(cst, tgt);
    for (auto v : y.data()) CHECK(v == 4.25);
  }

  // identity when target equals source (bitwise)
  Rng rng(27);
  Tensor<D> x = Tensor<D>::randn({2, 3, 4, 5}, rng);
  Tensor<D> same = resample_trilinear(x, {3, 4, 5});
  CHECK(same.values() == x.values());

  // 1x2x2x2 ramp upsampled to 4x4x4 matches the scalar oracle
  Tensor<D> ramp = Tensor<D>::from({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor<D> up = resample_trilinear(ramp, {4, 4, 4});
  const std::vector<D> rampdata(ramp.data().begin(), ramp.data().end());
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j)
      for (int64_t l = 0; l < 4; ++l) {
        const double sh = (i + 0.5) * 2.0 / 4.0 - 0.5;
        const double sw = (j + 0.5) * 2.0 / 4.0 - 0.5;
        const double sd = (l + 0.5) * 2.0 / 4.0 - 0.5;
        const D want = oracle::trilinear_sample(rampdata, 2, 2, 2, sh, sw, sd);
        CHECK(up[(i * 4 + j) * 4 + l] == doctest::Approx(want).epsilon(1e-12));
      }

  CHECK_THROWS_AS(resample_trilinear(x, {0, 4, 4}), InvalidSpecError);

  x.set_requires_grad();
  Tensor<D> probe = Tensor<D>::randn({2, 5, 3, 6}, rng);
  auto fwd = [&] { return sum(mul(resample_trilinear(x, {5, 3, 6}), probe)); };
  CHECK(gradcheck<D>(fwd, {{"x", x}}, 1e-5).pass);
}

TEST_CASE("pointwise depthwise identity composition (spec invariant)") {
  // conv3d with groups = C_in = C_out and 1x1x1 delta kernels is the identity
  Rng rng(28);
  Tensor<D> x = Tensor<D>::randn({4, 3, 3, 3}, rng);
  Tensor<D> w = Tensor<D>::filled({4, 1, 1, 1, 1}, 1.0);
  Tensor<D> y = conv3d(x, w, ConvSpec::pointwise().with_groups(4));
  CHECK(y.values() == x.values());
}
