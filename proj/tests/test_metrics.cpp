#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kmamba/metrics.hpp"
#include "kmamba/rng.hpp"

using namespace kmamba;

namespace {

LabelVolume cube_volume(std::array<int64_t, 3> dims, std::array<int64_t, 3> lo,
                        std::array<int64_t, 3> hi, uint8_t cls = 1) {
  std::vector<uint8_t> lab(static_cast<size_t>(dims[0] * dims[1] * dims[2]), 0);
  for (int64_t i = lo[0]; i < hi[0]; ++i)
    for (int64_t j = lo[1]; j < hi[1]; ++j)
      for (int64_t l = lo[2]; l < hi[2]; ++l)
        lab[size_t((i * dims[1] + j) * dims[2] + l)] = cls;
  return LabelVolume::create(dims, std::move(lab));
}

LabelVolume random_blob(std::array<int64_t, 3> dims, Rng& rng, double fill = 0.2) {
  std::vector<uint8_t> lab(static_cast<size_t>(dims[0] * dims[1] * dims[2]), 0);
  // a couple of random boxes so surfaces are non-trivial
  for (int box = 0; box < 2; ++box) {
    std::array<int64_t, 3> lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[size_t(a)] = int64_t(rng.uniform_index(uint64_t(dims[size_t(a)] - 1)));
      const int64_t maxlen = dims[size_t(a)] - lo[size_t(a)];
      hi[size_t(a)] = lo[size_t(a)] + 1 + int64_t(rng.uniform_index(uint64_t(maxlen)));
    }
    for (int64_t i = lo[0]; i < hi[0]; ++i)
      for (int64_t j = lo[1]; j < hi[1]; ++j)
        for (int64_t l = lo[2]; l < hi[2]; ++l)
          if (rng.uniform() < 3 * fill) lab[size_t((i * dims[1] + j) * dims[2] + l)] = 1;
  }
  return LabelVolume::create(dims, std::move(lab));
}

}  // namespace

TEST_CASE("dice: identity, disjoint, and the 8/8/4 hand count") {
  LabelVolume a = cube_volume({8, 8, 8}, {0, 0, 0}, {2, 2, 2});
  CHECK(dice(a, a, 1) == 1.0);

  LabelVolume b = cube_volume({8, 8, 8}, {4, 4, 4}, {6, 6, 6});
  CHECK(dice(a, b, 1) == 0.0);

  // |A| = 8, |B| = 8, |A intersect B| = 4: two 2x2x2 cubes sharing a 2x2x1 face
  LabelVolume c = cube_volume({8, 8, 8}, {0, 0, 1}, {2, 2, 3});
  CHECK(dice(a, c, 1) == doctest::Approx(0.5));

  // both empty -> 1.0; one empty -> 0.0
  LabelVolume empty = cube_volume({8, 8, 8}, {0, 0, 0}, {0, 0, 0});
  CHECK(dice(empty, empty, 1) == 1.0);
  CHECK(dice(a, empty, 1) == 0.0);

  LabelVolume small = cube_volume({4, 4, 4}, {0, 0, 0}, {1, 1, 1});
  CHECK_THROWS_AS(dice(a, small, 1), ShapeError);
}

TEST_CASE("iou: identity, hand count, and the algebraic Dice identity") {
  LabelVolume a = cube_volume({8, 8, 8}, {0, 0, 0}, {2, 2, 2});
  CHECK(iou(a, a, 1) == 1.0);
  LabelVolume c = cube_volume({8, 8, 8}, {0, 0, 1}, {2, 2, 3});
  CHECK(iou(a, c, 1) == doctest::Approx(1.0 / 3.0));

  Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    LabelVolume x = random_blob({10, 10, 10}, rng);
    LabelVolume y = random_blob({10, 10, 10}, rng);
    const double dc = dice(x, y, 1);
    const double ii = iou(x, y, 1);
    CHECK(std::abs(ii - dc / (2.0 - dc)) < 1e-12);
    CHECK(ii <= dc + 1e-15);  // IoU <= Dice always
    CHECK(dice(x, y, 1) == dice(y, x, 1));
    CHECK(iou(x, y, 1) == iou(y, x, 1));
  }
}

TEST_CASE("hd95 trivial cases: identity -> 0, unit separation -> 1") {
  LabelVolume a = cube_volume({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
  CHECK(hd95(a, a, 1) == 0.0);

  LabelVolume p = cube_volume({8, 8, 8}, {1, 1, 1}, {2, 2, 2});
  LabelVolume q = cube_volume({8, 8, 8}, {2, 1, 1}, {3, 2, 2});
  CHECK(hd95(p, q, 1) == 1.0);
}

TEST_CASE("two 4^3 cubes offset by (2,0,0) match the brute-force oracle exactly") {
  LabelVolume a = cube_volume({16, 16, 16}, {4, 6, 6}, {8, 10, 10});
  LabelVolume b = cube_volume({16, 16, 16}, {6, 6, 6}, {10, 10, 10});
  const double brute = hd95_bruteforce(a, b, 1);
  CHECK(hd95(a, b, 1) == brute);
  CHECK(hd95_distance_transform(a, b, 1) == brute);
  CHECK(brute == 2.0);
}

TEST_CASE("hd95 fast path equals brute force on 200 random pairs (exact)") {
  Rng rng(102);
  int nontrivial = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t s = 6 + int64_t(rng.uniform_index(11));  // up to 16^3
    LabelVolume a = random_blob({s, s, s}, rng);
    LabelVolume b = random_blob({s, s, s}, rng);
    bool ea = true, eb = true;
    for (auto v : a.labels) ea = ea && v == 0;
    for (auto v : b.labels) eb = eb && v == 0;
    if (ea || eb) continue;
    ++nontrivial;
    const double brute = hd95_bruteforce(a, b, 1);
    const double fast = hd95_distance_transform(a, b, 1);
    CHECK(fast == brute);
  }
  CHECK(nontrivial > 150);
}

TEST_CASE("hd95 on an empty class is an undefined-metric error") {
  LabelVolume a = cube_volume({8, 8, 8}, {0, 0, 0}, {2, 2, 2});
  LabelVolume empty = cube_volume({8, 8, 8}, {0, 0, 0}, {0, 0, 0});
  CHECK_THROWS_AS(hd95(a, empty, 1), UndefinedMetricError);
  CHECK_THROWS_AS(hd95(empty, empty, 1), UndefinedMetricError);
}

TEST_CASE("hd95 respects voxel spacing") {
  std::array<int64_t, 3> dims{8, 8, 8};
  LabelVolume p = cube_volume(dims, {1, 1, 1}, {2, 2, 2});
  LabelVolume q = cube_volume(dims, {2, 1, 1}, {3, 2, 2});
  p.spacing = {2.5, 1.0, 1.0};
  q.spacing = {2.5, 1.0, 1.0};
  CHECK(hd95(p, q, 1) == doctest::Approx(2.5));
}

TEST_CASE("hd95 symmetry under argument swap") {
  Rng rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume a = random_blob({12, 12, 12}, rng);
    LabelVolume b = random_blob({12, 12, 12}, rng);
    bool ea = true, eb = true;
    for (auto v : a.labels) ea = ea && v == 0;
    for (auto v : b.labels) eb = eb && v == 0;
    if (ea || eb) continue;
    CHECK(hd95(a, b, 1) == hd95(b, a, 1));
  }
}

TEST_CASE("surface extraction uses 6-connectivity with the border outside") {
  // a solid 3^3 cube in the corner: the interior voxel (1,1,1) is NOT surface
  LabelVolume a = cube_volume({4, 4, 4}, {0, 0, 0}, {3, 3, 3});
  const auto surf = surface_voxels(a, 1);
  CHECK(surf.size() == 26);  // 27 voxels minus the single interior one
}
