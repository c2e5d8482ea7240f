#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "kmamba/common.hpp"

namespace kmamba {

// Raised when a metric has no defined value (e.g. HD95 with an empty class);
// callers report it as missing rather than folding it into a score.
struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Discrete per-voxel labels on an anisotropic grid.
struct LabelVolume {
  std::array<int64_t, 3> dims{0, 0, 0};  // H, W, D
  std::vector<uint8_t> labels;           // H*W*D, row-major
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }

  static LabelVolume create(std::array<int64_t, 3> dims, std::vector<uint8_t> labels,
                            std::array<double, 3> spacing = {1.0, 1.0, 1.0});
};

// Overlap scores over the voxel sets {labels == cls}. Both-empty pairs score
// perfect (1.0); a single empty side scores 0.
double dice(const LabelVolume& a, const LabelVolume& b, int cls);
double iou(const LabelVolume& a, const LabelVolume& b, int cls);

// Symmetric 95th-percentile (nearest-rank) boundary distance over
// 6-connectivity surface voxels, in spacing units. Throws
// UndefinedMetricError when either class set is empty.
double hd95(const LabelVolume& a, const LabelVolume& b, int cls);

// Explicit routes: exact all-pairs search and the distance-transform
// accelerated path. hd95() dispatches on volume size (brute force <= 24^3).
double hd95_bruteforce(const LabelVolume& a, const LabelVolume& b, int cls);
double hd95_distance_transform(const LabelVolume& a, const LabelVolume& b, int cls);

// Surface voxels of {labels == cls}: any voxel with a 6-neighbor outside the
// set (volume borders count as outside). Exposed for tests.
std::vector<std::array<int64_t, 3>> surface_voxels(const LabelVolume& v, int cls);

}  // namespace kmamba
