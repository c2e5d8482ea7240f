#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kmamba/common.hpp"

namespace kmamba {

enum class VolDtype { f32, u8 };

// In-memory image container matching the .vvol file: a text header followed
// by a little-endian raw payload of channels * H * W * D values.
struct VolumeData {
  std::array<int64_t, 3> dims{0, 0, 0};  // H, W, D
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  int64_t channels = 1;
  VolDtype dtype = VolDtype::f32;
  std::vector<float> f32;
  std::vector<uint8_t> u8;

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  int64_t payload_count() const { return channels * voxels(); }
};

void write_volume(const std::string& path, const VolumeData& v);
VolumeData read_volume(const std::string& path);
// As read_volume but fails with a dtype error when the payload type differs.
VolumeData read_volume_expect(const std::string& path, VolDtype expected);

// Binary PGM (P5) export of one axial slice for visual inspection; values
// are min-max normalized to 0..255.
void write_pgm_slice(const std::string& path, const VolumeData& v, int64_t channel, int64_t h_index);

// Line-delimited dataset manifest: `<image> <labels> <split> <seed>` records.
struct ManifestEntry {
  std::string image;
  std::string labels;
  std::string split;  // train | val | test
  uint64_t seed = 0;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace kmamba
