#include "kmamba/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kmamba {

namespace {

constexpr const char* kMagic = "VVOL1";

void byteswap_payload(std::vector<float>& data) {
  for (float& f : data) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    u = ((u & 0xFF000000u) >> 24) | ((u & 0x00FF0000u) >> 8) | ((u & 0x0000FF00u) << 8) |
        ((u & 0x000000FFu) << 24);
    std::memcpy(&f, &u, 4);
  }
}

std::string read_header_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("vvol: truncated header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

void write_volume(const std::string& path, const VolumeData& v) {
  check_shape(v.dims[0] >= 1 && v.dims[1] >= 1 && v.dims[2] >= 1, "vvol: dims must be >= 1");
  const int64_t count = v.payload_count();
  if (v.dtype == VolDtype::f32)
    check_shape(static_cast<int64_t>(v.f32.size()) == count, "vvol: f32 payload size mismatch");
  else
    check_shape(static_cast<int64_t>(v.u8.size()) == count, "vvol: u8 payload size mismatch");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("vvol: cannot open '" + path + "' for writing");
  std::ostringstream hdr;
  hdr << kMagic << "\n";
  hdr << "dims " << v.dims[0] << " " << v.dims[1] << " " << v.dims[2] << "\n";
  hdr << "spacing " << v.spacing[0] << " " << v.spacing[1] << " " << v.spacing[2] << "\n";
  hdr << "dtype " << (v.dtype == VolDtype::f32 ? "f32" : "u8") << "\n";
  hdr << "channels " << v.channels << "\n";
  hdr << "data\n";
  out << hdr.str();
  if (v.dtype == VolDtype::f32) {
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(v.f32.data()), count * 4);
    } else {
      std::vector<float> copy = v.f32;
      byteswap_payload(copy);
      out.write(reinterpret_cast<const char*>(copy.data()), count * 4);
    }
  } else {
    out.write(reinterpret_cast<const char*>(v.u8.data()), count);
  }
  if (!out) throw IoError("vvol: write failed for '" + path + "'");
}

VolumeData read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("vvol: cannot open '" + path + "'");

  if (read_header_line(in) != kMagic) throw FormatError("vvol: bad magic in '" + path + "'");
  VolumeData v;
  bool have_dims = false, have_dtype = false;
  for (;;) {
    const std::string line = read_header_line(in);
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dims") {
      ls >> v.dims[0] >> v.dims[1] >> v.dims[2];
      have_dims = true;
    } else if (key == "spacing") {
      ls >> v.spacing[0] >> v.spacing[1] >> v.spacing[2];
    } else if (key == "dtype") {
      std::string t;
      ls >> t;
      if (t == "f32")
        v.dtype = VolDtype::f32;
      else if (t == "u8")
        v.dtype = VolDtype::u8;
      else
        throw FormatError("vvol: unknown dtype '" + t + "'");
      have_dtype = true;
    } else if (key == "channels") {
      ls >> v.channels;
    } else {
      throw FormatError("vvol: unknown header field '" + key + "'");
    }
    if (!ls) throw FormatError("vvol: malformed header line '" + line + "'");
  }
  if (!have_dims || !have_dtype) throw FormatError("vvol: header missing dims or dtype");
  check_shape(v.dims[0] >= 1 && v.dims[1] >= 1 && v.dims[2] >= 1 && v.channels >= 1,
              "vvol: invalid dims/channels");

  const int64_t count = v.payload_count();
  if (v.dtype == VolDtype::f32) {
    v.f32.resize(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(v.f32.data()), count * 4);
    if (in.gcount() != count * 4) throw FormatError("vvol: truncated payload in '" + path + "'");
    if constexpr (std::endian::native != std::endian::little) byteswap_payload(v.f32);
  } else {
    v.u8.resize(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(v.u8.data()), count);
    if (in.gcount() != count) throw FormatError("vvol: truncated payload in '" + path + "'");
  }
  return v;
}

VolumeData read_volume_expect(const std::string& path, VolDtype expected) {
  VolumeData v = read_volume(path);
  if (v.dtype != expected)
    throw FormatError("vvol: dtype mismatch in '" + path + "' (expected " +
                      (expected == VolDtype::f32 ? "f32" : "u8") + ")");
  return v;
}

void write_pgm_slice(const std::string& path, const VolumeData& v, int64_t channel, int64_t h_index) {
  check_shape(channel >= 0 && channel < v.channels, "pgm: channel out of range");
  check_shape(h_index >= 0 && h_index < v.dims[0], "pgm: slice index out of range");
  const int64_t w = v.dims[1], d = v.dims[2];
  std::vector<double> slice(static_cast<size_t>(w * d));
  for (int64_t j = 0; j < w; ++j)
    for (int64_t l = 0; l < d; ++l) {
      const int64_t idx = ((channel * v.dims[0] + h_index) * w + j) * d + l;
      slice[size_t(j * d + l)] =
          v.dtype == VolDtype::f32 ? double(v.f32[size_t(idx)]) : double(v.u8[size_t(idx)]);
    }
  const auto [mn, mx] = std::minmax_element(slice.begin(), slice.end());
  const double lo = *mn, hi = *mx;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pgm: cannot open '" + path + "'");
  out << "P5\n" << d << " " << w << "\n255\n";
  for (double s : slice) {
    const auto b = static_cast<unsigned char>(std::clamp((s - lo) * scale, 0.0, 255.0));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("manifest: cannot open '" + path + "'");
  for (const auto& e : entries) out << e.image << " " << e.labels << " " << e.split << " " << e.seed << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open '" + path + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.image >> e.labels >> e.split >> e.seed))
      throw FormatError("manifest: malformed line " + std::to_string(lineno));
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace kmamba
