#pragma once

#include <cstring>
#include <fstream>

#include "kmamba/layers.hpp"

namespace kmamba {

// Versioned binary container of named parameter tensors plus the training
// configuration text. Layout (little-endian):
//   magic "KMCK1", u32 version, u64 config_len, config bytes,
//   u64 entry_count, then per entry:
//     u16 name_len, name bytes, u8 dtype (0=f32, 1=f64), u8 rank,
//     u64 dims..., raw payload.
namespace detail {

constexpr char kCkptMagic[5] = {'K', 'M', 'C', 'K', '1'};

template <class T>
constexpr uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <class V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw FormatError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParamList<T>& params,
                     const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(detail::kCkptMagic, 5);
  detail::write_pod<uint32_t>(out, 1);
  detail::write_pod<uint64_t>(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  detail::write_pod<uint64_t>(out, params.size());
  for (const auto& e : params) {
    check_value(e.name.size() < 65536, "checkpoint: parameter name too long");
    detail::write_pod<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod<uint8_t>(out, detail::dtype_tag<T>());
    detail::write_pod<uint8_t>(out, static_cast<uint8_t>(e.tensor.rank()));
    for (int64_t i = 0; i < e.tensor.rank(); ++i)
      detail::write_pod<uint64_t>(out, static_cast<uint64_t>(e.tensor.dim(i)));
    out.write(reinterpret_cast<const char*>(e.tensor.data().data()),
              static_cast<std::streamsize>(sizeof(T) * size_t(e.tensor.numel())));
  }
  if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

// Reads just the embedded configuration (to rebuild the model before loading
// weights).
inline std::string read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 5) != 0)
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  const auto version = detail::read_pod<uint32_t>(in);
  if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto len = detail::read_pod<uint64_t>(in);
  std::string cfg(len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint: truncated config block");
  return cfg;
}

// Loads weights into an existing parameter list; names and shapes must match
// the container's manifest exactly.
template <class T>
std::string load_checkpoint(const std::string& path, ParamList<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 5) != 0)
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  const auto version = detail::read_pod<uint32_t>(in);
  if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto cfg_len = detail::read_pod<uint64_t>(in);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  const auto count = detail::read_pod<uint64_t>(in);
  if (count != params.size())
    throw FormatError("checkpoint: entry count " + std::to_string(count) + " != expected " +
                      std::to_string(params.size()));
  for (auto& e : params) {
    const auto name_len = detail::read_pod<uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != e.name)
      throw FormatError("checkpoint: parameter order mismatch ('" + name + "' vs '" + e.name + "')");
    const auto dtype = detail::read_pod<uint8_t>(in);
    if (dtype != detail::dtype_tag<T>())
      throw FormatError("checkpoint: dtype mismatch for '" + name + "'");
    const auto rank = detail::read_pod<uint8_t>(in);
    if (rank != e.tensor.rank())
      throw FormatError("checkpoint: rank mismatch for '" + name + "'");
    for (int64_t i = 0; i < e.tensor.rank(); ++i) {
      const auto d = detail::read_pod<uint64_t>(in);
      if (static_cast<int64_t>(d) != e.tensor.dim(i))
        throw FormatError("checkpoint: shape mismatch for '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(e.tensor.mutable_data().data()),
            static_cast<std::streamsize>(sizeof(T) * size_t(e.tensor.numel())));
    if (!in) throw FormatError("checkpoint: truncated payload for '" + name + "'");
  }
  return cfg;
}

}  // namespace kmamba
