#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "kmamba/augment.hpp"
#include "kmamba/checkpoint.hpp"
#include "kmamba/config.hpp"
#include "kmamba/phantom.hpp"
#include "kmamba/volume_io.hpp"

using namespace kmamba;
using D = double;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kmamba_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};
}  // namespace

TEST_CASE("phantom generation is bitwise deterministic per seed") {
  Phantom<float> a = generate_phantom<float>(42, 24, 0.05f);
  Phantom<float> b = generate_phantom<float>(42, 24, 0.05f);
  CHECK(a.intensities.values() == b.intensities.values());
  CHECK(a.labels.labels == b.labels.labels);

  Phantom<float> c = generate_phantom<float>(43, 24, 0.05f);
  CHECK(a.intensities.values() != c.intensities.values());
}

TEST_CASE("label nesting enhancing <= core <= whole holds over 100 seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Phantom<float> p = generate_phantom<float>(seed, 20, 0.0f, 2);
    // Labels encode the nesting directly: {3} = enhancing, {2,3} = core,
    // {1,2,3} = whole, so enhancing <= core <= whole holds iff all values
    // are in range and the enhancing region is nonempty.
    bool any3 = false;
    for (uint8_t l : p.labels.labels) {
      CHECK(l <= 3);
      any3 = any3 || l == 3;
    }
    CHECK(any3);
  }
}

TEST_CASE("foreground fraction stays within [0.5%, 20%] at default parameters") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Phantom<float> p = generate_phantom<float>(seed * 977, 32, 0.02f);
    int64_t fg = 0;
    for (uint8_t l : p.labels.labels) fg += l > 0;
    const double frac = double(fg) / double(p.labels.voxels());
    CHECK(frac >= 0.005);
    CHECK(frac <= 0.20);
  }
}

TEST_CASE("modality contrast profiles differ") {
  Phantom<float> p = generate_phantom<float>(7, 20, 0.0f, 4);
  // mean intensity inside the whole region should differ across modalities
  const int64_t v = p.labels.voxels();
  std::array<double, 4> means{};
  std::array<int64_t, 4> counts{};
  for (int64_t m = 0; m < 4; ++m)
    for (int64_t i = 0; i < v; ++i)
      if (p.labels.labels[size_t(i)] > 0) {
        means[size_t(m)] += p.intensities[m * v + i];
        ++counts[size_t(m)];
      }
  for (int64_t m = 0; m < 4; ++m) means[size_t(m)] /= double(counts[size_t(m)]);
  CHECK(std::abs(means[0] - means[2]) > 0.05);
  CHECK(std::abs(means[1] - means[3]) > 0.05);
}

TEST_CASE("flip applied twice is the identity; augment with null settings is identity") {
  Phantom<D> p = generate_phantom<D>(11, 16, 0.0);
  Tensor<D> once = flip_volume(p.intensities, {true, false, true});
  Tensor<D> twice = flip_volume(once, {true, false, true});
  CHECK(twice.values() == p.intensities.values());
  CHECK(flip_labels(flip_labels(p.labels, {true, true, false}), {true, true, false}).labels ==
        p.labels.labels);

  AugmentConfig cfg;
  cfg.flip_prob = 0.0;
  cfg.noise_sigma = 0.0;
  auto [img, lab] = augment(p.intensities, p.labels, 5, cfg);
  CHECK(img.values() == p.intensities.values());
  CHECK(lab.labels == p.labels.labels);
}

TEST_CASE("label histogram is preserved under full-size flips and label set under noise") {
  Phantom<D> p = generate_phantom<D>(13, 16, 0.0);
  AugmentConfig cfg;
  cfg.flip_prob = 1.0;
  cfg.noise_sigma = 0.1;
  auto [img, lab] = augment(p.intensities, p.labels, 5, cfg);
  std::array<int64_t, 4> h0{}, h1{};
  for (uint8_t l : p.labels.labels) ++h0[size_t(l)];
  for (uint8_t l : lab.labels) ++h1[size_t(l)];
  CHECK(h0 == h1);
  CHECK(img.values() != p.intensities.values());  // noise touched intensities
}

TEST_CASE("augment rejects oversized crops") {
  Phantom<D> p = generate_phantom<D>(17, 16, 0.0);
  AugmentConfig cfg;
  cfg.crop = {32, 16, 16};
  CHECK_THROWS_AS(augment(p.intensities, p.labels, 1, cfg), InvalidSpecError);
}

TEST_CASE("vvol round trip is bitwise for f32 and u8") {
  TempDir tmp;
  Rng rng(19);
  VolumeData v;
  v.dims = {5, 6, 7};
  v.spacing = {1.0, 1.5, 2.0};
  v.channels = 3;
  v.dtype = VolDtype::f32;
  v.f32.resize(static_cast<size_t>(v.payload_count()));
  for (auto& x : v.f32) x = float(rng.normal(0, 1));
  write_volume(tmp.file("a.vvol"), v);
  VolumeData r = read_volume(tmp.file("a.vvol"));
  CHECK(r.dims == v.dims);
  CHECK(r.channels == 3);
  CHECK(r.spacing[1] == doctest::Approx(1.5));
  CHECK(std::memcmp(r.f32.data(), v.f32.data(), v.f32.size() * 4) == 0);

  VolumeData u;
  u.dims = {64, 64, 64};
  u.channels = 1;
  u.dtype = VolDtype::u8;
  u.u8.resize(static_cast<size_t>(u.payload_count()));
  for (auto& x : u.u8) x = uint8_t(rng.uniform_index(4));
  write_volume(tmp.file("b.vvol"), u);
  VolumeData ru = read_volume_expect(tmp.file("b.vvol"), VolDtype::u8);
  CHECK(ru.u8 == u.u8);
  // payload length arithmetic: 64^3 u8 = 262144 bytes
  CHECK(fs::file_size(tmp.file("b.vvol")) >= 262144);
  CHECK(u.payload_count() == 262144);

  // degenerate and anisotropic dims round-trip too
  for (auto dims : std::vector<std::array<int64_t, 3>>{{1, 1, 1}, {3, 256, 2}, {256, 1, 5}}) {
    VolumeData w;
    w.dims = dims;
    w.channels = 2;
    w.dtype = VolDtype::f32;
    w.f32.resize(static_cast<size_t>(w.payload_count()));
    for (auto& x : w.f32) x = float(rng.normal(0, 1));
    write_volume(tmp.file("c.vvol"), w);
    VolumeData rw = read_volume(tmp.file("c.vvol"));
    CHECK(rw.dims == dims);
    CHECK(std::memcmp(rw.f32.data(), w.f32.data(), w.f32.size() * 4) == 0);
  }
}

TEST_CASE("vvol error taxonomy: bad magic, truncation, dtype mismatch, missing file") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("bad.vvol"), std::ios::binary);
    out << "WRONG\ndims 2 2 2\ndtype f32\nchannels 1\ndata\n";
  }
  CHECK_THROWS_AS(read_volume(tmp.file("bad.vvol")), FormatError);

  {
    std::ofstream out(tmp.file("trunc.vvol"), std::ios::binary);
    out << "VVOL1\ndims 4 4 4\nspacing 1 1 1\ndtype f32\nchannels 1\ndata\n";
    const float z = 0;
    out.write(reinterpret_cast<const char*>(&z), 4);  // 1 of 64 values
  }
  CHECK_THROWS_AS(read_volume(tmp.file("trunc.vvol")), FormatError);

  VolumeData v;
  v.dims = {2, 2, 2};
  v.dtype = VolDtype::f32;
  v.f32.assign(8, 1.0f);
  write_volume(tmp.file("f.vvol"), v);
  CHECK_THROWS_AS(read_volume_expect(tmp.file("f.vvol"), VolDtype::u8), FormatError);

  CHECK_THROWS_AS(read_volume(tmp.file("missing.vvol")), IoError);
}

TEST_CASE("pgm slice export writes a parsable P5 file") {
  TempDir tmp;
  VolumeData v;
  v.dims = {4, 3, 5};
  v.dtype = VolDtype::f32;
  v.f32.resize(60);
  for (size_t i = 0; i < v.f32.size(); ++i) v.f32[i] = float(i);
  write_pgm_slice(tmp.file("s.pgm"), v, 0, 2);
  std::ifstream in(tmp.file("s.pgm"), std::ios::binary);
  std::string magic;
  in >> magic;
  CHECK(magic == "P5");
  int w, h, maxval;
  in >> w >> h >> maxval;
  CHECK(w == 5);
  CHECK(h == 3);
  CHECK(maxval == 255);
}

TEST_CASE("manifest round trip") {
  TempDir tmp;
  std::vector<ManifestEntry> entries = {{"a.vvol", "a.labels.vvol", "train", 7},
                                        {"b.vvol", "b.labels.vvol", "val", 9}};
  write_manifest(tmp.file("manifest.txt"), entries);
  const auto back = read_manifest(tmp.file("manifest.txt"));
  REQUIRE(back.size() == 2);
  CHECK(back[1].labels == "b.labels.vvol");
  CHECK(back[1].split == "val");
  CHECK(back[1].seed == 9);
}

TEST_CASE("config parsing: values, defaults, comments, and errors") {
  Config c = Config::parse_string(
      "# comment\n"
      "loss.beta = 0.5\n"
      "model.stage_channels = 4,8,16,32,64\n"
      "train.steps = 500  # trailing comment\n"
      "train.precision = f64\n"
      "model.use_mda = true\n");
  CHECK(c.get_double("loss.beta", 0.0) == 0.5);
  CHECK(c.get_int("train.steps", 0) == 500);
  CHECK(c.get_bool("model.use_mda", false));
  CHECK(c.get_str("train.precision", "f32") == "f64");
  CHECK(c.get_int("missing.key", 7) == 7);
  const auto list = c.get_int_list("model.stage_channels", {});
  CHECK(list == std::vector<int64_t>{4, 8, 16, 32, 64});

  CHECK_THROWS_AS(Config::parse_string("not a key value line\n"), ConfigError);
  CHECK_THROWS_AS(c.get_int("loss.beta", 0), ConfigError);
  CHECK_THROWS_AS(c.require_str("absent"), ConfigError);

  Config echo = Config::parse_string(c.serialize());
  CHECK(echo.get_double("loss.beta", 0.0) == 0.5);
}

TEST_CASE("checkpoint round trip restores parameters and config text") {
  TempDir tmp;
  Rng rng(23);
  ParamList<float> params;
  Tensor<float> w1 = Tensor<float>::randn({3, 4}, rng);
  Tensor<float> w2 = Tensor<float>::randn({2, 2, 2}, rng);
  add_param(params, "layer.w1", w1);
  add_param(params, "layer.w2", w2, /*trainable=*/false);
  save_checkpoint(tmp.file("m.ckpt"), params, "model.seed = 5\n");

  CHECK(read_checkpoint_config(tmp.file("m.ckpt")) == "model.seed = 5\n");

  ParamList<float> fresh;
  Tensor<float> r1 = Tensor<float>::zeros({3, 4});
  Tensor<float> r2 = Tensor<float>::zeros({2, 2, 2});
  add_param(fresh, "layer.w1", r1);
  add_param(fresh, "layer.w2", r2, false);
  const std::string cfg = load_checkpoint(tmp.file("m.ckpt"), fresh);
  CHECK(cfg == "model.seed = 5\n");
  CHECK(r1.values() == w1.values());
  CHECK(r2.values() == w2.values());

  // shape mismatch is rejected
  ParamList<float> wrong;
  Tensor<float> b1 = Tensor<float>::zeros({4, 3});
  Tensor<float> b2 = Tensor<float>::zeros({2, 2, 2});
  add_param(wrong, "layer.w1", b1);
  add_param(wrong, "layer.w2", b2, false);
  CHECK_THROWS_AS(load_checkpoint(tmp.file("m.ckpt"), wrong), FormatError);

  // dtype mismatch is rejected
  ParamList<double> dbl;
  Tensor<double> d1 = Tensor<double>::zeros({3, 4});
  Tensor<double> d2 = Tensor<double>::zeros({2, 2, 2});
  add_param(dbl, "layer.w1", d1);
  add_param(dbl, "layer.w2", d2, false);
  CHECK_THROWS_AS(load_checkpoint(tmp.file("m.ckpt"), dbl), FormatError);
}
