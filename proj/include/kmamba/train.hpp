#pragma once

#include <filesystem>
#include <iomanip>
#include <ostream>

#include "kmamba/augment.hpp"
#include "kmamba/checkpoint.hpp"
#include "kmamba/losses.hpp"
#include "kmamba/model.hpp"
#include "kmamba/optim.hpp"
#include "kmamba/phantom.hpp"
#include "kmamba/volume_io.hpp"

namespace kmamba {

template <class T>
struct Sample {
  std::string id;
  std::string split;
  Tensor<T> image;  // [M, H, W, D]
  LabelVolume labels;
};

// Loads every manifest entry of a dataset directory written by `gen`.
template <class T>
std::vector<Sample<T>> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest((fs::path(dir) / "manifest.txt").string());
  std::vector<Sample<T>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const VolumeData img = read_volume_expect((fs::path(dir) / e.image).string(), VolDtype::f32);
    const VolumeData lab = read_volume_expect((fs::path(dir) / e.labels).string(), VolDtype::u8);
    check_shape(img.dims == lab.dims, "dataset: image/label dims mismatch for " + e.image);
    Sample<T> s;
    s.id = e.image.substr(0, e.image.find('.'));
    s.split = e.split;
    std::vector<T> vals(img.f32.begin(), img.f32.end());
    s.image = Tensor<T>::from({img.channels, img.dims[0], img.dims[1], img.dims[2]}, std::move(vals));
    s.labels = LabelVolume::create(lab.dims, lab.u8, lab.spacing);
    out.push_back(std::move(s));
  }
  return out;
}

// Writes n phantoms plus the manifest; every fifth case is tagged "val".
template <class T>
void generate_dataset(const std::string& dir, int64_t n, int64_t size, uint64_t seed,
                      double noise_sigma = 0.03, int64_t modalities = 4) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<ManifestEntry> manifest;
  char name[64];
  for (int64_t i = 0; i < n; ++i) {
    const uint64_t case_seed = seed + uint64_t(i) * 1000003ull;
    Phantom<T> p = generate_phantom<T>(case_seed, size, noise_sigma, modalities);
    std::snprintf(name, sizeof(name), "phantom_%04lld", static_cast<long long>(i));

    VolumeData img;
    img.dims = p.labels.dims;
    img.channels = modalities;
    img.dtype = VolDtype::f32;
    img.f32.assign(p.intensities.data().begin(), p.intensities.data().end());
    write_volume((fs::path(dir) / (std::string(name) + ".vvol")).string(), img);

    VolumeData lab;
    lab.dims = p.labels.dims;
    lab.channels = 1;
    lab.dtype = VolDtype::u8;
    lab.u8 = p.labels.labels;
    write_volume((fs::path(dir) / (std::string(name) + ".labels.vvol")).string(), lab);
    // mid-volume slice for quick visual inspection
    write_pgm_slice((fs::path(dir) / (std::string(name) + ".pgm")).string(), img, 0, size / 2);

    manifest.push_back({std::string(name) + ".vvol", std::string(name) + ".labels.vvol",
                        (i % 5 == 4) ? "val" : "train", case_seed});
  }
  write_manifest((fs::path(dir) / "manifest.txt").string(), manifest);
}

struct TrainOptions {
  int64_t steps = 500;
  int64_t batch_size = 2;
  double lr = 1e-3;
  uint64_t seed = 7;
  LossWeights loss;
  double distill_alpha = 0.5;
  bool stop_gradient_teacher = true;
  double flip_prob = 0.5;
  double noise_sigma = 0.01;
  int64_t crop = 0;  // 0 keeps full volumes
  std::string precision = "f32";

  static TrainOptions from_config(const Config& c) {
    TrainOptions o;
    o.steps = c.get_int("train.steps", o.steps);
    o.batch_size = c.get_int("train.batch_size", o.batch_size);
    o.lr = c.get_double("train.lr", o.lr);
    o.seed = static_cast<uint64_t>(c.get_int("train.seed", int64_t(o.seed)));
    o.loss.beta = c.get_double("loss.beta", o.loss.beta);
    o.loss.lambda1 = c.get_double("loss.lambda1", o.loss.lambda1);
    o.loss.lambda2 = c.get_double("loss.lambda2", o.loss.lambda2);
    o.loss.validate();
    o.distill_alpha = c.get_double("distill.alpha", o.distill_alpha);
    o.stop_gradient_teacher = c.get_bool("distill.stop_gradient_teacher", o.stop_gradient_teacher);
    o.flip_prob = c.get_double("augment.flip_prob", o.flip_prob);
    o.noise_sigma = c.get_double("augment.noise_sigma", o.noise_sigma);
    o.crop = c.get_int("augment.crop", o.crop);
    o.precision = c.get_str("train.precision", o.precision);
    check_value(o.precision == "f32" || o.precision == "f64",
                "train.precision must be f32 or f64");
    return o;
  }
};

struct StepRecord {
  int64_t step = 0;
  double l_origin = 0, l_sd = 0, l_total = 0;
  std::array<double, 4> sd_struct{}, sd_dist{};
};

inline void write_curve_header(std::ostream& out) {
  out << "step,L_origin,L_SD,L_total";
  for (int i = 1; i <= 4; ++i) out << ",sd_struct_" << i;
  for (int i = 1; i <= 4; ++i) out << ",sd_dist_" << i;
  out << "\n";
}

inline void write_curve_row(std::ostream& out, const StepRecord& r) {
  out << r.step << "," << std::setprecision(17) << r.l_origin << "," << r.l_sd << "," << r.l_total;
  for (double v : r.sd_struct) out << "," << v;
  for (double v : r.sd_dist) out << "," << v;
  out << "\n";
}

// Argmax class volume from [C,...] logits, for metric computation.
template <class T>
LabelVolume predict_labels(const Tensor<T>& logits) {
  const int64_t c = logits.dim(0);
  const int64_t v = logits.numel() / c;
  std::vector<uint8_t> lab(static_cast<size_t>(v));
  const auto ld = logits.data();
  for (int64_t i = 0; i < v; ++i) {
    int64_t best = 0;
    T bv = ld[size_t(i)];
    for (int64_t ch = 1; ch < c; ++ch)
      if (ld[size_t(ch * v + i)] > bv) {
        bv = ld[size_t(ch * v + i)];
        best = ch;
      }
    lab[size_t(i)] = static_cast<uint8_t>(best);
  }
  return LabelVolume::create({logits.dim(1), logits.dim(2), logits.dim(3)}, std::move(lab));
}

// Binary Dice of the union of all foreground classes (labels > 0).
inline double foreground_dice(const LabelVolume& pred, const LabelVolume& truth) {
  check_shape(pred.dims == truth.dims, "foreground_dice: dims mismatch");
  int64_t na = 0, nb = 0, nab = 0;
  for (int64_t i = 0; i < pred.voxels(); ++i) {
    const bool a = pred.labels[size_t(i)] > 0;
    const bool b = truth.labels[size_t(i)] > 0;
    na += a;
    nb += b;
    nab += a && b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(nab) / double(na + nb);
}

template <class T>
struct TrainResult {
  std::vector<StepRecord> curve;
  double final_train_dice = 0.0;
  double final_val_dice = -1.0;  // -1 when no validation split exists
};

namespace detail {
template <class T>
std::vector<const Sample<T>*> split_of(const std::vector<Sample<T>>& data, const std::string& split) {
  std::vector<const Sample<T>*> out;
  for (const auto& s : data)
    if (s.split == split) out.push_back(&s);
  return out;
}
}  // namespace detail

template <class T>
double mean_foreground_dice(Model<T>& model, const std::vector<const Sample<T>*>& samples) {
  if (samples.empty()) return -1.0;
  double acc = 0;
  for (const Sample<T>* s : samples) {
    ForwardResult<T> fr = model.forward(s->image, /*training=*/false);
    acc += foreground_dice(predict_labels(fr.main_logits), s->labels);
  }
  return acc / double(samples.size());
}

// Training loop: batches are gradient-accumulated sample by sample, losses
// averaged, one Adam step per iteration. All randomness flows from opt.seed.
template <class T>
TrainResult<T> train_model(Model<T>& model, const std::vector<Sample<T>>& data,
                           const TrainOptions& opt, std::ostream* csv = nullptr,
                           const std::string& ckpt_path = "", const Config* full_config = nullptr) {
  check_value(!data.empty(), "train: dataset is empty");
  auto train_set = detail::split_of(data, "train");
  if (train_set.empty())
    for (const auto& s : data) train_set.push_back(&s);

  Adam<T> adam = Adam<T>::create(model.named_params(), static_cast<T>(opt.lr));
  Rng rng(opt.seed);
  AugmentConfig aug;
  aug.flip_prob = opt.flip_prob;
  aug.noise_sigma = opt.noise_sigma;
  aug.crop = {opt.crop, opt.crop, opt.crop};

  DistillConfig<T> dcfg;
  dcfg.alpha = static_cast<T>(opt.distill_alpha);
  dcfg.stop_gradient_teacher = opt.stop_gradient_teacher;

  const bool use_sd = model.cfg.use_mda;
  if (csv) write_curve_header(*csv);

  TrainResult<T> result;
  result.curve.reserve(static_cast<size_t>(opt.steps));
  const T inv_batch = T(1) / static_cast<T>(opt.batch_size);

  for (int64_t step = 1; step <= opt.steps; ++step) {
    adam.zero_grad();
    StepRecord rec;
    rec.step = step;
    for (int64_t b = 0; b < opt.batch_size; ++b) {
      const Sample<T>* s = train_set[rng.uniform_index(train_set.size())];
      auto [img, lab] = augment(s->image, s->labels, rng.next_u64(), aug);

      ForwardResult<T> fr = model.forward(img, /*training=*/true);
      Tensor<T> origin = origin_loss(fr.main_logits, lab, opt.loss);
      Tensor<T> total;
      if (use_sd) {
        DistillResult<T> dr = distill_loss(fr.scales, dcfg);
        total = total_loss(origin, dr.loss, opt.loss);
        rec.l_sd += double(dr.loss.item()) * double(inv_batch);
        for (int i = 0; i < 4; ++i) {
          rec.sd_struct[size_t(i)] += dr.struct_terms[size_t(i)] * double(inv_batch);
          rec.sd_dist[size_t(i)] += dr.dist_terms[size_t(i)] * double(inv_batch);
        }
      } else {
        total = scale(origin, static_cast<T>(opt.loss.lambda1));
      }
      rec.l_origin += double(origin.item()) * double(inv_batch);
      const double tv = double(total.item());
      check_value(std::isfinite(tv), "train: non-finite loss at step " + std::to_string(step));
      rec.l_total += tv * double(inv_batch);
      backward(scale(total, inv_batch));
    }
    adam.step();
    if (csv) write_curve_row(*csv, rec);
    result.curve.push_back(rec);
  }

  result.final_train_dice = mean_foreground_dice(model, train_set);
  result.final_val_dice = mean_foreground_dice(model, detail::split_of(data, "val"));

  if (!ckpt_path.empty()) {
    Config cfg_echo;
    if (full_config) cfg_echo = *full_config;
    model.cfg.to_config(cfg_echo);
    cfg_echo.set("train.precision", opt.precision);
    save_checkpoint(ckpt_path, model.named_params(), cfg_echo.serialize());
  }
  return result;
}

// Per-case, per-class metric rows for the eval CSV.
struct EvalRow {
  std::string case_id;
  int cls = 0;
  double dice_v = 0, iou_v = 0;
  double hd95_v = 0;
  bool hd95_defined = false;
};

template <class T>
std::vector<EvalRow> evaluate_model(Model<T>& model, const std::vector<Sample<T>>& data) {
  std::vector<EvalRow> rows;
  for (const auto& s : data) {
    ForwardResult<T> fr = model.forward(s.image, /*training=*/false);
    LabelVolume pred = predict_labels(fr.main_logits);
    for (int cls = 1; cls < int(model.cfg.num_classes); ++cls) {
      EvalRow r;
      r.case_id = s.id;
      r.cls = cls;
      r.dice_v = dice(pred, s.labels, cls);
      r.iou_v = iou(pred, s.labels, cls);
      try {
        r.hd95_v = hd95(pred, s.labels, cls);
        r.hd95_defined = true;
      } catch (const UndefinedMetricError&) {
        r.hd95_defined = false;
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

// The 8-combination module toggle grid.
struct AblateRow {
  bool hsa = false, bkm = false, mda = false;
  double final_total = 0.0;
  double train_dice = 0.0;
};

template <class T>
std::vector<AblateRow> run_ablation(const ModelConfig& base, const std::vector<Sample<T>>& data,
                                    TrainOptions opt) {
  std::vector<AblateRow> rows;
  for (int mask = 0; mask < 8; ++mask) {
    ModelConfig cfg = base;
    cfg.use_hsa = mask & 1;
    cfg.use_bkm = mask & 2;
    cfg.use_mda = mask & 4;
    Model<T> model = Model<T>::create(cfg);
    TrainResult<T> tr = train_model(model, data, opt);
    AblateRow r;
    r.hsa = cfg.use_hsa;
    r.bkm = cfg.use_bkm;
    r.mda = cfg.use_mda;
    r.final_total = tr.curve.back().l_total;
    r.train_dice = tr.final_train_dice;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace kmamba
