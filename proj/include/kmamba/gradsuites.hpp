#pragma once

#include <chrono>

#include "kmamba/gradcheck.hpp"
#include "kmamba/losses.hpp"
#include "kmamba/train.hpp"

namespace kmamba {

// Fixed-seed finite-difference suites, one per differentiable block. Shared
// by the `gradcheck` CLI command and the acceptance run. Double precision
// throughout.
struct SuiteResult {
  std::string name;
  bool pass = false;
  double worst_rel = 0.0;
  int64_t coords = 0;
  double seconds = 0.0;
};

namespace gradsuites {

using D = double;
using Leaves = std::vector<std::pair<std::string, Tensor<D>>>;

inline SuiteResult run_one(const std::string& name, const std::function<Tensor<D>()>& fwd,
                           const Leaves& leaves, double rtol = 1e-4, int64_t max_coords = -1) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport rep = gradcheck<D>(fwd, leaves, 1e-5, rtol, 1e-7, max_coords);
  SuiteResult r;
  r.name = name;
  r.pass = rep.pass;
  r.worst_rel = rep.worst_rel;
  r.coords = rep.coords_checked;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline SuiteResult conv_suite() {
  Rng rng(201);
  Tensor<D> x = Tensor<D>::randn({2, 3, 3, 3}, rng);
  Tensor<D> w = Tensor<D>::randn({4, 2, 3, 3, 3}, rng, 0.3);
  Tensor<D> b = Tensor<D>::randn({4}, rng, 0.2);
  Tensor<D> wd = Tensor<D>::randn({2, 1, 3, 3, 3}, rng, 0.4);
  Tensor<D> probe = Tensor<D>::randn({4, 3, 3, 3}, rng);
  Tensor<D> probe2 = Tensor<D>::randn({2, 3, 3, 3}, rng);
  x.set_requires_grad();
  w.set_requires_grad();
  b.set_requires_grad();
  wd.set_requires_grad();
  auto fwd = [&] {
    Tensor<D> dense = conv3d(x, w, b, ConvSpec::same(3));
    Tensor<D> depth = conv3d(x, wd, ConvSpec::same(3).with_groups(2));
    return add(sum(mul(dense, probe)), sum(mul(depth, probe2)));
  };
  return run_one("conv3d", fwd, {{"x", x}, {"w", w}, {"b", b}, {"wd", wd}});
}

inline SuiteResult softmax_suite() {
  Rng rng(202);
  Tensor<D> x = Tensor<D>::randn({4, 2, 2, 2}, rng, 2.0);
  Tensor<D> probe = Tensor<D>::randn({4, 2, 2, 2}, rng);
  x.set_requires_grad();
  auto fwd = [&] { return sum(mul(softmax_channels(x), probe)); };
  return run_one("softmax", fwd, {{"x", x}});
}

inline SuiteResult resample_suite() {
  Rng rng(203);
  Tensor<D> x = Tensor<D>::randn({2, 4, 4, 4}, rng);
  Tensor<D> probe = Tensor<D>::randn({2, 5, 3, 7}, rng);
  Tensor<D> probe_pool = Tensor<D>::randn({2, 2, 2, 2}, rng);
  x.set_requires_grad();
  auto fwd = [&] {
    return add(sum(mul(resample_trilinear(x, {5, 3, 7}), probe)),
               sum(mul(avg_pool3d(x, {2, 2, 2}), probe_pool)));
  };
  return run_one("pool_resample", fwd, {{"x", x}});
}

inline SuiteResult norm_suite() {
  Rng rng(204);
  Tensor<D> x = Tensor<D>::randn({3, 2, 2, 2}, rng, 1.5);
  Tensor<D> gamma = Tensor<D>::filled({3}, 1.1);
  Tensor<D> beta = Tensor<D>::filled({3}, -0.2);
  Tensor<D> xr = Tensor<D>::randn({4, 3}, rng);
  Tensor<D> probe = Tensor<D>::randn({3, 2, 2, 2}, rng);
  Tensor<D> prober = Tensor<D>::randn({4, 3}, rng);
  x.set_requires_grad();
  xr.set_requires_grad();
  gamma.set_requires_grad();
  beta.set_requires_grad();
  auto fwd = [&] {
    Tensor<D> rm = Tensor<D>::zeros({3});
    Tensor<D> rv = Tensor<D>::filled({3}, 1.0);
    Tensor<D> bn = batch_norm(x, gamma, beta, rm, rv, true);
    Tensor<D> ln = layer_norm_rows(xr, gamma, beta);
    Tensor<D> lc = layer_norm_channels(x, gamma, beta);
    return add(add(sum(mul(bn, probe)), sum(mul(ln, prober))), sum(mul(lc, probe)));
  };
  return run_one("norms", fwd, {{"x", x}, {"xr", xr}, {"gamma", gamma}, {"beta", beta}});
}

inline SuiteResult ssm_suite() {
  Rng rng(205);
  SsmParameters<D> pf = SsmParameters<D>::create(4, 3, 3, ScanDirection::forward, rng);
  SsmParameters<D> pb = SsmParameters<D>::create(4, 3, 3, ScanDirection::backward, rng);
  Tensor<D> u = Tensor<D>::randn({24, 3}, rng);
  Tensor<D> probe = Tensor<D>::randn({24, 3}, rng);
  u.set_requires_grad();
  auto fwd = [&] {
    return add(sum(mul(scan_naive(u, pf), probe)), sum(mul(scan_chunked(u, pb, 7), probe)));
  };
  return run_one("ssm", fwd,
                 {{"u", u},
                  {"fwd.gamma", pf.gamma},
                  {"fwd.tau", pf.tau},
                  {"fwd.lambda", pf.lambda_raw},
                  {"bwd.gamma", pb.gamma},
                  {"bwd.tau", pb.tau},
                  {"bwd.lambda", pb.lambda_raw}});
}

inline SuiteResult kan_suite() {
  Rng rng(206);
  KanLayer<D> layer = KanLayer<D>::create(3, 4, 3, rng);
  Tensor<D> x = Tensor<D>::randn({6, 3}, rng, 1.2);
  Tensor<D> probe = Tensor<D>::randn({6, 3}, rng);
  x.set_requires_grad();
  auto fwd = [&] { return sum(mul(kan_forward(x, layer), probe)); };
  return run_one("kan", fwd,
                 {{"x", x},
                  {"inner", layer.inner_coeffs},
                  {"outer", layer.outer_coeffs},
                  {"base", layer.base_weight}});
}

inline SuiteResult bkm_suite() {
  Rng rng(207);
  BkmBlock<D> block = BkmBlock<D>::create(2, 3, 2, rng);
  Tensor<D> x = Tensor<D>::randn({2, 2, 2, 2}, rng, 0.5);
  x.set_requires_grad();
  ParamList<D> plist;
  block.params("bkm", plist);
  Leaves leaves = {{"x", x}};
  for (auto& e : plist)
    if (e.trainable) leaves.push_back({e.name, e.tensor});
  auto fwd = [&] { return sum(bkm_forward(x, block)); };
  return run_one("bkm", fwd, leaves);
}

inline SuiteResult hsa_suite() {
  Rng rng(208);
  HsaBlock<D> block = HsaBlock<D>::create(3, rng);
  Tensor<D> x = Tensor<D>::randn({3, 4, 4, 4}, rng, 0.5);
  x.set_requires_grad();
  ParamList<D> plist;
  block.params("hsa", plist);
  Leaves leaves = {{"x", x}};
  for (auto& e : plist)
    if (e.trainable) leaves.push_back({e.name, e.tensor});
  auto fwd = [&] { return sum(square(hsa_forward(x, block))); };
  return run_one("hsa", fwd, leaves, 1e-4, /*max_coords=*/10);
}

inline SuiteResult mda_suite() {
  Rng rng(209);
  const std::array<int64_t, 5> ch{1, 2, 2, 3, 3};
  std::array<Tensor<D>, 5> feats;
  int64_t sz = 16;
  for (int k = 0; k < 5; ++k) {
    feats[size_t(k)] = Tensor<D>::randn({ch[size_t(k)], sz, sz, sz}, rng, 0.5);
    sz /= 2;
  }
  ScaleFeatureSet<D> s = make_scale_set<D>(std::move(feats));
  MdaModule<D> m = MdaModule<D>::create(ch, 2, rng);
  s.teacher_heads = m.teacher_heads;
  s.student_heads = m.student_heads;
  for (auto& f : s.features) f.set_requires_grad();
  DistillConfig<D> cfg;
  cfg.alpha = 0.5;
  cfg.stop_gradient_teacher = false;
  auto fwd = [&] {
    ScaleFeatureSet<D> s2 = s;
    redistribute(fuse_pyramid(s2, m), s2, m);
    return distill_loss(s2, cfg).loss;
  };
  return run_one("mda", fwd,
                 {{"x1", s.features[0]},
                  {"x4", s.features[3]},
                  {"x5", s.features[4]},
                  {"proj.w", m.proj.weight},
                  {"redist2.w", m.redist_proj[1].weight},
                  {"teacher3.w", m.teacher_heads[2].weight},
                  {"student3.w", m.student_heads[2].weight},
                  {"ac_eta.fc2", m.ac_eta.fc2.weight},
                  {"asp_eta.conv", m.asp_eta.conv.weight}},
                 1e-4, /*max_coords=*/12);
}

inline SuiteResult loss_suite() {
  Rng rng(210);
  Tensor<D> logits = Tensor<D>::randn({3, 2, 2, 2}, rng);
  std::vector<uint8_t> lab(8);
  for (auto& l : lab) l = uint8_t(rng.uniform_index(3));
  LabelVolume target = LabelVolume::create({2, 2, 2}, std::move(lab));
  logits.set_requires_grad();
  LossWeights w;
  w.beta = 0.4;
  auto fwd = [&] { return origin_loss(logits, target, w); };
  return run_one("losses", fwd, {{"logits", logits}});
}

// End-to-end: total training loss of a small model on one 16^3 sample, FD
// over a random 50-parameter subsample. The model's own divisibility
// precondition (multiples of 16) sets the smallest usable volume.
inline SuiteResult model_suite() {
  ModelConfig cfg;
  cfg.in_channels = 2;
  cfg.num_classes = 4;
  cfg.stage_channels = {2, 3, 4, 5, 6};
  cfg.kan_hidden = 4;
  cfg.d_state = 3;
  cfg.patch_size = 16;
  cfg.seed = 11;
  Model<D> model = Model<D>::create(cfg);

  Phantom<D> ph = generate_phantom<D>(31, 16, 0.02, 2);
  LossWeights w;
  w.lambda2 = 0.1;
  DistillConfig<D> dcfg;
  dcfg.alpha = 0.5;
  dcfg.stop_gradient_teacher = false;

  auto fwd = [&]() -> Tensor<D> {
    ForwardResult<D> fr = model.forward(ph.intensities, /*training=*/true);
    Tensor<D> origin = origin_loss(fr.main_logits, ph.labels, w);
    return total_loss(origin, distill_loss(fr.scales, dcfg).loss, w);
  };

  // 50 coordinates spread over every trainable tensor, deterministically.
  ParamList<D> plist = model.named_params();
  Leaves leaves;
  for (auto& e : plist)
    if (e.trainable) leaves.push_back({e.name, e.tensor});
  int64_t total = 0;
  for (auto& [n, t] : leaves) total += t.numel();
  const int64_t budget = 50;
  const auto t0 = std::chrono::steady_clock::now();
  for (auto& [n, t] : leaves) const_cast<Tensor<D>&>(t).zero_grad();
  Tensor<D> root = fwd();
  backward(root);

  Rng pick(99);
  SuiteResult r;
  r.name = "model";
  r.pass = true;
  for (int64_t k = 0; k < budget; ++k) {
    auto& [name, t] = leaves[pick.uniform_index(leaves.size())];
    auto& tensor = const_cast<Tensor<D>&>(t);
    const int64_t i = int64_t(pick.uniform_index(uint64_t(tensor.numel())));
    auto vals = tensor.mutable_data();
    const D keep = vals[size_t(i)];
    // Coarse steps straddle ReLU kinks when a channel-scale parameter moves
    // thousands of activations at once; 1e-6 still sits far above
    // double-precision roundoff for an O(1) objective.
    const D h = 1e-6;
    vals[size_t(i)] = keep + h;
    const D fp = fwd().item();
    vals[size_t(i)] = keep - h;
    const D fm = fwd().item();
    vals[size_t(i)] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double ad = tensor.grad().empty() ? 0.0 : tensor.grad()[size_t(i)];
    const double rel = std::abs(ad - fd) / (1e-3 + std::max(std::abs(ad), std::abs(fd)));
    r.coords++;
    if (rel > r.worst_rel) r.worst_rel = rel;
    if (rel > 1e-3) r.pass = false;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace gradsuites

inline std::vector<SuiteResult> run_gradcheck_suites(const std::string& filter = "") {
  using Fn = SuiteResult (*)();
  const std::vector<std::pair<std::string, Fn>> suites = {
      {"conv3d", &gradsuites::conv_suite},     {"softmax", &gradsuites::softmax_suite},
      {"pool_resample", &gradsuites::resample_suite}, {"norms", &gradsuites::norm_suite},
      {"ssm", &gradsuites::ssm_suite},         {"kan", &gradsuites::kan_suite},
      {"bkm", &gradsuites::bkm_suite},         {"hsa", &gradsuites::hsa_suite},
      {"mda", &gradsuites::mda_suite},         {"losses", &gradsuites::loss_suite},
      {"model", &gradsuites::model_suite},
  };
  std::vector<SuiteResult> results;
  for (const auto& [name, fn] : suites) {
    if (!filter.empty() && name != filter) continue;
    results.push_back(fn());
  }
  if (results.empty()) throw ConfigError("gradcheck: unknown module '" + filter + "'");
  return results;
}

}  // namespace kmamba
