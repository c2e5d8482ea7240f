#pragma once

#include <array>

#include "kmamba/layers.hpp"

namespace kmamba {

// Encoder feature pyramid X^(1..5) plus the refined per-scale outputs and the
// class heads used by the self-distillation loss. Spatial sizes must shrink
// strictly from scale 1 to scale 5.
template <class T>
struct ScaleFeatureSet {
  std::array<Tensor<T>, 5> features;        // X^(k), k = 1..5
  std::array<Tensor<T>, 4> refined;         // X_i^out, i = 1..4
  std::array<Conv3dLayer<T>, 4> teacher_heads;  // C_i -> num_classes, on X^(i)
  std::array<Conv3dLayer<T>, 4> student_heads;  // C_i -> num_classes, on X_i^out
  bool has_refined = false;

  void set_refined(int i, const Tensor<T>& t) {
    check_shape(t.shape() == features[size_t(i)].shape(),
                "ScaleFeatureSet: refined output " + std::to_string(i + 1) +
                    " must match X^(i) shape " + shape_str(features[size_t(i)].shape()));
    refined[size_t(i)] = t;
  }
};

template <class T>
ScaleFeatureSet<T> make_scale_set(std::array<Tensor<T>, 5> feats) {
  for (int k = 0; k < 5; ++k)
    check_shape(feats[size_t(k)].defined() && feats[size_t(k)].rank() == 4,
                "ScaleFeatureSet: every scale must be a rank-4 volume");
  for (int k = 0; k < 4; ++k)
    for (int a = 1; a <= 3; ++a)
      check_shape(feats[size_t(k)].dim(a) > feats[size_t(k + 1)].dim(a),
                  "ScaleFeatureSet: spatial dims must shrink strictly across scales");
  ScaleFeatureSet<T> s;
  s.features = std::move(feats);
  return s;
}

template <class T>
struct DistillConfig {
  T alpha = T(0.5);                 // structural vs distributional mix
  bool stop_gradient_teacher = true;
  T epsilon = T(1e-7);              // log smoothing
};

// Squeeze-excitation channel gate.
template <class T>
struct SeAttention {
  LinearLayer<T> fc1, fc2;

  static SeAttention create(int64_t c, Rng& rng, int64_t reduction = 4) {
    SeAttention a;
    const int64_t hidden = std::max<int64_t>(1, c / reduction);
    a.fc1 = LinearLayer<T>::create(c, hidden, rng);
    a.fc2 = LinearLayer<T>::create(hidden, c, rng);
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> desc = reshape(global_avg_pool(x), {1, x.dim(0)});
    Tensor<T> gate = sigmoid(fc2(relu(fc1(desc))));
    return mul_channel_broadcast(x, reshape(gate, {x.dim(0)}));
  }

  int64_t param_count() const { return fc1.param_count() + fc2.param_count(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
  }
};

// Spatial gate: 7x7x7 conv over the channel mean, sigmoid, broadcast multiply.
template <class T>
struct SpatialAttention {
  Conv3dLayer<T> conv;

  static SpatialAttention create(Rng& rng) {
    SpatialAttention a;
    a.conv = Conv3dLayer<T>::create(1, 1, ConvSpec::same(7), rng);
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const T invc = T(1) / static_cast<T>(x.dim(0));
    Tensor<T> pooled = scale(sum_channels(x), invc);  // [1,H,W,D]
    Tensor<T> gate = sigmoid(conv(pooled));
    return mul(x, broadcast_channel(gate, x.dim(0)));
  }

  int64_t param_count() const { return conv.param_count(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    conv.params(prefix + ".conv", out);
  }
};

// Multi-scale self-distillation aggregation: pyramid fusion at the deepest
// scale, attention-gated merge with X^(5), per-scale redistribution, and the
// distillation objective between original and refined pathways.
template <class T>
struct MdaModule {
  std::array<Conv3dLayer<T>, 4> down_proj;   // after avg-pooling scale k to the X5 size
  SeAttention<T> ac_eta, ac_x5;
  SpatialAttention<T> asp_eta, asp_x5;
  Conv3dLayer<T> proj;                       // concat width -> C5
  std::array<Conv3dLayer<T>, 4> redist_proj; // C5 -> C_i
  std::array<Conv3dLayer<T>, 4> teacher_heads, student_heads;
  bool attention_identity_hook = false;      // test mode: A_c and A_spatial pass through

  static MdaModule create(const std::array<int64_t, 5>& channels, int64_t num_classes, Rng& rng) {
    check_value(num_classes >= 2, "MdaModule: need at least 2 classes");
    MdaModule m;
    int64_t concat_c = 0;
    for (int k = 0; k < 4; ++k) {
      m.down_proj[size_t(k)] =
          Conv3dLayer<T>::create(channels[size_t(k)], channels[size_t(k)], ConvSpec::pointwise(), rng);
      concat_c += channels[size_t(k)];
    }
    m.ac_eta = SeAttention<T>::create(concat_c, rng);
    m.ac_x5 = SeAttention<T>::create(channels[4], rng);
    m.asp_eta = SpatialAttention<T>::create(rng);
    m.asp_x5 = SpatialAttention<T>::create(rng);
    m.proj = Conv3dLayer<T>::create(concat_c, channels[4], ConvSpec::pointwise(), rng);
    for (int k = 0; k < 4; ++k) {
      m.redist_proj[size_t(k)] =
          Conv3dLayer<T>::create(channels[4], channels[size_t(k)], ConvSpec::pointwise(), rng);
      m.teacher_heads[size_t(k)] =
          Conv3dLayer<T>::create(channels[size_t(k)], num_classes, ConvSpec::pointwise(), rng);
      m.student_heads[size_t(k)] =
          Conv3dLayer<T>::create(channels[size_t(k)], num_classes, ConvSpec::pointwise(), rng);
    }
    return m;
  }

  int64_t param_count() const {
    int64_t n = proj.param_count() + ac_eta.param_count() + ac_x5.param_count() +
                asp_eta.param_count() + asp_x5.param_count();
    for (int k = 0; k < 4; ++k)
      n += down_proj[size_t(k)].param_count() + redist_proj[size_t(k)].param_count() +
           teacher_heads[size_t(k)].param_count() + student_heads[size_t(k)].param_count();
    return n;
  }

  void params(const std::string& prefix, ParamList<T>& out) const {
    for (int k = 0; k < 4; ++k) {
      const std::string i = std::to_string(k + 1);
      down_proj[size_t(k)].params(prefix + ".down" + i, out);
      redist_proj[size_t(k)].params(prefix + ".redist" + i, out);
      teacher_heads[size_t(k)].params(prefix + ".teacher_head" + i, out);
      student_heads[size_t(k)].params(prefix + ".student_head" + i, out);
    }
    ac_eta.params(prefix + ".ac_eta", out);
    ac_x5.params(prefix + ".ac_x5", out);
    asp_eta.params(prefix + ".asp_eta", out);
    asp_x5.params(prefix + ".asp_x5", out);
    proj.params(prefix + ".proj", out);
  }
};

// eta = concat_k D^(k)(X^(k));  nu = Asp(P(Ac(eta))) + Asp(Ac(X5)).
template <class T>
Tensor<T> fuse_pyramid(const ScaleFeatureSet<T>& s, const MdaModule<T>& m) {
  const Tensor<T>& x5 = s.features[4];
  std::vector<Tensor<T>> pooled;
  pooled.reserve(4);
  for (int k = 0; k < 4; ++k) {
    const Tensor<T>& xk = s.features[size_t(k)];
    std::array<int64_t, 3> factor{};
    for (int a = 0; a < 3; ++a) {
      check_shape(xk.dim(a + 1) % x5.dim(a + 1) == 0,
                  "fuse_pyramid: scale " + std::to_string(k + 1) + " dims must be multiples of X^(5) dims");
      factor[size_t(a)] = xk.dim(a + 1) / x5.dim(a + 1);
    }
    pooled.push_back(m.down_proj[size_t(k)](avg_pool3d(xk, factor)));
  }
  Tensor<T> eta = concat_channels(pooled);
  Tensor<T> left, right;
  if (m.attention_identity_hook) {
    left = m.proj(eta);
    right = x5;
  } else {
    left = m.asp_eta(m.proj(m.ac_eta(eta)));
    right = m.asp_x5(m.ac_x5(x5));
  }
  return add(left, right);
}

// X_i^out = ReLU(U_i(P_i(nu)) + X^(i)), stored back into the feature set.
template <class T>
void redistribute(const Tensor<T>& nu, ScaleFeatureSet<T>& s, const MdaModule<T>& m) {
  for (int i = 0; i < 4; ++i) {
    const Tensor<T>& xi = s.features[size_t(i)];
    Tensor<T> up = resample_trilinear(m.redist_proj[size_t(i)](nu),
                                      {xi.dim(1), xi.dim(2), xi.dim(3)});
    s.set_refined(i, relu(add(up, xi)));
  }
  s.has_refined = true;
}

template <class T>
struct DistillResult {
  Tensor<T> loss;  // scalar graph node
  std::array<double, 4> struct_terms{};
  std::array<double, 4> dist_terms{};
};

namespace detail {
// Voxel-averaged cross-entropy of q against soft weights p.
template <class T>
Tensor<T> soft_cross_entropy(const Tensor<T>& p, const Tensor<T>& q, T eps) {
  return neg(mean(sum_channels(mul(p, log(add_scalar(q, eps))))));
}

// Voxel-averaged soft overlap deficit 1 - 2*sum(pq)/(sum p + sum q).
template <class T>
Tensor<T> soft_struct_loss(const Tensor<T>& p, const Tensor<T>& q) {
  Tensor<T> num = scale(sum_channels(mul(p, q)), T(2));
  Tensor<T> den = add(sum_channels(p), sum_channels(q));
  return mean(add_scalar(neg(div(num, den)), T(1)));
}
}  // namespace detail

// L_SD = sum_i alpha * L_Struct^(i) + (1 - alpha) * L_Distribution^(i).
// At the convex endpoints the unused term is never built into the graph.
template <class T>
DistillResult<T> distill_loss(const ScaleFeatureSet<T>& s, const DistillConfig<T>& cfg) {
  check_value(cfg.alpha >= T(0) && cfg.alpha <= T(1), "distill_loss: alpha must lie in [0,1]");
  check_value(cfg.epsilon > T(0), "distill_loss: epsilon must be positive");
  check_value(s.has_refined, "distill_loss: refined features missing (run redistribute first)");
  check_value(s.teacher_heads[0].weight.defined() && s.teacher_heads[0].weight.dim(0) >= 2,
              "distill_loss: class heads must produce at least 2 classes");

  DistillResult<T> out;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (int i = 0; i < 4; ++i) {
    Tensor<T> t_logits = s.teacher_heads[size_t(i)](s.features[size_t(i)]);
    if (cfg.stop_gradient_teacher) t_logits = t_logits.detach();
    Tensor<T> p = softmax_channels(t_logits);
    Tensor<T> q = softmax_channels(s.student_heads[size_t(i)](s.refined[size_t(i)]));

    Tensor<T> term;
    if (cfg.alpha > T(0)) {
      Tensor<T> ls = detail::soft_struct_loss(p, q);
      out.struct_terms[size_t(i)] = double(ls.item());
      term = scale(ls, cfg.alpha);
    } else {
      out.struct_terms[size_t(i)] = double(detail::soft_struct_loss(p.detach(), q.detach()).item());
    }
    if (cfg.alpha < T(1)) {
      Tensor<T> ld = detail::soft_cross_entropy(p, q, cfg.epsilon);
      out.dist_terms[size_t(i)] = double(ld.item());
      Tensor<T> weighted = scale(ld, T(1) - cfg.alpha);
      term = term.defined() ? add(term, weighted) : weighted;
    } else {
      out.dist_terms[size_t(i)] =
          double(detail::soft_cross_entropy(p.detach(), q.detach(), cfg.epsilon).item());
    }
    total = add(total, term);
  }
  out.loss = total;
  return out;
}

}  // namespace kmamba
