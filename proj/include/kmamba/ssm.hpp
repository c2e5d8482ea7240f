#pragma once

#include <array>
#include <optional>

#include "kmamba/layers.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba {

enum class ScanDirection { forward, backward };

// Learnable triplet of the discrete state-space recurrence
//   s_t = Lambda . s_{t-1} + Gamma . u_t,   w_t = tau . s_t
// with diagonal Lambda parameterized as exp(-softplus(lambda_raw)) so every
// eigenvalue stays strictly inside (0, 1).
template <class T>
struct SsmParameters {
  Tensor<T> lambda_raw;  // [D_state]
  Tensor<T> gamma;       // [D_state, D_in]
  Tensor<T> tau;         // [D_out, D_state]
  ScanDirection direction = ScanDirection::forward;

  // Test hook: bypass the stability parameterization with a fixed eigenvalue
  // (memoryless lambda=0, prefix-sum lambda=1). No gradient flows to
  // lambda_raw while forced.
  std::optional<T> forced_lambda;

  static SsmParameters create(int64_t d_state, int64_t d_in, int64_t d_out, ScanDirection dir,
                              Rng& rng) {
    SsmParameters p;
    p.direction = dir;
    p.lambda_raw = Tensor<T>::rand_uniform({d_state}, rng, T(-3.5), T(-1.5));
    p.lambda_raw.set_requires_grad();
    p.gamma = Tensor<T>::randn({d_state, d_in}, rng, T(1) / std::sqrt(static_cast<T>(d_in)));
    p.gamma.set_requires_grad();
    p.tau = Tensor<T>::randn({d_out, d_state}, rng, T(1) / std::sqrt(static_cast<T>(d_state)));
    p.tau.set_requires_grad();
    return p;
  }

  static SsmParameters zero_init(int64_t d_state, int64_t d_in, int64_t d_out, ScanDirection dir) {
    SsmParameters p;
    p.direction = dir;
    p.lambda_raw = Tensor<T>::zeros({d_state});
    p.lambda_raw.set_requires_grad();
    p.gamma = Tensor<T>::zeros({d_state, d_in});
    p.gamma.set_requires_grad();
    p.tau = Tensor<T>::zeros({d_out, d_state});
    p.tau.set_requires_grad();
    return p;
  }

  int64_t d_state() const { return lambda_raw.numel(); }
  int64_t d_in() const { return gamma.dim(1); }
  int64_t d_out() const { return tau.dim(0); }

  int64_t param_count() const { return lambda_raw.numel() + gamma.numel() + tau.numel(); }

  void params(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix + ".lambda_raw", lambda_raw);
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".tau", tau);
  }

  // Effective diagonal entries and (optionally) d(lambda)/d(lambda_raw).
  std::vector<T> effective_lambda(std::vector<T>* dlam = nullptr) const {
    const int64_t ds = d_state();
    std::vector<T> lam(static_cast<size_t>(ds));
    if (dlam) dlam->assign(static_cast<size_t>(ds), T(0));
    for (int64_t i = 0; i < ds; ++i) {
      if (forced_lambda) {
        lam[size_t(i)] = *forced_lambda;
        continue;
      }
      const T l = lambda_raw[i];
      const T sp = l > T(30) ? l : (l < T(-30) ? std::exp(l) : std::log1p(std::exp(l)));
      const T value = std::exp(-sp);
      lam[size_t(i)] = value;
      if (dlam) {
        const T sig = l >= T(0) ? T(1) / (T(1) + std::exp(-l)) : std::exp(l) / (T(1) + std::exp(l));
        (*dlam)[size_t(i)] = -value * sig;
      }
    }
    return lam;
  }
};

namespace detail {

template <class T>
void check_scan_shapes(const Tensor<T>& u, const SsmParameters<T>& p) {
  check_shape(u.rank() == 2, "scan: input must be [T, D_in], got " + shape_str(u.shape()));
  check_shape(u.dim(1) == p.d_in(), "scan: input width " + std::to_string(u.dim(1)) +
                                        " does not match gamma columns " + std::to_string(p.d_in()));
  check_shape(p.tau.dim(1) == p.d_state(), "scan: tau columns must equal d_state");
  check_shape(u.dim(0) >= 1, "scan: sequence must be non-empty");
}

// Shared adjoint for both scan variants. `states` holds s_j for every
// processing step j (processing order, not input order).
template <class T>
void scan_backward(TensorNode<T>& n, const Tensor<T>& u, const SsmParameters<T>& p,
                   const std::vector<T>& lam, const std::vector<T>& dlam,
                   const std::vector<T>& states) {
  const int64_t tlen = u.dim(0), din = p.d_in(), ds = p.d_state(), dout = p.d_out();
  const bool bwd = p.direction == ScanDirection::backward;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  ECMap<T> G(p.gamma.data().data(), ds, din);
  ECMap<T> Tau(p.tau.data().data(), dout, ds);
  Eigen::Map<const Vec> Lam(lam.data(), ds);

  Vec adj = Vec::Zero(ds);
  Vec dlam_eff = Vec::Zero(ds);
  T* gu = u.requires_grad() ? u.node()->ensure_grad().data() : nullptr;
  T* ggamma = p.gamma.requires_grad() ? p.gamma.node()->ensure_grad().data() : nullptr;
  T* gtau = p.tau.requires_grad() ? p.tau.node()->ensure_grad().data() : nullptr;

  for (int64_t j = tlen - 1; j >= 0; --j) {
    const int64_t r = bwd ? tlen - 1 - j : j;
    Eigen::Map<const Vec> dw(n.grad.data() + r * dout, dout);
    Eigen::Map<const Vec> sj(states.data() + j * ds, ds);
    adj.noalias() += Tau.transpose() * dw;
    if (gtau) EMap<T>(gtau, dout, ds).noalias() += dw * sj.transpose();
    if (j > 0) {
      Eigen::Map<const Vec> sprev(states.data() + (j - 1) * ds, ds);
      dlam_eff.array() += adj.array() * sprev.array();
    }
    if (ggamma) {
      Eigen::Map<const Vec> ur(u.data().data() + r * din, din);
      EMap<T>(ggamma, ds, din).noalias() += adj * ur.transpose();
    }
    if (gu) Eigen::Map<Vec>(gu + r * din, din).noalias() += G.transpose() * adj;
    adj.array() *= Lam.array();
  }

  if (p.lambda_raw.requires_grad() && !p.forced_lambda) {
    auto& g = p.lambda_raw.node()->ensure_grad();
    for (int64_t i = 0; i < ds; ++i) g[size_t(i)] += dlam_eff[i] * dlam[size_t(i)];
  }
}

}  // namespace detail

// Reference per-step recurrence; O(T) time, O(T * D_state) recorded state
// when gradients are required.
template <class T>
Tensor<T> scan_naive(const Tensor<T>& u, const SsmParameters<T>& p) {
  detail::check_scan_shapes(u, p);
  const int64_t tlen = u.dim(0), din = p.d_in(), ds = p.d_state(), dout = p.d_out();
  const bool bwd = p.direction == ScanDirection::backward;

  std::vector<T> dlam;
  const bool need_grad = u.requires_grad() || p.gamma.requires_grad() || p.tau.requires_grad() ||
                         p.lambda_raw.requires_grad();
  const std::vector<T> lam = p.effective_lambda(need_grad ? &dlam : nullptr);

  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  detail::ECMap<T> G(p.gamma.data().data(), ds, din);
  detail::ECMap<T> Tau(p.tau.data().data(), dout, ds);
  Eigen::Map<const Vec> Lam(lam.data(), ds);

  std::vector<T> out(static_cast<size_t>(tlen * dout));
  std::vector<T> states(need_grad ? static_cast<size_t>(tlen * ds) : size_t(ds), T(0));
  Vec s = Vec::Zero(ds);
  for (int64_t j = 0; j < tlen; ++j) {
    const int64_t r = bwd ? tlen - 1 - j : j;
    Eigen::Map<const Vec> ur(u.data().data() + r * din, din);
    s = (Lam.array() * s.array()).matrix();
    s.noalias() += G * ur;
    if (need_grad) Eigen::Map<Vec>(states.data() + j * ds, ds) = s;
    Eigen::Map<Vec>(out.data() + r * dout, dout).noalias() = Tau * s;
  }

  auto backward = [u, p, lam, dlam, states](TensorNode<T>& n) {
    detail::scan_backward(n, u, p, lam, dlam, states);
  };
  return detail::make_node<T>({tlen, dout}, std::move(out), {u, p.gamma, p.tau, p.lambda_raw},
                              std::move(backward));
}

// Chunked scan: batches input/output projections into per-chunk GEMMs while
// carrying the state across chunk boundaries. Working memory per chunk is
// O(chunk * D) in the no-gradient path.
template <class T>
Tensor<T> scan_chunked(const Tensor<T>& u, const SsmParameters<T>& p, int64_t chunk) {
  detail::check_scan_shapes(u, p);
  check_spec(chunk >= 1, "scan_chunked: chunk must be >= 1");
  const int64_t tlen = u.dim(0), din = p.d_in(), ds = p.d_state(), dout = p.d_out();
  const bool bwd = p.direction == ScanDirection::backward;

  std::vector<T> dlam;
  const bool need_grad = u.requires_grad() || p.gamma.requires_grad() || p.tau.requires_grad() ||
                         p.lambda_raw.requires_grad();
  const std::vector<T> lam = p.effective_lambda(need_grad ? &dlam : nullptr);

  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  detail::ECMap<T> G(p.gamma.data().data(), ds, din);
  detail::ECMap<T> Tau(p.tau.data().data(), dout, ds);
  Eigen::Map<const Vec> Lam(lam.data(), ds);

  std::vector<T> out(static_cast<size_t>(tlen * dout));
  std::vector<T> all_states(need_grad ? static_cast<size_t>(tlen * ds) : 0);

  const int64_t L = std::min(chunk, tlen);
  std::vector<T> ubuf(static_cast<size_t>(L * din));
  std::vector<T> proj(static_cast<size_t>(ds * L));
  std::vector<T> sbuf(static_cast<size_t>(ds * L));
  std::vector<T> wbuf(static_cast<size_t>(dout * L));

  Vec s = Vec::Zero(ds);
  for (int64_t c0 = 0; c0 < tlen; c0 += chunk) {
    const int64_t len = std::min(chunk, tlen - c0);
    // Gather the chunk's rows in processing order.
    for (int64_t i = 0; i < len; ++i) {
      const int64_t r = bwd ? tlen - 1 - (c0 + i) : c0 + i;
      std::memcpy(ubuf.data() + i * din, u.data().data() + r * din, sizeof(T) * size_t(din));
    }
    detail::EMap<T>(proj.data(), ds, len).noalias() =
        G * detail::ECMap<T>(ubuf.data(), len, din).transpose();
    for (int64_t i = 0; i < len; ++i) {
      s = (Lam.array() * s.array()).matrix();
      for (int64_t k = 0; k < ds; ++k) s[k] += proj[size_t(k * len + i)];
      Eigen::Map<Vec>(sbuf.data() + i * ds, ds) = s;
      if (need_grad) Eigen::Map<Vec>(all_states.data() + (c0 + i) * ds, ds) = s;
    }
    detail::EMap<T>(wbuf.data(), len, dout).noalias() =
        detail::ECMap<T>(sbuf.data(), len, ds) * Tau.transpose();
    for (int64_t i = 0; i < len; ++i) {
      const int64_t r = bwd ? tlen - 1 - (c0 + i) : c0 + i;
      std::memcpy(out.data() + r * dout, wbuf.data() + i * dout, sizeof(T) * size_t(dout));
    }
  }

  auto backward = [u, p, lam, dlam, all_states](TensorNode<T>& n) {
    detail::scan_backward(n, u, p, lam, dlam, all_states);
  };
  return detail::make_node<T>({tlen, dout}, std::move(out), {u, p.gamma, p.tau, p.lambda_raw},
                              std::move(backward));
}

// ---------------------------------------------------------------------------
// Volume <-> sequence bridge
// ---------------------------------------------------------------------------

// Spatial traversal order: perm[i] names which of (H,W,D) varies at nesting
// level i (outermost first); reversed[i] flips that axis.
struct ScanOrder {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> reversed{false, false, false};

  static ScanOrder row_major() { return {}; }

  static ScanOrder full_reversal() {
    ScanOrder o;
    o.reversed = {true, true, true};
    return o;
  }

  void validate() const {
    bool seen[3] = {false, false, false};
    for (int a : perm) {
      if (a < 0 || a > 2 || seen[a])
        throw InvalidSpecError("ScanOrder: axis permutation must be a bijection over (H,W,D)");
      seen[a] = true;
    }
  }
};

namespace detail {
// Sequence position t -> linear spatial offset within an H*W*D volume.
inline std::vector<int64_t> scan_index_map(const std::array<int64_t, 3>& dims, const ScanOrder& order) {
  order.validate();
  const int64_t n0 = dims[size_t(order.perm[0])];
  const int64_t n1 = dims[size_t(order.perm[1])];
  const int64_t n2 = dims[size_t(order.perm[2])];
  const int64_t strides[3] = {dims[1] * dims[2], dims[2], 1};  // H, W, D strides
  std::vector<int64_t> map(static_cast<size_t>(n0 * n1 * n2));
  int64_t t = 0;
  for (int64_t i0 = 0; i0 < n0; ++i0) {
    const int64_t a0 = order.reversed[0] ? n0 - 1 - i0 : i0;
    for (int64_t i1 = 0; i1 < n1; ++i1) {
      const int64_t a1 = order.reversed[1] ? n1 - 1 - i1 : i1;
      for (int64_t i2 = 0; i2 < n2; ++i2, ++t) {
        const int64_t a2 = order.reversed[2] ? n2 - 1 - i2 : i2;
        map[size_t(t)] = a0 * strides[order.perm[0]] + a1 * strides[order.perm[1]] +
                         a2 * strides[order.perm[2]];
      }
    }
  }
  return map;
}
}  // namespace detail

// [C,H,W,D] -> [T=H*W*D, C] in the given traversal order.
template <class T>
Tensor<T> flatten_volume(const Tensor<T>& x, const ScanOrder& order) {
  check_shape(x.rank() == 4, "flatten_volume: input must be rank 4");
  const int64_t c = x.dim(0), v = x.numel() / x.dim(0);
  const auto map = detail::scan_index_map({x.dim(1), x.dim(2), x.dim(3)}, order);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto xd = x.data();
  for (int64_t t = 0; t < v; ++t)
    for (int64_t ch = 0; ch < c; ++ch) out[size_t(t * c + ch)] = xd[size_t(ch * v + map[size_t(t)])];
  return detail::make_node<T>({v, c}, std::move(out), {x}, [x, map, c, v](TensorNode<T>& n) {
    auto& g = x.node()->ensure_grad();
    for (int64_t t = 0; t < v; ++t)
      for (int64_t ch = 0; ch < c; ++ch) g[size_t(ch * v + map[size_t(t)])] += n.grad[size_t(t * c + ch)];
  });
}

// Exact inverse of flatten_volume for the same order and spatial dims.
template <class T>
Tensor<T> unflatten_volume(const Tensor<T>& seq, std::array<int64_t, 3> dims, const ScanOrder& order) {
  check_shape(seq.rank() == 2, "unflatten_volume: input must be [T, C]");
  const int64_t v = dims[0] * dims[1] * dims[2];
  check_shape(seq.dim(0) == v, "unflatten_volume: sequence length does not match dims");
  const int64_t c = seq.dim(1);
  const auto map = detail::scan_index_map(dims, order);
  std::vector<T> out(static_cast<size_t>(seq.numel()));
  const auto sd = seq.data();
  for (int64_t t = 0; t < v; ++t)
    for (int64_t ch = 0; ch < c; ++ch) out[size_t(ch * v + map[size_t(t)])] = sd[size_t(t * c + ch)];
  return detail::make_node<T>({c, dims[0], dims[1], dims[2]}, std::move(out), {seq},
                              [seq, map, c, v](TensorNode<T>& n) {
                                auto& g = seq.node()->ensure_grad();
                                for (int64_t t = 0; t < v; ++t)
                                  for (int64_t ch = 0; ch < c; ++ch)
                                    g[size_t(t * c + ch)] += n.grad[size_t(ch * v + map[size_t(t)])];
                              });
}

}  // namespace kmamba
