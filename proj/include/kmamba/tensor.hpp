#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kmamba/common.hpp"
#include "kmamba/rng.hpp"

namespace kmamba {

template <class T>
class Tensor;

// One node of the dynamically built computation graph. Values are contiguous
// row-major; grad is allocated lazily on first accumulation.
template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  std::vector<Tensor<T>> parents;
  std::function<void(TensorNode<T>&)> backward;
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

// Value-semantic handle over a shared graph node. Tensors are immutable after
// construction except for gradient accumulation.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T value) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = std::move(shape);
    t.n_->values.assign(static_cast<size_t>(numel_of(t.n_->shape)), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    check_shape(numel_of(shape) == static_cast<int64_t>(values.size()),
                "tensor data length " + std::to_string(values.size()) +
                    " does not match shape " + shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = std::move(shape);
    t.n_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.n_->values) v = static_cast<T>(rng.normal(double(mean), double(stddev)));
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.n_->values) v = static_cast<T>(rng.uniform(double(lo), double(hi)));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
  int64_t dim(int64_t i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return n_->numel(); }

  std::span<const T> data() const { return {n_->values.data(), n_->values.size()}; }
  std::span<T> mutable_data() { return {n_->values.data(), n_->values.size()}; }
  const std::vector<T>& values() const { return n_->values; }

  T item() const {
    check_shape(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return n_->values[0];
  }

  T operator[](int64_t i) const { return n_->values[static_cast<size_t>(i)]; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool rg = true) {
    n_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const T> grad() const { return {n_->grad.data(), n_->grad.size()}; }
  std::span<T> mutable_grad() { return {n_->ensure_grad().data(), n_->grad.size()}; }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // New leaf sharing nothing with the graph; gradients stop here.
  Tensor detach() const {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = n_->shape;
    t.n_->values = n_->values;
    return t;
  }

  TensorNode<T>* node() const { return n_.get(); }
  std::shared_ptr<TensorNode<T>> node_ptr() const { return n_; }

  static Tensor adopt(std::shared_ptr<TensorNode<T>> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

template <class T>
bool any_requires_grad(const std::vector<Tensor<T>>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

// Build an op result node. `backward` may be empty for ops used only in
// no-grad contexts.
template <class T>
Tensor<T> make_node(Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents,
                    std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  if (any_requires_grad(parents) && backward) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<T>::adopt(std::move(n));
}

template <class T>
void accumulate(TensorNode<T>& dst, const T* src, int64_t n) {
  auto& g = dst.ensure_grad();
  for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += src[static_cast<size_t>(i)];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode differentiation. Root must be scalar; repeated calls without
// zeroing accumulate additively into leaf gradients.
// ---------------------------------------------------------------------------

template <class T>
void backward(const Tensor<T>& root) {
  check_value(root.numel() == 1,
              "backward() root must be scalar, got shape " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  struct Frame {
    TensorNode<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  visited.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<T>* p = f.node->parents[f.next_parent++].node();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are transient per pass; only leaves accumulate across
  // repeated calls.
  for (TensorNode<T>* n : order)
    if (n->backward && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));

  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <class T>
void assert_finite(const Tensor<T>& t, const std::string& context) {
  for (T v : t.data())
    check_value(std::isfinite(double(v)), "non-finite value in " + context);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  check_shape(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto bd = b.data();
  for (int64_t i = 0; i < b.numel(); ++i) out[size_t(i)] += bd[size_t(i)];
  return detail::make_node<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) {
    if (a.requires_grad()) detail::accumulate(*a.node(), n.grad.data(), n.numel());
    if (b.requires_grad()) detail::accumulate(*b.node(), n.grad.data(), n.numel());
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto bd = b.data();
  for (int64_t i = 0; i < b.numel(); ++i) out[size_t(i)] -= bd[size_t(i)];
  return detail::make_node<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) {
    if (a.requires_grad()) detail::accumulate(*a.node(), n.grad.data(), n.numel());
    if (b.requires_grad()) {
      auto& g = b.node()->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) g[size_t(i)] -= n.grad[size_t(i)];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto bd = b.data();
  for (int64_t i = 0; i < b.numel(); ++i) out[size_t(i)] *= bd[size_t(i)];
  return detail::make_node<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) {
    const auto ad = a.data(), bd2 = b.data();
    if (a.requires_grad()) {
      auto& g = a.node()->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) g[size_t(i)] += n.grad[size_t(i)] * bd2[size_t(i)];
    }
    if (b.requires_grad()) {
      auto& g = b.node()->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) g[size_t(i)] += n.grad[size_t(i)] * ad[size_t(i)];
    }
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "div");
  std::vector<T> out(a.values());
  const auto bd = b.data();
  for (int64_t i = 0; i < b.numel(); ++i) out[size_t(i)] /= bd[size_t(i)];
  return detail::make_node<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) {
    const auto ad = a.data(), bd2 = b.data();
    if (a.requires_grad()) {
      auto& g = a.node()->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) g[size_t(i)] += n.grad[size_t(i)] / bd2[size_t(i)];
    }
    if (b.requires_grad()) {
      auto& g = b.node()->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) {
        const T bi = bd2[size_t(i)];
        g[size_t(i)] -= n.grad[size_t(i)] * ad[size_t(i)] / (bi * bi);
      }
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= c;
  return detail::make_node<T>(a.shape(), std::move(out), {a}, [a, c](TensorNode<T>& n) {
    auto& g = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.numel(); ++i) g[size_t(i)] += n.grad[size_t(i)] * c;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& v : out) v += c;
  return detail::make_node<T>(a.shape(), std::move(out), {a}, [a](TensorNode<T>& n) {
    detail::accumulate(*a.node(), n.grad.data(), n.numel());
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return scale(a, c); }
template <class T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Unary maps
// ---------------------------------------------------------------------------

namespace detail {
// dfn receives (x, y) and returns dy/dx.
template <class T, class FwdFn, class DerivFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fn, DerivFn dfn) {
  std::vector<T> out(a.values().size());
  const auto ad = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fn(ad[i]);
  return make_node<T>(a.shape(), std::move(out), {a}, [a, dfn](TensorNode<T>& n) {
    const auto ad2 = a.data();
    auto& g = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.numel(); ++i)
      g[size_t(i)] += n.grad[size_t(i)] * dfn(ad2[size_t(i)], n.values[size_t(i)]);
  });
}
}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) {
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        return x * s;
      },
      [](T x, T) {
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        return s + x * s * (T(1) - s);
      });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) {
        if (x > T(30)) return x;
        if (x < T(-30)) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](T x, T) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return detail::make_node<T>({1}, {acc}, {a}, [a](TensorNode<T>& n) {
    const T g = n.grad[0];
    auto& dst = a.node()->ensure_grad();
    for (auto& v : dst) v += g;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  T acc = T(0);
  for (T v : a.data()) acc += v;
  acc *= inv;
  return detail::make_node<T>({1}, {acc}, {a}, [a, inv](TensorNode<T>& n) {
    const T g = n.grad[0] * inv;
    auto& dst = a.node()->ensure_grad();
    for (auto& v : dst) v += g;
  });
}

// Sum over the leading (channel) axis of a [C, ...] tensor -> [1, ...].
template <class T>
Tensor<T> sum_channels(const Tensor<T>& a) {
  check_shape(a.rank() >= 1, "sum_channels: rank must be >= 1");
  const int64_t c = a.dim(0);
  const int64_t v = a.numel() / c;
  std::vector<T> out(static_cast<size_t>(v), T(0));
  const auto ad = a.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < v; ++i) out[size_t(i)] += ad[size_t(ch * v + i)];
  Shape oshape = a.shape();
  oshape[0] = 1;
  return detail::make_node<T>(std::move(oshape), std::move(out), {a}, [a, c, v](TensorNode<T>& n) {
    auto& g = a.node()->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < v; ++i) g[size_t(ch * v + i)] += n.grad[size_t(i)];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape(numel_of(shape) == a.numel(),
              "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(a.values());
  return detail::make_node<T>(std::move(shape), std::move(out), {a}, [a](TensorNode<T>& n) {
    detail::accumulate(*a.node(), n.grad.data(), n.numel());
  });
}

// Concatenate along the leading (channel) axis; trailing dims must agree.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  check_shape(!parts.empty(), "concat_channels: no inputs");
  Shape base = parts[0].shape();
  int64_t c_total = 0;
  for (const auto& p : parts) {
    check_shape(p.rank() == static_cast<int64_t>(base.size()), "concat_channels: rank mismatch");
    for (size_t i = 1; i < base.size(); ++i)
      check_shape(p.shape()[i] == base[i], "concat_channels: trailing dim mismatch");
    c_total += p.dim(0);
  }
  Shape oshape = base;
  oshape[0] = c_total;
  std::vector<T> out;
  out.reserve(static_cast<size_t>(numel_of(oshape)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor<T>> parents = parts;
  return detail::make_node<T>(std::move(oshape), std::move(out), std::move(parents),
                              [parts](TensorNode<T>& n) {
                                int64_t off = 0;
                                for (const auto& p : parts) {
                                  const int64_t cnt = p.numel();
                                  if (p.requires_grad())
                                    detail::accumulate(*p.node(), n.grad.data() + off, cnt);
                                  off += cnt;
                                }
                              });
}

// Channels [begin, begin+count) of a [C, ...] tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int64_t begin, int64_t count) {
  const int64_t c = a.dim(0);
  check_shape(begin >= 0 && count >= 1 && begin + count <= c, "slice_channels: range out of bounds");
  const int64_t v = a.numel() / c;
  std::vector<T> out(a.data().begin() + begin * v, a.data().begin() + (begin + count) * v);
  Shape oshape = a.shape();
  oshape[0] = count;
  return detail::make_node<T>(std::move(oshape), std::move(out), {a},
                              [a, begin, v](TensorNode<T>& n) {
                                auto& g = a.node()->ensure_grad();
                                for (int64_t i = 0; i < n.numel(); ++i)
                                  g[size_t(begin * v + i)] += n.grad[size_t(i)];
                              });
}

// ---------------------------------------------------------------------------
// Channel broadcasts over [C, ...] volumes
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add_channel_broadcast(const Tensor<T>& vol, const Tensor<T>& vec) {
  const int64_t c = vol.dim(0);
  check_shape(vec.numel() == c, "add_channel_broadcast: vector length must equal channel count");
  const int64_t v = vol.numel() / c;
  std::vector<T> out(vol.values());
  const auto vd = vec.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < v; ++i) out[size_t(ch * v + i)] += vd[size_t(ch)];
  return detail::make_node<T>(vol.shape(), std::move(out), {vol, vec},
                              [vol, vec, c, v](TensorNode<T>& n) {
                                if (vol.requires_grad())
                                  detail::accumulate(*vol.node(), n.grad.data(), n.numel());
                                if (vec.requires_grad()) {
                                  auto& g = vec.node()->ensure_grad();
                                  for (int64_t ch = 0; ch < c; ++ch) {
                                    T acc = T(0);
                                    for (int64_t i = 0; i < v; ++i) acc += n.grad[size_t(ch * v + i)];
                                    g[size_t(ch)] += acc;
                                  }
                                }
                              });
}

template <class T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& vol, const Tensor<T>& vec) {
  const int64_t c = vol.dim(0);
  check_shape(vec.numel() == c, "mul_channel_broadcast: vector length must equal channel count");
  const int64_t v = vol.numel() / c;
  std::vector<T> out(vol.values());
  const auto vd = vec.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < v; ++i) out[size_t(ch * v + i)] *= vd[size_t(ch)];
  return detail::make_node<T>(vol.shape(), std::move(out), {vol, vec},
                              [vol, vec, c, v](TensorNode<T>& n) {
                                const auto vold = vol.data();
                                const auto vecd = vec.data();
                                if (vol.requires_grad()) {
                                  auto& g = vol.node()->ensure_grad();
                                  for (int64_t ch = 0; ch < c; ++ch)
                                    for (int64_t i = 0; i < v; ++i)
                                      g[size_t(ch * v + i)] += n.grad[size_t(ch * v + i)] * vecd[size_t(ch)];
                                }
                                if (vec.requires_grad()) {
                                  auto& g = vec.node()->ensure_grad();
                                  for (int64_t ch = 0; ch < c; ++ch) {
                                    T acc = T(0);
                                    for (int64_t i = 0; i < v; ++i)
                                      acc += n.grad[size_t(ch * v + i)] * vold[size_t(ch * v + i)];
                                    g[size_t(ch)] += acc;
                                  }
                                }
                              });
}

// Broadcast a [1, ...] tensor across C channels.
template <class T>
Tensor<T> broadcast_channel(const Tensor<T>& plane, int64_t c) {
  check_shape(plane.dim(0) == 1, "broadcast_channel: leading dim must be 1");
  const int64_t v = plane.numel();
  std::vector<T> out(static_cast<size_t>(c * v));
  for (int64_t ch = 0; ch < c; ++ch)
    std::memcpy(out.data() + ch * v, plane.data().data(), sizeof(T) * static_cast<size_t>(v));
  Shape oshape = plane.shape();
  oshape[0] = c;
  return detail::make_node<T>(std::move(oshape), std::move(out), {plane},
                              [plane, c, v](TensorNode<T>& n) {
                                auto& g = plane.node()->ensure_grad();
                                for (int64_t ch = 0; ch < c; ++ch)
                                  for (int64_t i = 0; i < v; ++i) g[size_t(i)] += n.grad[size_t(ch * v + i)];
                              });
}

// ---------------------------------------------------------------------------
// Matrix product (row-major [m,k] x [k,n] -> [m,n]), Eigen-backed.
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;
}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank 2");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check_shape(k == k2, "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m * n));
  detail::ECMap<T> A(a.data().data(), m, k), B(b.data().data(), k, n);
  detail::EMap<T>(out.data(), m, n).noalias() = A * B;
  return detail::make_node<T>({m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorNode<T>& n_) {
    detail::ECMap<T> G(n_.grad.data(), m, n);
    if (a.requires_grad()) {
      detail::ECMap<T> B(b.data().data(), k, n);
      detail::EMap<T>(a.node()->ensure_grad().data(), m, k).noalias() += G * B.transpose();
    }
    if (b.requires_grad()) {
      detail::ECMap<T> A(a.data().data(), m, k);
      detail::EMap<T>(b.node()->ensure_grad().data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

// Adds a length-C bias to every row of an [N, C] matrix.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  check_shape(x.rank() == 2, "add_row_bias: input must be rank 2");
  const int64_t n = x.dim(0), c = x.dim(1);
  check_shape(bias.numel() == c, "add_row_bias: bias length must equal row width");
  std::vector<T> out(x.values());
  const auto bd = bias.data();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < c; ++j) out[size_t(r * c + j)] += bd[size_t(j)];
  return detail::make_node<T>(x.shape(), std::move(out), {x, bias},
                              [x, bias, n, c](TensorNode<T>& nd) {
                                if (x.requires_grad())
                                  detail::accumulate(*x.node(), nd.grad.data(), nd.numel());
                                if (bias.requires_grad()) {
                                  auto& g = bias.node()->ensure_grad();
                                  for (int64_t r = 0; r < n; ++r)
                                    for (int64_t j = 0; j < c; ++j) g[size_t(j)] += nd.grad[size_t(r * c + j)];
                                }
                              });
}

}  // namespace kmamba
