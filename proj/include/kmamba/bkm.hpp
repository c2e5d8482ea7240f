#pragma once

#include "kmamba/kan.hpp"
#include "kmamba/ssm.hpp"

namespace kmamba {

// Bidirectional KAN-enhanced Mamba block. A pointwise projection produces the
// working feature F0; two state-space scans traverse the flattened volume in
// opposite directions; the fusion F_f + kan(norm(F_b)) + F_b is projected back
// and added to the block input. Output shape always equals input shape.
template <class T>
struct BkmBlock {
  Conv3dLayer<T> input_projection;  // pointwise C -> C
  SsmParameters<T> forward_branch;
  SsmParameters<T> backward_branch;
  ScanOrder order;
  LayerNormRows<T> norm;
  KanLayer<T> kan;
  LinearLayer<T> output_projection;  // per-position C -> C

  static BkmBlock create(int64_t channels, int64_t d_state, int64_t kan_hidden, Rng& rng) {
    BkmBlock b;
    b.input_projection = Conv3dLayer<T>::create(channels, channels, ConvSpec::pointwise(), rng);
    b.forward_branch = SsmParameters<T>::create(d_state, channels, channels, ScanDirection::forward, rng);
    b.backward_branch = SsmParameters<T>::create(d_state, channels, channels, ScanDirection::backward, rng);
    b.order = ScanOrder::row_major();
    b.norm = LayerNormRows<T>::create(channels);
    b.kan = KanLayer<T>::create(channels, kan_hidden, channels, rng);
    b.output_projection = LinearLayer<T>::create(channels, channels, rng);
    return b;
  }

  static BkmBlock zero_init(int64_t channels, int64_t d_state, int64_t kan_hidden) {
    BkmBlock b;
    b.input_projection = Conv3dLayer<T>::zero_init(channels, channels, ConvSpec::pointwise());
    b.forward_branch = SsmParameters<T>::zero_init(d_state, channels, channels, ScanDirection::forward);
    b.backward_branch = SsmParameters<T>::zero_init(d_state, channels, channels, ScanDirection::backward);
    b.order = ScanOrder::row_major();
    b.norm = LayerNormRows<T>::zero_init(channels);
    b.kan = KanLayer<T>::zero_init(channels, kan_hidden, channels);
    b.output_projection = LinearLayer<T>();
    b.output_projection.weight = Tensor<T>::zeros({channels, channels});
    b.output_projection.weight.set_requires_grad();
    b.output_projection.bias = Tensor<T>::zeros({channels});
    b.output_projection.bias.set_requires_grad();
    return b;
  }

  int64_t channels() const { return input_projection.weight.dim(0); }

  int64_t param_count() const {
    return input_projection.param_count() + forward_branch.param_count() +
           backward_branch.param_count() + norm.param_count() + kan.param_count() +
           output_projection.param_count();
  }

  void params(const std::string& prefix, ParamList<T>& out) const {
    input_projection.params(prefix + ".in_proj", out);
    forward_branch.params(prefix + ".fwd", out);
    backward_branch.params(prefix + ".bwd", out);
    norm.params(prefix + ".norm", out);
    kan.params(prefix + ".kan", out);
    output_projection.params(prefix + ".out_proj", out);
  }
};

template <class T>
struct BkmTrace {
  Tensor<T> output;          // Y, same shape as input
  Tensor<T> forward_feat;    // F_f as a volume
  Tensor<T> backward_feat;   // F_b as a volume
};

template <class T>
BkmTrace<T> bkm_forward_trace(const Tensor<T>& x, const BkmBlock<T>& block) {
  check_shape(x.rank() == 4, "bkm_forward: input must be [C,H,W,D]");
  check_shape(x.dim(0) == block.channels(), "bkm_forward: channel mismatch");
  check_value(block.forward_branch.direction == ScanDirection::forward &&
                  block.backward_branch.direction == ScanDirection::backward,
              "bkm_forward: branch directions are fixed (forward, backward)");
  const std::array<int64_t, 3> dims{x.dim(1), x.dim(2), x.dim(3)};

  Tensor<T> f0 = block.input_projection(x);
  Tensor<T> seq = flatten_volume(f0, block.order);            // [T, C]
  Tensor<T> ff = scan_naive(seq, block.forward_branch);       // [T, C]
  Tensor<T> fb = scan_naive(seq, block.backward_branch);      // [T, C]
  Tensor<T> fused = add(add(ff, kan_forward(block.norm(fb), block.kan)), fb);
  Tensor<T> projected = block.output_projection(fused);
  Tensor<T> y = add(unflatten_volume(projected, dims, block.order), x);

  BkmTrace<T> tr;
  tr.output = y;
  tr.forward_feat = unflatten_volume(ff, dims, block.order);
  tr.backward_feat = unflatten_volume(fb, dims, block.order);
  return tr;
}

template <class T>
Tensor<T> bkm_forward(const Tensor<T>& x, const BkmBlock<T>& block) {
  return bkm_forward_trace(x, block).output;
}

}  // namespace kmamba
