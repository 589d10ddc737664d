#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pen::nn {

/// Batched planar tensor, channel-major: value layout [c][n][h][w]. The
/// batch lives inside each channel plane so convolutions lower to a single
/// GEMM per layer across the whole batch.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(std::size_t(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t pixels() const { return std::size_t(h) * w; }
  std::size_t chan_stride() const { return std::size_t(n) * h * w; }
  double* chan(int ci) { return v.data() + chan_stride() * ci; }
  const double* chan(int ci) const { return v.data() + chan_stride() * ci; }
  /// Pointer to image i of channel ci.
  double* at(int ci, int i) { return chan(ci) + pixels() * i; }
  const double* at(int ci, int i) const { return chan(ci) + pixels() * i; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

/// Miniature DRUNet topology descriptor: one entry in channels per scale,
/// kernel applies to head/tail and residual-block convolutions. Downscaling
/// is a 2x2 stride-2 convolution, upscaling a 2x2 stride-2 transposed
/// convolution; all convolutions are bias-free.
struct DrunetArch {
  std::vector<int> channels{16, 32, 64};
  int blocks_per_scale = 2;
  int kernel = 3;

  int scales() const { return int(channels.size()); }
  /// Input height/width must be divisible by this (one halving per scale
  /// transition).
  int divisor() const { return 1 << (scales() - 1); }
  void validate() const;
};

enum class OpKind { Conv, Down2, Up2, Relu, Add };

struct OpNode {
  OpKind kind;
  int a = -1, b = -1;  // input value ids (b only for Add)
  int out = -1;
  int in_c = 0, out_c = 0;
  int kernel = 3;                  // Conv only
  std::size_t w_off = 0, w_len = 0;
};

/// Static single-assignment description of the network: ops reference value
/// ids; executing in order computes the output from the input.
struct Tape {
  std::vector<OpNode> ops;
  int num_values = 0;
  int input_id = -1;
  int output_id = -1;
  std::size_t param_count = 0;
};

Tape build_drunet_tape(const DrunetArch& arch);
std::size_t drunet_param_count(const DrunetArch& arch);

/// Reusable scratch buffers for the im2col GEMM path.
struct Workspace {
  std::vector<double> col;
  std::vector<double> colg;
};

/// Runs the network forward; vals[id] holds every intermediate value.
void tape_forward(const Tape& tape, std::span<const double> params, const Tensor& x,
                  std::vector<Tensor>& vals, Workspace& ws);

/// Reverse-mode pass with output cotangent cot_out. Fills adj (indexed like
/// vals; adj[input_id] is the input gradient). When wgrad is nonempty,
/// accumulates wscale * (weight gradients) into it, reading each linear
/// op's input from src_vals: pass the primal values for ordinary backprop,
/// or the tangent values from tape_jvp for the tangent-graph term of a
/// second-order gradient. ReLU masks always come from mask_vals (primal).
void tape_vjp(const Tape& tape, std::span<const double> params,
              const std::vector<Tensor>& mask_vals, const std::vector<Tensor>& src_vals,
              const Tensor& cot_out, std::vector<Tensor>& adj, std::span<double> wgrad,
              double wscale, Workspace& ws);

/// Forward-mode (linearized) pass with input tangent tan_in; tans[id] holds
/// the tangent of every value. ReLU masks come from mask_vals (primal).
void tape_jvp(const Tape& tape, std::span<const double> params,
              const std::vector<Tensor>& mask_vals, const Tensor& tan_in,
              std::vector<Tensor>& tans, Workspace& ws);

/// Accumulates wscale * sum over linear ops of vjp_w(cot_at[op.out],
/// inputs[op.a]) into wgrad. Used for the tangent-graph weight term.
void tape_weight_grads(const Tape& tape, const std::vector<Tensor>& cot_at,
                       const std::vector<Tensor>& inputs, std::span<double> wgrad,
                       double wscale, Workspace& ws);

/// He-style deterministic parameter initialization.
std::vector<double> init_params(const DrunetArch& arch, std::uint64_t seed);

}  // namespace pen::nn
