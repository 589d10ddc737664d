#include "penrecon/nn.hpp"

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "penrecon/rng.hpp"

namespace pen::nn {

void DrunetArch::validate() const {
  if (channels.empty()) throw std::invalid_argument("DrunetArch: no scales");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("DrunetArch: non-positive channel width");
  if (blocks_per_scale < 1) throw std::invalid_argument("DrunetArch: blocks_per_scale < 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("DrunetArch: kernel must be odd and >= 1");
}

namespace {

struct TapeBuilder {
  Tape tape;

  int new_value() { return tape.num_values++; }

  int conv(int in, int in_c, int out_c, int kernel) {
    OpNode op;
    op.kind = OpKind::Conv;
    op.a = in;
    op.out = new_value();
    op.in_c = in_c;
    op.out_c = out_c;
    op.kernel = kernel;
    op.w_off = tape.param_count;
    op.w_len = std::size_t(out_c) * in_c * kernel * kernel;
    tape.param_count += op.w_len;
    tape.ops.push_back(op);
    return op.out;
  }

  int down2(int in, int in_c, int out_c) {
    OpNode op;
    op.kind = OpKind::Down2;
    op.a = in;
    op.out = new_value();
    op.in_c = in_c;
    op.out_c = out_c;
    op.w_off = tape.param_count;
    op.w_len = std::size_t(out_c) * in_c * 4;
    tape.param_count += op.w_len;
    tape.ops.push_back(op);
    return op.out;
  }

  int up2(int in, int in_c, int out_c) {
    OpNode op;
    op.kind = OpKind::Up2;
    op.a = in;
    op.out = new_value();
    op.in_c = in_c;
    op.out_c = out_c;
    op.w_off = tape.param_count;
    op.w_len = std::size_t(in_c) * out_c * 4;  // [in][out][2][2]
    tape.param_count += op.w_len;
    tape.ops.push_back(op);
    return op.out;
  }

  int relu(int in, int c) {
    OpNode op;
    op.kind = OpKind::Relu;
    op.a = in;
    op.out = new_value();
    op.in_c = c;
    op.out_c = c;
    tape.ops.push_back(op);
    return op.out;
  }

  int add(int a, int b, int c) {
    OpNode op;
    op.kind = OpKind::Add;
    op.a = a;
    op.b = b;
    op.out = new_value();
    op.in_c = c;
    op.out_c = c;
    tape.ops.push_back(op);
    return op.out;
  }

  // conv -> relu -> conv with identity skip
  int res_block(int in, int c, int kernel) {
    const int c1 = conv(in, c, c, kernel);
    const int r = relu(c1, c);
    const int c2 = conv(r, c, c, kernel);
    return add(in, c2, c);
  }

  int res_chain(int in, int c, int blocks, int kernel) {
    int cur = in;
    for (int i = 0; i < blocks; ++i) cur = res_block(cur, c, kernel);
    return cur;
  }
};

}  // namespace

Tape build_drunet_tape(const DrunetArch& arch) {
  arch.validate();
  TapeBuilder b;
  const int S = arch.scales();
  const int k = arch.kernel;

  b.tape.input_id = b.new_value();
  const int head = b.conv(b.tape.input_id, 2, arch.channels[0], k);

  std::vector<int> skips(std::max(S - 1, 0), -1);
  int cur = head;
  for (int s = 0; s + 1 < S; ++s) {
    cur = b.res_chain(cur, arch.channels[s], arch.blocks_per_scale, k);
    cur = b.down2(cur, arch.channels[s], arch.channels[s + 1]);
    skips[s] = cur;  // downscaling output joins the matching upscaling input
  }
  cur = b.res_chain(cur, arch.channels[S - 1], arch.blocks_per_scale, k);
  for (int s = S - 2; s >= 0; --s) {
    cur = b.add(cur, skips[s], arch.channels[s + 1]);
    cur = b.up2(cur, arch.channels[s + 1], arch.channels[s]);
    cur = b.res_chain(cur, arch.channels[s], arch.blocks_per_scale, k);
  }
  cur = b.add(cur, head, arch.channels[0]);
  b.tape.output_id = b.conv(cur, arch.channels[0], 2, k);
  return b.tape;
}

std::size_t drunet_param_count(const DrunetArch& arch) {
  return build_drunet_tape(arch).param_count;
}

namespace {

// ---- Conv (odd kernel, stride 1, zero padding, "same" output size) ----

// Fills ws.col with the im2col matrix of `in`: rows indexed by
// (ci, ky, kx), columns by (i, y, x) across the whole batch.
void im2col(const Tensor& in, int kernel, std::vector<double>& col) {
  const int k = kernel, off = k / 2;
  const int h = in.h, w = in.w, n = in.n;
  const std::size_t ncols = std::size_t(n) * h * w;
  col.assign(std::size_t(in.c) * k * k * ncols, 0.0);

  std::size_t row = 0;
  for (int ci = 0; ci < in.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = col.data() + row * ncols;
        const int dy = ky - off, dx = kx - off;
        for (int i = 0; i < n; ++i) {
          const double* src = in.at(ci, i);
          double* d = dst + std::size_t(i) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w, w - dx);
            const double* s = src + std::size_t(sy) * w;
            double* dd = d + std::size_t(y) * w;
            for (int x = x0; x < x1; ++x) dd[x] = s[x + dx];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds rows of `col` back into `out`.
void col2im_acc(const std::vector<double>& col, int kernel, Tensor& out) {
  const int k = kernel, off = k / 2;
  const int h = out.h, w = out.w, n = out.n;
  const std::size_t ncols = std::size_t(n) * h * w;

  std::size_t row = 0;
  for (int ci = 0; ci < out.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = col.data() + row * ncols;
        const int dy = ky - off, dx = kx - off;
        for (int i = 0; i < n; ++i) {
          double* dst = out.at(ci, i);
          const double* s = src + std::size_t(i) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w, w - dx);
            double* dd = dst + std::size_t(sy) * w;
            const double* ss = s + std::size_t(y) * w;
            for (int x = x0; x < x1; ++x) dd[x + dx] += ss[x];
          }
        }
      }
}

void conv_forward(const Tensor& in, std::span<const double> wt, int out_c, int kernel,
                  Tensor& out, Workspace& ws) {
  out = Tensor(in.n, out_c, in.h, in.w);
  im2col(in, kernel, ws.col);
  const int M = out_c;
  const int K = in.c * kernel * kernel;
  const int N = int(std::size_t(in.n) * in.h * in.w);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0, wt.data(), K,
              ws.col.data(), N, 0.0, out.v.data(), N);
}

void conv_vjp_input(const Tensor& gout, std::span<const double> wt, int in_c, int kernel,
                    Tensor& gin_acc, Workspace& ws) {
  const int M = gout.c;
  const int K = in_c * kernel * kernel;
  const int N = int(std::size_t(gout.n) * gout.h * gout.w);
  ws.colg.assign(std::size_t(K) * N, 0.0);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, M, 1.0, wt.data(), K,
              gout.v.data(), N, 0.0, ws.colg.data(), N);
  col2im_acc(ws.colg, kernel, gin_acc);
}

void conv_vjp_weight(const Tensor& gout, const Tensor& in, int kernel,
                     std::span<double> gw, double scale, Workspace& ws) {
  im2col(in, kernel, ws.col);
  const int M = gout.c;
  const int K = in.c * kernel * kernel;
  const int N = int(std::size_t(in.n) * in.h * in.w);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, N, scale, gout.v.data(), N,
              ws.col.data(), N, 1.0, gw.data(), K);
}

// ---- Down2: 2x2 stride-2 convolution, weights [out][in][2][2] ----

void down2_forward(const Tensor& in, std::span<const double> wt, int out_c, Tensor& out) {
  const int oh = in.h / 2, ow = in.w / 2;
  out = Tensor(in.n, out_c, oh, ow);
  for (int co = 0; co < out_c; ++co)
    for (int ci = 0; ci < in.c; ++ci) {
      const double* w4 = wt.data() + (std::size_t(co) * in.c + ci) * 4;
      for (int i = 0; i < in.n; ++i) {
        const double* src = in.at(ci, i);
        double* dst = out.at(co, i);
        for (int y = 0; y < oh; ++y) {
          const double* s0 = src + std::size_t(2 * y) * in.w;
          const double* s1 = s0 + in.w;
          double* d = dst + std::size_t(y) * ow;
          for (int x = 0; x < ow; ++x)
            d[x] += w4[0] * s0[2 * x] + w4[1] * s0[2 * x + 1] + w4[2] * s1[2 * x] +
                    w4[3] * s1[2 * x + 1];
        }
      }
    }
}

void down2_vjp_input(const Tensor& gout, std::span<const double> wt, int in_c,
                     Tensor& gin_acc) {
  const int oh = gout.h, ow = gout.w;
  for (int co = 0; co < gout.c; ++co)
    for (int ci = 0; ci < in_c; ++ci) {
      const double* w4 = wt.data() + (std::size_t(co) * in_c + ci) * 4;
      for (int i = 0; i < gout.n; ++i) {
        const double* g = gout.at(co, i);
        double* dst = gin_acc.at(ci, i);
        for (int y = 0; y < oh; ++y) {
          double* d0 = dst + std::size_t(2 * y) * gin_acc.w;
          double* d1 = d0 + gin_acc.w;
          const double* gg = g + std::size_t(y) * ow;
          for (int x = 0; x < ow; ++x) {
            d0[2 * x] += w4[0] * gg[x];
            d0[2 * x + 1] += w4[1] * gg[x];
            d1[2 * x] += w4[2] * gg[x];
            d1[2 * x + 1] += w4[3] * gg[x];
          }
        }
      }
    }
}

void down2_vjp_weight(const Tensor& gout, const Tensor& in, std::span<double> gw,
                      double scale) {
  const int oh = gout.h, ow = gout.w;
  for (int co = 0; co < gout.c; ++co)
    for (int ci = 0; ci < in.c; ++ci) {
      double acc[4] = {0, 0, 0, 0};
      for (int i = 0; i < gout.n; ++i) {
        const double* g = gout.at(co, i);
        const double* src = in.at(ci, i);
        for (int y = 0; y < oh; ++y) {
          const double* s0 = src + std::size_t(2 * y) * in.w;
          const double* s1 = s0 + in.w;
          const double* gg = g + std::size_t(y) * ow;
          for (int x = 0; x < ow; ++x) {
            acc[0] += gg[x] * s0[2 * x];
            acc[1] += gg[x] * s0[2 * x + 1];
            acc[2] += gg[x] * s1[2 * x];
            acc[3] += gg[x] * s1[2 * x + 1];
          }
        }
      }
      double* w4 = gw.data() + (std::size_t(co) * in.c + ci) * 4;
      for (int t = 0; t < 4; ++t) w4[t] += scale * acc[t];
    }
}

// ---- Up2: 2x2 stride-2 transposed convolution, weights [in][out][2][2].
// Kernel equals stride, so every output pixel receives exactly one tap. ----

void up2_forward(const Tensor& in, std::span<const double> wt, int out_c, Tensor& out) {
  const int oh = in.h * 2, ow = in.w * 2;
  out = Tensor(in.n, out_c, oh, ow);
  for (int ci = 0; ci < in.c; ++ci)
    for (int co = 0; co < out_c; ++co) {
      const double* w4 = wt.data() + (std::size_t(ci) * out_c + co) * 4;
      for (int i = 0; i < in.n; ++i) {
        const double* src = in.at(ci, i);
        double* dst = out.at(co, i);
        for (int y = 0; y < in.h; ++y) {
          double* d0 = dst + std::size_t(2 * y) * ow;
          double* d1 = d0 + ow;
          const double* s = src + std::size_t(y) * in.w;
          for (int x = 0; x < in.w; ++x) {
            d0[2 * x] += w4[0] * s[x];
            d0[2 * x + 1] += w4[1] * s[x];
            d1[2 * x] += w4[2] * s[x];
            d1[2 * x + 1] += w4[3] * s[x];
          }
        }
      }
    }
}

void up2_vjp_input(const Tensor& gout, std::span<const double> wt, int in_c,
                   Tensor& gin_acc) {
  const int ih = gout.h / 2, iw = gout.w / 2;
  for (int ci = 0; ci < in_c; ++ci)
    for (int co = 0; co < gout.c; ++co) {
      const double* w4 = wt.data() + (std::size_t(ci) * gout.c + co) * 4;
      for (int i = 0; i < gout.n; ++i) {
        const double* g = gout.at(co, i);
        double* dst = gin_acc.at(ci, i);
        for (int y = 0; y < ih; ++y) {
          const double* g0 = g + std::size_t(2 * y) * gout.w;
          const double* g1 = g0 + gout.w;
          double* d = dst + std::size_t(y) * iw;
          for (int x = 0; x < iw; ++x)
            d[x] += w4[0] * g0[2 * x] + w4[1] * g0[2 * x + 1] + w4[2] * g1[2 * x] +
                    w4[3] * g1[2 * x + 1];
        }
      }
    }
}

void up2_vjp_weight(const Tensor& gout, const Tensor& in, std::span<double> gw,
                    double scale) {
  for (int ci = 0; ci < in.c; ++ci)
    for (int co = 0; co < gout.c; ++co) {
      double acc[4] = {0, 0, 0, 0};
      for (int i = 0; i < in.n; ++i) {
        const double* g = gout.at(co, i);
        const double* src = in.at(ci, i);
        for (int y = 0; y < in.h; ++y) {
          const double* g0 = g + std::size_t(2 * y) * gout.w;
          const double* g1 = g0 + gout.w;
          const double* s = src + std::size_t(y) * in.w;
          for (int x = 0; x < in.w; ++x) {
            acc[0] += g0[2 * x] * s[x];
            acc[1] += g0[2 * x + 1] * s[x];
            acc[2] += g1[2 * x] * s[x];
            acc[3] += g1[2 * x + 1] * s[x];
          }
        }
      }
      double* w4 = gw.data() + (std::size_t(ci) * gout.c + co) * 4;
      for (int t = 0; t < 4; ++t) w4[t] += scale * acc[t];
    }
}

inline std::span<const double> op_weights(const OpNode& op, std::span<const double> params) {
  return params.subspan(op.w_off, op.w_len);
}

}  // namespace

void tape_forward(const Tape& tape, std::span<const double> params, const Tensor& x,
                  std::vector<Tensor>& vals, Workspace& ws) {
  if (params.size() != tape.param_count)
    throw std::invalid_argument("tape_forward: parameter count mismatch");
  vals.assign(tape.num_values, Tensor());
  vals[tape.input_id] = x;
  for (const OpNode& op : tape.ops) {
    const Tensor& a = vals[op.a];
    switch (op.kind) {
      case OpKind::Conv:
        conv_forward(a, op_weights(op, params), op.out_c, op.kernel, vals[op.out], ws);
        break;
      case OpKind::Down2:
        if (a.h % 2 || a.w % 2)
          throw std::invalid_argument("tape_forward: odd spatial size at downscale");
        down2_forward(a, op_weights(op, params), op.out_c, vals[op.out]);
        break;
      case OpKind::Up2:
        up2_forward(a, op_weights(op, params), op.out_c, vals[op.out]);
        break;
      case OpKind::Relu: {
        Tensor& out = vals[op.out];
        out = Tensor(a.n, a.c, a.h, a.w);
        for (std::size_t i = 0; i < a.v.size(); ++i)
          out.v[i] = a.v[i] > 0.0 ? a.v[i] : 0.0;
        break;
      }
      case OpKind::Add: {
        const Tensor& b = vals[op.b];
        if (!a.same_shape(b)) throw std::invalid_argument("tape_forward: add shape mismatch");
        Tensor& out = vals[op.out];
        out = Tensor(a.n, a.c, a.h, a.w);
        for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
        break;
      }
    }
  }
}

namespace {

void ensure_adj(std::vector<Tensor>& adj, int id, const Tensor& like) {
  if (adj[id].v.empty()) adj[id] = Tensor(like.n, like.c, like.h, like.w);
}

}  // namespace

void tape_vjp(const Tape& tape, std::span<const double> params,
              const std::vector<Tensor>& mask_vals, const std::vector<Tensor>& src_vals,
              const Tensor& cot_out, std::vector<Tensor>& adj, std::span<double> wgrad,
              double wscale, Workspace& ws) {
  if (!wgrad.empty() && wgrad.size() != tape.param_count)
    throw std::invalid_argument("tape_vjp: wgrad size mismatch");
  adj.assign(tape.num_values, Tensor());
  adj[tape.output_id] = cot_out;

  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) {
    const OpNode& op = *it;
    const Tensor& g = adj[op.out];
    if (g.v.empty()) continue;
    switch (op.kind) {
      case OpKind::Conv:
        ensure_adj(adj, op.a, mask_vals[op.a]);
        conv_vjp_input(g, op_weights(op, params), op.in_c, op.kernel, adj[op.a], ws);
        if (!wgrad.empty())
          conv_vjp_weight(g, src_vals[op.a], op.kernel,
                          wgrad.subspan(op.w_off, op.w_len), wscale, ws);
        break;
      case OpKind::Down2:
        ensure_adj(adj, op.a, mask_vals[op.a]);
        down2_vjp_input(g, op_weights(op, params), op.in_c, adj[op.a]);
        if (!wgrad.empty())
          down2_vjp_weight(g, src_vals[op.a], wgrad.subspan(op.w_off, op.w_len), wscale);
        break;
      case OpKind::Up2:
        ensure_adj(adj, op.a, mask_vals[op.a]);
        up2_vjp_input(g, op_weights(op, params), op.in_c, adj[op.a]);
        if (!wgrad.empty())
          up2_vjp_weight(g, src_vals[op.a], wgrad.subspan(op.w_off, op.w_len), wscale);
        break;
      case OpKind::Relu: {
        ensure_adj(adj, op.a, mask_vals[op.a]);
        const Tensor& pre = mask_vals[op.a];
        Tensor& ga = adj[op.a];
        for (std::size_t i = 0; i < pre.v.size(); ++i)
          if (pre.v[i] > 0.0) ga.v[i] += g.v[i];
        break;
      }
      case OpKind::Add: {
        ensure_adj(adj, op.a, mask_vals[op.a]);
        ensure_adj(adj, op.b, mask_vals[op.b]);
        Tensor& ga = adj[op.a];
        Tensor& gb = adj[op.b];
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] += g.v[i];
          gb.v[i] += g.v[i];
        }
        break;
      }
    }
  }
}

void tape_jvp(const Tape& tape, std::span<const double> params,
              const std::vector<Tensor>& mask_vals, const Tensor& tan_in,
              std::vector<Tensor>& tans, Workspace& ws) {
  tans.assign(tape.num_values, Tensor());
  tans[tape.input_id] = tan_in;
  for (const OpNode& op : tape.ops) {
    const Tensor& a = tans[op.a];
    switch (op.kind) {
      case OpKind::Conv:
        conv_forward(a, op_weights(op, params), op.out_c, op.kernel, tans[op.out], ws);
        break;
      case OpKind::Down2:
        down2_forward(a, op_weights(op, params), op.out_c, tans[op.out]);
        break;
      case OpKind::Up2:
        up2_forward(a, op_weights(op, params), op.out_c, tans[op.out]);
        break;
      case OpKind::Relu: {
        const Tensor& pre = mask_vals[op.a];
        Tensor& out = tans[op.out];
        out = Tensor(a.n, a.c, a.h, a.w);
        for (std::size_t i = 0; i < a.v.size(); ++i)
          out.v[i] = pre.v[i] > 0.0 ? a.v[i] : 0.0;
        break;
      }
      case OpKind::Add: {
        const Tensor& b = tans[op.b];
        Tensor& out = tans[op.out];
        out = Tensor(a.n, a.c, a.h, a.w);
        for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
        break;
      }
    }
  }
}

void tape_weight_grads(const Tape& tape, const std::vector<Tensor>& cot_at,
                       const std::vector<Tensor>& inputs, std::span<double> wgrad,
                       double wscale, Workspace& ws) {
  if (wgrad.size() != tape.param_count)
    throw std::invalid_argument("tape_weight_grads: wgrad size mismatch");
  for (const OpNode& op : tape.ops) {
    if (op.w_len == 0) continue;
    const Tensor& g = cot_at[op.out];
    const Tensor& in = inputs[op.a];
    if (g.v.empty() || in.v.empty()) continue;
    switch (op.kind) {
      case OpKind::Conv:
        conv_vjp_weight(g, in, op.kernel, wgrad.subspan(op.w_off, op.w_len), wscale, ws);
        break;
      case OpKind::Down2:
        down2_vjp_weight(g, in, wgrad.subspan(op.w_off, op.w_len), wscale);
        break;
      case OpKind::Up2:
        up2_vjp_weight(g, in, wgrad.subspan(op.w_off, op.w_len), wscale);
        break;
      default:
        break;
    }
  }
}

std::vector<double> init_params(const DrunetArch& arch, std::uint64_t seed) {
  const Tape tape = build_drunet_tape(arch);
  std::vector<double> params(tape.param_count, 0.0);
  Rng rng(derive_seed(seed, 0x696e6974ULL));
  for (const OpNode& op : tape.ops) {
    if (op.w_len == 0) continue;
    int fan_in = 0;
    switch (op.kind) {
      case OpKind::Conv: fan_in = op.in_c * op.kernel * op.kernel; break;
      case OpKind::Down2: fan_in = op.in_c * 4; break;
      case OpKind::Up2: fan_in = op.in_c; break;
      default: break;
    }
    const double sd = std::sqrt(2.0 / std::max(fan_in, 1));
    for (std::size_t i = 0; i < op.w_len; ++i) params[op.w_off + i] = sd * rng.normal();
  }
  return params;
}

}  // namespace pen::nn
