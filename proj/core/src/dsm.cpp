#include "penrecon/dsm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "penrecon/rng.hpp"

namespace pen {

void DsmConfig::validate() const {
  if (!(sigma_min >= 0.0 && sigma_min <= sigma_max && sigma_max <= 1.0))
    throw std::invalid_argument("DsmConfig: sigma range must satisfy 0 <= min <= max <= 1");
  if (batch < 1) throw std::invalid_argument("DsmConfig: batch must be >= 1");
  if (steps < 0) throw std::invalid_argument("DsmConfig: negative steps");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("DsmConfig: learning_rate <= 0");
  if (patch_size < 16 || patch_size % 4 != 0)
    throw std::invalid_argument("DsmConfig: patch_size must be >= 16 and divisible by 4");
  if (patch_size % (1 << (arch.scales() - 1)) != 0)
    throw std::invalid_argument("DsmConfig: patch_size not divisible by the arch downscaling");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("DsmConfig: clip_norm <= 0");
  arch.validate();
}

double dsm_loss_grad(const nn::Tape& tape, std::span<const double> params,
                     const nn::Tensor& noisy, const nn::Tensor& noise,
                     std::span<const double> sigmas, std::span<double> grad,
                     nn::Workspace& ws) {
  const int B = noisy.n;
  if (noise.n != B || int(sigmas.size()) != B)
    throw std::invalid_argument("dsm_loss_grad: batch size mismatch");
  const std::size_t px = noisy.pixels();

  // Primal pass and residual r = x~ - psi(x~).
  std::vector<nn::Tensor> vals;
  nn::tape_forward(tape, params, noisy, vals, ws);
  const nn::Tensor& psi = vals[tape.output_id];
  nn::Tensor r(B, 2, noisy.h, noisy.w);
  for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = noisy.v[i] - psi.v[i];

  // Score H = r - J^T r; keep the adjoint flow S for the tangent-graph term.
  std::vector<nn::Tensor> adjS;
  nn::tape_vjp(tape, params, vals, vals, r, adjS, {}, 0.0, ws);
  const nn::Tensor& jtr = adjS[tape.input_id];
  nn::Tensor score(B, 2, noisy.h, noisy.w);
  for (std::size_t i = 0; i < score.v.size(); ++i) score.v[i] = r.v[i] - jtr.v[i];

  // Loss and the cotangent w = d(mean loss)/dH = (2 sigma / B)(sigma H - n).
  double loss = 0.0;
  nn::Tensor w(B, 2, noisy.h, noisy.w);
  for (int b = 0; b < B; ++b) {
    const double s = sigmas[b];
    double acc = 0.0;
    for (int ch = 0; ch < 2; ++ch) {
      const double* hs = score.at(ch, b);
      const double* ns = noise.at(ch, b);
      double* wd = w.at(ch, b);
      for (std::size_t i = 0; i < px; ++i) {
        const double d = s * hs[i] - ns[i];
        acc += d * d;
        wd[i] = (2.0 * s / B) * d;
      }
    }
    loss += acc;
  }
  loss /= B;
  if (grad.empty()) return loss;

  if (grad.size() != tape.param_count)
    throw std::invalid_argument("dsm_loss_grad: grad size mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);

  // H(theta) = r - J^T r with r = x~ - psi. For fixed w,
  //   d/dtheta <H, w> = -g1 + g2 - g3
  // with g1 the ordinary weight gradient with cotangent w, g2 the weight
  // gradient with cotangent t = J w, and g3 the tangent-graph weight term
  // assembled from the r-adjoint flow S and the tangents of t's forward pass.
  std::vector<nn::Tensor> tans;
  nn::tape_jvp(tape, params, vals, w, tans, ws);
  const nn::Tensor& t = tans[tape.output_id];

  std::vector<nn::Tensor> scratch;
  nn::tape_vjp(tape, params, vals, vals, w, scratch, grad, -1.0, ws);
  nn::tape_vjp(tape, params, vals, vals, t, scratch, grad, +1.0, ws);
  nn::tape_weight_grads(tape, adjS, tans, grad, -1.0, ws);
  return loss;
}

DsmResult train_dsm(const std::vector<Slice2C>& clean_slices, const DsmConfig& cfg) {
  cfg.validate();
  if (clean_slices.empty()) throw std::invalid_argument("train_dsm: empty dataset");

  // Normalize each usable slice to unit max magnitude.
  const int p = cfg.patch_size;
  std::vector<Slice2C> data;
  for (const Slice2C& s : clean_slices) {
    if (s.h < p || s.w < p) continue;
    const double a = slice_max_magnitude(s);
    if (a <= 0.0) continue;
    Slice2C n = s;
    for (std::size_t i = 0; i < n.size(); ++i) {
      n.re[i] /= a;
      n.im[i] /= a;
    }
    data.push_back(std::move(n));
  }
  if (data.empty())
    throw std::invalid_argument("train_dsm: no usable slices (check patch_size)");

  DsmResult out;
  out.model.arch = cfg.arch;
  out.model.sigma_max = cfg.sigma_max;
  out.model.params = nn::init_params(cfg.arch, cfg.seed);

  const nn::Tape tape = nn::build_drunet_tape(cfg.arch);
  nn::Workspace ws;
  std::vector<double> grad(tape.param_count, 0.0);
  Rng rng(derive_seed(cfg.seed, 0x64736d74ULL));

  const int B = cfg.batch;
  for (int step = 0; step < cfg.steps; ++step) {
    nn::Tensor noisy(B, 2, p, p);
    nn::Tensor noise(B, 2, p, p);
    std::vector<double> sigmas(B, 0.0);

    for (int b = 0; b < B; ++b) {
      const Slice2C& s = data[rng.uniform_int(int(data.size()))];
      const int oy = rng.uniform_int(s.h - p + 1);
      const int ox = rng.uniform_int(s.w - p + 1);
      sigmas[b] = rng.uniform(cfg.sigma_min, cfg.sigma_max);
      double* re = noisy.at(0, b);
      double* im = noisy.at(1, b);
      double* nre = noise.at(0, b);
      double* nim = noise.at(1, b);
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          const std::size_t src = std::size_t(oy + y) * s.w + (ox + x);
          const std::size_t dst = std::size_t(y) * p + x;
          const double n1 = rng.normal();
          const double n2 = rng.normal();
          nre[dst] = n1;
          nim[dst] = n2;
          re[dst] = s.re[src] + sigmas[b] * n1;
          im[dst] = s.im[src] + sigmas[b] * n2;
        }
    }

    const double loss =
        dsm_loss_grad(tape, out.model.params, noisy, noise, sigmas, grad, ws);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_dsm: non-finite loss at step " + std::to_string(step) +
                               " (training diverged)");
    out.loss_per_step.push_back(loss);

    double gn = 0.0;
    for (double g : grad) gn += g * g;
    gn = std::sqrt(gn);
    const double scale = gn > cfg.clip_norm ? cfg.clip_norm / gn : 1.0;
    for (std::size_t i = 0; i < grad.size(); ++i)
      out.model.params[i] -= cfg.learning_rate * scale * grad[i];
  }

  const int tail = std::min<int>(50, int(out.loss_per_step.size()));
  if (tail > 0)
    out.running_loss = std::accumulate(out.loss_per_step.end() - tail,
                                       out.loss_per_step.end(), 0.0) /
                       tail;
  return out;
}

}  // namespace pen
