#include "penrecon/tv.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace pen {

void TvConfig::validate() const {
  if (!std::isfinite(weight) || weight < 0.0)
    throw std::invalid_argument("TvConfig: weight must be finite and >= 0");
  if (inner_iters < 1) throw std::invalid_argument("TvConfig: inner_iters must be >= 1");
}

namespace {

// Forward difference, zero at the trailing boundary (reflective extension).
inline double dx(const std::vector<double>& u, int h, int w, int r, int c) {
  (void)h;
  return c + 1 < w ? u[std::size_t(r) * w + c + 1] - u[std::size_t(r) * w + c] : 0.0;
}
inline double dy(const std::vector<double>& u, int h, int w, int r, int c) {
  return r + 1 < h ? u[std::size_t(r + 1) * w + c] - u[std::size_t(r) * w + c] : 0.0;
}

}  // namespace

double tv_norm(const Slice2C& s) {
  double acc = 0.0;
  for (int r = 0; r < s.h; ++r)
    for (int c = 0; c < s.w; ++c) {
      const double gxr = dx(s.re, s.h, s.w, r, c);
      const double gyr = dy(s.re, s.h, s.w, r, c);
      const double gxi = dx(s.im, s.h, s.w, r, c);
      const double gyi = dy(s.im, s.h, s.w, r, c);
      acc += std::sqrt(gxr * gxr + gyr * gyr + gxi * gxi + gyi * gyi);
    }
  return acc;
}

Slice2C tv_denoise_slice(const Slice2C& s, double weight, int inner_iters) {
  if (!std::isfinite(weight) || weight < 0.0)
    throw std::invalid_argument("tv_denoise_slice: bad weight");
  if (weight == 0.0 || s.h * s.w == 0) return s;

  const int h = s.h, w = s.w;
  const std::size_t n = s.size();
  const double tau = 0.248;

  // Dual field: two direction components per channel.
  std::vector<double> pxr(n, 0.0), pyr(n, 0.0), pxi(n, 0.0), pyi(n, 0.0);
  std::vector<double> divr(n, 0.0), divi(n, 0.0);

  auto divergence = [&](const std::vector<double>& px, const std::vector<double>& py,
                        std::vector<double>& out) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const std::size_t i = std::size_t(r) * w + c;
        double d = px[i] + py[i];
        if (c > 0) d -= px[i - 1];
        if (r > 0) d -= py[i - w];
        out[i] = d;
      }
  };

  for (int it = 0; it < inner_iters; ++it) {
    divergence(pxr, pyr, divr);
    divergence(pxi, pyi, divi);
    // g = grad(div p - s / weight); joint projection over the 4 components.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const std::size_t i = std::size_t(r) * w + c;
        double gxr = 0.0, gyr = 0.0, gxi = 0.0, gyi = 0.0;
        if (c + 1 < w) {
          gxr = (divr[i + 1] - s.re[i + 1] / weight) - (divr[i] - s.re[i] / weight);
          gxi = (divi[i + 1] - s.im[i + 1] / weight) - (divi[i] - s.im[i] / weight);
        }
        if (r + 1 < h) {
          gyr = (divr[i + w] - s.re[i + w] / weight) - (divr[i] - s.re[i] / weight);
          gyi = (divi[i + w] - s.im[i + w] / weight) - (divi[i] - s.im[i] / weight);
        }
        const double mag = std::sqrt(gxr * gxr + gyr * gyr + gxi * gxi + gyi * gyi);
        const double denom = 1.0 + tau * mag;
        pxr[i] = (pxr[i] + tau * gxr) / denom;
        pyr[i] = (pyr[i] + tau * gyr) / denom;
        pxi[i] = (pxi[i] + tau * gxi) / denom;
        pyi[i] = (pyi[i] + tau * gyi) / denom;
      }
  }

  divergence(pxr, pyr, divr);
  divergence(pxi, pyi, divi);
  Slice2C out(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    out.re[i] = s.re[i] - weight * divr[i];
    out.im[i] = s.im[i] - weight * divi[i];
  }
  return out;
}

Volume tv_denoise_volume(const Volume& v, const TvConfig& cfg) {
  cfg.validate();
  if (cfg.weight == 0.0) return v;

  Volume acc(v.shape(), v.voxel_size());
  for (Axis axis : {Axis::X, Axis::Y, Axis::Z}) {
    const int extent = v.shape().extent(axis);
    for (int i = 0; i < extent; ++i) {
      const Slice2C s = extract_slice(v, axis, i);
      accumulate_slice(acc, axis, i, tv_denoise_slice(s, cfg.weight, cfg.inner_iters));
    }
  }
  return scaled(acc, 1.0 / 3.0);
}

double tv_norm_volume(const Volume& v) {
  double acc = 0.0;
  for (Axis axis : {Axis::X, Axis::Y, Axis::Z}) {
    const int extent = v.shape().extent(axis);
    for (int i = 0; i < extent; ++i) acc += tv_norm(extract_slice(v, axis, i));
  }
  return acc / 3.0;
}

}  // namespace pen
