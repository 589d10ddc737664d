#include "penrecon/admm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "penrecon/rng.hpp"

namespace pen {

void AdmmConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("AdmmConfig: beta must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("AdmmConfig: lambda must be finite and >= 0");
  if (outer_iters < 1) throw std::invalid_argument("AdmmConfig: outer_iters must be >= 1");
  if (sd_steps < 1) throw std::invalid_argument("AdmmConfig: sd_steps must be >= 1");
  if (!(tol >= 0.0)) throw std::invalid_argument("AdmmConfig: tol must be >= 0");
  if (prior == Prior::Muse && muse == nullptr)
    throw std::invalid_argument("AdmmConfig: muse prior requires a model");
  if (prior == Prior::Tv) tv.validate();
}

CgResult cg_solve(const std::function<Volume(const Volume&)>& apply_normal_op,
                  const Volume& rhs, double tol, int max_iters) {
  CgResult res;
  res.x = Volume(rhs.shape(), rhs.voxel_size());
  const double nb = norm(rhs);
  if (nb == 0.0) {
    res.converged = true;
    return res;
  }

  Volume r = rhs;
  Volume p = r;
  double rs = dot(r, r);
  for (int it = 0; it < max_iters; ++it) {
    const Volume ap = apply_normal_op(p);
    const double pap = dot(p, ap);
    if (!std::isfinite(pap) || pap <= 0.0)
      throw std::runtime_error("cg_solve: operator breakdown (non-SPD or non-finite)");
    const double alpha = rs / pap;
    res.x = axpy(res.x, alpha, p);
    r = axpy(r, -alpha, ap);
    const double rs_new = dot(r, r);
    if (!std::isfinite(rs_new)) throw std::runtime_error("cg_solve: non-finite residual");
    res.iterations = it + 1;
    res.rel_residual = std::sqrt(rs_new) / nb;
    if (res.rel_residual <= tol) {
      res.converged = true;
      return res;
    }
    p = axpy(r, rs_new / rs, p);
    rs = rs_new;
  }
  return res;
}

Volume dual_ascent(const Volume& gamma, const Volume& v, const Volume& rho, double beta) {
  return axpy(gamma, beta, sub(v, rho));
}

double data_fidelity(const Volume& rho, const SlabMeasurements& meas,
                     const SlabProfileSet& profiles) {
  const SlabMeasurements pred = forward_pen(rho, profiles, meas.acquired);
  double acc = 0.0;
  for (int k = 0; k < meas.geometry.n_slab; ++k) {
    if (!meas.acquired[k]) continue;
    const Volume d = sub(pred.slabs[k], meas.slabs[k]);
    acc += dot(d, d);
  }
  return acc;
}

namespace {

struct SdState {
  double tau0 = 0.0;
  double tau = 0.0;
  bool ready = false;
};

double muse_objective(const Volume& v, const Volume& r, double lambda, double beta,
                      const EnergyModel& model) {
  const Volume d = sub(v, r);
  return lambda * energy_volume(v, model) + 0.5 * beta * dot(d, d);
}

Volume muse_v_update(const Volume& r, const AdmmConfig& cfg, SdState& sd) {
  const EnergyModel& model = *cfg.muse;
  Volume g_score = score_volume(r, model);
  if (!all_finite(g_score)) throw std::runtime_error("v_update: non-finite score");

  if (!sd.ready) {
    if (cfg.sd_step_size > 0.0) {
      sd.tau0 = cfg.sd_step_size;
    } else {
      // One probe for a crude score-Lipschitz estimate.
      Rng rng(derive_seed(0x76757064ULL, r.size()));
      Volume d(r.shape(), r.voxel_size());
      for (cplx& c : d.raw()) c = cplx(rng.normal(), rng.normal());
      const double dn = norm(d);
      const double delta = 1e-3 * std::max(1e-9, max_magnitude(r));
      const Volume probe = axpy(r, delta / dn, d);
      const Volume g2 = score_volume(probe, model);
      const double lhat = norm(sub(g2, g_score)) / delta;
      sd.tau0 = 1.0 / (cfg.lambda * std::max(lhat, 1e-12) + cfg.beta);
    }
    sd.tau = sd.tau0;
    sd.ready = true;
  }

  Volume v = r;
  double fv = cfg.lambda * energy_volume(v, model);  // quadratic term is 0 at v = r
  for (int step = 0; step < cfg.sd_steps; ++step) {
    const Volume grad = axpy(scaled(g_score, cfg.lambda), cfg.beta, sub(v, r));
    double tau = std::min(2.0 * sd.tau, sd.tau0);
    bool accepted = false;
    Volume vt;
    double ft = 0.0;
    for (int halving = 0; halving < 40; ++halving) {
      vt = axpy(v, -tau, grad);
      ft = muse_objective(vt, r, cfg.lambda, cfg.beta, model);
      if (std::isfinite(ft) && ft <= fv) {
        accepted = true;
        break;
      }
      tau *= 0.5;
    }
    if (!accepted) break;  // at the numerical floor; keep the current v
    v = vt;
    fv = ft;
    sd.tau = tau;
    if (step + 1 < cfg.sd_steps) {
      g_score = score_volume(v, model);
      if (!all_finite(g_score)) throw std::runtime_error("v_update: non-finite score");
    }
  }
  if (!all_finite(v)) throw std::runtime_error("v_update: non-finite result");
  return v;
}

Volume v_update_impl(const Volume& r, const AdmmConfig& cfg, SdState& sd) {
  if (cfg.prior == AdmmConfig::Prior::None || cfg.lambda == 0.0) return r;
  if (cfg.prior == AdmmConfig::Prior::Tv) {
    TvConfig tv = cfg.tv;
    tv.weight = cfg.lambda / cfg.beta;
    return tv_denoise_volume(r, tv);
  }
  return muse_v_update(r, cfg, sd);
}

}  // namespace

Volume v_update(const Volume& r, const AdmmConfig& cfg) {
  cfg.validate();
  SdState sd;
  return v_update_impl(r, cfg, sd);
}

AdmmResult admm_reconstruct(const SlabMeasurements& meas, const SlabProfileSet& profiles,
                            const AdmmConfig& cfg) {
  cfg.validate();
  meas.validate();
  if (!(meas.geometry == profiles.geometry))
    throw std::invalid_argument("admm_reconstruct: geometry mismatch");

  // Normalize measurements to unit max magnitude for the solve.
  double scale = 0.0;
  for (int k = 0; k < meas.geometry.n_slab; ++k)
    if (meas.acquired[k]) scale = std::max(scale, max_magnitude(meas.slabs[k]));
  if (scale <= 0.0) scale = 1.0;

  SlabMeasurements mn = meas;
  for (int k = 0; k < meas.geometry.n_slab; ++k)
    if (meas.acquired[k]) mn.slabs[k] = scaled(meas.slabs[k], 1.0 / scale);

  AdmmResult out;
  Volume rho = lsq_pen(mn, profiles);
  Volume v = rho;
  Volume gamma(rho.shape(), rho.voxel_size());
  SdState sd;

  for (int it = 1; it <= cfg.outer_iters; ++it) {
    const Volume u = axpy(v, 1.0 / cfg.beta, gamma);
    const Volume rho_new = solve_rho_update(mn, profiles, cfg.beta, u);
    const Volume r = axpy(rho_new, -1.0 / cfg.beta, gamma);
    v = v_update_impl(r, cfg, sd);
    gamma = dual_ascent(gamma, v, rho_new, cfg.beta);

    AdmmIterRecord rec;
    rec.iter = it;
    rec.fidelity = data_fidelity(rho_new, mn, profiles);
    switch (cfg.prior) {
      case AdmmConfig::Prior::None: rec.energy = 0.0; break;
      case AdmmConfig::Prior::Tv: rec.energy = tv_norm_volume(v); break;
      case AdmmConfig::Prior::Muse: rec.energy = energy_volume(v, *cfg.muse); break;
    }
    rec.primal_residual = norm(sub(v, rho_new));
    const double denom = norm(rho);
    rec.rel_change = denom > 0.0 ? norm(sub(rho_new, rho)) / denom : 0.0;
    out.history.push_back(rec);

    rho = rho_new;
    out.iterations = it;
    if (rec.rel_change < cfg.tol) {
      out.converged = true;
      break;
    }
  }

  out.rho = scaled(rho, scale);
  return out;
}

void write_history_csv(const std::vector<AdmmIterRecord>& history, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_history_csv: cannot open " + path);
  f << "iter,fidelity,energy,primal_residual,rel_change\n";
  char buf[256];
  for (const AdmmIterRecord& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", r.iter, r.fidelity,
                  r.energy, r.primal_residual, r.rel_change);
    f << buf;
  }
}

}  // namespace pen
