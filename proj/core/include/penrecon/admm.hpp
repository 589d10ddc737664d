#pragma once

#include <functional>
#include <string>
#include <vector>

#include "penrecon/energy.hpp"
#include "penrecon/slab.hpp"
#include "penrecon/tv.hpp"
#include "penrecon/volume.hpp"

namespace pen {

struct AdmmConfig {
  enum class Prior { None, Tv, Muse };

  double lambda = 0.0;  // prior weight
  double beta = 1.0;    // penalty
  int outer_iters = 20;
  int sd_steps = 5;          // steepest-descent steps for the v-update
  double sd_step_size = 0.0; // 0 -> 1/(lambda*Lhat + beta) from a probe
  double tol = 1e-5;         // relative-change stopping threshold

  Prior prior = Prior::None;
  TvConfig tv;                       // inner_iters used; weight is lambda/beta
  const EnergyModel* muse = nullptr; // required for Prior::Muse

  void validate() const;
};

struct AdmmIterRecord {
  int iter = 0;
  double fidelity = 0.0;         // ||A rho - y||^2 (normalized data)
  double energy = 0.0;           // prior energy of v (0 / TV / MuSE)
  double primal_residual = 0.0;  // ||v - rho||
  double rel_change = 0.0;       // ||rho_new - rho_old|| / ||rho_old||
};

struct AdmmResult {
  Volume rho;
  std::vector<AdmmIterRecord> history;
  bool converged = false;
  int iterations = 0;
};

struct CgResult {
  Volume x;
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
};

/// Conjugate gradients on volumes for a symmetric positive-definite map.
CgResult cg_solve(const std::function<Volume(const Volume&)>& apply_normal_op,
                  const Volume& rhs, double tol, int max_iters);

/// Prior update at r = rho - gamma/beta:
///   none -> r;  tv -> tv_denoise_volume(r, lambda/beta);
///   muse -> steepest descent on lambda*E(v) + (beta/2)||v - r||^2 starting
///   at v = r with backtracking; accepted steps never increase the objective.
Volume v_update(const Volume& r, const AdmmConfig& cfg);

/// Dual ascent: gamma + beta * (v - rho).
Volume dual_ascent(const Volume& gamma, const Volume& v, const Volume& rho, double beta);

/// ||A rho - y||^2 over acquired slabs.
double data_fidelity(const Volume& rho, const SlabMeasurements& meas,
                     const SlabProfileSet& profiles);

/// Plug-and-play ADMM: rho0 = lsq_pen, v0 = rho0, gamma0 = 0; iterates the
/// exact rho-update, the prior v-update, and dual ascent. Measurements are
/// scaled to unit max magnitude for the solve and the result scaled back.
/// Non-convergence within outer_iters is reported via the result, not as an
/// error.
AdmmResult admm_reconstruct(const SlabMeasurements& meas, const SlabProfileSet& profiles,
                            const AdmmConfig& cfg);

/// History CSV: "iter,fidelity,energy,primal_residual,rel_change".
void write_history_csv(const std::vector<AdmmIterRecord>& history, const std::string& path);

}  // namespace pen
