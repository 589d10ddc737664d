#pragma once

#include "penrecon/volume.hpp"

namespace pen {

struct TvConfig {
  double weight = 0.05;  // denoising strength (lambda / beta in ADMM use)
  int inner_iters = 30;

  void validate() const;
};

/// Isotropic (vectorial over the two channels) total variation of a slice,
/// forward differences with reflective boundaries.
double tv_norm(const Slice2C& s);

/// Approximate minimizer of 1/2 ||u - s||^2 + weight * TV_iso(u) via
/// Chambolle dual projection iterations (dual step 0.248). weight = 0
/// returns the input unchanged.
Slice2C tv_denoise_slice(const Slice2C& s, double weight, int inner_iters);

/// Average of the three per-axis slice-wise denoisings:
/// (u_x + u_y + u_z) / 3.
Volume tv_denoise_volume(const Volume& v, const TvConfig& cfg);

/// Three-axis TV of a volume (sum over all slices of all three axes) / 3;
/// the objective value matched by tv_denoise_volume's prior term.
double tv_norm_volume(const Volume& v);

}  // namespace pen
