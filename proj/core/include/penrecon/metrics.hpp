#pragma once

#include "penrecon/volume.hpp"

namespace pen {

/// PSNR on magnitudes: 10 log10(peak^2 / MSE), capped at 200 dB.
double psnr(const Volume& a, const Volume& b, double peak);

/// ||a - b|| / ||b|| on magnitudes (b is the reference; not symmetric).
double nrmse(const Volume& a, const Volume& b);

/// Mean local SSIM on magnitudes, uniform 8x8x8 windows (stride 1),
/// c1 = (0.01 peak)^2, c2 = (0.03 peak)^2.
double ssim(const Volume& a, const Volume& b, double peak);

}  // namespace pen
