#pragma once

#include <array>
#include <vector>

#include "penrecon/phantom.hpp"
#include "penrecon/volume.hpp"

namespace pen {

/// Per-voxel tensor fit results. `tensor` holds the raw log-linear fit (a
/// noisy fit can be slightly indefinite); negative eigenvalues are clamped
/// to zero before the FA/MD/color maps. Voxels below the S0 mask threshold
/// are zeroed throughout.
struct TensorMaps {
  Shape3 shape;
  TensorField tensor;
  std::vector<double> fa;                         // in [0, 1]
  std::vector<double> md;                         // mm^2/s
  std::vector<std::array<double, 3>> principal;   // unit on valid voxels
  std::vector<std::array<double, 3>> color_fa;    // |principal| * FA
  std::vector<std::uint8_t> mask;                 // 1 where fitted
};

/// Log-linear least-squares tensor fit on magnitudes:
///   ln(S_g / S0) = -b g^T D g
/// dwis[0] must be the b0 volume (protocol.includes_b0 required), followed by
/// the diffusion-weighted volumes in protocol direction order.
/// mask_threshold is the fraction of max |S0| below which voxels are skipped.
TensorMaps fit_tensor(const std::vector<Volume>& dwis, const DiffusionProtocol& proto,
                      double mask_threshold = 0.05);

}  // namespace pen
