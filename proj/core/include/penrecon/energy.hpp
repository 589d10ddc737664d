#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "penrecon/nn.hpp"
#include "penrecon/volume.hpp"

namespace pen {

/// Energy model E(s) = 1/2 ||s - psi(s)||^2 with psi a bias-free miniature
/// DRUNet over two-channel (complex) slices. Slices are scaled to unit max
/// magnitude before psi and the result scaled back; energy and score include
/// that normalization exactly (score_slice is the exact gradient of
/// energy_slice, including the normalization's own dependence on the input).
struct EnergyModel {
  nn::DrunetArch arch;
  double sigma_max = 0.1;
  std::vector<double> params;

  void validate() const;
};

EnergyModel make_energy_model(const nn::DrunetArch& arch, std::uint64_t seed);
EnergyModel zero_energy_model(const nn::DrunetArch& arch);

/// Raw network application (no normalization, no padding). Height and width
/// must be divisible by arch.divisor().
Slice2C psi_forward(const Slice2C& s, const EnergyModel& model);

/// Raw energy/score without the unit-max normalization (used by DSM training,
/// which consumes pre-normalized patches). Same divisibility requirement.
double energy_slice_raw(const Slice2C& s, const EnergyModel& model);
Slice2C score_slice_raw(const Slice2C& s, const EnergyModel& model);

/// Normalized energy/score; arbitrary slice sizes (reflect-padded to the
/// required multiple, energy computed on the cropped region).
double energy_slice(const Slice2C& s, const EnergyModel& model);
Slice2C score_slice(const Slice2C& s, const EnergyModel& model);

/// Three-axis volume energy: (sum_x E[C_x v] + sum_y E[C_y v] +
/// sum_z E[C_z v]) / 3, and its exact gradient.
double energy_volume(const Volume& v, const EnergyModel& model);
Volume score_volume(const Volume& v, const EnergyModel& model);
/// Per-axis energy sums (x, y, z), before the /3.
std::array<double, 3> energy_volume_parts(const Volume& v, const EnergyModel& model);

// ---- model file I/O (".emdl") ----
//
// One JSON header line
//   {"arch":{"channels":[...],"blocks_per_scale":B,"kernel":K},
//    "sigma_max":S,"param_count":N}
// terminated by '\n', followed by N little-endian float32 parameters.

void save_energy_model(const EnergyModel& model, const std::string& path);
EnergyModel load_energy_model(const std::string& path);

}  // namespace pen
