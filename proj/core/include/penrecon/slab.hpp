#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "penrecon/volume.hpp"

namespace pen {

/// Small dense row-major real matrix.
struct RealMatrix {
  int rows = 0, cols = 0;
  std::vector<double> a;

  RealMatrix() = default;
  RealMatrix(int r, int c) : rows(r), cols(c), a(std::size_t(r) * c, 0.0) {}
  double& at(int r, int c) { return a[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return a[std::size_t(r) * cols + c]; }
};

/// Multislab geometry without oversampling: the full slice extent factors
/// exactly into n_slab windows of slices_per_slab slices.
struct SlabGeometry {
  int n_slab = 1;
  int slices_per_slab = 1;

  int nz() const { return n_slab * slices_per_slab; }
  bool operator==(const SlabGeometry&) const = default;
};

/// Per-slab excitation gain over the full FOV; weights[k][z] is the gain of
/// slab k at global slice z.
struct SlabProfileSet {
  SlabGeometry geometry;
  std::vector<double> weights;  // n_slab x nz, row-major

  double weight(int k, int z) const {
    return weights[std::size_t(k) * geometry.nz() + z];
  }
  double& weight(int k, int z) { return weights[std::size_t(k) * geometry.nz() + z]; }
};

/// Stack of per-slab aliased sub-volumes (each nx x ny x slices_per_slab)
/// with a per-slab acquisition mask. Dropped slabs hold zero sub-volumes.
struct SlabMeasurements {
  SlabGeometry geometry;
  std::vector<Volume> slabs;
  std::vector<std::uint8_t> acquired;

  int n_acquired() const;
  void validate() const;
};

/// Parametric excitation profile description (simulation stand-in for
/// calibration scans).
struct ProfileSpec {
  enum class Model { Rect, Smooth };
  Model model = Model::Smooth;
  double ripple_amp = 0.05;      // fraction of main-lobe magnitude variation
  int transition_width = 2;      // voxels
  double sidelobe_amp = 0.1;     // peak gain leaked into neighboring slabs
  int sidelobe_extent = 2;       // voxels into the adjacent slab window

  void validate(const SlabGeometry& geom) const;
};

SlabProfileSet make_profiles(const SlabGeometry& geom, const ProfileSpec& spec,
                             std::uint64_t seed);

/// G[k, m] = S_k(z0 + m*slices_per_slab) for acquired slabs k (rows, slab
/// order ascending) and alias index m (columns).
RealMatrix group_matrix(const SlabProfileSet& profiles, int z0,
                        const std::vector<std::uint8_t>& mask);

/// Aliasing forward model: I_k(x,y,z0) = sum_m S_k(z0+mD) * rho(x,y,z0+mD)
/// for each acquired slab k.
SlabMeasurements forward_pen(const Volume& rho, const SlabProfileSet& profiles,
                             const std::vector<std::uint8_t>& mask);
SlabMeasurements forward_pen(const Volume& rho, const SlabProfileSet& profiles);

/// Exact adjoint of forward_pen.
Volume adjoint_pen(const SlabMeasurements& meas, const SlabProfileSet& profiles);

/// Exact per-group minimizer of ||A rho - y||^2 + eps||rho||^2
///                             + (beta/2)||rho - u||^2,
/// solved independently for each (x, y, z0) aliasing group by a direct
/// n_slab x n_slab solve. eps is the Tikhonov floor (see group_tikhonov_eps);
/// it keeps dropped-slab groups well posed and the beta=0 path deterministic.
Volume solve_rho_update(const SlabMeasurements& meas, const SlabProfileSet& profiles,
                        double beta, const std::optional<Volume>& u);

/// Baseline non-regularized reconstruction (beta = 0, no u).
Volume lsq_pen(const SlabMeasurements& meas, const SlabProfileSet& profiles);

/// Tikhonov floor used by solve_rho_update: 1e-12 * max_g ||G_g||_2^2.
double group_tikhonov_eps(const SlabProfileSet& profiles,
                          const std::vector<std::uint8_t>& mask);

struct GroupConditionReport {
  double min_cond = 0.0;   // over z0 groups; condition number of G
  double max_cond = 0.0;   // inf when a group is rank-deficient
  double eps = 0.0;        // Tikhonov floor in effect
};

GroupConditionReport group_condition_report(const SlabProfileSet& profiles,
                                            const std::vector<std::uint8_t>& mask);

// ---- file I/O ----
//
// Profiles: ".svol" container of shape [nz, n_slab, 1] with real part equal
// to the weight and zero imaginary part, plus a JSON sidecar (path + ".json")
// {"n_slab":K,"slices_per_slab":D}.
//
// Measurements: one ".svol" of shape [nx, ny, nz] with slab k occupying
// slices [k*D, (k+1)*D), plus a JSON sidecar {"n_slab":K,"slices_per_slab":D,
// "acquired_mask":[...]}. Dropped slabs hold zeros.

void write_profiles(const SlabProfileSet& profiles, const std::string& path);
SlabProfileSet read_profiles(const std::string& path);
void write_measurements(const SlabMeasurements& meas, const std::string& path);
SlabMeasurements read_measurements(const std::string& path);

}  // namespace pen
