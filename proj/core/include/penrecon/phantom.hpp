#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "penrecon/volume.hpp"

namespace pen {

struct PhantomSpec {
  enum class Kind { SheppLogan3D, NestedEllipsoids };
  enum class Phase { Zero, SmoothPolynomial };

  Shape3 shape{64, 64, 64};
  Kind kind = Kind::SheppLogan3D;
  Phase phase = Phase::Zero;
  std::uint64_t seed = 0;
  int n_ellipsoids = 8;  // NestedEllipsoids only
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};

  void validate() const;
};

/// Deterministic synthetic ground truth; magnitude in [0, 1], smooth
/// polynomial phase bounded in [-pi, pi].
Volume make_phantom(const PhantomSpec& spec);

/// Single-shell diffusion acquisition description.
struct DiffusionProtocol {
  double b_value = 1000.0;  // s/mm^2
  std::vector<std::array<double, 3>> directions;
  bool includes_b0 = true;

  void validate() const;
};

/// n unit directions from electrostatic-repulsion optimization (antipodal
/// symmetry), deterministic per seed.
std::vector<std::array<double, 3>> make_directions(int n, std::uint64_t seed);

void write_protocol(const DiffusionProtocol& proto, const std::string& path);
DiffusionProtocol read_protocol(const std::string& path);

/// Per-voxel symmetric diffusion tensor, components stored as six planes in
/// the order (xx, yy, zz, xy, xz, yz), mm^2/s.
struct TensorField {
  Shape3 shape;
  std::vector<double> comp;  // 6 * shape.total(), component-major

  TensorField() = default;
  explicit TensorField(Shape3 s) : shape(s), comp(6 * s.total(), 0.0) {}
  double& at(int c, std::size_t vox) { return comp[c * shape.total() + vox]; }
  double at(int c, std::size_t vox) const { return comp[c * shape.total() + vox]; }
};

/// Isotropic background with one anisotropic bundle (a torus segment whose
/// principal direction rotates smoothly along the ring); positive
/// semi-definite everywhere.
TensorField make_tensor_field(Shape3 shape, std::uint64_t seed);

/// Stejskal-Tanner signal: per direction g, S_g = |s0| exp(-b g^T D g) with
/// s0's phase; the b0 volume (= s0) comes first when the protocol includes
/// it.
std::vector<Volume> synth_dwi(const Volume& s0, const TensorField& field,
                              const DiffusionProtocol& proto);

/// Adds i.i.d. complex Gaussian noise, std sigma per real channel.
Volume add_noise(const Volume& v, double sigma, std::uint64_t seed);

// Tensor field file: ".svol" of shape [nx, ny, 6*nz] stacking the six
// component volumes along z, plus a JSON sidecar naming the components.
void write_tensor_field(const TensorField& field, const std::string& path);
TensorField read_tensor_field(const std::string& path);

}  // namespace pen
