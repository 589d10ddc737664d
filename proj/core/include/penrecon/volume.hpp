#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pen {

using cplx = std::complex<double>;

enum class Axis { X = 0, Y = 1, Z = 2 };

struct Shape3 {
  int nx = 0, ny = 0, nz = 0;

  std::size_t total() const {
    return std::size_t(nx) * std::size_t(ny) * std::size_t(nz);
  }
  bool operator==(const Shape3&) const = default;
  int extent(Axis a) const { return a == Axis::X ? nx : (a == Axis::Y ? ny : nz); }
};

/// Two-channel (real, imaginary) planar 2D slice, row-major with w fastest.
struct Slice2C {
  int h = 0, w = 0;
  std::vector<double> re, im;

  Slice2C() = default;
  Slice2C(int h_, int w_)
      : h(h_), w(w_), re(std::size_t(h_) * w_, 0.0), im(std::size_t(h_) * w_, 0.0) {}

  std::size_t size() const { return std::size_t(h) * w; }
  double& real_at(int r, int c) { return re[std::size_t(r) * w + c]; }
  double& imag_at(int r, int c) { return im[std::size_t(r) * w + c]; }
  double real_at(int r, int c) const { return re[std::size_t(r) * w + c]; }
  double imag_at(int r, int c) const { return im[std::size_t(r) * w + c]; }
};

/// Dense complex 3D volume, x-fastest ordering. Immutable by convention
/// after construction: library operations return new volumes.
class Volume {
public:
  Volume() = default;
  explicit Volume(Shape3 shape, std::array<double, 3> voxel_size = {1.0, 1.0, 1.0})
      : shape_(shape), voxel_size_(voxel_size), data_(shape.total(), cplx(0.0, 0.0)) {}

  const Shape3& shape() const { return shape_; }
  const std::array<double, 3>& voxel_size() const { return voxel_size_; }
  void set_voxel_size(std::array<double, 3> vs) { voxel_size_ = vs; }

  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) + std::size_t(shape_.nx) * (std::size_t(y) + std::size_t(shape_.ny) * z);
  }
  cplx& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  const cplx& at(int x, int y, int z) const { return data_[index(x, y, z)]; }

  cplx* data() { return data_.data(); }
  const cplx* data() const { return data_.data(); }
  std::vector<cplx>& raw() { return data_; }
  const std::vector<cplx>& raw() const { return data_; }

private:
  Shape3 shape_{};
  std::array<double, 3> voxel_size_{1.0, 1.0, 1.0};
  std::vector<cplx> data_;
};

// ---- element-wise helpers (real inner-product space on C^n = R^2n) ----

bool all_finite(const Volume& v);
double dot(const Volume& a, const Volume& b);   // sum of re*re + im*im
double norm(const Volume& a);                   // sqrt(dot(a, a))
double max_magnitude(const Volume& a);
Volume scaled(const Volume& a, double s);
Volume add(const Volume& a, const Volume& b);
Volume sub(const Volume& a, const Volume& b);
/// a + s*b
Volume axpy(const Volume& a, double s, const Volume& b);

// ---- slice extraction / scattering ----
//
// Slices along an axis carry the two remaining axes in (x, y, z) order:
//   axis x -> (h, w) = (ny, nz),  s(y, z) = v(x, y, z)
//   axis y -> (h, w) = (nx, nz),  s(x, z) = v(x, y, z)
//   axis z -> (h, w) = (nx, ny),  s(x, y) = v(x, y, z)
// Extraction and scattering are mutually adjoint; a full consistent slice
// list satisfies scatter(extract(v)) == v exactly.

std::vector<Slice2C> extract_slices(const Volume& v, Axis axis);
Volume scatter_slices(const std::vector<Slice2C>& slices, Axis axis, Shape3 shape,
                      std::array<double, 3> voxel_size = {1.0, 1.0, 1.0});
Slice2C extract_slice(const Volume& v, Axis axis, int index);
/// Adds `s` into the given slice position of `v` (adjoint of extract_slice).
void accumulate_slice(Volume& v, Axis axis, int index, const Slice2C& s);

double slice_dot(const Slice2C& a, const Slice2C& b);
double slice_norm(const Slice2C& a);
double slice_max_magnitude(const Slice2C& a);

// ---- file I/O (".svol") ----
//
// Format: one UTF-8 JSON header line
//   {"shape":[nx,ny,nz],"dtype":"c64","order":"x-fastest","voxel_size":[dx,dy,dz]}
// terminated by a single '\n', followed by nx*ny*nz interleaved (re, im)
// little-endian float32 pairs. No padding, no trailing bytes.

Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);

}  // namespace pen
