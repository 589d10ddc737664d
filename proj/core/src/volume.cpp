#include "penrecon/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace pen {

bool all_finite(const Volume& v) {
  for (const cplx& c : v.raw()) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) return false;
  }
  return true;
}

double dot(const Volume& a, const Volume& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  const cplx* pa = a.data();
  const cplx* pb = b.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    s += pa[i].real() * pb[i].real() + pa[i].imag() * pb[i].imag();
  return s;
}

double norm(const Volume& a) { return std::sqrt(dot(a, a)); }

double max_magnitude(const Volume& a) {
  double m = 0.0;
  for (const cplx& c : a.raw()) m = std::max(m, std::abs(c));
  return m;
}

Volume scaled(const Volume& a, double s) {
  Volume out(a.shape(), a.voxel_size());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

Volume add(const Volume& a, const Volume& b) { return axpy(a, 1.0, b); }
Volume sub(const Volume& a, const Volume& b) { return axpy(a, -1.0, b); }

Volume axpy(const Volume& a, double s, const Volume& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("axpy: shape mismatch");
  Volume out(a.shape(), a.voxel_size());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + s * b.data()[i];
  return out;
}

Slice2C extract_slice(const Volume& v, Axis axis, int index) {
  const Shape3 s = v.shape();
  switch (axis) {
    case Axis::X: {
      if (index < 0 || index >= s.nx) throw std::invalid_argument("extract_slice: index");
      Slice2C sl(s.ny, s.nz);
      for (int y = 0; y < s.ny; ++y)
        for (int z = 0; z < s.nz; ++z) {
          const cplx c = v.at(index, y, z);
          sl.real_at(y, z) = c.real();
          sl.imag_at(y, z) = c.imag();
        }
      return sl;
    }
    case Axis::Y: {
      if (index < 0 || index >= s.ny) throw std::invalid_argument("extract_slice: index");
      Slice2C sl(s.nx, s.nz);
      for (int x = 0; x < s.nx; ++x)
        for (int z = 0; z < s.nz; ++z) {
          const cplx c = v.at(x, index, z);
          sl.real_at(x, z) = c.real();
          sl.imag_at(x, z) = c.imag();
        }
      return sl;
    }
    default: {
      if (index < 0 || index >= s.nz) throw std::invalid_argument("extract_slice: index");
      Slice2C sl(s.nx, s.ny);
      for (int x = 0; x < s.nx; ++x)
        for (int y = 0; y < s.ny; ++y) {
          const cplx c = v.at(x, y, index);
          sl.real_at(x, y) = c.real();
          sl.imag_at(x, y) = c.imag();
        }
      return sl;
    }
  }
}

void accumulate_slice(Volume& v, Axis axis, int index, const Slice2C& s) {
  const Shape3 sh = v.shape();
  switch (axis) {
    case Axis::X:
      if (s.h != sh.ny || s.w != sh.nz) throw std::invalid_argument("accumulate_slice: shape");
      for (int y = 0; y < sh.ny; ++y)
        for (int z = 0; z < sh.nz; ++z)
          v.at(index, y, z) += cplx(s.real_at(y, z), s.imag_at(y, z));
      return;
    case Axis::Y:
      if (s.h != sh.nx || s.w != sh.nz) throw std::invalid_argument("accumulate_slice: shape");
      for (int x = 0; x < sh.nx; ++x)
        for (int z = 0; z < sh.nz; ++z)
          v.at(x, index, z) += cplx(s.real_at(x, z), s.imag_at(x, z));
      return;
    default:
      if (s.h != sh.nx || s.w != sh.ny) throw std::invalid_argument("accumulate_slice: shape");
      for (int x = 0; x < sh.nx; ++x)
        for (int y = 0; y < sh.ny; ++y)
          v.at(x, y, index) += cplx(s.real_at(x, y), s.imag_at(x, y));
      return;
  }
}

std::vector<Slice2C> extract_slices(const Volume& v, Axis axis) {
  const int n = v.shape().extent(axis);
  std::vector<Slice2C> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(extract_slice(v, axis, i));
  return out;
}

Volume scatter_slices(const std::vector<Slice2C>& slices, Axis axis, Shape3 shape,
                      std::array<double, 3> voxel_size) {
  const int n = shape.extent(axis);
  if (int(slices.size()) != n)
    throw std::invalid_argument("scatter_slices: slice count does not match target extent");
  Volume v(shape, voxel_size);
  for (int i = 0; i < n; ++i) accumulate_slice(v, axis, i, slices[i]);
  return v;
}

double slice_dot(const Slice2C& a, const Slice2C& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("slice_dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.re[i] * b.re[i] + a.im[i] * b.im[i];
  return s;
}

double slice_norm(const Slice2C& a) { return std::sqrt(slice_dot(a, a)); }

double slice_max_magnitude(const Slice2C& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::hypot(a.re[i], a.im[i]));
  return m;
}

// ---- .svol I/O ----

namespace {

using ordered_json = nlohmann::ordered_json;

std::string volume_header(const Volume& v) {
  ordered_json j;
  j["shape"] = {v.shape().nx, v.shape().ny, v.shape().nz};
  j["dtype"] = "c64";
  j["order"] = "x-fastest";
  j["voxel_size"] = {v.voxel_size()[0], v.voxel_size()[1], v.voxel_size()[2]};
  return j.dump();
}

}  // namespace

void write_volume(const Volume& v, const std::string& path) {
  if (v.shape().total() != v.size())
    throw std::invalid_argument("write_volume: shape inconsistent with data length");
  if (!all_finite(v))
    throw std::invalid_argument("write_volume: volume contains non-finite samples");

  const std::string header = volume_header(v);
  std::vector<char> payload(v.size() * 8);
  char* p = payload.data();
  for (const cplx& c : v.raw()) {
    const float re = float(c.real());
    const float im = float(c.imag());
    std::memcpy(p, &re, 4);
    std::memcpy(p + 4, &im, 4);
    p += 8;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_volume: cannot open " + path);
  f.write(header.data(), std::streamsize(header.size()));
  f.put('\n');
  f.write(payload.data(), std::streamsize(payload.size()));
  if (!f) throw std::runtime_error("write_volume: I/O failure writing " + path);
}

Volume read_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_volume: cannot open " + path);

  std::string header;
  if (!std::getline(f, header))
    throw std::runtime_error("read_volume: missing header line in " + path);

  ordered_json j;
  try {
    j = ordered_json::parse(header);
  } catch (const std::exception& e) {
    throw std::runtime_error("read_volume: malformed header in " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("shape") || !j.contains("dtype") ||
      !j.contains("order") || !j.contains("voxel_size"))
    throw std::runtime_error("read_volume: malformed header in " + path);
  if (j["dtype"] != "c64")
    throw std::runtime_error("read_volume: unsupported dtype tag in " + path);
  if (j["order"] != "x-fastest")
    throw std::runtime_error("read_volume: unsupported sample order in " + path);

  const auto& sh = j["shape"];
  if (!sh.is_array() || sh.size() != 3)
    throw std::runtime_error("read_volume: malformed shape in " + path);
  Shape3 shape{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
  if (shape.nx <= 0 || shape.ny <= 0 || shape.nz <= 0)
    throw std::runtime_error("read_volume: non-positive shape in " + path);

  const auto& vs = j["voxel_size"];
  if (!vs.is_array() || vs.size() != 3)
    throw std::runtime_error("read_volume: malformed voxel_size in " + path);

  Volume v(shape, {vs[0].get<double>(), vs[1].get<double>(), vs[2].get<double>()});

  std::vector<char> payload(v.size() * 8);
  f.read(payload.data(), std::streamsize(payload.size()));
  if (std::size_t(f.gcount()) != payload.size())
    throw std::runtime_error("read_volume: payload size mismatch in " + path);
  f.peek();
  if (!f.eof())
    throw std::runtime_error("read_volume: trailing bytes after payload in " + path);

  const char* p = payload.data();
  for (cplx& c : v.raw()) {
    float re, im;
    std::memcpy(&re, p, 4);
    std::memcpy(&im, p + 4, 4);
    p += 8;
    c = cplx(double(re), double(im));
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
      throw std::runtime_error("read_volume: non-finite sample in " + path);
  }
  return v;
}

}  // namespace pen
