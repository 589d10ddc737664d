#include "penrecon/phantom.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "penrecon/rng.hpp"

namespace pen {

void PhantomSpec::validate() const {
  if (shape.nx < 1 || shape.ny < 1 || shape.nz < 1)
    throw std::invalid_argument("PhantomSpec: non-positive shape");
  if (n_ellipsoids < 0) throw std::invalid_argument("PhantomSpec: negative n_ellipsoids");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
  double amp;
  double a, b, c;     // semi-axes (normalized coordinates)
  double x0, y0, z0;  // center
  double rot[3][3];   // world -> ellipsoid frame
};

// ZXZ Euler rotation (angles in radians).
void euler_zxz(double phi, double theta, double psi, double r[3][3]) {
  const double cphi = std::cos(phi), sphi = std::sin(phi);
  const double cth = std::cos(theta), sth = std::sin(theta);
  const double cpsi = std::cos(psi), spsi = std::sin(psi);
  r[0][0] = cpsi * cphi - cth * sphi * spsi;
  r[0][1] = cpsi * sphi + cth * cphi * spsi;
  r[0][2] = spsi * sth;
  r[1][0] = -spsi * cphi - cth * sphi * cpsi;
  r[1][1] = -spsi * sphi + cth * cphi * cpsi;
  r[1][2] = cpsi * sth;
  r[2][0] = sth * sphi;
  r[2][1] = -sth * cphi;
  r[2][2] = cth;
}

Ellipsoid make_ellipsoid(double amp, double a, double b, double c, double x0, double y0,
                         double z0, double phi_deg, double theta_deg, double psi_deg) {
  Ellipsoid e{amp, a, b, c, x0, y0, z0, {}};
  euler_zxz(phi_deg * kPi / 180.0, theta_deg * kPi / 180.0, psi_deg * kPi / 180.0, e.rot);
  return e;
}

bool inside(const Ellipsoid& e, double x, double y, double z) {
  const double dx = x - e.x0, dy = y - e.y0, dz = z - e.z0;
  const double u = e.rot[0][0] * dx + e.rot[0][1] * dy + e.rot[0][2] * dz;
  const double v = e.rot[1][0] * dx + e.rot[1][1] * dy + e.rot[1][2] * dz;
  const double w = e.rot[2][0] * dx + e.rot[2][1] * dy + e.rot[2][2] * dz;
  const double q = (u / e.a) * (u / e.a) + (v / e.b) * (v / e.b) + (w / e.c) * (w / e.c);
  return q <= 1.0;
}

// Modified 3D Shepp-Logan ellipsoid set (intensities adjusted for contrast).
std::vector<Ellipsoid> shepp_logan_ellipsoids() {
  std::vector<Ellipsoid> e;
  e.push_back(make_ellipsoid(1.0, .6900, .920, .810, 0, 0, 0, 0, 0, 0));
  e.push_back(make_ellipsoid(-0.8, .6624, .874, .780, 0, -.0184, 0, 0, 0, 0));
  e.push_back(make_ellipsoid(-0.2, .1100, .310, .220, .22, 0, 0, -18, 0, 10));
  e.push_back(make_ellipsoid(-0.2, .1600, .410, .280, -.22, 0, 0, 18, 0, 10));
  e.push_back(make_ellipsoid(0.1, .2100, .250, .410, 0, .35, -.15, 0, 0, 0));
  e.push_back(make_ellipsoid(0.1, .0460, .046, .050, 0, .1, .25, 0, 0, 0));
  e.push_back(make_ellipsoid(0.1, .0460, .046, .050, 0, -.1, .25, 0, 0, 0));
  e.push_back(make_ellipsoid(0.1, .0460, .023, .050, -.08, -.605, 0, 0, 0, 0));
  e.push_back(make_ellipsoid(0.1, .0230, .023, .020, 0, -.606, 0, 0, 0, 0));
  e.push_back(make_ellipsoid(0.1, .0230, .046, .020, .06, -.605, 0, 0, 0, 0));
  return e;
}

std::vector<Ellipsoid> nested_ellipsoids(int n, Rng& rng) {
  std::vector<Ellipsoid> e;
  if (n <= 0) return e;
  // Large positive base, then alternating-sign inserts.
  e.push_back(make_ellipsoid(0.8, rng.uniform(0.65, 0.9), rng.uniform(0.65, 0.9),
                             rng.uniform(0.65, 0.9), rng.uniform(-0.05, 0.05),
                             rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                             rng.uniform(0, 360), rng.uniform(0, 360), rng.uniform(0, 360)));
  for (int i = 1; i < n; ++i) {
    const double mag = rng.uniform(0.1, 0.3);
    const double amp = (i % 2 == 1) ? -mag : mag;
    e.push_back(make_ellipsoid(amp, rng.uniform(0.08, 0.35), rng.uniform(0.08, 0.35),
                               rng.uniform(0.08, 0.35), rng.uniform(-0.4, 0.4),
                               rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                               rng.uniform(0, 360), rng.uniform(0, 360),
                               rng.uniform(0, 360)));
  }
  return e;
}

inline double coord(int i, int n) { return (2.0 * i + 1.0 - n) / n; }

}  // namespace

Volume make_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x7068616eULL));

  std::vector<Ellipsoid> ells;
  switch (spec.kind) {
    case PhantomSpec::Kind::SheppLogan3D: ells = shepp_logan_ellipsoids(); break;
    case PhantomSpec::Kind::NestedEllipsoids: ells = nested_ellipsoids(spec.n_ellipsoids, rng); break;
  }

  // Smooth polynomial phase: quadratic monomials with seeded coefficients,
  // bounded by pi through the coefficient-sum normalization.
  std::array<double, 10> pc{};
  double pc_sum = 0.0;
  if (spec.phase == PhantomSpec::Phase::SmoothPolynomial) {
    for (double& c : pc) {
      c = rng.uniform(-1.0, 1.0);
      pc_sum += std::abs(c);
    }
    if (pc_sum <= 0.0) pc_sum = 1.0;
  }

  Volume v(spec.shape, spec.voxel_size);
  for (int z = 0; z < spec.shape.nz; ++z) {
    const double w = coord(z, spec.shape.nz);
    for (int y = 0; y < spec.shape.ny; ++y) {
      const double t = coord(y, spec.shape.ny);
      for (int x = 0; x < spec.shape.nx; ++x) {
        const double u = coord(x, spec.shape.nx);
        double mag = 0.0;
        for (const Ellipsoid& e : ells)
          if (inside(e, u, t, w)) mag += e.amp;
        mag = std::min(std::max(mag, 0.0), 1.0);

        double ph = 0.0;
        if (spec.phase == PhantomSpec::Phase::SmoothPolynomial) {
          const double p = pc[0] + pc[1] * u + pc[2] * t + pc[3] * w + pc[4] * u * t +
                           pc[5] * u * w + pc[6] * t * w + pc[7] * u * u + pc[8] * t * t +
                           pc[9] * w * w;
          ph = kPi * p / pc_sum;
        }
        v.at(x, y, z) = mag * cplx(std::cos(ph), std::sin(ph));
      }
    }
  }
  return v;
}

void DiffusionProtocol::validate() const {
  if (!(b_value >= 0.0)) throw std::invalid_argument("DiffusionProtocol: negative b_value");
  if (int(directions.size()) < 6)
    throw std::invalid_argument("DiffusionProtocol: fewer than 6 directions");
  for (const auto& g : directions) {
    const double n = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (std::abs(n - 1.0) > 1e-12)
      throw std::invalid_argument("DiffusionProtocol: direction not unit-norm");
  }
  for (std::size_t i = 0; i < directions.size(); ++i)
    for (std::size_t j = i + 1; j < directions.size(); ++j) {
      const auto& a = directions[i];
      const auto& b = directions[j];
      const double d = std::abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
      if (d > 1.0 - 1e-12)
        throw std::invalid_argument("DiffusionProtocol: directions not pairwise distinct");
    }
}

std::vector<std::array<double, 3>> make_directions(int n, std::uint64_t seed) {
  if (n < 6) throw std::invalid_argument("make_directions: need at least 6 directions");
  Rng rng(derive_seed(seed, 0x64697273ULL));

  std::vector<std::array<double, 3>> p(n);
  for (auto& g : p) {
    double nn = 0.0;
    do {
      g = {rng.normal(), rng.normal(), rng.normal()};
      nn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    } while (nn < 1e-6);
    for (double& c : g) c /= nn;
  }

  // Electrostatic repulsion with antipodal symmetry, projected gradient.
  const double lr = 0.01;
  for (int it = 0; it < 800; ++it) {
    std::vector<std::array<double, 3>> f(n, {0.0, 0.0, 0.0});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        for (int sgn = 0; sgn < 2; ++sgn) {
          const double s = sgn ? -1.0 : 1.0;
          double d[3] = {p[i][0] - s * p[j][0], p[i][1] - s * p[j][1], p[i][2] - s * p[j][2]};
          double r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
          r2 = std::max(r2, 1e-9);
          const double inv = 1.0 / (r2 * std::sqrt(r2));
          for (int c = 0; c < 3; ++c) f[i][c] += d[c] * inv;
        }
      }
    for (int i = 0; i < n; ++i) {
      const double proj = f[i][0] * p[i][0] + f[i][1] * p[i][1] + f[i][2] * p[i][2];
      double q[3] = {p[i][0] + lr * (f[i][0] - proj * p[i][0]),
                     p[i][1] + lr * (f[i][1] - proj * p[i][1]),
                     p[i][2] + lr * (f[i][2] - proj * p[i][2])};
      const double nn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
      p[i] = {q[0] / nn, q[1] / nn, q[2] / nn};
    }
  }
  // Final exact normalization.
  for (auto& g : p) {
    const double nn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    for (double& c : g) c /= nn;
  }
  return p;
}

void write_protocol(const DiffusionProtocol& proto, const std::string& path) {
  proto.validate();
  nlohmann::ordered_json j;
  j["b_value"] = proto.b_value;
  j["includes_b0"] = proto.includes_b0;
  j["directions"] = nlohmann::ordered_json::array();
  for (const auto& g : proto.directions) j["directions"].push_back({g[0], g[1], g[2]});
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_protocol: cannot open " + path);
  f << j.dump() << "\n";
}

DiffusionProtocol read_protocol(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_protocol: cannot open " + path);
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("read_protocol: malformed JSON in " + path + ": " + e.what());
  }
  DiffusionProtocol proto;
  proto.b_value = j.at("b_value").get<double>();
  proto.includes_b0 = j.at("includes_b0").get<bool>();
  for (const auto& g : j.at("directions"))
    proto.directions.push_back({g[0].get<double>(), g[1].get<double>(), g[2].get<double>()});
  proto.validate();
  return proto;
}

TensorField make_tensor_field(Shape3 shape, std::uint64_t seed) {
  if (shape.nx < 1 || shape.ny < 1 || shape.nz < 1)
    throw std::invalid_argument("make_tensor_field: non-positive shape");
  Rng rng(derive_seed(seed, 0x746e7372ULL));

  const double d_bg = 0.7e-3;                      // isotropic background, mm^2/s
  const double l1 = 1.7e-3 * rng.uniform(0.95, 1.05);  // bundle principal eigenvalue
  const double l2 = 0.3e-3 * rng.uniform(0.95, 1.05);
  const double ring_r = 0.55 * rng.uniform(0.95, 1.05);
  const double tube_r = 0.18 * rng.uniform(0.95, 1.05);

  TensorField field(shape);
  std::size_t vox = 0;
  for (int z = 0; z < shape.nz; ++z) {
    const double w = coord(z, shape.nz);
    for (int y = 0; y < shape.ny; ++y) {
      const double t = coord(y, shape.ny);
      for (int x = 0; x < shape.nx; ++x, ++vox) {
        const double u = coord(x, shape.nx);
        const double rad = std::sqrt(u * u + t * t);
        const double ds = std::sqrt((rad - ring_r) * (rad - ring_r) + w * w);
        if (ds < tube_r && rad > 1e-9) {
          // Tangent to the ring: direction rotates smoothly with position.
          const double tx = -t / rad, ty = u / rad;
          field.at(0, vox) = l2 + (l1 - l2) * tx * tx;
          field.at(1, vox) = l2 + (l1 - l2) * ty * ty;
          field.at(2, vox) = l2;
          field.at(3, vox) = (l1 - l2) * tx * ty;
          field.at(4, vox) = 0.0;
          field.at(5, vox) = 0.0;
        } else {
          field.at(0, vox) = d_bg;
          field.at(1, vox) = d_bg;
          field.at(2, vox) = d_bg;
        }
      }
    }
  }
  return field;
}

std::vector<Volume> synth_dwi(const Volume& s0, const TensorField& field,
                              const DiffusionProtocol& proto) {
  proto.validate();
  if (!(s0.shape() == field.shape))
    throw std::invalid_argument("synth_dwi: shape mismatch between s0 and tensor field");

  std::vector<Volume> out;
  if (proto.includes_b0) out.push_back(s0);

  for (const auto& g : proto.directions) {
    Volume dwi(s0.shape(), s0.voxel_size());
    const std::size_t n = s0.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double q = g[0] * g[0] * field.at(0, i) + g[1] * g[1] * field.at(1, i) +
                       g[2] * g[2] * field.at(2, i) + 2.0 * g[0] * g[1] * field.at(3, i) +
                       2.0 * g[0] * g[2] * field.at(4, i) + 2.0 * g[1] * g[2] * field.at(5, i);
      dwi.data()[i] = s0.data()[i] * std::exp(-proto.b_value * q);
    }
    out.push_back(std::move(dwi));
  }
  return out;
}

Volume add_noise(const Volume& v, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_noise: negative sigma");
  if (sigma == 0.0) return v;
  Rng rng(derive_seed(seed, 0x6e6f6973ULL));
  Volume out = v;
  for (cplx& c : out.raw()) c += cplx(sigma * rng.normal(), sigma * rng.normal());
  return out;
}

void write_tensor_field(const TensorField& field, const std::string& path) {
  const Shape3 s = field.shape;
  Volume v(Shape3{s.nx, s.ny, 6 * s.nz});
  std::size_t vox = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++vox)
        for (int c = 0; c < 6; ++c)
          v.at(x, y, c * s.nz + z) = cplx(field.at(c, vox), 0.0);
  write_volume(v, path);

  nlohmann::ordered_json j;
  j["components"] = {"dxx", "dyy", "dzz", "dxy", "dxz", "dyz"};
  j["nz"] = s.nz;
  std::ofstream f(path + ".json", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_tensor_field: cannot open " + path + ".json");
  f << j.dump() << "\n";
}

TensorField read_tensor_field(const std::string& path) {
  std::ifstream jf(path + ".json", std::ios::binary);
  if (!jf) throw std::runtime_error("read_tensor_field: cannot open " + path + ".json");
  nlohmann::ordered_json j;
  jf >> j;
  const int nz = j.at("nz").get<int>();
  const Volume v = read_volume(path);
  if (v.shape().nz != 6 * nz)
    throw std::runtime_error("read_tensor_field: stacked component count mismatch in " + path);

  TensorField field(Shape3{v.shape().nx, v.shape().ny, nz});
  std::size_t vox = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < v.shape().ny; ++y)
      for (int x = 0; x < v.shape().nx; ++x, ++vox)
        for (int c = 0; c < 6; ++c) field.at(c, vox) = v.at(x, y, c * nz + z).real();
  return field;
}

}  // namespace pen
