#include "penrecon/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pen {

namespace {

void check_shapes(const Volume& a, const Volume& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("metrics: shape mismatch");
}

std::vector<double> magnitudes(const Volume& v) {
  std::vector<double> m(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = std::abs(v.data()[i]);
  return m;
}

// 3D summed-area table with a one-voxel zero border.
struct Sat {
  int nx, ny, nz;
  std::vector<double> s;

  Sat(const std::vector<double>& v, int nx_, int ny_, int nz_)
      : nx(nx_), ny(ny_), nz(nz_), s(std::size_t(nx + 1) * (ny + 1) * (nz + 1), 0.0) {
    for (int z = 1; z <= nz; ++z)
      for (int y = 1; y <= ny; ++y)
        for (int x = 1; x <= nx; ++x) {
          const double val = v[std::size_t(x - 1) + std::size_t(nx) * ((y - 1) + std::size_t(ny) * (z - 1))];
          at(x, y, z) = val + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) -
                        at(x - 1, y - 1, z) - at(x - 1, y, z - 1) - at(x, y - 1, z - 1) +
                        at(x - 1, y - 1, z - 1);
        }
  }
  double& at(int x, int y, int z) {
    return s[std::size_t(x) + std::size_t(nx + 1) * (std::size_t(y) + std::size_t(ny + 1) * z)];
  }
  double at(int x, int y, int z) const {
    return s[std::size_t(x) + std::size_t(nx + 1) * (std::size_t(y) + std::size_t(ny + 1) * z)];
  }
  /// Sum over [x0, x1) x [y0, y1) x [z0, z1).
  double box(int x0, int y0, int z0, int x1, int y1, int z1) const {
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) +
           at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
  }
};

}  // namespace

double psnr(const Volume& a, const Volume& b, double peak) {
  check_shapes(a, b);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a.data()[i]) - std::abs(b.data()[i]);
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse <= 0.0) return 200.0;
  return std::min(200.0, 10.0 * std::log10(peak * peak / mse));
}

double nrmse(const Volume& a, const Volume& b) {
  check_shapes(a, b);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ma = std::abs(a.data()[i]);
    const double mb = std::abs(b.data()[i]);
    num += (ma - mb) * (ma - mb);
    den += mb * mb;
  }
  if (den <= 0.0) return num <= 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

double ssim(const Volume& a, const Volume& b, double peak) {
  check_shapes(a, b);
  const Shape3 sh = a.shape();
  const int wx = std::min(8, sh.nx), wy = std::min(8, sh.ny), wz = std::min(8, sh.nz);
  const double nwin = double(wx) * wy * wz;

  const std::vector<double> ma = magnitudes(a);
  const std::vector<double> mb = magnitudes(b);
  std::vector<double> aa(ma.size()), bb(ma.size()), ab(ma.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    aa[i] = ma[i] * ma[i];
    bb[i] = mb[i] * mb[i];
    ab[i] = ma[i] * mb[i];
  }
  const Sat sa(ma, sh.nx, sh.ny, sh.nz), sb(mb, sh.nx, sh.ny, sh.nz);
  const Sat saa(aa, sh.nx, sh.ny, sh.nz), sbb(bb, sh.nx, sh.ny, sh.nz),
      sab(ab, sh.nx, sh.ny, sh.nz);

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);

  double acc = 0.0;
  std::size_t count = 0;
  for (int z = 0; z + wz <= sh.nz; ++z)
    for (int y = 0; y + wy <= sh.ny; ++y)
      for (int x = 0; x + wx <= sh.nx; ++x) {
        const double sua = sa.box(x, y, z, x + wx, y + wy, z + wz) / nwin;
        const double sub = sb.box(x, y, z, x + wx, y + wy, z + wz) / nwin;
        const double vaa = saa.box(x, y, z, x + wx, y + wy, z + wz) / nwin - sua * sua;
        const double vbb = sbb.box(x, y, z, x + wx, y + wy, z + wz) / nwin - sub * sub;
        const double vab = sab.box(x, y, z, x + wx, y + wy, z + wz) / nwin - sua * sub;
        const double num = (2.0 * sua * sub + c1) * (2.0 * vab + c2);
        const double den = (sua * sua + sub * sub + c1) * (vaa + vbb + c2);
        acc += num / den;
        ++count;
      }
  return count ? acc / double(count) : 1.0;
}

}  // namespace pen
