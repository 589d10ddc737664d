#include "penrecon/slab.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "penrecon/rng.hpp"

namespace pen {

int SlabMeasurements::n_acquired() const {
  int n = 0;
  for (auto a : acquired) n += a ? 1 : 0;
  return n;
}

void SlabMeasurements::validate() const {
  if (geometry.n_slab < 1 || geometry.slices_per_slab < 1)
    throw std::invalid_argument("SlabMeasurements: bad geometry");
  if (int(slabs.size()) != geometry.n_slab || int(acquired.size()) != geometry.n_slab)
    throw std::invalid_argument("SlabMeasurements: slab count mismatch");
  const Shape3 s0 = slabs.front().shape();
  if (s0.nz != geometry.slices_per_slab)
    throw std::invalid_argument("SlabMeasurements: sub-volume slice count mismatch");
  for (const Volume& v : slabs)
    if (!(v.shape() == s0))
      throw std::invalid_argument("SlabMeasurements: sub-volume shapes differ");
  if (n_acquired() < 1)
    throw std::invalid_argument("SlabMeasurements: no acquired slabs");
}

void ProfileSpec::validate(const SlabGeometry& geom) const {
  if (ripple_amp < 0.0 || ripple_amp > 0.25)
    throw std::invalid_argument("ProfileSpec: ripple_amp outside [0, 0.25]");
  if (sidelobe_amp < 0.0 || sidelobe_amp > 0.5)
    throw std::invalid_argument("ProfileSpec: sidelobe_amp outside [0, 0.5]");
  if (transition_width < 0 || 2 * transition_width >= geom.slices_per_slab)
    throw std::invalid_argument("ProfileSpec: transition_width must be < slices_per_slab/2");
  if (sidelobe_extent < 0)
    throw std::invalid_argument("ProfileSpec: negative sidelobe_extent");
}

SlabProfileSet make_profiles(const SlabGeometry& geom, const ProfileSpec& spec,
                             std::uint64_t seed) {
  if (geom.n_slab < 1 || geom.slices_per_slab < 1)
    throw std::invalid_argument("make_profiles: bad geometry");
  spec.validate(geom);

  const int nz = geom.nz();
  const int delta = geom.slices_per_slab;
  SlabProfileSet out;
  out.geometry = geom;
  out.weights.assign(std::size_t(geom.n_slab) * nz, 0.0);

  Rng rng(derive_seed(seed, 0x70726f66ULL));
  constexpr double two_pi = 6.283185307179586476925286766559;

  for (int k = 0; k < geom.n_slab; ++k) {
    const int a = k * delta;
    const int b = (k + 1) * delta;
    const double ripple_phase = rng.uniform(0.0, two_pi);  // drawn for every slab/model

    if (spec.model == ProfileSpec::Model::Rect) {
      for (int z = a; z < b; ++z) out.weight(k, z) = 1.0;
      continue;
    }

    const int t = spec.transition_width;
    for (int z = a; z < b; ++z) {
      double base = 1.0;
      if (t > 0) {
        const int din = z - a;
        const int dout = b - 1 - z;
        if (din < t) base = 0.5 * (1.0 - std::cos(3.141592653589793 * (din + 0.5) / t));
        else if (dout < t) base = 0.5 * (1.0 - std::cos(3.141592653589793 * (dout + 0.5) / t));
      }
      const double ripple =
          1.0 + spec.ripple_amp * std::sin(two_pi * 3.0 * (z - a) / delta + ripple_phase);
      out.weight(k, z) = base * ripple;
    }

    // Gaussian side lobes centered sidelobe_extent voxels into each
    // neighboring slab window (no wraparound at the FOV ends).
    if (spec.sidelobe_amp > 0.0 && spec.sidelobe_extent > 0) {
      const double sg = std::max(1.0, spec.sidelobe_extent / 2.0);
      const double cl = a - spec.sidelobe_extent;      // into slab k-1
      const double cr = b - 1 + spec.sidelobe_extent;  // into slab k+1
      for (int z = 0; z < nz; ++z) {
        if (z >= a && z < b) continue;
        double lobe = 0.0;
        if (k > 0) lobe += spec.sidelobe_amp * std::exp(-0.5 * (z - cl) * (z - cl) / (sg * sg));
        if (k + 1 < geom.n_slab)
          lobe += spec.sidelobe_amp * std::exp(-0.5 * (z - cr) * (z - cr) / (sg * sg));
        out.weight(k, z) += lobe;
      }
    }
  }

  for (double& w : out.weights) w = std::min(std::max(w, 0.0), 1.25);
  return out;
}

RealMatrix group_matrix(const SlabProfileSet& profiles, int z0,
                        const std::vector<std::uint8_t>& mask) {
  const SlabGeometry g = profiles.geometry;
  if (z0 < 0 || z0 >= g.slices_per_slab)
    throw std::invalid_argument("group_matrix: z0 out of range");
  if (int(mask.size()) != g.n_slab)
    throw std::invalid_argument("group_matrix: mask size mismatch");
  int k_acq = 0;
  for (auto m : mask) k_acq += m ? 1 : 0;
  RealMatrix G(k_acq, g.n_slab);
  int row = 0;
  for (int k = 0; k < g.n_slab; ++k) {
    if (!mask[k]) continue;
    for (int m = 0; m < g.n_slab; ++m)
      G.at(row, m) = profiles.weight(k, z0 + m * g.slices_per_slab);
    ++row;
  }
  return G;
}

namespace {

std::vector<std::uint8_t> full_mask(int n) { return std::vector<std::uint8_t>(n, 1); }

void check_rho_geometry(const Volume& rho, const SlabGeometry& g) {
  if (rho.shape().nz != g.nz())
    throw std::invalid_argument("slab model: volume nz does not match n_slab * slices_per_slab");
}

Eigen::MatrixXd to_eigen(const RealMatrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) e(r, c) = m.at(r, c);
  return e;
}

}  // namespace

SlabMeasurements forward_pen(const Volume& rho, const SlabProfileSet& profiles,
                             const std::vector<std::uint8_t>& mask) {
  const SlabGeometry g = profiles.geometry;
  check_rho_geometry(rho, g);
  if (int(mask.size()) != g.n_slab)
    throw std::invalid_argument("forward_pen: mask size mismatch");

  const Shape3 vs = rho.shape();
  const int delta = g.slices_per_slab;
  SlabMeasurements out;
  out.geometry = g;
  out.acquired = mask;
  out.slabs.assign(g.n_slab, Volume(Shape3{vs.nx, vs.ny, delta}, rho.voxel_size()));

  for (int k = 0; k < g.n_slab; ++k) {
    if (!mask[k]) continue;
    Volume& slab = out.slabs[k];
    for (int z0 = 0; z0 < delta; ++z0) {
      for (int m = 0; m < g.n_slab; ++m) {
        const double w = profiles.weight(k, z0 + m * delta);
        if (w == 0.0) continue;
        const int zg = z0 + m * delta;
        for (int y = 0; y < vs.ny; ++y)
          for (int x = 0; x < vs.nx; ++x)
            slab.at(x, y, z0) += w * rho.at(x, y, zg);
      }
    }
  }
  out.validate();
  return out;
}

SlabMeasurements forward_pen(const Volume& rho, const SlabProfileSet& profiles) {
  return forward_pen(rho, profiles, full_mask(profiles.geometry.n_slab));
}

Volume adjoint_pen(const SlabMeasurements& meas, const SlabProfileSet& profiles) {
  meas.validate();
  if (!(meas.geometry == profiles.geometry))
    throw std::invalid_argument("adjoint_pen: geometry mismatch");
  const SlabGeometry g = meas.geometry;
  const Shape3 ss = meas.slabs.front().shape();
  const int delta = g.slices_per_slab;

  Volume out(Shape3{ss.nx, ss.ny, g.nz()}, meas.slabs.front().voxel_size());
  for (int k = 0; k < g.n_slab; ++k) {
    if (!meas.acquired[k]) continue;
    const Volume& slab = meas.slabs[k];
    for (int z0 = 0; z0 < delta; ++z0) {
      for (int m = 0; m < g.n_slab; ++m) {
        const double w = profiles.weight(k, z0 + m * delta);
        if (w == 0.0) continue;
        const int zg = z0 + m * delta;
        for (int y = 0; y < ss.ny; ++y)
          for (int x = 0; x < ss.nx; ++x)
            out.at(x, y, zg) += w * slab.at(x, y, z0);
      }
    }
  }
  return out;
}

double group_tikhonov_eps(const SlabProfileSet& profiles,
                          const std::vector<std::uint8_t>& mask) {
  double max_sq = 0.0;
  for (int z0 = 0; z0 < profiles.geometry.slices_per_slab; ++z0) {
    const Eigen::MatrixXd G = to_eigen(group_matrix(profiles, z0, mask));
    if (G.rows() == 0) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G.transpose() * G);
    max_sq = std::max(max_sq, es.eigenvalues().maxCoeff());
  }
  return 1e-12 * max_sq;
}

GroupConditionReport group_condition_report(const SlabProfileSet& profiles,
                                            const std::vector<std::uint8_t>& mask) {
  GroupConditionReport rep;
  rep.eps = group_tikhonov_eps(profiles, mask);
  rep.min_cond = std::numeric_limits<double>::infinity();
  rep.max_cond = 0.0;
  for (int z0 = 0; z0 < profiles.geometry.slices_per_slab; ++z0) {
    const Eigen::MatrixXd G = to_eigen(group_matrix(profiles, z0, mask));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
    const double cond = (G.rows() < G.cols() || smin <= smax * 1e-300)
                            ? std::numeric_limits<double>::infinity()
                            : smax / smin;
    rep.min_cond = std::min(rep.min_cond, cond);
    rep.max_cond = std::max(rep.max_cond, cond);
  }
  return rep;
}

Volume solve_rho_update(const SlabMeasurements& meas, const SlabProfileSet& profiles,
                        double beta, const std::optional<Volume>& u) {
  meas.validate();
  if (!(meas.geometry == profiles.geometry))
    throw std::invalid_argument("solve_rho_update: geometry mismatch");
  if (!std::isfinite(beta) || beta < 0.0)
    throw std::invalid_argument("solve_rho_update: beta must be finite and >= 0");
  if (beta > 0.0 && !u)
    throw std::invalid_argument("solve_rho_update: beta > 0 requires u");

  const SlabGeometry g = meas.geometry;
  const Shape3 ss = meas.slabs.front().shape();
  const int delta = g.slices_per_slab;
  const int n = g.n_slab;
  const Shape3 full{ss.nx, ss.ny, g.nz()};

  if (u && !(u->shape() == full))
    throw std::invalid_argument("solve_rho_update: u shape mismatch");
  for (const Volume& s : meas.slabs)
    if (!all_finite(s)) throw std::invalid_argument("solve_rho_update: non-finite measurements");
  if (u && !all_finite(*u))
    throw std::invalid_argument("solve_rho_update: non-finite u");

  const double eps = group_tikhonov_eps(profiles, meas.acquired);
  Volume rho(full, meas.slabs.front().voxel_size());
  const std::size_t ncol = std::size_t(ss.nx) * ss.ny;

  for (int z0 = 0; z0 < delta; ++z0) {
    const RealMatrix Gm = group_matrix(profiles, z0, meas.acquired);
    const Eigen::MatrixXd G = to_eigen(Gm);
    Eigen::MatrixXd M = 2.0 * (G.transpose() * G);
    M.diagonal().array() += 2.0 * eps + beta;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);

    // rhs = 2 G^T y + beta u, assembled for all (x, y) columns at once,
    // real and imaginary parts side by side.
    Eigen::MatrixXd rhs(n, 2 * ncol);
    rhs.setZero();
    int row = 0;
    for (int k = 0; k < g.n_slab; ++k) {
      if (!meas.acquired[k]) continue;
      const Volume& slab = meas.slabs[k];
      for (int m = 0; m < n; ++m) {
        const double w = 2.0 * G(row, m);
        if (w == 0.0) continue;
        const cplx* src = slab.data() + std::size_t(z0) * ncol;
        for (std::size_t i = 0; i < ncol; ++i) {
          rhs(m, Eigen::Index(i)) += w * src[i].real();
          rhs(m, Eigen::Index(ncol + i)) += w * src[i].imag();
        }
      }
      ++row;
    }
    if (u && beta > 0.0) {
      for (int m = 0; m < n; ++m) {
        const cplx* src = u->data() + std::size_t(z0 + m * delta) * ncol;
        for (std::size_t i = 0; i < ncol; ++i) {
          rhs(m, Eigen::Index(i)) += beta * src[i].real();
          rhs(m, Eigen::Index(ncol + i)) += beta * src[i].imag();
        }
      }
    }

    const Eigen::MatrixXd sol = ldlt.solve(rhs);
    for (int m = 0; m < n; ++m) {
      cplx* dst = rho.data() + std::size_t(z0 + m * delta) * ncol;
      for (std::size_t i = 0; i < ncol; ++i)
        dst[i] = cplx(sol(m, Eigen::Index(i)), sol(m, Eigen::Index(ncol + i)));
    }
  }
  if (!all_finite(rho))
    throw std::runtime_error("solve_rho_update: non-finite solution");
  return rho;
}

Volume lsq_pen(const SlabMeasurements& meas, const SlabProfileSet& profiles) {
  return solve_rho_update(meas, profiles, 0.0, std::nullopt);
}

// ---- file I/O ----

namespace {
using ordered_json = nlohmann::ordered_json;

void write_json_file(const ordered_json& j, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string s = j.dump();
  f.write(s.data(), std::streamsize(s.size()));
  f.put('\n');
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}
}  // namespace

void write_profiles(const SlabProfileSet& profiles, const std::string& path) {
  const SlabGeometry g = profiles.geometry;
  Volume v(Shape3{g.nz(), g.n_slab, 1});
  for (int k = 0; k < g.n_slab; ++k)
    for (int z = 0; z < g.nz(); ++z) v.at(z, k, 0) = cplx(profiles.weight(k, z), 0.0);
  write_volume(v, path);
  ordered_json j;
  j["n_slab"] = g.n_slab;
  j["slices_per_slab"] = g.slices_per_slab;
  write_json_file(j, path + ".json");
}

SlabProfileSet read_profiles(const std::string& path) {
  const ordered_json j = read_json_file(path + ".json");
  SlabGeometry g{j.at("n_slab").get<int>(), j.at("slices_per_slab").get<int>()};
  const Volume v = read_volume(path);
  if (v.shape().nx != g.nz() || v.shape().ny != g.n_slab || v.shape().nz != 1)
    throw std::runtime_error("read_profiles: container shape mismatch in " + path);
  SlabProfileSet out;
  out.geometry = g;
  out.weights.assign(std::size_t(g.n_slab) * g.nz(), 0.0);
  for (int k = 0; k < g.n_slab; ++k)
    for (int z = 0; z < g.nz(); ++z) out.weight(k, z) = v.at(z, k, 0).real();
  return out;
}

void write_measurements(const SlabMeasurements& meas, const std::string& path) {
  meas.validate();
  const SlabGeometry g = meas.geometry;
  const Shape3 ss = meas.slabs.front().shape();
  Volume stacked(Shape3{ss.nx, ss.ny, g.nz()}, meas.slabs.front().voxel_size());
  for (int k = 0; k < g.n_slab; ++k)
    for (int z0 = 0; z0 < g.slices_per_slab; ++z0)
      for (int y = 0; y < ss.ny; ++y)
        for (int x = 0; x < ss.nx; ++x)
          stacked.at(x, y, k * g.slices_per_slab + z0) = meas.slabs[k].at(x, y, z0);
  write_volume(stacked, path);

  ordered_json j;
  j["n_slab"] = g.n_slab;
  j["slices_per_slab"] = g.slices_per_slab;
  j["acquired_mask"] = ordered_json::array();
  for (auto a : meas.acquired) j["acquired_mask"].push_back(bool(a));
  write_json_file(j, path + ".json");
}

SlabMeasurements read_measurements(const std::string& path) {
  const ordered_json j = read_json_file(path + ".json");
  SlabGeometry g{j.at("n_slab").get<int>(), j.at("slices_per_slab").get<int>()};
  const Volume stacked = read_volume(path);
  if (stacked.shape().nz != g.nz())
    throw std::runtime_error("read_measurements: stacked nz mismatch in " + path);

  SlabMeasurements meas;
  meas.geometry = g;
  const auto& jm = j.at("acquired_mask");
  if (!jm.is_array() || int(jm.size()) != g.n_slab)
    throw std::runtime_error("read_measurements: bad acquired_mask in " + path);
  for (const auto& e : jm) meas.acquired.push_back(e.get<bool>() ? 1 : 0);

  const Shape3 ss{stacked.shape().nx, stacked.shape().ny, g.slices_per_slab};
  meas.slabs.assign(g.n_slab, Volume(ss, stacked.voxel_size()));
  for (int k = 0; k < g.n_slab; ++k)
    for (int z0 = 0; z0 < g.slices_per_slab; ++z0)
      for (int y = 0; y < ss.ny; ++y)
        for (int x = 0; x < ss.nx; ++x)
          meas.slabs[k].at(x, y, z0) = stacked.at(x, y, k * g.slices_per_slab + z0);
  meas.validate();
  return meas;
}

}  // namespace pen
