#include "penrecon/dti.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace pen {

TensorMaps fit_tensor(const std::vector<Volume>& dwis, const DiffusionProtocol& proto,
                      double mask_threshold) {
  proto.validate();
  if (!proto.includes_b0)
    throw std::invalid_argument("fit_tensor: protocol must include a b0 volume");
  const int ndir = int(proto.directions.size());
  if (int(dwis.size()) != ndir + 1)
    throw std::invalid_argument("fit_tensor: expected b0 + one volume per direction");
  const Shape3 shape = dwis[0].shape();
  for (const Volume& v : dwis)
    if (!(v.shape() == shape)) throw std::invalid_argument("fit_tensor: shape mismatch");
  if (proto.b_value <= 0.0)
    throw std::invalid_argument("fit_tensor: b_value must be positive for fitting");

  // Design matrix rows: [gx^2, gy^2, gz^2, 2 gx gy, 2 gx gz, 2 gy gz].
  Eigen::MatrixXd X(ndir, 6);
  for (int g = 0; g < ndir; ++g) {
    const auto& d = proto.directions[g];
    X(g, 0) = d[0] * d[0];
    X(g, 1) = d[1] * d[1];
    X(g, 2) = d[2] * d[2];
    X(g, 3) = 2.0 * d[0] * d[1];
    X(g, 4) = 2.0 * d[0] * d[2];
    X(g, 5) = 2.0 * d[1] * d[2];
  }
  const Eigen::MatrixXd xtx = X.transpose() * X;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xtx);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > lmax * 1e-10))
    throw std::invalid_argument("fit_tensor: degenerate direction set (collinear directions)");
  const Eigen::MatrixXd pinv = xtx.ldlt().solve(X.transpose());  // 6 x ndir

  const std::size_t n = shape.total();
  TensorMaps maps;
  maps.shape = shape;
  maps.tensor = TensorField(shape);
  maps.fa.assign(n, 0.0);
  maps.md.assign(n, 0.0);
  maps.principal.assign(n, {0.0, 0.0, 0.0});
  maps.color_fa.assign(n, {0.0, 0.0, 0.0});
  maps.mask.assign(n, 0);

  double s0_max = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    s0_max = std::max(s0_max, std::abs(dwis[0].data()[i]));
  const double thr = mask_threshold * s0_max;

  Eigen::VectorXd rhs(ndir);
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = std::abs(dwis[0].data()[i]);
    if (!(s0 > thr) || s0 <= 0.0) continue;
    maps.mask[i] = 1;

    for (int g = 0; g < ndir; ++g) {
      const double sg = std::max(std::abs(dwis[g + 1].data()[i]), s0 * 1e-12);
      rhs(g) = -std::log(sg / s0) / proto.b_value;
    }
    const Eigen::VectorXd dvec = pinv * rhs;
    for (int c = 0; c < 6; ++c) maps.tensor.at(c, i) = dvec(c);

    Eigen::Matrix3d D;
    D << dvec(0), dvec(3), dvec(4), dvec(3), dvec(1), dvec(5), dvec(4), dvec(5), dvec(2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(D);
    Eigen::Vector3d lam = eig.eigenvalues();  // ascending
    for (int c = 0; c < 3; ++c) lam(c) = std::max(lam(c), 0.0);

    const double md = (lam(0) + lam(1) + lam(2)) / 3.0;
    const double ss = lam.squaredNorm();
    double fa = 0.0;
    if (ss > 0.0) {
      const double dev = (lam(0) - md) * (lam(0) - md) + (lam(1) - md) * (lam(1) - md) +
                         (lam(2) - md) * (lam(2) - md);
      fa = std::sqrt(1.5 * dev / ss);
      fa = std::min(std::max(fa, 0.0), 1.0);
    }
    Eigen::Vector3d pd = eig.eigenvectors().col(2);  // largest eigenvalue
    // Deterministic sign: make the largest-magnitude component positive.
    int imax = 0;
    for (int c = 1; c < 3; ++c)
      if (std::abs(pd(c)) > std::abs(pd(imax))) imax = c;
    if (pd(imax) < 0.0) pd = -pd;

    maps.md[i] = md;
    maps.fa[i] = fa;
    maps.principal[i] = {pd(0), pd(1), pd(2)};
    maps.color_fa[i] = {std::abs(pd(0)) * fa, std::abs(pd(1)) * fa, std::abs(pd(2)) * fa};
  }
  return maps;
}

}  // namespace pen
