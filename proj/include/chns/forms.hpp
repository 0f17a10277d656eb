#ifndef CHNS_FORMS_HPP
#define CHNS_FORMS_HPP

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "chns/errors.hpp"
#include "chns/fespace.hpp"
#include "chns/mesh.hpp"
#include "chns/quadrature.hpp"

namespace chns {

// Physical and numerical constants of one run.
struct Params {
  double eps = 0.01;    // interface width
  double lambda = 0.01; // energy density constant
  double rho1 = 1.0, rho2 = 100.0;
  double eta = 1.0;  // constant viscosity
  double dt = 1e-3;
  double delta = 1e-6; // sign regularization in the edge stabilization
  double xi = 1e-10;   // pressure penalty
  Vec2 gravity{0.0, 0.0};

  double rho_avg() const { return 0.5 * (rho1 + rho2); }
  double rho_dif() const { return 0.5 * (rho2 - rho1); }
  double density(double z) const { return rho_avg() + rho_dif() * z; }
  bool gravity_on() const { return gravity.x != 0.0 || gravity.y != 0.0; }

  void validate() const {
    if (!(eps > 0.0) || !(lambda > 0.0) || !(dt > 0.0) || !(eta > 0.0))
      throw ConfigError("eps, lambda, dt, eta must be positive");
    if (delta < 0.0 || xi < 0.0)
      throw ConfigError("delta and xi must be nonnegative");
    if (!(rho1 > 0.0) || !(rho2 > rho1))
      throw ConfigError("densities must satisfy 0 < rho1 < rho2");
  }
};

// --- scalar kernels ---

inline double pos_part(double z) { return z > 0.0 ? z : 0.0; }
inline double neg_part(double z) { return z < 0.0 ? -z : 0.0; }
// One-sided derivative convention: H(0) = 0.
inline double heaviside0(double z) { return z > 0.0 ? 1.0 : 0.0; }
inline double sign0(double z) { return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0); }

// Smoothing of sign(z) used by the Newton-differentiable edge stabilization;
// delta = 0 falls back to the exact sign.
inline double smoothed_sign(double z, double delta) {
  return delta > 0.0 ? z / (std::abs(z) + delta) : sign0(z);
}
inline double smoothed_sign_deriv(double z, double delta) {
  if (delta <= 0.0)
    return 0.0;
  const double d = std::abs(z) + delta;
  return delta / (d * d);
}

// Truncated degenerate mobility and its monotone split.
inline double mobility(double z) { return pos_part(1.0 - z * z); }
inline double mobility_up(double z) { return z <= 0.0 ? mobility(z) : 1.0; }
inline double mobility_down(double z) { return z <= 0.0 ? 0.0 : mobility(z) - 1.0; }

inline double mobility_deriv(double z) { return std::abs(z) < 1.0 ? -2.0 * z : 0.0; }
inline double mobility_up_deriv(double z) {
  return (z > -1.0 && z <= 0.0) ? -2.0 * z : 0.0;
}
inline double mobility_down_deriv(double z) {
  return (z > 0.0 && z < 1.0) ? -2.0 * z : 0.0;
}

// Double well F and the convex-split two-level derivative
// f(phi1, phi0) = Fi'(phi1) + Fe'(phi0).
inline double potential_F(double z) {
  const double t = z * z - 1.0;
  return 0.25 * t * t;
}
inline double potential_f(double phi1, double phi0) {
  return 2.0 * phi1 + (phi0 * phi0 * phi0 - 3.0 * phi0);
}

inline Field density_of(const Params &p, const Field &phi) {
  Field r = phi;
  r.coeffs = (p.rho_avg() + p.rho_dif() * phi.coeffs.array()).matrix();
  return r;
}

// Barycentric coordinates of a physical point within element K.
inline std::array<double, 3> barycentric(const StructuredTriMesh &m, int K, Vec2 x) {
  const Vec2 d = x - m.barycenters[static_cast<std::size_t>(K)];
  const auto &g = m.grad_lambda[static_cast<std::size_t>(K)];
  return {1.0 / 3.0 + g[0].dot(d), 1.0 / 3.0 + g[1].dot(d), 1.0 / 3.0 + g[2].dot(d)};
}

// Quadrature point on an interior edge together with its barycentric
// coordinates in both incident elements.
struct EdgePoint {
  Vec2 x;
  double w; // weight including |e|
  std::array<double, 3> lK, lL;
};

inline std::array<EdgePoint, 3> edge_points(const StructuredTriMesh &m,
                                            const InteriorEdge &ie) {
  const Vec2 a = m.vertex(m.edges[ie.edge][0]);
  const Vec2 b = m.vertex(m.edges[ie.edge][1]);
  std::array<EdgePoint, 3> pts;
  const auto &q = edge_quadrature();
  for (int i = 0; i < 3; ++i) {
    EdgePoint p;
    p.x = a + (b - a) * q[i].s;
    p.w = q[i].w * ie.length;
    p.lK = barycentric(m, ie.K, p.x);
    p.lL = barycentric(m, ie.L, p.x);
    pts[i] = p;
  }
  return pts;
}

// Elementwise mean of a continuous P1 field (the value at the barycenter).
inline double cell_mean_p1(const FeSpaces &fes, const Eigen::VectorXd &mu, int K) {
  const auto &el = fes.mesh->elements[static_cast<std::size_t>(K)];
  return (mu[el[0]] + mu[el[1]] + mu[el[2]]) / 3.0;
}

// --- upwind transport form: evaluate and assembly variants ---

// sum_e int_e ((u.n)+ phi_K - (u.n)- phi_L) [phibar]
inline double form_a_upw(const FeSpaces &fes, const Eigen::VectorXd &u,
                         const Eigen::VectorXd &phi, const Eigen::VectorXd &phibar) {
  const auto &m = *fes.mesh;
  double total = 0.0;
  for (const auto &ie : m.interior_edges) {
    const double jump_bar = phibar[ie.K] - phibar[ie.L];
    if (jump_bar == 0.0)
      continue;
    double flux = 0.0;
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      flux += p.w * (pos_part(z) * phi[ie.K] - neg_part(z) * phi[ie.L]);
    }
    total += flux * jump_bar;
  }
  return total;
}

// Matrix A(u) with phibar^T A(u) phi = form_a_upw(u, phi, phibar); also the
// Jacobian of the phase row with respect to phi.
inline Eigen::SparseMatrix<double> assemble_a_upw_matrix(const FeSpaces &fes,
                                                         const Eigen::VectorXd &u) {
  const auto &m = *fes.mesh;
  std::vector<Eigen::Triplet<double>> t;
  for (const auto &ie : m.interior_edges) {
    double wp = 0.0, wm = 0.0;
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      wp += p.w * pos_part(z);
      wm += p.w * neg_part(z);
    }
    t.emplace_back(ie.K, ie.K, wp);
    t.emplace_back(ie.K, ie.L, -wm);
    t.emplace_back(ie.L, ie.K, -wp);
    t.emplace_back(ie.L, ie.L, wm);
  }
  Eigen::SparseMatrix<double> A(fes.n_phi, fes.n_phi);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

// Jacobian of the phase row with respect to u (one-sided at u.n = 0).
inline Eigen::SparseMatrix<double>
assemble_a_upw_jac_u(const FeSpaces &fes, const Eigen::VectorXd &u,
                     const Eigen::VectorXd &phi) {
  const auto &m = *fes.mesh;
  std::vector<Eigen::Triplet<double>> t;
  for (const auto &ie : m.interior_edges) {
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      const double dflux = heaviside0(z) * phi[ie.K] + heaviside0(-z) * phi[ie.L];
      if (dflux == 0.0)
        continue;
      const P2Shape s = p2_shape(p.lK[0], p.lK[1], p.lK[2]);
      for (int a = 0; a < fes.u_nodes_per_elem; ++a) {
        if (s.N[a] == 0.0)
          continue;
        const int d = fes.u_scalar_dof(ie.K, a);
        const double vx = p.w * dflux * s.N[a] * ie.normal.x;
        const double vy = p.w * dflux * s.N[a] * ie.normal.y;
        t.emplace_back(ie.K, 2 * d, vx);
        t.emplace_back(ie.K, 2 * d + 1, vy);
        t.emplace_back(ie.L, 2 * d, -vx);
        t.emplace_back(ie.L, 2 * d + 1, -vy);
      }
    }
  }
  Eigen::SparseMatrix<double> A(fes.n_phi, fes.n_u);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

// --- jump-based mobility flux of the chemical potential ---

namespace detail {
inline void require_hypothesis(const StructuredTriMesh &m) {
  if (!m.interior_edges.empty()) {
    // Cheap spot check is not enough; rely on the validated flag.
    if (!m.hypothesis_ok)
      throw HypothesisViolation(0, -1.0);
  }
}
} // namespace detail

// sum_e (1/D_e) int_e ( [Pi0 mu]+ (Mup(phi_K)+Mdown(phi_L))+
//                     - [Pi0 mu]- (Mup(phi_L)+Mdown(phi_K))+ ) [phibar]
inline double form_b_upw(const FeSpaces &fes, const Eigen::VectorXd &mu,
                         const Eigen::VectorXd &phi, const Eigen::VectorXd &phibar) {
  const auto &m = *fes.mesh;
  detail::require_hypothesis(m);
  double total = 0.0;
  for (const auto &ie : m.interior_edges) {
    const double jump_bar = phibar[ie.K] - phibar[ie.L];
    if (jump_bar == 0.0)
      continue;
    const double j = cell_mean_p1(fes, mu, ie.K) - cell_mean_p1(fes, mu, ie.L);
    const double wK = pos_part(mobility_up(phi[ie.K]) + mobility_down(phi[ie.L]));
    const double wL = pos_part(mobility_up(phi[ie.L]) + mobility_down(phi[ie.K]));
    total += (ie.length / ie.D_e) * (pos_part(j) * wK - neg_part(j) * wL) * jump_bar;
  }
  return total;
}

inline void add_b_upw_residual(const FeSpaces &fes, const Eigen::VectorXd &mu,
                               const Eigen::VectorXd &phi, Eigen::VectorXd &r_phi) {
  const auto &m = *fes.mesh;
  detail::require_hypothesis(m);
  for (const auto &ie : m.interior_edges) {
    const double j = cell_mean_p1(fes, mu, ie.K) - cell_mean_p1(fes, mu, ie.L);
    const double wK = pos_part(mobility_up(phi[ie.K]) + mobility_down(phi[ie.L]));
    const double wL = pos_part(mobility_up(phi[ie.L]) + mobility_down(phi[ie.K]));
    const double v = (ie.length / ie.D_e) * (pos_part(j) * wK - neg_part(j) * wL);
    r_phi[ie.K] += v;
    r_phi[ie.L] -= v;
  }
}

// Jacobian blocks of the phase row: with respect to phi and to mu (the latter
// through the elementwise mean of the P1 field).
inline std::pair<Eigen::SparseMatrix<double>, Eigen::SparseMatrix<double>>
assemble_b_upw_jacs(const FeSpaces &fes, const Eigen::VectorXd &mu,
                    const Eigen::VectorXd &phi) {
  const auto &m = *fes.mesh;
  detail::require_hypothesis(m);
  std::vector<Eigen::Triplet<double>> tp, tm;
  for (const auto &ie : m.interior_edges) {
    const double scale = ie.length / ie.D_e;
    const double j = cell_mean_p1(fes, mu, ie.K) - cell_mean_p1(fes, mu, ie.L);
    const double sK = mobility_up(phi[ie.K]) + mobility_down(phi[ie.L]);
    const double sL = mobility_up(phi[ie.L]) + mobility_down(phi[ie.K]);

    // d/dphi
    const double aK = scale * pos_part(j) * heaviside0(sK);
    const double aL = scale * neg_part(j) * heaviside0(sL);
    const double d_phiK = aK * mobility_up_deriv(phi[ie.K]) - aL * mobility_down_deriv(phi[ie.K]);
    const double d_phiL = aK * mobility_down_deriv(phi[ie.L]) - aL * mobility_up_deriv(phi[ie.L]);
    if (d_phiK != 0.0) {
      tp.emplace_back(ie.K, ie.K, d_phiK);
      tp.emplace_back(ie.L, ie.K, -d_phiK);
    }
    if (d_phiL != 0.0) {
      tp.emplace_back(ie.K, ie.L, d_phiL);
      tp.emplace_back(ie.L, ie.L, -d_phiL);
    }

    // d/dmu through [Pi0 mu]
    const double djump = scale * (heaviside0(j) * pos_part(sK) + heaviside0(-j) * pos_part(sL));
    if (djump != 0.0) {
      const auto &elK = m.elements[static_cast<std::size_t>(ie.K)];
      const auto &elL = m.elements[static_cast<std::size_t>(ie.L)];
      for (int i = 0; i < 3; ++i) {
        tm.emplace_back(ie.K, elK[i], djump / 3.0);
        tm.emplace_back(ie.K, elL[i], -djump / 3.0);
        tm.emplace_back(ie.L, elK[i], -djump / 3.0);
        tm.emplace_back(ie.L, elL[i], djump / 3.0);
      }
    }
  }
  Eigen::SparseMatrix<double> Jp(fes.n_phi, fes.n_phi), Jm(fes.n_phi, fes.n_mu);
  Jp.setFromTriplets(tp.begin(), tp.end());
  Jm.setFromTriplets(tm.begin(), tm.end());
  return {Jp, Jm};
}

// --- centered phase-force discretization in the momentum row ---

// -int div(phi ubar) mu0 - sum_e int_e (ubar.n) <phi> [mu0]
inline double form_c_h(const FeSpaces &fes, const Eigen::VectorXd &phi,
                       const Eigen::VectorXd &mu0, const Eigen::VectorXd &ubar) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  double total = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    double divsum = 0.0;
    for (const auto &qp : q) {
      const auto G = fes.grad_u(ubar, K, {qp.l1, qp.l2, qp.l3});
      divsum += qp.w * (G[0][0] + G[1][1]);
    }
    total -= A * divsum * phi[K] * mu0[K];
  }
  for (const auto &ie : m.interior_edges) {
    const double jump = mu0[ie.K] - mu0[ie.L];
    if (jump == 0.0)
      continue;
    const double avg = 0.5 * (phi[ie.K] + phi[ie.L]);
    double flux = 0.0;
    for (const auto &p : edge_points(m, ie))
      flux += p.w * fes.eval_u(ubar, ie.K, p.lK).dot(ie.normal);
    total -= flux * avg * jump;
  }
  return total;
}

namespace detail {
// Per-element integrals of the divergence of each velocity shape function and
// of shape values on edges; shared by the c_h residual and Jacobians.
template <typename EmitVol, typename EmitEdge>
inline void c_h_loop(const FeSpaces &fes, EmitVol &&vol, EmitEdge &&edge) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    const auto &gl = m.grad_lambda[static_cast<std::size_t>(K)];
    for (int a = 0; a < fes.u_nodes_per_elem; ++a) {
      double ix = 0.0, iy = 0.0;
      for (const auto &qp : q) {
        const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
        const Vec2 gN{s.dNdl[a][0] * gl[0].x + s.dNdl[a][1] * gl[1].x + s.dNdl[a][2] * gl[2].x,
                      s.dNdl[a][0] * gl[0].y + s.dNdl[a][1] * gl[1].y + s.dNdl[a][2] * gl[2].y};
        ix += qp.w * gN.x;
        iy += qp.w * gN.y;
      }
      vol(K, a, A * ix, A * iy); // int_K d(N_a)/dx, d(N_a)/dy
    }
  }
  for (const auto &ie : m.interior_edges) {
    for (const auto &p : edge_points(m, ie)) {
      const P2Shape s = p2_shape(p.lK[0], p.lK[1], p.lK[2]);
      for (int a = 0; a < fes.u_nodes_per_elem; ++a)
        if (s.N[a] != 0.0)
          edge(ie, a, p.w * s.N[a]);
    }
  }
}
} // namespace detail

inline void add_c_h_residual(const FeSpaces &fes, const Eigen::VectorXd &phi,
                             const Eigen::VectorXd &mu0, Eigen::VectorXd &r_u) {
  detail::c_h_loop(
      fes,
      [&](int K, int a, double ix, double iy) {
        const int d = fes.u_scalar_dof(K, a);
        r_u[2 * d] -= ix * phi[K] * mu0[K];
        r_u[2 * d + 1] -= iy * phi[K] * mu0[K];
      },
      [&](const InteriorEdge &ie, int a, double wN) {
        const double jump = mu0[ie.K] - mu0[ie.L];
        if (jump == 0.0)
          return;
        const double avg = 0.5 * (phi[ie.K] + phi[ie.L]);
        const int d = fes.u_scalar_dof(ie.K, a);
        r_u[2 * d] -= wN * ie.normal.x * avg * jump;
        r_u[2 * d + 1] -= wN * ie.normal.y * avg * jump;
      });
}

// d(c_h)/dphi with mu0 held fixed (momentum row, phase column).
inline Eigen::SparseMatrix<double>
assemble_c_h_jac_phi(const FeSpaces &fes, const Eigen::VectorXd &mu0) {
  std::vector<Eigen::Triplet<double>> t;
  detail::c_h_loop(
      fes,
      [&](int K, int a, double ix, double iy) {
        const int d = fes.u_scalar_dof(K, a);
        t.emplace_back(2 * d, K, -ix * mu0[K]);
        t.emplace_back(2 * d + 1, K, -iy * mu0[K]);
      },
      [&](const InteriorEdge &ie, int a, double wN) {
        const double jump = mu0[ie.K] - mu0[ie.L];
        if (jump == 0.0)
          return;
        const int d = fes.u_scalar_dof(ie.K, a);
        t.emplace_back(2 * d, ie.K, -wN * ie.normal.x * 0.5 * jump);
        t.emplace_back(2 * d, ie.L, -wN * ie.normal.x * 0.5 * jump);
        t.emplace_back(2 * d + 1, ie.K, -wN * ie.normal.y * 0.5 * jump);
        t.emplace_back(2 * d + 1, ie.L, -wN * ie.normal.y * 0.5 * jump);
      });
  Eigen::SparseMatrix<double> J(fes.n_u, fes.n_phi);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

// d(c_h)/dmu with phi held fixed; mu enters through its elementwise mean.
inline Eigen::SparseMatrix<double>
assemble_c_h_jac_mu(const FeSpaces &fes, const Eigen::VectorXd &phi) {
  const auto &m = *fes.mesh;
  std::vector<Eigen::Triplet<double>> t;
  detail::c_h_loop(
      fes,
      [&](int K, int a, double ix, double iy) {
        const int d = fes.u_scalar_dof(K, a);
        const auto &el = m.elements[static_cast<std::size_t>(K)];
        for (int i = 0; i < 3; ++i) {
          t.emplace_back(2 * d, el[i], -ix * phi[K] / 3.0);
          t.emplace_back(2 * d + 1, el[i], -iy * phi[K] / 3.0);
        }
      },
      [&](const InteriorEdge &ie, int a, double wN) {
        const double avg = 0.5 * (phi[ie.K] + phi[ie.L]);
        const int d = fes.u_scalar_dof(ie.K, a);
        const auto &elK = m.elements[static_cast<std::size_t>(ie.K)];
        const auto &elL = m.elements[static_cast<std::size_t>(ie.L)];
        for (int i = 0; i < 3; ++i) {
          t.emplace_back(2 * d, elK[i], -wN * ie.normal.x * avg / 3.0);
          t.emplace_back(2 * d, elL[i], wN * ie.normal.x * avg / 3.0);
          t.emplace_back(2 * d + 1, elK[i], -wN * ie.normal.y * avg / 3.0);
          t.emplace_back(2 * d + 1, elL[i], wN * ie.normal.y * avg / 3.0);
        }
      });
  Eigen::SparseMatrix<double> J(fes.n_u, fes.n_mu);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

// --- edge stabilization of the upwind transport ---
//
// s_h(u, phi, mu0, ubar) = -1/2 sum_e int_e (ubar.n) S(u.n) [phi][mu0]
// with S the (possibly smoothed) sign of the normal velocity. The smoothed
// version replaces sign(z) by z/(|z|+delta), which keeps the discrete energy
// law within an O(delta) defect and is differentiable for delta > 0.
inline double form_s_h_delta(const FeSpaces &fes, const Eigen::VectorXd &u,
                             const Eigen::VectorXd &phi, const Eigen::VectorXd &mu0,
                             const Eigen::VectorXd &ubar, double delta) {
  const auto &m = *fes.mesh;
  double total = 0.0;
  for (const auto &ie : m.interior_edges) {
    const double jj = (phi[ie.K] - phi[ie.L]) * (mu0[ie.K] - mu0[ie.L]);
    if (jj == 0.0)
      continue;
    double acc = 0.0;
    for (const auto &p : edge_points(m, ie)) {
      const double zb = fes.eval_u(ubar, ie.K, p.lK).dot(ie.normal);
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      acc += p.w * zb * smoothed_sign(z, delta);
    }
    total -= 0.5 * acc * jj;
  }
  return total;
}

inline void add_s_h_residual(const FeSpaces &fes, const Eigen::VectorXd &u,
                             const Eigen::VectorXd &phi, const Eigen::VectorXd &mu0,
                             double delta, Eigen::VectorXd &r_u) {
  const auto &m = *fes.mesh;
  for (const auto &ie : m.interior_edges) {
    const double jj = (phi[ie.K] - phi[ie.L]) * (mu0[ie.K] - mu0[ie.L]);
    if (jj == 0.0)
      continue;
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      const double f = -0.5 * p.w * smoothed_sign(z, delta) * jj;
      if (f == 0.0)
        continue;
      const P2Shape s = p2_shape(p.lK[0], p.lK[1], p.lK[2]);
      for (int a = 0; a < fes.u_nodes_per_elem; ++a) {
        if (s.N[a] == 0.0)
          continue;
        const int d = fes.u_scalar_dof(ie.K, a);
        r_u[2 * d] += f * s.N[a] * ie.normal.x;
        r_u[2 * d + 1] += f * s.N[a] * ie.normal.y;
      }
    }
  }
}

// Jacobian blocks of s_h with respect to (u, phi, mu).
struct ShJacobians {
  Eigen::SparseMatrix<double> d_u, d_phi, d_mu;
};

inline ShJacobians assemble_s_h_jacs(const FeSpaces &fes, const Eigen::VectorXd &u,
                                     const Eigen::VectorXd &phi,
                                     const Eigen::VectorXd &mu0, double delta) {
  const auto &m = *fes.mesh;
  std::vector<Eigen::Triplet<double>> tu, tp, tm;
  for (const auto &ie : m.interior_edges) {
    const double jphi = phi[ie.K] - phi[ie.L];
    const double jmu = mu0[ie.K] - mu0[ie.L];
    const auto &elK = m.elements[static_cast<std::size_t>(ie.K)];
    const auto &elL = m.elements[static_cast<std::size_t>(ie.L)];
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      const double S = smoothed_sign(z, delta);
      const double dS = smoothed_sign_deriv(z, delta);
      const P2Shape s = p2_shape(p.lK[0], p.lK[1], p.lK[2]);
      for (int a = 0; a < fes.u_nodes_per_elem; ++a) {
        if (s.N[a] == 0.0)
          continue;
        const int d = fes.u_scalar_dof(ie.K, a);
        const double bx = s.N[a] * ie.normal.x, by = s.N[a] * ie.normal.y;
        // wrt u: test shape (row) times derivative of S at trial shape (col)
        if (dS != 0.0 && jphi * jmu != 0.0) {
          for (int b = 0; b < fes.u_nodes_per_elem; ++b) {
            if (s.N[b] == 0.0)
              continue;
            const int db = fes.u_scalar_dof(ie.K, b);
            const double c = -0.5 * p.w * dS * jphi * jmu * s.N[a];
            tu.emplace_back(2 * d, 2 * db, c * ie.normal.x * s.N[b] * ie.normal.x);
            tu.emplace_back(2 * d, 2 * db + 1, c * ie.normal.x * s.N[b] * ie.normal.y);
            tu.emplace_back(2 * d + 1, 2 * db, c * ie.normal.y * s.N[b] * ie.normal.x);
            tu.emplace_back(2 * d + 1, 2 * db + 1, c * ie.normal.y * s.N[b] * ie.normal.y);
          }
        }
        if (S != 0.0) {
          if (jmu != 0.0) {
            const double cp = -0.5 * p.w * S * jmu;
            tp.emplace_back(2 * d, ie.K, cp * bx);
            tp.emplace_back(2 * d, ie.L, -cp * bx);
            tp.emplace_back(2 * d + 1, ie.K, cp * by);
            tp.emplace_back(2 * d + 1, ie.L, -cp * by);
          }
          if (jphi != 0.0) {
            const double cm = -0.5 * p.w * S * jphi / 3.0;
            for (int i = 0; i < 3; ++i) {
              tm.emplace_back(2 * d, elK[i], cm * bx);
              tm.emplace_back(2 * d, elL[i], -cm * bx);
              tm.emplace_back(2 * d + 1, elK[i], cm * by);
              tm.emplace_back(2 * d + 1, elL[i], -cm * by);
            }
          }
        }
      }
    }
  }
  ShJacobians J;
  J.d_u.resize(fes.n_u, fes.n_u);
  J.d_u.setFromTriplets(tu.begin(), tu.end());
  J.d_phi.resize(fes.n_u, fes.n_phi);
  J.d_phi.setFromTriplets(tp.begin(), tp.end());
  J.d_mu.resize(fes.n_u, fes.n_mu);
  J.d_mu.setFromTriplets(tm.begin(), tm.end());
  return J;
}

// --- kinetic-residual stabilization and explicit transport field ---

// rho_dif * M(phi0(x)) * Pi1(grad mu)(x); zero for matched densities or at
// pure phases by the degeneracy of the mobility.
inline Vec2 eval_J_h(const FeSpaces &fes, const Params &prm,
                     const Eigen::VectorXd &phi0_p1, const Eigen::VectorXd &gmu_x,
                     const Eigen::VectorXd &gmu_y, int K,
                     const std::array<double, 3> &l) {
  const double Mv = mobility(fes.eval_p1c(phi0_p1, K, l));
  return Vec2{fes.eval_p1c(gmu_x, K, l), fes.eval_p1c(gmu_y, K, l)} * (prm.rho_dif() * Mv);
}

// rho(phi0(x)) u0(x) - J_h(x): the explicit transporting velocity of the
// momentum convection and of the kinetic-residual stabilization.
inline Vec2 eval_transport(const FeSpaces &fes, const Params &prm,
                           const Eigen::VectorXd &u0, const Eigen::VectorXd &phi0_p1,
                           const Eigen::VectorXd &gmu_x, const Eigen::VectorXd &gmu_y,
                           int K, const std::array<double, 3> &l) {
  const double rho = prm.density(fes.eval_p1c(phi0_p1, K, l));
  const Vec2 J = eval_J_h(fes, prm, phi0_p1, gmu_x, gmu_y, K, l);
  return fes.eval_u(u0, K, l) * rho - J;
}

// t_h(u1,u0,phi1,phi0,mu,ubar) =
//   1/2 { (delta_t rho(phi1), u1.ubar) - (rho(phi0)u0 - J_h, grad(u1.ubar)) }
inline double form_t_h(const FeSpaces &fes, const Params &prm,
                       const Eigen::VectorXd &u1, const Eigen::VectorXd &u0,
                       const Eigen::VectorXd &phi1_p1, const Eigen::VectorXd &phi0_p1,
                       const Eigen::VectorXd &gmu_x, const Eigen::VectorXd &gmu_y,
                       const Eigen::VectorXd &ubar) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  double total = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const double drho =
          prm.rho_dif() * (fes.eval_p1c(phi1_p1, K, l) - fes.eval_p1c(phi0_p1, K, l)) / prm.dt;
      const Vec2 v1 = fes.eval_u(u1, K, l), vb = fes.eval_u(ubar, K, l);
      const auto G1 = fes.grad_u(u1, K, l);
      const auto Gb = fes.grad_u(ubar, K, l);
      // grad(u1 . ubar)
      const Vec2 gdot{G1[0][0] * vb.x + G1[1][0] * vb.y + Gb[0][0] * v1.x + Gb[1][0] * v1.y,
                      G1[0][1] * vb.x + G1[1][1] * vb.y + Gb[0][1] * v1.x + Gb[1][1] * v1.y};
      const Vec2 tr = eval_transport(fes, prm, u0, phi0_p1, gmu_x, gmu_y, K, l);
      total += A * qp.w * 0.5 * (drho * v1.dot(vb) - tr.dot(gdot));
    }
  }
  return total;
}

// --- volume bilinear forms of the momentum and continuity rows ---

inline double form_viscous(const FeSpaces &fes, const Eigen::VectorXd &u,
                           const Eigen::VectorXd &ubar, double eta) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  double total = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const auto G = fes.grad_u(u, K, l);
      const auto Gb = fes.grad_u(ubar, K, l);
      double frob = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          frob += 0.5 * (G[i][j] + G[j][i]) * 0.5 * (Gb[i][j] + Gb[j][i]);
      total += A * qp.w * 2.0 * eta * frob;
    }
  }
  return total;
}

inline double form_divergence(const FeSpaces &fes, const Eigen::VectorXd &u,
                              const Eigen::VectorXd &pbar) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  double total = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const auto G = fes.grad_u(u, K, l);
      total += A * qp.w * (G[0][0] + G[1][1]) * fes.eval_pressure(pbar, K, l);
    }
  }
  return total;
}

inline double form_pressure(const FeSpaces &fes, const Eigen::VectorXd &p,
                            const Eigen::VectorXd &ubar) {
  return -form_divergence(fes, ubar, p);
}

// + int rho(phi1) g . ubar  (implicit gravity, added to the momentum residual)
inline double form_gravity(const FeSpaces &fes, const Params &prm,
                           const Eigen::VectorXd &phi1_p1, const Eigen::VectorXd &ubar) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  double total = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const double rho = prm.density(fes.eval_p1c(phi1_p1, K, l));
      total += A * qp.w * rho * prm.gravity.dot(fes.eval_u(ubar, K, l));
    }
  }
  return total;
}

// --- assembly of the step-constant matrices ---

namespace detail {
// Generic velocity-velocity volume assembly from a per-quadrature-point
// kernel k(a, b) built out of shape values and gradients.
template <typename Kernel>
inline Eigen::SparseMatrix<double> assemble_uu(const FeSpaces &fes, Kernel &&kernel) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  const int nn = fes.u_nodes_per_elem;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(fes.nel) * nn * nn * 4);
  std::vector<double> loc(static_cast<std::size_t>(2 * nn) * (2 * nn));
  for (int K = 0; K < fes.nel; ++K) {
    std::fill(loc.begin(), loc.end(), 0.0);
    const double A = m.areas[static_cast<std::size_t>(K)];
    const auto &gl = m.grad_lambda[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
      std::array<Vec2, 7> gN;
      for (int a = 0; a < nn; ++a)
        gN[a] = Vec2{s.dNdl[a][0] * gl[0].x + s.dNdl[a][1] * gl[1].x + s.dNdl[a][2] * gl[2].x,
                     s.dNdl[a][0] * gl[0].y + s.dNdl[a][1] * gl[1].y + s.dNdl[a][2] * gl[2].y};
      kernel(K, qp, s, gN, A, loc);
    }
    for (int a = 0; a < 2 * nn; ++a) {
      const int ra = fes.u_dof(K, a / 2, a % 2);
      for (int b = 0; b < 2 * nn; ++b) {
        const double v = loc[static_cast<std::size_t>(a) * 2 * nn + b];
        if (v != 0.0)
          t.emplace_back(ra, fes.u_dof(K, b / 2, b % 2), v);
      }
    }
  }
  Eigen::SparseMatrix<double> M(fes.n_u, fes.n_u);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}
} // namespace detail

inline Eigen::SparseMatrix<double> assemble_viscous(const FeSpaces &fes, double eta) {
  const int nn = fes.u_nodes_per_elem;
  return detail::assemble_uu(fes, [&](int, const TriQuadPoint &qp, const P2Shape &,
                                      const std::array<Vec2, 7> &gN, double A,
                                      std::vector<double> &loc) {
    // 2 eta D(u):D(ubar); for component pairs this contracts symmetrized
    // gradients of the two scalar shapes.
    for (int a = 0; a < nn; ++a)
      for (int b = 0; b < nn; ++b) {
        const double gxgx = gN[a].x * gN[b].x, gygy = gN[a].y * gN[b].y;
        const double gxgy = gN[a].x * gN[b].y, gygx = gN[a].y * gN[b].x;
        const double w = 2.0 * eta * A * qp.w;
        // (row comp i, col comp j) entries from D(u):D(ubar)
        const double xx = w * (gxgx + 0.5 * gygy);
        const double yy = w * (gygy + 0.5 * gxgx);
        const double xy = w * 0.5 * gygx; // row x, col y: D contraction cross term
        const double yx = w * 0.5 * gxgy;
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b] += xx;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b + 1] += yy;
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b + 1] += xy;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b] += yx;
      }
  });
}

// Mass matrix weighted by rho(phi_old) pointwise.
inline Eigen::SparseMatrix<double>
assemble_rho_mass(const FeSpaces &fes, const Params &prm, const Eigen::VectorXd &phi_p1) {
  const int nn = fes.u_nodes_per_elem;
  return detail::assemble_uu(fes, [&](int K, const TriQuadPoint &qp, const P2Shape &s,
                                      const std::array<Vec2, 7> &, double A,
                                      std::vector<double> &loc) {
    const double rho = prm.density(fes.eval_p1c(phi_p1, K, {qp.l1, qp.l2, qp.l3}));
    for (int a = 0; a < nn; ++a)
      for (int b = 0; b < nn; ++b) {
        const double v = rho * A * qp.w * s.N[a] * s.N[b];
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b] += v;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b + 1] += v;
      }
  });
}

// Plain vector mass weighted by a constant (used for the t_h phase coupling).
inline Eigen::SparseMatrix<double>
assemble_scaled_mass_p1weight(const FeSpaces &fes, const Eigen::VectorXd &w_p1,
                              double scale) {
  const int nn = fes.u_nodes_per_elem;
  return detail::assemble_uu(fes, [&](int K, const TriQuadPoint &qp, const P2Shape &s,
                                      const std::array<Vec2, 7> &, double A,
                                      std::vector<double> &loc) {
    const double w = scale * fes.eval_p1c(w_p1, K, {qp.l1, qp.l2, qp.l3});
    if (w == 0.0)
      return;
    for (int a = 0; a < nn; ++a)
      for (int b = 0; b < nn; ++b) {
        const double v = w * A * qp.w * s.N[a] * s.N[b];
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b] += v;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b + 1] += v;
      }
  });
}

// Explicit convection ((T . grad) u, ubar) with transporting field T frozen.
inline Eigen::SparseMatrix<double>
assemble_convection(const FeSpaces &fes, const Params &prm, const Eigen::VectorXd &u0,
                    const Eigen::VectorXd &phi0_p1, const Eigen::VectorXd &gmu_x,
                    const Eigen::VectorXd &gmu_y) {
  const int nn = fes.u_nodes_per_elem;
  return detail::assemble_uu(fes, [&](int K, const TriQuadPoint &qp, const P2Shape &s,
                                      const std::array<Vec2, 7> &gN, double A,
                                      std::vector<double> &loc) {
    const Vec2 T = eval_transport(fes, prm, u0, phi0_p1, gmu_x, gmu_y, K,
                                  {qp.l1, qp.l2, qp.l3});
    for (int b = 0; b < nn; ++b) {
      const double adv = T.dot(gN[b]); // T . grad N_b
      if (adv == 0.0)
        continue;
      for (int a = 0; a < nn; ++a) {
        const double v = A * qp.w * adv * s.N[a];
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b] += v;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b + 1] += v;
      }
    }
  });
}

// The transport part of t_h: -1/2 (T, grad(u . ubar)) as a u-u matrix.
inline Eigen::SparseMatrix<double>
assemble_t_h_transport(const FeSpaces &fes, const Params &prm, const Eigen::VectorXd &u0,
                       const Eigen::VectorXd &phi0_p1, const Eigen::VectorXd &gmu_x,
                       const Eigen::VectorXd &gmu_y) {
  const int nn = fes.u_nodes_per_elem;
  return detail::assemble_uu(fes, [&](int K, const TriQuadPoint &qp, const P2Shape &s,
                                      const std::array<Vec2, 7> &gN, double A,
                                      std::vector<double> &loc) {
    const Vec2 T = eval_transport(fes, prm, u0, phi0_p1, gmu_x, gmu_y, K,
                                  {qp.l1, qp.l2, qp.l3});
    // grad(u.ubar) = sum_c (ubar_c grad u_c + u_c grad ubar_c); same-component
    // coupling only.
    for (int a = 0; a < nn; ++a)
      for (int b = 0; b < nn; ++b) {
        const double v = -0.5 * A * qp.w * (T.dot(gN[b]) * s.N[a] + T.dot(gN[a]) * s.N[b]);
        loc[static_cast<std::size_t>(2 * a) * 2 * nn + 2 * b] += v;
        loc[static_cast<std::size_t>(2 * a + 1) * 2 * nn + 2 * b + 1] += v;
      }
  });
}

// Momentum-row coupling to P1 vertex values of the phase regularization:
// entries int_K c(x) lambda_v (w . N_a e_comp) for w(x) either u (t_h density
// part) or the gravity vector.
inline Eigen::SparseMatrix<double>
assemble_u_vertex_coupling(const FeSpaces &fes, const Eigen::VectorXd &u_weight,
                           bool use_velocity, Vec2 gvec, double scale) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  const int nn = fes.u_nodes_per_elem;
  std::vector<Eigen::Triplet<double>> t;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
      const std::array<double, 3> lam{qp.l1, qp.l2, qp.l3};
      const Vec2 w = use_velocity ? fes.eval_u(u_weight, K, lam) : gvec;
      for (int a = 0; a < nn; ++a) {
        if (s.N[a] == 0.0)
          continue;
        const int d = fes.u_scalar_dof(K, a);
        for (int i = 0; i < 3; ++i) {
          const double base = scale * A * qp.w * s.N[a] * lam[i];
          t.emplace_back(2 * d, el[i], base * w.x);
          t.emplace_back(2 * d + 1, el[i], base * w.y);
        }
      }
    }
  }
  Eigen::SparseMatrix<double> J(fes.n_u, fes.n_mu);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

// B with B(p_row, u_col) = (div u, pbar).
inline Eigen::SparseMatrix<double> assemble_divergence(const FeSpaces &fes) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  const int nn = fes.u_nodes_per_elem;
  const int np = fes.p_dofs_per_elem();
  std::vector<Eigen::Triplet<double>> t;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    const auto &gl = m.grad_lambda[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
      const std::array<double, 3> lam{qp.l1, qp.l2, qp.l3};
      for (int b = 0; b < nn; ++b) {
        const Vec2 gN{s.dNdl[b][0] * gl[0].x + s.dNdl[b][1] * gl[1].x + s.dNdl[b][2] * gl[2].x,
                      s.dNdl[b][0] * gl[0].y + s.dNdl[b][1] * gl[1].y + s.dNdl[b][2] * gl[2].y};
        const int d = fes.u_scalar_dof(K, b);
        for (int a = 0; a < np; ++a) {
          const double pv = fes.pressure_p1 ? lam[a] : 1.0;
          t.emplace_back(fes.p_dof(K, a), 2 * d, A * qp.w * gN.x * pv);
          t.emplace_back(fes.p_dof(K, a), 2 * d + 1, A * qp.w * gN.y * pv);
        }
      }
    }
  }
  Eigen::SparseMatrix<double> B(fes.n_p, fes.n_u);
  B.setFromTriplets(t.begin(), t.end());
  return B;
}

inline Eigen::SparseMatrix<double> assemble_pressure_mass(const FeSpaces &fes) {
  const auto &m = *fes.mesh;
  std::vector<Eigen::Triplet<double>> t;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    if (fes.pressure_p1) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          t.emplace_back(3 * K + i, 3 * K + j, A * (i == j ? 1.0 / 6.0 : 1.0 / 12.0));
    } else {
      t.emplace_back(K, K, A);
    }
  }
  Eigen::SparseMatrix<double> M(fes.n_p, fes.n_p);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

} // namespace chns

#endif
