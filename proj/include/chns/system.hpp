#ifndef CHNS_SYSTEM_HPP
#define CHNS_SYSTEM_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "chns/forms.hpp"

namespace chns {

// One time level, with the derived fields the scheme reuses: the lumped P1
// regularization of phi and the P1 projection of the broken gradient of mu.
struct State {
  Field u, p, phi, mu;
  Field phi_h;          // lumped projection of phi
  Field gmu_x, gmu_y;   // P1 projection of grad mu

  void refresh_caches(const FeSpaces &fes) {
    phi_h = project_P1_lumped(fes, phi);
    std::vector<Vec2> g(static_cast<std::size_t>(fes.nel));
    for (int K = 0; K < fes.nel; ++K)
      g[static_cast<std::size_t>(K)] = fes.grad_p1c(mu.coeffs, K);
    auto proj = project_P1_vector(fes, g);
    gmu_x = proj[0];
    gmu_y = proj[1];
  }
};

// Scalars recorded after every accepted step.
struct DiagnosticsRecord {
  double t = 0.0;
  double mass = 0.0;
  double phi_min = 0.0, phi_max = 0.0;
  double phi_h_min = 0.0, phi_h_max = 0.0;
  double E = 0.0, E_kin = 0.0, E_grad = 0.0, E_pot = 0.0;
  double defect = 0.0;  // regularized energy-law residual (<= 0 up to solver tol)
  double lemma_cancel = 0.0; // upwind/centered/stabilization cancellation residual
  int newton_iters = 0;
  double xi_p_inf = 0.0;
};

// Flat unknown layout (u with boundary dofs eliminated, then p, phi, mu).
struct BlockLayout {
  int n_u_red = 0, n_p = 0, n_phi = 0, n_mu = 0;
  int off_u = 0, off_p = 0, off_phi = 0, off_mu = 0, total = 0;
  std::vector<int> u_red_of_full; // -1 for constrained dofs
  std::vector<int> u_full_of_red;

  explicit BlockLayout(const FeSpaces &fes) {
    u_red_of_full.assign(static_cast<std::size_t>(fes.n_u), -1);
    for (int d = 0; d < fes.n_u_scalar; ++d) {
      if (fes.u_scalar_boundary[static_cast<std::size_t>(d)])
        continue;
      for (int c = 0; c < 2; ++c) {
        u_red_of_full[static_cast<std::size_t>(2 * d + c)] =
            static_cast<int>(u_full_of_red.size());
        u_full_of_red.push_back(2 * d + c);
      }
    }
    n_u_red = static_cast<int>(u_full_of_red.size());
    n_p = fes.n_p;
    n_phi = fes.n_phi;
    n_mu = fes.n_mu;
    off_u = 0;
    off_p = n_u_red;
    off_phi = off_p + n_p;
    off_mu = off_phi + n_phi;
    total = off_mu + n_mu;
  }

  Eigen::VectorXd pack(const State &s) const {
    Eigen::VectorXd x(total);
    for (int r = 0; r < n_u_red; ++r)
      x[off_u + r] = s.u.coeffs[u_full_of_red[static_cast<std::size_t>(r)]];
    x.segment(off_p, n_p) = s.p.coeffs;
    x.segment(off_phi, n_phi) = s.phi.coeffs;
    x.segment(off_mu, n_mu) = s.mu.coeffs;
    return x;
  }

  void unpack(const Eigen::VectorXd &x, Eigen::VectorXd &u_full, Eigen::VectorXd &p,
              Eigen::VectorXd &phi, Eigen::VectorXd &mu) const {
    u_full.setZero();
    for (int r = 0; r < n_u_red; ++r)
      u_full[u_full_of_red[static_cast<std::size_t>(r)]] = x[off_u + r];
    p = x.segment(off_p, n_p);
    phi = x.segment(off_phi, n_phi);
    mu = x.segment(off_mu, n_mu);
  }
};

// Operators that depend only on mesh, spaces and parameters.
struct RunOperators {
  Eigen::SparseMatrix<double> A_visc;   // n_u x n_u
  Eigen::SparseMatrix<double> B;        // n_p x n_u, (div u, pbar)
  Eigen::SparseMatrix<double> BT;       // n_u x n_p
  Eigen::SparseMatrix<double> M_p;      // n_p x n_p
  Eigen::SparseMatrix<double> A_mu_phi; // n_mu x n_phi
  Eigen::SparseMatrix<double> G_uphi;   // gravity coupling, n_u x n_phi
  Eigen::VectorXd g_const;              // rho_avg gravity load
  Eigen::VectorXd cell_area;            // |K|

  RunOperators(const FeSpaces &fes, const Params &prm) {
    A_visc = assemble_viscous(fes, prm.eta);
    B = assemble_divergence(fes);
    BT = B.transpose();
    M_p = assemble_pressure_mass(fes);
    A_mu_phi = prm.lambda * prm.eps * (fes.stiff_P1 * fes.lump_map).eval() +
               (2.0 * prm.lambda / prm.eps) * (fes.mass_P1 * fes.lump_map).eval();
    cell_area.resize(fes.nel);
    for (int K = 0; K < fes.nel; ++K)
      cell_area[K] = fes.mesh->areas[static_cast<std::size_t>(K)];
    if (prm.gravity_on()) {
      const Eigen::SparseMatrix<double> Gv = assemble_u_vertex_coupling(
          fes, Eigen::VectorXd(), false, prm.gravity, prm.rho_dif());
      G_uphi = (Gv * fes.lump_map).eval();
      // rho_avg part: integral of g . ubar
      g_const = Eigen::VectorXd::Zero(fes.n_u);
      const auto &q = tri_quadrature();
      for (int K = 0; K < fes.nel; ++K) {
        const double A = fes.mesh->areas[static_cast<std::size_t>(K)];
        for (const auto &qp : q) {
          const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
          for (int a = 0; a < fes.u_nodes_per_elem; ++a) {
            const int d = fes.u_scalar_dof(K, a);
            g_const[2 * d] += prm.rho_avg() * A * qp.w * s.N[a] * prm.gravity.x;
            g_const[2 * d + 1] += prm.rho_avg() * A * qp.w * s.N[a] * prm.gravity.y;
          }
        }
      }
    }
  }
};

// Chemical potential consistent with the potential row for given current and
// previous lumped phase fields (diagonal solve through the lumped product).
inline Field solve_mu_from_phi(const FeSpaces &fes, const Params &prm,
                               const Eigen::VectorXd &phi_h_new,
                               const Eigen::VectorXd &phi_h_old) {
  const auto &m = *fes.mesh;
  const auto &q = tri_quadrature();
  Eigen::VectorXd rhs = prm.lambda * prm.eps * (fes.stiff_P1 * phi_h_new);
  for (int K = 0; K < fes.nel; ++K) {
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const double fv = potential_f(fes.eval_p1c(phi_h_new, K, l),
                                    fes.eval_p1c(phi_h_old, K, l));
      const double w = (prm.lambda / prm.eps) * A * qp.w * fv;
      rhs[el[0]] += w * l[0];
      rhs[el[1]] += w * l[1];
      rhs[el[2]] += w * l[2];
    }
  }
  return Field{SpaceKind::P1Cont, rhs.cwiseQuotient(fes.lumped_mass)};
}

// Nonlinear residual and analytic Jacobian of one implicit step.
class StepSystem {
public:
  StepSystem(const FeSpaces &fes, const RunOperators &ops, const Params &prm,
             const State &old)
      : fes_(fes), ops_(ops), prm_(prm), old_(old), layout_(fes) {
    M_rho_old_ = assemble_rho_mass(fes_, prm_, old_.phi_h.coeffs);
    C_conv_ = assemble_convection(fes_, prm_, old_.u.coeffs, old_.phi_h.coeffs,
                                  old_.gmu_x.coeffs, old_.gmu_y.coeffs);
    T_transport_ = assemble_t_h_transport(fes_, prm_, old_.u.coeffs, old_.phi_h.coeffs,
                                          old_.gmu_x.coeffs, old_.gmu_y.coeffs);
    build_mu_explicit();
    build_base_triplets();
  }

  const BlockLayout &layout() const { return layout_; }
  const FeSpaces &spaces() const { return fes_; }
  const Params &params() const { return prm_; }
  const State &old_state() const { return old_; }

  Eigen::VectorXd residual(const Eigen::VectorXd &x) const {
    Eigen::VectorXd u(fes_.n_u), p(fes_.n_p), phi(fes_.n_phi), mu(fes_.n_mu);
    layout_.unpack(x, u, p, phi, mu);
    return assemble_residual(u, p, phi, mu);
  }

  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd &x) const {
    Eigen::VectorXd u(fes_.n_u), p(fes_.n_p), phi(fes_.n_phi), mu(fes_.n_mu);
    layout_.unpack(x, u, p, phi, mu);
    return assemble_jacobian(u, p, phi, mu);
  }

  void eval(const Eigen::VectorXd &x, Eigen::VectorXd &R,
            Eigen::SparseMatrix<double> &J) const {
    Eigen::VectorXd u(fes_.n_u), p(fes_.n_p), phi(fes_.n_phi), mu(fes_.n_mu);
    layout_.unpack(x, u, p, phi, mu);
    R = assemble_residual(u, p, phi, mu);
    J = assemble_jacobian(u, p, phi, mu);
  }

  State state_from(const Eigen::VectorXd &x) const {
    State s;
    s.u = Field{old_.u.kind, Eigen::VectorXd::Zero(fes_.n_u)};
    s.p = Field{old_.p.kind, Eigen::VectorXd::Zero(fes_.n_p)};
    s.phi = Field{SpaceKind::P0Disc, Eigen::VectorXd::Zero(fes_.n_phi)};
    s.mu = Field{SpaceKind::P1Cont, Eigen::VectorXd::Zero(fes_.n_mu)};
    layout_.unpack(x, s.u.coeffs, s.p.coeffs, s.phi.coeffs, s.mu.coeffs);
    s.refresh_caches(fes_);
    return s;
  }

private:
  const FeSpaces &fes_;
  const RunOperators &ops_;
  const Params &prm_;
  const State &old_;
  BlockLayout layout_;

  Eigen::SparseMatrix<double> M_rho_old_, C_conv_, T_transport_;
  Eigen::VectorXd f_mu_explicit_;
  std::vector<Eigen::Triplet<double>> base_triplets_;

  void build_mu_explicit() {
    // (lambda/eps) (Fe'(phi_h^m), psi_i): the explicit half of the convex split.
    const auto &m = *fes_.mesh;
    const auto &q = tri_quadrature();
    f_mu_explicit_ = Eigen::VectorXd::Zero(fes_.n_mu);
    for (int K = 0; K < fes_.nel; ++K) {
      const auto &el = m.elements[static_cast<std::size_t>(K)];
      const double A = m.areas[static_cast<std::size_t>(K)];
      for (const auto &qp : q) {
        const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
        const double z = fes_.eval_p1c(old_.phi_h.coeffs, K, l);
        const double w = (prm_.lambda / prm_.eps) * A * qp.w * (z * z * z - 3.0 * z);
        f_mu_explicit_[el[0]] += w * l[0];
        f_mu_explicit_[el[1]] += w * l[1];
        f_mu_explicit_[el[2]] += w * l[2];
      }
    }
  }

  enum Block { BU, BP, BPHI, BMU };

  int row_of(Block b, int i) const {
    switch (b) {
    case BU: return layout_.u_red_of_full[static_cast<std::size_t>(i)];
    case BP: return layout_.off_p + i;
    case BPHI: return layout_.off_phi + i;
    default: return layout_.off_mu + i;
    }
  }

  void emit(std::vector<Eigen::Triplet<double>> &out,
            const Eigen::SparseMatrix<double> &M, Block rb, Block cb,
            double scale = 1.0) const {
    for (int k = 0; k < M.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) {
        const int r = row_of(rb, static_cast<int>(it.row()));
        const int c = row_of(cb, static_cast<int>(it.col()));
        if (r >= 0 && c >= 0)
          out.emplace_back(r, c, scale * it.value());
      }
  }

  void build_base_triplets() {
    base_triplets_.clear();
    emit(base_triplets_, M_rho_old_, BU, BU, 1.0 / prm_.dt);
    emit(base_triplets_, C_conv_, BU, BU);
    emit(base_triplets_, ops_.A_visc, BU, BU);
    emit(base_triplets_, T_transport_, BU, BU);
    emit(base_triplets_, ops_.BT, BU, BP, -1.0);
    emit(base_triplets_, ops_.B, BP, BU);
    emit(base_triplets_, ops_.M_p, BP, BP, prm_.xi);
    for (int K = 0; K < fes_.n_phi; ++K)
      base_triplets_.emplace_back(layout_.off_phi + K, layout_.off_phi + K,
                                  ops_.cell_area[K] / prm_.dt);
    emit(base_triplets_, ops_.A_mu_phi, BMU, BPHI);
    for (int i = 0; i < fes_.n_mu; ++i)
      base_triplets_.emplace_back(layout_.off_mu + i, layout_.off_mu + i,
                                  -fes_.lumped_mass[i]);
    if (prm_.gravity_on())
      emit(base_triplets_, ops_.G_uphi, BU, BPHI);
  }

  Eigen::VectorXd assemble_residual(const Eigen::VectorXd &u, const Eigen::VectorXd &p,
                                    const Eigen::VectorXd &phi,
                                    const Eigen::VectorXd &mu) const {
    const Eigen::VectorXd phi_h = fes_.lump_map * phi;
    Eigen::VectorXd mu0(fes_.n_phi);
    for (int K = 0; K < fes_.n_phi; ++K)
      mu0[K] = cell_mean_p1(fes_, mu, K);

    Eigen::VectorXd r_u = M_rho_old_ * ((u - old_.u.coeffs) / prm_.dt);
    r_u += C_conv_ * u;
    r_u += ops_.A_visc * u;
    r_u -= ops_.BT * p;
    r_u += T_transport_ * u;
    add_c_h_residual(fes_, phi, mu0, r_u);
    add_s_h_residual(fes_, u, phi, mu0, prm_.delta, r_u);
    add_t_h_density_residual(u, phi_h, r_u);
    if (prm_.gravity_on()) {
      r_u += ops_.g_const;
      r_u += ops_.G_uphi * phi;
    }

    Eigen::VectorXd r_p = ops_.B * u + prm_.xi * (ops_.M_p * p);

    Eigen::VectorXd r_phi =
        (ops_.cell_area.array() * (phi - old_.phi.coeffs).array() / prm_.dt).matrix();
    r_phi += assemble_a_upw_matrix(fes_, u) * phi;
    add_b_upw_residual(fes_, mu, phi, r_phi);

    Eigen::VectorXd r_mu = ops_.A_mu_phi * phi + f_mu_explicit_;
    r_mu -= (fes_.lumped_mass.array() * mu.array()).matrix();

    Eigen::VectorXd R = Eigen::VectorXd::Zero(layout_.total);
    for (int r = 0; r < layout_.n_u_red; ++r)
      R[layout_.off_u + r] = r_u[layout_.u_full_of_red[static_cast<std::size_t>(r)]];
    R.segment(layout_.off_p, layout_.n_p) = r_p;
    R.segment(layout_.off_phi, layout_.n_phi) = r_phi;
    R.segment(layout_.off_mu, layout_.n_mu) = r_mu;
    return R;
  }

  // 1/2 rho_dif/dt (phi_h - phi_h^m, u . ubar)
  void add_t_h_density_residual(const Eigen::VectorXd &u, const Eigen::VectorXd &phi_h,
                                Eigen::VectorXd &r_u) const {
    const auto &m = *fes_.mesh;
    const auto &q = tri_quadrature();
    const double scale = 0.5 * prm_.rho_dif() / prm_.dt;
    for (int K = 0; K < fes_.nel; ++K) {
      const double A = m.areas[static_cast<std::size_t>(K)];
      for (const auto &qp : q) {
        const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
        const double w = scale *
                         (fes_.eval_p1c(phi_h, K, l) - fes_.eval_p1c(old_.phi_h.coeffs, K, l));
        if (w == 0.0)
          continue;
        const Vec2 uv = fes_.eval_u(u, K, l);
        const P2Shape s = p2_shape(qp.l1, qp.l2, qp.l3);
        for (int a = 0; a < fes_.u_nodes_per_elem; ++a) {
          const int d = fes_.u_scalar_dof(K, a);
          r_u[2 * d] += A * qp.w * w * uv.x * s.N[a];
          r_u[2 * d + 1] += A * qp.w * w * uv.y * s.N[a];
        }
      }
    }
  }

  Eigen::SparseMatrix<double> assemble_jacobian(const Eigen::VectorXd &u,
                                                const Eigen::VectorXd &p,
                                                const Eigen::VectorXd &phi,
                                                const Eigen::VectorXd &mu) const {
    (void)p;
    const Eigen::VectorXd phi_h = fes_.lump_map * phi;
    Eigen::VectorXd mu0(fes_.n_phi);
    for (int K = 0; K < fes_.n_phi; ++K)
      mu0[K] = cell_mean_p1(fes_, mu, K);

    std::vector<Eigen::Triplet<double>> t = base_triplets_;

    // phase row
    emit(t, assemble_a_upw_matrix(fes_, u), BPHI, BPHI);
    emit(t, assemble_a_upw_jac_u(fes_, u, phi), BPHI, BU);
    {
      auto [Jp, Jm] = assemble_b_upw_jacs(fes_, mu, phi);
      emit(t, Jp, BPHI, BPHI);
      emit(t, Jm, BPHI, BMU);
    }

    // momentum row couplings
    emit(t, assemble_c_h_jac_phi(fes_, mu0), BU, BPHI);
    emit(t, assemble_c_h_jac_mu(fes_, phi), BU, BMU);
    {
      const ShJacobians sh = assemble_s_h_jacs(fes_, u, phi, mu0, prm_.delta);
      emit(t, sh.d_u, BU, BU);
      emit(t, sh.d_phi, BU, BPHI);
      emit(t, sh.d_mu, BU, BMU);
    }
    {
      Eigen::VectorXd dphi_h = phi_h - old_.phi_h.coeffs;
      emit(t, assemble_scaled_mass_p1weight(fes_, dphi_h, 0.5 * prm_.rho_dif() / prm_.dt),
           BU, BU);
      const Eigen::SparseMatrix<double> Vc = assemble_u_vertex_coupling(
          fes_, u, true, Vec2{0, 0}, 0.5 * prm_.rho_dif() / prm_.dt);
      emit(t, Eigen::SparseMatrix<double>((Vc * fes_.lump_map).eval()), BU, BPHI);
    }

    Eigen::SparseMatrix<double> J(layout_.total, layout_.total);
    J.setFromTriplets(t.begin(), t.end());
    return J;
  }
};

// --- diagnostics ---

inline double phase_mass(const FeSpaces &fes, const Eigen::VectorXd &phi) {
  double m = 0.0;
  for (int K = 0; K < fes.nel; ++K)
    m += fes.mesh->areas[static_cast<std::size_t>(K)] * phi[K];
  return m;
}

inline double energy_kinetic(const FeSpaces &fes, const Params &prm,
                             const Eigen::VectorXd &u, const Eigen::VectorXd &phi_h) {
  const auto &q = tri_quadrature();
  double E = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = fes.mesh->areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const Vec2 uv = fes.eval_u(u, K, l);
      E += A * qp.w * 0.5 * prm.density(fes.eval_p1c(phi_h, K, l)) * uv.dot(uv);
    }
  }
  return E;
}

inline double energy_gradient(const FeSpaces &fes, const Params &prm,
                              const Eigen::VectorXd &phi_h) {
  double E = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const Vec2 g = fes.grad_p1c(phi_h, K);
    E += fes.mesh->areas[static_cast<std::size_t>(K)] * g.dot(g);
  }
  return 0.5 * prm.lambda * prm.eps * E;
}

inline double energy_potential(const FeSpaces &fes, const Params &prm,
                               const Eigen::VectorXd &phi_h) {
  const auto &q = tri_quadrature();
  double E = 0.0;
  for (int K = 0; K < fes.nel; ++K) {
    const double A = fes.mesh->areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q)
      E += A * qp.w * potential_F(fes.eval_p1c(phi_h, K, {qp.l1, qp.l2, qp.l3}));
  }
  return (prm.lambda / prm.eps) * E;
}

inline double energy_total(const FeSpaces &fes, const Params &prm, const State &s) {
  return energy_kinetic(fes, prm, s.u.coeffs, s.phi_h.coeffs) +
         energy_gradient(fes, prm, s.phi_h.coeffs) +
         energy_potential(fes, prm, s.phi_h.coeffs);
}

// delta-weighted edge term of the regularized energy law.
inline double form_s_h_defect_term(const FeSpaces &fes, const Eigen::VectorXd &u,
                                   const Eigen::VectorXd &phi, const Eigen::VectorXd &mu0,
                                   double delta) {
  const auto &m = *fes.mesh;
  double total = 0.0;
  for (const auto &ie : m.interior_edges) {
    const double jj = (mu0[ie.K] - mu0[ie.L]) * (phi[ie.K] - phi[ie.L]);
    if (jj == 0.0)
      continue;
    double acc = 0.0;
    for (const auto &p : edge_points(m, ie)) {
      const double z = fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
      acc += p.w * std::abs(z) / (std::abs(z) + delta);
    }
    total += acc * jj;
  }
  return total;
}

// Worst elementwise boundary flux  max_K | sum_{e in dK} int_e u.n |
// (the discrete local incompressibility of the solved velocity).
inline double local_incompressibility_defect(const FeSpaces &fes,
                                             const Eigen::VectorXd &u) {
  const auto &m = *fes.mesh;
  Eigen::VectorXd flux = Eigen::VectorXd::Zero(fes.nel);
  for (const auto &ie : m.interior_edges) {
    double f = 0.0;
    for (const auto &p : edge_points(m, ie))
      f += p.w * fes.eval_u(u, ie.K, p.lK).dot(ie.normal);
    flux[ie.K] += f;
    flux[ie.L] -= f;
  }
  // boundary edges carry no flux: u = 0 on the boundary
  return flux.cwiseAbs().maxCoeff();
}

inline DiagnosticsRecord diagnostics(const FeSpaces &fes, const Params &prm,
                                     const State &s_new, const State &s_old) {
  DiagnosticsRecord d;
  d.mass = phase_mass(fes, s_new.phi.coeffs);
  d.phi_min = s_new.phi.coeffs.minCoeff();
  d.phi_max = s_new.phi.coeffs.maxCoeff();
  d.phi_h_min = s_new.phi_h.coeffs.minCoeff();
  d.phi_h_max = s_new.phi_h.coeffs.maxCoeff();
  d.E_kin = energy_kinetic(fes, prm, s_new.u.coeffs, s_new.phi_h.coeffs);
  d.E_grad = energy_gradient(fes, prm, s_new.phi_h.coeffs);
  d.E_pot = energy_potential(fes, prm, s_new.phi_h.coeffs);
  d.E = d.E_kin + d.E_grad + d.E_pot;

  Eigen::VectorXd mu0(fes.n_phi);
  for (int K = 0; K < fes.n_phi; ++K)
    mu0[K] = cell_mean_p1(fes, s_new.mu.coeffs, K);

  const double E_old = energy_total(fes, prm, s_old);
  d.defect = (d.E - E_old) / prm.dt +
             form_viscous(fes, s_new.u.coeffs, s_new.u.coeffs, prm.eta) +
             form_b_upw(fes, s_new.mu.coeffs, s_new.phi.coeffs, mu0) +
             0.5 * prm.delta *
                 form_s_h_defect_term(fes, s_new.u.coeffs, s_new.phi.coeffs, mu0, prm.delta);

  d.lemma_cancel = form_a_upw(fes, s_new.u.coeffs, s_new.phi.coeffs, mu0) +
                   form_c_h(fes, s_new.phi.coeffs, mu0, s_new.u.coeffs) +
                   form_s_h_delta(fes, s_new.u.coeffs, s_new.phi.coeffs, mu0,
                                  s_new.u.coeffs, 0.0);
  d.xi_p_inf = prm.xi * s_new.p.coeffs.cwiseAbs().maxCoeff();
  return d;
}

// Diagnostics plus the hard per-step checks on bounds and mass.
inline DiagnosticsRecord post_step_checks(const FeSpaces &fes, const Params &prm,
                                          const State &s_new, const State &s_old,
                                          double tol_bound = 1e-8,
                                          double tol_mass = 1e-10) {
  DiagnosticsRecord d = diagnostics(fes, prm, s_new, s_old);
  if (d.phi_min < -1.0 - tol_bound || d.phi_max > 1.0 + tol_bound)
    throw BoundViolation(d.phi_min, d.phi_max, "elementwise phase field");
  if (d.phi_h_min < -1.0 - tol_bound || d.phi_h_max > 1.0 + tol_bound)
    throw BoundViolation(d.phi_h_min, d.phi_h_max, "lumped P1 phase field");
  const double mass_old = phase_mass(fes, s_old.phi.coeffs);
  const double drift = std::abs(d.mass - mass_old);
  const double tol = tol_mass * fes.mesh->total_area();
  if (drift > tol)
    throw MassDrift(drift, tol);
  return d;
}

} // namespace chns

#endif
