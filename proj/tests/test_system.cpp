#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "chns/system.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace chns;
using fixtures::make_setup;
using fixtures::random_vector;

namespace {

State make_state(const FeSpaces &fes, const Eigen::VectorXd &u, const Eigen::VectorXd &p,
                 const Eigen::VectorXd &phi, const Eigen::VectorXd &mu) {
  State s;
  s.u = Field{fes.velocity_bubble ? SpaceKind::P2BubbleVec : SpaceKind::P2Vec, u};
  s.p = Field{fes.pressure_p1 ? SpaceKind::P1Disc : SpaceKind::P0Disc, p};
  s.phi = Field{SpaceKind::P0Disc, phi};
  s.mu = Field{SpaceKind::P1Cont, mu};
  s.refresh_caches(fes);
  return s;
}

// Random state keeping a safe margin from every nonsmooth branch point:
// velocity normal traces away from zero, phi away from {-1, 0, 1}, cell-mean
// jumps of mu away from zero.
State kink_free_state(const FeSpaces &fes, std::mt19937 &rng) {
  const auto &mesh = *fes.mesh;
  std::uniform_real_distribution<double> pert(-0.05, 0.05);
  Eigen::VectorXd u(fes.n_u);
  for (int d = 0; d < fes.n_u_scalar; ++d) {
    u[2 * d] = 0.9 + pert(rng);
    u[2 * d + 1] = 0.3 + pert(rng);
  }
  for (int d = 0; d < fes.n_u_scalar; ++d)
    if (fes.u_scalar_boundary[d]) {
      // keep boundary rows eliminated in the flat vector sense
    }
  std::uniform_real_distribution<double> mag(0.15, 0.45);
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXd phi(fes.n_phi);
  for (int K = 0; K < fes.n_phi; ++K)
    phi[K] = (coin(rng) ? 1.0 : -1.0) * mag(rng);

  Eigen::VectorXd mu;
  for (int attempt = 0; attempt < 100; ++attempt) {
    mu = random_vector(rng, fes.n_mu, -1.0, 1.0);
    double min_jump = 1e9;
    for (const auto &ie : mesh.interior_edges) {
      const double j = cell_mean_p1(fes, mu, ie.K) - cell_mean_p1(fes, mu, ie.L);
      min_jump = std::min(min_jump, std::abs(j));
    }
    if (min_jump > 1e-3)
      break;
  }
  Eigen::VectorXd p = random_vector(rng, fes.n_p, -1.0, 1.0);
  return make_state(fes, u, p, phi, mu);
}

} // namespace

TEST_CASE("quiescent pure phase is a residual zero") {
  auto s = make_setup(3);
  Params prm;
  prm.dt = 1e-3;
  State old = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                         Eigen::VectorXd::Zero(s.fes->n_p),
                         Eigen::VectorXd::Ones(s.fes->n_phi),
                         Eigen::VectorXd::Zero(s.fes->n_mu));
  // mu consistent with the potential row at phi = 1: identically zero
  Field mu = solve_mu_from_phi(*s.fes, prm, old.phi_h.coeffs, old.phi_h.coeffs);
  CHECK(mu.coeffs.lpNorm<Eigen::Infinity>() < 1e-14);

  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);
  const Eigen::VectorXd x = sys.layout().pack(old);
  CHECK(sys.residual(x).lpNorm<Eigen::Infinity>() < 1e-13);
}

TEST_CASE("matched densities and zero velocity reduce to a pure diffusion step") {
  auto s = make_setup(2);
  Params prm;
  prm.rho1 = prm.rho2 = 1.0; // rho_dif = 0
  prm.dt = 5e-4;
  std::mt19937 rng(31);
  Eigen::VectorXd phi_old = random_vector(rng, s.fes->n_phi, -0.9, 0.9);
  Eigen::VectorXd mu_old = random_vector(rng, s.fes->n_mu, -1, 1);
  State old = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                         Eigen::VectorXd::Zero(s.fes->n_p), phi_old, mu_old);
  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);

  Eigen::VectorXd phi = random_vector(rng, s.fes->n_phi, -0.9, 0.9);
  Eigen::VectorXd mu = random_vector(rng, s.fes->n_mu, -1, 1);
  State trial = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                           Eigen::VectorXd::Zero(s.fes->n_p), phi, mu);
  const Eigen::VectorXd R = sys.residual(sys.layout().pack(trial));
  const auto &L = sys.layout();

  // independent assembly of the phase and potential rows
  const auto &mesh = *s.mesh;
  for (int K = 0; K < s.fes->n_phi; ++K) {
    double r = mesh.areas[K] * (phi[K] - phi_old[K]) / prm.dt;
    Eigen::VectorXd ind = Eigen::VectorXd::Zero(s.fes->n_phi);
    ind[K] = 1.0;
    r += oracle::b_upw(mesh, mu, phi, ind);
    CHECK_THAT(R[L.off_phi + K], Catch::Matchers::WithinAbs(r, 1e-12));
  }
  const Eigen::VectorXd phi_h = s.fes->lump_map * phi;
  const Eigen::VectorXd phi_h_old = s.fes->lump_map * phi_old;
  const auto &q = tri_quadrature();
  for (int i = 0; i < s.fes->n_mu; ++i) {
    double r = -s.fes->lumped_mass[i] * mu[i];
    for (int K = 0; K < s.fes->nel; ++K) {
      const auto &el = mesh.elements[K];
      int loc = -1;
      for (int a = 0; a < 3; ++a)
        if (el[a] == i)
          loc = a;
      if (loc < 0)
        continue;
      const double A = mesh.areas[K];
      const Vec2 gphi = s.fes->grad_p1c(phi_h, K);
      r += prm.lambda * prm.eps * A * gphi.dot(mesh.grad_lambda[K][loc]);
      for (const auto &qp : q) {
        const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
        const double fv =
            potential_f(s.fes->eval_p1c(phi_h, K, l), s.fes->eval_p1c(phi_h_old, K, l));
        r += (prm.lambda / prm.eps) * A * qp.w * fv * l[loc];
      }
    }
    CHECK_THAT(R[L.off_mu + i], Catch::Matchers::WithinAbs(r, 1e-12));
  }
}

TEST_CASE("phase rows summed against a constant leave only the time derivative") {
  auto s = make_setup(3);
  Params prm;
  prm.dt = 1e-3;
  std::mt19937 rng(32);
  State old = kink_free_state(*s.fes, rng);
  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);
  State trial = kink_free_state(*s.fes, rng);
  const Eigen::VectorXd R = sys.residual(sys.layout().pack(trial));
  const auto &L = sys.layout();

  double sum = 0.0, expect = 0.0;
  for (int K = 0; K < s.fes->n_phi; ++K) {
    sum += R[L.off_phi + K];
    expect += s.mesh->areas[K] * (trial.phi.coeffs[K] - old.phi.coeffs[K]) / prm.dt;
  }
  CHECK_THAT(sum, Catch::Matchers::WithinAbs(expect, 1e-10 * std::max(1.0, std::abs(expect))));
}

TEST_CASE("analytic Jacobian matches central finite differences away from kinks") {
  auto s = make_setup(2);
  Params prm;
  prm.dt = 1e-3;
  prm.gravity = Vec2{0.0, 1.0}; // exercise the gravity coupling too
  std::mt19937 rng(33);
  State old = kink_free_state(*s.fes, rng);
  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);

  for (int rep = 0; rep < 10; ++rep) {
    State at = kink_free_state(*s.fes, rng);
    const Eigen::VectorXd x = sys.layout().pack(at);
    const Eigen::SparseMatrix<double> J = sys.jacobian(x);
    Eigen::VectorXd d = random_vector(rng, sys.layout().total, -1.0, 1.0);
    d.normalize();
    const double tau = 1e-6;
    const Eigen::VectorXd fd =
        (sys.residual(x + tau * d) - sys.residual(x - tau * d)) / (2.0 * tau);
    const Eigen::VectorXd jd = J * d;
    const double scale = std::max(1.0, jd.norm());
    CHECK((fd - jd).norm() <= 1e-6 * scale);
  }
}

TEST_CASE("continuity block of the Jacobian is the assembled divergence plus penalty") {
  auto s = make_setup(2);
  Params prm;
  prm.dt = 1e-3;
  std::mt19937 rng(34);
  State old = kink_free_state(*s.fes, rng);
  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);
  const auto &L = sys.layout();
  State at = kink_free_state(*s.fes, rng);
  const Eigen::SparseMatrix<double> J = sys.jacobian(L.pack(at));

  Eigen::MatrixXd Jd = Eigen::MatrixXd(J);
  // p-rows, u-cols against B; p-rows, p-cols against xi M_p
  Eigen::MatrixXd B = Eigen::MatrixXd(ops.B);
  Eigen::MatrixXd Mp = Eigen::MatrixXd(ops.M_p);
  for (int i = 0; i < L.n_p; ++i) {
    for (int r = 0; r < L.n_u_red; ++r) {
      const int full = L.u_full_of_red[r];
      CHECK_THAT(Jd(L.off_p + i, L.off_u + r),
                 Catch::Matchers::WithinAbs(B(i, full), 1e-13));
    }
    for (int j = 0; j < L.n_p; ++j)
      CHECK_THAT(Jd(L.off_p + i, L.off_p + j),
                 Catch::Matchers::WithinAbs(prm.xi * Mp(i, j), 1e-18));
  }
}

TEST_CASE("potential block of the Jacobian towards mu is the negative lumped mass") {
  auto s = make_setup(2);
  Params prm;
  std::mt19937 rng(35);
  State old = kink_free_state(*s.fes, rng);
  RunOperators ops(*s.fes, prm);
  StepSystem sys(*s.fes, ops, prm, old);
  const auto &L = sys.layout();
  const Eigen::SparseMatrix<double> J = sys.jacobian(L.pack(old));
  Eigen::MatrixXd Jd = Eigen::MatrixXd(J);
  for (int i = 0; i < L.n_mu; ++i)
    for (int j = 0; j < L.n_mu; ++j) {
      const double expect = i == j ? -s.fes->lumped_mass[i] : 0.0;
      CHECK_THAT(Jd(L.off_mu + i, L.off_mu + j), Catch::Matchers::WithinAbs(expect, 1e-14));
    }
}

TEST_CASE("diagnostics: energy of simple states") {
  auto s = make_setup(4);
  Params prm; // lambda = eps = 0.01 on the unit square
  State zero = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                          Eigen::VectorXd::Zero(s.fes->n_p),
                          Eigen::VectorXd::Zero(s.fes->n_phi),
                          Eigen::VectorXd::Zero(s.fes->n_mu));
  CHECK_THAT(energy_total(*s.fes, prm, zero), Catch::Matchers::WithinRel(0.25, 1e-13));

  State pure = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                          Eigen::VectorXd::Zero(s.fes->n_p),
                          Eigen::VectorXd::Ones(s.fes->n_phi),
                          Eigen::VectorXd::Zero(s.fes->n_mu));
  CHECK(std::abs(energy_total(*s.fes, prm, pure)) < 1e-14);
}

TEST_CASE("post-step checks flag bound violations and mass drift") {
  auto s = make_setup(2);
  Params prm;
  prm.dt = 1e-3;
  State good = make_state(*s.fes, Eigen::VectorXd::Zero(s.fes->n_u),
                          Eigen::VectorXd::Zero(s.fes->n_p),
                          Eigen::VectorXd::Constant(s.fes->n_phi, 0.5),
                          Eigen::VectorXd::Zero(s.fes->n_mu));
  CHECK_NOTHROW(post_step_checks(*s.fes, prm, good, good));

  State bad = good;
  bad.phi.coeffs[0] = 1.0 + 1e-6;
  bad.refresh_caches(*s.fes);
  CHECK_THROWS_AS(post_step_checks(*s.fes, prm, bad, good), BoundViolation);

  State drift = good;
  drift.phi.coeffs.array() += 1e-4; // still in bounds, mass moved
  drift.refresh_caches(*s.fes);
  CHECK_THROWS_AS(post_step_checks(*s.fes, prm, drift, good), MassDrift);
}

TEST_CASE("lumped integral of the regularized phase equals the phase mass") {
  auto s = make_setup(3);
  std::mt19937 rng(36);
  Eigen::VectorXd phi = random_vector(rng, s.fes->n_phi, -1, 1);
  const Eigen::VectorXd phi_h = s.fes->lump_map * phi;
  const double mass_phi = phase_mass(*s.fes, phi);
  const double mass_phi_h = (s.fes->lumped_mass.array() * phi_h.array()).sum();
  CHECK_THAT(mass_phi_h, Catch::Matchers::WithinAbs(mass_phi, 1e-13));
}
