#ifndef CHNS_SOLVER_HPP
#define CHNS_SOLVER_HPP

#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/IterativeSolvers>

#include "chns/errors.hpp"
#include "chns/system.hpp"

namespace chns {

enum class LinearBackend { DirectLU, GmresIlu };

struct NewtonConfig {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_iter = 50;
  LinearBackend backend = LinearBackend::DirectLU;
  double gmres_tol = 1e-12;
  int gmres_restart = 200;
  int gmres_max_iter = 20000;
  double ilut_drop_tol = 1e-6;
  int ilut_fill = 60;
  bool line_search = false; // backtracking halving, at most 8 times

  void validate() const {
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0))
      throw ConfigError("newton tolerances must be positive");
    if (max_iter < 1)
      throw ConfigError("newton max_iter must be at least 1");
  }
};

// Solve A x = b with the configured backend. On a singular direct
// factorization, probe the usual suspect: an unconstrained constant-pressure
// mode when the penalty is absent.
inline Eigen::VectorXd linear_solve(const Eigen::SparseMatrix<double> &A,
                                    const Eigen::VectorXd &b, const NewtonConfig &cfg,
                                    const BlockLayout *layout = nullptr) {
  if (cfg.backend == LinearBackend::DirectLU) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) {
      std::string detail = "direct LU factorization reported a singular or "
                           "ill-conditioned matrix";
      if (layout != nullptr) {
        Eigen::VectorXd probe = Eigen::VectorXd::Zero(A.cols());
        for (int i = 0; i < layout->n_p; ++i)
          probe[layout->off_p + i] = 1.0;
        const double nrm = (A * probe).norm() / std::max(1.0, probe.norm());
        if (nrm < 1e-12)
          detail += "; the pressure block carries a constant nullspace "
                    "(zero pressure penalty?)";
      }
      throw LinearSolveFailure(detail);
    }
    Eigen::VectorXd x = lu.solve(b);
    if (lu.info() != Eigen::Success)
      throw LinearSolveFailure("direct LU backward substitution failed");
    return x;
  }

  // The coupled system spans ~15 orders of magnitude between the penalty and
  // momentum rows; equilibrate before the incomplete factorization and polish
  // with iterative refinement in the original system.
  const Eigen::Index n = A.rows();
  Eigen::VectorXd dr = Eigen::VectorXd::Zero(n), dc = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
      dr[it.row()] = std::max(dr[it.row()], std::abs(it.value()));
  for (Eigen::Index i = 0; i < n; ++i)
    dr[i] = dr[i] > 0.0 ? 1.0 / dr[i] : 1.0;
  Eigen::SparseMatrix<double> As = dr.asDiagonal() * A;
  for (int k = 0; k < As.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(As, k); it; ++it)
      dc[it.col()] = std::max(dc[it.col()], std::abs(it.value()));
  for (Eigen::Index i = 0; i < n; ++i)
    dc[i] = dc[i] > 0.0 ? 1.0 / dc[i] : 1.0;
  As = As * dc.asDiagonal();

  Eigen::GMRES<Eigen::SparseMatrix<double>, Eigen::IncompleteLUT<double>> gmres;
  gmres.preconditioner().setDroptol(cfg.ilut_drop_tol);
  gmres.preconditioner().setFillfactor(cfg.ilut_fill);
  gmres.setTolerance(cfg.gmres_tol);
  gmres.set_restart(cfg.gmres_restart);
  gmres.setMaxIterations(cfg.gmres_max_iter);
  gmres.compute(As);
  if (gmres.info() != Eigen::Success)
    throw LinearSolveFailure("incomplete LU preconditioner setup failed");

  auto solve_scaled = [&](const Eigen::VectorXd &rhs) {
    const Eigen::VectorXd ys = gmres.solve((dr.array() * rhs.array()).matrix().eval());
    if (gmres.info() != Eigen::Success)
      throw LinearSolveFailure("GMRES stagnated at relative residual " +
                               std::to_string(gmres.error()));
    return Eigen::VectorXd((dc.array() * ys.array()).matrix());
  };

  Eigen::VectorXd x = solve_scaled(b);
  const double bnorm = std::max(b.norm(), 1e-300);
  for (int round = 0; round < 3; ++round) {
    const Eigen::VectorXd r = b - A * x;
    if (r.norm() <= 1e-14 * bnorm)
      break;
    x += solve_scaled(r);
  }
  return x;
}

struct NewtonResult {
  State state;
  int iterations = 0;
  std::vector<double> residual_history;
};

// Full-step Newton on the coupled system; the iteration starts from the
// previous time level.
inline NewtonResult newton_solve(const FeSpaces &fes, const RunOperators &ops,
                                 const Params &prm, const State &state_old,
                                 const NewtonConfig &cfg) {
  cfg.validate();
  StepSystem sys(fes, ops, prm, state_old);
  const BlockLayout &layout = sys.layout();

  Eigen::VectorXd x = layout.pack(state_old);
  Eigen::VectorXd R = sys.residual(x);
  double rnorm = R.norm();
  NewtonResult out;
  out.residual_history.push_back(rnorm);
  const double tol = std::max(cfg.abs_tol, cfg.rel_tol * rnorm);
  if (rnorm <= cfg.abs_tol) {
    out.state = sys.state_from(x);
    return out;
  }

  Eigen::SparseMatrix<double> J;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    sys.eval(x, R, J);
    const Eigen::VectorXd dx = linear_solve(J, (-R).eval(), cfg, &layout);

    double step = 1.0;
    Eigen::VectorXd x_next = x + dx;
    Eigen::VectorXd R_next = sys.residual(x_next);
    if (cfg.line_search) {
      for (int h = 0; h < 8 && R_next.norm() > (1.0 - 1e-4 * step) * rnorm; ++h) {
        step *= 0.5;
        x_next = x + step * dx;
        R_next = sys.residual(x_next);
      }
    }
    x.swap(x_next);
    R.swap(R_next);
    rnorm = R.norm();
    out.residual_history.push_back(rnorm);
    out.iterations = k;
    if (rnorm <= tol) {
      out.state = sys.state_from(x);
      return out;
    }
  }
  throw NonConvergence(cfg.max_iter, rnorm);
}

} // namespace chns

#endif
