#ifndef CHNS_SIM_HPP
#define CHNS_SIM_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chns/io.hpp"
#include "chns/solver.hpp"
#include "chns/system.hpp"

namespace chns {

struct Scenario {
  std::string name;
  std::function<double(Vec2)> phi0;
  std::function<Vec2(Vec2)> u0;
  Vec2 gravity{0.0, 0.0};
  int default_nx = 100;
  double default_dt = 1e-3;
  double default_T = 0.1;
};

// The two off-center bumps shared by the accuracy and mixing tests; chi is
// the magnitude of the initial vortex.
inline Scenario make_two_bubble_scenario(const std::string &name, double eps, double chi) {
  Scenario s;
  s.name = name;
  const double se = std::sqrt(2.0) * eps;
  s.phi0 = [se](Vec2 q) {
    const double r1 = std::sqrt((q.x - 0.1) * (q.x - 0.1) + (q.y - 0.1) * (q.y - 0.1));
    const double r2 = std::sqrt((q.x + 0.15) * (q.x + 0.15) + (q.y + 0.15) * (q.y + 0.15));
    return 2.0 * std::tanh((pos_part(0.25 - r1) + pos_part(0.15 - r2)) / se) - 1.0;
  };
  s.u0 = [chi](Vec2 q) {
    const double cut = pos_part(0.16 - (q.x * q.x + q.y * q.y));
    return Vec2{chi * q.y * cut, -chi * q.x * cut};
  };
  return s;
}

inline Scenario make_scenario(const RunConfig &cfg) {
  const double eps = cfg.eps;
  if (cfg.scenario == "accuracy") {
    Scenario s = make_two_bubble_scenario("accuracy", eps, 1.0);
    s.default_nx = 32;
    s.default_dt = 1e-5;
    s.default_T = 5e-4;
    return s;
  }
  if (cfg.scenario == "circle") {
    Scenario s = make_two_bubble_scenario("circle", eps, 100.0);
    s.default_nx = 100;
    s.default_dt = 1e-3;
    s.default_T = 0.1;
    return s;
  }
  if (cfg.scenario == "bubble") {
    Scenario s;
    s.name = "bubble";
    const double se = std::sqrt(2.0) * eps;
    s.phi0 = [se](Vec2 q) {
      return std::tanh((0.2 - std::sqrt(q.x * q.x + q.y * q.y)) / se);
    };
    s.u0 = [](Vec2) { return Vec2{0.0, 0.0}; };
    s.gravity = Vec2{0.0, 1.0};
    s.default_nx = 100;
    s.default_dt = 1e-4;
    s.default_T = 0.25;
    return s;
  }
  if (cfg.scenario == "rayleigh") {
    Scenario s;
    s.name = "rayleigh";
    const double se = std::sqrt(2.0) * eps;
    s.phi0 = [se](Vec2 q) {
      const double ridge = 0.1 * std::exp(-(q.x + 0.2) * (q.x + 0.2) / 0.1);
      return std::tanh((q.y - ridge) / se);
    };
    s.u0 = [](Vec2) { return Vec2{0.0, 0.0}; };
    s.gravity = Vec2{0.0, 1.0};
    s.default_nx = 100;
    s.default_dt = 1e-4;
    s.default_T = 0.35;
    return s;
  }
  if (cfg.scenario == "custom") {
    Scenario s;
    s.name = "custom";
    const double c = cfg.custom_phi0;
    s.phi0 = [c](Vec2) { return c; };
    s.u0 = [](Vec2) { return Vec2{0.0, 0.0}; };
    s.default_nx = 16;
    s.default_dt = 1e-3;
    s.default_T = 1e-2;
    return s;
  }
  throw ConfigError("unknown scenario '" + cfg.scenario + "'");
}

// Fill scenario defaults into unset config fields.
inline RunConfig resolve_config(RunConfig cfg) {
  const Scenario s = make_scenario(cfg);
  if (cfg.nx == 0)
    cfg.nx = s.default_nx;
  if (cfg.ny == 0)
    cfg.ny = cfg.nx;
  if (cfg.dt == 0.0)
    cfg.dt = s.default_dt;
  if (cfg.t_final == 0.0)
    cfg.t_final = s.default_T;
  if (cfg.steps == 0)
    cfg.steps = std::lround(cfg.t_final / cfg.dt);
  if (cfg.scenario == "bubble" || cfg.scenario == "rayleigh") {
    cfg.gravity_x = s.gravity.x;
    cfg.gravity_y = s.gravity.y;
  }
  return cfg;
}

// phi0 by elementwise mean, u0 by nodal interpolation (boundary rows zeroed),
// p0 = 0 and mu0 from the potential row evaluated at the initial phase field.
inline State initial_fields(const FeSpaces &fes, const Params &prm, const Scenario &sc) {
  State s;
  s.phi = interpolate_initial_phi(fes, sc.phi0);
  s.u = interpolate_initial_velocity(fes, sc.u0);
  for (int d = 0; d < fes.n_u_scalar; ++d)
    if (fes.u_scalar_boundary[static_cast<std::size_t>(d)]) {
      s.u.coeffs[2 * d] = 0.0;
      s.u.coeffs[2 * d + 1] = 0.0;
    }
  s.p = Field{fes.pressure_p1 ? SpaceKind::P1Disc : SpaceKind::P0Disc,
              Eigen::VectorXd::Zero(fes.n_p)};
  s.phi_h = project_P1_lumped(fes, s.phi);
  s.mu = solve_mu_from_phi(fes, prm, s.phi_h.coeffs, s.phi_h.coeffs);
  s.refresh_caches(fes);
  return s;
}

struct RunResult {
  long steps_done = 0;
  std::vector<DiagnosticsRecord> records;
  State final_state;
};

// Core time loop; per-step sink receives (step index, state, record).
inline RunResult
simulate(const FeSpaces &fes, const RunConfig &cfg, const State &initial,
         const std::function<void(long, const State &, const DiagnosticsRecord &)> &sink = {}) {
  Params prm = cfg.params();
  prm.validate();
  const NewtonConfig ncfg = cfg.newton();
  RunOperators ops(fes, prm);

  RunResult out;
  State state = initial;
  for (long m = 1; m <= cfg.steps; ++m) {
    NewtonResult nr;
    try {
      nr = newton_solve(fes, ops, prm, state, ncfg);
    } catch (NonConvergence &e) {
      e.step_index = m;
      throw;
    }
    DiagnosticsRecord rec = post_step_checks(fes, prm, nr.state, state);
    rec.t = static_cast<double>(m) * prm.dt;
    rec.newton_iters = nr.iterations;
    out.records.push_back(rec);
    state = nr.state;
    out.steps_done = m;
    if (sink)
      sink(m, state, rec);
  }
  out.final_state = state;
  return out;
}

// Full scenario run with a persisted run directory:
//   config.snapshot, diagnostics.csv, fields_XXXXXX.vtk, state_XXXXXX.bin
inline RunResult run(const RunConfig &cfg_in) {
  const RunConfig cfg = resolve_config(cfg_in);
  const Scenario sc = make_scenario(cfg);
  StructuredTriMesh mesh = build_mesh(Rectangle{-0.5, 0.5, -0.5, 0.5}, cfg.nx, cfg.ny);
  validate_hypothesis(mesh);
  FeSpaces fes(mesh, cfg.velocity_bubble());
  Params prm = cfg.params();
  prm.validate();

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream snap(fs::path(cfg.output_dir) / "config.snapshot");
    snap << serialize_config(cfg);
  }
  std::ofstream csv(fs::path(cfg.output_dir) / "diagnostics.csv");
  csv << diagnostics_csv_header() << "\n";

  auto name_of = [&](const char *stem, long i, const char *ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%06ld.%s", stem, i, ext);
    return (fs::path(cfg.output_dir) / buf).string();
  };

  State init = initial_fields(fes, prm, sc);
  write_vtk(fes, init, name_of("fields", 0, "vtk"));
  write_state(fes, init, name_of("state", 0, "bin"));

  auto sink = [&](long m, const State &s, const DiagnosticsRecord &rec) {
    csv << diagnostics_csv_row(rec) << "\n";
    csv.flush();
    if (cfg.output_stride > 0 && (m % cfg.output_stride == 0 || m == cfg.steps)) {
      write_vtk(fes, s, name_of("fields", m, "vtk"));
      write_state(fes, s, name_of("state", m, "bin"));
    }
  };
  return simulate(fes, cfg, init, sink);
}

// --- convergence harness ---

// Locate the element of a structured mesh containing a point.
inline int locate_element(const StructuredTriMesh &m, Vec2 q) {
  const double hx = m.domain.width() / m.nx, hy = m.domain.height() / m.ny;
  int i = static_cast<int>(std::floor((q.x - m.domain.x0) / hx));
  int j = static_cast<int>(std::floor((q.y - m.domain.y0) / hy));
  i = std::clamp(i, 0, m.nx - 1);
  j = std::clamp(j, 0, m.ny - 1);
  const double lx = (q.x - m.domain.x0) / hx - i;
  const double ly = (q.y - m.domain.y0) / hy - j;
  const int base = 2 * (j * m.nx + i);
  if ((i + j) % 2 == 0)
    return ly <= lx ? base : base + 1; // split along the main diagonal
  return lx + ly <= 1.0 ? base : base + 1;
}

struct ConvergenceRow {
  int nx = 0;
  double h = 0.0;
  double l2_phi = 0.0, h1_phi = 0.0;
  double l2_u = 0.0, h1_u = 0.0;
  double l2_p = 0.0;
  // orders vs the previous row (nan on the first row)
  double ord_l2_phi = 0.0, ord_h1_phi = 0.0, ord_l2_u = 0.0, ord_h1_u = 0.0,
         ord_l2_p = 0.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  int reference_nx = 0;
};

// L2/H1 errors of the coarse solution against a reference run evaluated at
// the coarse quadrature points.
inline ConvergenceRow compare_to_reference(const FeSpaces &coarse, const State &sc,
                                           const FeSpaces &ref, const State &sr) {
  const auto &m = *coarse.mesh;
  const auto &q = tri_quadrature();
  ConvergenceRow row;
  row.nx = m.nx;
  row.h = m.mesh_size();
  double l2p = 0, semip = 0, l2u = 0, semiu = 0, l2pr = 0;
  for (int K = 0; K < coarse.nel; ++K) {
    const double A = m.areas[static_cast<std::size_t>(K)];
    const Vec2 gpc = coarse.grad_p1c(sc.phi_h.coeffs, K);
    for (const auto &qp : q) {
      const std::array<double, 3> l{qp.l1, qp.l2, qp.l3};
      const Vec2 x = m.point(K, qp.l1, qp.l2, qp.l3);
      const int Kr = locate_element(*ref.mesh, x);
      const auto lr = barycentric(*ref.mesh, Kr, x);

      const double dphi = coarse.eval_p1c(sc.phi_h.coeffs, K, l) -
                          ref.eval_p1c(sr.phi_h.coeffs, Kr, lr);
      const Vec2 dgp = gpc - ref.grad_p1c(sr.phi_h.coeffs, Kr);
      const Vec2 du = coarse.eval_u(sc.u.coeffs, K, l) - ref.eval_u(sr.u.coeffs, Kr, lr);
      const auto Gc = coarse.grad_u(sc.u.coeffs, K, l);
      const auto Gr = ref.grad_u(sr.u.coeffs, Kr, lr);
      double dg2 = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          dg2 += (Gc[a][b] - Gr[a][b]) * (Gc[a][b] - Gr[a][b]);
      const double dp = coarse.eval_pressure(sc.p.coeffs, K, l) -
                        ref.eval_pressure(sr.p.coeffs, Kr, lr);

      l2p += A * qp.w * dphi * dphi;
      semip += A * qp.w * dgp.dot(dgp);
      l2u += A * qp.w * du.dot(du);
      semiu += A * qp.w * dg2;
      l2pr += A * qp.w * dp * dp;
    }
  }
  row.l2_phi = std::sqrt(l2p);
  row.h1_phi = std::sqrt(l2p + semip);
  row.l2_u = std::sqrt(l2u);
  row.h1_u = std::sqrt(l2u + semiu);
  row.l2_p = std::sqrt(l2pr);
  return row;
}

inline ConvergenceTable convergence_harness(const RunConfig &base,
                                            const std::vector<int> &meshes,
                                            int reference_nx) {
  for (int nx : meshes)
    if (nx <= 0 || reference_nx % nx != 0)
      throw ConfigError("reference nx must be an integer multiple of every mesh nx");

  struct Resolved {
    std::unique_ptr<StructuredTriMesh> mesh;
    std::unique_ptr<FeSpaces> fes;
    State state;
  };
  auto run_one = [&](int nx) {
    RunConfig cfg = base;
    cfg.scenario = "accuracy";
    cfg.nx = cfg.ny = nx;
    cfg = resolve_config(cfg);
    Resolved r;
    r.mesh = std::make_unique<StructuredTriMesh>(
        build_mesh(Rectangle{-0.5, 0.5, -0.5, 0.5}, cfg.nx, cfg.ny));
    validate_hypothesis(*r.mesh);
    r.fes = std::make_unique<FeSpaces>(*r.mesh, cfg.velocity_bubble());
    const Scenario sc = make_scenario(cfg);
    Params prm = cfg.params();
    State init = initial_fields(*r.fes, prm, sc);
    r.state = simulate(*r.fes, cfg, init).final_state;
    return r;
  };

  ConvergenceTable table;
  table.reference_nx = reference_nx;
  const Resolved ref = run_one(reference_nx);

  for (std::size_t i = 0; i < meshes.size(); ++i) {
    const Resolved cur = run_one(meshes[i]);
    ConvergenceRow row = compare_to_reference(*cur.fes, cur.state, *ref.fes, ref.state);
    if (i > 0) {
      const ConvergenceRow &prev = table.rows.back();
      const double lh = std::log(prev.h / row.h);
      row.ord_l2_phi = std::log(prev.l2_phi / row.l2_phi) / lh;
      row.ord_h1_phi = std::log(prev.h1_phi / row.h1_phi) / lh;
      row.ord_l2_u = std::log(prev.l2_u / row.l2_u) / lh;
      row.ord_h1_u = std::log(prev.h1_u / row.h1_u) / lh;
      row.ord_l2_p = std::log(prev.l2_p / row.l2_p) / lh;
    }
    table.rows.push_back(row);
  }
  return table;
}

} // namespace chns

#endif
