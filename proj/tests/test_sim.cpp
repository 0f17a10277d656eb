#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "chns/sim.hpp"
#include "support/fixtures.hpp"

using namespace chns;
using fixtures::make_setup;

TEST_CASE("scenario initial data stays within the physical bounds") {
  std::mt19937 rng(61);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (const char *name : {"accuracy", "circle", "bubble", "rayleigh"}) {
    RunConfig cfg;
    cfg.scenario = name;
    Scenario sc = make_scenario(cfg);
    for (int i = 0; i < 20000; ++i) {
      const Vec2 q{d(rng), d(rng)};
      const double v = sc.phi0(q);
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("bubble initial phase at the origin is the pure heavy phase") {
  RunConfig cfg;
  cfg.scenario = "bubble";
  Scenario sc = make_scenario(cfg);
  // scalar oracle: tanh(0.2 / (sqrt(2) * 0.01)) = 1 - 1.04e-12
  CHECK(sc.phi0({0.0, 0.0}) == std::tanh(0.2 / (std::sqrt(2.0) * 0.01)));
  CHECK_THAT(sc.phi0({0.0, 0.0}), Catch::Matchers::WithinAbs(1.0, 2e-12));
}

TEST_CASE("vortex initial velocity is compatible with the no-slip boundary") {
  RunConfig cfg;
  cfg.scenario = "circle";
  Scenario sc = make_scenario(cfg);
  std::mt19937 rng(62);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (int i = 0; i < 5000; ++i) {
    const Vec2 q{d(rng), d(rng)};
    if (q.x * q.x + q.y * q.y >= 0.16) {
      const Vec2 v = sc.u0(q);
      CHECK(v.x == 0.0);
      CHECK(v.y == 0.0);
    }
  }
  for (double t = -0.5; t <= 0.5; t += 0.01) {
    CHECK(sc.u0({t, -0.5}).norm() == 0.0);
    CHECK(sc.u0({t, 0.5}).norm() == 0.0);
    CHECK(sc.u0({-0.5, t}).norm() == 0.0);
    CHECK(sc.u0({0.5, t}).norm() == 0.0);
  }
}

TEST_CASE("projected initial fields keep the bounds on every scenario") {
  auto s = make_setup(8);
  for (const char *name : {"accuracy", "circle", "bubble", "rayleigh"}) {
    RunConfig cfg;
    cfg.scenario = name;
    cfg = resolve_config(cfg);
    Params prm = cfg.params();
    State st = initial_fields(*s.fes, prm, make_scenario(cfg));
    CHECK(st.phi.coeffs.minCoeff() >= -1.0);
    CHECK(st.phi.coeffs.maxCoeff() <= 1.0);
    CHECK(st.phi_h.coeffs.minCoeff() >= -1.0);
    CHECK(st.phi_h.coeffs.maxCoeff() <= 1.0);
    // strong no-slip rows
    for (int d = 0; d < s.fes->n_u_scalar; ++d)
      if (s.fes->u_scalar_boundary[d]) {
        CHECK(st.u.coeffs[2 * d] == 0.0);
        CHECK(st.u.coeffs[2 * d + 1] == 0.0);
      }
  }
}

TEST_CASE("scenario defaults resolve as documented") {
  RunConfig cfg;
  cfg.scenario = "circle";
  RunConfig r = resolve_config(cfg);
  CHECK(r.nx == 100);
  CHECK(r.ny == 100);
  CHECK(r.dt == 1e-3);
  CHECK(r.steps == 100);

  cfg.scenario = "accuracy";
  r = resolve_config(cfg);
  CHECK(r.dt == 1e-5);
  CHECK(r.steps == 50);

  cfg.scenario = "bubble";
  r = resolve_config(cfg);
  CHECK(r.dt == 1e-4);
  CHECK(r.gravity_y == 1.0);
}

TEST_CASE("stationary uniform phase: every diagnostic is constant in time") {
  auto s = make_setup(8);
  RunConfig cfg;
  cfg.scenario = "custom";
  cfg.custom_phi0 = 1.0;
  cfg.nx = cfg.ny = 8;
  cfg.dt = 1e-3;
  cfg.steps = 3;
  cfg = resolve_config(cfg);
  Params prm = cfg.params();
  State init = initial_fields(*s.fes, prm, make_scenario(cfg));
  RunResult rr = simulate(*s.fes, cfg, init);
  REQUIRE(rr.records.size() == 3);
  for (const auto &rec : rr.records) {
    CHECK_THAT(rec.mass, Catch::Matchers::WithinAbs(rr.records[0].mass, 1e-13));
    CHECK_THAT(rec.E, Catch::Matchers::WithinAbs(rr.records[0].E, 1e-13));
    CHECK(rec.phi_min == 1.0);
    CHECK(rec.phi_max == 1.0);
    CHECK(rec.newton_iters <= 1);
  }
}

TEST_CASE("nonphysical parameters are rejected before the loop starts") {
  auto s = make_setup(4);
  RunConfig cfg;
  cfg.scenario = "custom";
  cfg.nx = cfg.ny = 4;
  cfg.steps = 1;
  cfg.eps = -1.0;
  cfg = resolve_config(cfg);
  Params prm_unchecked = cfg.params();
  State init;
  {
    RunConfig ok = cfg;
    ok.eps = 0.01;
    init = initial_fields(*s.fes, ok.params(), make_scenario(ok));
  }
  (void)prm_unchecked;
  CHECK_THROWS_AS(simulate(*s.fes, cfg, init), ConfigError);
}

TEST_CASE("restart from a persisted state reproduces the next step bit-identically") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "chns_restart_test").string();
  fs::remove_all(dir);

  RunConfig cfg;
  cfg.scenario = "circle";
  cfg.nx = cfg.ny = 8;
  cfg.dt = 1e-3;
  cfg.steps = 2;
  cfg.output_stride = 1;
  cfg.output_dir = dir;
  RunResult two = run(cfg);
  REQUIRE(two.steps_done == 2);

  // reload step-1 state and advance one more step
  StructuredTriMesh mesh = build_mesh(Rectangle{-0.5, 0.5, -0.5, 0.5}, 8, 8);
  validate_hypothesis(mesh);
  FeSpaces fes(mesh);
  State s1 = read_state(fes, dir + "/state_000001.bin");
  RunConfig one = cfg;
  one.steps = 1;
  RunResult again = simulate(fes, one, s1);

  State s2 = read_state(fes, dir + "/state_000002.bin");
  CHECK((again.final_state.u.coeffs - s2.u.coeffs).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((again.final_state.p.coeffs - s2.p.coeffs).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((again.final_state.phi.coeffs - s2.phi.coeffs).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((again.final_state.mu.coeffs - s2.mu.coeffs).lpNorm<Eigen::Infinity>() == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("point location agrees with barycentric containment") {
  StructuredTriMesh m = build_mesh(Rectangle{-0.5, 0.5, -0.5, 0.5}, 5, 5);
  std::mt19937 rng(63);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (int i = 0; i < 2000; ++i) {
    const Vec2 q{d(rng), d(rng)};
    const int K = locate_element(m, q);
    const auto l = barycentric(m, K, q);
    CHECK(std::min({l[0], l[1], l[2]}) >= -1e-12);
  }
}

TEST_CASE("convergence harness: identical meshes give zero errors") {
  RunConfig base;
  base.dt = 1e-5;
  base.steps = 3;
  ConvergenceTable t = convergence_harness(base, {8}, 8);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].l2_phi <= 1e-14);
  CHECK(t.rows[0].h1_phi <= 1e-12);
  CHECK(t.rows[0].l2_u <= 1e-14);
  CHECK(t.rows[0].l2_p <= 1e-12);
}

TEST_CASE("convergence harness rejects non-nested meshes") {
  RunConfig base;
  base.steps = 1;
  CHECK_THROWS_AS(convergence_harness(base, {7}, 16), ConfigError);
}
