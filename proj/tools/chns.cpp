#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chns/chns.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  CLI::App *cmd = nullptr;
  std::string config_file;
  chns::RunConfig cfg;

  void attach(CLI::App &app) {
    cmd = &app;
    app.add_option("--config", config_file, "config file (flat key = value)");
    app.add_option("--scenario", cfg.scenario, "accuracy|circle|bubble|rayleigh|custom");
    app.add_option("--nx", cfg.nx, "squares per axis");
    app.add_option("--ny", cfg.ny, "squares in y (defaults to nx)");
    app.add_option("--dt", cfg.dt, "time step");
    app.add_option("--steps", cfg.steps, "number of steps (wins over --t-final)");
    app.add_option("--t-final", cfg.t_final, "final time");
    app.add_option("--eps", cfg.eps, "interface width");
    app.add_option("--lambda", cfg.lambda, "energy density constant");
    app.add_option("--rho1", cfg.rho1, "lighter density");
    app.add_option("--rho2", cfg.rho2, "heavier density");
    app.add_option("--eta", cfg.eta, "viscosity");
    app.add_option("--delta", cfg.delta, "sign regularization");
    app.add_option("--xi", cfg.xi, "pressure penalty");
    app.add_option("--gravity-x", cfg.gravity_x, "gravity x component");
    app.add_option("--gravity-y", cfg.gravity_y, "gravity y component");
    app.add_option("--space-pair", cfg.space_pair, "p2bubble_p1disc|p2_p0disc");
    app.add_option("--backend", cfg.backend, "direct_lu|gmres_ilu");
    app.add_option("--newton-abs-tol", cfg.newton_abs_tol, "Newton absolute tolerance");
    app.add_option("--newton-rel-tol", cfg.newton_rel_tol, "Newton relative tolerance");
    app.add_option("--newton-max-iter", cfg.newton_max_iter, "Newton iteration cap");
    app.add_option("--line-search", cfg.line_search, "enable backtracking (0/1)");
    app.add_option("--stride", cfg.output_stride, "field output stride");
    app.add_option("--out", cfg.output_dir, "output directory");
    app.add_option("--seed", cfg.seed, "rng seed for fixtures");
    app.add_option("--custom-phi0", cfg.custom_phi0, "constant phi0 of the custom scenario");
  }

  chns::RunConfig merged() const {
    chns::RunConfig base;
    if (!config_file.empty())
      base = chns::load_config(config_file);
    // CLI flags that were actually given override the file values.
    chns::RunConfig out = base;
    auto set_if = [&](const std::string &flag, auto member) {
      if (cmd->count(flag) > 0)
        out.*member = cfg.*member;
    };
    set_if("--scenario", &chns::RunConfig::scenario);
    set_if("--nx", &chns::RunConfig::nx);
    set_if("--ny", &chns::RunConfig::ny);
    set_if("--dt", &chns::RunConfig::dt);
    set_if("--steps", &chns::RunConfig::steps);
    set_if("--t-final", &chns::RunConfig::t_final);
    set_if("--eps", &chns::RunConfig::eps);
    set_if("--lambda", &chns::RunConfig::lambda);
    set_if("--rho1", &chns::RunConfig::rho1);
    set_if("--rho2", &chns::RunConfig::rho2);
    set_if("--eta", &chns::RunConfig::eta);
    set_if("--delta", &chns::RunConfig::delta);
    set_if("--xi", &chns::RunConfig::xi);
    set_if("--gravity-x", &chns::RunConfig::gravity_x);
    set_if("--gravity-y", &chns::RunConfig::gravity_y);
    set_if("--space-pair", &chns::RunConfig::space_pair);
    set_if("--backend", &chns::RunConfig::backend);
    set_if("--newton-abs-tol", &chns::RunConfig::newton_abs_tol);
    set_if("--newton-rel-tol", &chns::RunConfig::newton_rel_tol);
    set_if("--newton-max-iter", &chns::RunConfig::newton_max_iter);
    set_if("--line-search", &chns::RunConfig::line_search);
    set_if("--stride", &chns::RunConfig::output_stride);
    set_if("--out", &chns::RunConfig::output_dir);
    set_if("--seed", &chns::RunConfig::seed);
    set_if("--custom-phi0", &chns::RunConfig::custom_phi0);
    return out;
  }
};

int cmd_run(const chns::RunConfig &cfg) {
  chns::RunResult rr = chns::run(cfg);
  std::printf("completed %ld steps; diagnostics in %s/diagnostics.csv\n", rr.steps_done,
              cfg.output_dir.c_str());
  if (!rr.records.empty()) {
    const auto &d = rr.records.back();
    std::printf("final: t=%g mass=%.12g phi in [%.12g, %.12g] E=%.12g\n", d.t, d.mass,
                d.phi_min, d.phi_max, d.E);
  }
  return 0;
}

int cmd_converge(const chns::RunConfig &cfg, const std::string &meshes_csv, int reference) {
  std::vector<int> meshes;
  std::string tok;
  std::istringstream is(meshes_csv);
  while (std::getline(is, tok, ','))
    meshes.push_back(std::stoi(tok));
  if (meshes.empty())
    throw chns::ConfigError("--meshes must list at least one nx");

  chns::ConvergenceTable t = chns::convergence_harness(cfg, meshes, reference);
  std::printf("reference nx = %d\n", t.reference_nx);
  std::printf("%6s %10s | %12s %8s | %12s %8s | %12s %8s | %12s %8s | %12s %8s\n", "nx",
              "h", "L2(phi_h)", "order", "H1(phi_h)", "order", "L2(u)", "order", "H1(u)",
              "order", "L2(p)", "order");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto &r = t.rows[i];
    auto ord = [&](double o) { return i == 0 ? std::string("-") : (std::ostringstream() << std::setprecision(3) << o).str(); };
    std::printf("%6d %10.4e | %12.4e %8s | %12.4e %8s | %12.4e %8s | %12.4e %8s | %12.4e %8s\n",
                r.nx, r.h, r.l2_phi, ord(r.ord_l2_phi).c_str(), r.h1_phi,
                ord(r.ord_h1_phi).c_str(), r.l2_u, ord(r.ord_l2_u).c_str(), r.h1_u,
                ord(r.ord_h1_u).c_str(), r.l2_p, ord(r.ord_l2_p).c_str());
  }
  return 0;
}

int cmd_validate_mesh(int nx, int ny) {
  chns::StructuredTriMesh mesh =
      chns::build_mesh(chns::Rectangle{-0.5, 0.5, -0.5, 0.5}, nx, ny > 0 ? ny : nx);
  const double defect = chns::validate_hypothesis(mesh);
  std::printf("mesh %dx%d: %zu vertices, %zu elements, %zu interior edges\n", nx,
              ny > 0 ? ny : nx, mesh.n_vertices(), mesh.n_elements(),
              mesh.interior_edges.size());
  std::printf("max barycenter-orthogonality defect: %.3e (relative to h)\n", defect);
  return 0;
}

int cmd_check_invariants(const std::string &dir) {
  const chns::RunConfig cfg = chns::load_config((fs::path(dir) / "config.snapshot").string());
  chns::StructuredTriMesh mesh =
      chns::build_mesh(chns::Rectangle{-0.5, 0.5, -0.5, 0.5}, cfg.nx, cfg.ny);
  chns::validate_hypothesis(mesh);
  chns::FeSpaces fes(mesh, cfg.velocity_bubble());
  chns::Params prm = cfg.params();

  std::map<long, std::string> snaps;
  for (const auto &entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("state_", 0) == 0 && name.size() >= 16)
      snaps[std::stol(name.substr(6, 6))] = entry.path().string();
  }
  if (snaps.empty())
    throw chns::ConfigError("no state snapshots in '" + dir + "'");

  double mass0 = 0.0;
  bool have_mass0 = false;
  long checked_pairs = 0;
  std::map<long, chns::State> cache;
  for (const auto &[idx, path] : snaps) {
    chns::State s = chns::read_state(fes, path);
    const double mn = s.phi.coeffs.minCoeff(), mx = s.phi.coeffs.maxCoeff();
    if (mn < -1.0 - 1e-8 || mx > 1.0 + 1e-8)
      throw chns::BoundViolation(mn, mx, "snapshot " + std::to_string(idx));
    const double mass = chns::phase_mass(fes, s.phi.coeffs);
    if (!have_mass0) {
      mass0 = mass;
      have_mass0 = true;
    } else if (std::abs(mass - mass0) > 1e-10 * mesh.total_area()) {
      throw chns::MassDrift(std::abs(mass - mass0), 1e-10 * mesh.total_area());
    }
    auto prev = cache.find(idx - 1);
    if (prev != cache.end()) {
      chns::post_step_checks(fes, prm, s, prev->second);
      ++checked_pairs;
    }
    cache.clear();
    cache.emplace(idx, std::move(s));
  }
  std::printf("checked %zu snapshots (%ld consecutive pairs): bounds and mass hold\n",
              snaps.size(), checked_pairs);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"structure-preserving two-phase flow solver"};
  app.require_subcommand(1);

  Overrides run_opts, conv_opts;
  CLI::App *c_run = app.add_subcommand("run", "run a scenario");
  run_opts.attach(*c_run);

  CLI::App *c_conv = app.add_subcommand("converge", "mesh-refinement error study");
  conv_opts.attach(*c_conv);
  std::string meshes_csv = "16,24,32";
  int reference = 96;
  c_conv->add_option("--meshes", meshes_csv, "comma-separated nx list");
  c_conv->add_option("--reference", reference, "reference mesh nx");

  CLI::App *c_val = app.add_subcommand("validate-mesh", "report the mesh orthogonality defect");
  int val_nx = 4, val_ny = 0;
  c_val->add_option("--nx", val_nx, "squares per axis");
  c_val->add_option("--ny", val_ny, "squares in y (defaults to nx)");

  CLI::App *c_chk = app.add_subcommand("check-invariants", "replay a run directory's snapshots");
  std::string chk_dir;
  c_chk->add_option("--dir", chk_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (c_run->parsed())
      return cmd_run(run_opts.merged());
    if (c_conv->parsed())
      return cmd_converge(conv_opts.merged(), meshes_csv, reference);
    if (c_val->parsed())
      return cmd_validate_mesh(val_nx, val_ny);
    if (c_chk->parsed())
      return cmd_check_invariants(chk_dir);
  } catch (const chns::ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const chns::NonConvergence &e) {
    std::cerr << "error: " << e.what();
    if (e.step_index >= 0)
      std::cerr << " at step " << e.step_index;
    std::cerr << "\n";
    return 3;
  } catch (const chns::HypothesisViolation &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const chns::BoundViolation &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const chns::MassDrift &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
