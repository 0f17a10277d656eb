#ifndef CHNS_IO_HPP
#define CHNS_IO_HPP

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chns/errors.hpp"
#include "chns/solver.hpp"
#include "chns/system.hpp"

namespace chns {

// Flat key-value run configuration; CLI flags override file keys.
struct RunConfig {
  std::string scenario = "circle";
  int nx = 0, ny = 0; // 0 means scenario default (ny falls back to nx)
  double dt = 0.0;    // 0 means scenario default
  double t_final = 0.0;
  long steps = 0; // explicit step count wins over t_final
  double eps = 0.01, lambda = 0.01;
  double rho1 = 1.0, rho2 = 100.0, eta = 1.0;
  double delta = 1e-6, xi = 1e-10;
  double gravity_x = 0.0, gravity_y = 0.0;
  std::string space_pair = "p2bubble_p1disc"; // or "p2_p0disc"
  std::string backend = "direct_lu";          // or "gmres_ilu"
  double newton_abs_tol = 1e-10, newton_rel_tol = 1e-8;
  int newton_max_iter = 50;
  double gmres_tol = 1e-12;
  int gmres_restart = 200;
  double ilut_drop_tol = 1e-6;
  int ilut_fill = 60;
  int line_search = 0;
  int output_stride = 10;
  std::string output_dir = "out";
  unsigned long seed = 1234;
  double custom_phi0 = 1.0; // constant initial phase of the "custom" scenario

  Params params() const {
    Params p;
    p.eps = eps;
    p.lambda = lambda;
    p.rho1 = rho1;
    p.rho2 = rho2;
    p.eta = eta;
    p.dt = dt;
    p.delta = delta;
    p.xi = xi;
    p.gravity = Vec2{gravity_x, gravity_y};
    return p;
  }

  NewtonConfig newton() const {
    NewtonConfig c;
    c.abs_tol = newton_abs_tol;
    c.rel_tol = newton_rel_tol;
    c.max_iter = newton_max_iter;
    if (backend == "direct_lu")
      c.backend = LinearBackend::DirectLU;
    else if (backend == "gmres_ilu")
      c.backend = LinearBackend::GmresIlu;
    else
      throw ConfigError("unknown backend '" + backend + "'");
    c.gmres_tol = gmres_tol;
    c.gmres_restart = gmres_restart;
    c.ilut_drop_tol = ilut_drop_tol;
    c.ilut_fill = ilut_fill;
    c.line_search = line_search != 0;
    return c;
  }

  bool velocity_bubble() const {
    if (space_pair == "p2bubble_p1disc")
      return true;
    if (space_pair == "p2_p0disc")
      return false;
    throw ConfigError("unknown space pair '" + space_pair + "'");
  }
};

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
} // namespace detail

inline std::string serialize_config(const RunConfig &c) {
  std::ostringstream os;
  auto put = [&os](const std::string &k, const std::string &v) {
    os << k << " = " << v << "\n";
  };
  put("scenario", c.scenario);
  put("nx", std::to_string(c.nx));
  put("ny", std::to_string(c.ny));
  put("dt", detail::fmt_double(c.dt));
  put("t_final", detail::fmt_double(c.t_final));
  put("steps", std::to_string(c.steps));
  put("eps", detail::fmt_double(c.eps));
  put("lambda", detail::fmt_double(c.lambda));
  put("rho1", detail::fmt_double(c.rho1));
  put("rho2", detail::fmt_double(c.rho2));
  put("eta", detail::fmt_double(c.eta));
  put("delta", detail::fmt_double(c.delta));
  put("xi", detail::fmt_double(c.xi));
  put("gravity_x", detail::fmt_double(c.gravity_x));
  put("gravity_y", detail::fmt_double(c.gravity_y));
  put("space_pair", c.space_pair);
  put("backend", c.backend);
  put("newton_abs_tol", detail::fmt_double(c.newton_abs_tol));
  put("newton_rel_tol", detail::fmt_double(c.newton_rel_tol));
  put("newton_max_iter", std::to_string(c.newton_max_iter));
  put("gmres_tol", detail::fmt_double(c.gmres_tol));
  put("gmres_restart", std::to_string(c.gmres_restart));
  put("ilut_drop_tol", detail::fmt_double(c.ilut_drop_tol));
  put("ilut_fill", std::to_string(c.ilut_fill));
  put("line_search", std::to_string(c.line_search));
  put("output_stride", std::to_string(c.output_stride));
  put("output_dir", c.output_dir);
  put("seed", std::to_string(c.seed));
  put("custom_phi0", detail::fmt_double(c.custom_phi0));
  return os.str();
}

inline RunConfig parse_config(const std::string &text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "scenario") c.scenario = val;
      else if (key == "nx") c.nx = std::stoi(val);
      else if (key == "ny") c.ny = std::stoi(val);
      else if (key == "dt") c.dt = std::stod(val);
      else if (key == "t_final") c.t_final = std::stod(val);
      else if (key == "steps") c.steps = std::stol(val);
      else if (key == "eps") c.eps = std::stod(val);
      else if (key == "lambda") c.lambda = std::stod(val);
      else if (key == "rho1") c.rho1 = std::stod(val);
      else if (key == "rho2") c.rho2 = std::stod(val);
      else if (key == "eta") c.eta = std::stod(val);
      else if (key == "delta") c.delta = std::stod(val);
      else if (key == "xi") c.xi = std::stod(val);
      else if (key == "gravity_x") c.gravity_x = std::stod(val);
      else if (key == "gravity_y") c.gravity_y = std::stod(val);
      else if (key == "space_pair") c.space_pair = val;
      else if (key == "backend") c.backend = val;
      else if (key == "newton_abs_tol") c.newton_abs_tol = std::stod(val);
      else if (key == "newton_rel_tol") c.newton_rel_tol = std::stod(val);
      else if (key == "newton_max_iter") c.newton_max_iter = std::stoi(val);
      else if (key == "gmres_tol") c.gmres_tol = std::stod(val);
      else if (key == "gmres_restart") c.gmres_restart = std::stoi(val);
      else if (key == "ilut_drop_tol") c.ilut_drop_tol = std::stod(val);
      else if (key == "ilut_fill") c.ilut_fill = std::stoi(val);
      else if (key == "line_search") c.line_search = std::stoi(val);
      else if (key == "output_stride") c.output_stride = std::stoi(val);
      else if (key == "output_dir") c.output_dir = val;
      else if (key == "seed") c.seed = std::stoul(val);
      else if (key == "custom_phi0") c.custom_phi0 = std::stod(val);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const std::invalid_argument &) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    } catch (const std::out_of_range &) {
      throw ConfigError("line " + std::to_string(lineno) + ": value out of range for '" + key + "'");
    }
  }
  return c;
}

inline RunConfig load_config(const std::string &path) {
  std::ifstream f(path);
  if (!f)
    throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// --- legacy-ASCII VTK output ---

// Velocity display field: scaled down to a 5e-2 cap on its largest nodal
// magnitude, left unchanged below the cap.
inline double velocity_scale_factor(const FeSpaces &fes, const Eigen::VectorXd &u) {
  double umax = 0.0;
  for (int d = 0; d < fes.nv + fes.ne; ++d) {
    const Vec2 v{u[2 * d], u[2 * d + 1]};
    umax = std::max(umax, v.norm());
  }
  const double cap = 5e-2;
  return (umax >= cap && umax > 0.0) ? cap / umax : 1.0;
}

inline void write_vtk(const FeSpaces &fes, const State &s, const std::string &path) {
  std::ofstream f(path);
  if (!f)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  const auto &m = *fes.mesh;
  f << "# vtk DataFile Version 3.0\n";
  f << "chns fields\n";
  f << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  f << "POINTS " << m.n_vertices() << " double\n";
  for (const auto &v : m.vertices)
    f << detail::fmt_double(v.x) << " " << detail::fmt_double(v.y) << " 0\n";
  f << "CELLS " << m.n_elements() << " " << 4 * m.n_elements() << "\n";
  for (const auto &el : m.elements)
    f << "3 " << el[0] << " " << el[1] << " " << el[2] << "\n";
  f << "CELL_TYPES " << m.n_elements() << "\n";
  for (std::size_t i = 0; i < m.n_elements(); ++i)
    f << "5\n";

  f << "CELL_DATA " << m.n_elements() << "\n";
  f << "SCALARS phi double 1\nLOOKUP_TABLE default\n";
  for (int K = 0; K < fes.n_phi; ++K)
    f << detail::fmt_double(s.phi.coeffs[K]) << "\n";
  f << "SCALARS p double 1\nLOOKUP_TABLE default\n";
  for (int K = 0; K < fes.nel; ++K) {
    const double pv = fes.pressure_p1
                          ? (s.p.coeffs[3 * K] + s.p.coeffs[3 * K + 1] + s.p.coeffs[3 * K + 2]) / 3.0
                          : s.p.coeffs[K];
    f << detail::fmt_double(pv) << "\n";
  }

  f << "POINT_DATA " << m.n_vertices() << "\n";
  f << "SCALARS phi_h double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < fes.nv; ++i)
    f << detail::fmt_double(s.phi_h.coeffs[i]) << "\n";
  f << "SCALARS mu double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < fes.nv; ++i)
    f << detail::fmt_double(s.mu.coeffs[i]) << "\n";
  f << "VECTORS u double\n";
  for (int i = 0; i < fes.nv; ++i)
    f << detail::fmt_double(s.u.coeffs[2 * i]) << " "
      << detail::fmt_double(s.u.coeffs[2 * i + 1]) << " 0\n";
  const double sc = velocity_scale_factor(fes, s.u.coeffs);
  f << "VECTORS u_scaled double\n";
  for (int i = 0; i < fes.nv; ++i)
    f << detail::fmt_double(sc * s.u.coeffs[2 * i]) << " "
      << detail::fmt_double(sc * s.u.coeffs[2 * i + 1]) << " 0\n";
}

// Minimal reader for round-trip tests: returns the named CELL_DATA scalar.
inline std::vector<double> read_vtk_cell_scalars(const std::string &path,
                                                 const std::string &name) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  std::size_t ncells = 0;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string tok;
    is >> tok;
    if (tok == "CELL_DATA") {
      is >> ncells;
    } else if (tok == "SCALARS" && ncells > 0) {
      std::string nm;
      is >> nm;
      if (nm == name) {
        std::getline(f, line); // LOOKUP_TABLE
        std::vector<double> vals(ncells);
        for (auto &v : vals)
          f >> v;
        return vals;
      }
    }
  }
  throw std::runtime_error("scalar '" + name + "' not found in '" + path + "'");
}

// --- diagnostics CSV ---

inline const char *diagnostics_csv_header() {
  return "t,mass,phi_min,phi_max,phi_h_min,phi_h_max,E,E_kin,E_grad,E_pot,defect,"
         "lemma34,newton_iters,xi_p_inf";
}

inline std::string diagnostics_csv_row(const DiagnosticsRecord &d) {
  std::ostringstream os;
  os << detail::fmt_double(d.t) << "," << detail::fmt_double(d.mass) << ","
     << detail::fmt_double(d.phi_min) << "," << detail::fmt_double(d.phi_max) << ","
     << detail::fmt_double(d.phi_h_min) << "," << detail::fmt_double(d.phi_h_max) << ","
     << detail::fmt_double(d.E) << "," << detail::fmt_double(d.E_kin) << ","
     << detail::fmt_double(d.E_grad) << "," << detail::fmt_double(d.E_pot) << ","
     << detail::fmt_double(d.defect) << "," << detail::fmt_double(d.lemma_cancel) << ","
     << d.newton_iters << "," << detail::fmt_double(d.xi_p_inf);
  return os.str();
}

// --- exact binary state persistence (restart determinism) ---

inline void write_state(const FeSpaces &fes, const State &s, const std::string &path) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  const char magic[8] = {'C', 'H', 'N', 'S', 'S', 'T', '1', '\n'};
  f.write(magic, 8);
  const std::int64_t sizes[4] = {fes.n_u, fes.n_p, fes.n_phi, fes.n_mu};
  f.write(reinterpret_cast<const char *>(sizes), sizeof sizes);
  auto dump = [&f](const Eigen::VectorXd &v) {
    f.write(reinterpret_cast<const char *>(v.data()),
            static_cast<std::streamsize>(sizeof(double)) * v.size());
  };
  dump(s.u.coeffs);
  dump(s.p.coeffs);
  dump(s.phi.coeffs);
  dump(s.mu.coeffs);
}

inline State read_state(const FeSpaces &fes, const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 8) != "CHNSST1\n")
    throw std::runtime_error("'" + path + "' is not a state file");
  std::int64_t sizes[4];
  f.read(reinterpret_cast<char *>(sizes), sizeof sizes);
  if (sizes[0] != fes.n_u || sizes[1] != fes.n_p || sizes[2] != fes.n_phi ||
      sizes[3] != fes.n_mu)
    throw std::runtime_error("state file '" + path + "' does not match the mesh/spaces");
  State s;
  s.u = Field{fes.velocity_bubble ? SpaceKind::P2BubbleVec : SpaceKind::P2Vec,
              Eigen::VectorXd(fes.n_u)};
  s.p = Field{fes.pressure_p1 ? SpaceKind::P1Disc : SpaceKind::P0Disc,
              Eigen::VectorXd(fes.n_p)};
  s.phi = Field{SpaceKind::P0Disc, Eigen::VectorXd(fes.n_phi)};
  s.mu = Field{SpaceKind::P1Cont, Eigen::VectorXd(fes.n_mu)};
  auto slurp = [&f](Eigen::VectorXd &v) {
    f.read(reinterpret_cast<char *>(v.data()),
           static_cast<std::streamsize>(sizeof(double)) * v.size());
  };
  slurp(s.u.coeffs);
  slurp(s.p.coeffs);
  slurp(s.phi.coeffs);
  slurp(s.mu.coeffs);
  if (!f)
    throw std::runtime_error("truncated state file '" + path + "'");
  s.refresh_caches(fes);
  return s;
}

} // namespace chns

#endif
