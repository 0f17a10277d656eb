#ifndef CHNS_FESPACE_HPP
#define CHNS_FESPACE_HPP

#include <array>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "chns/mesh.hpp"
#include "chns/quadrature.hpp"

namespace chns {

enum class SpaceKind { P0Disc, P1Cont, P1Disc, P2Vec, P2BubbleVec };

struct Field {
  SpaceKind kind;
  Eigen::VectorXd coeffs;
};

// P2(+bubble) scalar shape functions in barycentric coordinates.
// Local nodes: 0..2 vertices, 3..5 midpoint of edge opposite vertex (a-3),
// 6 the interior cubic bubble (only when enabled).
struct P2Shape {
  std::array<double, 7> N{};
  std::array<std::array<double, 3>, 7> dNdl{}; // derivative wrt (l1,l2,l3)
};

inline P2Shape p2_shape(double l1, double l2, double l3) {
  P2Shape s;
  const std::array<double, 3> l{l1, l2, l3};
  for (int i = 0; i < 3; ++i) {
    s.N[i] = l[i] * (2.0 * l[i] - 1.0);
    s.dNdl[i][i] = 4.0 * l[i] - 1.0;
  }
  for (int k = 0; k < 3; ++k) {
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    s.N[3 + k] = 4.0 * l[i] * l[j];
    s.dNdl[3 + k][i] = 4.0 * l[j];
    s.dNdl[3 + k][j] = 4.0 * l[i];
  }
  s.N[6] = 27.0 * l1 * l2 * l3;
  s.dNdl[6][0] = 27.0 * l2 * l3;
  s.dNdl[6][1] = 27.0 * l1 * l3;
  s.dNdl[6][2] = 27.0 * l1 * l2;
  return s;
}

// Discrete spaces bound to one mesh: dof layouts, the lumped P1 mass, the
// consistent P1 mass/stiffness operators, and the P0 -> P1 lumped projection
// written as a sparse map (used both by assembly and by Jacobian chain rule).
class FeSpaces {
public:
  const StructuredTriMesh *mesh = nullptr;
  bool velocity_bubble = true; // false selects the (P2, P0-disc) pair
  bool pressure_p1 = true;

  int nv = 0, ne = 0, nel = 0;
  int n_u_scalar = 0; // dofs of one velocity component
  int n_u = 0;        // both components, node-interleaved
  int n_p = 0;
  int n_phi = 0;
  int n_mu = 0;
  int u_nodes_per_elem = 0; // 6 or 7 scalar nodes

  Eigen::VectorXd lumped_mass;              // m_i = sum_{K:i} |K|/3
  Eigen::SparseMatrix<double> mass_P1;      // consistent P1 mass
  Eigen::SparseMatrix<double> stiff_P1;     // P1 stiffness
  Eigen::SparseMatrix<double> lump_map;     // nv x nel, (Pi1h of P0)_i = (L phi)_i
  std::vector<char> u_scalar_boundary;      // per scalar velocity dof

  explicit FeSpaces(const StructuredTriMesh &m, bool bubble = true)
      : mesh(&m), velocity_bubble(bubble), pressure_p1(bubble) {
    nv = static_cast<int>(m.n_vertices());
    ne = static_cast<int>(m.n_edges());
    nel = static_cast<int>(m.n_elements());
    u_nodes_per_elem = velocity_bubble ? 7 : 6;
    n_u_scalar = nv + ne + (velocity_bubble ? nel : 0);
    n_u = 2 * n_u_scalar;
    n_p = pressure_p1 ? 3 * nel : nel;
    n_phi = nel;
    n_mu = nv;
    build_p1_operators();
    mark_boundary_dofs();
  }

  // Scalar velocity dof of local node a (0..6) in element K.
  int u_scalar_dof(int K, int a) const {
    const auto &el = mesh->elements[static_cast<std::size_t>(K)];
    if (a < 3)
      return el[a];
    if (a < 6)
      return nv + mesh->element_edges[static_cast<std::size_t>(K)][a - 3];
    return nv + ne + K;
  }
  int u_dof(int K, int a, int comp) const { return 2 * u_scalar_dof(K, a) + comp; }

  int p_dof(int K, int a) const { return pressure_p1 ? 3 * K + a : K; }
  int p_dofs_per_elem() const { return pressure_p1 ? 3 : 1; }

  // --- field evaluation at a barycentric point of element K ---

  double eval_p0(const Eigen::VectorXd &c, int K) const { return c[K]; }

  double eval_p1c(const Eigen::VectorXd &c, int K, const std::array<double, 3> &l) const {
    const auto &el = mesh->elements[static_cast<std::size_t>(K)];
    return c[el[0]] * l[0] + c[el[1]] * l[1] + c[el[2]] * l[2];
  }

  Vec2 grad_p1c(const Eigen::VectorXd &c, int K) const {
    const auto &el = mesh->elements[static_cast<std::size_t>(K)];
    const auto &g = mesh->grad_lambda[static_cast<std::size_t>(K)];
    Vec2 r{0, 0};
    for (int i = 0; i < 3; ++i)
      r = r + g[i] * c[el[i]];
    return r;
  }

  double eval_p1d(const Eigen::VectorXd &c, int K, const std::array<double, 3> &l) const {
    return c[3 * K] * l[0] + c[3 * K + 1] * l[1] + c[3 * K + 2] * l[2];
  }

  double eval_pressure(const Eigen::VectorXd &c, int K, const std::array<double, 3> &l) const {
    return pressure_p1 ? eval_p1d(c, K, l) : c[K];
  }

  Vec2 eval_u(const Eigen::VectorXd &c, int K, const std::array<double, 3> &l) const {
    const P2Shape s = p2_shape(l[0], l[1], l[2]);
    Vec2 r{0, 0};
    for (int a = 0; a < u_nodes_per_elem; ++a) {
      const int d = u_scalar_dof(K, a);
      r.x += c[2 * d] * s.N[a];
      r.y += c[2 * d + 1] * s.N[a];
    }
    return r;
  }

  // Rows are components, columns are x/y derivatives: G[i][j] = d u_i / d x_j.
  std::array<std::array<double, 2>, 2>
  grad_u(const Eigen::VectorXd &c, int K, const std::array<double, 3> &l) const {
    const P2Shape s = p2_shape(l[0], l[1], l[2]);
    const auto &gl = mesh->grad_lambda[static_cast<std::size_t>(K)];
    std::array<std::array<double, 2>, 2> G{{{0, 0}, {0, 0}}};
    for (int a = 0; a < u_nodes_per_elem; ++a) {
      const Vec2 gN{s.dNdl[a][0] * gl[0].x + s.dNdl[a][1] * gl[1].x + s.dNdl[a][2] * gl[2].x,
                    s.dNdl[a][0] * gl[0].y + s.dNdl[a][1] * gl[1].y + s.dNdl[a][2] * gl[2].y};
      const int d = u_scalar_dof(K, a);
      G[0][0] += c[2 * d] * gN.x;
      G[0][1] += c[2 * d] * gN.y;
      G[1][0] += c[2 * d + 1] * gN.x;
      G[1][1] += c[2 * d + 1] * gN.y;
    }
    return G;
  }

private:
  void build_p1_operators() {
    const auto &m = *mesh;
    lumped_mass = Eigen::VectorXd::Zero(nv);
    std::vector<Eigen::Triplet<double>> tm, tk;
    for (int K = 0; K < nel; ++K) {
      const auto &el = m.elements[static_cast<std::size_t>(K)];
      const double A = m.areas[static_cast<std::size_t>(K)];
      const auto &g = m.grad_lambda[static_cast<std::size_t>(K)];
      for (int i = 0; i < 3; ++i) {
        lumped_mass[el[i]] += A / 3.0;
        for (int j = 0; j < 3; ++j) {
          tm.emplace_back(el[i], el[j], A * (i == j ? 1.0 / 6.0 : 1.0 / 12.0));
          tk.emplace_back(el[i], el[j], A * g[i].dot(g[j]));
        }
      }
    }
    mass_P1.resize(nv, nv);
    mass_P1.setFromTriplets(tm.begin(), tm.end());
    stiff_P1.resize(nv, nv);
    stiff_P1.setFromTriplets(tk.begin(), tk.end());

    std::vector<Eigen::Triplet<double>> tl;
    for (int K = 0; K < nel; ++K) {
      const auto &el = m.elements[static_cast<std::size_t>(K)];
      const double A = m.areas[static_cast<std::size_t>(K)];
      for (int i = 0; i < 3; ++i)
        tl.emplace_back(el[i], K, (A / 3.0) / lumped_mass[el[i]]);
    }
    lump_map.resize(nv, nel);
    lump_map.setFromTriplets(tl.begin(), tl.end());
  }

  void mark_boundary_dofs() {
    u_scalar_boundary.assign(static_cast<std::size_t>(n_u_scalar), 0);
    for (const auto &be : mesh->boundary_edges) {
      u_scalar_boundary[mesh->edges[be.edge][0]] = 1;
      u_scalar_boundary[mesh->edges[be.edge][1]] = 1;
      u_scalar_boundary[static_cast<std::size_t>(nv + be.edge)] = 1;
    }
  }

  mutable std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> mass_solver_;

public:
  const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> &mass_P1_factor() const {
    if (!mass_solver_) {
      mass_solver_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
      mass_solver_->compute(mass_P1);
      if (mass_solver_->info() != Eigen::Success)
        throw std::runtime_error("P1 mass matrix factorization failed");
    }
    return *mass_solver_;
  }
};

namespace detail {
// Mean of g over a triangle by recursive subdivision. Tracks the sampled
// range so callers can restore the exact-arithmetic property that a
// positive-weight mean lies inside the pointwise range of g.
inline double adaptive_mean(const std::function<double(Vec2)> &g, Vec2 a, Vec2 b, Vec2 c,
                            double coarse, int depth, double &gmin, double &gmax) {
  auto mean6 = [&](Vec2 p, Vec2 q, Vec2 r) {
    double v = 0.0;
    for (const auto &qp : tri_quadrature()) {
      const double gv = g(p * qp.l1 + q * qp.l2 + r * qp.l3);
      gmin = std::min(gmin, gv);
      gmax = std::max(gmax, gv);
      v += qp.w * gv;
    }
    return v;
  };
  const Vec2 ab = (a + b) * 0.5, bc = (b + c) * 0.5, ca = (c + a) * 0.5;
  const double m1 = mean6(a, ab, ca), m2 = mean6(ab, b, bc), m3 = mean6(ca, bc, c),
               m4 = mean6(ab, bc, ca);
  const double fine = 0.25 * (m1 + m2 + m3 + m4);
  if (depth >= 12 || std::abs(fine - coarse) <= 1e-13 + 1e-12 * std::abs(fine))
    return fine;
  return 0.25 * (adaptive_mean(g, a, ab, ca, m1, depth + 1, gmin, gmax) +
                 adaptive_mean(g, ab, b, bc, m2, depth + 1, gmin, gmax) +
                 adaptive_mean(g, ca, bc, c, m3, depth + 1, gmin, gmax) +
                 adaptive_mean(g, ab, bc, ca, m4, depth + 1, gmin, gmax));
}
} // namespace detail

// Elementwise mean of a pointwise function: (Pi0 g)_K = (1/|K|) int_K g.
// Adaptive so that non-polynomial initial data (tanh interfaces) is projected
// to near machine accuracy; the result is clamped to the sampled range to
// keep the bound-preservation of means exact in floating point.
inline Field project_P0(const FeSpaces &fes,
                        const std::function<double(Vec2)> &g) {
  const auto &m = *fes.mesh;
  Field f{SpaceKind::P0Disc, Eigen::VectorXd::Zero(fes.n_phi)};
  const auto &q = tri_quadrature();
  for (int K = 0; K < fes.n_phi; ++K) {
    double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    double v = 0.0;
    for (const auto &qp : q) {
      const double gv = g(m.point(K, qp.l1, qp.l2, qp.l3));
      gmin = std::min(gmin, gv);
      gmax = std::max(gmax, gv);
      v += qp.w * gv;
    }
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    const double mean = detail::adaptive_mean(g, m.vertices[el[0]], m.vertices[el[1]],
                                              m.vertices[el[2]], v, 0, gmin, gmax);
    f.coeffs[K] = std::clamp(mean, gmin, gmax);
  }
  return f;
}

// Exact elementwise mean of a discrete field.
inline Field project_P0(const FeSpaces &fes, const Field &g) {
  Field f{SpaceKind::P0Disc, Eigen::VectorXd::Zero(fes.n_phi)};
  switch (g.kind) {
  case SpaceKind::P0Disc:
    f.coeffs = g.coeffs;
    break;
  case SpaceKind::P1Cont:
    for (int K = 0; K < fes.n_phi; ++K) {
      const auto &el = fes.mesh->elements[static_cast<std::size_t>(K)];
      f.coeffs[K] = (g.coeffs[el[0]] + g.coeffs[el[1]] + g.coeffs[el[2]]) / 3.0;
    }
    break;
  case SpaceKind::P1Disc:
    for (int K = 0; K < fes.n_phi; ++K)
      f.coeffs[K] = (g.coeffs[3 * K] + g.coeffs[3 * K + 1] + g.coeffs[3 * K + 2]) / 3.0;
    break;
  default:
    throw std::invalid_argument("project_P0: unsupported source field");
  }
  return f;
}

// L2 projection onto continuous P1 via the consistent mass matrix.
inline Field project_P1(const FeSpaces &fes,
                        const std::function<double(Vec2)> &g) {
  const auto &m = *fes.mesh;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(fes.n_mu);
  const auto &q = tri_quadrature();
  for (int K = 0; K < fes.nel; ++K) {
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const double gv = A * qp.w * g(m.point(K, qp.l1, qp.l2, qp.l3));
      rhs[el[0]] += gv * qp.l1;
      rhs[el[1]] += gv * qp.l2;
      rhs[el[2]] += gv * qp.l3;
    }
  }
  Field f{SpaceKind::P1Cont, fes.mass_P1_factor().solve(rhs)};
  if (fes.mass_P1_factor().info() != Eigen::Success)
    throw std::runtime_error("P1 projection solve failed");
  return f;
}

// L2 projection of an elementwise-constant vector (e.g. the broken gradient
// of a P1 function), one component at a time.
inline std::array<Field, 2> project_P1_vector(const FeSpaces &fes,
                                              const std::vector<Vec2> &cellwise) {
  const auto &m = *fes.mesh;
  Eigen::VectorXd rx = Eigen::VectorXd::Zero(fes.n_mu), ry = rx;
  for (int K = 0; K < fes.nel; ++K) {
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    const double w = m.areas[static_cast<std::size_t>(K)] / 3.0;
    for (int i = 0; i < 3; ++i) {
      rx[el[i]] += w * cellwise[static_cast<std::size_t>(K)].x;
      ry[el[i]] += w * cellwise[static_cast<std::size_t>(K)].y;
    }
  }
  const auto &fac = fes.mass_P1_factor();
  return {Field{SpaceKind::P1Cont, fac.solve(rx)}, Field{SpaceKind::P1Cont, fac.solve(ry)}};
}

// Mass-lumped projection onto continuous P1: nodal value (g, psi_i) / m_i.
// P0 inputs use the exact convex-combination weights, which is what makes the
// projection preserve pointwise bounds.
inline Field project_P1_lumped(const FeSpaces &fes, const Field &g) {
  if (g.kind == SpaceKind::P1Cont)
    return g; // identity on its range under the lumped product
  if (g.kind != SpaceKind::P0Disc)
    throw std::invalid_argument("project_P1_lumped: expected a P0 or P1 field");
  Field f{SpaceKind::P1Cont, fes.lump_map * g.coeffs};
  return f;
}

inline Field project_P1_lumped(const FeSpaces &fes,
                               const std::function<double(Vec2)> &g) {
  const auto &m = *fes.mesh;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(fes.n_mu);
  const auto &q = tri_quadrature();
  for (int K = 0; K < fes.nel; ++K) {
    const auto &el = m.elements[static_cast<std::size_t>(K)];
    const double A = m.areas[static_cast<std::size_t>(K)];
    for (const auto &qp : q) {
      const double gv = A * qp.w * g(m.point(K, qp.l1, qp.l2, qp.l3));
      rhs[el[0]] += gv * qp.l1;
      rhs[el[1]] += gv * qp.l2;
      rhs[el[2]] += gv * qp.l3;
    }
  }
  Field f{SpaceKind::P1Cont, rhs.cwiseQuotient(fes.lumped_mass)};
  return f;
}

// Trapezoidal-rule scalar product on continuous P1.
inline double lumped_inner(const FeSpaces &fes, const Field &a, const Field &b) {
  if (a.kind != SpaceKind::P1Cont || b.kind != SpaceKind::P1Cont)
    throw std::invalid_argument("lumped_inner: both fields must be continuous P1");
  return (fes.lumped_mass.array() * a.coeffs.array() * b.coeffs.array()).sum();
}

// Initial data: P0 fields by elementwise mean, velocity by nodal
// interpolation at vertices and edge midpoints with zero bubble dofs.
inline Field interpolate_initial_phi(const FeSpaces &fes,
                                     const std::function<double(Vec2)> &phi0) {
  return project_P0(fes, phi0);
}

inline Field interpolate_initial_velocity(const FeSpaces &fes,
                                          const std::function<Vec2(Vec2)> &u0) {
  const auto &m = *fes.mesh;
  Field f{fes.velocity_bubble ? SpaceKind::P2BubbleVec : SpaceKind::P2Vec,
          Eigen::VectorXd::Zero(fes.n_u)};
  for (int v = 0; v < fes.nv; ++v) {
    const Vec2 val = u0(m.vertex(v));
    f.coeffs[2 * v] = val.x;
    f.coeffs[2 * v + 1] = val.y;
  }
  for (int e = 0; e < fes.ne; ++e) {
    const Vec2 mid = (m.vertex(m.edges[e][0]) + m.vertex(m.edges[e][1])) * 0.5;
    const Vec2 val = u0(mid);
    f.coeffs[2 * (fes.nv + e)] = val.x;
    f.coeffs[2 * (fes.nv + e) + 1] = val.y;
  }
  return f;
}

} // namespace chns

#endif
