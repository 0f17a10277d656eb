#ifndef CHNS_TESTS_FIXTURES_HPP
#define CHNS_TESTS_FIXTURES_HPP

#include <memory>
#include <random>

#include "chns/fespace.hpp"
#include "chns/mesh.hpp"

namespace fixtures {

using namespace chns;

struct Setup {
  std::unique_ptr<StructuredTriMesh> mesh;
  std::unique_ptr<FeSpaces> fes;
};

inline Setup make_setup(int nx, bool validate = true, bool bubble = true) {
  Setup s;
  s.mesh = std::make_unique<StructuredTriMesh>(
      build_mesh(Rectangle{-0.5, 0.5, -0.5, 0.5}, nx, nx));
  if (validate)
    validate_hypothesis(*s.mesh);
  s.fes = std::make_unique<FeSpaces>(*s.mesh, bubble);
  return s;
}

// Two triangles sharing the unit vertical edge (1,0)-(1,1); owner normal +x.
inline Setup make_unit_edge_pair() {
  Setup s;
  s.mesh = std::make_unique<StructuredTriMesh>(build_from_cells(
      {{0, 0}, {1, 0}, {1, 1}, {2, 0}}, {{0, 1, 2}, {1, 3, 2}}));
  s.mesh->hypothesis_ok = true; // fixture; orthogonality not required here
  s.fes = std::make_unique<FeSpaces>(*s.mesh);
  return s;
}

// Thin pair with shared unit edge (0,0)-(0,1) and barycenter distance 0.1;
// satisfies the orthogonality hypothesis exactly.
inline Setup make_thin_edge_pair() {
  Setup s;
  s.mesh = std::make_unique<StructuredTriMesh>(build_from_cells(
      {{-0.15, 0}, {0, 0}, {0, 1}, {0.15, 0}}, {{0, 1, 2}, {1, 3, 2}}));
  validate_hypothesis(*s.mesh);
  s.fes = std::make_unique<FeSpaces>(*s.mesh);
  return s;
}

inline Eigen::VectorXd random_vector(std::mt19937 &rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i)
    v[i] = d(rng);
  return v;
}

// Constant velocity field (all scalar nodes set, bubble dofs zero).
inline Eigen::VectorXd constant_velocity(const FeSpaces &fes, Vec2 value) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(fes.n_u);
  for (int d = 0; d < fes.nv + fes.ne; ++d) {
    u[2 * d] = value.x;
    u[2 * d + 1] = value.y;
  }
  return u;
}

inline Eigen::VectorXd random_velocity(std::mt19937 &rng, const FeSpaces &fes,
                                       double scale = 1.0, bool zero_boundary = false) {
  Eigen::VectorXd u = random_vector(rng, fes.n_u, -scale, scale);
  if (zero_boundary)
    for (int d = 0; d < fes.n_u_scalar; ++d)
      if (fes.u_scalar_boundary[d]) {
        u[2 * d] = 0.0;
        u[2 * d + 1] = 0.0;
      }
  return u;
}

} // namespace fixtures

#endif
