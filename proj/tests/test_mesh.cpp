#include <catch2/catch_amalgamated.hpp>

#include "chns/mesh.hpp"

using namespace chns;

namespace {
const Rectangle unit_square{-0.5, 0.5, -0.5, 0.5};
}

TEST_CASE("2x2 checkerboard mesh has the expected counts") {
  StructuredTriMesh m = build_mesh(unit_square, 2, 2);
  CHECK(m.n_vertices() == 9);
  CHECK(m.n_elements() == 8);
  CHECK(m.interior_edges.size() == 8);
  CHECK(m.boundary_edges.size() == 8);
  // Euler relation with one outer face
  CHECK(static_cast<long>(m.n_vertices()) - static_cast<long>(m.n_edges()) +
            static_cast<long>(m.n_elements()) ==
        1);
}

TEST_CASE("element areas are positive and sum to the domain area") {
  for (int nx : {1, 2, 3, 5, 8}) {
    StructuredTriMesh m = build_mesh(unit_square, nx, nx);
    double sum = 0.0;
    for (double a : m.areas) {
      CHECK(a > 0.0);
      sum += a;
    }
    CHECK_THAT(sum, Catch::Matchers::WithinRel(unit_square.area(), 1e-14));
  }
}

TEST_CASE("barycenter distances on the 2x2 mesh") {
  StructuredTriMesh m = build_mesh(unit_square, 2, 2);
  const double h = 0.5;
  const double d_diag = std::sqrt(2.0) / 3.0 * h;
  const double d_axis = 2.0 / 3.0 * h;
  for (const auto &ie : m.interior_edges) {
    const Vec2 a = m.vertex(m.edges[ie.edge][0]);
    const Vec2 b = m.vertex(m.edges[ie.edge][1]);
    const bool axis_parallel = std::abs(a.x - b.x) < 1e-15 || std::abs(a.y - b.y) < 1e-15;
    const double expect = axis_parallel ? d_axis : d_diag;
    CHECK_THAT(ie.D_e, Catch::Matchers::WithinRel(expect, 1e-13));
  }
}

TEST_CASE("normals point from owner to neighbor and D_e is the normal gap") {
  StructuredTriMesh m = build_mesh(unit_square, 4, 4);
  for (const auto &ie : m.interior_edges) {
    CHECK(ie.K < ie.L);
    const Vec2 seg = m.barycenters[ie.L] - m.barycenters[ie.K];
    CHECK_THAT(ie.normal.dot(seg), Catch::Matchers::WithinRel(ie.D_e, 1e-12));
    CHECK_THAT(ie.normal.norm(), Catch::Matchers::WithinRel(1.0, 1e-14));
  }
}

TEST_CASE("boundary edge normals point out of the domain") {
  StructuredTriMesh m = build_mesh(unit_square, 3, 3);
  for (const auto &be : m.boundary_edges) {
    const Vec2 a = m.vertex(m.edges[be.edge][0]);
    const Vec2 b = m.vertex(m.edges[be.edge][1]);
    const Vec2 mid = (a + b) * 0.5;
    // moving a bit along the normal must leave the rectangle
    const Vec2 probe = mid + be.normal * 1e-6;
    const bool outside = probe.x < unit_square.x0 || probe.x > unit_square.x1 ||
                         probe.y < unit_square.y0 || probe.y > unit_square.y1;
    CHECK(outside);
  }
}

TEST_CASE("checkerboard meshes satisfy the orthogonality hypothesis") {
  for (int nx : {1, 2, 4, 7}) {
    StructuredTriMesh m = build_mesh(unit_square, nx, nx);
    CHECK(validate_hypothesis(m) <= 1e-12);
    CHECK(m.hypothesis_ok);
  }
}

TEST_CASE("uniform-diagonal splitting is rejected") {
  // 2x2 squares all cut along the main diagonal
  std::vector<Vec2> verts;
  const double h = 0.5;
  for (int j = 0; j <= 2; ++j)
    for (int i = 0; i <= 2; ++i)
      verts.push_back({-0.5 + i * h, -0.5 + j * h});
  auto vid = [](int i, int j) { return j * 3 + i; };
  std::vector<std::array<int, 3>> cells;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
      cells.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  StructuredTriMesh m = build_from_cells(std::move(verts), std::move(cells));
  double defect = 0.0;
  try {
    validate_hypothesis(m);
    FAIL("expected HypothesisViolation");
  } catch (const HypothesisViolation &e) {
    defect = e.relative_defect;
  }
  CHECK(defect > 0.1); // relative to h
  CHECK_FALSE(m.hypothesis_ok);
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(build_mesh(unit_square, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_mesh(unit_square, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_mesh(Rectangle{0, 0, 0, 1}, 2, 2), std::invalid_argument);
}

TEST_CASE("1x1 mesh: the single diagonal interior edge is orthogonal") {
  StructuredTriMesh m = build_mesh(unit_square, 1, 1);
  REQUIRE(m.interior_edges.size() == 1);
  CHECK(validate_hypothesis(m) <= 1e-14);
}
