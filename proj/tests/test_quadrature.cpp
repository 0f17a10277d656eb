#include <catch2/catch_amalgamated.hpp>

#include "chns/mesh.hpp"
#include "chns/quadrature.hpp"

using namespace chns;

namespace {
// Exact integral of l1^a l2^b l3^c over the reference triangle (area 1/2):
// a! b! c! / (a+b+c+2)! * 2 * |T|, with |T| = 1/2.
double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }
double exact_bary_monomial(int a, int b, int c) {
  return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2);
}
} // namespace

TEST_CASE("triangle rule integrates barycentric monomials up to degree 6") {
  const auto &q = tri_quadrature();
  double wsum = 0.0;
  for (const auto &p : q)
    wsum += p.w;
  CHECK_THAT(wsum, Catch::Matchers::WithinRel(1.0, 1e-14));

  for (int a = 0; a <= 6; ++a)
    for (int b = 0; a + b <= 6; ++b) {
      const int c = 0;
      double val = 0.0;
      for (const auto &p : q)
        val += p.w * std::pow(p.l1, a) * std::pow(p.l2, b) * std::pow(p.l3, c);
      // weights are normalized by the area, so compare means
      const double exact = exact_bary_monomial(a, b, c) / 0.5;
      CHECK_THAT(val, Catch::Matchers::WithinRel(exact, 1e-13));
    }
}

TEST_CASE("edge rule integrates polynomials up to degree 5") {
  const auto &q = edge_quadrature();
  for (int d = 0; d <= 5; ++d) {
    double val = 0.0;
    for (const auto &p : q)
      val += p.w * std::pow(p.s, d);
    CHECK_THAT(val, Catch::Matchers::WithinRel(1.0 / (d + 1), 1e-14));
  }
}

TEST_CASE("degree-6 exactness on a physical element") {
  // int over conv{(0,0),(1,0),(0,1)} of x^2 = 1/12
  StructuredTriMesh m = build_from_cells({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}});
  const auto &q = tri_quadrature();
  double val = 0.0;
  for (const auto &p : q) {
    const Vec2 x = m.point(0, p.l1, p.l2, p.l3);
    val += p.w * x.x * x.x;
  }
  val *= m.areas[0];
  CHECK_THAT(val, Catch::Matchers::WithinRel(1.0 / 12.0, 1e-14));
}
