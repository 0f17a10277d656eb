#ifndef CHNS_QUADRATURE_HPP
#define CHNS_QUADRATURE_HPP

#include <array>
#include <cmath>

namespace chns {

// Volume rule on the reference triangle {(0,0),(1,0),(0,1)} in barycentric
// coordinates; weights sum to 1 so that  int_K f ~ |K| * sum_q w_q f(x_q).
// Degree-6 exact, 12 points (Dunavant).
struct TriQuadPoint {
  double l1, l2, l3; // barycentric coordinates
  double w;
};

inline const std::array<TriQuadPoint, 12> &tri_quadrature() {
  static const std::array<TriQuadPoint, 12> pts = [] {
    std::array<TriQuadPoint, 12> q{};
    const double a1 = 0.873821971016996, b1 = 0.063089014491502,
                 w1 = 0.050844906370207;
    const double a2 = 0.501426509658179, b2 = 0.249286745170910,
                 w2 = 0.116786275726379;
    const double a3 = 0.636502499121399, b3 = 0.310352451033785,
                 c3 = 0.053145049844816, w3 = 0.082851075618374;
    int k = 0;
    auto put = [&](double x, double y, double z, double w) {
      q[k++] = TriQuadPoint{x, y, z, w};
    };
    put(a1, b1, b1, w1);
    put(b1, a1, b1, w1);
    put(b1, b1, a1, w1);
    put(a2, b2, b2, w2);
    put(b2, a2, b2, w2);
    put(b2, b2, a2, w2);
    put(a3, b3, c3, w3);
    put(a3, c3, b3, w3);
    put(b3, a3, c3, w3);
    put(b3, c3, a3, w3);
    put(c3, a3, b3, w3);
    put(c3, b3, a3, w3);
    return q;
  }();
  return pts;
}

// 3-point Gauss-Legendre on [0,1] (degree-5 exact); weights sum to 1 so that
// int_e f ~ |e| * sum_q w_q f(x_q).
struct EdgeQuadPoint {
  double s; // parameter along the edge in [0,1]
  double w;
};

inline const std::array<EdgeQuadPoint, 3> &edge_quadrature() {
  static const std::array<EdgeQuadPoint, 3> pts = [] {
    const double r = 0.5 * std::sqrt(3.0 / 5.0);
    return std::array<EdgeQuadPoint, 3>{EdgeQuadPoint{0.5 - r, 5.0 / 18.0},
                                        EdgeQuadPoint{0.5, 8.0 / 18.0},
                                        EdgeQuadPoint{0.5 + r, 5.0 / 18.0}};
  }();
  return pts;
}

} // namespace chns

#endif
