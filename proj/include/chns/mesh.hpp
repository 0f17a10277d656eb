#ifndef CHNS_MESH_HPP
#define CHNS_MESH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "chns/errors.hpp"

namespace chns {

struct Vec2 {
  double x = 0.0, y = 0.0;
  Vec2 operator+(const Vec2 &o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2 &o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2 &o) const { return x * o.x + y * o.y; }
  double cross(const Vec2 &o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Rectangle {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
};

// Interior edge with owner/neighbor bookkeeping. The unit normal points from
// the owner K into L; D_e is the distance between the two barycenters.
struct InteriorEdge {
  int edge = -1;      // global edge index
  int K = -1, L = -1; // owner and neighbor element (K < L)
  int local_K = -1, local_L = -1;
  Vec2 normal;   // unit, exterior to K
  double length = 0.0;
  double D_e = 0.0;
};

struct BoundaryEdge {
  int edge = -1;
  int K = -1;
  int local_K = -1;
  Vec2 normal; // unit, outward of the domain
  double length = 0.0;
};

// Oriented triangulation of a rectangle with full edge connectivity and the
// per-element geometry used by assembly (areas, barycenters, shape gradients).
//
// Local edge k of an element is opposite local vertex k, i.e. it connects
// local vertices (k+1)%3 and (k+2)%3.
class StructuredTriMesh {
public:
  Rectangle domain;
  int nx = 0, ny = 0; // square counts per axis (0 for hand-built meshes)

  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> elements; // CCW vertex triples
  std::vector<std::array<int, 2>> edges;    // all edges, v0 < v1
  std::vector<std::array<int, 3>> element_edges;
  std::vector<InteriorEdge> interior_edges;
  std::vector<BoundaryEdge> boundary_edges;

  std::vector<double> areas;
  std::vector<Vec2> barycenters;
  std::vector<std::array<Vec2, 3>> grad_lambda; // per-element shape gradients

  // Set once by validate_hypothesis; the jump-based mobility flux requires it.
  mutable bool hypothesis_ok = false;

  std::size_t n_vertices() const { return vertices.size(); }
  std::size_t n_elements() const { return elements.size(); }
  std::size_t n_edges() const { return edges.size(); }

  double mesh_size() const { return h_; }
  double total_area() const { return total_area_; }

  Vec2 vertex(int v) const { return vertices[static_cast<std::size_t>(v)]; }

  // Physical coordinates of a barycentric point in element K.
  Vec2 point(int K, double l1, double l2, double l3) const {
    const auto &e = elements[static_cast<std::size_t>(K)];
    return vertices[e[0]] * l1 + vertices[e[1]] * l2 + vertices[e[2]] * l3;
  }

private:
  double h_ = 0.0;
  double total_area_ = 0.0;

  friend StructuredTriMesh build_from_cells(std::vector<Vec2> verts,
                                            std::vector<std::array<int, 3>> cells);
};

// Generic constructor from explicit cells; computes connectivity, orientation
// checks and all edge geometry. Also used by test fixtures.
inline StructuredTriMesh build_from_cells(std::vector<Vec2> verts,
                                          std::vector<std::array<int, 3>> cells) {
  StructuredTriMesh m;
  m.vertices = std::move(verts);
  m.elements = std::move(cells);

  const std::size_t nel = m.elements.size();
  m.areas.resize(nel);
  m.barycenters.resize(nel);
  m.grad_lambda.resize(nel);
  m.element_edges.assign(nel, {-1, -1, -1});

  double hmax = 0.0, area_sum = 0.0;
  for (std::size_t K = 0; K < nel; ++K) {
    const auto &e = m.elements[K];
    const Vec2 a = m.vertices[e[0]], b = m.vertices[e[1]], c = m.vertices[e[2]];
    const double twoA = (b - a).cross(c - a);
    if (!(twoA > 0.0))
      throw std::invalid_argument("element " + std::to_string(K) +
                                  " is degenerate or not counterclockwise");
    m.areas[K] = 0.5 * twoA;
    area_sum += m.areas[K];
    m.barycenters[K] = (a + b + c) * (1.0 / 3.0);
    const std::array<Vec2, 3> p{a, b, c};
    for (int i = 0; i < 3; ++i) {
      const Vec2 d = p[(i + 2) % 3] - p[(i + 1) % 3];
      m.grad_lambda[K][i] = Vec2{-d.y, d.x} * (1.0 / twoA);
      hmax = std::max(hmax, d.norm());
    }
  }
  m.h_ = hmax;
  m.total_area_ = area_sum;

  // Edge table: key (vmin,vmax) -> global edge id.
  std::map<std::pair<int, int>, int> edge_ids;
  std::vector<std::array<int, 2>> edge_elems; // up to two incident elements
  for (std::size_t K = 0; K < nel; ++K) {
    const auto &e = m.elements[K];
    for (int k = 0; k < 3; ++k) {
      const int v0 = e[(k + 1) % 3], v1 = e[(k + 2) % 3];
      const auto key = std::minmax(v0, v1);
      auto it = edge_ids.find(key);
      int id;
      if (it == edge_ids.end()) {
        id = static_cast<int>(m.edges.size());
        edge_ids.emplace(key, id);
        m.edges.push_back({key.first, key.second});
        edge_elems.push_back({static_cast<int>(K), -1});
      } else {
        id = it->second;
        if (edge_elems[id][1] != -1)
          throw std::invalid_argument("edge shared by more than two elements");
        edge_elems[id][1] = static_cast<int>(K);
      }
      m.element_edges[K][k] = id;
    }
  }

  auto local_index = [&](int K, int edge_id) {
    for (int k = 0; k < 3; ++k)
      if (m.element_edges[K][k] == edge_id)
        return k;
    return -1;
  };

  for (std::size_t id = 0; id < m.edges.size(); ++id) {
    const int v0 = m.edges[id][0], v1 = m.edges[id][1];
    const Vec2 t = m.vertices[v1] - m.vertices[v0];
    const double len = t.norm();
    int K = edge_elems[id][0], L = edge_elems[id][1];
    if (L != -1 && L < K)
      std::swap(K, L); // owner = smaller element index
    // Normal exterior to K: unit perpendicular of the edge, oriented away
    // from the opposite vertex of K.
    const int lk = local_index(K, static_cast<int>(id));
    Vec2 n{t.y / len, -t.x / len};
    const Vec2 opp = m.vertices[m.elements[K][lk]];
    const Vec2 mid = (m.vertices[v0] + m.vertices[v1]) * 0.5;
    if (n.dot(mid - opp) < 0.0)
      n = n * (-1.0);
    if (L == -1) {
      BoundaryEdge be;
      be.edge = static_cast<int>(id);
      be.K = K;
      be.local_K = lk;
      be.normal = n;
      be.length = len;
      m.boundary_edges.push_back(be);
    } else {
      InteriorEdge ie;
      ie.edge = static_cast<int>(id);
      ie.K = K;
      ie.L = L;
      ie.local_K = lk;
      ie.local_L = local_index(L, static_cast<int>(id));
      ie.normal = n;
      ie.length = len;
      ie.D_e = (m.barycenters[L] - m.barycenters[K]).norm();
      if (!(ie.D_e > 0.0))
        throw std::invalid_argument("coincident barycenters across edge " + std::to_string(id));
      m.interior_edges.push_back(ie);
    }
  }
  return m;
}

// Structured triangulation of the rectangle by nx*ny squares, each halved by
// a diagonal. The diagonal direction alternates in a checkerboard pattern
// (main diagonal when i+j is even), which makes the segment joining the two
// barycenters across every interior edge orthogonal to that edge.
inline StructuredTriMesh build_mesh(const Rectangle &domain, int nx, int ny) {
  if (nx < 1 || ny < 1)
    throw std::invalid_argument("square counts must be at least 1");
  if (!(domain.width() > 0.0) || !(domain.height() > 0.0))
    throw std::invalid_argument("degenerate rectangle");

  const double hx = domain.width() / nx, hy = domain.height() / ny;
  std::vector<Vec2> verts;
  verts.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      verts.push_back({domain.x0 + i * hx, domain.y0 + j * hy});

  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<std::array<int, 3>> cells;
  cells.reserve(static_cast<std::size_t>(2) * nx * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      if ((i + j) % 2 == 0) { // main diagonal a-c
        cells.push_back({a, b, c});
        cells.push_back({a, c, d});
      } else { // anti-diagonal b-d
        cells.push_back({a, b, d});
        cells.push_back({b, c, d});
      }
    }

  StructuredTriMesh m = build_from_cells(std::move(verts), std::move(cells));
  m.domain = domain;
  m.nx = nx;
  m.ny = ny;
  return m;
}

// Max over interior edges of |(b_K - b_L) . t_e| / h. Throws if the defect
// exceeds 1e-10: the jump-based mobility flux is only consistent when the
// barycenter segment is orthogonal to the shared edge.
inline double validate_hypothesis(const StructuredTriMesh &mesh, double tol = 1e-10) {
  double worst = 0.0;
  std::size_t worst_edge = 0;
  for (std::size_t i = 0; i < mesh.interior_edges.size(); ++i) {
    const auto &ie = mesh.interior_edges[i];
    const Vec2 seg = mesh.barycenters[ie.L] - mesh.barycenters[ie.K];
    const Vec2 t{-ie.normal.y, ie.normal.x};
    const double defect = std::abs(seg.dot(t)) / mesh.mesh_size();
    if (defect > worst) {
      worst = defect;
      worst_edge = i;
    }
  }
  if (worst > tol)
    throw HypothesisViolation(worst_edge, worst);
  mesh.hypothesis_ok = true;
  return worst;
}

} // namespace chns

#endif
