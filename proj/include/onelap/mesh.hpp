#pragma once

// Spatial discretizations: interval, radially reduced annulus and a
// structured triangulation of a rectangle. Every mesh carries a lumped
// (nodal) quadrature, per-element measures and piecewise-affine basis
// gradients, plus the boundary geometry used by the flux diagnostics.

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "onelap/format.hpp"

namespace onelap {

using Vec2 = std::array<double, 2>;

inline double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
inline double norm(const Vec2& a) { return std::hypot(a[0], a[1]); }

struct Interval {
  double length = 1.0;
};

/// Radial annulus a < |x| < b in R^N, reduced to the radial coordinate.
struct Annulus {
  double inner = 1.0;
  double outer = 2.0;
  int dim = 2;
};

struct Rectangle {
  double width = 1.0;
  double height = 1.0;
};

using Domain = std::variant<Interval, Annulus, Rectangle>;

struct Resolution {
  int nx = 2;
  int ny = 0;  // only read for rectangles
};

inline std::string domain_kind(const Domain& d) {
  struct {
    std::string operator()(const Interval&) const { return "interval"; }
    std::string operator()(const Annulus&) const { return "annulus"; }
    std::string operator()(const Rectangle&) const { return "rectangle"; }
  } v;
  return std::visit(v, d);
}

inline double domain_diameter(const Domain& d) {
  if (const auto* i = std::get_if<Interval>(&d)) return i->length;
  if (const auto* a = std::get_if<Annulus>(&d)) return 2.0 * a->outer;
  const auto& r = std::get<Rectangle>(d);
  return std::hypot(r.width, r.height);
}

/// Surface measure of the unit sphere S^{N-1} in R^N.
inline double unit_sphere_measure(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

inline void validate(const Domain& d) {
  if (const auto* i = std::get_if<Interval>(&d)) {
    if (!(i->length > 0.0) || !std::isfinite(i->length))
      throw std::invalid_argument("interval length must be positive and finite");
  } else if (const auto* a = std::get_if<Annulus>(&d)) {
    if (!(a->inner > 0.0)) throw std::invalid_argument("annulus inner radius a must be positive");
    if (!(a->inner < a->outer) || !std::isfinite(a->outer))
      throw std::invalid_argument("annulus requires 0 < a < b < infinity");
    if (a->dim < 2) throw std::invalid_argument("annulus dimension N must be at least 2");
  } else {
    const auto& r = std::get<Rectangle>(d);
    if (!(r.width > 0.0) || !(r.height > 0.0) || !std::isfinite(r.width) || !std::isfinite(r.height))
      throw std::invalid_argument("rectangle side lengths must be positive and finite");
  }
}

struct Element {
  std::array<std::size_t, 3> nodes{};
  std::size_t count = 0;  // 2 for segments, 3 for triangles
  double measure = 0.0;   // weighted volume (r^{N-1} |S^{N-1}| for the annulus)
  double diameter = 0.0;
  std::array<Vec2, 3> basis_grad{};
};

/// A boundary facet: an end point in 1D, an edge for rectangles.
struct BoundaryFacet {
  std::size_t element = 0;
  std::array<std::size_t, 2> nodes{};
  std::size_t count = 1;
  double measure = 0.0;
  Vec2 normal{};
};

struct Mesh {
  Domain domain;
  Resolution resolution;
  int coord_dim = 1;
  std::vector<Vec2> nodes;
  std::vector<Element> elements;
  std::vector<double> quad_weights;
  std::vector<std::size_t> boundary_nodes;
  std::vector<Vec2> boundary_normals;
  std::vector<double> boundary_weights;
  std::vector<BoundaryFacet> facets;
  std::vector<long> boundary_slot;  // node -> index into boundary arrays, or -1
  double h = 0.0;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t element_count() const { return elements.size(); }
  bool is_boundary(std::size_t node) const { return boundary_slot[node] >= 0; }

  double volume() const {
    double s = 0.0;
    for (double w : quad_weights) s += w;
    return s;
  }
};

using MeshPtr = std::shared_ptr<const Mesh>;

namespace detail {

// Integrals of the two hat functions and of 1 against r^{N-1} on [r0, r0+h],
// expanded binomially so every term is positive.
struct RadialMoments {
  double left = 0.0;
  double right = 0.0;
  double total = 0.0;
};

inline RadialMoments radial_moments(double r0, double h, int n) {
  RadialMoments m;
  double binom = 1.0;
  for (int k = 0; k <= n - 1; ++k) {
    const double term = binom * std::pow(r0, n - 1 - k) * std::pow(h, k + 1);
    m.total += term / (k + 1);
    m.right += term / (k + 2);
    m.left += term / ((k + 1.0) * (k + 2.0));
    binom = binom * (n - 1 - k) / (k + 1);
  }
  return m;
}

inline void finish_boundary(Mesh& m) {
  m.boundary_slot.assign(m.nodes.size(), -1);
  for (std::size_t b = 0; b < m.boundary_nodes.size(); ++b)
    m.boundary_slot[m.boundary_nodes[b]] = static_cast<long>(b);
  m.h = 0.0;
  for (const auto& e : m.elements) m.h = std::max(m.h, e.diameter);
}

inline Mesh build_segment_mesh(const Domain& domain, double x0, double x1, int n, int radial_dim) {
  Mesh m;
  m.domain = domain;
  m.resolution = {n, 0};
  m.coord_dim = 1;
  const double hx = (x1 - x0) / n;
  m.nodes.resize(n + 1);
  for (int i = 0; i <= n; ++i) m.nodes[i] = {i == n ? x1 : x0 + i * hx, 0.0};
  m.quad_weights.assign(n + 1, 0.0);
  const double sphere = radial_dim > 1 ? unit_sphere_measure(radial_dim) : 1.0;
  for (int i = 0; i < n; ++i) {
    Element e;
    e.nodes = {static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1), 0};
    e.count = 2;
    const double len = m.nodes[i + 1][0] - m.nodes[i][0];
    e.diameter = len;
    e.basis_grad = {Vec2{-1.0 / len, 0.0}, Vec2{1.0 / len, 0.0}, Vec2{}};
    if (radial_dim > 1) {
      const auto mom = radial_moments(m.nodes[i][0], len, radial_dim);
      e.measure = sphere * mom.total;
      m.quad_weights[i] += sphere * mom.left;
      m.quad_weights[i + 1] += sphere * mom.right;
    } else {
      e.measure = len;
      m.quad_weights[i] += 0.5 * len;
      m.quad_weights[i + 1] += 0.5 * len;
    }
    m.elements.push_back(e);
  }
  const auto boundary_weight = [&](double r) {
    return radial_dim > 1 ? sphere * std::pow(r, radial_dim - 1) : 1.0;
  };
  m.boundary_nodes = {0, static_cast<std::size_t>(n)};
  m.boundary_normals = {Vec2{-1.0, 0.0}, Vec2{1.0, 0.0}};
  m.boundary_weights = {boundary_weight(x0), boundary_weight(x1)};
  m.facets.push_back({0, {0, 0}, 1, m.boundary_weights[0], {-1.0, 0.0}});
  m.facets.push_back({static_cast<std::size_t>(n - 1),
                      {static_cast<std::size_t>(n), static_cast<std::size_t>(n)},
                      1,
                      m.boundary_weights[1],
                      {1.0, 0.0}});
  finish_boundary(m);
  return m;
}

inline Mesh build_rectangle_mesh(const Rectangle& rect, int nx, int ny) {
  Mesh m;
  m.domain = rect;
  m.resolution = {nx, ny};
  m.coord_dim = 2;
  const double hx = rect.width / nx;
  const double hy = rect.height / ny;
  const auto id = [nx](int i, int j) { return static_cast<std::size_t>(j * (nx + 1) + i); };
  m.nodes.resize(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m.nodes[id(i, j)] = {i == nx ? rect.width : i * hx, j == ny ? rect.height : j * hy};
  m.quad_weights.assign(m.nodes.size(), 0.0);

  const auto add_triangle = [&](std::size_t a, std::size_t b, std::size_t c) {
    Element e;
    e.nodes = {a, b, c};
    e.count = 3;
    const Vec2 pa = m.nodes[a], pb = m.nodes[b], pc = m.nodes[c];
    const double det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    e.measure = 0.5 * std::abs(det);
    // grad of barycentric coordinate k = rotated opposite edge / det
    const std::array<Vec2, 3> p = {pa, pb, pc};
    for (int k = 0; k < 3; ++k) {
      const Vec2& q1 = p[(k + 1) % 3];
      const Vec2& q2 = p[(k + 2) % 3];
      e.basis_grad[k] = {(q1[1] - q2[1]) / det, (q2[0] - q1[0]) / det};
    }
    e.diameter = std::max({norm({pb[0] - pa[0], pb[1] - pa[1]}), norm({pc[0] - pa[0], pc[1] - pa[1]}),
                           norm({pc[0] - pb[0], pc[1] - pb[1]})});
    for (std::size_t k = 0; k < 3; ++k) m.quad_weights[e.nodes[k]] += e.measure / 3.0;
    m.elements.push_back(e);
    return m.elements.size() - 1;
  };

  // cell (i,j) -> lower triangle 2*(j*nx+i), upper 2*(j*nx+i)+1
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      add_triangle(id(i, j), id(i + 1, j), id(i + 1, j + 1));
      add_triangle(id(i, j), id(i + 1, j + 1), id(i, j + 1));
    }
  }
  const auto cell = [nx](int i, int j) { return static_cast<std::size_t>(2 * (j * nx + i)); };
  for (int i = 0; i < nx; ++i) {
    m.facets.push_back({cell(i, 0), {id(i, 0), id(i + 1, 0)}, 2, hx, {0.0, -1.0}});
    m.facets.push_back({cell(i, ny - 1) + 1, {id(i, ny), id(i + 1, ny)}, 2, hx, {0.0, 1.0}});
  }
  for (int j = 0; j < ny; ++j) {
    m.facets.push_back({cell(0, j) + 1, {id(0, j), id(0, j + 1)}, 2, hy, {-1.0, 0.0}});
    m.facets.push_back({cell(nx - 1, j), {id(nx, j), id(nx, j + 1)}, 2, hy, {1.0, 0.0}});
  }

  std::vector<double> weight(m.nodes.size(), 0.0);
  std::vector<Vec2> normal(m.nodes.size(), Vec2{});
  for (const auto& f : m.facets) {
    for (std::size_t k = 0; k < 2; ++k) {
      weight[f.nodes[k]] += 0.5 * f.measure;
      normal[f.nodes[k]][0] += f.normal[0];
      normal[f.nodes[k]][1] += f.normal[1];
    }
  }
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    if (weight[n] == 0.0) continue;
    const double len = norm(normal[n]);
    m.boundary_nodes.push_back(n);
    m.boundary_normals.push_back({normal[n][0] / len, normal[n][1] / len});
    m.boundary_weights.push_back(weight[n]);
  }
  finish_boundary(m);
  return m;
}

}  // namespace detail

inline MeshPtr build_mesh(const Domain& domain, Resolution res) {
  validate(domain);
  if (res.nx < 2) throw std::invalid_argument("resolution must be at least 2 per axis");
  if (const auto* i = std::get_if<Interval>(&domain))
    return std::make_shared<const Mesh>(detail::build_segment_mesh(domain, 0.0, i->length, res.nx, 1));
  if (const auto* a = std::get_if<Annulus>(&domain))
    return std::make_shared<const Mesh>(detail::build_segment_mesh(domain, a->inner, a->outer, res.nx, a->dim));
  const int ny = res.ny == 0 ? res.nx : res.ny;
  if (ny < 2) throw std::invalid_argument("resolution must be at least 2 per axis");
  return std::make_shared<const Mesh>(detail::build_rectangle_mesh(std::get<Rectangle>(domain), res.nx, ny));
}

inline MeshPtr build_mesh(const Domain& domain, int n) { return build_mesh(domain, Resolution{n, 0}); }

/// Nodal values of a scalar function on a mesh.
struct Field {
  MeshPtr mesh;
  std::vector<double> values;

  Field() = default;
  explicit Field(MeshPtr m) : mesh(std::move(m)), values(mesh->node_count(), 0.0) {}
  Field(MeshPtr m, std::vector<double> v) : mesh(std::move(m)), values(std::move(v)) {
    if (values.size() != mesh->node_count())
      throw std::invalid_argument("field size does not match mesh node count");
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

template <class Fn>
Field interpolate(const MeshPtr& mesh, Fn&& fn) {
  Field u(mesh);
  for (std::size_t i = 0; i < mesh->node_count(); ++i) u[i] = fn(mesh->nodes[i]);
  return u;
}

inline void apply_dirichlet(Field& u) {
  for (std::size_t b : u.mesh->boundary_nodes) u[b] = 0.0;
}

inline bool is_dirichlet(const Field& u) {
  for (std::size_t b : u.mesh->boundary_nodes)
    if (u[b] != 0.0) return false;
  return true;
}

inline bool is_zero(const Field& u) {
  for (double v : u.values)
    if (v != 0.0) return false;
  return true;
}

inline void require_same_mesh(const Field& a, const Field& b) {
  if (a.mesh != b.mesh) throw std::invalid_argument("fields live on different meshes");
}

/// Piecewise-constant gradient on each element.
inline std::vector<Vec2> gradient(const Field& u) {
  const Mesh& m = *u.mesh;
  if (u.values.size() != m.node_count()) throw std::invalid_argument("field does not match mesh");
  std::vector<Vec2> g(m.element_count());
  for (std::size_t e = 0; e < m.element_count(); ++e) {
    const Element& el = m.elements[e];
    Vec2 acc{};
    for (std::size_t k = 0; k < el.count; ++k) {
      acc[0] += u[el.nodes[k]] * el.basis_grad[k][0];
      acc[1] += u[el.nodes[k]] * el.basis_grad[k][1];
    }
    g[e] = acc;
  }
  return g;
}

inline double integrate_nodes(const Mesh& m, std::span<const double> samples) {
  if (samples.size() != m.node_count()) throw std::invalid_argument("nodal sample count does not match mesh");
  double s = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) s += m.quad_weights[i] * samples[i];
  return s;
}

inline double integrate_elements(const Mesh& m, std::span<const double> samples) {
  if (samples.size() != m.element_count())
    throw std::invalid_argument("element sample count does not match mesh");
  double s = 0.0;
  for (std::size_t e = 0; e < samples.size(); ++e) s += m.elements[e].measure * samples[e];
  return s;
}

template <std::invocable<std::size_t> Fn>
double integrate_nodes(const Mesh& m, Fn&& fn) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.node_count(); ++i) s += m.quad_weights[i] * fn(i);
  return s;
}

template <std::invocable<std::size_t> Fn>
double integrate_elements(const Mesh& m, Fn&& fn) {
  double s = 0.0;
  for (std::size_t e = 0; e < m.element_count(); ++e) s += m.elements[e].measure * fn(e);
  return s;
}

inline double boundary_integrate(const Mesh& m, std::span<const double> boundary_samples) {
  if (boundary_samples.size() != m.boundary_nodes.size())
    throw std::invalid_argument("boundary sample count does not match boundary node count");
  double s = 0.0;
  for (std::size_t b = 0; b < boundary_samples.size(); ++b) s += m.boundary_weights[b] * boundary_samples[b];
  return s;
}

inline double sup_norm(const Field& u) {
  double s = 0.0;
  for (double v : u.values) s = std::max(s, std::abs(v));
  return s;
}

inline double l2_norm(const Field& u) {
  return std::sqrt(integrate_nodes(*u.mesh, [&](std::size_t i) { return u[i] * u[i]; }));
}

// ---------------------------------------------------------------------------
// Plain-text mesh / state dump.
//
//   onelap-mesh format_version=1
//   domain <kind> <parameters...>
//   resolution <nx> <ny>
//   nodes <count>
//   <x> <y> <quad_weight> <boundary_flag> [value]
// ---------------------------------------------------------------------------

inline std::string domain_parameters(const Domain& d) {
  std::ostringstream os;
  if (const auto* i = std::get_if<Interval>(&d)) {
    os << "interval " << fmt_g17(i->length);
  } else if (const auto* a = std::get_if<Annulus>(&d)) {
    os << "annulus " << fmt_g17(a->inner) << ' ' << fmt_g17(a->outer) << ' ' << a->dim;
  } else {
    const auto& r = std::get<Rectangle>(d);
    os << "rectangle " << fmt_g17(r.width) << ' ' << fmt_g17(r.height);
  }
  return os.str();
}

inline void write_mesh(std::ostream& os, const Mesh& m, const Field* values = nullptr) {
  os << "onelap-mesh format_version=1\n";
  os << "domain " << domain_parameters(m.domain) << '\n';
  os << "resolution " << m.resolution.nx << ' ' << m.resolution.ny << '\n';
  os << "nodes " << m.node_count() << '\n';
  for (std::size_t i = 0; i < m.node_count(); ++i) {
    os << fmt_g17(m.nodes[i][0]) << ' ' << fmt_g17(m.nodes[i][1]) << ' ' << fmt_g17(m.quad_weights[i]) << ' '
       << (m.is_boundary(i) ? 1 : 0);
    if (values) os << ' ' << fmt_g17((*values)[i]);
    os << '\n';
  }
}

inline void write_state(std::ostream& os, const Field& u) { write_mesh(os, *u.mesh, &u); }

/// Reads a state dump whose node layout must coincide with `mesh`.
inline Field read_state(std::istream& is, const MeshPtr& mesh) {
  std::string line;
  std::size_t count = 0;
  bool have_count = false;
  while (!have_count && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "nodes") {
      ls >> count;
      have_count = true;
    }
  }
  if (!have_count) throw std::runtime_error("state file has no 'nodes' header");
  if (count != mesh->node_count())
    throw std::runtime_error("state file node count " + std::to_string(count) + " does not match mesh node count " +
                             std::to_string(mesh->node_count()));
  Field u(mesh);
  const double tol = 1e-9 * std::max(1.0, domain_diameter(mesh->domain));
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("state file truncated at node " + std::to_string(i));
    std::istringstream ls(line);
    double x = 0, y = 0, w = 0, v = 0;
    int flag = 0;
    if (!(ls >> x >> y >> w >> flag >> v)) throw std::runtime_error("malformed state line " + std::to_string(i));
    if (std::abs(x - mesh->nodes[i][0]) > tol || std::abs(y - mesh->nodes[i][1]) > tol)
      throw std::runtime_error("state file node " + std::to_string(i) + " does not match mesh coordinates");
    u[i] = v;
  }
  return u;
}

}  // namespace onelap
