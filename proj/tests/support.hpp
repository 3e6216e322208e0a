#pragma once

// Hand-rolled generators for property tests. Seeds are fixed so failures
// reproduce.

#include <cmath>
#include <random>
#include <vector>

#include "onelap/mesh.hpp"

namespace onelap::prop {

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(0x5eed1a9ULL);
  return gen;
}

inline double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng()); }

inline int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng()); }

/// Random nodal field, zero on the boundary when `dirichlet`.
inline Field random_field(const MeshPtr& mesh, double amplitude = 1.0, bool dirichlet = true) {
  Field u(mesh);
  for (auto& v : u.values) v = uniform(-amplitude, amplitude);
  if (dirichlet) apply_dirichlet(u);
  return u;
}

/// Random smooth-ish Dirichlet field: a few sine modes with random weights.
inline Field random_smooth_field(const MeshPtr& mesh, double amplitude = 1.0) {
  const double a = uniform(0.2, 1.0) * amplitude;
  const double b = uniform(-0.5, 0.5) * amplitude;
  const int k = uniform_int(1, 3);
  const Mesh& m = *mesh;
  double x0 = m.nodes.front()[0], x1 = m.nodes.front()[0];
  double y0 = m.nodes.front()[1], y1 = m.nodes.front()[1];
  for (const auto& x : m.nodes) {
    x0 = std::min(x0, x[0]);
    x1 = std::max(x1, x[0]);
    y0 = std::min(y0, x[1]);
    y1 = std::max(y1, x[1]);
  }
  Field u = interpolate(mesh, [&](const Vec2& x) {
    const double s = (x[0] - x0) / (x1 - x0);
    const double t = m.coord_dim == 2 ? (x[1] - y0) / (y1 - y0) : 0.5;
    const double sx = std::sin(M_PI * s) * (a + b * std::sin(k * M_PI * s));
    return m.coord_dim == 2 ? sx * std::sin(M_PI * t) : sx;
  });
  apply_dirichlet(u);
  return u;
}

inline std::vector<Domain> sample_domains() {
  return {Interval{1.0}, Interval{2.5}, Annulus{1.0, 2.0, 2}, Annulus{0.5, 3.0, 3}, Rectangle{1.0, 1.0},
          Rectangle{2.0, 0.5}};
}

inline int sample_resolution(const Domain& d) { return std::holds_alternative<Rectangle>(d) ? 12 : 60; }

}  // namespace onelap::prop
