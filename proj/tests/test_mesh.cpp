#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "onelap/mesh.hpp"
#include "support.hpp"

using namespace onelap;
using std::numbers::pi;

namespace {

double exact_volume(const Domain& d) {
  if (const auto* i = std::get_if<Interval>(&d)) return i->length;
  if (const auto* a = std::get_if<Annulus>(&d))
    return unit_sphere_measure(a->dim) * (std::pow(a->outer, a->dim) - std::pow(a->inner, a->dim)) / a->dim;
  const auto& r = std::get<Rectangle>(d);
  return r.width * r.height;
}

// Composite midpoint rule on [a,b], independent of the mesh code.
template <class Fn>
double midpoint(Fn f, double a, double b, int n = 1'000'000) {
  const double h = (b - a) / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += f(a + (i + 0.5) * h);
  return s * h;
}

}  // namespace

TEST(Mesh, IntervalFiveEquispacedNodes) {
  auto m = build_mesh(Interval{2.0}, 4);
  ASSERT_EQ(m->node_count(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m->nodes[i][0], 0.5 * i, 1e-15);
  EXPECT_NEAR(m->volume(), 2.0, 1e-14);
  EXPECT_NEAR(m->h, 0.5, 1e-15);
}

TEST(Mesh, AnnulusAreaMatchesClosedFormAndQuadrature) {
  auto m = build_mesh(Annulus{1.0, 2.0, 2}, 100);
  EXPECT_NEAR(m->volume(), 3.0 * pi, 1e-12 * 3.0 * pi);
  const double oracle = midpoint([](double r) { return 2.0 * pi * r; }, 1.0, 2.0);
  EXPECT_NEAR(m->volume(), oracle, 1e-9);
  EXPECT_NEAR(m->volume(), 9.424778, 1e-6);
}

TEST(Mesh, UnitSquareArea) {
  auto m = build_mesh(Rectangle{1.0, 1.0}, Resolution{2, 2});
  EXPECT_NEAR(m->volume(), 1.0, 1e-14);
  EXPECT_EQ(m->node_count(), 9u);
  EXPECT_EQ(m->element_count(), 8u);
}

TEST(Mesh, RejectsBadInput) {
  EXPECT_THROW(build_mesh(Interval{1.0}, 1), std::invalid_argument);
  EXPECT_THROW(build_mesh(Interval{1.0}, 0), std::invalid_argument);
  EXPECT_THROW(build_mesh(Interval{-1.0}, 4), std::invalid_argument);
  EXPECT_THROW(build_mesh(Annulus{2.0, 1.0, 2}, 10), std::invalid_argument);
  EXPECT_THROW(build_mesh(Annulus{1.0, 1.0, 2}, 10), std::invalid_argument);
  EXPECT_THROW(build_mesh(Annulus{1.0, 2.0, 1}, 10), std::invalid_argument);
  EXPECT_THROW(build_mesh(Rectangle{1.0, 1.0}, Resolution{2, 1}), std::invalid_argument);
}

TEST(MeshProperty, InvariantsHoldForEveryConstructor) {
  for (const Domain& d : prop::sample_domains()) {
    for (int n : {2, 3, 7, prop::sample_resolution(d)}) {
      auto m = build_mesh(d, n);
      SCOPED_TRACE(domain_kind(d) + " n=" + std::to_string(n));
      const double vol = exact_volume(d);
      EXPECT_NEAR(m->volume(), vol, 1e-12 * vol);
      for (double w : m->quad_weights) EXPECT_GT(w, 0.0);
      for (double w : m->boundary_weights) EXPECT_GT(w, 0.0);
      for (const auto& nu : m->boundary_normals) EXPECT_NEAR(norm(nu), 1.0, 1e-12);
      ASSERT_EQ(m->boundary_normals.size(), m->boundary_nodes.size());

      // Elements partition the domain: measures add up and, in 2D, each
      // edge is shared by at most two triangles with boundary edges once.
      double total = 0.0, hmax = 0.0;
      std::map<std::pair<std::size_t, std::size_t>, int> edges;
      for (const auto& el : m->elements) {
        EXPECT_GT(el.measure, 0.0);
        total += el.measure;
        hmax = std::max(hmax, el.diameter);
        for (std::size_t a = 0; a < el.count; ++a) {
          ASSERT_LT(el.nodes[a], m->node_count());
          for (std::size_t b = a + 1; b < el.count; ++b) {
            ASSERT_NE(el.nodes[a], el.nodes[b]);
            edges[{std::min(el.nodes[a], el.nodes[b]), std::max(el.nodes[a], el.nodes[b])}]++;
          }
        }
      }
      EXPECT_NEAR(total, vol, 1e-12 * vol);
      EXPECT_NEAR(m->h, hmax, 1e-15);
      if (std::holds_alternative<Rectangle>(d)) {
        std::size_t single = 0;
        for (const auto& [e, c] : edges) {
          EXPECT_LE(c, 2);
          if (c == 1) ++single;
        }
        EXPECT_EQ(single, m->facets.size());
      }
    }
  }
}

TEST(Gradient, AffineFieldsOnInterval) {
  auto m = build_mesh(Interval{1.0}, 10);
  for (const auto& g : gradient(interpolate(m, [](const Vec2& x) { return 3.0 * x[0]; }))) EXPECT_NEAR(g[0], 3.0, 1e-12);
  for (const auto& g : gradient(interpolate(m, [](const Vec2&) { return 4.2; }))) EXPECT_EQ(norm(g), 0.0);
}

TEST(Gradient, RadialAffineOnAnnulus) {
  auto m = build_mesh(Annulus{1.0, 2.0, 2}, 50);
  for (const auto& g : gradient(interpolate(m, [](const Vec2& x) { return x[0]; }))) EXPECT_NEAR(norm(g), 1.0, 1e-12);
}

TEST(GradientProperty, ExactOnRandomAffineFields) {
  for (const Domain& d : prop::sample_domains()) {
    auto m = build_mesh(d, prop::sample_resolution(d));
    for (int trial = 0; trial < 10; ++trial) {
      const double a = prop::uniform(-5, 5), b = prop::uniform(-5, 5), c = prop::uniform(-5, 5);
      const bool planar = m->coord_dim == 2;
      auto g = gradient(interpolate(m, [&](const Vec2& x) { return a + b * x[0] + (planar ? c * x[1] : 0.0); }));
      for (const auto& v : g) {
        EXPECT_NEAR(v[0], b, 1e-12 * (1 + std::abs(b)) * 10);
        EXPECT_NEAR(v[1], planar ? c : 0.0, 1e-12 * (1 + std::abs(c)) * 10);
      }
    }
  }
}

TEST(Gradient, RejectsMismatchedField) {
  auto m = build_mesh(Interval{1.0}, 10);
  Field u(m);
  u.values.pop_back();
  EXPECT_THROW(gradient(u), std::invalid_argument);
}

TEST(Integrate, Examples) {
  auto m = build_mesh(Interval{2.0}, 8);
  std::vector<double> ones(m->node_count(), 1.0);
  EXPECT_NEAR(integrate_nodes(*m, ones), 2.0, 1e-14);

  auto coarse = build_mesh(Interval{2.0}, 2);  // nodes {0, 1, 2}
  std::vector<double> hat = {0.0, 1.0, 0.0};
  EXPECT_NEAR(integrate_nodes(*coarse, hat), 1.0, 1e-15);

  std::vector<double> elem(m->element_count(), 1.0);
  EXPECT_NEAR(integrate_elements(*m, elem), 2.0, 1e-14);
  EXPECT_THROW(integrate_nodes(*m, std::span<const double>(ones.data(), ones.size() - 1)), std::invalid_argument);
  EXPECT_THROW(integrate_elements(*m, std::span<const double>(ones)), std::invalid_argument);
}

TEST(Integrate, RadialIdentityOnAnnulus) {
  const double exact = 14.0 * pi / 3.0;
  const double oracle = midpoint([](double r) { return 2.0 * pi * r * r; }, 1.0, 2.0);
  EXPECT_NEAR(exact, oracle, 1e-9);
  // The lumped weights are exact radial moments of the hat functions, so a
  // field that is affine in r integrates exactly at every resolution.
  for (int n : {25, 50, 100, 200}) {
    auto m = build_mesh(Annulus{1.0, 2.0, 2}, n);
    std::vector<double> r(m->node_count());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = m->nodes[i][0];
    EXPECT_NEAR(integrate_nodes(*m, r), exact, 1e-12 * exact) << "n=" << n;
  }
}

TEST(IntegrateProperty, SecondOrderOnSmoothIntegrands) {
  struct Case {
    Domain d;
    double exact;
    double (*f)(const Vec2&);
  };
  const Case cases[] = {
      {Interval{1.0}, 2.0 / pi, [](const Vec2& x) { return std::sin(pi * x[0]); }},
      {Annulus{1.0, 2.0, 2}, 2.0 * pi * (std::exp(2.0) - std::exp(1.0)), [](const Vec2& x) { return std::exp(x[0]) / x[0]; }},
      {Rectangle{1.0, 1.0}, 4.0 / (pi * pi), [](const Vec2& x) { return std::sin(pi * x[0]) * std::sin(pi * x[1]); }},
  };
  for (const auto& c : cases) {
    const double exact = c.exact;
    double prev = 0.0;
    for (int n : {8, 16, 32, 64}) {
      auto m = build_mesh(c.d, n);
      const double err = std::abs(integrate_nodes(*m, [&](std::size_t i) { return c.f(m->nodes[i]); }) - exact);
      if (prev > 0.0) EXPECT_GE(prev / err, 3.0) << domain_kind(c.d) << " n=" << n;
      prev = err;
    }
  }
}

TEST(BoundaryIntegrate, Examples) {
  auto a = build_mesh(Annulus{1.0, 2.0, 2}, 40);
  std::vector<double> ones(a->boundary_nodes.size(), 1.0);
  EXPECT_NEAR(boundary_integrate(*a, ones), 6.0 * pi, 1e-12);
  EXPECT_NEAR(boundary_integrate(*a, ones), 18.84956, 1e-5);
  std::vector<double> zeros(a->boundary_nodes.size(), 0.0);
  EXPECT_EQ(boundary_integrate(*a, zeros), 0.0);

  auto i = build_mesh(Interval{3.0}, 10);
  std::vector<double> two(i->boundary_nodes.size(), 1.0);
  EXPECT_NEAR(boundary_integrate(*i, two), 2.0, 1e-15);

  auto r = build_mesh(Rectangle{2.0, 0.5}, Resolution{8, 4});
  std::vector<double> rb(r->boundary_nodes.size(), 1.0);
  EXPECT_NEAR(boundary_integrate(*r, rb), 5.0, 1e-13);
  EXPECT_THROW(boundary_integrate(*r, std::span<const double>(rb.data(), rb.size() - 1)), std::invalid_argument);
}

TEST(Dump, StateRoundTrip) {
  for (const Domain& d : prop::sample_domains()) {
    auto m = build_mesh(d, 6);
    Field u = prop::random_field(m);
    std::stringstream ss;
    write_state(ss, u);
    const std::string text = ss.str();
    EXPECT_EQ(text.rfind("onelap-mesh format_version=1\n", 0), 0u);
    Field v = read_state(ss, m);
    ASSERT_EQ(v.size(), u.size());
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(u[i], v[i]);
  }
}

TEST(Dump, RejectsMismatchedMesh) {
  auto m = build_mesh(Interval{1.0}, 6);
  auto other = build_mesh(Interval{1.0}, 7);
  std::stringstream ss;
  write_state(ss, Field(m));
  EXPECT_THROW(read_state(ss, other), std::exception);
}
