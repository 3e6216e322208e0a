#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "onelap/model.hpp"
#include "support.hpp"

using namespace onelap;

namespace {

// Composite Simpson rule for the primitive, independent of evaluate().
template <class Fn>
double simpson(Fn f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

Field hat(const MeshPtr& m) {
  double x1 = 0.0;
  for (const auto& x : m->nodes) x1 = std::max(x1, x[0]);
  Field u = interpolate(m, [&](const Vec2& x) { return 1.0 - std::abs(2.0 * x[0] / x1 - 1.0); });
  apply_dirichlet(u);
  return u;
}

// A = int |grad phi|^p and B = int |phi|^q computed by direct summation.
std::pair<double, double> power_moments(const Field& phi, double p, double q) {
  const Mesh& m = *phi.mesh;
  double A = 0.0, B = 0.0;
  for (const auto& el : m.elements) {
    double g0 = 0.0, g1 = 0.0;
    for (std::size_t k = 0; k < el.count; ++k) {
      g0 += phi[el.nodes[k]] * el.basis_grad[k][0];
      g1 += phi[el.nodes[k]] * el.basis_grad[k][1];
    }
    A += el.measure * std::pow(std::hypot(g0, g1), p);
  }
  for (std::size_t i = 0; i < m.node_count(); ++i) B += m.quad_weights[i] * std::pow(std::abs(phi[i]), q);
  return {A, B};
}

}  // namespace

TEST(Nonlinearity, Examples) {
  auto v = evaluate({PowerReaction{3.0}}, 2.0);
  EXPECT_NEAR(v.f, 4.0, 1e-15);
  EXPECT_NEAR(v.F, 8.0 / 3.0, 1e-15);

  v = evaluate({SumPowersReaction{2.0, 3.0}}, 1.0);
  EXPECT_NEAR(v.f, 2.0, 1e-15);
  EXPECT_NEAR(v.F, 5.0 / 6.0, 1e-15);

  const Nonlinearity e{ExpPowerReaction{2.0, 1.0}};
  v = evaluate(e, 1.0);
  EXPECT_NEAR(v.f, std::numbers::e, 1e-15);
  EXPECT_NEAR(v.F, (std::numbers::e - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(v.F, simpson([&](double s) { return evaluate(e, s).f; }, 0.0, 1.0), 1e-12);
}

TEST(NonlinearityProperty, PrimitiveMatchesQuadratureOfF) {
  const Nonlinearity cases[] = {{PowerReaction{3.0}},          {PowerReaction{2.5}},
                                {SumPowersReaction{2.0, 3.5}}, {ExpPowerReaction{2.0, 0.5}},
                                {ExpPowerReaction{3.0, 0.7}},  {ExpPowerReaction{1.5, 1.2}}};
  for (const auto& nl : cases) {
    EXPECT_EQ(evaluate(nl, 0.0).f, 0.0);
    EXPECT_EQ(evaluate(nl, 0.0).F, 0.0);
    for (int k = 0; k < 10; ++k) {
      const double u = prop::uniform(-1.8, 1.8);
      // s = u w^2 removes the |s|^{q-2} kink at the origin for q < 2.
      const double F = simpson([&](double w) { return evaluate(nl, u * w * w).f * 2.0 * u * w; }, 0.0, 1.0);
      EXPECT_NEAR(evaluate(nl, u).F, F, 1e-10 * (1.0 + std::abs(F))) << reaction_name(nl) << " u=" << u;
    }
  }
}

TEST(NonlinearityProperty, DerivativeMatchesDifferenceQuotient) {
  const Nonlinearity cases[] = {{PowerReaction{3.0}}, {SumPowersReaction{2.5, 4.0}}, {ExpPowerReaction{2.0, 0.8}}};
  for (const auto& nl : cases) {
    for (int k = 0; k < 10; ++k) {
      const double u = prop::uniform(0.2, 1.5) * (k % 2 ? 1 : -1);
      const double h = 1e-6;
      const double fd = (reaction(nl, u + h) - reaction(nl, u - h)) / (2 * h);
      EXPECT_NEAR(reaction_derivative(nl, u), fd, 1e-6 * (1 + std::abs(fd)));
    }
  }
}

TEST(Nonlinearity, ThetaAndGrowth) {
  EXPECT_EQ(theta({PowerReaction{3.0}}), 3.0);
  EXPECT_EQ(theta({SumPowersReaction{4.0, 2.5}}), 2.5);
  EXPECT_EQ(theta({ExpPowerReaction{2.0, 1.0}}), 2.0);
  EXPECT_TRUE(std::isinf(theta({ZeroReaction{}})));
  EXPECT_THROW(validate(Nonlinearity{PowerReaction{1.0}}), std::invalid_argument);
  EXPECT_THROW(validate(Nonlinearity{ExpPowerReaction{2.0, 0.0}}), std::invalid_argument);
  const auto g = growth_bound({SumPowersReaction{2.0, 3.0}});
  ASSERT_TRUE(g.has_value());
  for (double s : log_grid(1e-6, 10.0, 8)) EXPECT_LE(std::abs(reaction({SumPowersReaction{2.0, 3.0}}, s)),
                                                     g->C * (1.0 + std::pow(std::abs(s), g->q - 1.0)) + 1e-15);
}

TEST(Energy, Examples) {
  auto m = build_mesh(Interval{1.0}, 50);
  EXPECT_EQ(energy(Field(m), 1.5, {PowerReaction{3.0}}), 0.0);
  Field x = interpolate(m, [](const Vec2& p) { return p[0]; });
  EXPECT_NEAR(energy(x, 2.0, {}), 0.5, 1e-14);
  EXPECT_THROW(energy(x, 1.0, {}), std::invalid_argument);
  EXPECT_THROW(nehari_I(x, 0.5, {}), std::invalid_argument);
}

TEST(Energy, HatOnIntervalTwoAgainstRefinementOracle) {
  // Continuum value: (1/1.5) * 2 - (1/3) * 2 * (1/4) = 7/6 for the unit hat on [0,2].
  const double continuum = 7.0 / 6.0;
  auto fine = build_mesh(Interval{2.0}, 10000);
  const double e_fine = energy(hat(fine), 1.5, {PowerReaction{3.0}});
  EXPECT_NEAR(e_fine, continuum, 1e-7);
  double prev = 0.0;
  for (int n : {10, 20, 40, 80}) {
    const double err = std::abs(energy(hat(build_mesh(Interval{2.0}, n)), 1.5, {PowerReaction{3.0}}) - e_fine);
    if (prev > 0.0) EXPECT_GE(prev / err, 3.0);
    prev = err;
  }
}

TEST(Nehari, Examples) {
  auto m = build_mesh(Interval{1.0}, 100);
  EXPECT_EQ(nehari_I(Field(m), 1.5, {PowerReaction{3.0}}), 0.0);
  const Field phi = hat(m);
  EXPECT_NEAR(nehari_I(phi, 1.5, {}), gradient_power_integral(phi, 1.5), 1e-15);
  EXPECT_GT(nehari_I(phi, 1.5, {}), 0.0);
  for (double q : {2.5, 3.0, 4.0}) {
    const Nonlinearity nl{PowerReaction{q}};
    const Field u = scaled(phi, nehari_scale(phi, 1.5, nl));
    const double scale = gradient_power_integral(u, 1.5);
    EXPECT_LE(std::abs(nehari_I(u, 1.5, nl)), 1e-9 * scale);
  }
}

TEST(NehariScale, ClosedFormExamples) {
  const double p = 1.5, q = 3.0;
  auto m = build_mesh(Interval{1.0}, 64);
  const Field phi0 = hat(m);
  const auto [A0, B0] = power_moments(phi0, p, q);
  // Scale the direction so that A/B = 2, then so that A = B.
  const double c2 = std::pow(2.0 * B0 / A0, 1.0 / (p - q));
  const Field phi2 = scaled(phi0, c2);
  const auto [A, B] = power_moments(phi2, p, q);
  EXPECT_NEAR(A / B, 2.0, 1e-12);
  EXPECT_NEAR(nehari_scale(phi2, p, {PowerReaction{q}}), std::pow(2.0, 2.0 / 3.0), 1e-12);
  EXPECT_NEAR(std::pow(2.0, 2.0 / 3.0), 1.587401, 1e-6);

  const double c1 = std::pow(B0 / A0, 1.0 / (p - q));
  EXPECT_NEAR(nehari_scale(scaled(phi0, c1), p, {PowerReaction{q}}), 1.0, 1e-12);
}

TEST(NehariScale, ExpPowerAgainstDenseScan) {
  const double p = 1.5;
  const Nonlinearity nl{ExpPowerReaction{2.0, 0.5}};
  auto m = build_mesh(Interval{1.0}, 16);
  const Field phi = hat(m);
  const double A = power_moments(phi, p, 2.0).first;
  // h(t) = t^{p-1} A - sum_i w_i phi_i^2 t exp(alpha t^2 phi_i^2), written out directly.
  const auto h = [&](double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < m->node_count(); ++i)
      s += m->quad_weights[i] * phi[i] * phi[i] * t * std::exp(0.5 * t * t * phi[i] * phi[i]);
    return std::pow(t, p - 1.0) * A - s;
  };
  // Coarse log scan, then a linear scan inside the bracketing cell.
  const int n = 1'000'000;
  double lo = 0.0, hi = 0.0;
  double prev_t = 1e-3, prev_h = h(prev_t);
  for (int k = 1; k <= n; ++k) {
    const double t = 1e-3 * std::pow(1e6, static_cast<double>(k) / n);
    const double v = h(t);
    if ((prev_h > 0) != (v > 0)) {
      lo = prev_t;
      hi = t;
      break;
    }
    prev_t = t;
    prev_h = v;
  }
  ASSERT_GT(hi, 0.0);
  double best = lo, best_abs = std::abs(h(lo));
  for (int k = 0; k <= n; ++k) {
    const double t = lo + (hi - lo) * k / n;
    const double v = std::abs(h(t));
    if (v < best_abs) {
      best_abs = v;
      best = t;
    }
  }
  EXPECT_NEAR(nehari_scale(phi, p, nl), best, 1e-8 * best);
}

TEST(NehariScale, Errors) {
  auto m = build_mesh(Interval{1.0}, 32);
  EXPECT_THROW(nehari_scale(Field(m), 1.5, {PowerReaction{3.0}}), std::exception);
  EXPECT_THROW(nehari_scale(hat(m), 1.5, {}), NehariError);
  EXPECT_THROW(nehari_scale(hat(m), 1.5, {PowerReaction{1.2}}), NehariError);
  EXPECT_FALSE(try_nehari_scale(hat(m), 1.5, {PowerReaction{1.5}}).has_value());
}

TEST(NehariScaleProperty, InvariantUnderRescaling) {
  for (int trial = 0; trial < 20; ++trial) {
    auto m = build_mesh(Interval{prop::uniform(0.5, 3.0)}, prop::uniform_int(10, 80));
    const double p = prop::uniform(1.05, 1.9);
    const double q = prop::uniform(p + 0.2, 5.0);
    const Nonlinearity nl{PowerReaction{q}};
    const Field phi = prop::random_smooth_field(m);
    const Field ref = scaled(phi, nehari_scale(phi, p, nl));
    for (double c : {0.5, 2.0, 10.0}) {
      const Field dir = scaled(phi, c);
      const Field u = scaled(dir, nehari_scale(dir, p, nl));
      for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], ref[i], 1e-9 * sup_norm(ref));
    }
  }
}

TEST(EstimateDp, Examples) {
  auto m = build_mesh(Interval{1.0}, 100);
  const Nonlinearity nl{PowerReaction{3.0}};
  const Field phi = hat(m);
  const double single = estimate_dp(*m, 1.5, nl, {phi});
  EXPECT_NEAR(single, energy(scaled(phi, nehari_scale(phi, 1.5, nl)), 1.5, nl), 1e-15);
  EXPECT_NEAR(estimate_dp(*m, 1.5, nl, {phi, scaled(phi, 2.0)}), single, 1e-12 * single);
  EXPECT_THROW(estimate_dp(*m, 1.5, nl, {}), std::invalid_argument);
  EXPECT_THROW(estimate_dp(*m, 1.5, nl, {Field(m)}), std::invalid_argument);
  EXPECT_TRUE(std::isinf(estimate_dp(*m, 1.5, {}, {phi})));

  // Power(3) over p in {1.5, 1.25, 1.1, 1.05} with 8 bumps: bounded, trend reported.
  const auto dict = bump_dictionary(m, 8);
  ASSERT_EQ(dict.size(), 8u);
  double M = 0.0;
  for (double p : {1.5, 1.25, 1.1, 1.05}) {
    const double d = estimate_dp(*m, p, nl, dict);
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_GT(d, 0.0);
    M = std::max(M, d);
    RecordProperty("d_hat_p" + std::to_string(p), std::to_string(d));
  }
  RecordProperty("M", std::to_string(M));
}

TEST(WellStatus, Examples) {
  auto m = build_mesh(Interval{1.0}, 100);
  const Nonlinearity nl{PowerReaction{3.0}};
  const Field phi = hat(m);
  const double d = estimate_dp(*m, 1.5, nl, bump_dictionary(m, 8));
  EXPECT_EQ(well_status(Field(m), 1.5, nl, d).status, WellStatus::Inside);
  const double t = nehari_scale(phi, 1.5, nl);
  EXPECT_EQ(well_status(scaled(phi, t), 1.5, nl, d).status, WellStatus::OnNehari);
  const auto small = well_status(scaled(phi, 0.01), 1.5, nl, d);
  EXPECT_EQ(small.status, WellStatus::Inside);
  EXPECT_GT(small.margin_I, 0.0);
  EXPECT_GT(small.margin_E, 0.0);
  const auto big = well_status(scaled(phi, 3.0 * t), 1.5, nl, d);
  EXPECT_EQ(big.status, WellStatus::Outside);
  EXPECT_LT(big.margin_I, 0.0);
}

TEST(WellStatusProperty, InsideIffBelowLevelWithPositiveI) {
  for (int trial = 0; trial < 50; ++trial) {
    auto m = build_mesh(Interval{1.0}, 40);
    const Nonlinearity nl{PowerReaction{prop::uniform(2.2, 4.0)}};
    const double p = prop::uniform(1.1, 1.9);
    const Field u = scaled(prop::random_smooth_field(m), prop::uniform(0.01, 20.0));
    const double d = estimate_dp(*m, p, nl, bump_dictionary(m, 8));
    const auto r = well_status(u, p, nl, d);
    const double E = energy(u, p, nl), I = nehari_I(u, p, nl);
    if (r.status == WellStatus::Inside) {
      EXPECT_LT(E, d);
      EXPECT_GT(I, 0.0);
    }
    if (E < d - 1e-6 * (1 + d) && I > 1e-6 * gradient_power_integral(u, p)) {
      EXPECT_EQ(r.status, WellStatus::Inside);
    }
  }
}

TEST(FConditions, Examples) {
  const auto grid = log_grid(1e-8, 10.0, 10);
  const auto pw = check_f_conditions({PowerReaction{3.0}}, 1.5, grid);
  EXPECT_NEAR(pw.f1_ratio_at_min, 1e-12, 1e-20);
  EXPECT_TRUE(pw.f1_holds);
  EXPECT_EQ(pw.theta, 3.0);
  EXPECT_NEAR(pw.f2_min_slack, 0.0, 1e-12);
  EXPECT_TRUE(pw.f2_holds);

  const auto zero = check_f_conditions({}, 1.5, grid);
  EXPECT_FALSE(zero.f2_holds);

  const auto ex = check_f_conditions({ExpPowerReaction{2.0, 1.0}}, 1.5, grid);
  EXPECT_TRUE(ex.f2_holds);
  EXPECT_GE(ex.f2_min_slack, -1e-12);
  EXPECT_TRUE(ex.f1_holds);
}

TEST(FConditionsProperty, SecondConditionOnSignSymmetricGrid) {
  const auto grid = log_grid(1e-6, 10.0, 20);
  const Nonlinearity cases[] = {{PowerReaction{3.0}}, {PowerReaction{1.7}}, {SumPowersReaction{2.0, 3.0}},
                                {SumPowersReaction{4.0, 2.5}}, {ExpPowerReaction{2.0, 0.5}}, {ExpPowerReaction{3.0, 1.0}}};
  for (const auto& nl : cases) {
    const double th = theta(nl);
    for (double t : grid) {
      const auto v = evaluate(nl, t);
      EXPECT_GT(v.F, 0.0);
      EXPECT_LE(th * v.F, v.f * t + 1e-12 * std::abs(v.f * t)) << reaction_name(nl) << " t=" << t;
    }
  }
}

// Variational identities on random fields.

TEST(EnergyProperty, DirectionalDerivativeMatchesCentralDifference) {
  const Domain domains[] = {Interval{1.0}, Annulus{1.0, 2.0, 2}, Rectangle{1.0, 1.0}};
  for (int trial = 0; trial < 30; ++trial) {
    const Domain& d = domains[trial % 3];
    auto m = build_mesh(d, std::holds_alternative<Rectangle>(d) ? 8 : 30);
    const double p = prop::uniform(1.05, 2.5);
    const Nonlinearity nl{PowerReaction{p + prop::uniform(0.3, 2.0)}};
    const Field u = prop::random_field(m);
    const Field v = prop::random_field(m);
    const double h = 1e-5;
    Field up = u, um = u;
    for (std::size_t i = 0; i < u.size(); ++i) {
      up[i] += h * v[i];
      um[i] -= h * v[i];
    }
    const double fd = (energy(up, p, nl) - energy(um, p, nl)) / (2 * h);
    const double exact = energy_derivative(u, v, p, nl);
    const double scale = std::abs(exact) + gradient_power_integral(u, p) + gradient_power_integral(v, p);
    EXPECT_LE(std::abs(fd - exact), 1e-5 * scale);
    const double I = nehari_I(u, p, nl);
    EXPECT_NEAR(energy_derivative(u, u, p, nl), I, 1e-10 * (std::abs(I) + gradient_power_integral(u, p)));
  }
}

TEST(EnergyProperty, YoungInequalityHoldsPointwise) {
  for (int trial = 0; trial < 60; ++trial) {
    const auto domains = prop::sample_domains();
    const Domain& d = domains[trial % domains.size()];
    auto m = build_mesh(d, prop::sample_resolution(d));
    const double p = std::array{1.01, 1.1, 1.5}[trial % 3];
    const Field u = scaled(prop::random_field(m), prop::uniform(0.01, 10.0));
    const double lhs = total_variation(u);
    const double rhs = gradient_power_integral(u, p) / p + (p - 1.0) / p * m->volume();
    EXPECT_LE(lhs, rhs * (1.0 + 1e-14));
  }
}

TEST(EnergyProperty, DiffusionOperatorIsMonotone) {
  for (int trial = 0; trial < 40; ++trial) {
    auto m = build_mesh(trial % 2 ? Domain{Interval{1.0}} : Domain{Rectangle{1.0, 1.0}}, trial % 2 ? 40 : 8);
    const double p = prop::uniform(1.01, 3.0);
    const Field u = prop::random_field(m), v = prop::random_field(m);
    Field w = u;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= v[i];
    // <A(u) - A(v), u - v> with A the zero-reaction derivative.
    const double val = energy_derivative(u, w, p, {}) - energy_derivative(v, w, p, {});
    EXPECT_GE(val, -1e-12 * (gradient_power_integral(u, p) + gradient_power_integral(v, p)));
  }
}
