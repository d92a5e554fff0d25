#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <random>

#include "svcurve/charfn.hpp"

using namespace svcurve;

namespace {

double rel(cplx got, cplx want) { return std::abs(got - want) / std::abs(want); }

ModelParams cs_model(std::vector<DeterministicFactor> d) {
    ModelParams m;
    m.deterministic_factors = std::move(d);
    return m;
}

ModelParams leverage_model() {
    ModelParams m;
    m.factors.push_back({1.5, 0.04, 0.3, -0.6, 0.05, 0.5});
    m.factors.push_back({0.8, 0.09, 0.25, 0.3, 0.07, 1.5});
    return m;
}

}  // namespace

TEST(CharFn, NormalizationBothBackends) {
    for (auto b : {CfBackend::ode, CfBackend::closed_form}) {
        CFContext ctx(reference_model(), 1.0, 1.0, 2.0, b);
        EXPECT_EQ(ctx.phi(0.0, 0.0), cplx(1.0));
        EXPECT_LT(std::abs(ctx.phi({0, -1}, 0.0) - 1.0), 1e-8);
        EXPECT_LT(std::abs(ctx.phi(0.0, {0, -1}) - 1.0), 1e-8);
    }
}

TEST(CharFn, ReferenceValuesFromHighOrderIntegration) {
    // 8th-order Runge-Kutta at rtol 1e-13 on the same Riccati system
    CFContext ode(reference_model(), 1.0, 1.0, 2.0);
    CFContext cf(reference_model(), 1.0, 1.0, 2.0, CfBackend::closed_form);
    const std::pair<std::pair<cplx, cplx>, cplx> cases[] = {
        {{0.5, 0.3}, {0.9529556722326963, -0.056753001826073145}},
        {{2.0, -1.0}, {0.8772039943780874, -0.09415047661670006}},
        {{{0.5, -0.7}, {0.2, 0.1}}, {0.9445031477099924, 0.013647841672274936}},
    };
    for (const auto& [u, want] : cases) {
        EXPECT_LT(rel(ode.phi(u.first, u.second), want), 1e-9);
        EXPECT_LT(rel(cf.phi(u.first, u.second), want), 1e-8);
    }
    EXPECT_EQ(cf.fallbacks(), 0);
    CFContext lev(leverage_model(), 0.5, 0.75, 1.5);
    EXPECT_LT(rel(lev.phi(1.5, -0.5), {0.9821025802645336, -0.015105020093244017}), 1e-9);
    EXPECT_LT(rel(lev.phi({0, -0.3}, 0.0), 0.9975531982016825), 1e-9);
}

TEST(Riccati, ZeroSource) {
    const auto r = solve_riccati(reference_model().factors[0], 0.0, 0.0, 1.0, 1.0, 2.0);
    EXPECT_EQ(r.A, cplx(0.0));
    EXPECT_EQ(r.B, cplx(0.0));
}

TEST(Riccati, LinearLimitMatchesQuadrature) {
    // sigma -> 0 with rho = 0: A(t) = e^{kappa t} int_t^T e^{-kappa s} q(s) ds
    FactorParams f{1.3, 0.1, 1e-9, 0.0, 0.1, 0.4};
    const cplx u1(0.7, 0.2), u2(-0.4, 0.0);
    const double T = 0.8, T1 = 1.0, T2 = 1.7;
    const auto c = factor_coefficients(f, u1, u2, T1, T2);
    const cplx I(0, 1);
    auto q = [&](double s) { return I * c.C1 * std::exp(f.lambda * s) + (c.C2 + I * c.C3) * std::exp(2 * f.lambda * s); };
    using boost::math::quadrature::gauss_kronrod;
    auto re = [&](double s) { return (std::exp(-f.kappa * s) * q(s)).real(); };
    auto im = [&](double s) { return (std::exp(-f.kappa * s) * q(s)).imag(); };
    const cplx want(gauss_kronrod<double, 31>::integrate(re, 0.0, T), gauss_kronrod<double, 31>::integrate(im, 0.0, T));
    const auto r = solve_riccati(f, u1, u2, T, T1, T2);
    EXPECT_LT(rel(r.A, want), 1e-8);
}

TEST(Riccati, MatchesClosedFormReference) {
    // reference_model() factor 1, u = (1, 0), T = 0.5, T1 = 1, T2 = 2; closed form evaluated at 30 digits
    const auto r = solve_riccati(reference_model().factors[0], 1.0, 0.0, 0.5, 1.0, 2.0);
    EXPECT_LT(rel(r.A, {-0.16869911049935, -0.16839740371402}), 1e-9);
    EXPECT_LT(rel(r.B, {-0.0074507492157, -0.0074439633038}), 1e-9);
    const auto c = closed_form_AB(reference_model().factors[0], 1.0, 0.0, 0.5, 1.0, 2.0);
    EXPECT_LT(rel(c.A, r.A), 1e-6);
    EXPECT_LT(rel(c.B, r.B), 1e-6);
}

TEST(ClosedForm, DegenerateArgument) { EXPECT_EQ(closed_form_A(reference_model().factors[0], 0.0, 0.0, 0.0, 1.0, 1.0, 2.0), cplx(0.0)); }

TEST(ClosedForm, MatchesOdeAtRandomPoints) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> du(-6.0, 6.0), dt(0.0, 1.0);
    for (const auto& f : {reference_model().factors[0], leverage_model().factors[0]}) {
        for (int k = 0; k < 20; ++k) {
            const cplx u1(du(rng), 0.3 * du(rng)), u2(du(rng), 0.3 * du(rng));
            const double T = 1.0, t = T * dt(rng);
            const auto ode = solve_riccati(f, u1, u2, T, 1.2, 2.0, 1e-11, t);
            EXPECT_LT(std::abs(closed_form_A(f, u1, u2, t, T, 1.2, 2.0) - ode.A), 1e-6 * std::max(1.0, std::abs(ode.A)));
        }
    }
}

TEST(ClosedForm, PrintedFormAgreesWhereConditioned) {
    const auto f = reference_model().factors[0];
    for (auto [u1, u2, t] : {std::tuple<cplx, cplx, double>{1.0, 0.0, 0.0}, {{0.5, 0.0}, {0.3, 0.0}, 0.4}, {3.0, -2.0, 0.0}}) {
        EXPECT_LT(std::abs(closed_form_A_printed(f, u1, u2, t, 1.0, 1.0, 2.0) - closed_form_A(f, u1, u2, t, 1.0, 1.0, 2.0)),
                  1e-8);
    }
    const auto g = leverage_model().factors[1];
    EXPECT_LT(std::abs(closed_form_A_printed(g, 2.5, 0.3, 0.2, 1.0, 1.0, 2.0) - closed_form_A(g, 2.5, 0.3, 0.2, 1.0, 1.0, 2.0)),
              1e-8);
}

TEST(ClosedForm, ContinuousInTime) {
    const auto f = reference_model().factors[0];
    const cplx u1(25.0, -1.0), u2(-12.0, 0.5);
    const double T = 0.8;
    const int n = 64;
    cplx prev = closed_form_A(f, u1, u2, 0.0, T, 1.0, 1.5);
    for (int k = 1; k <= n; ++k) {
        const double t0 = T * (k - 1) / n, t1 = T * k / n;
        const cplx cur = closed_form_A(f, u1, u2, t1, T, 1.0, 1.5);
        const cplx a0 = solve_riccati(f, u1, u2, T, 1.0, 1.5, 1e-11, t0).A;
        const cplx a1 = solve_riccati(f, u1, u2, T, 1.0, 1.5, 1e-11, t1).A;
        EXPECT_LT(std::abs(cur - prev), 10.0 * std::abs(a1 - a0) + 1e-9) << "t=" << t1;
        prev = cur;
    }
}

TEST(CharFn, HermitianAndBounded) {
    CFContext ctx(reference_model(), 0.5, 0.5, 1.25);
    for (double a = -20; a <= 20; a += 5)
        for (double b = -20; b <= 20; b += 5) {
            const cplx p = ctx.phi(a, b), q = ctx.phi(-a, -b);
            EXPECT_LT(std::abs(q - std::conj(p)), 1e-12);
            EXPECT_LE(std::abs(p), 1.0 + 1e-12);
        }
}

TEST(CharFn, Factorization) {
    const auto m = reference_model();
    ModelParams m1, m2;
    m1.factors = {m.factors[0]};
    m2.factors = {m.factors[1]};
    CFContext both(m, 1.0, 1.0, 2.0), one(m1, 1.0, 1.0, 2.0), two(m2, 1.0, 1.0, 2.0);
    for (auto [u1, u2] : {std::pair<cplx, cplx>{0.5, 0.3}, {{3.0, -1.0}, {-2.0, 0.5}}})
        EXPECT_LT(rel(both.phi(u1, u2), one.phi(u1, u2) * two.phi(u1, u2)), 1e-13);
}

TEST(CharFnCs, Trivial) {
    std::vector<DeterministicFactor> d{{0.4, 0.1}};
    EXPECT_EQ(phi_cs(d, 0.0, 0.0, 1.0, 1.0, 2.0), cplx(1.0));
    EXPECT_LT(std::abs(phi_cs(d, {0, -1}, 0.0, 1.0, 1.0, 2.0) - 1.0), 1e-14);
    EXPECT_LT(std::abs(phi_cs(d, 0.0, {0, -1}, 1.0, 1.0, 2.0) - 1.0), 1e-14);
    CFContext ctx(cs_model(d), 1.0, 1.0, 2.0);
    EXPECT_LT(std::abs(ctx.phi({0, -1}, 0.0) - 1.0), 1e-8);
}

TEST(CharFnCs, GaussianOracle) {
    const double sh = 0.4, lam = 0.1, T = 1.0, T1 = 1.0, T2 = 2.0;
    using boost::math::quadrature::gauss_kronrod;
    auto vol = [&](double t, double Tm) { return sh * std::exp(-lam * (Tm - t)); };
    const double v11 = gauss_kronrod<double, 31>::integrate([&](double t) { return vol(t, T1) * vol(t, T1); }, 0.0, T);
    const double v22 = gauss_kronrod<double, 31>::integrate([&](double t) { return vol(t, T2) * vol(t, T2); }, 0.0, T);
    const double v12 = gauss_kronrod<double, 31>::integrate([&](double t) { return vol(t, T1) * vol(t, T2); }, 0.0, T);
    const cplx I(0, 1);
    const cplx u1 = 1.0, u2 = 1.0;
    const cplx mean = -0.5 * (u1 * v11 + u2 * v22) * I;
    const cplx want = std::exp(mean - 0.5 * (u1 * u1 * v11 + 2.0 * u1 * u2 * v12 + u2 * u2 * v22));
    EXPECT_LT(rel(phi_cs({{sh, lam}}, u1, u2, T, T1, T2), want), 1e-12);
    // lambda -> 0 limit is continuous
    EXPECT_LT(rel(phi_cs({{sh, 0.0}}, u1, u2, T, T1, T2), phi_cs({{sh, 1e-9}}, u1, u2, T, T1, T2)), 1e-8);
}

TEST(CharFn, PriceLevel) {
    CFContext ctx(reference_model(), 1.0, 1.0, 2.0);
    const auto flat = FuturesCurve::flat(1.0);
    EXPECT_EQ(phi_price_level(ctx, flat, 0.0, 0.0), cplx(1.0));
    EXPECT_LT(std::abs(phi_price_level(ctx, flat, 0.7, -0.2) - ctx.phi(0.7, -0.2)), 1e-15);
    const FuturesCurve c({1.0, 2.0}, {50.0, 60.0});
    const cplx v = ctx.phi(1.0, 0.0);
    EXPECT_LT(std::abs(phi_price_level(ctx, c, 1.0, 0.0) - v * std::exp(cplx(0, std::log(50.0)))), 1e-14);
}

TEST(CharFn, LambdaZeroRoutesToOde) {
    ModelParams m;
    m.factors.push_back({1.0, 0.1, 0.3, -0.3, 0.1, 0.0});
    CFContext cf(m, 1.0, 1.0, 1.0, CfBackend::closed_form), ode(m, 1.0, 1.0, 1.0);
    EXPECT_LT(rel(cf.phi(1.3, 0.0), ode.phi(1.3, 0.0)), 1e-12);
    EXPECT_EQ(cf.closed_form_evaluations(), 0);
}

TEST(CharFn, AdmissibleStrip) {
    CFContext ctx(reference_model(), 1.0, 1.0, 2.0);
    const double s = admissible_shift(ctx, 1, -1);
    EXPECT_GE(s, 5.0);
    EXPECT_TRUE(std::isfinite(std::abs(ctx.phi({0.0, s * 0.9}, 0.0))));
}
