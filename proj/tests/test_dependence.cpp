#include <gtest/gtest.h>

#include <random>

#include "cs_oracle.hpp"
#include "svcurve/dependence.hpp"

using namespace svcurve;

namespace {

ModelParams cs(std::vector<DeterministicFactor> d) {
    ModelParams m;
    m.deterministic_factors = std::move(d);
    return m;
}

const std::vector<DeterministicFactor> kCs1{{0.4, 0.1}};
const std::vector<DeterministicFactor> kCs2{{0.4, 0.1}, {0.3, 2.0}};

CsoContract cso(double T, double T1, double T2, double K, OptionType t = OptionType::call, double r = 0.0) {
    CsoContract c;
    c.option_maturity = T;
    c.t1 = T1;
    c.t2 = T2;
    c.strike = K;
    c.type = t;
    c.rate = r;
    return c;
}

double bvn_quadrature(double h, double k, double r) {
    auto f = [&](double x) {
        return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI) * norm_cdf((k - r * x) / std::sqrt(1 - r * r));
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -40.0, h, 20, 1e-15);
}

double gaussian_copula_density(double u, double v, double r) {
    const double a = norm_quantile(u), b = norm_quantile(v);
    return std::exp(-(r * r * (a * a + b * b) - 2 * r * a * b) / (2 * (1 - r * r))) / std::sqrt(1 - r * r);
}

}  // namespace

TEST(BivariateNormal, OrthantIdentity) {
    for (double r : {-0.999, -0.95, -0.5, 0.0, 0.2, 0.6, 0.93, 0.999})
        EXPECT_NEAR(bivariate_normal_cdf(0, 0, r), 0.25 + std::asin(r) / (2 * M_PI), 1e-14) << r;
}

TEST(BivariateNormal, QuadratureOracle) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> H(-4, 4), R(-0.99, 0.99);
    for (int i = 0; i < 200; ++i) {
        const double h = H(rng), k = H(rng), r = R(rng);
        EXPECT_NEAR(bivariate_normal_cdf(h, k, r), bvn_quadrature(h, k, r), 1e-12) << h << " " << k << " " << r;
    }
    EXPECT_NEAR(bivariate_normal_cdf(1.0, INFINITY, 0.3), norm_cdf(1.0), 1e-15);
    EXPECT_EQ(bivariate_normal_cdf(-INFINITY, 2.0, 0.3), 0.0);
}

TEST(Measures, IndependenceCopula) {
    const auto g = copula_from_function([](double u, double v) { return u * v; }, [](double, double) { return 1.0; });
    const auto m = dependence_measures(g);
    EXPECT_NEAR(m.tau_K, 0.0, 5e-3);
    EXPECT_NEAR(m.rho_S, 0.0, 5e-3);
    EXPECT_NEAR(m.sigma_SW, 0.0, 5e-3);
    EXPECT_NEAR(m.phi_H_squared_form, 0.0, 5e-3);
}

TEST(Measures, ComonotoneCopula) {
    const auto g = copula_from_function([](double u, double v) { return std::min(u, v); }, nullptr);
    const auto m = dependence_measures(g);
    EXPECT_NEAR(m.tau_K, 1.0, 1e-2);
    EXPECT_NEAR(m.rho_S, 1.0, 1e-2);
}

TEST(Measures, GaussianIdentities) {
    for (double r : {-0.6, 0.5, 0.8}) {
        const auto g = copula_from_function([r](double u, double v) { return gaussian_copula(u, v, r); },
                                            [r](double u, double v) { return gaussian_copula_density(u, v, r); });
        const auto m = dependence_measures(g);
        EXPECT_NEAR(m.tau_K, 2 / M_PI * std::asin(r), 5e-3) << r;
        EXPECT_NEAR(m.rho_S, 6 / M_PI * std::asin(r / 2), 5e-3) << r;
    }
}

TEST(Copula, CsTwoFactorIsGaussian) {
    const CFContext ctx(cs(kCs2), 0.25, 0.25, 0.75);
    const CsGaussian o(kCs2, 0.25, 0.25, 0.75);
    const auto g = copula_from_cf(ctx);
    double err = 0.0, derr = 0.0;
    for (std::size_t i = 0; i < g.n1(); ++i)
        for (std::size_t j = 0; j < g.n2(); ++j) {
            err = std::max(err, std::abs(g.Cat(i, j) - gaussian_copula(g.v1[i], g.v2[j], o.rho())));
            if (i > 10 && j > 10 && i + 11 < g.n1() && j + 11 < g.n2()) {
                const double cg = gaussian_copula_density(g.v1[i], g.v2[j], o.rho());
                derr = std::max(derr, std::abs(g.cat(i, j) - cg) / std::max(1.0, cg));
            }
        }
    EXPECT_LT(err, 2e-3);
    EXPECT_LT(derr, 1e-2);
    const auto a = check_copula(g);
    EXPECT_LT(a.grounded, 2e-3);
    EXPECT_LT(a.margins, 2e-3);
    EXPECT_LT(a.two_increasing, 1e-3);
    EXPECT_GE(a.min_density, -1e-4);
    EXPECT_EQ(g.masked_fraction, 0.0);
    const auto m = dependence_measures(g);
    EXPECT_NEAR(m.tau_K, 2 / M_PI * std::asin(o.rho()), 5e-3);
    EXPECT_NEAR(m.rho_S, 6 / M_PI * std::asin(o.rho() / 2), 5e-3);
}

TEST(Copula, CsOneFactorIsComonotone) {
    NumericsConfig cfg;
    cfg.fft_size_2d = 2048;
    cfg.lattice_sd_2d = 8;
    const CFContext ctx(cs(kCs1), 0.5, 1.0, 2.0);
    const auto g = copula_from_cf(ctx, {}, cfg);
    double err = 0.0;
    for (std::size_t i = 0; i < g.n1(); ++i)
        for (std::size_t j = 0; j < g.n2(); ++j) err = std::max(err, std::abs(g.Cat(i, j) - std::min(g.v1[i], g.v2[j])));
    EXPECT_LT(err, 2e-3);
    EXPECT_EQ(g.masked_fraction, 1.0);
}

TEST(Copula, ReferenceAxioms) {
    const CFContext ctx(reference_model(), 0.25, 0.25, 0.75);
    const auto g = copula_from_cf(ctx);
    const auto a = check_copula(g);
    EXPECT_LT(a.grounded, 2e-3);
    EXPECT_LT(a.margins, 2e-3);
    EXPECT_LT(a.frechet, 2e-3);
    EXPECT_LT(a.two_increasing, 1e-3);
    EXPECT_GE(a.min_density, -1e-4);
    EXPECT_NEAR(g.Cat(50, g.n2() - 2), g.v1[50], 2e-3);
    const auto m = dependence_measures(g);
    EXPECT_GT(m.tau_K, 0.5);
    EXPECT_LT(m.tau_K, 1.0);
    EXPECT_GT(m.rho_S, m.tau_K);
}

TEST(GaussianCopulaPrice, MatchesExactInCsTwoFactor) {
    const auto model = cs(kCs2);
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const CsGaussian o(kCs2, 0.25, 0.25, 0.75);
    const auto mg = price_marginals(model, curve, cso(0.25, 0.25, 0.75, 0.0));
    for (double K : {-1.0, 0.0, 0.5, 2.0}) {
        const auto c = cso(0.25, 0.25, 0.75, K);
        const double g = price_cso_gaussian_copula(mg, o.rho(), c);
        EXPECT_NEAR(g, gaussian_spread(o, 100, 100, K, 0.25, 0.0), 1e-3) << K;
        EXPECT_NEAR(g, price_cso_single_integral(model, curve, c).price, 5e-3) << K;
    }
}

TEST(GaussianCopulaPrice, DecreasingInRhoAndBounded) {
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const auto c = cso(0.25, 0.25, 0.75, 0.0);
    const auto mg = price_marginals(reference_model(), curve, c);
    const auto fr = frechet_bound_prices(mg, c);
    double prev = INFINITY;
    for (int k = -9; k <= 9; ++k) {
        const double p = price_cso_gaussian_copula(mg, k / 10.0, c);
        EXPECT_LT(p, prev) << k;
        EXPECT_LE(p, fr.upper + 1e-6);
        EXPECT_GE(p, fr.lower - 1e-6);
        prev = p;
    }
    EXPECT_NEAR(price_cso_gaussian_copula(mg, 1 - 1e-9, c), fr.lower, 5e-3);
    EXPECT_NEAR(price_cso_gaussian_copula(mg, -1 + 1e-9, c), fr.upper, 5e-3);
}

TEST(Frechet, Limits) {
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 98.0});
    auto c = cso(0.25, 0.25, 0.75, -500.0, OptionType::call, 0.02);
    const auto mg = price_marginals(reference_model(), curve, c);
    const auto fr = frechet_bound_prices(mg, c);
    const double fwd = std::exp(-0.005) * (100 - 98 + 500);
    EXPECT_NEAR(fr.lower, fwd, 1e-3);
    EXPECT_NEAR(fr.upper, fwd, 1e-3);

    PriceMarginals same = mg;
    same.G2 = same.G1;
    same.F2 = same.F1;
    c.strike = 0.0;
    EXPECT_NEAR(frechet_bound_prices(same, c).lower, 0.0, 1e-12);
}

TEST(ImpliedCorrelation, RoundTrip) {
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    for (auto type : {OptionType::call, OptionType::put}) {
        const auto c = cso(0.25, 0.25, 0.75, 0.5, type, 0.01);
        const auto mg = price_marginals(reference_model(), curve, c);
        for (int k = -9; k <= 9; k += 2) {
            const double r = k / 10.0;
            const auto ic = implied_correlation(mg, c, price_cso_gaussian_copula(mg, r, c));
            EXPECT_NEAR(ic.rho, r, 1e-6) << r;
            EXPECT_LT(ic.price_error, 1e-8);
            EXPECT_FALSE(ic.near_boundary);
        }
    }
}

TEST(ImpliedCorrelation, BandAndBoundary) {
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const auto c = cso(0.25, 0.25, 0.75, 0.5);
    const auto mg = price_marginals(reference_model(), curve, c);
    const double top = price_cso_gaussian_copula(mg, -1 + 1e-6, c);
    EXPECT_THROW(implied_correlation(mg, c, top + 0.1), NoSolutionError);
    EXPECT_THROW(implied_correlation(mg, c, 0.0), NoSolutionError);
    const auto ic = implied_correlation(mg, c, top - 1e-9);
    EXPECT_TRUE(ic.near_boundary);
    EXPECT_LT(ic.rho, -0.99);
}

TEST(ImpliedCorrelation, ReferenceModelPriceInsideUnitInterval) {
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const auto c = cso(0.25, 0.25, 0.75, 0.0);
    const auto mg = price_marginals(reference_model(), curve, c);
    const double p = price_cso_caldana_fusai(reference_model(), curve, c).price;
    const auto ic = implied_correlation(mg, c, p);
    EXPECT_GT(ic.rho, 0.0);
    EXPECT_LT(ic.rho, 1.0);
}
