#include <gtest/gtest.h>

#include "svcurve/calib.hpp"

using namespace svcurve;

namespace {

ModelParams cs2(double s1, double l1, double s2, double l2) {
    ModelParams m;
    m.deterministic_factors = {{s1, l1}, {s2, l2}};
    return m;
}

}  // namespace

TEST(ImpliedVol, RoundTrip) {
    for (auto t : {OptionType::call, OptionType::put})
        for (double K : {60.0, 90.0, 100.0, 120.0, 150.0})
            for (double v : {0.05, 0.2, 0.8}) {
                const double p = black76(100, K, 1.0, v, 0.03, t);
                const double intrinsic = std::exp(-0.03) * std::max(t == OptionType::call ? 100 - K : K - 100, 0.0);
                if (p - intrinsic < 1e-10) continue;
                EXPECT_NEAR(implied_vol_black76(p, 100, K, 1.0, 0.03, t).vol, v, 1e-8) << K << " " << v;
            }
    EXPECT_NEAR(implied_vol_black76(7.9655674554, 100, 100, 1, 0, OptionType::call).vol, 0.2, 1e-8);
}

TEST(ImpliedVol, BoundaryAndBand) {
    const auto iv = implied_vol_black76(std::exp(-0.01) * 20 + 1e-12, 100, 80, 1, 0.01, OptionType::call);
    EXPECT_TRUE(iv.near_boundary);
    EXPECT_LT(iv.vol, 0.05);
    EXPECT_THROW(implied_vol_black76(100.0, 100, 80, 1, 0.0, OptionType::call), NoSolutionError);
    EXPECT_THROW(implied_vol_black76(19.0, 100, 80, 1, 0.0, OptionType::call), NoSolutionError);
}

TEST(ImpliedVol, DeepOutOfTheMoney) {
    const auto m = reference_model();
    const VanillaContract c{1.0 / 6.0, 1.0 / 6.0, 150.0, OptionType::call, 0.0};
    const double p = price_vanilla_fourier(m, FuturesCurve::flat(100.0), c).price;
    ASSERT_GT(p, 0.0);
    const auto iv = implied_vol_black76(p, 100, 150, 1.0 / 6.0, 0.0, OptionType::call);
    EXPECT_NEAR(black76(100, 150, 1.0 / 6.0, iv.vol, 0.0, OptionType::call), p, 1e-10);
    const double tiny = black76(100, 150, 1.0 / 6.0, 1.7, 0.0, OptionType::call);
    EXPECT_NEAR(implied_vol_black76(tiny, 100, 150, 1.0 / 6.0, 0.0, OptionType::call).vol, 1.7, 1e-8);
}

TEST(VanillaBatch, MatchesSinglePricer) {
    const auto m = reference_model();
    const auto curve = FuturesCurve({0.1, 1.0, 3.0}, {95.0, 100.0, 104.0});
    std::vector<VanillaContract> cs;
    for (double T : {0.25, 1.0, 2.5})
        for (double K : {70.0, 100.0, 130.0}) {
            cs.push_back({T, T, K, OptionType::call, 0.02});
            cs.push_back({T, T + 0.5, K, OptionType::put, 0.02});
        }
    const auto b = price_vanilla_fourier_batch(m, curve, cs);
    for (std::size_t i = 0; i < cs.size(); ++i)
        EXPECT_NEAR(b[i].price, price_vanilla_fourier(m, curve, cs[i]).price, 1e-8) << i;
}

TEST(Objective, SelfConsistencyAndArithmetic) {
    const auto m = reference_model();
    auto qs = synthetic_quotes(m, FuturesCurve::flat(100.0));
    ASSERT_EQ(qs.quotes.size(), 35u);
    EXPECT_LT(objective(m, qs), 1e-10);
    EXPECT_LT(objective(m, qs, ObjectiveKind::vol), 1e-10);
    qs.quotes[17].price += 0.5;
    EXPECT_NEAR(objective(m, qs), 0.25, 1e-9);
    auto bad = m;
    bad.factors[0].sigma = 0.0;
    std::string why;
    EXPECT_TRUE(std::isinf(objective(bad, qs, ObjectiveKind::price, {}, &why)));
    EXPECT_FALSE(why.empty());
}

TEST(ErrorReport, Arithmetic) {
    std::vector<double> p(35, 0.0), v(35, 0.0);
    std::vector<bool> atm(35, false);
    for (int i = 3; i < 35; i += 7) atm[i] = true;
    p[3] = 0.2;
    const auto r = error_report(p, v, atm);
    EXPECT_NEAR(r.mae_price, 0.2 / 35, 1e-15);
    EXPECT_NEAR(r.mae_atm_price, 0.2 / 5, 1e-15);
    EXPECT_NEAR(r.rmse_price, 0.2 / std::sqrt(35.0), 1e-15);
    EXPECT_EQ(r.mae_vol, 0.0);

    const auto m = reference_model();
    auto qs = synthetic_quotes(m, FuturesCurve::flat(100.0));
    const auto e = error_report(m, qs);
    EXPECT_LT(e.rmse_price, 1e-9);
    EXPECT_LT(e.rmse_vol, 1e-9);
    std::reverse(qs.quotes.begin(), qs.quotes.end());
    qs.quotes[0].price += 0.1;
    const auto a = error_report(m, qs);
    std::reverse(qs.quotes.begin(), qs.quotes.end());
    const auto b = error_report(m, qs);
    EXPECT_DOUBLE_EQ(a.mae_price, b.mae_price);
    EXPECT_DOUBLE_EQ(a.rmse_vol, b.rmse_vol);
}

TEST(Calibrate, OneFreeParameter) {
    const auto m = reference_model();
    const auto qs = synthetic_quotes(m, FuturesCurve::flat(100.0), 0.0, {1.0}, {1.0});
    auto start = m;
    start.factors[0].v0 = 0.3;
    auto b = default_bounds(m);
    b.free.assign(b.lo.size(), false);
    b.free[4] = true;
    OptimizerConfig oc;
    oc.starts = 2;
    oc.nm_max_evals = 60;
    const auto r = calibrate(start, qs, b, oc);
    EXPECT_NEAR(r.theta_star.factors[0].v0, 0.16, 1e-6);
    EXPECT_EQ(r.theta_star.factors[1].v0, m.factors[1].v0);
    EXPECT_LE(r.objective, r.initial_objective);
}

TEST(Calibrate, CsTwoFactorRoundTripAndDeterminism) {
    const auto truth = cs2(0.35, 0.3, 0.25, 2.5);
    const auto qs = synthetic_quotes(truth, FuturesCurve::flat(100.0), 0.01);
    OptimizerConfig oc;
    oc.nm_max_evals = 300;
    const auto a = calibrate(cs2(0.3, 0.5, 0.2, 1.5), qs, {}, oc);
    EXPECT_LT(a.errors.rmse_price, 1e-4);
    EXPECT_LE(a.objective, *std::min_element(a.start_objectives.begin(), a.start_objectives.end()));
    EXPECT_EQ(a.start_objectives.size(), 8u);
    ASSERT_FALSE(a.log.empty());
    oc.threads = 3;
    const auto b = calibrate(cs2(0.3, 0.5, 0.2, 1.5), qs, {}, oc);
    EXPECT_EQ(pack(a.theta_star), pack(b.theta_star));
    EXPECT_EQ(a.objective, b.objective);
    EXPECT_EQ(a.log.size(), b.log.size());
}

TEST(Calibrate, CsCannotFitStochasticVolatilitySmile) {
    const auto m = reference_model();
    const auto qs = synthetic_quotes(m, FuturesCurve::flat(100.0));
    OptimizerConfig oc;
    oc.nm_max_evals = 300;
    const auto r = calibrate(cs2(0.3, 0.5, 0.2, 1.5), qs, {}, oc);
    EXPECT_GT(r.errors.rmse_vol, 1e-4);
    EXPECT_GT(r.errors.rmse_vol, error_report(m, qs).rmse_vol);
}

TEST(Calibrate, VolObjectiveAndInputChecks) {
    const auto truth = cs2(0.35, 0.3, 0.25, 2.5);
    const auto qs = synthetic_quotes(truth, FuturesCurve::flat(100.0));
    OptimizerConfig oc;
    oc.kind = ObjectiveKind::vol;
    oc.starts = 2;
    oc.nm_max_evals = 200;
    const auto r = calibrate(cs2(0.3, 0.5, 0.2, 1.5), qs, {}, oc);
    EXPECT_LT(r.errors.rmse_vol, 1e-5);
    Bounds b = default_bounds(truth);
    b.lo.pop_back();
    EXPECT_THROW(calibrate(truth, qs, b), InputError);
    oc.starts = 0;
    EXPECT_THROW(calibrate(truth, qs, {}, oc), InputError);
}
