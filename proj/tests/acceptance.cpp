#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include "cs_oracle.hpp"
#include "svcurve/calib.hpp"
#include "svcurve/dependence.hpp"
#include "svcurve/montecarlo.hpp"
#include "svcurve/specfun.hpp"

using namespace svcurve;

namespace {

int failures = 0;

void report(int n, const std::string& name, bool ok, const std::string& detail, double seconds) {
    std::printf("criterion %2d %s: %s (%s; %.1f s)\n", n, name.c_str(), ok ? "PASS" : "FAIL", detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string f(const char* fmt, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, a, b, c, d);
    return buf;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    [[nodiscard]] double s() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

ModelParams cs(std::vector<DeterministicFactor> d) {
    ModelParams m;
    m.deterministic_factors = std::move(d);
    return m;
}

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

McConfig mc(std::size_t paths, std::uint64_t seed) {
    McConfig c;
    c.paths = paths;
    c.seed = seed;
    return c;
}

const std::vector<DeterministicFactor> kCs1{{0.4, 0.1}};
const std::vector<DeterministicFactor> kCs2{{0.4, 0.1}, {0.3, 2.0}};

void stochastic_correlation() {
    Timer t;
    const auto a = instantaneous_correlation_study(reference_model(), 1.0, 1.0, 2.0, mc(1000000, 1));
    auto frozen = reference_model();
    for (auto& x : frozen.factors) x.sigma = 0.0;
    const auto b = instantaneous_correlation_study(frozen, 1.0, 1.0, 2.0, mc(1000000, 2));
    ModelParams one;
    one.factors.push_back(reference_model().factors[0]);
    const auto c = instantaneous_correlation_study(one, 1.0, 1.0, 2.0, mc(1000000, 3));
    bool ones = true;
    for (double r : c.samples) ones = ones && r == 1.0;
    const double secs = t.s();
    const bool ok = std::abs(a.mean - 0.8575) <= 0.005 && std::abs(b.mean - 0.8619) <= 0.0005 && ones && secs < 120;
    report(1, "stochastic correlation", ok,
           f("mean %.5f (se %.1e), frozen %.5f, one factor all 1: ", a.mean, a.std_error, b.mean) + (ones ? "yes" : "no"),
           secs);
}

void backend_equivalence() {
    Timer t;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double T = 0.1 + 1.9 * U(rng), T1 = T + U(rng), T2 = T1 + 0.1 + U(rng);
        const double u1 = -4 + 8 * U(rng), u2 = -4 + 8 * U(rng);
        const CFContext a(reference_model(), T, T1, T2, CfBackend::closed_form), b(reference_model(), T, T1, T2, CfBackend::ode);
        const cplx pa = a.phi(u1, u2), pb = b.phi(u1, u2);
        worst = std::max(worst, std::abs(pa - pb) / std::abs(pb));
    }
    const double secs = t.s();
    report(2, "closed form vs ODE", worst < 1e-6 && secs < 60, f("max relative gap %.2e over 100 points", worst), secs);
}

void normalisation() {
    Timer t;
    bool exact = true;
    double worst = 0.0;
    auto check = [&](const CFContext& c) {
        exact = exact && c.phi(0.0, 0.0) == cplx(1.0);
        worst = std::max({worst, std::abs(c.phi({0, -1}, 0.0) - 1.0), std::abs(c.phi(0.0, {0, -1}) - 1.0)});
    };
    for (auto b : {CfBackend::closed_form, CfBackend::ode}) check(CFContext(reference_model(), 1.0, 1.0, 2.0, b));
    check(CFContext(cs(kCs2), 1.0, 1.0, 2.0));
    report(3, "martingale normalisation", exact && worst < 1e-8,
           std::string("phi(0,0) == 1: ") + (exact ? "yes" : "no") + f(", max |phi(-i)-1| %.1e", worst), t.s());
}

void vanilla_triangle() {
    Timer t;
    const auto m = reference_model();
    const auto curve = FuturesCurve::flat(100.0);
    const std::vector<VanillaContract> suite{{1, 1, 80, OptionType::call, 0.02},
                                             {1, 1, 100, OptionType::call, 0.02},
                                             {1, 1.5, 110, OptionType::call, 0.02},
                                             {1, 2, 125, OptionType::put, 0.02},
                                             {1, 1, 95, OptionType::put, 0.02}};
    const auto r = mc_price_vanilla_batch(m, curve, suite, mc(1000000, 4));
    double worst_se = 0.0;
    for (std::size_t i = 0; i < suite.size(); ++i)
        worst_se = std::max(worst_se, std::abs(r[i].price - price_vanilla_fourier(m, curve, suite[i]).price) / r[i].std_error);
    double black = 0.0;
    for (double T : {0.25, 1.0})
        for (double K : {70.0, 90.0, 100.0, 115.0, 140.0}) {
            const CsGaussian o(kCs1, T, T + 0.5, T + 0.5);
            const VanillaContract c{T, T + 0.5, K, OptionType::call, 0.02};
            black = std::max(black, std::abs(price_vanilla_fourier(cs(kCs1), curve, c).price -
                                             black76(100, K, T, std::sqrt(o.v11 / T), 0.02, OptionType::call)));
        }
    report(4, "vanilla triangle", worst_se < 3 && black < 1e-8,
           f("max |Fourier - MC| %.2f SE at 1e6 paths, CS1F vs Black-76 %.1e", worst_se, black), t.s());
}

void cso_triangle() {
    Timer t;
    const auto m = reference_model();
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const std::vector<double> ks{0.5, 1.0, 2.0};
    const auto mcr = mc_price_cso_batch(m, curve, cso(0.25, 0.25, 0.75, 0.0), ks, mc(1000000, 5));
    const auto hz = price_cso_hurd_zhou_ladder(m, curve, cso(0.25, 0.25, 0.75, 1.0), ks);
    double gap = 0.0, mc_excess = -INFINITY;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const auto c = cso(0.25, 0.25, 0.75, ks[i]);
        const double p[3] = {price_cso_caldana_fusai(m, curve, c).price, hz[i].price,
                             price_cso_single_integral(m, curve, c).price};
        for (int a = 0; a < 3; ++a) {
            for (int b = a + 1; b < 3; ++b) gap = std::max(gap, std::abs(p[a] - p[b]));
            mc_excess = std::max(mc_excess, std::abs(p[a] - mcr[i].price) - 0.01 - 3 * mcr[i].std_error);
        }
    }
    double marg = 0.0;
    const CsGaussian o(kCs2, 0.25, 0.25, 0.75);
    for (double F2 : {90.0, 100.0, 112.0}) {
        const auto cv = FuturesCurve({0.25, 0.75}, {100.0, F2});
        marg = std::max(marg, std::abs(price_cso_caldana_fusai(cs(kCs2), cv, cso(0.25, 0.25, 0.75, 0.0, OptionType::call, 0.01)).price -
                                       margrabe(o, 100.0, F2, 0.25, 0.01)));
    }
    double parity = 0.0;
    const auto cv = FuturesCurve({0.25, 0.75}, {101.0, 99.0});
    for (double K : {-3.0, 0.0, 0.5, 2.0}) {
        const double c = price_cso_caldana_fusai(m, cv, cso(0.25, 0.25, 0.75, K, OptionType::call, 0.02)).price;
        const double p = price_cso_caldana_fusai(m, cv, cso(0.25, 0.25, 0.75, K, OptionType::put, 0.02)).price;
        parity = std::max(parity, std::abs(c - p - std::exp(-0.005) * (101.0 - 99.0 - K)));
    }
    report(5, "spread option triangle", gap < 0.01 && mc_excess <= 0 && marg < 1e-6 && parity < 1e-10,
           f("max Fourier gap %.1e, MC excess over 0.01+3SE %.1e, Margrabe %.1e, parity %.1e", gap, mc_excess, marg, parity),
           t.s());
}

void copula_checks() {
    Timer t;
    const auto g = copula_from_cf(CFContext(reference_model(), 0.25, 0.25, 0.75));
    const auto a = check_copula(g);
    const bool axioms = a.grounded < 2e-3 && a.margins < 2e-3 && a.two_increasing < 1e-3 && a.min_density >= -1e-4;
    const CsGaussian o(kCs2, 0.25, 0.25, 0.75);
    const auto h = copula_from_cf(CFContext(cs(kCs2), 0.25, 0.25, 0.75));
    double err = 0.0;
    for (std::size_t i = 0; i < h.n1(); ++i)
        for (std::size_t j = 0; j < h.n2(); ++j)
            err = std::max(err, std::abs(h.Cat(i, j) - gaussian_copula(h.v1[i], h.v2[j], o.rho())));
    const auto gg = copula_from_function([](double u, double v) { return gaussian_copula(u, v, 0.5); }, nullptr);
    const double tau = dependence_measures(gg).tau_K;
    report(6, "copula axioms and oracle", axioms && err < 2e-3 && std::abs(tau - 1.0 / 3.0) < 5e-3,
           f("grounded %.1e margins %.1e 2-increasing %.1e, CS2F vs Gaussian %.1e", a.grounded, a.margins,
             a.two_increasing, err) + f(", Gaussian tau %.4f", tau),
           t.s());
}

void samuelson_effect() {
    Timer t;
    const auto m = reference_model();
    const auto curve = FuturesCurve::flat(100.0);
    std::vector<double> tau, rho, ic;
    for (double gap : {0.25, 0.5, 0.75, 1.0}) {
        const auto g = copula_from_cf(CFContext(m, 0.25, 0.25, 0.25 + gap));
        const auto d = dependence_measures(g);
        tau.push_back(d.tau_K);
        rho.push_back(d.rho_S);
        const auto c = cso(0.25, 0.25, 0.25 + gap, 0.0);
        const auto mg = price_marginals(m, curve, c);
        ic.push_back(implied_correlation(mg, c, price_cso_caldana_fusai(m, curve, c).price).rho);
    }
    bool ok = true;
    for (std::size_t i = 1; i < tau.size(); ++i) ok = ok && tau[i] <= tau[i - 1] && rho[i] <= rho[i - 1] && ic[i] <= ic[i - 1];
    report(7, "Samuelson correlation effect", ok,
           f("tau %.3f..%.3f, rho_S %.3f..%.3f, ", tau.front(), tau.back(), rho.front(), rho.back()) +
               f("implied correlation %.3f..%.3f", ic.front(), ic.back()),
           t.s());
}

void implied_round_trip() {
    Timer t;
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    const auto c = cso(0.25, 0.25, 0.75, 0.5, OptionType::call, 0.01);
    const auto mg = price_marginals(reference_model(), curve, c);
    double worst = 0.0;
    for (int k = -9; k <= 9; ++k) {
        const double r = k / 10.0;
        worst = std::max(worst, std::abs(implied_correlation(mg, c, price_cso_gaussian_copula(mg, r, c)).rho - r));
    }
    report(8, "implied correlation round trip", worst < 1e-6, f("max |rho error| %.1e over 19 points", worst), t.s());
}

void calibration() {
    Timer t;
    const auto m = reference_model();
    const auto qs = synthetic_quotes(m, FuturesCurve::flat(100.0));
    auto x = pack(m);
    for (auto& v : x) v = v == 0.0 ? 0.05 : 1.1 * v;
    OptimizerConfig oc;
    oc.starts = 1;
    oc.nm_max_evals = 60;
    const auto sv = calibrate(unpack(m, x), qs, {}, oc);
    OptimizerConfig oc2;
    oc2.nm_max_evals = 300;
    ModelParams c2 = cs({{0.3, 0.5}, {0.2, 1.5}});
    const auto cr = calibrate(c2, qs, {}, oc2);
    report(9, "calibration round trip", sv.errors.rmse_price < 1e-4 && cr.errors.rmse_vol > sv.errors.rmse_vol,
           f("SV2F RMSE price %.1e vol %.1e, CS2F RMSE vol %.1e", sv.errors.rmse_price, sv.errors.rmse_vol,
             cr.errors.rmse_vol),
           t.s());
}

void hygiene() {
    Timer t;
    const auto m = reference_model();
    const auto curve = FuturesCurve({0.25, 0.75}, {100.0, 100.0});
    NumericsConfig base, fine;
    fine.fft_size_1d *= 2;
    fine.fft_size_2d *= 2;
    fine.quad_nodes *= 2;
    double gate = 0.0;
    for (const auto& v : std::vector<VanillaContract>{{1, 1, 80, OptionType::call, 0}, {0.5, 0.75, 105, OptionType::put, 0.02}})
        gate = std::max(gate, std::abs(price_vanilla_fourier(m, curve, v, base).price - price_vanilla_fourier(m, curve, v, fine).price));
    for (double K : {-1.0, 0.5, 1.0}) {
        const auto c = cso(0.25, 0.25, 0.75, K);
        gate = std::max(gate, std::abs(price_cso_caldana_fusai(m, curve, c, 1.0, base).price -
                                       price_cso_caldana_fusai(m, curve, c, 1.0, fine).price));
        gate = std::max(gate, std::abs(price_cso_hurd_zhou(m, curve, c, base).price - price_cso_hurd_zhou(m, curve, c, fine).price));
        gate = std::max(gate, std::abs(price_cso_single_integral(m, curve, c, base).price -
                                       price_cso_single_integral(m, curve, c, fine).price));
    }
    const auto mg0 = price_marginals(m, curve, cso(0.25, 0.25, 0.75, 0.5), base);
    const auto mg1 = price_marginals(m, curve, cso(0.25, 0.25, 0.75, 0.5), fine);
    gate = std::max(gate, std::abs(price_cso_gaussian_copula(mg0, 0.8, cso(0.25, 0.25, 0.75, 0.5)) -
                                   price_cso_gaussian_copula(mg1, 0.8, cso(0.25, 0.25, 0.75, 0.5))));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    double ode_res = 0.0, recur = 0.0;
    for (int k = 0; k < 100; ++k) {
        const cplx a(3 * d(rng), 3 * d(rng)), b(3.5 + 2 * d(rng), 2 * d(rng)), z(5 * d(rng), 5 * d(rng));
        if (std::abs(z) > 5.0 || std::abs(z) < 0.2) continue;
        const double h = 1e-4 * std::abs(z);
        const cplx w0 = kummer_m(a, b, z).value, wp = kummer_m(a, b, z + h).value, wm = kummer_m(a, b, z - h).value;
        const cplx w1 = (wp - wm) / (2 * h), w2 = (wp - 2.0 * w0 + wm) / (h * h);
        const double scale = std::abs(z * w2) + std::abs((b - z) * w1) + std::abs(a * w0);
        ode_res = std::max(ode_res, std::abs(z * w2 + (b - z) * w1 - a * w0) / scale);
    }
    for (int k = 0; k < 100; ++k) {
        const cplx z(6 * d(rng), 6 * d(rng));
        if (std::abs(z) < 0.1) continue;
        recur = std::max(recur, std::abs(gamma_complex(z + 1.0) - z * gamma_complex(z)) / std::abs(z * gamma_complex(z)));
    }
    report(10, "numerical hygiene", gate < 1e-4 && ode_res < 1e-6 && recur < 1e-12,
           f("max refinement change %.1e, Kummer ODE residual %.1e, Gamma recurrence %.1e", gate, ode_res, recur), t.s());
}

template <class F>
void guarded(int n, const std::string& name, F&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(n, name, false, std::string("exception: ") + e.what(), 0.0);
    }
}

}  // namespace

int main() {
    guarded(1, "stochastic correlation", stochastic_correlation);
    guarded(2, "closed form vs ODE", backend_equivalence);
    guarded(3, "martingale normalisation", normalisation);
    guarded(4, "vanilla triangle", vanilla_triangle);
    guarded(5, "spread option triangle", cso_triangle);
    guarded(6, "copula axioms and oracle", copula_checks);
    guarded(7, "Samuelson correlation effect", samuelson_effect);
    guarded(8, "implied correlation round trip", implied_round_trip);
    guarded(9, "calibration round trip", calibration);
    guarded(10, "numerical hygiene", hygiene);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
