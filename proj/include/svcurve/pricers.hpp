#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "svcurve/charfn.hpp"
#include "svcurve/error.hpp"
#include "svcurve/model.hpp"
#include "svcurve/specfun.hpp"
#include "svcurve/transforms.hpp"

namespace svcurve {

struct PriceResult {
    double price = 0.0;
    std::string method;
    double std_error = std::numeric_limits<double>::quiet_NaN();  ///< Monte Carlo only
    std::map<std::string, double> diagnostics;
};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / M_SQRT2); }

// ---------------------------------------------------------------------------------------------
// vanillas

inline double black76(double F, double K, double T, double vol, double r, OptionType type) {
    if (!(F > 0 && K > 0 && T > 0 && vol >= 0)) throw InputError("black76: need F, K, T > 0 and vol >= 0");
    const double df = std::exp(-r * T), s = vol * std::sqrt(T);
    double call;
    if (s < 1e-300) {
        call = df * std::max(F - K, 0.0);
    } else {
        const double d1 = (std::log(F / K) + 0.5 * s * s) / s;
        call = df * (F * norm_cdf(d1) - K * norm_cdf(d1 - s));
    }
    return type == OptionType::call ? call : call - df * (F - K);
}

struct InTheMoneyProbabilities {
    double pi1 = 0.0, pi2 = 0.0;
};

/// Pi1 (share measure) and Pi2 (risk-neutral) exercise probabilities of F(T, T_m) > K.
inline InTheMoneyProbabilities itm_probabilities(const CFContext& ctx, double F, double K, const NumericsConfig& cfg,
                                                 std::map<std::string, double>* diag = nullptr) {
    const cplx I(0.0, 1.0);
    const double x = std::log(F / K);
    const cplx norm = ctx.phi({0.0, -1.0}, 0.0);
    const double scale = 0.5 / leg_moments(ctx, 1).sd;
    auto p2 = quad_semi_infinite([&](double u) {
        return cplx((std::exp(I * u * x) * ctx.phi(u, 0.0) / (I * u)).real());
    }, cfg.quad_upper_limit, cfg.quad_nodes, cfg.quad_tolerance, scale);
    auto p1 = quad_semi_infinite([&](double u) {
        return cplx((std::exp(I * u * x) * ctx.phi(cplx(u, -1.0), 0.0) / (I * u * norm)).real());
    }, cfg.quad_upper_limit, cfg.quad_nodes, cfg.quad_tolerance, scale);
    InTheMoneyProbabilities out{0.5 + p1.value.real() / M_PI, 0.5 + p2.value.real() / M_PI};
    if (diag) {
        (*diag)["pi1"] = out.pi1;
        (*diag)["pi2"] = out.pi2;
        (*diag)["quad_upper"] = std::max(p1.upper, p2.upper);
        (*diag)["quad_tail"] = std::max(p1.tail_estimate, p2.tail_estimate);
    }
    for (double p : {out.pi1, out.pi2})
        if (p < -1e-4 || p > 1 + 1e-4 || !std::isfinite(p))
            throw NumericalError("vanilla pricer: exercise probability " + std::to_string(p) + " outside [0, 1]");
    out.pi1 = std::clamp(out.pi1, 0.0, 1.0);
    out.pi2 = std::clamp(out.pi2, 0.0, 1.0);
    return out;
}

inline PriceResult put_from_parity(const PriceResult& call, const FuturesCurve& curve, const VanillaContract& c) {
    const double F = curve.price(c.futures_maturity), df = std::exp(-c.rate * c.option_maturity);
    PriceResult out = call;
    out.price = call.price - df * (F - c.strike);
    if (out.price < -1e-8) throw NumericalError("put from parity: negative put " + std::to_string(out.price));
    out.price = std::max(out.price, 0.0);
    return out;
}

inline PriceResult price_vanilla_fourier(const ModelParams& model, const FuturesCurve& curve, const VanillaContract& c,
                                         const NumericsConfig& cfg = {}) {
    c.validate();
    const CFContext ctx(model, c.option_maturity, c.futures_maturity, c.futures_maturity, CfBackend::ode,
                        cfg.ode_tolerance);
    const double F = curve.price(c.futures_maturity), df = std::exp(-c.rate * c.option_maturity);
    PriceResult out;
    out.method = "fourier";
    const auto p = itm_probabilities(ctx, F, c.strike, cfg, &out.diagnostics);
    out.price = std::max(0.0, df * (F * p.pi1 - c.strike * p.pi2));
    if (c.type == OptionType::put) return put_from_parity(out, curve, c);
    return out;
}

/// Put from complemented exercise probabilities, without parity.
inline double vanilla_put_direct(const ModelParams& model, const FuturesCurve& curve, const VanillaContract& c,
                                 const NumericsConfig& cfg = {}) {
    c.validate();
    const CFContext ctx(model, c.option_maturity, c.futures_maturity, c.futures_maturity, CfBackend::ode,
                        cfg.ode_tolerance);
    const double F = curve.price(c.futures_maturity), df = std::exp(-c.rate * c.option_maturity);
    const auto p = itm_probabilities(ctx, F, c.strike, cfg);
    return df * (c.strike * (1.0 - p.pi2) - F * (1.0 - p.pi1));
}

/// Vanillas priced together: contracts sharing (option maturity, futures maturity) reuse one set of
/// characteristic-function values on Gauss-Legendre panels of width 0.5/sd, marched until both
/// integrands fall below 1e-14 on two consecutive panels.
inline std::vector<PriceResult> price_vanilla_fourier_batch(const ModelParams& model, const FuturesCurve& curve,
                                                            const std::vector<VanillaContract>& cs,
                                                            const NumericsConfig& cfg = {}) {
    const cplx I(0.0, 1.0);
    static const GaussLegendre gl(16);
    std::vector<PriceResult> out(cs.size());
    std::vector<char> done(cs.size(), 0);
    for (std::size_t g = 0; g < cs.size(); ++g) {
        if (done[g]) continue;
        cs[g].validate();
        const double T = cs[g].option_maturity, Tm = cs[g].futures_maturity;
        std::vector<std::size_t> members;
        for (std::size_t i = g; i < cs.size(); ++i)
            if (!done[i] && cs[i].option_maturity == T && cs[i].futures_maturity == Tm) {
                cs[i].validate();
                members.push_back(i);
                done[i] = 1;
            }
        const CFContext ctx(model, T, Tm, Tm, CfBackend::ode, cfg.ode_tolerance);
        const double F = curve.price(Tm);
        const cplx norm = ctx.phi({0.0, -1.0}, 0.0);
        const double h = 0.5 / leg_moments(ctx, 1).sd;
        std::vector<double> u, w;
        std::vector<cplx> p2, p1;
        int quiet = 0;
        for (int k = 0; k < 4000 && quiet < 2; ++k) {
            double peak = 0.0;
            for (std::size_t q = 0; q < gl.x.size(); ++q) {
                const double uu = h * (k + 0.5 * (gl.x[q] + 1.0));
                u.push_back(uu);
                w.push_back(0.5 * h * gl.w[q]);
                p2.push_back(ctx.phi(uu, 0.0) / (I * uu));
                p1.push_back(ctx.phi(cplx(uu, -1.0), 0.0) / (I * uu * norm));
                peak = std::max({peak, std::abs(p2.back()), std::abs(p1.back())});
            }
            quiet = peak < 1e-14 ? quiet + 1 : 0;
        }
        if (quiet < 2) throw NumericalError("vanilla batch: characteristic function does not decay");
        for (std::size_t i : members) {
            const auto& c = cs[i];
            const double x = std::log(F / c.strike);
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t q = 0; q < u.size(); ++q) {
                const cplx e = std::exp(I * u[q] * x);
                s1 += w[q] * (e * p1[q]).real();
                s2 += w[q] * (e * p2[q]).real();
            }
            double pi1 = 0.5 + s1 / M_PI, pi2 = 0.5 + s2 / M_PI;
            for (double p : {pi1, pi2})
                if (p < -1e-4 || p > 1 + 1e-4 || !std::isfinite(p))
                    throw NumericalError("vanilla pricer: exercise probability " + std::to_string(p) + " outside [0, 1]");
            pi1 = std::clamp(pi1, 0.0, 1.0);
            pi2 = std::clamp(pi2, 0.0, 1.0);
            const double df = std::exp(-c.rate * T);
            PriceResult r;
            r.method = "fourier";
            r.price = std::max(0.0, df * (F * pi1 - c.strike * pi2));
            r.diagnostics["pi1"] = pi1;
            r.diagnostics["pi2"] = pi2;
            r.diagnostics["quad_upper"] = u.back();
            r.diagnostics["quad_nodes"] = static_cast<double>(u.size());
            out[i] = c.type == OptionType::put ? put_from_parity(r, curve, c) : r;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// calendar spreads

enum class CsoMethod { caldana_fusai, hurd_zhou, single_integral, monte_carlo };

inline double cso_forward_value(const FuturesCurve& curve, const CsoContract& c) {
    return std::exp(-c.rate * c.option_maturity) * (curve.price(c.t1) - curve.price(c.t2) - c.strike);
}

inline PriceResult cso_put_from_parity(const PriceResult& call, const FuturesCurve& curve, const CsoContract& c) {
    PriceResult out = call;
    out.price = call.price - cso_forward_value(curve, c);
    if (out.price < -1e-8) throw NumericalError("spread put from parity: negative value " + std::to_string(out.price));
    out.price = std::max(out.price, 0.0);
    return out;
}

namespace detail {

// Undiscounted call on F1 - F2 with K >= 0; legs already oriented.
struct SpreadLegs {
    const CFContext& ctx;
    double F1, F2, K;
};

inline cplx Phi(const SpreadLegs& s, cplx u1, cplx u2) {
    const cplx I(0.0, 1.0);
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 1.0;
    return std::exp(I * (u1 * std::log(s.F1) + u2 * std::log(s.F2)) + s.ctx.log_phi(u1, u2));
}

inline double caldana_fusai_call(const SpreadLegs& s, double delta, const NumericsConfig& cfg,
                                 std::map<std::string, double>& diag) {
    const cplx I(0.0, 1.0);
    if (!(s.F2 + s.K > 0)) throw InputError("Caldana-Fusai: need F(0,T2) + K > 0");
    const double alpha = s.F2 / (s.F2 + s.K), k = std::log(s.F2 + s.K);
    const cplx Lphi = std::log(Phi(s, 0.0, cplx(0.0, -alpha)));
    auto integrand = [&](double g) {
        const cplx w(g, -delta);
        const cplx bracket = Phi(s, w - I, -alpha * w) - Phi(s, w, -alpha * w - I) - s.K * Phi(s, w, -alpha * w);
        const cplx psi = std::exp(I * w * Lphi) / (I * w) * bracket;
        return cplx((std::exp(-I * g * k) * psi).real());
    };
    const auto q = quad_semi_infinite(integrand, cfg.quad_upper_limit, cfg.quad_nodes, cfg.quad_tolerance, 1.0);
    diag["alpha"] = alpha;
    diag["delta"] = delta;
    diag["gamma_upper"] = q.upper;
    diag["quad_tail"] = q.tail_estimate;
    diag["shift_leg1"] = delta + 1.0;
    diag["shift_leg2"] = alpha * delta + 1.0;
    return std::max(0.0, std::exp(-delta * k) / M_PI * q.value.real());
}

}  // namespace detail

/// Calendar spread by the one-dimensional Caldana-Fusai lower bound. Negative strikes are priced on the
/// reverse spread F2 - F1 with strike -K.
inline PriceResult price_cso_caldana_fusai(const ModelParams& model, const FuturesCurve& curve, const CsoContract& c,
                                           double delta = 1.0, const NumericsConfig& cfg = {}) {
    c.validate();
    if (!(delta > 0)) throw InputError("Caldana-Fusai: delta must be > 0");
    const double F1 = curve.price(c.t1), F2 = curve.price(c.t2), df = std::exp(-c.rate * c.option_maturity);
    PriceResult out;
    out.method = "cf";
    const bool reverse = c.strike < 0;
    const CFContext ctx(model, c.option_maturity, reverse ? c.t2 : c.t1, reverse ? c.t1 : c.t2, CfBackend::ode,
                        cfg.ode_tolerance);
    const detail::SpreadLegs legs{ctx, reverse ? F2 : F1, reverse ? F1 : F2, std::abs(c.strike)};
    const double oriented_call = df * detail::caldana_fusai_call(legs, delta, cfg, out.diagnostics);
    out.diagnostics["reverse_spread"] = reverse;
    // reverse spread: the original call is the reverse put, from parity on the reversed legs
    const double call = reverse ? oriented_call - df * (legs.F1 - legs.F2 - legs.K) : oriented_call;
    out.price = std::max(0.0, call);
    if (c.type == OptionType::put) return cso_put_from_parity(out, curve, c);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Hurd-Zhou two-dimensional FFT

/// Transform of the unit-strike spread payoff (e^{x1} - e^{x2} - 1)^+, valid for Im u2 > 0, Im(u1 + u2) < -1.
inline cplx hurd_zhou_payoff_transform(cplx u1, cplx u2) {
    const cplx I(0.0, 1.0);
    return std::exp(log_gamma_complex(I * (u1 + u2) - 1.0) + log_gamma_complex(-I * u2) - log_gamma_complex(I * u1 + 1.0));
}

/// Undiscounted unit-strike spread values V(x1, x2) on a lattice of initial log-prices.
struct HurdZhouGrid {
    GridFunction2D value;
    double epsilon1 = 0.0, epsilon2 = 0.0;
};

inline HurdZhouGrid hurd_zhou_grid(const CFContext& ctx, double x1c, double x2c, const NumericsConfig& cfg = {}) {
    const double e1 = cfg.hz_epsilon1, e2 = cfg.hz_epsilon2;
    if (!(e2 > 0 && e1 + e2 < -1)) throw InputError("Hurd-Zhou: contour needs eps2 > 0 and eps1 + eps2 < -1");
    // Gamma arguments have real parts -e1-e2-1, e2 and 1-e1 along the whole contour
    for (double re : {-e1 - e2 - 1.0, e2, 1.0 - e1})
        if (re <= 0 && std::abs(re - std::round(re)) < 1e-6) throw NumericalError("Hurd-Zhou: contour passes a Gamma pole");
    const int n = cfg.fft_size_2d;
    const double dx = 2.0 * M_PI / (n * cfg.hz_du);
    const Lattice Lx{x1c - (n / 2) * dx, dx, n}, Ly{x2c - (n / 2) * dx, dx, n};
    // e^{i u.x} with u = k + i eps becomes e^{-eps.x} times an inverse transform in k
    auto v = detail::lattice_inverse_2d(Lx, Ly, [&](double k1, double k2) {
        const cplx u1(-k1, e1), u2(-k2, e2);
        return ctx.phi(u1, u2) * hurd_zhou_payoff_transform(u1, u2);
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] *= std::exp(-e1 * Lx.x(i) - e2 * Ly.x(j));
    return {GridFunction2D(Lx.xs(), Ly.xs(), std::move(v), false), e1, e2};
}

namespace detail {

// V at (x1c + s, x2c + s) for a lattice centred at node n/2 on (x1c, x2c). A strike change moves along
// the diagonal, where V is smooth; across it V is close to the payoff kink and does not interpolate.
inline double hurd_zhou_diagonal(const HurdZhouGrid& g, double s) {
    const auto& xs = g.value.x();
    const std::size_t n = xs.size(), c = n / 2;
    const double dx = xs[1] - xs[0];
    std::vector<double> d(n);
    for (std::size_t k = 0; k < n; ++k) d[k] = (static_cast<double>(k) - static_cast<double>(c)) * dx;
    if (s < d[3] || s > d[n - 4]) throw NumericalError("Hurd-Zhou: strike outside the computed log-price lattice");
    const auto k = static_cast<std::size_t>(std::llround(s / dx) + static_cast<long long>(c));
    if (std::abs(d[k] - s) < 1e-12) return g.value.at(k, k);
    return lagrange(d, [&](std::size_t i) { return g.value.at(i, i); }, s);
}

}  // namespace detail

/// Calendar spread calls for a ladder of strikes from one Hurd-Zhou lattice centred at the first strike. K = 0 is not representable by payoff rescaling.
inline std::vector<PriceResult> price_cso_hurd_zhou_ladder(const ModelParams& model, const FuturesCurve& curve,
                                                           CsoContract c, const std::vector<double>& strikes,
                                                           const NumericsConfig& cfg = {}) {
    if (strikes.empty()) return {};
    c.validate();
    const double F1 = curve.price(c.t1), F2 = curve.price(c.t2), df = std::exp(-c.rate * c.option_maturity);
    std::vector<PriceResult> out(strikes.size());
    for (int side : {1, -1}) {  // +1: K > 0 on the spread, -1: K < 0 on the reverse spread
        std::vector<std::size_t> idx;
        for (std::size_t s = 0; s < strikes.size(); ++s) {
            if (strikes[s] == 0.0) throw InputError("Hurd-Zhou: K = 0 is not supported (use the Caldana-Fusai method)");
            if ((strikes[s] > 0) == (side > 0)) idx.push_back(s);
        }
        if (idx.empty()) continue;
        const bool rev = side < 0;
        const CFContext ctx(model, c.option_maturity, rev ? c.t2 : c.t1, rev ? c.t1 : c.t2, CfBackend::ode,
                            cfg.ode_tolerance);
        const double A = rev ? F2 : F1, B = rev ? F1 : F2;
        const double K0 = std::abs(strikes[idx.front()]);
        const auto grid = hurd_zhou_grid(ctx, std::log(A / K0), std::log(B / K0), cfg);
        for (std::size_t s : idx) {
            const double K = std::abs(strikes[s]);
            const double oriented = df * K * detail::hurd_zhou_diagonal(grid, std::log(K0 / K));
            double call = rev ? oriented - df * (A - B - K) : oriented;
            PriceResult& r = out[s];
            r.method = "hz";
            r.price = std::max(0.0, call);
            r.diagnostics["epsilon1"] = grid.epsilon1;
            r.diagnostics["epsilon2"] = grid.epsilon2;
            r.diagnostics["lattice"] = cfg.fft_size_2d;
            r.diagnostics["du"] = cfg.hz_du;
            r.diagnostics["reverse_spread"] = rev;
            if (c.type == OptionType::put) {
                CsoContract ck = c;
                ck.strike = strikes[s];
                r = cso_put_from_parity(r, curve, ck);
            }
        }
    }
    return out;
}

inline PriceResult price_cso_hurd_zhou(const ModelParams& model, const FuturesCurve& curve, const CsoContract& c,
                                       const NumericsConfig& cfg = {}) {
    return price_cso_hurd_zhou_ladder(model, curve, c, {c.strike}, cfg).front();
}

// ---------------------------------------------------------------------------------------------
// single integrals over distribution functions

/// Distribution functions of the oriented legs (X1, X2) with price levels F1, F2.
struct SpreadDistributions {
    GridFunction1D G1, G2;  ///< marginal CDFs of the log-returns
    GridFunction2D G;       ///< joint CDF of the log-returns
    double F1 = 0.0, F2 = 0.0;
};

inline SpreadDistributions spread_distributions(const CFContext& ctx, double F1, double F2, const NumericsConfig& cfg) {
    return {marginal_cdf(ctx, 1, cfg.smoothing_a, cfg), marginal_cdf(ctx, 2, cfg.smoothing_a, cfg),
            joint_cdf(ctx, cfg.smoothing_a1, cfg.smoothing_a2, cfg), F1, F2};
}

namespace detail {

// P(F1 <= p1, F2 <= F2 e^{y_j}) along lattice row j of the joint grid: interpolation runs in the first
// coordinate only, with eight-point Lagrange (clamped to the monotone range of the row).
inline double joint_on_row(const SpreadDistributions& d, std::size_t j, double p1) {
    if (p1 <= 0) return 0.0;
    const auto& xs = d.G.x();
    const double x = std::log(p1 / d.F1);
    if (x <= xs.front()) return d.G.at(0, j);
    if (x >= xs.back()) return d.G.at(xs.size() - 1, j);
    const double v = lagrange(xs, [&](std::size_t i) { return d.G.at(i, j); }, x);
    const std::size_t i = bracket(xs, x);
    return std::clamp(v, d.G.at(i, j), d.G.at(i + 1, j));
}

inline double g_leg(const GridFunction1D& G, double F, double p) { return p <= 0 ? 0.0 : G(std::log(p / F)); }

// Trapezoid over the joint grid's second-leg lattice in log-price: int_0^inf h(x) dx, x = F2 e^y.
template <class H>
double integrate_price_axis(const SpreadDistributions& d, H&& h, double& tail) {
    const auto& ys = d.G.y();
    const double dy = ys[1] - ys[0];
    double s = 0.0;
    for (std::size_t j = 0; j < ys.size(); ++j) {
        const double x = d.F2 * std::exp(ys[j]);
        const double w = (j == 0 || j + 1 == ys.size()) ? 0.5 : 1.0;
        s += w * h(j, x) * x;
    }
    tail = std::max(std::abs(h(0, d.F2 * std::exp(ys.front())) * d.F2 * std::exp(ys.front())),
                    std::abs(h(ys.size() - 1, d.F2 * std::exp(ys.back())) * d.F2 * std::exp(ys.back())));
    return s * dy;
}

}  // namespace detail

/// Undiscounted spread call E(F1 - F2 - K)^+ = int_0^inf [G_F2(x) - P(F1 <= x + K, F2 <= x)] dx, K >= 0.
inline double single_integral_call(const SpreadDistributions& d, double K, double* tail = nullptr) {
    double t = 0.0;
    const double v = detail::integrate_price_axis(d, [&](std::size_t j, double x) {
        return detail::g_leg(d.G2, d.F2, x) - detail::joint_on_row(d, j, x + K);
    }, t);
    if (tail) *tail = t;
    return v;
}

/// Undiscounted spread put E(K - F1 + F2)^+ = int_{-K}^inf [G_F1(x + K) - P(F1 <= x + K, F2 <= x)] dx, K >= 0.
inline double single_integral_put(const SpreadDistributions& d, double K, double* tail = nullptr) {
    double t = 0.0;
    const double v = detail::integrate_price_axis(d, [&](std::size_t j, double x) {
        return detail::g_leg(d.G1, d.F1, x + K) - detail::joint_on_row(d, j, x + K);
    }, t);
    // x in [-K, 0): F2 >= 0 > x, leaving int_0^K G_F1(p) dp
    double low = 0.0;
    if (K > 0) {
        const GaussLegendre gl(32);
        const int panels = 64;
        for (int p = 0; p < panels; ++p)
            low += gl.integrate([&](double q) { return detail::g_leg(d.G1, d.F1, q); }, K * p / panels, K * (p + 1) / panels);
    }
    if (tail) *tail = t;
    return v + low;
}

inline PriceResult price_cso_single_integral(const ModelParams& model, const FuturesCurve& curve, const CsoContract& c,
                                             const NumericsConfig& cfg = {}) {
    c.validate();
    const double F1 = curve.price(c.t1), F2 = curve.price(c.t2), df = std::exp(-c.rate * c.option_maturity);
    const bool rev = c.strike < 0;
    const CFContext ctx(model, c.option_maturity, rev ? c.t2 : c.t1, rev ? c.t1 : c.t2, CfBackend::ode,
                        cfg.ode_tolerance);
    const auto d = spread_distributions(ctx, rev ? F2 : F1, rev ? F1 : F2, cfg);
    const double K = std::abs(c.strike);
    // on the reverse spread the original call is the oriented put and vice versa
    const bool want_oriented_call = (c.type == OptionType::call) != rev;
    double tail = 0.0;
    const double v = want_oriented_call ? single_integral_call(d, K, &tail) : single_integral_put(d, K, &tail);
    if (tail > 1e-6 * std::max(1.0, F1 + F2))
        throw NumericalError("single integral: integrand tail " + std::to_string(tail) + " exceeds budget");
    PriceResult out;
    out.method = "si";
    out.price = std::max(0.0, df * v);
    out.diagnostics["tail"] = tail;
    out.diagnostics["reverse_spread"] = rev;
    out.diagnostics["cdf_cleanup"] = std::max({d.G1.cleanup, d.G2.cleanup, d.G.cleanup});
    return out;
}

}  // namespace svcurve
