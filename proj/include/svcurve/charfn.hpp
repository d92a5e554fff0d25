#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "svcurve/error.hpp"
#include "svcurve/model.hpp"
#include "svcurve/specfun.hpp"

namespace svcurve {

enum class CfBackend { closed_form, ode };

/// Per-factor constants of the Riccati source term q(t) = i C1 e^{lambda t} + (C2 + i C3) e^{2 lambda t}.
struct FactorCoefficients {
    cplx S1, S2, C1, C2, C3;
};

inline FactorCoefficients factor_coefficients(const FactorParams& f, cplx u1, cplx u2, double T1, double T2) {
    FactorCoefficients c;
    c.S1 = u1 * std::exp(-f.lambda * T1) + u2 * std::exp(-f.lambda * T2);
    c.S2 = u1 * std::exp(-2.0 * f.lambda * T1) + u2 * std::exp(-2.0 * f.lambda * T2);
    c.C1 = f.rho * (f.kappa - f.lambda) / f.sigma * c.S1;
    c.C2 = -0.5 * (1.0 - f.rho * f.rho) * c.S1 * c.S1;
    c.C3 = -0.5 * c.S2;
    return c;
}

struct RiccatiResult {
    cplx A;
    cplx B;
    std::size_t steps = 0;
};

/// Integrates A_t - kappa A + sigma^2 A^2 / 2 + q = 0, B_t + kappa theta A = 0 backward from t = T
/// (A(T) = i rho/sigma f1(T), B(T) = 0) to t = t_end.
inline RiccatiResult solve_riccati(const FactorParams& f, cplx u1, cplx u2, double T, double T1, double T2,
                                   double tol = 1e-10, double t_end = 0.0) {
    const auto c = factor_coefficients(f, u1, u2, T1, T2);
    const cplx I(0.0, 1.0);
    const cplx z2 = c.C2 + I * c.C3;
    const cplx iC1 = I * c.C1;
    using State = std::array<cplx, 2>;
    State x{I * f.rho / f.sigma * c.S1 * std::exp(f.lambda * T), cplx(0.0)};
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return {0.0, 0.0, 0};
    const double k = f.kappa, hs2 = 0.5 * f.sigma * f.sigma, kt = f.kappa * f.theta, lam = f.lambda;
    auto rhs = [&](const State& s, State& ds, double t) {
        const double e = std::exp(lam * t);
        const cplx q = iC1 * e + z2 * (e * e);
        ds[0] = k * s[0] - hs2 * s[0] * s[0] - q;
        ds[1] = -kt * s[0];
    };
    namespace ode = boost::numeric::odeint;
    auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<State>());
    std::size_t steps = 0;
    try {
        steps = ode::integrate_adaptive(stepper, rhs, x, T, t_end, -std::min(0.05, 0.1 * (T - t_end) + 1e-12));
    } catch (const std::exception& e) {
        throw NumericalError(std::string("Riccati integration failed: ") + e.what());
    }
    if (!std::isfinite(std::abs(x[0])) || !std::isfinite(std::abs(x[1])))
        throw NumericalError("Riccati integration diverged (argument outside the admissible strip)");
    return {x[0], x[1], steps};
}

namespace detail {

// Constants shared by both closed-form variants at one argument u.
struct ClosedFormSetup {
    FactorCoefficients c;
    cplx z, a, Y, w;
    double b = 0.0;
    double scale = 0.0;  // xi(t) = scale * i z e^{lambda t}

    cplx xi(double t, double lambda) const { return scale * cplx(0.0, 1.0) * z * std::exp(lambda * t); }
};

inline ClosedFormSetup closed_form_setup(const FactorParams& f, cplx u1, cplx u2, double T, double T1, double T2) {
    if (!(f.lambda > 0)) throw NumericalError("closed form requires lambda > 0");
    ClosedFormSetup s;
    const cplx I(0.0, 1.0);
    const double r2 = std::sqrt(2.0);
    const double k = f.kappa, sg = f.sigma, lam = f.lambda;
    s.c = factor_coefficients(f, u1, u2, T1, T2);
    s.z = std::sqrt(s.c.C2 + I * s.c.C3);
    if (std::abs(s.z) < 1e-10) throw NumericalError("closed form degenerate: z = 0");
    s.a = (k * s.z - sg * r2 / 2.0 * s.c.C1) / (2.0 * s.z * lam);
    s.b = (k + lam) / lam;
    s.scale = sg * r2 / lam;
    const double eT = std::exp(lam * T);
    const cplx f1T = s.c.S1 * eT;
    s.Y = sg * r2 * (s.c.C1 / 2.0 - I * eT * s.c.C2 + eT * s.c.C3) - s.z * (k - lam - I * f.rho * f1T * sg);
    s.w = s.z * (lam + k) + sg * r2 * s.c.C1 / 2.0;
    return s;
}

// Solutions U(a +- 1/2, b, xi) and U(b - a -+ 1/2, b, -xi) at one xi.
struct KummerPair {
    cplx Up, Um, Vp, Vm;
};

inline KummerPair kummer_pair(const ClosedFormSetup& s, cplx xi) {
    return {kummer_u(s.a + 0.5, s.b, xi).value, kummer_u(s.a - 0.5, s.b, xi).value,
            kummer_u(s.b - s.a - 0.5, s.b, -xi).value, kummer_u(s.b - s.a + 0.5, s.b, -xi).value};
}

// The closed form rewritten in the basis {U(., b, xi), e^xi U(., b, -xi)} via the connection formula
// for M; dominant parts cancel identically, leaving
//   A(t) = K(t) + [(a-1/2) X0 E V-(t) c - 2 lambda g U-(t) / sigma^2] / D(t),  D(t) = g U+(t) - X0 E V+(t),
// with E = e^{xi(t) - xi(T)}, g = 2((a-1/2) w V-(T) + Y V+(T)), X0 = 2 Y U+(T) + 4 z lambda U-(T).
struct StableForm {
    ClosedFormSetup s;
    cplx X0, g;
    cplx xiT;
};

inline StableForm stable_form(const FactorParams& f, cplx u1, cplx u2, double T, double T1, double T2) {
    StableForm st;
    st.s = closed_form_setup(f, u1, u2, T, T1, T2);
    const auto& s = st.s;
    st.xiT = s.xi(T, f.lambda);
    const auto q = kummer_pair(s, st.xiT);
    st.X0 = 2.0 * s.Y * q.Up + 4.0 * s.z * f.lambda * q.Um;
    st.g = 2.0 * ((s.a - 0.5) * s.w * q.Vm + s.Y * q.Vp);
    return st;
}

inline cplx stable_A_at(const FactorParams& f, const StableForm& st, double t) {
    const cplx I(0.0, 1.0);
    const auto& s = st.s;
    const double sg = f.sigma, lam = f.lambda, k = f.kappa, r2 = std::sqrt(2.0);
    const cplx xi = s.xi(t, lam);
    const auto q = kummer_pair(s, xi);
    const cplx E = std::exp(xi - st.xiT);
    const cplx d1 = st.g * q.Up, d2 = st.X0 * E * q.Vp;
    const cplx den = d1 - d2;
    if (std::abs(den) * 1e6 < std::abs(d1) + std::abs(d2)) throw NumericalError("closed form ill-conditioned");
    const cplx K = -s.c.C1 / (r2 * s.z * sg) - r2 * (s.c.C3 - I * s.c.C2) * std::exp(lam * t) / (s.z * sg) +
                   (k - lam) / (sg * sg);
    const cplx cm = s.c.C1 / (r2 * s.z * sg) + (k + lam) / (sg * sg);
    return K + ((s.a - 0.5) * st.X0 * E * q.Vm * cm - 2.0 * lam * st.g * q.Um / (sg * sg)) / den;
}

}  // namespace detail

/// A(t,T) exactly as printed: M+-, U+- with parameters (a +- 1/2, b) and X0, X1, Y. Accurate only where
/// D(t) = M+(t) X0 - X1 U+(t) does not cancel; closed_form_A is the production evaluator.
inline cplx closed_form_A_printed(const FactorParams& f, cplx u1, cplx u2, double t, double T, double T1, double T2) {
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 0.0;
    const cplx I(0.0, 1.0);
    const auto s = detail::closed_form_setup(f, u1, u2, T, T1, T2);
    const double k = f.kappa, sg = f.sigma, lam = f.lambda;
    auto quad = [&](double tt) {
        const cplx xi = s.xi(tt, lam);
        return std::array<cplx, 4>{kummer_m(s.a + 0.5, s.b, xi).value, kummer_m(s.a - 0.5, s.b, xi).value,
                                   kummer_u(s.a + 0.5, s.b, xi).value, kummer_u(s.a - 0.5, s.b, xi).value};
    };
    const auto qT = quad(T);
    const cplx X0 = 2.0 * s.Y * qT[2] + 4.0 * s.z * lam * qT[3];
    const cplx X1 = 2.0 * s.Y * qT[0] - 2.0 * s.w * qT[1];
    const auto [Mp, Mm, Up, Um] = quad(t);
    const cplx den = Mp * X0 - X1 * Up;
    const cplx first = ((Mm - Mp) * X0 + X1 * Up) * s.c.C1 - 2.0 * den * (s.c.C3 - I * s.c.C2) * std::exp(lam * t);
    const cplx second = ((k - lam) * Mp + (k + lam) * Mm) * X0 - ((k - lam) * Up - 2.0 * lam * Um) * X1;
    return first / (std::sqrt(2.0) * s.z * sg * den) + second / (sg * sg * den);
}

/// A(t,T) in closed form, evaluated in a numerically satisfactory Kummer basis.
inline cplx closed_form_A(const FactorParams& f, cplx u1, cplx u2, double t, double T, double T1, double T2) {
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 0.0;
    const auto st = detail::stable_form(f, u1, u2, T, T1, T2);
    return detail::stable_A_at(f, st, t);
}

/// A(0,T) and B(0,T) in closed form. B = (2 kappa theta / sigma^2)[kappa T - (xi(T) - xi(0))/2 + ln D(T) - ln D(0)];
/// the logarithm of D is continued along t by adaptive sampling.
inline RiccatiResult closed_form_AB(const FactorParams& f, cplx u1, cplx u2, double T, double T1, double T2) {
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return {0.0, 0.0, 0};
    const auto st = detail::stable_form(f, u1, u2, T, T1, T2);
    const double lam = f.lambda;
    std::size_t evals = 0;
    auto D = [&](double t) {
        ++evals;
        const cplx xi = st.s.xi(t, lam);
        const cplx up = kummer_u(st.s.a + 0.5, st.s.b, xi).value;
        const cplx vp = kummer_u(st.s.b - st.s.a - 0.5, st.s.b, -xi).value;
        return st.g * up - st.X0 * std::exp(xi - st.xiT) * vp;
    };
    std::function<cplx(double, cplx, double, cplx, int)> log_ratio = [&](double t0, cplx d0, double t1, cplx d1,
                                                                          int depth) -> cplx {
        const cplx r = d1 / d0;
        if (std::abs(std::arg(r)) <= std::numbers::pi / 4.0) return std::log(r);
        if (depth > 12) throw NumericalError("closed form: log D not resolved along t");
        const double tm = 0.5 * (t0 + t1);
        const cplx dm = D(tm);
        return log_ratio(t0, d0, tm, dm, depth + 1) + log_ratio(tm, dm, t1, d1, depth + 1);
    };
    constexpr int n = 4;
    cplx logD = 0.0;
    cplx prev = D(0.0);
    for (int k = 1; k <= n; ++k) {
        const double t0 = T * (k - 1) / n, t1 = T * k / n;
        const cplx cur = D(t1);
        logD += log_ratio(t0, prev, t1, cur, 0);
        prev = cur;
    }
    const cplx A0 = detail::stable_A_at(f, st, 0.0);
    const cplx B0 = 2.0 * f.kappa * f.theta / (f.sigma * f.sigma) *
                    (f.kappa * T - (st.xiT - st.s.xi(0.0, lam)) / 2.0 + logD);
    if (!std::isfinite(std::abs(A0)) || !std::isfinite(std::abs(B0))) throw NumericalError("closed form not finite");
    return {A0, B0, evals};
}

namespace detail {

inline double expm1_over(double lambda, double T) {  // (e^{lambda T} - 1)/lambda with the lambda -> 0 limit
    return lambda == 0.0 ? T : std::expm1(lambda * T) / lambda;
}

}  // namespace detail

/// Logarithm of one stochastic factor's contribution to phi.
inline cplx factor_log_phi(const FactorParams& f, cplx u1, cplx u2, double T, double T1, double T2,
                           const RiccatiResult& ab) {
    const cplx I(0.0, 1.0);
    const cplx S1 = u1 * std::exp(-f.lambda * T1) + u2 * std::exp(-f.lambda * T2);
    // f1(u,t) = e^{lambda t} S1; kappa theta / lambda (f1(0) - f1(T)) = -kappa theta S1 (e^{lambda T} - 1)/lambda
    const cplx pre = I * f.rho / f.sigma * (-f.kappa * f.theta * S1 * detail::expm1_over(f.lambda, T) - S1 * f.v0);
    return pre + ab.A * f.v0 + ab.B;
}

/// Logarithm of the deterministic-volatility (Clewlow-Strickland) factors.
inline cplx log_phi_cs(const std::vector<DeterministicFactor>& dets, cplx u1, cplx u2, double T, double T1, double T2) {
    const cplx I(0.0, 1.0);
    cplx out = 0.0;
    for (const auto& d : dets) {
        const double lam = d.lambda;
        const double w = d.sigma_hat * d.sigma_hat / 2.0 * detail::expm1_over(2.0 * lam, T);
        const cplx lin = I * (u1 * std::exp(-2.0 * lam * T1) + u2 * std::exp(-2.0 * lam * T2));
        const cplx sq = u1 * std::exp(-lam * T1) + u2 * std::exp(-lam * T2);
        out += -w * (lin + sq * sq);
    }
    return out;
}

inline cplx phi_cs(const std::vector<DeterministicFactor>& dets, cplx u1, cplx u2, double T, double T1, double T2) {
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 1.0;
    return std::exp(log_phi_cs(dets, u1, u2, T, T1, T2));
}

struct CfCounters {
    std::atomic<long> closed_form_evaluations{0};
    std::atomic<long> fallbacks{0};
};

/// Joint characteristic function of (ln F(T,T1)/F(0,T1), ln F(T,T2)/F(0,T2)) bound to (model, T, T1, T2).
class CFContext {
public:
    CFContext(ModelParams model, double T, double T1, double T2, CfBackend backend = CfBackend::ode,
              double ode_tolerance = 1e-10)
        : model_(std::move(model)), T_(T), T1_(T1), T2_(T2), backend_(backend), tol_(ode_tolerance),
          counters_(std::make_shared<CfCounters>()) {
        if (!(T > 0) || !(T <= T1) || !(T <= T2)) throw InputError("CFContext: need 0 < T <= min(T1, T2)");
        require_valid(model_);
        for (const auto& f : model_.factors)
            if (!(f.sigma > 0)) throw InputError("CFContext: characteristic function needs sigma > 0 in every factor");
    }

    /// Closed form with ODE fallback per factor (closed-form backend), or ODE throughout.
    [[nodiscard]] cplx log_phi(cplx u1, cplx u2) const {
        cplx acc = log_phi_cs(model_.deterministic_factors, u1, u2, T_, T1_, T2_);
        for (std::size_t j = 0; j < model_.factors.size(); ++j) {
            const auto& f = model_.factors[j];
            try {
                acc += factor_log_phi(f, u1, u2, T_, T1_, T2_, factor_ab(f, u1, u2));
            } catch (const NumericalError& e) {
                throw NumericalError("factor " + std::to_string(j) + ": " + e.what());
            }
        }
        return acc;
    }

    [[nodiscard]] cplx phi(cplx u1, cplx u2) const {
        if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 1.0;
        return std::exp(log_phi(u1, u2));
    }
    cplx operator()(cplx u1, cplx u2) const { return phi(u1, u2); }

    [[nodiscard]] RiccatiResult factor_ab(const FactorParams& f, cplx u1, cplx u2) const {
        if (backend_ == CfBackend::closed_form && f.lambda >= 1e-6) {
            try {
                auto r = closed_form_AB(f, u1, u2, T_, T1_, T2_);
                ++counters_->closed_form_evaluations;
                return r;
            } catch (const NumericalError&) {
                ++counters_->fallbacks;
            }
        }
        return solve_riccati(f, u1, u2, T_, T1_, T2_, tol_);
    }

    [[nodiscard]] const ModelParams& model() const { return model_; }
    [[nodiscard]] double T() const { return T_; }
    [[nodiscard]] double T1() const { return T1_; }
    [[nodiscard]] double T2() const { return T2_; }
    [[nodiscard]] CfBackend backend() const { return backend_; }
    [[nodiscard]] double ode_tolerance() const { return tol_; }
    [[nodiscard]] long fallbacks() const { return counters_->fallbacks.load(); }
    [[nodiscard]] long closed_form_evaluations() const { return counters_->closed_form_evaluations.load(); }

    [[nodiscard]] CFContext with_backend(CfBackend b) const { return CFContext(model_, T_, T1_, T2_, b, tol_); }

private:
    ModelParams model_;
    double T_, T1_, T2_;
    CfBackend backend_;
    double tol_;
    std::shared_ptr<CfCounters> counters_;
};

/// Price-level characteristic function Phi(u) = exp(i sum u_k ln F(0,T_k)) phi(u).
inline cplx phi_price_level(const CFContext& ctx, const FuturesCurve& curve, cplx u1, cplx u2) {
    const cplx I(0.0, 1.0);
    const double l1 = std::log(curve.price(ctx.T1())), l2 = std::log(curve.price(ctx.T2()));
    if (u1 == cplx(0.0) && u2 == cplx(0.0)) return 1.0;
    return std::exp(I * (u1 * l1 + u2 * l2) + ctx.log_phi(u1, u2));
}

/// Largest s in (0, s_max] for which phi stays finite at u_leg = -i s * direction (direction = +1 probes
/// E[e^{s X}], -1 probes E[e^{-s X}]), found by bisection on ODE blow-up.
inline double admissible_shift(const CFContext& ctx, int leg, int direction, double s_max = 16.0) {
    auto finite_at = [&](double s) {
        const cplx u(0.0, -s * direction);
        try {
            const cplx v = leg == 1 ? ctx.with_backend(CfBackend::ode).log_phi(u, 0.0)
                                    : ctx.with_backend(CfBackend::ode).log_phi(0.0, u);
            return std::isfinite(std::abs(v)) && v.real() < 700.0;
        } catch (const NumericalError&) {
            return false;
        }
    };
    if (finite_at(s_max)) return s_max;
    double lo = 0.0, hi = s_max;
    for (int k = 0; k < 40; ++k) {
        const double mid = 0.5 * (lo + hi);
        (finite_at(mid) ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace svcurve
