#pragma once

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "svcurve/parallel.hpp"
#include "svcurve/pricers.hpp"

namespace svcurve {

// ---------------------------------------------------------------------------------------------
// implied volatility

struct ImpliedVol {
    double vol = 0.0;
    double price_error = 0.0;
    bool near_boundary = false;
};

/// Black-76 implied volatility by a bracketed TOMS 748 search. The upper end of the bracket is
/// doubled until it covers the target, up to vol = 50.
inline ImpliedVol implied_vol_black76(double price, double F, double K, double T, double r, OptionType type) {
    if (!(F > 0 && K > 0 && T > 0)) throw InputError("implied vol: F, K and T must be positive");
    const double df = std::exp(-r * T);
    const double lower = df * std::max(type == OptionType::call ? F - K : K - F, 0.0);
    const double upper = df * (type == OptionType::call ? F : K);
    if (!(price >= lower && price < upper) || !std::isfinite(price))
        throw NoSolutionError("implied vol: price " + std::to_string(price) + " outside the band [" +
                              std::to_string(lower) + ", " + std::to_string(upper) + ")");
    auto f = [&](double s) { return black76(F, K, T, s, r, type) - price; };
    ImpliedVol out;
    double lo = 1e-12, hi = 1.0;
    if (f(lo) >= 0) {
        out.vol = lo;
        out.price_error = std::abs(f(lo));
        out.near_boundary = true;
        return out;
    }
    while (f(hi) < 0) {
        hi *= 2;
        if (hi > 50) throw NoSolutionError("implied vol: no root below vol = 50");
    }
    std::uintmax_t it = 200;
    const auto tol = [&](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(a)) ||
                                                      std::abs(f(0.5 * (a + b))) < 1e-12; };
    const auto br = boost::math::tools::toms748_solve(f, lo, hi, tol, it);
    double s = 0.5 * (br.first + br.second);
    if (std::abs(f(br.first)) < std::abs(f(s))) s = br.first;
    if (std::abs(f(br.second)) < std::abs(f(s))) s = br.second;
    out.vol = s;
    out.price_error = std::abs(f(s));
    if (out.price_error > 1e-10 * std::max(1.0, price))
        throw NumericalError("implied vol: price error " + std::to_string(out.price_error));
    out.near_boundary = s < 1e-3 || price - lower < 1e-10 * upper;
    return out;
}

// ---------------------------------------------------------------------------------------------
// quotes

struct Quote {
    double T = 0.0;
    double Tm = 0.0;
    double strike = 0.0;
    double moneyness = std::numeric_limits<double>::quiet_NaN();  ///< K / F(0, Tm) when quoted that way
    OptionType type = OptionType::call;
    double price = 0.0;
    double vol = std::numeric_limits<double>::quiet_NaN();
};

struct QuoteSet {
    std::vector<Quote> quotes;
    double rate = 0.0;
    FuturesCurve curve = FuturesCurve::flat(100.0);

    [[nodiscard]] VanillaContract contract(std::size_t i) const {
        const auto& q = quotes[i];
        return {q.T, q.Tm, q.strike, q.type, rate};
    }
    [[nodiscard]] std::vector<VanillaContract> contracts() const {
        std::vector<VanillaContract> cs;
        for (std::size_t i = 0; i < quotes.size(); ++i) cs.push_back(contract(i));
        return cs;
    }
    [[nodiscard]] bool atm(std::size_t i) const {
        const auto& q = quotes[i];
        const double m = std::isnan(q.moneyness) ? q.strike / curve.price(q.Tm) : q.moneyness;
        return std::abs(m - 1.0) < 1e-12;
    }
    /// Fills whichever of price and vol is missing and checks the arbitrage band.
    void complete() {
        for (auto& q : quotes) {
            if (!(q.T > 0 && q.Tm >= q.T)) throw InputError("quote: need 0 < T <= Tm");
            const double F = curve.price(q.Tm);
            if (!std::isnan(q.moneyness)) q.strike = q.moneyness * F;
            if (!(q.strike > 0)) throw InputError("quote: strike must be positive");
            if (std::isnan(q.price)) {
                if (!(q.vol > 0)) throw InputError("quote: needs a price or a positive vol");
                q.price = black76(F, q.strike, q.T, q.vol, rate, q.type);
            }
            q.vol = implied_vol_black76(q.price, F, q.strike, q.T, rate, q.type).vol;
        }
    }
};

inline const std::vector<double> kStandardMaturities{1.0 / 6.0, 0.5, 1.0, 2.0, 4.0};
inline const std::vector<double> kStandardMoneyness{0.6, 0.8, 0.9, 1.0, 1.1, 1.2, 1.5};

/// Quote grid priced by the model itself, with futures maturity equal to option maturity.
inline QuoteSet synthetic_quotes(const ModelParams& model, const FuturesCurve& curve, double rate = 0.0,
                                 const std::vector<double>& maturities = kStandardMaturities,
                                 const std::vector<double>& moneyness = kStandardMoneyness,
                                 const NumericsConfig& cfg = {}) {
    QuoteSet qs;
    qs.rate = rate;
    qs.curve = curve;
    for (double T : maturities)
        for (double m : moneyness) {
            Quote q;
            q.T = q.Tm = T;
            q.moneyness = m;
            q.strike = m * curve.price(T);
            qs.quotes.push_back(q);
        }
    const auto p = price_vanilla_fourier_batch(model, curve, qs.contracts(), cfg);
    for (std::size_t i = 0; i < p.size(); ++i) qs.quotes[i].price = p[i].price;
    qs.complete();
    return qs;
}

// ---------------------------------------------------------------------------------------------
// objective and error report

enum class ObjectiveKind { price, vol };

inline std::vector<double> model_prices(const ModelParams& model, const QuoteSet& qs, const NumericsConfig& cfg = {}) {
    const auto r = price_vanilla_fourier_batch(model, qs.curve, qs.contracts(), cfg);
    std::vector<double> p(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) p[i] = r[i].price;
    return p;
}

inline std::vector<double> model_vols(const std::vector<double>& prices, const QuoteSet& qs) {
    std::vector<double> v(prices.size());
    for (std::size_t i = 0; i < prices.size(); ++i) {
        const auto& q = qs.quotes[i];
        v[i] = implied_vol_black76(prices[i], qs.curve.price(q.Tm), q.strike, q.T, qs.rate, q.type).vol;
    }
    return v;
}

/// Model minus observed, in price or implied-vol units. Throws when pricing fails.
inline std::vector<double> residuals(const ModelParams& model, const QuoteSet& qs,
                                     ObjectiveKind kind = ObjectiveKind::price, const NumericsConfig& cfg = {}) {
    require_valid(model);
    auto p = model_prices(model, qs, cfg);
    if (kind == ObjectiveKind::vol) p = model_vols(p, qs);
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] -= kind == ObjectiveKind::price ? qs.quotes[i].price : qs.quotes[i].vol;
    return p;
}

/// Sum of squared errors; +inf when any quote cannot be priced.
inline double objective(const ModelParams& model, const QuoteSet& qs, ObjectiveKind kind = ObjectiveKind::price,
                        const NumericsConfig& cfg = {}, std::string* diagnostic = nullptr) {
    try {
        double s = 0.0;
        for (double e : residuals(model, qs, kind, cfg)) s += e * e;
        return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    } catch (const std::exception& e) {
        if (diagnostic) *diagnostic = e.what();
        return std::numeric_limits<double>::infinity();
    }
}

struct ErrorReport {
    double mae_price = 0, mae_vol = 0, mae_atm_price = 0, mae_atm_vol = 0, rmse_price = 0, rmse_vol = 0;
};

inline ErrorReport error_report(const std::vector<double>& price_res, const std::vector<double>& vol_res,
                                const std::vector<bool>& atm) {
    ErrorReport r;
    std::size_t n_atm = 0;
    const double n = static_cast<double>(price_res.size());
    for (std::size_t i = 0; i < price_res.size(); ++i) {
        r.mae_price += std::abs(price_res[i]) / n;
        r.mae_vol += std::abs(vol_res[i]) / n;
        r.rmse_price += price_res[i] * price_res[i] / n;
        r.rmse_vol += vol_res[i] * vol_res[i] / n;
        if (atm[i]) {
            ++n_atm;
            r.mae_atm_price += std::abs(price_res[i]);
            r.mae_atm_vol += std::abs(vol_res[i]);
        }
    }
    r.rmse_price = std::sqrt(r.rmse_price);
    r.rmse_vol = std::sqrt(r.rmse_vol);
    if (n_atm) {
        r.mae_atm_price /= n_atm;
        r.mae_atm_vol /= n_atm;
    }
    return r;
}

inline ErrorReport error_report(const ModelParams& model, const QuoteSet& qs, const NumericsConfig& cfg = {}) {
    const auto p = model_prices(model, qs, cfg);
    const auto v = model_vols(p, qs);
    std::vector<double> rp(p.size()), rv(p.size());
    std::vector<bool> atm(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        rp[i] = p[i] - qs.quotes[i].price;
        rv[i] = v[i] - qs.quotes[i].vol;
        atm[i] = qs.atm(i);
    }
    return error_report(rp, rv, atm);
}

// ---------------------------------------------------------------------------------------------
// parameter vector

/// Flat layout: per stochastic factor (kappa, theta, sigma, rho, v0, lambda), then per
/// deterministic factor (sigma_hat, lambda).
inline std::vector<double> pack(const ModelParams& m) {
    std::vector<double> x;
    for (const auto& f : m.factors) x.insert(x.end(), {f.kappa, f.theta, f.sigma, f.rho, f.v0, f.lambda});
    for (const auto& d : m.deterministic_factors) x.insert(x.end(), {d.sigma_hat, d.lambda});
    return x;
}

inline ModelParams unpack(const ModelParams& shape, const std::vector<double>& x) {
    ModelParams m = shape;
    std::size_t k = 0;
    for (auto& f : m.factors) {
        f.kappa = x[k++];
        f.theta = x[k++];
        f.sigma = x[k++];
        f.rho = x[k++];
        f.v0 = x[k++];
        f.lambda = x[k++];
    }
    for (auto& d : m.deterministic_factors) {
        d.sigma_hat = x[k++];
        d.lambda = x[k++];
    }
    return m;
}

inline std::vector<std::string> parameter_names(const ModelParams& m) {
    std::vector<std::string> n;
    for (std::size_t j = 0; j < m.factors.size(); ++j)
        for (const char* s : {"kappa", "theta", "sigma", "rho", "v0", "lambda"})
            n.push_back(std::string(s) + std::to_string(j + 1));
    for (std::size_t j = 0; j < m.deterministic_factors.size(); ++j)
        for (const char* s : {"sigma_hat", "lambda"}) n.push_back(std::string(s) + std::to_string(j + 1));
    return n;
}

struct Bounds {
    std::vector<double> lo, hi;
    std::vector<bool> free;  ///< empty means all free
};

inline Bounds default_bounds(const ModelParams& m) {
    Bounds b;
    for (std::size_t j = 0; j < m.factors.size(); ++j) {
        b.lo.insert(b.lo.end(), {0.05, 1e-3, 0.01, -0.95, 1e-3, 0.0});
        b.hi.insert(b.hi.end(), {10.0, 1.0, 2.0, 0.95, 1.0, 10.0});
    }
    for (std::size_t j = 0; j < m.deterministic_factors.size(); ++j) {
        b.lo.insert(b.lo.end(), {1e-3, 0.0});
        b.hi.insert(b.hi.end(), {2.0, 10.0});
    }
    return b;
}

// ---------------------------------------------------------------------------------------------
// optimizer

struct OptimizerConfig {
    int starts = 8;                 ///< the initial point plus starts - 1 scrambled Halton points
    std::uint64_t seed = 42;
    int nm_max_evals = 400;         ///< per start
    double nm_tolerance = 1e-14;    ///< spread of simplex values, relative
    bool lm_polish = true;
    int lm_max_iter = 60;
    ObjectiveKind kind = ObjectiveKind::price;
    unsigned threads = 0;
};

struct IterationRecord {
    int start = 0;
    std::string stage;  ///< "nm" or "lm"
    int iteration = 0;
    int evaluations = 0;
    double objective = 0.0;
};

struct CalibResult {
    ModelParams theta_star;
    double objective = 0.0;
    double initial_objective = 0.0;
    std::vector<double> residuals;  ///< price residuals at theta_star
    ErrorReport errors;
    std::vector<IterationRecord> log;
    std::vector<double> start_objectives;
    int evaluations = 0;
    int best_start = 0;
};

namespace detail {

inline double radical_inverse(unsigned base, std::uint64_t i) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

/// Halton points with a random Cranley-Patterson shift.
inline std::vector<std::vector<double>> scrambled_halton(std::size_t n, std::size_t dim, std::uint64_t seed) {
    static const unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                                      59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113};
    if (dim > std::size(primes)) throw InputError("calibrate: too many free parameters for the start design");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> shift(dim);
    for (auto& s : shift) s = U(rng);
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
            const double u = radical_inverse(primes[d], i + 1) + shift[d];
            pts[i][d] = u - std::floor(u);
        }
    return pts;
}

/// Problem in unit-box coordinates of the free parameters.
struct BoxProblem {
    const ModelParams& shape;
    const QuoteSet& qs;
    const Bounds& b;
    std::vector<double> base;
    std::vector<std::size_t> idx;
    ObjectiveKind kind;
    NumericsConfig cfg;

    [[nodiscard]] std::vector<double> full(const Eigen::VectorXd& z) const {
        auto x = base;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t i = idx[k];
            x[i] = b.lo[i] + std::clamp(z[k], 0.0, 1.0) * (b.hi[i] - b.lo[i]);
        }
        return x;
    }
    [[nodiscard]] Eigen::VectorXd unit(const std::vector<double>& x) const {
        Eigen::VectorXd z(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t i = idx[k];
            z[k] = b.hi[i] > b.lo[i] ? std::clamp((x[i] - b.lo[i]) / (b.hi[i] - b.lo[i]), 0.0, 1.0) : 0.0;
        }
        return z;
    }
    [[nodiscard]] double value(const Eigen::VectorXd& z) const { return objective(unpack(shape, full(z)), qs, kind, cfg); }
    [[nodiscard]] bool res(const Eigen::VectorXd& z, Eigen::VectorXd& r) const {
        try {
            const auto e = residuals(unpack(shape, full(z)), qs, kind, cfg);
            r = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
            return r.allFinite();
        } catch (const std::exception&) {
            return false;
        }
    }
};

struct LocalResult {
    Eigen::VectorXd z;
    double f = std::numeric_limits<double>::infinity();
    int evals = 0;
    std::vector<IterationRecord> log;
};

inline LocalResult nelder_mead(const BoxProblem& P, Eigen::VectorXd z0, const OptimizerConfig& oc, int start) {
    const auto n = z0.size();
    LocalResult out;
    auto eval = [&](Eigen::VectorXd& z) {
        z = z.cwiseMax(0.0).cwiseMin(1.0);
        ++out.evals;
        return P.value(z);
    };
    std::vector<Eigen::VectorXd> s(n + 1, z0);
    std::vector<double> f(n + 1);
    for (Eigen::Index k = 0; k < n; ++k) s[k + 1][k] += z0[k] > 0.9 ? -0.1 : 0.1;
    for (Eigen::Index k = 0; k <= n; ++k) f[k] = eval(s[k]);
    std::vector<std::size_t> ord(n + 1);
    for (int it = 0; out.evals < oc.nm_max_evals; ++it) {
        std::iota(ord.begin(), ord.end(), 0);
        std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
        const std::size_t best = ord.front(), worst = ord.back(), second = ord[n - 1];
        out.log.push_back({start, "nm", it, out.evals, f[best]});
        if (!std::isfinite(f[best]) && it > 0) break;
        if (std::isfinite(f[worst]) && f[worst] - f[best] <= oc.nm_tolerance * std::max(f[best], 1e-300)) break;
        if (f[best] == 0.0) break;
        Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
        for (Eigen::Index k = 0; k <= n; ++k)
            if (static_cast<std::size_t>(k) != worst) c += s[k];
        c /= static_cast<double>(n);
        Eigen::VectorXd xr = c + (c - s[worst]);
        const double fr = eval(xr);
        if (fr < f[best]) {
            Eigen::VectorXd xe = c + 2.0 * (c - s[worst]);
            const double fe = eval(xe);
            if (fe < fr) s[worst] = xe, f[worst] = fe;
            else s[worst] = xr, f[worst] = fr;
        } else if (fr < f[second]) {
            s[worst] = xr, f[worst] = fr;
        } else {
            const bool outside = fr < f[worst];
            Eigen::VectorXd xc = outside ? Eigen::VectorXd(c + 0.5 * (xr - c)) : Eigen::VectorXd(c + 0.5 * (s[worst] - c));
            const double fc = eval(xc);
            if (fc < (outside ? fr : f[worst])) {
                s[worst] = xc, f[worst] = fc;
            } else {
                for (Eigen::Index k = 0; k <= n; ++k)
                    if (static_cast<std::size_t>(k) != best) {
                        s[k] = s[best] + 0.5 * (s[k] - s[best]);
                        f[k] = eval(s[k]);
                    }
            }
        }
    }
    const auto b = static_cast<std::size_t>(std::min_element(f.begin(), f.end()) - f.begin());
    out.z = s[b];
    out.f = f[b];
    return out;
}

/// Projected Levenberg-Marquardt with forward-difference Jacobian. Only improving steps are taken.
inline LocalResult levenberg_marquardt(const BoxProblem& P, const Eigen::VectorXd& z0, double f0,
                                       const OptimizerConfig& oc, int start) {
    const auto n = z0.size();
    LocalResult out;
    out.z = z0;
    Eigen::VectorXd r;
    ++out.evals;
    if (!P.res(out.z, r)) {
        out.f = f0;
        return out;
    }
    out.f = r.squaredNorm();
    double mu = 1e-3;
    for (int it = 0; it < oc.lm_max_iter && out.f > 0; ++it) {
        Eigen::MatrixXd J(r.size(), n);
        bool ok = true;
        for (Eigen::Index k = 0; k < n && ok; ++k) {
            Eigen::VectorXd zh = out.z, rh;
            const double h = out.z[k] > 1.0 - 1e-6 ? -1e-7 : 1e-7;
            zh[k] += h;
            ++out.evals;
            ok = P.res(zh, rh);
            if (ok) J.col(k) = (rh - r) / h;
        }
        if (!ok) break;
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        bool stepped = false;
        while (mu < 1e12) {
            Eigen::MatrixXd M = A;
            for (Eigen::Index k = 0; k < n; ++k) M(k, k) += mu * std::max(A(k, k), 1e-12);
            Eigen::VectorXd zn = (out.z - M.ldlt().solve(g)).cwiseMax(0.0).cwiseMin(1.0);
            Eigen::VectorXd rn;
            ++out.evals;
            if (P.res(zn, rn) && rn.squaredNorm() < out.f) {
                const double rel = (out.f - rn.squaredNorm()) / out.f;
                const double step = (zn - out.z).norm();
                out.z = zn;
                r = rn;
                out.f = rn.squaredNorm();
                mu = std::max(mu / 3.0, 1e-12);
                stepped = rel > 1e-10 && step > 1e-13;
                break;
            }
            mu *= 4.0;
        }
        out.log.push_back({start, "lm", it, out.evals, out.f});
        if (!stepped) break;
    }
    return out;
}

}  // namespace detail

/// Multi-start Nelder-Mead in the unit box of the free parameters, followed by a
/// Levenberg-Marquardt polish of the best start. Fixed parameters keep their initial values.
inline CalibResult calibrate(const ModelParams& initial, const QuoteSet& qs, Bounds bounds = {},
                             const OptimizerConfig& oc = {}, const NumericsConfig& cfg = {}) {
    require_valid(initial);
    const auto x0 = pack(initial);
    if (bounds.lo.empty()) {
        auto d = default_bounds(initial);
        d.free = bounds.free;
        bounds = d;
    }
    if (bounds.lo.size() != x0.size() || bounds.hi.size() != x0.size())
        throw InputError("calibrate: bounds do not match the parameter vector");
    if (bounds.free.empty()) bounds.free.assign(x0.size(), true);
    detail::BoxProblem P{initial, qs, bounds, x0, {}, oc.kind, cfg};
    for (std::size_t i = 0; i < x0.size(); ++i) {
        if (!(bounds.lo[i] <= bounds.hi[i])) throw InputError("calibrate: empty bound interval");
        if (bounds.free[i]) P.idx.push_back(i);
    }
    if (P.idx.empty()) throw InputError("calibrate: no free parameters");
    if (oc.starts < 1) throw InputError("calibrate: need at least one start");

    std::vector<Eigen::VectorXd> z0{P.unit(x0)};
    for (const auto& h : detail::scrambled_halton(oc.starts - 1, P.idx.size(), oc.seed))
        z0.push_back(Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size())));

    std::vector<detail::LocalResult> runs(z0.size());
    parallel_for(z0.size(), [&](std::size_t s) { runs[s] = detail::nelder_mead(P, z0[s], oc, static_cast<int>(s)); },
                 oc.threads);

    CalibResult out;
    out.initial_objective = P.value(z0[0]);
    std::size_t best = 0;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        out.start_objectives.push_back(runs[s].f);
        out.evaluations += runs[s].evals;
        out.log.insert(out.log.end(), runs[s].log.begin(), runs[s].log.end());
        if (runs[s].f < runs[best].f) best = s;
    }
    if (!std::isfinite(runs[best].f)) throw NumericalError("calibrate: every start failed to price the quotes");
    auto z = runs[best].z;
    double f = runs[best].f;
    if (oc.lm_polish) {
        auto lm = detail::levenberg_marquardt(P, z, f, oc, static_cast<int>(best));
        out.evaluations += lm.evals;
        out.log.insert(out.log.end(), lm.log.begin(), lm.log.end());
        if (lm.f < f) z = lm.z, f = lm.f;
    }
    out.best_start = static_cast<int>(best);
    out.theta_star = unpack(initial, P.full(z));
    out.objective = f;
    out.residuals = residuals(out.theta_star, qs, ObjectiveKind::price, cfg);
    out.errors = error_report(out.theta_star, qs, cfg);
    return out;
}

}  // namespace svcurve
