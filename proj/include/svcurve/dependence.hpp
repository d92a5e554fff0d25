#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "svcurve/charfn.hpp"
#include "svcurve/error.hpp"
#include "svcurve/model.hpp"
#include "svcurve/parallel.hpp"
#include "svcurve/pricers.hpp"
#include "svcurve/transforms.hpp"

namespace svcurve {

// ---------------------------------------------------------------------------------------------
// bivariate normal

namespace detail {

// Upper orthant P(X > h, Y > k) for standard normals with correlation r (Genz's BVND).
inline double bvn_upper(double h, double k, double r) {
    static const GaussLegendre g6(6), g12(12), g20(20);
    const GaussLegendre& g = std::abs(r) < 0.3 ? g6 : std::abs(r) < 0.75 ? g12 : g20;
    const std::size_t lg = g.x.size() / 2;  // negative half of the symmetric rule
    const double twopi = 2.0 * M_PI;
    double hk = h * k, bvn = 0.0;
    if (std::abs(r) < 0.925) {
        const double hs = (h * h + k * k) / 2.0, asr = std::asin(r);
        for (std::size_t i = 0; i < lg; ++i) {
            double sn = std::sin(asr * (1.0 + g.x[i]) / 2.0);
            bvn += g.w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
            sn = std::sin(asr * (1.0 - g.x[i]) / 2.0);
            bvn += g.w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
        return bvn * asr / (2.0 * twopi) + norm_cdf(-h) * norm_cdf(-k);
    }
    if (r < 0) {
        k = -k;
        hk = -hk;
    }
    if (std::abs(r) < 1) {
        const double as = (1.0 - r) * (1.0 + r);
        double a = std::sqrt(as);
        const double bs = (h - k) * (h - k), c = (4.0 - hk) / 8.0, d = (12.0 - hk) / 16.0;
        bvn = a * std::exp(-(bs / as + hk) / 2.0) * (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
        if (hk > -160.0) {
            const double b = std::sqrt(bs);
            bvn -= std::exp(-hk / 2.0) * std::sqrt(twopi) * norm_cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (std::size_t i = 0; i < lg; ++i)
            for (double s : {-1.0, 1.0}) {
                const double xs = std::pow(a * (s * g.x[i] + 1.0), 2), rs = std::sqrt(1.0 - xs);
                const double asr = -(bs / xs + hk) / 2.0;
                if (asr > -100.0)
                    bvn += a * g.w[i] * std::exp(asr) *
                           (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs)));
            }
        bvn = -bvn / twopi;
    }
    if (r > 0) return bvn + norm_cdf(-std::max(h, k));
    bvn = -bvn;
    if (k > h) bvn += h < 0 ? norm_cdf(k) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-k);
    return bvn;
}

}  // namespace detail

/// P(X <= x, Y <= y) for standard normals with correlation rho.
inline double bivariate_normal_cdf(double x, double y, double rho) {
    if (!(rho >= -1.0 && rho <= 1.0)) throw InputError("bivariate normal: |rho| must be <= 1");
    if (std::isinf(x) || std::isinf(y)) {
        if (x == -INFINITY || y == -INFINITY) return 0.0;
        return x == INFINITY ? norm_cdf(y) : norm_cdf(x);
    }
    return std::clamp(detail::bvn_upper(-x, -y, rho), 0.0, 1.0);
}

inline double norm_quantile(double p) {
    if (p <= 0) return -INFINITY;
    if (p >= 1) return INFINITY;
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double gaussian_copula(double v1, double v2, double rho) {
    if (v1 <= 0 || v2 <= 0) return 0.0;
    if (v1 >= 1) return std::min(v2, 1.0);
    if (v2 >= 1) return v1;
    return bivariate_normal_cdf(norm_quantile(v1), norm_quantile(v2), rho);
}

// ---------------------------------------------------------------------------------------------
// marginals at price level

/// Distribution functions of F(T,T1) and F(T,T2), built on log-return lattices.
struct PriceMarginals {
    GridFunction1D G1, G2;
    double F1 = 0.0, F2 = 0.0;

    [[nodiscard]] double cdf(int leg, double p) const {
        if (p <= 0) return 0.0;
        return leg == 1 ? G1(std::log(p / F1)) : G2(std::log(p / F2));
    }
    [[nodiscard]] double quantile(int leg, double u) const {
        return leg == 1 ? F1 * std::exp(G1.quantile(u)) : F2 * std::exp(G2.quantile(u));
    }
    /// price-level support covered by the grids
    [[nodiscard]] double upper(int leg) const { return leg == 1 ? F1 * std::exp(G1.x().back()) : F2 * std::exp(G2.x().back()); }
    [[nodiscard]] double lower(int leg) const { return leg == 1 ? F1 * std::exp(G1.x().front()) : F2 * std::exp(G2.x().front()); }
};

inline PriceMarginals price_marginals(const CFContext& ctx, double F1, double F2, const NumericsConfig& cfg = {}) {
    if (!(F1 > 0 && F2 > 0)) throw InputError("marginals: futures prices must be > 0");
    return {marginal_cdf(ctx, 1, cfg.smoothing_a, cfg), marginal_cdf(ctx, 2, cfg.smoothing_a, cfg), F1, F2};
}

inline PriceMarginals price_marginals(const ModelParams& model, const FuturesCurve& curve, const CsoContract& c,
                                      const NumericsConfig& cfg = {}) {
    c.validate();
    const CFContext ctx(model, c.option_maturity, c.t1, c.t2, CfBackend::ode, cfg.ode_tolerance);
    return price_marginals(ctx, curve.price(c.t1), curve.price(c.t2), cfg);
}

// ---------------------------------------------------------------------------------------------
// copula grids

/// Copula on v-grids {0, midpoints of n equal cells, 1}; C and c row-major with v1 outer.
struct CopulaGrid {
    std::vector<double> v1, v2;
    std::vector<double> C, c;
    std::vector<double> q1, q2;      ///< marginal log-return quantiles at interior nodes (NaN at 0 and 1)
    std::vector<unsigned char> mask;  ///< density cells that could not be formed
    double masked_fraction = 0.0;

    [[nodiscard]] std::size_t n1() const { return v1.size(); }
    [[nodiscard]] std::size_t n2() const { return v2.size(); }
    [[nodiscard]] double Cat(std::size_t i, std::size_t j) const { return C[i * v2.size() + j]; }
    [[nodiscard]] double cat(std::size_t i, std::size_t j) const { return c[i * v2.size() + j]; }
};

struct CopulaGridSpec {
    std::size_t cells = 100;
    double density_floor = 1e-12;
};

inline std::vector<double> copula_axis(std::size_t cells) {
    if (cells < 2) throw InputError("copula grid: need at least 2 cells");
    std::vector<double> v{0.0};
    for (std::size_t i = 0; i < cells; ++i) v.push_back((i + 0.5) / static_cast<double>(cells));
    v.push_back(1.0);
    return v;
}

namespace detail {

inline void fill_copula_boundary(CopulaGrid& g) {
    const std::size_t n = g.n1(), m = g.n2();
    for (std::size_t i = 0; i < n; ++i) {
        g.C[i * m] = 0.0;
        g.C[i * m + m - 1] = g.v1[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
        g.C[j] = 0.0;
        g.C[(n - 1) * m + j] = g.v2[j];
    }
    g.C[(n - 1) * m + m - 1] = 1.0;
}

// masked density cells take the mean of unmasked 4-neighbours, repeated until filled
inline void fill_masked(CopulaGrid& g) {
    const std::size_t n = g.n1(), m = g.n2();
    std::size_t count = 0, interior = (n - 2) * (m - 2);
    for (std::size_t i = 1; i + 1 < n; ++i)
        for (std::size_t j = 1; j + 1 < m; ++j) count += g.mask[i * m + j];
    g.masked_fraction = interior ? static_cast<double>(count) / interior : 0.0;
    auto pending = g.mask;
    for (int pass = 0; pass < 1000 && std::find(pending.begin(), pending.end(), 1) != pending.end(); ++pass) {
        auto next = pending;
        for (std::size_t i = 1; i + 1 < n; ++i)
            for (std::size_t j = 1; j + 1 < m; ++j) {
                const std::size_t k = i * m + j;
                if (!pending[k]) continue;
                double s = 0.0;
                int cnt = 0;
                for (auto [a, b] : {std::pair{i - 1, j}, std::pair{i + 1, j}, std::pair{i, j - 1}, std::pair{i, j + 1}}) {
                    if (a == 0 || b == 0 || a + 1 == n || b + 1 == m || pending[a * m + b]) continue;
                    s += g.c[a * m + b];
                    ++cnt;
                }
                if (cnt) {
                    g.c[k] = s / cnt;
                    next[k] = 0;
                }
            }
        pending.swap(next);
    }
}

}  // namespace detail

/// C(v1, v2) = G(G1^-1(v1), G2^-1(v2)) and c = g / (g1 g2) at the quantiles.
inline CopulaGrid copula_from_cf(const CFContext& ctx, const CopulaGridSpec& spec = {}, const NumericsConfig& cfg = {}) {
    const auto G1 = marginal_cdf(ctx, 1, cfg.smoothing_a, cfg), G2 = marginal_cdf(ctx, 2, cfg.smoothing_a, cfg);
    const auto g1 = marginal_pdf(ctx, 1, cfg), g2 = marginal_pdf(ctx, 2, cfg);
    const auto G = joint_cdf(ctx, cfg.smoothing_a1, cfg.smoothing_a2, cfg);
    // singular laws (one driving factor) have no joint density: every density cell is masked
    std::optional<GridFunction2D> g;
    try {
        g.emplace(joint_pdf(ctx, cfg));
    } catch (const NumericalError&) {
    }
    CopulaGrid out;
    out.v1 = copula_axis(spec.cells);
    out.v2 = out.v1;
    const std::size_t n = out.n1(), m = out.n2();
    out.q1.assign(n, NAN);
    out.q2.assign(m, NAN);
    for (std::size_t i = 1; i + 1 < n; ++i) out.q1[i] = G1.quantile(out.v1[i]);
    for (std::size_t j = 1; j + 1 < m; ++j) out.q2[j] = G2.quantile(out.v2[j]);
    out.C.assign(n * m, 0.0);
    out.c.assign(n * m, 0.0);
    out.mask.assign(n * m, 0);
    parallel_for(n - 2, [&](std::size_t r) {
        const std::size_t i = r + 1;
        const double d1 = g1(out.q1[i]);
        for (std::size_t j = 1; j + 1 < m; ++j) {
            const std::size_t k = i * m + j;
            out.C[k] = std::clamp(G(out.q1[i], out.q2[j]), 0.0, std::min(out.v1[i], out.v2[j]));
            const double d2 = g2(out.q2[j]);
            if (!g || d1 < spec.density_floor || d2 < spec.density_floor) {
                out.mask[k] = 1;
                continue;
            }
            out.c[k] = (*g)(out.q1[i], out.q2[j]) / (d1 * d2);
            if (out.c[k] < 0) out.c[k] = 0.0;
        }
    });
    detail::fill_copula_boundary(out);
    detail::fill_masked(out);
    return out;
}

/// Copula grid from closed forms (test copulas, Gaussian fits).
inline CopulaGrid copula_from_function(const std::function<double(double, double)>& C,
                                       const std::function<double(double, double)>& c, std::size_t cells = 100) {
    CopulaGrid out;
    out.v1 = copula_axis(cells);
    out.v2 = out.v1;
    const std::size_t n = out.n1(), m = out.n2();
    out.q1.assign(n, NAN);
    out.q2.assign(m, NAN);
    out.C.assign(n * m, 0.0);
    out.c.assign(n * m, 0.0);
    out.mask.assign(n * m, 0);
    for (std::size_t i = 1; i + 1 < n; ++i)
        for (std::size_t j = 1; j + 1 < m; ++j) {
            out.C[i * m + j] = C(out.v1[i], out.v2[j]);
            out.c[i * m + j] = c ? c(out.v1[i], out.v2[j]) : 0.0;
        }
    detail::fill_copula_boundary(out);
    return out;
}

struct CopulaAxioms {
    double grounded = 0.0;       ///< max C(v, v_min) - v_min, C(v_min, v) - v_min, clipped at 0
    double margins = 0.0;        ///< max |C(v, v_max) - v| - (1 - v_max), clipped at 0
    double frechet = 0.0;        ///< max violation of W <= C <= M
    double two_increasing = 0.0; ///< most negative rectangle mass (reported as a magnitude)
    double min_density = 0.0;
};

inline CopulaAxioms check_copula(const CopulaGrid& g) {
    CopulaAxioms a;
    const std::size_t n = g.n1(), m = g.n2();
    const double lo = g.v2[1], hi = g.v2[m - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
        a.grounded = std::max(a.grounded, g.Cat(i, 1) - lo);
        a.margins = std::max(a.margins, std::abs(g.Cat(i, m - 2) - g.v1[i]) - (1 - hi));
    }
    for (std::size_t j = 1; j + 1 < m; ++j) {
        a.grounded = std::max(a.grounded, g.Cat(1, j) - g.v1[1]);
        a.margins = std::max(a.margins, std::abs(g.Cat(n - 2, j) - g.v2[j]) - (1 - g.v1[n - 2]));
    }
    a.min_density = INFINITY;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double C = g.Cat(i, j), W = std::max(g.v1[i] + g.v2[j] - 1.0, 0.0), M = std::min(g.v1[i], g.v2[j]);
            a.frechet = std::max({a.frechet, W - C, C - M});
            if (i + 1 < n && j + 1 < m) {
                const double r = g.Cat(i + 1, j + 1) - g.Cat(i + 1, j) - g.Cat(i, j + 1) + g.Cat(i, j);
                a.two_increasing = std::max(a.two_increasing, -r);
            }
            if (i > 0 && j > 0 && i + 1 < n && j + 1 < m) a.min_density = std::min(a.min_density, g.cat(i, j));
        }
    return a;
}

struct DependenceMeasures {
    double tau_K = 0.0;
    double rho_S = 0.0;
    double sigma_SW = 0.0;
    double phi_H_squared_form = 0.0;  ///< 90 int |C - v1 v2|^2, without a square root
};

/// Trapezoid integrals over the grid. Kendall's 4 int C dC - 1 is taken as a Stieltjes sum over grid
/// cells (cell-average C times the cell's copula mass), which equals 4 int C c - 1 for absolutely
/// continuous copulas and stays finite for singular ones.
inline DependenceMeasures dependence_measures(const CopulaGrid& g) {
    const std::size_t n = g.n1(), m = g.n2();
    double sC = 0.0, sAbs = 0.0, sSq = 0.0, sK = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = 0; j + 1 < m; ++j) {
            const double area = (g.v1[i + 1] - g.v1[i]) * (g.v2[j + 1] - g.v2[j]);
            double c = 0.0, a = 0.0, q = 0.0;
            for (auto [di, dj] : {std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}, std::pair{1, 1}}) {
                const double C = g.Cat(i + di, j + dj), d = C - g.v1[i + di] * g.v2[j + dj];
                c += C;
                a += std::abs(d);
                q += d * d;
            }
            sC += area * c / 4;
            sAbs += area * a / 4;
            sSq += area * q / 4;
            const double mass = g.Cat(i + 1, j + 1) - g.Cat(i + 1, j) - g.Cat(i, j + 1) + g.Cat(i, j);
            sK += c / 4 * mass;
        }
    return {4 * sK - 1, 12 * sC - 3, 12 * sAbs, 90 * sSq};
}

// ---------------------------------------------------------------------------------------------
// Gaussian copula prices

namespace detail {

// int_0^inf h(x) dx over the price axis of leg 2, as Gauss-Legendre panels in log price.
template <class H>
double integrate_leg2_axis(const PriceMarginals& mg, H&& h) {
    static const GaussLegendre gl(16);
    const double y0 = mg.G2.x().front(), y1 = mg.G2.x().back();
    const int panels = 256;
    double s = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double a = y0 + (y1 - y0) * p / panels, b = y0 + (y1 - y0) * (p + 1) / panels;
        s += gl.integrate([&](double y) { const double x = mg.F2 * std::exp(y); return h(x) * x; }, a, b);
    }
    return s;
}

}  // namespace detail

/// Spread call E(F1 - F2 - K)^+ with the model's marginals coupled by a Gaussian copula:
/// e^{-rT} int_0^inf [G2(x) - C_rho(G1(x + K), G2(x))] dx.
inline double price_cso_gaussian_copula(const PriceMarginals& mg, double rho, const CsoContract& c) {
    if (!(rho > -1.0 && rho < 1.0)) throw InputError("Gaussian copula: rho must lie in (-1, 1)");
    const double K = c.strike;
    auto h = [&](double x) {
        const double u2 = mg.cdf(2, x), u1 = mg.cdf(1, x + K);
        return u2 - gaussian_copula(u1, u2, rho);
    };
    const double top = mg.upper(2);
    if (std::abs(h(top)) * top > 1e-6 * std::max(1.0, mg.F1 + mg.F2))
        throw NumericalError("Gaussian copula: marginal grids too narrow for the strike");
    const double v = detail::integrate_leg2_axis(mg, h);
    const double df = std::exp(-c.rate * c.option_maturity);
    const double call = std::max(0.0, df * v);
    if (c.type == OptionType::call) return call;
    return std::max(0.0, call - df * (mg.F1 - mg.F2 - K));
}

struct FrechetPrices {
    double lower = 0.0;  ///< comonotone coupling (CSC+): the smallest call price
    double upper = 0.0;  ///< countermonotone coupling (CSC-): the largest call price
};

/// Spread calls under the Frechet-Hoeffding couplings, by midpoint quadrature in quantile space.
inline FrechetPrices frechet_bound_prices(const PriceMarginals& mg, const CsoContract& c, std::size_t nodes = 10000) {
    std::vector<double> a(nodes), b(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        const double u = (i + 0.5) / static_cast<double>(nodes);
        a[i] = mg.quantile(1, u);
        b[i] = mg.quantile(2, u);
    }
    double co = 0.0, counter = 0.0;
    for (std::size_t i = 0; i < nodes; ++i) {
        co += std::max(a[i] - b[i] - c.strike, 0.0);
        counter += std::max(a[i] - b[nodes - 1 - i] - c.strike, 0.0);
    }
    const double df = std::exp(-c.rate * c.option_maturity) / static_cast<double>(nodes);
    FrechetPrices out{df * co, df * counter};
    if (c.type == OptionType::put) {
        const double fwd = cso_forward_value(FuturesCurve({c.t1, c.t2}, {mg.F1, mg.F2}), c);
        out = {out.lower - fwd, out.upper - fwd};
    }
    return out;
}

struct ImpliedCorrelation {
    double rho = 0.0;
    double price_error = 0.0;
    bool near_boundary = false;
    int iterations = 0;
};

/// Gaussian-copula correlation reproducing an observed spread call (or put) price.
inline ImpliedCorrelation implied_correlation(const PriceMarginals& mg, const CsoContract& c, double observed,
                                              double tol = 1e-8) {
    const double lo = -1.0 + 1e-6, hi = 1.0 - 1e-6;
    // calls and puts both decrease in rho (they differ by a constant)
    auto f = [&](double r) { return price_cso_gaussian_copula(mg, r, c) - observed; };
    double a = lo, b = hi, fa = f(a), fb = f(b);
    if (fa < 0) {
        const auto fr = frechet_bound_prices(mg, c);
        throw NoSolutionError("implied correlation: price " + std::to_string(observed) +
                              " is above the countermonotone bound (rho -> -1 gives " +
                              std::to_string(observed + fa) + ", Frechet " + std::to_string(fr.upper) + ")");
    }
    if (fb > 0) {
        const auto fr = frechet_bound_prices(mg, c);
        throw NoSolutionError("implied correlation: price " + std::to_string(observed) +
                              " is below the comonotone bound (rho -> 1 gives " + std::to_string(observed + fb) +
                              ", Frechet " + std::to_string(fr.lower) + ")");
    }
    ImpliedCorrelation out;
    double x = 0.5 * (a + b);
    for (int it = 1; it <= 200; ++it) {
        out.iterations = it;
        // secant (regula falsi) step, fall back to bisection when it leaves the inner bracket
        double s = b - fb * (b - a) / (fb - fa);
        if (!(s > a + 0.01 * (b - a) && s < b - 0.01 * (b - a)) || it % 3 == 0) s = 0.5 * (a + b);
        const double fs = f(s);
        x = s;
        if (std::abs(fs) < tol) break;
        if (fs > 0) {
            a = s;
            fa = fs;
        } else {
            b = s;
            fb = fs;
        }
        if (b - a < 1e-12) break;
    }
    out.rho = x;
    out.price_error = std::abs(f(x));
    out.near_boundary = std::abs(x) > 1.0 - 1e-3;
    return out;
}

}  // namespace svcurve
