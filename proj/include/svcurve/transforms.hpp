#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <fftw3.h>

#include "svcurve/charfn.hpp"
#include "svcurve/error.hpp"
#include "svcurve/model.hpp"
#include "svcurve/parallel.hpp"

namespace svcurve {

// ---------------------------------------------------------------------------------------------
// quadrature

struct GaussLegendre {
    std::vector<double> x, w;  // on [-1, 1]

    explicit GaussLegendre(int n) : x(n), w(n) {
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double z = std::cos(M_PI * (i + 0.75) / (n + 0.5)), dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = z;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (z * p1 - p0) / (z * z - 1.0);
                const double dz = p1 / dp;
                z -= dz;
                if (std::abs(dz) < 1e-16) break;
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
    }

    template <class F>
    auto integrate(F&& f, double a, double b) const {
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        decltype(f(c)) s = w[0] * f(c + h * x[0]);
        for (std::size_t i = 1; i < x.size(); ++i) s += w[i] * f(c + h * x[i]);
        return h * s;
    }
};

struct QuadResult {
    cplx value;
    double error_estimate = 0.0;
    double tail_estimate = 0.0;  ///< magnitude of the last accepted panel
    double upper = 0.0;          ///< truncation point actually used
    long evaluations = 0;
};

namespace detail {

template <class F>
cplx adaptive_panel(F& f, const GaussLegendre& gl, double a, double b, cplx coarse, double tol, int depth,
                    long& evals, double& err) {
    const double m = 0.5 * (a + b);
    const cplx l = gl.integrate(f, a, m), r = gl.integrate(f, m, b);
    evals += 2 * static_cast<long>(gl.x.size());
    const cplx fine = l + r;
    const double d = std::abs(fine - coarse);
    if (d <= tol || !std::isfinite(d)) {
        if (!std::isfinite(d)) throw NumericalError("quadrature: non-finite integrand");
        err += d;
        return fine;
    }
    if (depth >= 40) throw NumericalError("quadrature: panel refinement did not converge");
    return adaptive_panel(f, gl, a, m, l, 0.5 * tol, depth + 1, evals, err) +
           adaptive_panel(f, gl, m, b, r, 0.5 * tol, depth + 1, evals, err);
}

}  // namespace detail

/// Integral of f over [0, upper] by adaptive Gauss-Legendre panels; upper = 0 marches panels outward
/// (widths growing from `scale`) until two consecutive panels fall below tolerance.
template <class F>
QuadResult quad_semi_infinite(F&& f, double upper = 0.0, int nodes = 16, double tol = 1e-10, double scale = 1.0) {
    const GaussLegendre gl(nodes);
    auto fc = [&](double u) -> cplx { return f(u); };
    QuadResult out;
    auto panel = [&](double a, double b, double ptol) {
        const cplx c = gl.integrate(fc, a, b);
        out.evaluations += nodes;
        return detail::adaptive_panel(fc, gl, a, b, c, ptol, 0, out.evaluations, out.error_estimate);
    };
    if (upper > 0.0) {
        const int n = std::max(1, static_cast<int>(std::ceil(upper / scale)));
        for (int k = 0; k < n; ++k) out.value += panel(upper * k / n, upper * (k + 1) / n, tol / n);
        out.upper = upper;
        return out;
    }
    double a = 0.0, w = scale;
    int quiet = 0;
    for (int k = 0; k < 2000; ++k) {
        const cplx p = panel(a, a + w, tol / 8);
        out.value += p;
        a += w;
        out.tail_estimate = std::abs(p);
        quiet = std::abs(p) <= tol * std::max(1.0, std::abs(out.value)) ? quiet + 1 : 0;
        if (quiet >= 2) {
            out.upper = a;
            return out;
        }
        if (k % 4 == 3) w *= 1.5;
    }
    throw NumericalError("quadrature: integrand tail did not decay (tail " + std::to_string(out.tail_estimate) + ")");
}

/// Wynn epsilon extrapolation of partial sums. Returns the deepest even-column entry; `change` receives
/// its distance to the entry above it.
inline double wynn_epsilon(const std::vector<double>& s, double* change = nullptr) {
    std::vector<double> prev(s.size() + 1, 0.0), cur(s.begin(), s.end());
    double best = s.back(), diff = s.size() > 1 ? std::abs(s.back() - s[s.size() - 2]) : 0.0;
    for (std::size_t k = 0; cur.size() > 1; ++k) {
        std::vector<double> next(cur.size() - 1);
        bool stalled = false;
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double d = cur[i + 1] - cur[i];
            if (d == 0.0) stalled = true;
            next[i] = prev[i + 1] + (d == 0.0 ? 0.0 : 1.0 / d);
        }
        if (stalled) break;
        prev = std::move(cur);
        cur = std::move(next);
        if (k % 2 == 1) {
            best = cur.back();
            diff = cur.size() > 1 ? std::abs(cur.back() - cur[cur.size() - 2]) : diff;
        }
    }
    if (change) *change = diff;
    return best;
}

/// Oscillatory semi-infinite integral: panels of width half_period, partial sums accelerated by Wynn epsilon.
template <class F>
QuadResult quad_oscillatory(F&& f, double half_period, int nodes = 16, double tol = 1e-10) {
    const GaussLegendre gl(nodes);
    auto fr = [&](double u) -> double { return f(u); };
    QuadResult out;
    std::vector<double> partial;
    double s = 0.0, last = 0.0;
    for (int k = 0; k < 400; ++k) {
        const double a = k * half_period, b = a + half_period;
        const cplx c = gl.integrate(fr, a, b);
        s += detail::adaptive_panel(fr, gl, a, b, c, tol / 16, 0, out.evaluations, out.error_estimate).real();
        partial.push_back(s);
        if (partial.size() >= 8) {
            double change = 0.0;
            const std::vector<double> tailseq(partial.end() - std::min<std::size_t>(partial.size(), 24), partial.end());
            const double v = wynn_epsilon(tailseq, &change);
            if (std::abs(v - last) < tol && change < 10 * tol) {
                out.value = v;
                out.upper = b;
                out.error_estimate += std::abs(v - last);
                return out;
            }
            last = v;
        }
    }
    throw NumericalError("oscillatory quadrature: extrapolation did not settle");
}

// ---------------------------------------------------------------------------------------------
// grid functions

enum class Interp1D { monotone_cubic, cubic, lagrange, linear };

namespace detail {

/// Pool-adjacent-violators least-squares isotonic fit; returns max |adjustment|.
inline double isotonic(std::vector<double>& y) {
    const std::size_t n = y.size();
    std::vector<double> val, wt;
    std::vector<std::size_t> len;
    for (std::size_t i = 0; i < n; ++i) {
        val.push_back(y[i]);
        wt.push_back(1.0);
        len.push_back(1);
        while (val.size() > 1 && val[val.size() - 2] > val.back()) {
            const std::size_t j = val.size() - 2;
            val[j] = (val[j] * wt[j] + val.back() * wt.back()) / (wt[j] + wt.back());
            wt[j] += wt.back();
            len[j] += len.back();
            val.pop_back();
            wt.pop_back();
            len.pop_back();
        }
    }
    double adj = 0.0;
    std::size_t i = 0;
    for (std::size_t b = 0; b < val.size(); ++b)
        for (std::size_t k = 0; k < len[b]; ++k, ++i) {
            adj = std::max(adj, std::abs(y[i] - val[b]));
            y[i] = val[b];
        }
    return adj;
}

inline std::size_t bracket(const std::vector<double>& x, double t) {
    auto it = std::upper_bound(x.begin(), x.end(), t);
    std::size_t i = static_cast<std::size_t>(it - x.begin());
    return std::clamp<std::size_t>(i, 1, x.size() - 1) - 1;
}

// Lagrange interpolation through the kLagrangeNodes nodes nearest t (window clamped at the ends).
constexpr std::size_t kLagrangeNodes = 8;

template <class V>
double lagrange(const std::vector<double>& x, V&& val, double t) {
    const std::size_t n = x.size(), p = std::min(kLagrangeNodes, n);
    const std::size_t i = bracket(x, t);
    std::size_t lo = i >= p / 2 - 1 ? i - (p / 2 - 1) : 0;
    lo = std::min(lo, n - p);
    double out = 0.0;
    for (std::size_t a = lo; a < lo + p; ++a) {
        double w = 1.0;
        for (std::size_t b = lo; b < lo + p; ++b)
            if (b != a) w *= (t - x[b]) / (x[a] - x[b]);
        out += w * val(a);
    }
    return out;
}

inline double hermite(double y0, double y1, double d0, double d1, double h, double s) {
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1;
}

// Slopes at nodes: three-point finite differences, or Fritsch-Carlson limited for monotone data.
inline std::vector<double> node_slopes(const std::vector<double>& x, const std::vector<double>& y, bool monotone) {
    const std::size_t n = x.size();
    std::vector<double> d(n, 0.0), del(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) del[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    if (n == 2) return {del[0], del[0]};
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
        if (monotone) {
            if (del[i - 1] * del[i] <= 0) {
                d[i] = 0.0;
            } else {
                const double w1 = 2 * h1 + h0, w2 = h1 + 2 * h0;
                d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
            }
        } else {
            d[i] = (del[i - 1] * h1 + del[i] * h0) / (h0 + h1);
        }
    }
    d[0] = del[0];
    d[n - 1] = del[n - 2];
    return d;
}

}  // namespace detail

/// Function sampled on sorted abscissae. CDFs use monotone cubic interpolation and extend flat outside
/// the grid; other functions default to eight-point Lagrange interpolation and vanish outside.
class GridFunction1D {
public:
    GridFunction1D() = default;
    GridFunction1D(std::vector<double> x, std::vector<double> y, bool is_cdf, Interp1D rule = Interp1D::lagrange)
        : x_(std::move(x)), y_(std::move(y)), cdf_(is_cdf), rule_(is_cdf ? Interp1D::monotone_cubic : rule) {
        if (x_.size() != y_.size() || x_.size() < 2) throw InputError("grid function: need >= 2 matching points");
        for (std::size_t i = 1; i < x_.size(); ++i)
            if (!(x_[i] > x_[i - 1])) throw InputError("grid function: abscissae must increase");
        if (rule_ == Interp1D::cubic || rule_ == Interp1D::monotone_cubic) d_ = detail::node_slopes(x_, y_, rule_ == Interp1D::monotone_cubic);
    }

    [[nodiscard]] double operator()(double t) const {
        if (t <= x_.front()) return cdf_ || t == x_.front() ? y_.front() : 0.0;
        if (t >= x_.back()) return cdf_ || t == x_.back() ? y_.back() : 0.0;
        const std::size_t i = detail::bracket(x_, t);
        const double h = x_[i + 1] - x_[i], s = (t - x_[i]) / h;
        if (rule_ == Interp1D::linear) return y_[i] + s * (y_[i + 1] - y_[i]);
        if (rule_ == Interp1D::lagrange) return detail::lagrange(x_, [&](std::size_t k) { return y_[k]; }, t);
        return detail::hermite(y_[i], y_[i + 1], d_[i], d_[i + 1], h, s);
    }

    /// Generalized inverse for CDFs: smallest x with F(x) >= p, to 1e-12 in probability.
    [[nodiscard]] double quantile(double p) const {
        if (!cdf_) throw InputError("quantile: not a distribution function");
        if (p <= y_.front()) return x_.front();
        if (p >= y_.back()) return x_.back();
        const auto it = std::lower_bound(y_.begin(), y_.end(), p);
        const std::size_t i = static_cast<std::size_t>(it - y_.begin());
        double lo = x_[i - 1], hi = x_[i];
        for (int k = 0; k < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++k) {
            const double mid = 0.5 * (lo + hi), v = (*this)(mid);
            if (std::abs(v - p) < 1e-13) return mid;
            (v < p ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    [[nodiscard]] const std::vector<double>& x() const { return x_; }
    [[nodiscard]] const std::vector<double>& values() const { return y_; }
    [[nodiscard]] bool is_cdf() const { return cdf_; }
    [[nodiscard]] Interp1D rule() const { return rule_; }
    /// largest isotonic adjustment (CDF) or clamped negative magnitude (PDF)
    double cleanup = 0.0;

private:
    std::vector<double> x_, y_, d_;
    bool cdf_ = false;
    Interp1D rule_ = Interp1D::lagrange;
};

/// Function on a rectangular grid, values row-major (x index outer). CDF grids interpolate bilinearly
/// and extend flat outside the domain; densities use tensor eight-point Lagrange and vanish outside.
class GridFunction2D {
public:
    GridFunction2D() = default;
    GridFunction2D(std::vector<double> x, std::vector<double> y, std::vector<double> v, bool is_cdf)
        : x_(std::move(x)), y_(std::move(y)), v_(std::move(v)), cdf_(is_cdf) {
        if (v_.size() != x_.size() * y_.size() || x_.size() < 2 || y_.size() < 2)
            throw InputError("grid function 2D: dimension mismatch");
    }

    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return v_[i * y_.size() + j]; }

    [[nodiscard]] double operator()(double s, double t) const {
        if (!cdf_ && (s < x_.front() || s > x_.back() || t < y_.front() || t > y_.back())) return 0.0;
        s = std::clamp(s, x_.front(), x_.back());
        t = std::clamp(t, y_.front(), y_.back());
        if (cdf_) {
            const std::size_t i = detail::bracket(x_, s), j = detail::bracket(y_, t);
            const double sx = (s - x_[i]) / (x_[i + 1] - x_[i]), sy = (t - y_[j]) / (y_[j + 1] - y_[j]);
            return (1 - sx) * ((1 - sy) * at(i, j) + sy * at(i, j + 1)) + sx * ((1 - sy) * at(i + 1, j) + sy * at(i + 1, j + 1));
        }
        return detail::lagrange(x_, [&](std::size_t i) {
            return detail::lagrange(y_, [&](std::size_t j) { return at(i, j); }, t);
        }, s);
    }

    [[nodiscard]] const std::vector<double>& x() const { return x_; }
    [[nodiscard]] const std::vector<double>& y() const { return y_; }
    [[nodiscard]] const std::vector<double>& values() const { return v_; }
    [[nodiscard]] bool is_cdf() const { return cdf_; }
    double cleanup = 0.0;

private:
    std::vector<double> x_, y_, v_;
    bool cdf_ = false;
};

// ---------------------------------------------------------------------------------------------
// FFT lattices

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// In-place forward complex DFT (sign -1), 1D or 2D row-major.
inline void fft_forward(std::vector<cplx>& data, int n0, int n1 = 1) {
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> g(fftw_planner_mutex());
        plan = n1 == 1 ? fftw_plan_dft_1d(n0, p, p, FFTW_FORWARD, FFTW_ESTIMATE)
                       : fftw_plan_dft_2d(n0, n1, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> g(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

inline void fft_backward(std::vector<cplx>& data, int n0, int n1 = 1) {
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> g(fftw_planner_mutex());
        plan = n1 == 1 ? fftw_plan_dft_1d(n0, p, p, FFTW_BACKWARD, FFTW_ESTIMATE)
                       : fftw_plan_dft_2d(n0, n1, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> g(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

inline cplx leg_phi(const CFContext& ctx, int leg, cplx u) { return leg == 1 ? ctx.phi(u, 0.0) : ctx.phi(0.0, u); }

}  // namespace detail

struct LegMoments {
    double mean = 0.0;
    double sd = 0.0;
};

/// Mean and standard deviation of X_leg from central differences of log phi.
inline LegMoments leg_moments(const CFContext& ctx, int leg) {
    if (leg != 1 && leg != 2) throw InputError("leg must be 1 or 2");
    const double h = 1e-2;
    auto L = [&](double u) { return leg == 1 ? ctx.log_phi(u, 0.0) : ctx.log_phi(0.0, u); };
    const cplx lp = L(h), lm = L(-h);
    LegMoments m;
    m.mean = ((lp - lm) / (2.0 * h)).imag();
    const double var = -(lp + lm).real() / (h * h);
    if (!(var > 0) || !std::isfinite(var)) throw NumericalError("leg_moments: non-positive variance");
    m.sd = std::sqrt(var);
    return m;
}

/// Uniform x-lattice of n points, x_j = x0 + j dx, paired with u_k = (k - n/2) du, du dx = 2 pi / n.
struct Lattice {
    double x0 = 0.0;
    double dx = 0.0;
    int n = 0;
    [[nodiscard]] double du() const { return 2.0 * M_PI / (n * dx); }
    [[nodiscard]] double u(int k) const { return (k - n / 2) * du(); }
    [[nodiscard]] double x(int j) const { return x0 + j * dx; }
    [[nodiscard]] std::vector<double> xs() const {
        std::vector<double> v(n);
        for (int j = 0; j < n; ++j) v[j] = x(j);
        return v;
    }
};

/// Lattice centred at the mean with half-width `sds` standard deviations. A one-sided damped
/// inversion (a > 0) widens the period so that the wrapped-around tail e^{-a L} stays below 1e-13.
inline Lattice make_lattice(const LegMoments& m, int n, double sds, double a = 0.0) {
    double width = 2.0 * sds * m.sd;
    if (a > 0) width = std::max(width, 30.0 / a);
    return {m.mean - 0.5 * width, width / n, n};
}

namespace detail {

inline bool damping_admissible(const CFContext& ctx, int leg, double a) {
    try {
        const cplx v = leg == 1 ? ctx.log_phi({0.0, a}, 0.0) : ctx.log_phi(0.0, {0.0, a});
        return std::isfinite(std::abs(v)) && v.real() < 700.0;
    } catch (const NumericalError&) {
        return false;
    }
}

inline void require_damping_finite(const CFContext& ctx, int leg, double a) {
    if (!damping_admissible(ctx, leg, a))
        throw NumericalError("smoothing parameter a = " + std::to_string(a) + " outside the admissible strip of leg " +
                             std::to_string(leg));
}

// Lattice nodes whose integrand falls below kPrune times the largest magnitude seen are not evaluated;
// scanning along a line stops after kQuiet consecutive negligible nodes.
constexpr double kPrune = 1e-18;
constexpr int kQuiet = 6;

// Evaluates g(k) for k = start, start + step, ... within [0, n) until the tail is negligible.
// Returns the largest magnitude seen and its index.
template <class G>
std::pair<double, int> scan_line(int start, int step, int n, G&& g, double floor_abs) {
    double peak = 0.0;
    int at = start, quiet = 0;
    for (int k = start; k >= 0 && k < n; k += step) {
        const double m = g(k);
        if (m > peak) peak = m, at = k;
        quiet = m <= std::max(floor_abs, kPrune * peak) ? quiet + 1 : 0;
        if (quiet >= kQuiet) break;
    }
    return {peak, at};
}

// (du/2pi) sum_k f(u_k) e^{-i u_k x_j} for Hermitian f, evaluating f on the upper half lattice only.
template <class F>
std::vector<double> lattice_inverse_1d(const Lattice& L, F&& f) {
    const int n = L.n;
    std::vector<cplx> a(n, 0.0);
    scan_line(n / 2, 1, n, [&](int k) {
        const double u = L.u(k);
        a[k] = f(u) * std::exp(cplx(0.0, -u * L.x0));
        return std::abs(a[k]);
    }, 0.0);
    if (a[n - 1] != cplx(0.0)) a[0] = f(L.u(0)) * std::exp(cplx(0.0, -L.u(0) * L.x0));
    for (int k = 1; k < n / 2; ++k) a[k] = std::conj(a[n - k]);
    fft_forward(a, n);
    std::vector<double> out(n);
    const double scale = L.du() / (2.0 * M_PI);
    for (int j = 0; j < n; ++j) out[j] = (j % 2 ? -1.0 : 1.0) * scale * a[j].real();
    return out;
}

template <class F>
std::vector<double> lattice_inverse_2d(const Lattice& Lx, const Lattice& Ly, F&& f) {
    const int n = Lx.n, m = Ly.n;
    std::vector<cplx> a(static_cast<std::size_t>(n) * m, 0.0);
    auto cell = [&](int k1, int k2) -> cplx& { return a[static_cast<std::size_t>(k1) * m + k2]; };
    auto eval = [&](int k1, int k2) {
        const double u1 = Lx.u(k1), u2 = Ly.u(k2);
        cell(k1, k2) = f(u1, u2) * std::exp(cplx(0.0, -(u1 * Lx.x0 + u2 * Ly.x0)));
        return std::abs(cell(k1, k2));
    };
    const double centre = std::abs(f(0.0, 0.0));
    const double floor_abs = kPrune * centre;
    // rows k1 >= n/2 outward from u1 = 0; each row is scanned both ways from the previous row's
    // argmax, which follows the ridge of |f| when the legs are correlated
    int start = m / 2, quiet_rows = 0;
    auto scan_row = [&](int row) {
        auto g = [&](int k2) { return eval(row, k2); };
        const auto up = scan_line(start, 1, m, g, floor_abs);
        const auto dn = scan_line(start - 1, -1, m, g, floor_abs);
        return up.first >= dn.first ? up : dn;
    };
    for (int k1 = n / 2; k1 < n; ++k1) {
        const auto pk = scan_row(k1);
        start = std::clamp(pk.second, 1, m - 1);
        quiet_rows = pk.first <= floor_abs ? quiet_rows + 1 : 0;
        if (quiet_rows >= kQuiet) break;
        if (k1 == n - 1) scan_row(0);
    }
    for (int k1 = 1; k1 < n / 2; ++k1) {
        for (int k2 = 1; k2 < m; ++k2) cell(k1, k2) = std::conj(cell(n - k1, m - k2));
        if (cell(n - k1, 1) != cplx(0.0)) eval(k1, 0);
    }
    fft_forward(a, n, m);
    std::vector<double> out(a.size());
    const double scale = Lx.du() * Ly.du() / (4.0 * M_PI * M_PI);
    for (int j1 = 0; j1 < n; ++j1)
        for (int j2 = 0; j2 < m; ++j2) {
            const std::size_t idx = static_cast<std::size_t>(j1) * m + j2;
            out[idx] = ((j1 + j2) % 2 ? -1.0 : 1.0) * scale * a[idx].real();
        }
    return out;
}

// Damped inversion with signed smoothing: a > 0 returns G, a < 0 returns G - 1.
inline std::vector<double> damped_cdf_1d(const CFContext& ctx, int leg, double a, const Lattice& L) {
    auto y = lattice_inverse_1d(L, [&](double u) { return leg_phi(ctx, leg, {u, a}) / cplx(a, -u); });
    for (int j = 0; j < L.n; ++j) y[j] *= std::exp(a * L.x(j));
    return y;
}

// Sum of the periodic images e^{-a m L}, m >= 1, that the lattice adds to a damped distribution.
inline double alias_weight(double a, double L) {
    const double e = std::exp(-std::abs(a) * L);
    return e / (1.0 - e);
}

// Distribution function on a lattice. Left of the mean uses a > 0; right of it a < 0 (when the
// corresponding moment exists) so that the exponential factor never amplifies lattice error. The
// periodic images of the far tail are removed analytically.
inline std::vector<double> cdf_on_lattice_1d(const CFContext& ctx, int leg, double a, const Lattice& L, double mean,
                                             bool two_sided) {
    const double c = alias_weight(a, L.n * L.dx);
    auto y = damped_cdf_1d(ctx, leg, a, L);
    for (double& v : y) v -= c;
    if (two_sided) {
        const auto z = damped_cdf_1d(ctx, leg, -a, L);
        for (int j = 0; j < L.n; ++j)
            if (L.x(j) > mean) y[j] = 1.0 + z[j] + c;
    }
    return y;
}

inline double cdf_cleanup(std::vector<double>& y) {
    const double adj = isotonic(y);
    for (auto& v : y) v = std::clamp(v, 0.0, 1.0);
    return adj;
}

inline double pdf_cleanup(std::vector<double>& y) {
    double worst = 0.0;
    for (auto& v : y)
        if (v < 0) {
            worst = std::max(worst, -v);
            v = 0.0;
        }
    return worst;
}

constexpr double kCleanupBound = 1e-3;

inline std::vector<double> resample(const GridFunction1D& g, const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = g(xs[i]);
    return out;
}

}  // namespace detail

/// Marginal distribution function of X_leg on its native lattice.
inline GridFunction1D marginal_cdf(const CFContext& ctx, int leg, double a, const NumericsConfig& cfg = {}) {
    if (!(a > 0)) throw InputError("marginal_cdf: smoothing parameter must be > 0");
    detail::require_damping_finite(ctx, leg, a);
    const LegMoments mom = leg_moments(ctx, leg);
    const bool two_sided = detail::damping_admissible(ctx, leg, -a);
    const Lattice L = make_lattice(mom, cfg.fft_size_1d, cfg.lattice_sd_1d, two_sided ? 0.0 : a);
    auto y = detail::cdf_on_lattice_1d(ctx, leg, a, L, mom.mean, two_sided);
    const double adj = detail::cdf_cleanup(y);
    if (adj > detail::kCleanupBound)
        throw NumericalError("marginal_cdf: isotonic cleanup " + std::to_string(adj) + " exceeds 1e-3");
    GridFunction1D g(L.xs(), std::move(y), true);
    g.cleanup = adj;
    return g;
}

inline GridFunction1D marginal_cdf(const CFContext& ctx, int leg, double a, const std::vector<double>& x_grid,
                                   const NumericsConfig& cfg = {}) {
    const auto native = marginal_cdf(ctx, leg, a, cfg);
    GridFunction1D g(x_grid, detail::resample(native, x_grid), true);
    g.cleanup = native.cleanup;
    return g;
}

/// Marginal density of X_leg on its native lattice.
inline GridFunction1D marginal_pdf(const CFContext& ctx, int leg, const NumericsConfig& cfg = {}) {
    const Lattice L = make_lattice(leg_moments(ctx, leg), cfg.fft_size_1d, cfg.lattice_sd_1d);
    auto y = detail::lattice_inverse_1d(L, [&](double u) { return detail::leg_phi(ctx, leg, u); });
    double peak = 0.0;
    for (double v : y) peak = std::max(peak, v);
    const double neg = detail::pdf_cleanup(y);
    if (neg > detail::kCleanupBound * std::max(1.0, peak))
        throw NumericalError("marginal_pdf: negative density " + std::to_string(-neg));
    GridFunction1D g(L.xs(), std::move(y), false);
    g.cleanup = neg;
    return g;
}

inline GridFunction1D marginal_pdf(const CFContext& ctx, int leg, const std::vector<double>& x_grid,
                                   const NumericsConfig& cfg = {}) {
    const auto native = marginal_pdf(ctx, leg, cfg);
    GridFunction1D g(x_grid, detail::resample(native, x_grid), false);
    g.cleanup = native.cleanup;
    return g;
}

namespace detail {

struct RawGrid2D {
    Lattice lx, ly;
    std::vector<double> v;
};

// Each quadrant around the mean is inverted with the smoothing signs that keep the exponential factor at
// most one there; a < 0 in a coordinate yields G minus the other leg's marginal, added back from 1D inversions.
inline RawGrid2D joint_cdf_raw(const CFContext& ctx, double a1, double a2, const NumericsConfig& cfg) {
    if (!(a1 > 0 && a2 > 0)) throw InputError("joint_cdf: smoothing parameters must be > 0");
    require_damping_finite(ctx, 1, a1);
    require_damping_finite(ctx, 2, a2);
    const LegMoments m1 = leg_moments(ctx, 1), m2 = leg_moments(ctx, 2);
    const bool neg1 = damping_admissible(ctx, 1, -a1), neg2 = damping_admissible(ctx, 2, -a2);
    const Lattice Lx = make_lattice(m1, cfg.fft_size_2d, cfg.lattice_sd_2d, neg1 ? 0.0 : a1);
    const Lattice Ly = make_lattice(m2, cfg.fft_size_2d, cfg.lattice_sd_2d, neg2 ? 0.0 : a2);
    const int n = Lx.n, m = Ly.n;
    const auto G1 = cdf_on_lattice_1d(ctx, 1, a1, Lx, m1.mean, neg1);
    const auto G2 = cdf_on_lattice_1d(ctx, 2, a2, Ly, m2.mean, neg2);
    const double c1 = alias_weight(a1, Lx.n * Lx.dx), c2 = alias_weight(a2, Ly.n * Ly.dx);

    std::vector<double> v(static_cast<std::size_t>(n) * m, 0.0);
    for (int s1 : {1, -1}) {
        for (int s2 : {1, -1}) {
            if ((s1 < 0 && !neg1) || (s2 < 0 && !neg2)) continue;
            const double b1 = s1 * a1, b2 = s2 * a2;
            auto in1 = [&](int i) { return (neg1 && Lx.x(i) > m1.mean ? -1 : 1) == s1; };
            auto in2 = [&](int j) { return (neg2 && Ly.x(j) > m2.mean ? -1 : 1) == s2; };
            const auto h = lattice_inverse_2d(Lx, Ly, [&](double u1, double u2) {
                return ctx.phi({u1, b1}, {u2, b2}) / (cplx(b1, -u1) * cplx(b2, -u2));
            });
            for (int i = 0; i < n; ++i) {
                if (!in1(i)) continue;
                for (int j = 0; j < m; ++j) {
                    if (!in2(j)) continue;
                    const std::size_t idx = static_cast<std::size_t>(i) * m + j;
                    // the inversion returns K = E[(1{X1<=x} - [s1<0])(1{X2<=y} - [s2<0])] plus its images
                    const double k1 = G1[i] - (s1 < 0), k2 = G2[j] - (s2 < 0);
                    double g = h[idx] * std::exp(b1 * Lx.x(i) + b2 * Ly.x(j)) - c1 * s1 * k2 - c2 * s2 * k1 -
                               c1 * c2 * s1 * s2;
                    if (s1 < 0) g += G2[j];
                    if (s2 < 0) g += G1[i];
                    if (s1 < 0 && s2 < 0) g -= 1.0;
                    v[idx] = g;
                }
            }
        }
    }
    return {Lx, Ly, std::move(v)};
}

}  // namespace detail

/// Joint distribution function of (X1, X2) on the native 2D lattice.
inline GridFunction2D joint_cdf(const CFContext& ctx, double a1, double a2, const NumericsConfig& cfg = {}) {
    auto raw = detail::joint_cdf_raw(ctx, a1, a2, cfg);
    auto& v = raw.v;
    const int n = raw.lx.n, m = raw.ly.n;
    // isotonic along y for each x, then along x for each y; PAV is order preserving so both survive
    double adj = 0.0;
    std::vector<double> line;
    for (int i = 0; i < n; ++i) {
        line.assign(v.begin() + static_cast<std::ptrdiff_t>(i) * m, v.begin() + static_cast<std::ptrdiff_t>(i + 1) * m);
        adj = std::max(adj, detail::isotonic(line));
        std::copy(line.begin(), line.end(), v.begin() + static_cast<std::ptrdiff_t>(i) * m);
    }
    line.resize(n);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) line[i] = v[static_cast<std::size_t>(i) * m + j];
        adj = std::max(adj, detail::isotonic(line));
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * m + j] = std::clamp(line[i], 0.0, 1.0);
    }
    if (adj > detail::kCleanupBound)
        throw NumericalError("joint_cdf: isotonic cleanup " + std::to_string(adj) + " exceeds 1e-3");
    GridFunction2D g(raw.lx.xs(), raw.ly.xs(), std::move(v), true);
    g.cleanup = adj;
    return g;
}

/// Joint density of (X1, X2) on the native 2D lattice.
inline GridFunction2D joint_pdf(const CFContext& ctx, const NumericsConfig& cfg = {}) {
    const Lattice Lx = make_lattice(leg_moments(ctx, 1), cfg.fft_size_2d, cfg.lattice_sd_2d);
    const Lattice Ly = make_lattice(leg_moments(ctx, 2), cfg.fft_size_2d, cfg.lattice_sd_2d);
    auto v = detail::lattice_inverse_2d(Lx, Ly, [&](double u1, double u2) { return ctx.phi(u1, u2); });
    double peak = 0.0;
    for (double x : v) peak = std::max(peak, x);
    const double neg = detail::pdf_cleanup(v);
    if (neg > detail::kCleanupBound * std::max(1.0, peak))
        throw NumericalError("joint_pdf: negative density " + std::to_string(-neg));
    GridFunction2D g(Lx.xs(), Ly.xs(), std::move(v), false);
    g.cleanup = neg;
    return g;
}

namespace detail {

inline GridFunction2D resample2d(const GridFunction2D& g, const std::vector<double>& xs, const std::vector<double>& ys) {
    std::vector<double> v(xs.size() * ys.size());
    parallel_for(xs.size(), [&](std::size_t i) {
        for (std::size_t j = 0; j < ys.size(); ++j) v[i * ys.size() + j] = g(xs[i], ys[j]);
    });
    GridFunction2D out(xs, ys, std::move(v), g.is_cdf());
    out.cleanup = g.cleanup;
    return out;
}

}  // namespace detail

inline GridFunction2D joint_cdf(const CFContext& ctx, double a1, double a2, const std::vector<double>& x_grid,
                                const std::vector<double>& y_grid, const NumericsConfig& cfg = {}) {
    return detail::resample2d(joint_cdf(ctx, a1, a2, cfg), x_grid, y_grid);
}

inline GridFunction2D joint_pdf(const CFContext& ctx, const std::vector<double>& x_grid,
                                const std::vector<double>& y_grid, const NumericsConfig& cfg = {}) {
    return detail::resample2d(joint_pdf(ctx, cfg), x_grid, y_grid);
}

}  // namespace svcurve
