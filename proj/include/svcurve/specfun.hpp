#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>

#include "svcurve/error.hpp"

namespace svcurve {

using cplx = std::complex<double>;

namespace detail {

inline constexpr double lanczos_g = 7.0;
inline constexpr std::array<double, 9> lanczos_p = {
    0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
    771.32342877765313,      -176.61502916214059,   12.507343278686905,
    -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};

inline bool is_nonpositive_integer(cplx z) {
    return z.imag() == 0.0 && z.real() <= 0.0 && z.real() == std::round(z.real());
}

// log sin(pi z) without overflow for large |Im z|; any branch.
inline cplx log_sin_pi(cplx z) {
    const cplx w = std::numbers::pi * z;
    const cplx I(0.0, 1.0);
    if (std::abs(w.imag()) < 20.0) return std::log(std::sin(w));
    if (w.imag() > 0) return -I * w + std::log(std::exp(2.0 * I * w) - 1.0) - std::log(2.0 * I);
    return I * w + std::log(1.0 - std::exp(-2.0 * I * w)) - std::log(2.0 * I);
}

inline cplx lanczos_log_gamma(cplx z) {  // Re z >= 0.5
    z -= 1.0;
    cplx x = lanczos_p[0];
    for (int k = 1; k < 9; ++k) x += lanczos_p[k] / (z + static_cast<double>(k));
    const cplx t = z + lanczos_g + 0.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(x);
}

}  // namespace detail

/// Complex Gamma function (Lanczos, g = 7, reflection for Re z < 0.5).
inline cplx gamma_complex(cplx z) {
    if (detail::is_nonpositive_integer(z)) throw NumericalError("gamma_complex: pole at non-positive integer");
    if (z.real() < 0.5) return std::numbers::pi / (std::sin(std::numbers::pi * z) * gamma_complex(1.0 - z));
    z -= 1.0;
    cplx x = detail::lanczos_p[0];
    for (int k = 1; k < 9; ++k) x += detail::lanczos_p[k] / (z + static_cast<double>(k));
    const cplx t = z + detail::lanczos_g + 0.5;
    return std::sqrt(2.0 * std::numbers::pi) * std::exp((z + 0.5) * std::log(t) - t) * x;
}

/// 1/Gamma(z); zero at the poles.
inline cplx rgamma_complex(cplx z) {
    if (detail::is_nonpositive_integer(z)) return 0.0;
    return 1.0 / gamma_complex(z);
}

/// A logarithm of Gamma(z): exp(log_gamma_complex(z)) == Gamma(z); the branch is unspecified.
inline cplx log_gamma_complex(cplx z) {
    if (detail::is_nonpositive_integer(z)) throw NumericalError("log_gamma_complex: pole at non-positive integer");
    if (z.real() < 0.5)
        return std::log(std::numbers::pi) - detail::log_sin_pi(z) - detail::lanczos_log_gamma(1.0 - z);
    return detail::lanczos_log_gamma(z);
}

enum class KummerMethod { series, transformed_series, u_reflection, u_integral };

struct KummerResult {
    cplx value;
    KummerMethod method = KummerMethod::series;
    int terms_used = 0;
    bool converged = false;
    double error_estimate = 0.0;  ///< estimated relative error
};

struct KummerOptions {
    int max_terms = 10000;
    double tolerance = 1e-9;  ///< accepted relative error estimate
};

namespace detail {

struct SeriesSum {
    cplx sum;
    double abs_sum;
    int terms;
    bool exhausted;
};

inline SeriesSum kummer_series(cplx a, cplx b, cplx z, int max_terms) {
    cplx term = 1.0, sum = 1.0;
    double abs_sum = 1.0;
    int small = 0, n = 1;
    for (; n < max_terms; ++n) {
        term *= (a + double(n - 1)) / (b + double(n - 1)) * z / double(n);
        sum += term;
        abs_sum += std::abs(term);
        if (std::abs(term) < 1e-15 * std::abs(sum)) {
            if (++small == 3) break;
        } else {
            small = 0;
        }
    }
    return {sum, abs_sum, n, n >= max_terms};
}

// U(a,b,z) = z^{-a}/Gamma(a) int_0^{inf e^{i theta}} e^{-s} s^{a-1} (1+s/z)^{b-a-1} ds for Re a > 0.
// The ray is rotated away from the singularity s = -z; s = e^{i theta + y}, trapezoid rule in y at
// steps h and h/2.
inline KummerResult kummer_u_integral(cplx a, cplx b, cplx z) {
    const double pi = std::numbers::pi;
    const cplx I(0.0, 1.0);
    const cplx c = b - a - 1.0;
    const double argz = std::arg(z);
    const double gap = pi - std::abs(argz);  // angle between -z and the positive real axis
    const double rot = std::max(0.0, (pi / 2.0 - gap) / 2.0);
    const double theta = argz >= 0 ? rot : -rot;
    const double d = 0.8 * std::min(pi / 2.0 - rot, gap + rot);
    const double growth = (std::abs(a.imag()) + std::abs(c.imag())) * d;
    const double h = 2.0 * pi * d / (40.0 + growth);
    const cplx ray = std::exp(I * theta);
    const cplx ray_over_z = ray / z;
    auto f = [&](double y) {
        const double w = std::exp(y);
        return std::exp(-ray * w + a * (y + I * theta) + c * std::log(1.0 + ray_over_z * w));
    };
    const double y0 = std::log(std::max(1.0, std::abs(a.real()) + std::max(0.0, c.real())));
    auto sweep = [&](double step) {
        cplx sum = f(y0);
        double peak = std::abs(sum);
        for (int dir : {-1, 1}) {
            int quiet = 0;
            for (int k = 1; k < 1000000; ++k) {
                const cplx v = f(y0 + dir * k * step);
                sum += v;
                const double m = std::abs(v);
                peak = std::max(peak, m);
                if (m < 1e-18 * peak) {
                    if (++quiet == 4) break;
                } else {
                    quiet = 0;
                }
            }
        }
        return sum * step;
    };
    const cplx coarse = sweep(h);
    const cplx fine = sweep(h / 2.0);
    KummerResult r;
    r.value = std::exp(-a * std::log(z) - log_gamma_complex(a)) * fine;
    r.method = KummerMethod::u_integral;
    // trapezoid error decays like exp(-2 pi d / h): halving h squares the relative error of the coarse sum
    const double coarse_err = std::abs(fine - coarse) / std::max(std::abs(fine), 1e-300);
    r.error_estimate = std::max(coarse_err * coarse_err, 1e-16);
    r.converged = std::isfinite(std::abs(r.value)) && coarse_err < 1e-4;
    return r;
}

}  // namespace detail

/// Kummer U(a,b,z), principal branch (|arg z| <= pi), any b. Integral representation, with the
/// recurrence U(a-1) = -(b-2a-z) U(a) - a(a-b+1) U(a+1) applied downward when Re a < 1.
inline KummerResult kummer_u(cplx a, cplx b, cplx z, const KummerOptions& opt = {}) {
    if (z == cplx(0.0)) throw NumericalError("kummer_u: z = 0");
    const int m = a.real() >= 1.0 ? 0 : static_cast<int>(std::ceil(1.0 - a.real()));
    KummerResult r;
    if (m == 0) {
        r = detail::kummer_u_integral(a, b, z);
    } else {
        const auto r1 = detail::kummer_u_integral(a + double(m), b, z);
        const auto r2 = detail::kummer_u_integral(a + double(m + 1), b, z);
        cplx u_hi = r2.value, u = r1.value;
        for (int k = m; k > 0; --k) {
            const cplx ak = a + double(k);
            const cplx u_lo = -(b - 2.0 * ak - z) * u - ak * (ak - b + 1.0) * u_hi;
            u_hi = u;
            u = u_lo;
        }
        r = r1;
        r.value = u;
        r.error_estimate = std::max(r1.error_estimate, r2.error_estimate);
        r.converged = std::isfinite(std::abs(u));
    }
    r.converged = r.converged && r.error_estimate <= opt.tolerance;
    if (!r.converged)
        throw NumericalError("kummer_u: integral did not reach tolerance (|z| = " + std::to_string(std::abs(z)) + ")");
    return r;
}

/// Kummer M(a,b,z) = 1F1(a;b;z) by power series (Kummer's transformation for Re z < 0). When the
/// series loses too much to cancellation, M is assembled from two U values by the connection formula.
/// Throws NumericalError when neither route reaches the tolerance.
inline KummerResult kummer_m(cplx a, cplx b, cplx z, const KummerOptions& opt = {}) {
    if (detail::is_nonpositive_integer(b)) throw NumericalError("kummer_m: b is a non-positive integer");
    if (z == cplx(0.0)) return {cplx(1.0), KummerMethod::series, 0, true, 0.0};
    const bool transform = z.real() < 0.0;
    const auto s = transform ? detail::kummer_series(b - a, b, -z, opt.max_terms)
                             : detail::kummer_series(a, b, z, opt.max_terms);
    KummerResult r;
    r.method = transform ? KummerMethod::transformed_series : KummerMethod::series;
    r.terms_used = s.terms;
    r.value = transform ? std::exp(z) * s.sum : s.sum;
    const double mag = std::abs(s.sum);
    r.error_estimate = mag > 0 ? 4.0 * std::numeric_limits<double>::epsilon() * s.abs_sum / mag
                               : std::numeric_limits<double>::infinity();
    r.converged = !s.exhausted && r.error_estimate <= opt.tolerance && std::isfinite(std::abs(r.value));
    if (r.converged) return r;

    // M/Gamma(b) = e^{-s pi i a} U(a,b,z)/Gamma(b-a) + e^{s pi i (b-a)} e^z U(b-a,b,-z)/Gamma(a),
    // s = -1 for Im z > 0 and +1 otherwise so that -z stays on the principal branch.
    const double sg = z.imag() > 0 ? -1.0 : 1.0;
    const cplx I(0.0, 1.0);
    const double pi = std::numbers::pi;
    cplx t1 = 0.0, t2 = 0.0;
    double e1 = 0.0, e2 = 0.0;
    const cplx rg_ba = rgamma_complex(b - a), rg_a = rgamma_complex(a);
    if (rg_ba != cplx(0.0)) {
        const auto u1 = kummer_u(a, b, z, opt);
        t1 = std::exp(-sg * pi * I * a) * u1.value * rg_ba;
        e1 = u1.error_estimate;
    }
    if (rg_a != cplx(0.0)) {
        const auto u2 = kummer_u(b - a, b, -z, opt);
        t2 = std::exp(sg * pi * I * (b - a) + z) * u2.value * rg_a;
        e2 = u2.error_estimate;
    }
    const cplx sum = t1 + t2;
    KummerResult c;
    c.value = gamma_complex(b) * sum;
    c.method = KummerMethod::u_integral;
    c.terms_used = 0;
    c.error_estimate = (std::abs(t1) * (e1 + 1e-15) + std::abs(t2) * (e2 + 1e-15)) / std::max(std::abs(sum), 1e-300);
    c.converged = c.error_estimate <= opt.tolerance && std::isfinite(std::abs(c.value));
    if (!c.converged)
        throw NumericalError("kummer_m: no route reached the tolerance (|z| = " + std::to_string(std::abs(z)) + ")");
    return c;
}

/// U(a,b,z) from two M values (reflection formula). b must not be an integer.
inline KummerResult kummer_u_reflection(cplx a, cplx b, cplx z, const KummerOptions& opt = {}) {
    if (z == cplx(0.0)) throw NumericalError("kummer_u: z = 0");
    if (b.imag() == 0.0 && b.real() == std::round(b.real()))
        throw NumericalError("kummer_u: integer b is a removable singularity of the reflection formula");
    const auto m1 = kummer_m(a, b, z, opt);
    const auto m2 = kummer_m(1.0 + a - b, 2.0 - b, z, opt);
    const cplx t1 = m1.value * rgamma_complex(1.0 + a - b) * rgamma_complex(b);
    const cplx t2 = std::pow(z, 1.0 - b) * m2.value * rgamma_complex(a) * rgamma_complex(2.0 - b);
    KummerResult r;
    r.value = std::numbers::pi / std::sin(std::numbers::pi * b) * (t1 - t2);
    r.method = KummerMethod::u_reflection;
    r.terms_used = m1.terms_used + m2.terms_used;
    const double diff = std::abs(t1 - t2);
    const double scale = std::abs(t1) * (m1.error_estimate + 1e-15) + std::abs(t2) * (m2.error_estimate + 1e-15);
    r.error_estimate = diff > 0 ? scale / diff : std::numeric_limits<double>::infinity();
    r.converged = r.error_estimate <= opt.tolerance && std::isfinite(std::abs(r.value));
    return r;
}

}  // namespace svcurve
