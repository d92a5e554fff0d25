#pragma once

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "svcurve/model.hpp"
#include "svcurve/pricers.hpp"

// Joint Gaussian law of (X1, X2) in a pure deterministic-volatility model, integrated analytically.
struct CsGaussian {
    double v11 = 0, v22 = 0, v12 = 0;

    CsGaussian(const std::vector<svcurve::DeterministicFactor>& d, double T, double T1, double T2) {
        for (const auto& f : d) {
            const double I = f.lambda == 0 ? T : std::expm1(2 * f.lambda * T) / (2 * f.lambda);
            const double s2 = f.sigma_hat * f.sigma_hat * I;
            v11 += s2 * std::exp(-2 * f.lambda * T1);
            v22 += s2 * std::exp(-2 * f.lambda * T2);
            v12 += s2 * std::exp(-f.lambda * (T1 + T2));
        }
    }
    double m1() const { return -0.5 * v11; }
    double m2() const { return -0.5 * v22; }
    double sd1() const { return std::sqrt(v11); }
    double sd2() const { return std::sqrt(v22); }
    double rho() const { return v12 / std::sqrt(v11 * v22); }
    double density(double x, double y) const {
        const double a = (x - m1()) / sd1(), b = (y - m2()) / sd2(), r = rho();
        const double q = (a * a - 2 * r * a * b + b * b) / (1 - r * r);
        return std::exp(-0.5 * q) / (2 * M_PI * sd1() * sd2() * std::sqrt(1 - r * r));
    }
};

inline double margrabe(const CsGaussian& o, double F1, double F2, double T, double r) {
    const double s = std::sqrt(o.v11 + o.v22 - 2 * o.v12);
    const double d1 = (std::log(F1 / F2) + 0.5 * s * s) / s;
    return std::exp(-r * T) * (F1 * svcurve::norm_cdf(d1) - F2 * svcurve::norm_cdf(d1 - s));
}

// E(F1 - F2 - K)^+ for jointly lognormal legs: Black-76 in F1 conditional on X2, integrated over X2.
inline double gaussian_spread(const CsGaussian& o, double F1, double F2, double K, double T, double r) {
    const double rho = o.rho(), s1c = o.sd1() * std::sqrt(1 - rho * rho);
    auto f = [&](double z) {
        const double y = o.m2() + o.sd2() * z;
        const double mc = o.m1() + rho * o.sd1() * z;
        const double fwd = F1 * std::exp(mc + 0.5 * s1c * s1c);
        const double strike = F2 * std::exp(y) + K;
        double inner;
        if (strike <= 0) {
            inner = fwd - strike;
        } else {
            const double d1 = (std::log(fwd / strike) + 0.5 * s1c * s1c) / s1c;
            inner = fwd * svcurve::norm_cdf(d1) - strike * svcurve::norm_cdf(d1 - s1c);
        }
        return inner * std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI);
    };
    const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12.0, 12.0, 15, 1e-13);
    return std::exp(-r * T) * v;
}
