#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "svcurve/error.hpp"

namespace svcurve {

enum class OptionType { call, put };

/// One CIR variance factor with Samuelson damping.
struct FactorParams {
    double kappa = 1.0;
    double theta = 0.1;
    double sigma = 0.2;
    double rho = 0.0;
    double v0 = 0.1;
    double lambda = 0.0;

    [[nodiscard]] double feller_ratio() const { return 2.0 * kappa * theta / (sigma * sigma); }
};

/// Deterministic volatility factor sigma_hat * exp(-lambda (T_m - t)).
struct DeterministicFactor {
    double sigma_hat = 0.0;
    double lambda = 0.0;
};

struct ModelParams {
    std::vector<FactorParams> factors;
    std::vector<DeterministicFactor> deterministic_factors;

    [[nodiscard]] std::size_t size() const { return factors.size() + deterministic_factors.size(); }
};

struct Violation {
    std::string field;
    std::string message;
    bool fatal = true;
};

inline std::vector<Violation> validate(const ModelParams& p) {
    std::vector<Violation> out;
    if (p.factors.empty() && p.deterministic_factors.empty())
        out.push_back({"factors", "model needs at least one factor", true});
    auto bad = [](double x) { return !std::isfinite(x); };
    for (std::size_t j = 0; j < p.factors.size(); ++j) {
        const auto& f = p.factors[j];
        const std::string pre = "factors[" + std::to_string(j) + "].";
        if (bad(f.kappa) || f.kappa <= 0) out.push_back({pre + "kappa", "kappa must be > 0", true});
        if (bad(f.theta) || f.theta <= 0) out.push_back({pre + "theta", "theta must be > 0", true});
        if (bad(f.sigma) || f.sigma < 0) out.push_back({pre + "sigma", "sigma must be >= 0", true});
        if (f.sigma == 0)
            out.push_back({pre + "sigma", "sigma = 0 freezes the variance path; only Monte Carlo accepts it", false});
        if (bad(f.v0) || f.v0 <= 0) out.push_back({pre + "v0", "v0 must be > 0", true});
        if (bad(f.lambda) || f.lambda < 0) out.push_back({pre + "lambda", "lambda must be >= 0", true});
        if (bad(f.rho) || f.rho <= -1.0 || f.rho >= 1.0)
            out.push_back({pre + "rho", "rho must lie in the open interval (-1, 1)", true});
        if (f.kappa > 0 && f.theta > 0 && f.sigma > 0 && f.feller_ratio() < 1.0)
            out.push_back({pre + "feller", "Feller ratio " + std::to_string(f.feller_ratio()) + " < 1", false});
    }
    for (std::size_t j = 0; j < p.deterministic_factors.size(); ++j) {
        const auto& d = p.deterministic_factors[j];
        const std::string pre = "deterministic_factors[" + std::to_string(j) + "].";
        if (bad(d.sigma_hat) || d.sigma_hat < 0) out.push_back({pre + "sigma_hat", "sigma_hat must be >= 0", true});
        if (bad(d.lambda) || d.lambda < 0) out.push_back({pre + "lambda", "lambda must be >= 0", true});
    }
    return out;
}

inline bool has_fatal(const std::vector<Violation>& v) {
    return std::any_of(v.begin(), v.end(), [](const Violation& x) { return x.fatal; });
}

inline void require_valid(const ModelParams& p) {
    for (const auto& v : validate(p))
        if (v.fatal) throw InputError(v.field + ": " + v.message);
}

enum class CurveInterpolation { log_linear, linear };

/// Initial futures curve T_m -> F(0, T_m); flat extrapolation beyond the quoted range.
class FuturesCurve {
public:
    FuturesCurve() = default;
    FuturesCurve(std::vector<double> maturities, std::vector<double> prices,
                 CurveInterpolation interp = CurveInterpolation::log_linear)
        : t_(std::move(maturities)), f_(std::move(prices)), interp_(interp) {
        if (t_.empty() || t_.size() != f_.size()) throw InputError("futures curve: empty or ragged");
        for (std::size_t i = 0; i < t_.size(); ++i) {
            if (!(f_[i] > 0) || !std::isfinite(f_[i])) throw InputError("futures curve: prices must be positive");
            if (!(t_[i] >= 0)) throw InputError("futures curve: maturities must be non-negative");
            if (i > 0 && !(t_[i] > t_[i - 1])) throw InputError("futures curve: maturities must be strictly increasing");
        }
    }

    static FuturesCurve flat(double price) { return FuturesCurve({0.0}, {price}); }

    [[nodiscard]] double price(double T) const {
        if (t_.empty()) throw InputError("futures curve: no points");
        if (T <= t_.front()) return f_.front();
        if (T >= t_.back()) return f_.back();
        auto it = std::upper_bound(t_.begin(), t_.end(), T);
        std::size_t i = static_cast<std::size_t>(it - t_.begin());
        if (t_[i - 1] == T) return f_[i - 1];
        double w = (T - t_[i - 1]) / (t_[i] - t_[i - 1]);
        if (interp_ == CurveInterpolation::linear) return f_[i - 1] + w * (f_[i] - f_[i - 1]);
        return std::exp(std::log(f_[i - 1]) + w * (std::log(f_[i]) - std::log(f_[i - 1])));
    }

    [[nodiscard]] const std::vector<double>& maturities() const { return t_; }
    [[nodiscard]] const std::vector<double>& prices() const { return f_; }
    [[nodiscard]] CurveInterpolation interpolation() const { return interp_; }

private:
    std::vector<double> t_;
    std::vector<double> f_;
    CurveInterpolation interp_ = CurveInterpolation::log_linear;
};

struct VanillaContract {
    double option_maturity = 1.0;
    double futures_maturity = 1.0;
    double strike = 100.0;
    OptionType type = OptionType::call;
    double rate = 0.0;

    void validate() const {
        if (!(option_maturity > 0) || !(futures_maturity >= option_maturity))
            throw InputError("vanilla contract: need 0 < T <= T_m");
        if (!(strike > 0)) throw InputError("vanilla contract: strike must be positive");
        if (!std::isfinite(rate)) throw InputError("vanilla contract: rate must be finite");
    }
};

struct CsoContract {
    double option_maturity = 0.25;
    double t1 = 0.25;
    double t2 = 0.75;
    double strike = 0.0;
    OptionType type = OptionType::call;
    double rate = 0.0;

    void validate() const {
        if (!(option_maturity > 0) || !(t1 >= option_maturity) || !(t2 > t1))
            throw InputError("spread contract: need 0 < T <= T1 < T2");
        if (!std::isfinite(strike) || !std::isfinite(rate)) throw InputError("spread contract: non-finite strike or rate");
    }
};

struct NumericsConfig {
    // semi-infinite quadrature
    double quad_upper_limit = 0.0;  ///< 0 selects the truncation by a tail test
    int quad_nodes = 16;            ///< Gauss-Legendre nodes per panel
    double quad_tolerance = 1e-10;
    // FFT lattices
    int fft_size_1d = 4096;
    int fft_size_2d = 512;
    double lattice_sd_1d = 12.0;  ///< half-width of x-lattices in standard deviations
    double lattice_sd_2d = 12.0;
    // inversion parameters
    double carr_madan_delta = 1.0;
    double smoothing_a = 3.0;
    double smoothing_a1 = 3.0;
    double smoothing_a2 = 3.0;
    double hz_epsilon1 = -3.0;
    double hz_epsilon2 = 1.5;
    double hz_du = 0.25;
    // Riccati integration
    double ode_tolerance = 1e-10;
    // Monte Carlo
    long mc_paths = 100000;
    int mc_steps_per_year = 200;
    unsigned long long mc_seed = 42;
    // root finding
    double root_tolerance = 1e-10;

    void validate() const {
        auto pow2 = [](int n) { return n > 0 && (n & (n - 1)) == 0; };
        if (!(carr_madan_delta > 0)) throw InputError("config: carr_madan_delta must be > 0");
        if (!(smoothing_a > 0 && smoothing_a1 > 0 && smoothing_a2 > 0))
            throw InputError("config: smoothing parameters must be > 0");
        if (!pow2(fft_size_1d) || !pow2(fft_size_2d) || fft_size_1d < 256 || fft_size_2d < 256)
            throw InputError("config: FFT sizes must be powers of two >= 256");
        if (!(quad_tolerance > 0 && ode_tolerance > 0 && root_tolerance > 0))
            throw InputError("config: tolerances must be > 0");
        if (quad_nodes < 2) throw InputError("config: quad_nodes must be >= 2");
        if (!(lattice_sd_1d > 0 && lattice_sd_2d > 0 && hz_du > 0)) throw InputError("config: lattice widths must be > 0");
        if (mc_paths < 1 || mc_steps_per_year < 1) throw InputError("config: MC sizes must be positive");
    }
};

/// Two-factor reference parameter set used across the tests and the acceptance run.
inline ModelParams reference_model() {
    ModelParams m;
    m.factors.push_back({1.0, 0.16, 0.25, 0.0, 0.16, 0.1});
    m.factors.push_back({1.0, 0.09, 0.20, 0.0, 0.09, 2.0});
    return m;
}

}  // namespace svcurve
