#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "svcurve/error.hpp"
#include "svcurve/model.hpp"
#include "svcurve/parallel.hpp"
#include "svcurve/pricers.hpp"

namespace svcurve {

enum class PriceScheme { log_euler, euler };

struct McConfig {
    std::size_t paths = 100000;
    double steps_per_year = 200;
    std::uint64_t seed = 42;
    bool antithetic = true;
    PriceScheme scheme = PriceScheme::log_euler;
    unsigned threads = 0;  ///< 0: worker_count()

    static McConfig from(const NumericsConfig& cfg) {
        McConfig m;
        m.paths = cfg.mc_paths;
        m.steps_per_year = cfg.mc_steps_per_year;
        m.seed = cfg.mc_seed;
        return m;
    }
};

/// Paths of the variance factors and of ln F(t, T_m)/F(0, T_m) on a uniform time grid.
struct PathBundle {
    std::vector<double> time;
    std::vector<double> maturities;
    std::size_t paths = 0;
    /// variance[j][p * (steps + 1) + n], truncated at zero as the scheme uses it
    std::vector<std::vector<double>> variance;
    /// log_price[m][p * (steps + 1) + n]
    std::vector<std::vector<double>> log_price;
    std::uint64_t seed = 0;
    std::size_t chunk_paths = 0;

    [[nodiscard]] std::size_t steps() const { return time.size() - 1; }
    [[nodiscard]] double v(std::size_t j, std::size_t p, std::size_t n) const { return variance[j][p * time.size() + n]; }
    [[nodiscard]] double x(std::size_t m, std::size_t p, std::size_t n) const { return log_price[m][p * time.size() + n]; }
};

namespace detail {

inline constexpr std::size_t kMcChunk = 4096;  // paths per random stream

inline std::size_t mc_steps(double T, double steps_per_year) {
    if (!(T >= 0) || !(steps_per_year > 0)) throw InputError("Monte Carlo: need T >= 0 and steps per year > 0");
    if (T == 0) return 0;
    const auto n = static_cast<std::size_t>(std::ceil(T * steps_per_year - 1e-9));
    if (static_cast<double>(n) < 50.0 * T) throw InputError("Monte Carlo: fewer than 50 steps per year");
    return std::max<std::size_t>(n, 1);
}

// int_a^b e^{-2 lam (Tm - s)} ds
inline double damped_variance_weight(double lam, double Tm, double a, double b) {
    if (lam == 0) return b - a;
    return std::exp(-2 * lam * (Tm - b)) * -std::expm1(-2 * lam * (b - a)) / (2 * lam);
}

/// Simulation engine. Paths are simulated in chunks with independent streams seeded by (seed, chunk),
/// so results do not depend on the thread count. visit(chunk, path, v, x) sees each path's state at the
/// horizon; with antithetic pairs, paths 2k and 2k+1 share normals with opposite signs.
class Engine {
public:
    Engine(const ModelParams& model, std::vector<double> maturities, double horizon, const McConfig& cfg)
        : model_(model), mats_(std::move(maturities)), T_(horizon), cfg_(cfg) {
        require_valid(model_);
        if (cfg_.paths == 0) throw InputError("Monte Carlo: need at least one path");
        if (cfg_.antithetic && cfg_.paths % 2) ++cfg_.paths;
        for (double m : mats_)
            if (!(m >= T_)) throw InputError("Monte Carlo: futures maturity before the horizon");
        steps_ = mc_steps(T_, cfg_.steps_per_year);
        dt_ = steps_ ? T_ / static_cast<double>(steps_) : 0.0;
        const std::size_t nf = model_.size();
        w_.assign(mats_.size() * nf * steps_, 0.0);
        for (std::size_t m = 0; m < mats_.size(); ++m)
            for (std::size_t j = 0; j < nf; ++j) {
                const double lam = j < model_.factors.size() ? model_.factors[j].lambda
                                                             : model_.deterministic_factors[j - model_.factors.size()].lambda;
                for (std::size_t n = 0; n < steps_; ++n)
                    w_[(m * nf + j) * steps_ + n] = damped_variance_weight(lam, mats_[m], n * dt_, (n + 1) * dt_);
            }
    }

    [[nodiscard]] std::size_t steps() const { return steps_; }
    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] std::size_t paths() const { return cfg_.paths; }
    [[nodiscard]] std::size_t chunks() const { return (cfg_.paths + kMcChunk - 1) / kMcChunk; }

    /// record(path, step, v, x) is called at every grid time when set (used to keep whole paths).
    template <class Visit, class Record>
    void run_chunk(std::size_t chunk, Visit&& visit, Record&& record) const {
        const std::size_t ns = model_.factors.size(), nd = model_.deterministic_factors.size(), nf = ns + nd;
        const std::size_t nm = mats_.size();
        const std::size_t p0 = chunk * kMcChunk, p1 = std::min(cfg_.paths, p0 + kMcChunk);
        std::seed_seq sseq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                           static_cast<std::uint32_t>(chunk), static_cast<std::uint32_t>(chunk >> 32)};
        std::mt19937_64 rng(sseq);
        std::normal_distribution<double> N01;
        const std::size_t width = cfg_.antithetic ? 2 : 1;
        std::vector<double> v(width * ns), x(width * nm), z(2 * ns + nd);
        for (std::size_t p = p0; p < p1; p += width) {
            const std::size_t w = std::min(width, p1 - p);
            for (std::size_t a = 0; a < w; ++a) {
                for (std::size_t j = 0; j < ns; ++j) v[a * ns + j] = model_.factors[j].v0;
                for (std::size_t m = 0; m < nm; ++m) x[a * nm + m] = 0.0;
                if constexpr (!std::is_same_v<std::decay_t<Record>, std::nullptr_t>)
                    record(p + a, 0, &v[a * ns], &x[a * nm]);
            }
            for (std::size_t n = 0; n < steps_; ++n) {
                for (auto& zi : z) zi = N01(rng);
                for (std::size_t a = 0; a < w; ++a) {
                    const double sgn = a == 0 ? 1.0 : -1.0;
                    double* va = &v[a * ns];
                    double* xa = &x[a * nm];
                    for (std::size_t m = 0; m < nm; ++m) {
                        double drift = 0.0, diff = 0.0;
                        for (std::size_t j = 0; j < nf; ++j) {
                            const double W = w_[(m * nf + j) * steps_ + n];
                            double var, zb;
                            if (j < ns) {
                                const double rho = model_.factors[j].rho;
                                var = std::max(va[j], 0.0) * W;
                                zb = rho * z[2 * j] + std::sqrt(1 - rho * rho) * z[2 * j + 1];
                            } else {
                                const double s = model_.deterministic_factors[j - ns].sigma_hat;
                                var = s * s * W;
                                zb = z[2 * ns + (j - ns)];
                            }
                            drift -= 0.5 * var;
                            diff += std::sqrt(var) * sgn * zb;
                        }
                        if (cfg_.scheme == PriceScheme::log_euler) {
                            xa[m] += drift + diff;
                        } else {
                            const double f = std::exp(xa[m]) * (1.0 + diff);
                            xa[m] = f > 0 ? std::log(f) : -INFINITY;
                        }
                    }
                    for (std::size_t j = 0; j < ns; ++j) {
                        const auto& fp = model_.factors[j];
                        const double vp = std::max(va[j], 0.0);
                        va[j] += fp.kappa * (fp.theta - vp) * dt_ + fp.sigma * std::sqrt(vp * dt_) * sgn * z[2 * j];
                    }
                    if constexpr (!std::is_same_v<std::decay_t<Record>, std::nullptr_t>)
                        record(p + a, n + 1, va, xa);
                }
            }
            for (std::size_t a = 0; a < w; ++a) visit(p + a, &v[a * ns], &x[a * nm]);
        }
    }

private:
    ModelParams model_;
    std::vector<double> mats_;
    double T_;
    McConfig cfg_;
    std::size_t steps_ = 0;
    double dt_ = 0.0;
    std::vector<double> w_;
};

// Mean and standard error over samples, one sample per antithetic pair (or per path).
struct Moments {
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    void add(double s) {
        sum += s;
        sumsq += s * s;
        ++n;
    }
    void merge(const Moments& o) {
        sum += o.sum;
        sumsq += o.sumsq;
        n += o.n;
    }
    [[nodiscard]] double mean() const { return n ? sum / n : NAN; }
    [[nodiscard]] double se() const {
        if (n < 2) return NAN;
        const double m = mean();
        return std::sqrt(std::max(0.0, (sumsq / n - m * m) * n / (n - 1)) / n);
    }
};

// Runs the engine and averages k payoffs per path; payoff(x, v, out) fills out[0..k).
template <class Payoff>
std::vector<Moments> mc_expectations(const Engine& eng, std::size_t k, bool antithetic, unsigned threads, Payoff&& payoff) {
    const std::size_t nc = eng.chunks();
    std::vector<std::vector<Moments>> per(nc, std::vector<Moments>(k));
    parallel_for(nc, [&](std::size_t c) {
        std::vector<double> pair(k, 0.0), out(k);
        int in_pair = 0;
        eng.run_chunk(c, [&](std::size_t, const double* v, const double* x) {
            payoff(x, v, out.data());
            for (std::size_t i = 0; i < k; ++i) pair[i] += out[i];
            if (!antithetic || ++in_pair == 2) {
                const double d = antithetic ? 2.0 : 1.0;
                for (std::size_t i = 0; i < k; ++i) {
                    per[c][i].add(pair[i] / d);
                    pair[i] = 0.0;
                }
                in_pair = 0;
            }
        }, nullptr);
    }, threads);
    std::vector<Moments> total(k);
    for (const auto& pc : per)
        for (std::size_t i = 0; i < k; ++i) total[i].merge(pc[i]);
    return total;
}

}  // namespace detail

/// Whole paths, kept in memory: meant for diagnostics and small path counts.
inline PathBundle simulate(const ModelParams& model, const std::vector<double>& maturities, double T, std::size_t steps,
                           std::size_t paths, std::uint64_t seed, PriceScheme scheme = PriceScheme::log_euler,
                           bool antithetic = true) {
    if (steps == 0 || !(T > 0)) throw InputError("simulate: need T > 0 and steps > 0");
    McConfig cfg;
    cfg.paths = paths;
    cfg.steps_per_year = static_cast<double>(steps) / T;
    cfg.seed = seed;
    cfg.scheme = scheme;
    cfg.antithetic = antithetic;
    const detail::Engine eng(model, maturities, T, cfg);
    PathBundle b;
    b.paths = eng.paths();
    b.maturities = maturities;
    b.seed = seed;
    b.chunk_paths = detail::kMcChunk;
    for (std::size_t n = 0; n <= eng.steps(); ++n) b.time.push_back(n * eng.dt());
    const std::size_t nt = b.time.size(), ns = model.factors.size();
    b.variance.assign(ns, std::vector<double>(b.paths * nt));
    b.log_price.assign(maturities.size(), std::vector<double>(b.paths * nt));
    parallel_for(eng.chunks(), [&](std::size_t c) {
        eng.run_chunk(c, [](std::size_t, const double*, const double*) {}, [&](std::size_t p, std::size_t n, const double* v, const double* x) {
            for (std::size_t j = 0; j < ns; ++j) b.variance[j][p * nt + n] = std::max(v[j], 0.0);
            for (std::size_t m = 0; m < maturities.size(); ++m) b.log_price[m][p * nt + n] = x[m];
        });
    });
    return b;
}

// ---------------------------------------------------------------------------------------------
// instantaneous correlation

struct CorrelationStudy {
    std::vector<double> samples;
    double mean = 0.0;
    double std_error = 0.0;
    std::vector<double> bin_edges;      ///< bins + 1 edges over [min, max]
    std::vector<double> probabilities;  ///< empirical probability per bin
};

/// rho(t) = V12 / sqrt(V11 V22) with V_ik = sum_j e^{-lam_j (T_i - t)} e^{-lam_j (T_k - t)} v_j(t), computed
/// as the inner product of the two normalised loading vectors.
inline double instantaneous_correlation(const ModelParams& model, const double* v, double t, double T1, double T2) {
    const std::size_t ns = model.factors.size(), nd = model.deterministic_factors.size();
    std::vector<double> a(ns + nd), b(ns + nd);
    for (std::size_t j = 0; j < ns + nd; ++j) {
        const bool sv = j < ns;
        const double lam = sv ? model.factors[j].lambda : model.deterministic_factors[j - ns].lambda;
        const double s = sv ? std::sqrt(std::max(v[j], 0.0)) : model.deterministic_factors[j - ns].sigma_hat;
        a[j] = std::exp(-lam * (T1 - t)) * s;
        b[j] = std::exp(-lam * (T2 - t)) * s;
    }
    double na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        na += a[j] * a[j];
        nb += b[j] * b[j];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0 || nb == 0) return NAN;
    double r = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) r += (a[j] / na) * (b[j] / nb);
    return std::clamp(r, -1.0, 1.0);
}

inline CorrelationStudy instantaneous_correlation_study(const ModelParams& model, double t, double T1, double T2,
                                                        const McConfig& cfg, std::size_t bins = 100) {
    if (!(t >= 0 && T1 >= t && T2 >= t)) throw InputError("correlation study: need 0 <= t <= T1, T2");
    if (bins == 0) throw InputError("correlation study: need at least one bin");
    const detail::Engine eng(model, {}, t, cfg);
    CorrelationStudy out;
    out.samples.assign(eng.paths(), 0.0);
    parallel_for(eng.chunks(), [&](std::size_t c) {
        eng.run_chunk(c, [&](std::size_t p, const double* v, const double*) {
            out.samples[p] = instantaneous_correlation(model, v, t, T1, T2);
        }, nullptr);
    }, cfg.threads);
    detail::Moments mo;
    for (std::size_t p = 0; p < out.samples.size(); p += cfg.antithetic ? 2 : 1)
        mo.add(cfg.antithetic && p + 1 < out.samples.size() ? 0.5 * (out.samples[p] + out.samples[p + 1]) : out.samples[p]);
    out.mean = mo.mean();
    out.std_error = mo.se();
    const auto [lo, hi] = std::minmax_element(out.samples.begin(), out.samples.end());
    const double a = *lo, b = *hi > *lo ? *hi : *lo + 1e-12;
    out.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) out.bin_edges[i] = a + (b - a) * i / bins;
    out.probabilities.assign(bins, 0.0);
    for (double s : out.samples) {
        auto i = static_cast<std::size_t>((s - a) / (b - a) * bins);
        out.probabilities[std::min(i, bins - 1)] += 1.0 / out.samples.size();
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// pricing

/// Vanilla calls/puts sharing one option maturity, from the same paths.
inline std::vector<PriceResult> mc_price_vanilla_batch(const ModelParams& model, const FuturesCurve& curve,
                                                       const std::vector<VanillaContract>& cs, const McConfig& cfg) {
    if (cs.empty()) return {};
    std::vector<double> mats;
    for (const auto& c : cs) {
        c.validate();
        if (c.option_maturity != cs.front().option_maturity || c.rate != cs.front().rate)
            throw InputError("Monte Carlo batch: contracts must share option maturity and rate");
        if (std::find(mats.begin(), mats.end(), c.futures_maturity) == mats.end()) mats.push_back(c.futures_maturity);
    }
    const detail::Engine eng(model, mats, cs.front().option_maturity, cfg);
    std::vector<std::size_t> leg(cs.size());
    std::vector<double> F(mats.size());
    for (std::size_t m = 0; m < mats.size(); ++m) F[m] = curve.price(mats[m]);
    for (std::size_t i = 0; i < cs.size(); ++i)
        leg[i] = static_cast<std::size_t>(std::find(mats.begin(), mats.end(), cs[i].futures_maturity) - mats.begin());
    const auto mom = detail::mc_expectations(eng, cs.size(), cfg.antithetic, cfg.threads, [&](const double* x, const double*, double* out) {
        for (std::size_t i = 0; i < cs.size(); ++i) {
            const double FT = F[leg[i]] * std::exp(x[leg[i]]);
            out[i] = cs[i].type == OptionType::call ? std::max(FT - cs[i].strike, 0.0) : std::max(cs[i].strike - FT, 0.0);
        }
    });
    const double df = std::exp(-cs.front().rate * cs.front().option_maturity);
    std::vector<PriceResult> out(cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) {
        out[i].method = "mc";
        out[i].price = df * mom[i].mean();
        out[i].std_error = df * mom[i].se();
        out[i].diagnostics["paths"] = static_cast<double>(eng.paths());
        out[i].diagnostics["steps"] = static_cast<double>(eng.steps());
        out[i].diagnostics["seed"] = static_cast<double>(cfg.seed);
    }
    return out;
}

inline PriceResult mc_price_vanilla(const ModelParams& model, const FuturesCurve& curve, const VanillaContract& c,
                                    const McConfig& cfg) {
    return mc_price_vanilla_batch(model, curve, {c}, cfg).front();
}

/// Spread calls and puts on a strike ladder from shared paths of both legs. The diagnostics carry the
/// sample forward, so C - P equals e^{-rT}(sample F1 - sample F2 - K) path by path.
inline std::vector<PriceResult> mc_price_cso_batch(const ModelParams& model, const FuturesCurve& curve, CsoContract c,
                                                   const std::vector<double>& strikes, const McConfig& cfg) {
    c.validate();
    const detail::Engine eng(model, {c.t1, c.t2}, c.option_maturity, cfg);
    const double F1 = curve.price(c.t1), F2 = curve.price(c.t2);
    const std::size_t k = strikes.size();
    const auto mom = detail::mc_expectations(eng, k + 1, cfg.antithetic, cfg.threads, [&](const double* x, const double*, double* out) {
        const double s = F1 * std::exp(x[0]) - F2 * std::exp(x[1]);
        for (std::size_t i = 0; i < k; ++i)
            out[i] = c.type == OptionType::call ? std::max(s - strikes[i], 0.0) : std::max(strikes[i] - s, 0.0);
        out[k] = s;
    });
    const double df = std::exp(-c.rate * c.option_maturity);
    std::vector<PriceResult> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i].method = "mc";
        out[i].price = df * mom[i].mean();
        out[i].std_error = df * mom[i].se();
        out[i].diagnostics["paths"] = static_cast<double>(eng.paths());
        out[i].diagnostics["steps"] = static_cast<double>(eng.steps());
        out[i].diagnostics["seed"] = static_cast<double>(cfg.seed);
        out[i].diagnostics["sample_spread_forward"] = df * mom[k].mean();
    }
    return out;
}

inline PriceResult mc_price_cso(const ModelParams& model, const FuturesCurve& curve, const CsoContract& c,
                                const McConfig& cfg) {
    return mc_price_cso_batch(model, curve, c, {c.strike}, cfg).front();
}

}  // namespace svcurve
