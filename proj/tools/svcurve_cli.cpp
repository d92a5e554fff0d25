#include <CLI11.hpp>

#include <array>
#include <filesystem>
#include <iostream>

#include "svcurve/io.hpp"

using namespace svcurve;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInput = 2, kNumerics = 3, kNoSolution = 4 };

struct Common {
    std::string model, curve, config, out = ".";
    std::uint64_t seed = 42;
    bool seed_set = false;
    double rate = 0.0;
    std::string type = "call";
    std::vector<std::string> argv;

    [[nodiscard]] NumericsConfig cfg() const {
        NumericsConfig c = config.empty() ? NumericsConfig{} : io::load_config(config);
        if (seed_set) c.mc_seed = seed;
        return c;
    }
    [[nodiscard]] ModelParams load_model() const {
        if (model.empty()) throw InputError("--model is required");
        return io::load_model(model);
    }
    [[nodiscard]] FuturesCurve load_curve() const { return curve.empty() ? FuturesCurve::flat(100.0) : io::load_curve(curve); }
    [[nodiscard]] OptionType option_type() const {
        if (type == "call") return OptionType::call;
        if (type == "put") return OptionType::put;
        throw InputError("--type must be call or put");
    }

    [[nodiscard]] io::RunManifest manifest(const std::string& command, std::vector<std::string> inputs) const {
        io::RunManifest m;
        m.command = command;
        for (const auto& p : {model, curve, config})
            if (!p.empty()) inputs.push_back(p);
        m.inputs = inputs;
        m.config = cfg();
        m.seed = m.config.mc_seed;
        m.out_dir = out;
        for (std::size_t i = 0; i < argv.size(); ++i) {
            if (argv[i] == "--out") {
                ++i;
                continue;
            }
            if (argv[i].rfind("--out=", 0) == 0) continue;
            m.arguments += argv[i] + " ";
        }
        return m;
    }

    /// Writes the manifest next to the outputs and returns its hash.
    [[nodiscard]] std::string begin(const std::string& command, const std::vector<std::string>& inputs = {}) const {
        fs::create_directories(out);
        auto m = manifest(command, inputs);
        auto j = m.to_json();
        j["argv"] = argv;
        io::write_file((fs::path(out) / "manifest.json").string(), j.dump(2) + "\n");
        return j["hash"].get<std::string>();
    }
    [[nodiscard]] std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }
};

void add_common(CLI::App* s, Common& c) {
    s->add_option("--model", c.model, "model parameters (JSON)");
    s->add_option("--curve", c.curve, "futures curve (CSV maturity,price); default flat 100");
    s->add_option("--config", c.config, "numerics configuration (JSON)");
    s->add_option("--seed", c.seed, "Monte Carlo seed")->each([&c](const std::string&) { c.seed_set = true; });
    s->add_option("--out", c.out, "output directory");
    s->add_option("--rate", c.rate, "continuously compounded rate");
    s->add_option("--type", c.type, "call or put");
}

std::vector<double> parse_ladder(const std::string& s) {
    if (s.empty()) return {};
    std::vector<double> v;
    const auto a = s.find(':');
    try {
        if (a == std::string::npos) {
            std::stringstream ss(s);
            std::string x;
            while (std::getline(ss, x, ',')) v.push_back(std::stod(x));
            return v;
        }
        const auto b = s.find(':', a + 1);
        if (b == std::string::npos) throw InputError("");
        const double lo = std::stod(s.substr(0, a)), hi = std::stod(s.substr(a + 1, b - a - 1)),
                     step = std::stod(s.substr(b + 1));
        if (!(step > 0) || hi < lo) throw InputError("");
        const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
        if (n > 100000) throw InputError("");
        for (long i = 0; i <= n; ++i) v.push_back(lo + i * step);
    } catch (const std::exception&) {
        throw InputError("ladder '" + s + "' must be a:b:step with step > 0, or a comma list");
    }
    return v;
}

McConfig mc_config(const NumericsConfig& cfg, long paths) {
    auto m = McConfig::from(cfg);
    if (paths > 0) m.paths = static_cast<std::size_t>(paths);
    return m;
}

// ---------------------------------------------------------------------------------------------

struct VanillaArgs {
    double T = 1.0, Tm = 0.0;
    std::string strikes = "100";
    bool validate_mc = false;
    long paths = 0;
};

int cmd_price_vanilla(const Common& c, const VanillaArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto curve = c.load_curve();
    const double Tm = a.Tm > 0 ? a.Tm : a.T;
    std::vector<VanillaContract> cs;
    for (double K : parse_ladder(a.strikes)) cs.push_back({a.T, Tm, K, c.option_type(), c.rate});
    if (cs.empty()) throw InputError("no strikes");
    const auto hash = c.begin("price-vanilla");
    std::vector<PriceResult> mc;
    if (a.validate_mc) mc = mc_price_vanilla_batch(model, curve, cs, mc_config(cfg, a.paths));
    std::string s = "# manifest=" + hash + "\nmethod,T,T1,T2,K,price,stderr" + (a.validate_mc ? ",mc_price,mc_stderr" : "") + "\n";
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const auto p = price_vanilla_fourier(model, curve, cs[i], cfg);
        s += "fourier," + io::fmt(a.T) + "," + io::fmt(Tm) + "," + io::fmt(Tm) + "," + io::fmt(cs[i].strike) + "," +
             io::fmt(p.price) + ",nan";
        if (a.validate_mc) s += "," + io::fmt(mc[i].price) + "," + io::fmt(mc[i].std_error);
        s += "\n";
    }
    io::write_file(c.path("vanilla.csv"), s);
    std::cout << s;
    return kOk;
}

struct CsoArgs {
    double T = 0.25, T1 = 0.25, T2 = 0.75;
    std::string strikes = "0";
    std::string method = "cf";
    long paths = 0;
};

int cmd_price_cso(const Common& c, const CsoArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto curve = c.load_curve();
    const auto ks = parse_ladder(a.strikes);
    if (ks.empty()) throw InputError("no strikes");
    CsoContract base{a.T, a.T1, a.T2, ks.front(), c.option_type(), c.rate};
    base.validate();
    std::vector<std::string> methods;
    if (a.method == "all") methods = {"cf", "hz", "si", "mc"};
    else methods = {a.method};
    const auto hash = c.begin("price-cso");
    std::vector<io::ResultRow> rows;
    for (const auto& m : methods) {
        std::vector<PriceResult> ps;
        if (m == "mc") {
            ps = mc_price_cso_batch(model, curve, base, ks, mc_config(cfg, a.paths));
        } else if (m == "hz") {
            std::vector<double> nz;
            for (double K : ks)
                if (K != 0.0) nz.push_back(K);
            const auto r = nz.empty() ? std::vector<PriceResult>{} : price_cso_hurd_zhou_ladder(model, curve, base, nz, cfg);
            std::size_t j = 0;
            for (double K : ks) {
                if (K == 0.0) {
                    std::cerr << "hz: K = 0 is outside the method's domain; use cf, si or mc\n";
                    PriceResult nan;
                    nan.price = std::numeric_limits<double>::quiet_NaN();
                    ps.push_back(nan);
                } else {
                    ps.push_back(r[j++]);
                }
            }
        } else if (m == "cf" || m == "si") {
            for (double K : ks) {
                auto cc = base;
                cc.strike = K;
                ps.push_back(m == "cf" ? price_cso_caldana_fusai(model, curve, cc, 1.0, cfg)
                                       : price_cso_single_integral(model, curve, cc, cfg));
            }
        } else {
            throw InputError("--method must be cf, hz, si, mc or all");
        }
        for (std::size_t i = 0; i < ks.size(); ++i)
            rows.push_back({m, a.T, a.T1, a.T2, ks[i], ps[i].price, ps[i].std_error});
    }
    const auto s = io::results_csv(rows, hash);
    io::write_file(c.path("cso.csv"), s);
    std::cout << s;
    return kOk;
}

struct LadderArgs {
    double T = 0.25, T1 = 0.25, T2 = 0.75;
    std::string gaps;    ///< T2 - T1 ladder with T, T1 fixed
    std::string starts;  ///< T = T1 ladder with T2 - T1 fixed
    int cells = 100;

    [[nodiscard]] std::vector<std::array<double, 3>> cases() const {
        std::vector<std::array<double, 3>> out;
        if (!gaps.empty() && !starts.empty()) throw InputError("--gaps and --starts are exclusive");
        for (double g : parse_ladder(gaps)) out.push_back({T, T1, T1 + g});
        for (double s : parse_ladder(starts)) out.push_back({s, s, s + (T2 - T1)});
        if (out.empty()) out.push_back({T, T1, T2});
        return out;
    }
};

int cmd_dependence(const Common& c, const LadderArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto hash = c.begin("dependence");
    nlohmann::json j;
    j["manifest"] = hash;
    j["cases"] = nlohmann::json::array();
    const auto cases = a.cases();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto [T, T1, T2] = cases[i];
        const CFContext ctx(model, T, T1, T2, CfBackend::ode, cfg.ode_tolerance);
        CopulaGridSpec spec;
        spec.cells = static_cast<std::size_t>(a.cells);
        const auto g = copula_from_cf(ctx, spec, cfg);
        const auto ax = check_copula(g);
        const std::string name = cases.size() == 1 ? "copula.csv" : "copula_" + std::to_string(i) + ".csv";
        io::write_file(c.path(name), io::copula_csv(g, hash));
        auto e = io::measures_json(dependence_measures(g));
        e["T"] = T;
        e["T1"] = T1;
        e["T2"] = T2;
        e["grid"] = name;
        e["masked_fraction"] = g.masked_fraction;
        e["axioms"] = {{"grounded", ax.grounded}, {"margins", ax.margins}, {"frechet", ax.frechet},
                       {"two_increasing", ax.two_increasing}, {"min_density", ax.min_density}};
        j["cases"].push_back(e);
    }
    io::write_file(c.path("measures.json"), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return kOk;
}

struct ImpliedArgs {
    LadderArgs ladder;
    std::string shifts = "-10,-5,-2.5,0,2.5,5,10";
    double price = std::numeric_limits<double>::quiet_NaN();
};

int cmd_implied_correlation(const Common& c, const ImpliedArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto curve = c.load_curve();
    const auto hash = c.begin("implied-correlation");
    std::string s = "# manifest=" + hash + "\nT,T1,T2,K,price,rho,near_boundary,iterations\n";
    int status = kOk;
    for (const auto& [T, T1, T2] : a.ladder.cases()) {
        CsoContract base{T, T1, T2, 0.0, c.option_type(), c.rate};
        const auto mg = price_marginals(model, curve, base, cfg);
        const double atm = curve.price(T1) - curve.price(T2);
        for (double d : parse_ladder(a.shifts)) {
            auto cc = base;
            cc.strike = atm + d;
            const double p = std::isnan(a.price) ? price_cso_caldana_fusai(model, curve, cc, 1.0, cfg).price : a.price;
            try {
                const auto ic = implied_correlation(mg, cc, p);
                s += io::fmt(T) + "," + io::fmt(T1) + "," + io::fmt(T2) + "," + io::fmt(cc.strike) + "," + io::fmt(p) + "," +
                     io::fmt(ic.rho) + "," + (ic.near_boundary ? "1" : "0") + "," + std::to_string(ic.iterations) + "\n";
            } catch (const NoSolutionError& e) {
                std::cerr << e.what() << "\n";
                s += io::fmt(T) + "," + io::fmt(T1) + "," + io::fmt(T2) + "," + io::fmt(cc.strike) + "," + io::fmt(p) +
                     ",nan,1,0\n";
                status = kNoSolution;
            }
        }
    }
    io::write_file(c.path("implied_correlation.csv"), s);
    std::cout << s;
    return status;
}

struct CalibArgs {
    std::string quotes;
    std::string objective = "price";
    std::string free;
    int starts = 8;
    int nm_evals = 400;
    int lm_iter = 60;
};

int cmd_calibrate(const Common& c, const CalibArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto curve = c.load_curve();
    if (a.quotes.empty()) throw InputError("--quotes is required");
    const auto qs = io::quotes_from_csv(io::read_file(a.quotes), curve, c.rate);
    OptimizerConfig oc;
    oc.starts = a.starts;
    oc.nm_max_evals = a.nm_evals;
    oc.lm_max_iter = a.lm_iter;
    oc.lm_polish = a.lm_iter > 0;
    oc.seed = cfg.mc_seed;
    if (a.objective == "vol") oc.kind = ObjectiveKind::vol;
    else if (a.objective != "price") throw InputError("--objective must be price or vol");
    auto b = default_bounds(model);
    if (!a.free.empty()) {
        const auto names = parameter_names(model);
        b.free.assign(names.size(), false);
        std::stringstream ss(a.free);
        std::string n;
        while (std::getline(ss, n, ',')) {
            const auto it = std::find(names.begin(), names.end(), n);
            if (it == names.end()) throw InputError("--free: unknown parameter " + n);
            b.free[static_cast<std::size_t>(it - names.begin())] = true;
        }
    }
    const auto hash = c.begin("calibrate", {a.quotes});
    const auto r = calibrate(model, qs, b, oc, cfg);
    const auto j = io::calib_result_json(r, hash);
    io::write_file(c.path("calibration.json"), j.dump(2) + "\n");
    io::write_file(c.path("calibrated_model.json"), io::model_to_json(r.theta_star).dump(2) + "\n");
    std::cout << nlohmann::json{{"objective", r.objective}, {"errors", j["errors"]}, {"parameters", j["parameters"]}}.dump(2)
              << "\n";
    return kOk;
}

struct StudyArgs {
    double t = 1.0, T1 = 1.0, T2 = 2.0;
    long paths = 0;
    int bins = 100;
};

int cmd_correlation_study(const Common& c, const StudyArgs& a) {
    const auto cfg = c.cfg();
    const auto model = c.load_model();
    const auto hash = c.begin("correlation-study");
    const auto s = instantaneous_correlation_study(model, a.t, a.T1, a.T2, mc_config(cfg, a.paths),
                                                   static_cast<std::size_t>(std::max(a.bins, 0)));
    io::write_file(c.path("correlation_histogram.csv"), io::histogram_csv(s, hash));
    const nlohmann::json j{{"manifest", hash}, {"mean", s.mean}, {"std_error", s.std_error},
                           {"paths", s.samples.size()}, {"t", a.t}, {"T1", a.T1}, {"T2", a.T2}};
    io::write_file(c.path("correlation_summary.json"), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return kOk;
}

int run(int argc, char** argv);

int cmd_replay(const std::string& manifest, const std::string& out) {
    const auto j = nlohmann::json::parse(io::read_file(manifest));
    std::vector<std::string> args{"svcurve"};
    for (const auto& a : j.at("argv")) args.push_back(a.get<std::string>());
    std::vector<std::string> kept{args[0]};
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--out") {
            ++i;
            continue;
        }
        if (args[i].rfind("--out=", 0) == 0) continue;
        kept.push_back(args[i]);
    }
    kept.push_back("--out");
    kept.push_back(out.empty() ? j.at("out").get<std::string>() : out);
    std::vector<char*> ptrs;
    for (auto& s : kept) ptrs.push_back(s.data());
    return run(static_cast<int>(ptrs.size()), ptrs.data());
}

int run(int argc, char** argv) {
    CLI::App app{"Futures-curve stochastic volatility: pricing, dependence and calibration"};
    app.require_subcommand(1);
    Common c;
    for (int i = 1; i < argc; ++i) c.argv.emplace_back(argv[i]);

    VanillaArgs va;
    auto* pv = app.add_subcommand("price-vanilla", "European options on a futures contract");
    add_common(pv, c);
    pv->add_option("--T", va.T, "option maturity");
    pv->add_option("--Tm", va.Tm, "futures maturity (default T)");
    pv->add_option("--strikes,--strike", va.strikes, "a:b:step or comma list");
    pv->add_flag("--validate-mc", va.validate_mc, "add a Monte Carlo column");
    pv->add_option("--paths", va.paths, "Monte Carlo paths");

    CsoArgs ca;
    auto* pc = app.add_subcommand("price-cso", "calendar spread options");
    add_common(pc, c);
    pc->add_option("--T", ca.T);
    pc->add_option("--T1", ca.T1);
    pc->add_option("--T2", ca.T2);
    pc->add_option("--strikes,--strike", ca.strikes, "a:b:step or comma list; use --strikes=-2:2:0.5 for negatives");
    pc->add_option("--method", ca.method, "cf, hz, si, mc or all");
    pc->add_option("--paths", ca.paths, "Monte Carlo paths");

    LadderArgs da;
    auto* dp = app.add_subcommand("dependence", "copula grids and dependence measures");
    add_common(dp, c);
    dp->add_option("--T", da.T);
    dp->add_option("--T1", da.T1);
    dp->add_option("--T2", da.T2);
    dp->add_option("--gaps", da.gaps, "T2 - T1 ladder with T and T1 fixed");
    dp->add_option("--starts", da.starts, "T = T1 ladder with T2 - T1 fixed");
    dp->add_option("--cells", da.cells, "copula cells per axis");

    ImpliedArgs ia;
    auto* ip = app.add_subcommand("implied-correlation", "Gaussian-copula implied correlation");
    add_common(ip, c);
    ip->add_option("--T", ia.ladder.T);
    ip->add_option("--T1", ia.ladder.T1);
    ip->add_option("--T2", ia.ladder.T2);
    ip->add_option("--gaps", ia.ladder.gaps);
    ip->add_option("--starts", ia.ladder.starts);
    ip->add_option("--shifts", ia.shifts, "strike shifts from F1 - F2");
    ip->add_option("--price", ia.price, "observed price (default: model price)");

    CalibArgs la;
    auto* cp = app.add_subcommand("calibrate", "least-squares calibration to vanilla quotes");
    add_common(cp, c);
    cp->add_option("--quotes", la.quotes, "quote CSV");
    cp->add_option("--objective", la.objective, "price or vol");
    cp->add_option("--free", la.free, "comma list of free parameters (default all)");
    cp->add_option("--starts", la.starts, "multi-start count");
    cp->add_option("--nm-evals", la.nm_evals, "Nelder-Mead evaluations per start");
    cp->add_option("--lm-iter", la.lm_iter, "Levenberg-Marquardt iterations (0 disables)");

    StudyArgs sa;
    auto* sp = app.add_subcommand("correlation-study", "Monte Carlo instantaneous correlation");
    add_common(sp, c);
    sp->add_option("--t", sa.t);
    sp->add_option("--T1", sa.T1);
    sp->add_option("--T2", sa.T2);
    sp->add_option("--paths", sa.paths);
    sp->add_option("--bins", sa.bins);

    std::string manifest, replay_out;
    auto* rp = app.add_subcommand("replay", "re-run a command from its manifest.json");
    rp->add_option("manifest", manifest)->required();
    rp->add_option("--out", replay_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInput;
    }

    try {
        if (*pv) return cmd_price_vanilla(c, va);
        if (*pc) return cmd_price_cso(c, ca);
        if (*dp) return cmd_dependence(c, da);
        if (*ip) return cmd_implied_correlation(c, ia);
        if (*cp) return cmd_calibrate(c, la);
        if (*sp) return cmd_correlation_study(c, sa);
        if (*rp) return cmd_replay(manifest, replay_out);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInput;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInput;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInput;
    } catch (const NoSolutionError& e) {
        std::cerr << "no solution: " << e.what() << "\n";
        return kNoSolution;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerics;
    }
    return kInput;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
