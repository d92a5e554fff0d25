#pragma once

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "svcurve/calib.hpp"
#include "svcurve/dependence.hpp"
#include "svcurve/montecarlo.hpp"

namespace svcurve::io {

using nlohmann::json;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------------------------
// csv

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

/// Header-checked CSV reader. Blank lines and lines starting with '#' are skipped.
inline std::vector<CsvRow> parse_csv(const std::string& text, const std::vector<std::string>& header,
                                     const std::string& what) {
    std::istringstream in(text);
    std::string line;
    std::vector<CsvRow> rows;
    bool seen_header = false;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        CsvRow r{n, {}};
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            const auto a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
            r.cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
        }
        if (!line.empty() && line.back() == ',') r.cells.emplace_back();
        if (!seen_header) {
            if (r.cells != header) {
                std::string h;
                for (const auto& c : header) h += (h.empty() ? "" : ",") + c;
                throw InputError(what + ": line " + std::to_string(n) + ": expected header " + h);
            }
            seen_header = true;
            continue;
        }
        if (r.cells.size() != header.size())
            throw InputError(what + ": line " + std::to_string(n) + ": expected " + std::to_string(header.size()) +
                             " fields, got " + std::to_string(r.cells.size()));
        rows.push_back(std::move(r));
    }
    if (!seen_header) throw InputError(what + ": missing header");
    return rows;
}

inline double to_double(const CsvRow& r, std::size_t i, const std::string& what) {
    const auto& s = r.cells[i];
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw InputError(what + ": line " + std::to_string(r.line) + ": '" + s + "' is not a number");
}

inline std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    std::ostringstream s;
    s << std::setprecision(12) << x;
    return s.str();
}

// ---------------------------------------------------------------------------------------------
// model, curve, config

inline ModelParams model_from_json(const json& j) {
    ModelParams m;
    try {
        for (const auto& f : j.at("factors"))
            m.factors.push_back({f.at("kappa").get<double>(), f.at("theta").get<double>(), f.at("sigma").get<double>(),
                                 f.at("rho").get<double>(), f.at("v0").get<double>(), f.at("lambda").get<double>()});
        if (j.contains("deterministic_factors"))
            for (const auto& d : j.at("deterministic_factors"))
                m.deterministic_factors.push_back({d.at("sigma_hat").get<double>(), d.at("lambda").get<double>()});
    } catch (const json::exception& e) {
        throw InputError(std::string("model JSON: ") + e.what());
    }
    require_valid(m);
    return m;
}

inline json model_to_json(const ModelParams& m) {
    json j;
    j["factors"] = json::array();
    j["deterministic_factors"] = json::array();
    for (const auto& f : m.factors)
        j["factors"].push_back(
            {{"kappa", f.kappa}, {"theta", f.theta}, {"sigma", f.sigma}, {"rho", f.rho}, {"v0", f.v0}, {"lambda", f.lambda}});
    for (const auto& d : m.deterministic_factors)
        j["deterministic_factors"].push_back({{"sigma_hat", d.sigma_hat}, {"lambda", d.lambda}});
    return j;
}

inline ModelParams load_model(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw InputError(path + ": " + e.what());
    }
    return model_from_json(j);
}

inline FuturesCurve curve_from_csv(const std::string& text) {
    std::vector<double> t, f;
    for (const auto& r : parse_csv(text, {"maturity", "price"}, "curve CSV")) {
        t.push_back(to_double(r, 0, "curve CSV"));
        f.push_back(to_double(r, 1, "curve CSV"));
    }
    return FuturesCurve(t, f);
}

inline FuturesCurve load_curve(const std::string& path) { return curve_from_csv(read_file(path)); }

inline NumericsConfig config_from_json(const json& j) {
    NumericsConfig c;
    try {
        auto get = [&](const char* k, auto& v) {
            if (j.contains(k)) v = j.at(k).get<std::decay_t<decltype(v)>>();
        };
        get("quad_upper_limit", c.quad_upper_limit);
        get("quad_nodes", c.quad_nodes);
        get("quad_tolerance", c.quad_tolerance);
        get("fft_size_1d", c.fft_size_1d);
        get("fft_size_2d", c.fft_size_2d);
        get("lattice_sd_1d", c.lattice_sd_1d);
        get("lattice_sd_2d", c.lattice_sd_2d);
        get("carr_madan_delta", c.carr_madan_delta);
        get("smoothing_a", c.smoothing_a);
        get("smoothing_a1", c.smoothing_a1);
        get("smoothing_a2", c.smoothing_a2);
        get("hz_epsilon1", c.hz_epsilon1);
        get("hz_epsilon2", c.hz_epsilon2);
        get("hz_du", c.hz_du);
        get("ode_tolerance", c.ode_tolerance);
        get("mc_paths", c.mc_paths);
        get("mc_steps_per_year", c.mc_steps_per_year);
        get("mc_seed", c.mc_seed);
        get("root_tolerance", c.root_tolerance);
    } catch (const json::exception& e) {
        throw InputError(std::string("config JSON: ") + e.what());
    }
    c.validate();
    return c;
}

inline json config_to_json(const NumericsConfig& c) {
    return {{"quad_upper_limit", c.quad_upper_limit}, {"quad_nodes", c.quad_nodes},
            {"quad_tolerance", c.quad_tolerance},     {"fft_size_1d", c.fft_size_1d},
            {"fft_size_2d", c.fft_size_2d},           {"lattice_sd_1d", c.lattice_sd_1d},
            {"lattice_sd_2d", c.lattice_sd_2d},       {"carr_madan_delta", c.carr_madan_delta},
            {"smoothing_a", c.smoothing_a},           {"smoothing_a1", c.smoothing_a1},
            {"smoothing_a2", c.smoothing_a2},         {"hz_epsilon1", c.hz_epsilon1},
            {"hz_epsilon2", c.hz_epsilon2},           {"hz_du", c.hz_du},
            {"ode_tolerance", c.ode_tolerance},       {"mc_paths", c.mc_paths},
            {"mc_steps_per_year", c.mc_steps_per_year}, {"mc_seed", c.mc_seed},
            {"root_tolerance", c.root_tolerance}};
}

inline NumericsConfig load_config(const std::string& path) {
    try {
        return config_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw InputError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------------------------
// quotes

inline QuoteSet quotes_from_csv(const std::string& text, const FuturesCurve& curve, double rate) {
    const std::string what = "quote CSV";
    QuoteSet qs;
    qs.curve = curve;
    qs.rate = rate;
    for (const auto& r : parse_csv(text, {"T", "Tm", "moneyness_or_strike", "strike_kind", "value_kind", "value", "flag"},
                                   what)) {
        Quote q;
        q.T = to_double(r, 0, what);
        q.Tm = to_double(r, 1, what);
        const double k = to_double(r, 2, what);
        const auto line = what + ": line " + std::to_string(r.line);
        if (r.cells[3] == "moneyness") q.moneyness = k;
        else if (r.cells[3] == "strike") q.strike = k;
        else throw InputError(line + ": strike_kind must be moneyness or strike");
        const double v = to_double(r, 5, what);
        q.price = std::numeric_limits<double>::quiet_NaN();
        if (r.cells[4] == "price") q.price = v;
        else if (r.cells[4] == "vol") q.vol = v;
        else throw InputError(line + ": value_kind must be price or vol");
        if (r.cells[6] == "call" || r.cells[6] == "C") q.type = OptionType::call;
        else if (r.cells[6] == "put" || r.cells[6] == "P") q.type = OptionType::put;
        else throw InputError(line + ": flag must be call or put");
        qs.quotes.push_back(q);
        try {
            QuoteSet one{{q}, rate, curve};
            one.complete();
            qs.quotes.back() = one.quotes[0];
        } catch (const std::exception& e) {
            throw InputError(line + ": " + e.what());
        }
    }
    if (qs.quotes.empty()) throw InputError(what + ": no quotes");
    return qs;
}

inline std::string quotes_to_csv(const QuoteSet& qs) {
    std::string s = "T,Tm,moneyness_or_strike,strike_kind,value_kind,value,flag\n";
    for (const auto& q : qs.quotes) {
        const bool m = !std::isnan(q.moneyness);
        s += fmt(q.T) + "," + fmt(q.Tm) + "," + fmt(m ? q.moneyness : q.strike) + "," + (m ? "moneyness" : "strike") +
             ",price," + fmt(q.price) + "," + (q.type == OptionType::call ? "call" : "put") + "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------------------------
// outputs

/// Hex SHA-1 of the given strings, each length-prefixed.
inline std::string sha1_hex(const std::vector<std::string>& parts) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    for (const auto& p : parts) {
        const std::string len = std::to_string(p.size()) + ":";
        EVP_DigestUpdate(ctx, len.data(), len.size());
        EVP_DigestUpdate(ctx, p.data(), p.size());
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    EVP_DigestFinal_ex(ctx, md, &n);
    EVP_MD_CTX_free(ctx);
    std::ostringstream s;
    for (unsigned i = 0; i < n; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return s.str();
}

struct RunManifest {
    std::string command;
    std::vector<std::string> inputs;  ///< file paths
    NumericsConfig config;
    std::uint64_t seed = 42;
    std::string out_dir;
    std::string arguments;  ///< remaining command-line options, canonicalised

    /// Hash over command, arguments, seed, config and input file contents (not their paths).
    [[nodiscard]] std::string hash() const {
        std::vector<std::string> parts{command, arguments, std::to_string(seed), config_to_json(config).dump()};
        for (const auto& p : inputs) parts.push_back(read_file(p));
        return sha1_hex(parts);
    }
    [[nodiscard]] json to_json() const {
        return {{"command", command}, {"inputs", inputs},      {"config", config_to_json(config)},
                {"seed", seed},       {"out", out_dir},        {"arguments", arguments},
                {"hash", hash()}};
    }
};

struct ResultRow {
    std::string method;
    double T = 0, T1 = 0, T2 = 0, K = 0, price = 0;
    double std_error = std::numeric_limits<double>::quiet_NaN();
};

inline std::string results_csv(const std::vector<ResultRow>& rows, const std::string& manifest) {
    std::string s = "# manifest=" + manifest + "\nmethod,T,T1,T2,K,price,stderr\n";
    for (const auto& r : rows)
        s += r.method + "," + fmt(r.T) + "," + fmt(r.T1) + "," + fmt(r.T2) + "," + fmt(r.K) + "," + fmt(r.price) + "," +
             fmt(r.std_error) + "\n";
    return s;
}

inline std::string copula_csv(const CopulaGrid& g, const std::string& manifest) {
    std::string s = "# manifest=" + manifest + "\nv1,v2,C,c\n";
    for (std::size_t i = 0; i < g.n1(); ++i)
        for (std::size_t j = 0; j < g.n2(); ++j)
            s += fmt(g.v1[i]) + "," + fmt(g.v2[j]) + "," + fmt(g.Cat(i, j)) + "," + fmt(g.cat(i, j)) + "\n";
    return s;
}

inline json measures_json(const DependenceMeasures& m) {
    return {{"tau_K", m.tau_K}, {"rho_S", m.rho_S}, {"sigma_SW", m.sigma_SW}, {"phi_H", m.phi_H_squared_form}};
}

inline std::string histogram_csv(const CorrelationStudy& s, const std::string& manifest) {
    std::string out = "# manifest=" + manifest + "\nbin_left,bin_right,probability\n";
    for (std::size_t b = 0; b < s.probabilities.size(); ++b)
        out += fmt(s.bin_edges[b]) + "," + fmt(s.bin_edges[b + 1]) + "," + fmt(s.probabilities[b]) + "\n";
    return out;
}

inline json error_table_json(const ErrorReport& e) {
    return {{"MAE", {{"price", e.mae_price}, {"vol", e.mae_vol}}},
            {"MAE (ATM)", {{"price", e.mae_atm_price}, {"vol", e.mae_atm_vol}}},
            {"RMSE", {{"price", e.rmse_price}, {"vol", e.rmse_vol}}}};
}

inline json calib_result_json(const CalibResult& r, const std::string& manifest) {
    json j;
    j["manifest"] = manifest;
    j["model"] = model_to_json(r.theta_star);
    const auto x = pack(r.theta_star);
    const auto names = parameter_names(r.theta_star);
    for (std::size_t i = 0; i < x.size(); ++i) j["parameters"][names[i]] = x[i];
    j["objective"] = r.objective;
    j["initial_objective"] = r.initial_objective;
    j["errors"] = error_table_json(r.errors);
    j["residuals"] = r.residuals;
    j["start_objectives"] = r.start_objectives;
    j["evaluations"] = r.evaluations;
    j["best_start"] = r.best_start;
    for (const auto& l : r.log)
        j["log"].push_back({{"start", l.start}, {"stage", l.stage}, {"iteration", l.iteration},
                            {"evaluations", l.evaluations}, {"objective", l.objective}});
    return j;
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

}  // namespace svcurve::io
