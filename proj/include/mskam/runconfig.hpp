#ifndef MSKAM_RUNCONFIG_HPP
#define MSKAM_RUNCONFIG_HPP

#include "mskam/presets.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

extern char** environ;

namespace mskam {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& known_modes() {
    static const std::vector<std::string> v{"normalize", "kam-run", "measure", "reduce-resonance", "check-conditions"};
    return v;
}

inline const std::vector<std::string>& known_presets() {
    static const std::vector<std::string> v{"example-6.1", "example-6.2", "example-6.3", "model", "identity", "inline"};
    return v;
}

// presets that can run each mode
inline bool mode_supports(const std::string& mode, const std::string& preset) {
    static const std::map<std::string, std::set<std::string>> m{
        {"normalize", {"example-6.1", "example-6.2", "example-6.3", "model", "inline"}},
        {"kam-run", {"example-6.3", "model", "inline"}},
        {"measure", {"example-6.1", "example-6.3", "identity"}},
        {"reduce-resonance", {"example-6.2"}},
        {"check-conditions", {"example-6.1", "example-6.2", "example-6.3", "identity"}}};
    auto it = m.find(mode);
    return it != m.end() && it->second.count(preset) > 0;
}

struct GridSpec {
    std::string kind = "lattice";  // lattice | r2 | monte-carlo
    int count = 3;                 // per axis for lattice, total otherwise
    std::vector<double> lo, hi;
};

struct MeasureSpec {
    std::vector<double> gammas{0.1, 0.05, 0.025, 0.0125};
    double tau = 2.0;
    int N = 0;
    int cap = 20;
};

struct ConditionSpec {
    std::vector<std::string> ids;
    int N = 2;
    int K_cap = 3;
};

struct KamSpec {
    bool calibrate = false;
    std::string translation = "fixed-frequency";
    double lie_rel_stop = 1e-3;
};

// Fully resolved run configuration: every field carries its effective value.
struct RunConfig {
    std::string mode;
    std::string preset;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string output = "mskam-out";
    nlohmann::json example = nlohmann::json::object();
    nlohmann::json hamiltonian;  // inline data, null unless preset == "inline"
    KAMSchedule schedule;
    KamSpec kam;
    GridSpec grid;
    MeasureSpec measure;
    ConditionSpec conditions;
};

// ---------------- schema ----------------

namespace config_detail {

using json = nlohmann::json;

inline std::string join_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline const char* type_name(const json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "float";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    if (v.is_object()) return "table";
    return "null";
}

// Strict reader over one table: every key must be consumed, and each value must have the requested type.
class Table {
public:
    Table(const json& j, std::string path) : path_(std::move(path)) {
        if (j.is_null()) {
            j_ = json::object();
        } else if (!j.is_object()) {
            throw ConfigError(where() + ": expected a table, got " + type_name(j));
        } else {
            j_ = j;
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_number()) bad(key, "number", v);
        return v.get<double>();
    }

    long long integer(const std::string& key, long long def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_number_integer()) bad(key, "integer", v);
        return v.get<long long>();
    }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_boolean()) bad(key, "boolean", v);
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_string()) bad(key, "string", v);
        return v.get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_array()) bad(key, "array of numbers", v);
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) bad(key, "array of numbers", v);
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_array()) bad(key, "array of strings", v);
        std::vector<std::string> out;
        for (const auto& e : v) {
            if (!e.is_string()) bad(key, "array of strings", v);
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    json sub(const std::string& key) { return has(key) ? raw(key) : json(); }

    std::string child(const std::string& key) const { return join_path(path_, key); }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown key '" + join_path(path_, k) + "'");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(join_path(path_, key) + ": " + msg);
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    [[noreturn]] void bad(const std::string& key, const char* want, const json& v) const {
        fail(key, std::string("expected ") + want + ", got " + type_name(v));
    }

    json j_;
    std::string path_;
    std::set<std::string> used_;
};

// Keys accepted in each table, used to spell environment overrides canonically.
inline const std::map<std::string, std::vector<std::string>>& schema_keys() {
    static const std::map<std::string, std::vector<std::string>> m{
        {"", {"mode", "preset", "seed", "workers", "output", "example", "hamiltonian", "schedule", "kam", "grid", "measure",
              "conditions"}},
        {"example", {"eps", "n1", "nt", "normal", "tangent", "fast", "t", "degree_cap", "fourier_cap", "a", "b", "run_eps",
                     "amplitude", "n"}},
        {"hamiltonian", {"n", "m", "e", "omega", "M", "eps", "degree_cap", "fourier_cap", "terms", "h", "scales"}},
        {"hamiltonian.scales", {"eps", "eps_vec", "mu_vec", "ceiling"}},
        {"schedule", {"r0", "s0", "gamma0", "eta0", "mu0", "tau", "b", "l0", "N", "sigma", "lambda0", "c0", "kappa",
                      "max_steps", "target_norm", "target_rel", "k_cap"}},
        {"kam", {"calibrate", "translation", "lie_rel_stop"}},
        {"grid", {"kind", "count", "lo", "hi"}},
        {"measure", {"gammas", "tau", "N", "cap"}},
        {"conditions", {"ids", "N", "K_cap"}}};
    return m;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::string canonical_key(const std::string& table, const std::string& seg) {
    auto it = schema_keys().find(table);
    if (it != schema_keys().end()) {
        for (const auto& k : it->second)
            if (k == seg) return k;
        for (const auto& k : it->second)
            if (lower(k) == lower(seg)) return k;
    }
    return lower(seg);
}

// ---------------- TOML <-> JSON ----------------

inline json from_toml(const toml::node& n) {
    if (auto t = n.as_table()) {
        json o = json::object();
        for (const auto& [k, v] : *t) o[std::string(k.str())] = from_toml(v);
        return o;
    }
    if (auto a = n.as_array()) {
        json arr = json::array();
        for (const auto& v : *a) arr.push_back(from_toml(v));
        return arr;
    }
    if (auto v = n.as_integer()) return json(v->get());
    if (auto v = n.as_floating_point()) return json(v->get());
    if (auto v = n.as_boolean()) return json(v->get());
    if (auto v = n.as_string()) return json(v->get());
    const auto& src = n.source().begin;
    throw ConfigError("unsupported TOML value (date/time) at line " + std::to_string(src.line) + ", column " +
                      std::to_string(src.column));
}

inline void push_toml(toml::array& arr, const json& v);

inline void put_toml(toml::table& t, const std::string& key, const json& v) {
    if (v.is_null()) return;
    if (v.is_object()) {
        toml::table sub;
        for (const auto& [k, e] : v.items()) put_toml(sub, k, e);
        t.insert_or_assign(key, std::move(sub));
    } else if (v.is_array()) {
        toml::array arr;
        for (const auto& e : v) push_toml(arr, e);
        t.insert_or_assign(key, std::move(arr));
    } else if (v.is_boolean()) {
        t.insert_or_assign(key, v.get<bool>());
    } else if (v.is_number_integer()) {
        t.insert_or_assign(key, v.get<int64_t>());
    } else if (v.is_number()) {
        t.insert_or_assign(key, v.get<double>());
    } else {
        t.insert_or_assign(key, v.get<std::string>());
    }
}

inline void push_toml(toml::array& arr, const json& v) {
    if (v.is_object()) {
        toml::table sub;
        for (const auto& [k, e] : v.items()) put_toml(sub, k, e);
        arr.push_back(std::move(sub));
    } else if (v.is_array()) {
        toml::array a;
        for (const auto& e : v) push_toml(a, e);
        arr.push_back(std::move(a));
    } else if (v.is_boolean()) {
        arr.push_back(v.get<bool>());
    } else if (v.is_number_integer()) {
        arr.push_back(v.get<int64_t>());
    } else if (v.is_number()) {
        arr.push_back(v.get<double>());
    } else {
        arr.push_back(v.get<std::string>());
    }
}

// ---------------- preset defaults ----------------

inline json example_defaults(const std::string& preset) {
    if (preset == "example-6.1")
        return {{"eps", 0.01}, {"n1", 2}, {"nt", 2}, {"normal", json::array()}, {"tangent", json::array()}};
    if (preset == "example-6.2") return {{"eps", 0.01}, {"fast", 0.0}, {"t", 1.0}, {"degree_cap", 4}, {"fourier_cap", 4}};
    if (preset == "example-6.3")
        return {{"eps", 0.01}, {"a", 1.0}, {"b", 2.0}, {"run_eps", presets::Example63::run_eps}, {"degree_cap", 12},
                {"fourier_cap", 14}};
    if (preset == "model") return {{"amplitude", 1e-6}, {"degree_cap", 4}, {"fourier_cap", 12}};
    if (preset == "identity") return {{"n", 2}};
    return json::object();
}

inline json read_example(const json& raw, const std::string& preset) {
    const json def = example_defaults(preset);
    Table t(raw, "example");
    json out = json::object();
    for (const auto& [k, d] : def.items()) {
        if (d.is_number_integer())
            out[k] = t.integer(k, d.get<long long>());
        else if (d.is_number())
            out[k] = t.number(k, d.get<double>());
        else
            out[k] = t.numbers(k, d.get<std::vector<double>>());
    }
    t.finish();
    auto positive = [&](const char* k) {
        if (!(out[k].get<double>() > 0.0)) t.fail(k, "must be positive");
    };
    auto caps = [&] {
        if (out["degree_cap"].get<long long>() < 2 || out["fourier_cap"].get<long long>() < 1)
            t.fail("degree_cap", "caps must satisfy degree_cap >= 2 and fourier_cap >= 1");
    };
    if (preset == "example-6.1") {
        positive("eps");
        const long long n1 = out["n1"], nt = out["nt"];
        if (n1 < 1 || n1 > 4) t.fail("n1", "must lie in 1..4");
        if (nt < 1 || nt > 4) t.fail("nt", "must lie in 1..4");
        presets::Example61 ex;
        ex.n1 = static_cast<int>(n1);
        ex.nt = static_cast<int>(nt);
        auto fill = [&](const char* key, long long count, auto centre) {
            std::vector<double> v = out[key];
            if (!v.empty() && static_cast<long long>(v.size()) != count)
                t.fail(key, "needs " + std::to_string(count) + " entries, got " + std::to_string(v.size()));
            for (long long j = static_cast<long long>(v.size()); j < count; ++j) v.push_back(centre(static_cast<int>(j)));
            for (double x : v)
                if (!(x > 0.05)) t.fail(key, "frequencies must exceed 0.05");
            out[key] = v;
        };
        fill("normal", n1, [&](int j) { return ex.normal_centre(j); });
        fill("tangent", nt, [&](int j) { return ex.tangent_centre(j); });
    } else if (preset == "example-6.2") {
        positive("eps");
        positive("t");
        caps();
    } else if (preset == "example-6.3") {
        positive("eps");
        positive("run_eps");
        caps();
    } else if (preset == "model") {
        positive("amplitude");
        caps();
    } else if (preset == "identity") {
        if (out["n"].get<long long>() < 1 || out["n"].get<long long>() > 4) t.fail("n", "must lie in 1..4");
    }
    return out;
}

inline std::vector<double> to_vec(const VecD& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace config_detail

// ---------------- preset objects from a resolved config ----------------

inline presets::Example61 example61_of(const RunConfig& c) {
    presets::Example61 ex;
    ex.eps = c.example.at("eps");
    ex.n1 = c.example.at("n1");
    ex.nt = c.example.at("nt");
    ex.normal = c.example.at("normal").get<std::vector<double>>();
    ex.tangent = c.example.at("tangent").get<std::vector<double>>();
    return ex;
}

inline presets::Example62 example62_of(const RunConfig& c) {
    presets::Example62 ex;
    ex.eps = c.example.at("eps");
    ex.fast = c.example.at("fast");
    ex.degree_cap = c.example.at("degree_cap");
    ex.fourier_cap = c.example.at("fourier_cap");
    if (!c.grid.lo.empty()) {
        ex.lo = c.grid.lo[0];
        ex.hi = c.grid.hi[0];
    }
    return ex;
}

inline presets::Example63 example63_of(const RunConfig& c, bool for_run = false) {
    presets::Example63 ex;
    ex.eps = c.example.at(for_run ? "run_eps" : "eps");
    ex.a = c.example.at("a");
    ex.b = c.example.at("b");
    if (c.grid.lo.size() == 2) {
        ex.lo = Eigen::Map<const VecD>(c.grid.lo.data(), 2);
        ex.hi = Eigen::Map<const VecD>(c.grid.hi.data(), 2);
    }
    return ex;
}

// Inline Hamiltonian: H = e + <omega, y> + 1/2 <(y,z), M (y,z)> + h + eps P with terms [k, i, j, re, im].
inline NormalForm inline_normal_form(const nlohmann::json& h) {
    NormalForm H;
    H.n = h.at("n");
    H.m = h.at("m");
    H.e = h.at("e");
    const auto om = h.at("omega").get<std::vector<double>>();
    H.omega = Eigen::Map<const VecD>(om.data(), static_cast<Eigen::Index>(om.size()));
    const int d = H.n + 2 * H.m;
    H.M = MatD::Zero(d, d);
    const auto& rows = h.at("M");
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) H.M(r, c) = rows.at(r).at(c).get<double>();
    const int dc = h.at("degree_cap"), fc = h.at("fourier_cap");
    H.P = TFSeries(H.n, H.m, dc, fc);
    H.h = TFSeries(H.n, H.m, dc, fc);
    auto fill = [&](TFSeries& S, const nlohmann::json& terms) {
        for (const auto& t : terms) S.add(t.at(0).get<IVec>(), t.at(1).get<IVec>(), t.at(2).get<IVec>(), cd(t.at(3), t.at(4)));
    };
    fill(H.P, h.at("terms"));
    fill(H.h, h.at("h"));
    H.eps = h.at("eps");
    const auto& s = h.at("scales");
    H.scales.eps = s.at("eps");
    H.scales.eps_vec = s.at("eps_vec").get<std::vector<double>>();
    H.scales.mu_vec = s.at("mu_vec").get<std::vector<double>>();
    H.scales.ceiling = s.at("ceiling");
    return H;
}

namespace config_detail {

inline json read_hamiltonian(const json& raw) {
    Table t(raw, "hamiltonian");
    json out;
    const long long n = t.integer("n", 1), m = t.integer("m", 0);
    if (n < 1 || n > 4 || m < 0 || m > 3) t.fail("n", "dimensions must satisfy 1 <= n <= 4, 0 <= m <= 3");
    out["n"] = n;
    out["m"] = m;
    out["e"] = t.number("e", 0.0);
    if (!t.has("omega")) t.fail("omega", "required");
    out["omega"] = t.numbers("omega", {});
    const long long d = n + 2 * m;
    if (static_cast<long long>(out["omega"].size()) != n) t.fail("omega", "needs n = " + std::to_string(n) + " entries");
    if (!t.has("M")) t.fail("M", "required");
    const json& M = t.raw("M");
    if (!M.is_array() || static_cast<long long>(M.size()) != d) t.fail("M", "must be a " + std::to_string(d) + "x" + std::to_string(d) + " array");
    json Mo = json::array();
    for (const auto& row : M) {
        if (!row.is_array() || static_cast<long long>(row.size()) != d) t.fail("M", "rows must have " + std::to_string(d) + " numbers");
        json r = json::array();
        for (const auto& x : row) {
            if (!x.is_number()) t.fail("M", "entries must be numbers");
            r.push_back(x.get<double>());
        }
        Mo.push_back(r);
    }
    out["M"] = Mo;
    out["eps"] = t.number("eps", 1.0);
    out["degree_cap"] = t.integer("degree_cap", 4);
    out["fourier_cap"] = t.integer("fourier_cap", 6);
    auto terms = [&](const char* key) {
        json o = json::array();
        if (!t.has(key)) return o;
        const json& arr = t.raw(key);
        if (!arr.is_array()) t.fail(key, "must be an array of [k, i, j, re, im]");
        for (const auto& e : arr) {
            auto ints = [&](const json& v, long long len) {
                if (!v.is_array() || static_cast<long long>(v.size()) != len) return false;
                for (const auto& x : v)
                    if (!x.is_number_integer()) return false;
                return true;
            };
            if (!e.is_array() || e.size() != 5 || !ints(e[0], n) || !ints(e[1], n) || !ints(e[2], 2 * m) || !e[3].is_number() ||
                !e[4].is_number())
                t.fail(key, "each term is [k (n ints), i (n ints), j (2m ints), re, im]; bad entry " + e.dump());
            o.push_back({e[0], e[1], e[2], e[3].get<double>(), e[4].get<double>()});
        }
        return o;
    };
    out["terms"] = terms("terms");
    out["h"] = terms("h");
    Table s(t.sub("scales"), "hamiltonian.scales");
    const double se = s.number("eps", out["eps"].get<double>());
    out["scales"] = {{"eps", se},
                     {"eps_vec", s.numbers("eps_vec", {se})},
                     {"mu_vec", s.numbers("mu_vec", {se})},
                     {"ceiling", s.number("ceiling", std::max(1.0, se))}};
    s.finish();
    t.finish();
    try {
        NormalForm H = inline_normal_form(out);
        H.validate();
        H.scales.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("hamiltonian: ") + e.what());
    }
    return out;
}

inline KAMSchedule default_schedule(const std::string& preset, const json& ex, int n) {
    KAMSchedule s;
    if (preset == "example-6.3") s = presets::Example63{}.schedule();
    if (preset == "model") s = presets::model_schedule(ex.at("amplitude").get<double>());
    // the fixed default tau is too small once n(N+1) + 1 >= 3
    if (!(s.tau > n * (s.N + 1) + 1)) s.tau = n * (s.N + 1) + 1.5;
    return s;
}

inline KAMSchedule read_schedule(const json& raw, KAMSchedule s, int n) {
    Table t(raw, "schedule");
    auto dbl = [&](const char* k, double& v) { v = t.number(k, v); };
    auto itg = [&](const char* k, int& v) {
        const long long x = t.integer(k, v);
        if (x < 0 || x > 1000000) t.fail(k, "out of range");
        v = static_cast<int>(x);
    };
    dbl("r0", s.r0);
    dbl("s0", s.s0);
    dbl("gamma0", s.gamma0);
    dbl("eta0", s.eta0);
    dbl("mu0", s.mu0);
    dbl("tau", s.tau);
    itg("b", s.b);
    itg("l0", s.l0);
    itg("N", s.N);
    dbl("sigma", s.sigma);
    dbl("lambda0", s.lambda0);
    dbl("c0", s.c0);
    dbl("kappa", s.kappa);
    itg("max_steps", s.max_steps);
    dbl("target_norm", s.target_norm);
    dbl("target_rel", s.target_rel);
    itg("k_cap", s.k_cap);
    t.finish();
    try {
        s.validate(n);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    return s;
}

inline int preset_p(const std::string& preset, const json& ex) {
    if (preset == "example-6.1") return ex.at("n1").get<int>() + ex.at("nt").get<int>();
    if (preset == "example-6.2") return 1;
    if (preset == "example-6.3") return 2;
    if (preset == "identity") return ex.at("n").get<int>();
    return 0;
}

inline int preset_n(const std::string& preset, const json& ex, const json& ham) {
    if (preset == "example-6.1") return ex.at("nt");
    if (preset == "example-6.2") return 1;
    if (preset == "example-6.3") return 2;
    if (preset == "identity") return ex.at("n");
    if (preset == "inline") return ham.at("n");
    return 1;
}

// Lattices with rational spacing sit on resonances, so measure estimates default to the r2 sequence.
inline GridSpec default_grid(const std::string& mode, const std::string& preset, const json& ex) {
    GridSpec g;
    if (preset == "example-6.1") {
        presets::Example61 e;
        e.n1 = ex.at("n1");
        e.nt = ex.at("nt");
        e.normal = ex.at("normal").get<std::vector<double>>();
        e.tangent = ex.at("tangent").get<std::vector<double>>();
        g.lo = to_vec(e.lower());
        g.hi = to_vec(e.upper());
        g.count = 3;
    } else if (preset == "example-6.2") {
        g.lo = {0.8};
        g.hi = {1.2};
        g.count = 5;
    } else if (preset == "example-6.3") {
        g.lo = {1.0, 1.0};
        g.hi = {2.0, 2.0};
        g.count = 3;
    } else if (preset == "identity") {
        const int n = ex.at("n");
        g.kind = "r2";
        g.lo.assign(n, 1.0);
        g.hi.assign(n, 2.0);
        g.count = 10000;
    } else {
        g.count = 1;
    }
    if (mode == "measure" && preset != "identity") {
        g.kind = "r2";
        g.count = preset == "example-6.1" ? 64 : 256;
    }
    return g;
}

inline GridSpec read_grid(const json& raw, GridSpec g, int p) {
    Table t(raw, "grid");
    g.kind = t.string("kind", g.kind);
    if (g.kind != "lattice" && g.kind != "r2" && g.kind != "monte-carlo")
        t.fail("kind", "must be one of lattice, r2, monte-carlo; got '" + g.kind + "'");
    const long long c = t.integer("count", g.count);
    if (c < 1 || c > 10000000) t.fail("count", "must lie in 1..1e7");
    g.count = static_cast<int>(c);
    g.lo = t.numbers("lo", g.lo);
    g.hi = t.numbers("hi", g.hi);
    t.finish();
    if (static_cast<int>(g.lo.size()) != p || static_cast<int>(g.hi.size()) != p)
        t.fail("lo", "bounds need " + std::to_string(p) + " entries for this preset");
    for (int a = 0; a < p; ++a)
        if (!(g.lo[a] <= g.hi[a])) t.fail("lo", "each lower bound must not exceed the upper bound");
    return g;
}

inline std::vector<std::string> default_condition_ids(const std::string& preset) {
    if (preset == "example-6.1") return {"M1''", "M2''"};
    if (preset == "example-6.2") return {"S1", "S2", "S3", "S4", "S5", "S6", "S5'", "S6'"};
    if (preset == "example-6.3") return {"D", "C1", "M1'", "M2'"};
    if (preset == "identity") return {"D"};
    return {};
}

inline MeasureSpec read_measure(const json& raw) {
    MeasureSpec m;
    Table t(raw, "measure");
    m.gammas = t.numbers("gammas", m.gammas);
    m.tau = t.number("tau", m.tau);
    m.N = static_cast<int>(t.integer("N", m.N));
    m.cap = static_cast<int>(t.integer("cap", m.cap));
    t.finish();
    if (m.gammas.empty()) t.fail("gammas", "must not be empty");
    for (double g : m.gammas)
        if (!(g > 0.0)) t.fail("gammas", "entries must be positive");
    if (!(m.tau > 0.0)) t.fail("tau", "must be positive");
    if (m.N < 0 || m.N > 6) t.fail("N", "must lie in 0..6");
    if (m.cap < 1 || m.cap > 200) t.fail("cap", "must lie in 1..200");
    return m;
}

inline ConditionSpec read_conditions(const json& raw, const std::string& preset) {
    ConditionSpec c;
    Table t(raw, "conditions");
    c.ids = t.strings("ids", default_condition_ids(preset));
    c.N = static_cast<int>(t.integer("N", c.N));
    c.K_cap = static_cast<int>(t.integer("K_cap", c.K_cap));
    t.finish();
    static const std::set<std::string> frequency_ids{"D", "M1", "M2", "C1", "C1'", "C2", "M1'", "M2'", "M1''", "M2''"};
    static const std::set<std::string> s_ids{"S1", "S2", "S3", "S4", "S5", "S6", "S5'", "S6'"};
    for (const auto& id : c.ids) {
        const bool ok = preset == "example-6.2" ? s_ids.count(id) > 0 : frequency_ids.count(id) > 0;
        if (!ok) t.fail("ids", "condition '" + id + "' is not available for preset " + preset);
    }
    if (c.N < 1 || c.N > 4) t.fail("N", "must lie in 1..4");
    if (c.K_cap < 1 || c.K_cap > 20) t.fail("K_cap", "must lie in 1..20");
    return c;
}

inline KamSpec read_kam(const json& raw) {
    KamSpec k;
    Table t(raw, "kam");
    k.calibrate = t.boolean("calibrate", k.calibrate);
    k.translation = t.string("translation", k.translation);
    k.lie_rel_stop = t.number("lie_rel_stop", k.lie_rel_stop);
    t.finish();
    if (k.translation != "fixed-frequency" && k.translation != "isoenergetic" && k.translation != "drifted-frequency")
        t.fail("translation", "must be fixed-frequency, isoenergetic or drifted-frequency");
    if (!(k.lie_rel_stop > 0.0 && k.lie_rel_stop < 1.0)) t.fail("lie_rel_stop", "must lie in (0,1)");
    return k;
}

}  // namespace config_detail

// Resolve a raw configuration tree: strict keys, type checks, defaults from the preset.
inline RunConfig resolve_config(const nlohmann::json& raw) {
    using namespace config_detail;
    Table t(raw, "");
    RunConfig c;
    if (!t.has("mode")) t.fail("mode", "required (one of normalize, kam-run, measure, reduce-resonance, check-conditions)");
    c.mode = t.string("mode", "");
    if (std::find(known_modes().begin(), known_modes().end(), c.mode) == known_modes().end())
        t.fail("mode", "unknown mode '" + c.mode + "'");
    c.preset = t.string("preset", t.has("hamiltonian") ? "inline" : "");
    if (c.preset.empty()) t.fail("preset", "required (example-6.1, example-6.2, example-6.3, model, identity) or a [hamiltonian] table");
    if (std::find(known_presets().begin(), known_presets().end(), c.preset) == known_presets().end())
        t.fail("preset", "unknown preset '" + c.preset + "'");
    if (!mode_supports(c.mode, c.preset)) t.fail("mode", "mode " + c.mode + " is not available for preset " + c.preset);
    const long long seed = t.integer("seed", 0);
    if (seed < 0) t.fail("seed", "must be nonnegative");
    c.seed = static_cast<std::uint64_t>(seed);
    const long long w = t.integer("workers", 1);
    if (w < 1 || w > 256) t.fail("workers", "must lie in 1..256");
    c.workers = static_cast<int>(w);
    c.output = t.string("output", c.output);
    if (c.output.empty()) t.fail("output", "must not be empty");

    c.example = read_example(t.sub("example"), c.preset);
    if (c.preset == "inline") {
        if (!t.has("hamiltonian")) t.fail("hamiltonian", "required for preset inline");
        c.hamiltonian = read_hamiltonian(t.sub("hamiltonian"));
    } else if (t.has("hamiltonian")) {
        t.fail("hamiltonian", "only valid with preset inline");
    }
    const int n = preset_n(c.preset, c.example, c.hamiltonian);
    c.schedule = read_schedule(t.sub("schedule"), default_schedule(c.preset, c.example, n), n);
    c.kam = read_kam(t.sub("kam"));
    c.grid = read_grid(t.sub("grid"), default_grid(c.mode, c.preset, c.example), preset_p(c.preset, c.example));
    c.measure = read_measure(t.sub("measure"));
    c.conditions = read_conditions(t.sub("conditions"), c.preset);
    t.finish();
    return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json s = to_json(c.schedule);
    s.erase("chi");
    nlohmann::json j = {{"mode", c.mode},
                        {"preset", c.preset},
                        {"seed", c.seed},
                        {"workers", c.workers},
                        {"output", c.output},
                        {"example", c.example},
                        {"schedule", s},
                        {"kam", {{"calibrate", c.kam.calibrate}, {"translation", c.kam.translation}, {"lie_rel_stop", c.kam.lie_rel_stop}}},
                        {"grid", {{"kind", c.grid.kind}, {"count", c.grid.count}, {"lo", c.grid.lo}, {"hi", c.grid.hi}}},
                        {"measure", {{"gammas", c.measure.gammas}, {"tau", c.measure.tau}, {"N", c.measure.N}, {"cap", c.measure.cap}}},
                        {"conditions", {{"ids", c.conditions.ids}, {"N", c.conditions.N}, {"K_cap", c.conditions.K_cap}}}};
    if (!c.hamiltonian.is_null()) j["hamiltonian"] = c.hamiltonian;
    return j;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

inline std::string emit_json(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline std::string emit_toml(const RunConfig& c) {
    toml::table t;
    const nlohmann::json j = to_json(c);
    for (const auto& [k, v] : j.items()) config_detail::put_toml(t, k, v);
    std::ostringstream os;
    os << t << "\n";
    return os.str();
}

// ---------------- sources ----------------

inline nlohmann::json parse_config_text(const std::string& text, bool is_json, const std::string& name = "config") {
    if (is_json) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(name + ": " + e.what());
        }
    }
    try {
        return config_detail::from_toml(toml::parse(text, name));
    } catch (const toml::parse_error& e) {
        const auto& b = e.source().begin;
        throw ConfigError(name + ": line " + std::to_string(b.line) + ", column " + std::to_string(b.column) + ": " +
                          std::string(e.description()));
    }
}

// .json files are JSON; everything else is TOML
inline nlohmann::json read_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const bool is_json = path.size() >= 5 && config_detail::lower(path.substr(path.size() - 5)) == ".json";
    return parse_config_text(ss.str(), is_json, path);
}

inline constexpr const char* kEnvPrefix = "MSKAM_";

// MSKAM_A__B=value sets key b of table a. The value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_env_overrides(nlohmann::json& raw, const std::vector<std::pair<std::string, std::string>>& env) {
    if (raw.is_null()) raw = nlohmann::json::object();
    const std::string prefix = kEnvPrefix;
    for (const auto& [name, value] : env) {
        if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) continue;
        std::vector<std::string> segs;
        std::string rest = name.substr(prefix.size());
        std::size_t pos;
        while ((pos = rest.find("__")) != std::string::npos) {
            segs.push_back(rest.substr(0, pos));
            rest = rest.substr(pos + 2);
        }
        segs.push_back(rest);
        nlohmann::json* node = &raw;
        std::string table;
        for (std::size_t i = 0; i < segs.size(); ++i) {
            if (segs[i].empty()) throw ConfigError("malformed environment override " + name);
            const std::string key = config_detail::canonical_key(table, segs[i]);
            if (!node->is_object()) throw ConfigError("environment override " + name + ": '" + table + "' is not a table");
            if (i + 1 == segs.size()) {
                nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
                (*node)[key] = v.is_discarded() ? nlohmann::json(value) : v;
            } else {
                if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
                node = &(*node)[key];
                table = config_detail::join_path(table, key);
            }
        }
    }
}

inline std::vector<std::pair<std::string, std::string>> process_environment() {
    std::vector<std::pair<std::string, std::string>> out;
    for (char** e = environ; e && *e; ++e) {
        std::string s(*e);
        const auto eq = s.find('=');
        if (eq == std::string::npos) continue;
        if (s.rfind(kEnvPrefix, 0) == 0) out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// File, then MSKAM_ environment overrides, then resolution.
inline RunConfig load_config(const std::string& path, bool use_env = true) {
    nlohmann::json raw = read_config_file(path);
    if (use_env) apply_env_overrides(raw, process_environment());
    return resolve_config(raw);
}

}  // namespace mskam

#endif  // MSKAM_RUNCONFIG_HPP
