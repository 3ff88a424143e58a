#ifndef MSKAM_PIPELINE_HPP
#define MSKAM_PIPELINE_HPP

#include "mskam/runconfig.hpp"

#include <filesystem>
#include <iostream>

namespace mskam {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_numeric = 3, exit_floor = 4 };

struct RunReport {
    int exit_code = exit_ok;
    std::string status = "ok";
    std::string stage;
    std::string error;
    nlohmann::json summary = nlohmann::json::object();
    std::vector<std::string> outputs;  // file names written, in order
};

namespace pipeline_detail {

using json = nlohmann::json;

inline std::vector<double> vec(const VecD& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json complex_list(const VecC& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back({v(i).real(), v(i).imag()});
    return a;
}

inline json matrix(const MatD& M) {
    json a = json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        std::vector<double> row(M.cols());
        for (Eigen::Index c = 0; c < M.cols(); ++c) row[c] = M(r, c);
        a.push_back(row);
    }
    return a;
}

// relative imaginary residue of the real form
inline double relative_reality(const TFSeries& S) { return reality_residue(S) / std::max(max_abs_coef(S), 1e-300); }

inline json normal_form_json(const NormalForm& H) {
    return {{"n", H.n},
            {"m", H.m},
            {"e", H.e},
            {"omega", vec(H.omega)},
            {"M", matrix(H.M)},
            {"h", to_json(H.h)},
            {"eps", H.eps},
            {"P", to_json(H.P)}};
}

class Writer {
public:
    Writer(std::string dir, RunReport& rep) : dir_(std::move(dir)), rep_(rep) { std::filesystem::create_directories(dir_); }

    void text(const std::string& name, const std::string& body) {
        const std::string path = (std::filesystem::path(dir_) / name).string();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << body;
        if (!f) throw std::runtime_error("write failed for " + path);
        rep_.outputs.push_back(name);
    }

    void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

    std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

private:
    std::string dir_;
    RunReport& rep_;
};

inline LambdaGrid make_grid(const RunConfig& c) {
    const int p = static_cast<int>(c.grid.lo.size());
    if (p == 0) return {};
    const VecD lo = Eigen::Map<const VecD>(c.grid.lo.data(), p), hi = Eigen::Map<const VecD>(c.grid.hi.data(), p);
    if (c.grid.kind == "r2") return LambdaGrid::r2(lo, hi, c.grid.count);
    if (c.grid.kind == "monte-carlo") return LambdaGrid::monte_carlo(lo, hi, c.grid.count, c.seed);
    return LambdaGrid::lattice(lo, hi, std::vector<int>(p, c.grid.count));
}

inline TranslationMode translation_of(const std::string& s) {
    if (s == "isoenergetic") return TranslationMode::isoenergetic;
    if (s == "drifted-frequency") return TranslationMode::drifted_frequency;
    return TranslationMode::fixed_frequency;
}

// frequency data and scales of the presets with a parameter dependence
inline std::pair<FrequencyData, ScaleSet> frequency_of(const RunConfig& c) {
    if (c.preset == "example-6.1") {
        auto ex = example61_of(c);
        return {ex.frequency(), ex.scales()};
    }
    if (c.preset == "example-6.3") {
        auto ex = example63_of(c);
        return {ex.frequency(), ex.scales()};
    }
    if (c.preset == "identity") return {presets::identity_frequency(c.example.at("n").get<int>()), presets::unit_scales()};
    throw ConfigError("preset " + c.preset + " has no parameter-dependent frequency");
}

inline VecD box_centre(const RunConfig& c) {
    VecD v(c.grid.lo.size());
    for (std::size_t a = 0; a < c.grid.lo.size(); ++a) v(a) = 0.5 * (c.grid.lo[a] + c.grid.hi[a]);
    return v;
}

inline json spectrum_json(const NormalForm& H) {
    NormalSpectrum sp = normal_spectrum(H.M, H.n, H.m);
    return {{"eigenvalues", complex_list(sp.eigenvalues)}, {"condition", sp.condition}, {"diagonalizable", sp.diagonalizable}};
}

// ---------------- modes ----------------

inline void normalize(const RunConfig& c, Writer& w, RunReport& rep) {
    json out;
    out["preset"] = c.preset;
    double residue = 0.0;
    if (c.preset == "example-6.2") {
        const auto ex = example62_of(c);
        ReductionOptions o;
        o.crit.workers = c.workers;
        ReducedForm R = ex.reduce(c.example.at("t").get<double>(), o);
        out["reduction"] = to_json(R);
        out["det_K0"] = R.frame.det;
        residue = R.reality_residue;
        rep.summary["det_K0"] = R.frame.det;
        rep.summary["torus_type"] = R.torus_type;
    } else {
        NormalForm H;
        VecD lam;
        if (c.preset == "example-6.1") {
            const auto ex = example61_of(c);
            lam = ex.nominal();
            H = ex.normal_form(lam);
            // M22 J eigenvalues of the oscillator block are +-i w_j^2
            json expected = json::array();
            double err = 0.0;
            const VecC ev = normal_spectrum(H.M, H.n, H.m).eigenvalues;
            for (int j = 0; j < ex.n1; ++j) {
                const double w2 = lam(j) * lam(j);
                expected.push_back({0.0, w2});
                expected.push_back({0.0, -w2});
                for (double sgn : {1.0, -1.0}) {
                    double best = std::numeric_limits<double>::infinity();
                    for (Eigen::Index i = 0; i < ev.size(); ++i) best = std::min(best, std::abs(ev(i) - cd(0.0, sgn * w2)));
                    err = std::max(err, best);
                }
            }
            out["expected_eigenvalues"] = expected;
            out["eigenvalue_error"] = err;
            rep.summary["eigenvalue_error"] = err;
        } else if (c.preset == "example-6.3") {
            const auto ex = example63_of(c);
            lam = box_centre(c);
            H = ex.normal_form(lam);
        } else if (c.preset == "model") {
            H = presets::model_system(c.example.at("amplitude").get<double>(), c.example.at("degree_cap").get<int>(),
                                      c.example.at("fourier_cap").get<int>());
        } else {
            H = inline_normal_form(c.hamiltonian);
        }
        H.validate();
        if (lam.size()) out["lambda"] = vec(lam);
        out["normal_form"] = normal_form_json(H);
        out["normal_spectrum"] = spectrum_json(H);
        residue = std::max(relative_reality(H.P), relative_reality(H.h));
    }
    out["reality_residue"] = residue;
    rep.summary["reality_residue"] = residue;
    w.json_file("reduction.json", out);
    if (!(residue <= 1e-12)) {
        rep.exit_code = exit_numeric;
        rep.status = "reality-residue";
        rep.error = "normal form imaginary residue " + std::to_string(residue) + " exceeds 1e-12";
    }
}

inline std::string steps_with_nodes(const std::vector<RunResult>& runs) {
    std::ostringstream os;
    os << "node," << steps_csv_header() << '\n';
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::ostringstream body;
        write_steps_csv(body, runs[i].history);
        std::istringstream lines(body.str());
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line))
            if (!line.empty()) os << i << ',' << line << '\n';
    }
    return os.str();
}

inline void kam_run(const RunConfig& c, Writer& w, RunReport& rep) {
    std::vector<NormalForm> nodes;
    LambdaGrid grid;
    if (c.preset == "example-6.3") {
        const auto ex = example63_of(c, true);
        grid = make_grid(c);
        const int dc = c.example.at("degree_cap"), fc = c.example.at("fourier_cap");
        for (const auto& lam : grid.nodes) nodes.push_back(ex.normal_form(lam, dc, fc));
    } else if (c.preset == "model") {
        nodes.push_back(presets::model_system(c.example.at("amplitude").get<double>(), c.example.at("degree_cap").get<int>(),
                                              c.example.at("fourier_cap").get<int>()));
    } else {
        nodes.push_back(inline_normal_form(c.hamiltonian));
    }
    for (const auto& H : nodes) H.validate();
    RunOptions opt;
    opt.workers = c.workers;
    opt.calibrate = c.kam.calibrate;
    opt.step.mode = translation_of(c.kam.translation);
    opt.step.lie_rel_stop = c.kam.lie_rel_stop;
    NodeSetResult res = run_nodes(nodes, c.schedule, opt);
    w.text("steps.csv", steps_with_nodes(res.runs));

    json per = json::array();
    int rejected = 0, converged = 0;
    double residue = 0.0;
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
        const RunResult& r = res.runs[i];
        json j = {{"node", i},
                  {"status", to_string(r.status)},
                  {"steps", r.history.size()},
                  {"initial_norm", r.initial_norm},
                  {"final_norm", r.final_norm}};
        if (i < grid.size()) j["lambda"] = vec(grid.nodes[i]);
        if (!r.diagnosis.empty()) j["diagnosis"] = r.diagnosis;
        if (r.status == RunStatus::excluded) j["excluded_by"] = to_json(r.excluded_by);
        rejected += r.status == RunStatus::rejected;
        converged += r.status == RunStatus::converged;
        if (r.status != RunStatus::excluded) residue = std::max(residue, relative_reality(r.H_star.P));
        per.push_back(j);
    }
    rep.summary["nodes"] = per;
    rep.summary["surviving"] = res.surviving.size();
    rep.summary["converged"] = converged;
    rep.summary["rejected"] = rejected;
    rep.summary["schedule"] = to_json(res.runs.empty() ? c.schedule : res.runs.front().schedule);
    rep.summary["reality_residue"] = residue;
    if (res.empty()) {
        rep.exit_code = exit_floor;
        rep.status = "exclusion-empty";
        rep.error = "every parameter node was excluded by the nonresonance floors";
    } else if (rejected > 0) {
        rep.exit_code = exit_numeric;
        rep.status = "step-rejected";
        rep.error = std::to_string(rejected) + " node(s) had a rejected step";
    } else if (!(residue <= 1e-12)) {
        rep.exit_code = exit_numeric;
        rep.status = "reality-residue";
        rep.error = "transformed normal form imaginary residue exceeds 1e-12";
    }
}

inline void measure(const RunConfig& c, Writer& w, RunReport& rep) {
    auto [f, scales] = frequency_of(c);
    LambdaGrid grid = make_grid(c);
    MeasureTable t = estimate_excluded_measure(f, scales, grid, c.measure.gammas, c.measure.tau, c.measure.N, c.measure.cap,
                                               c.workers);
    std::ostringstream os;
    write_measure_csv(os, t);
    w.text("measure.csv", os.str());
    rep.summary["measure"] = to_json(t);
    rep.summary["grid_size"] = grid.size();
    bool all = !t.rows.empty();
    for (const auto& r : t.rows) all = all && r.excluded_fraction >= 1.0;
    if (all) {
        rep.exit_code = exit_floor;
        rep.status = "exclusion-empty";
        rep.error = "every grid node is excluded at every gamma";
    }
}

inline ConditionOptions condition_options(const RunConfig& c) {
    ConditionOptions o;
    o.N = c.conditions.N;
    o.K_cap = c.conditions.K_cap;
    return o;
}

inline void check_conditions_mode(const RunConfig& c, Writer& w, RunReport& rep) {
    json out;
    out["preset"] = c.preset;
    ConditionReport report;
    LambdaGrid grid = make_grid(c);
    if (c.preset == "example-6.2") {
        const auto ex = example62_of(c);
        ReductionOptions ro;
        ro.crit.workers = c.workers;
        SConditionOptions so;
        so.cond = condition_options(c);
        ConditionReport all = verify_s_conditions(ex.family(ro), grid, so);
        for (const auto& id : c.conditions.ids) report.verdicts[id] = all.verdicts.at(id);
    } else {
        auto [f, scales] = frequency_of(c);
        const ConditionOptions o = condition_options(c);
        for (const auto& id : c.conditions.ids) report.merge(check_conditions(f, scales, grid, id, o));
        if (f.m > 0) {
            VecD lam = c.preset == "example-6.1" ? example61_of(c).nominal() : box_centre(c);
            NormalSpectrum sp = normal_spectrum(f.M(lam), f.n, f.m);
            out["normal_spectrum"] = {{"lambda", vec(lam)},
                                      {"eigenvalues", complex_list(sp.eigenvalues)},
                                      {"diagonalizable", sp.diagonalizable}};
        }
    }
    out["grid"] = {{"kind", c.grid.kind}, {"size", grid.size()}};
    out["verdicts"] = to_json(report);
    out["all_hold"] = report.all();
    w.json_file("conditions.json", out);
    json brief = json::object();
    for (const auto& [id, v] : report.verdicts) brief[id] = v.holds;
    rep.summary["verdicts"] = brief;
    rep.summary["all_hold"] = report.all();
}

inline void reduce_resonance(const RunConfig& c, Writer& w, RunReport& rep) {
    const auto ex = example62_of(c);
    const double t = c.example.at("t");
    ResonantSystem sys = ex.system();
    ResonanceFrame frame = ex.frame();
    ReductionOptions ro;
    ro.crit.workers = c.workers;
    const VecD y0 = ex.base_point(t);
    ResonanceDetection det = detect_resonance(sys.frequency(y0));
    std::vector<ReducedForm> forms = reduce_all_critical_points(sys, frame, y0, ro);
    json red = json::array();
    int elliptic = 0, hyperbolic = 0;
    double residue = 0.0;
    for (const auto& R : forms) {
        red.push_back(to_json(R));
        elliptic += R.torus_type == "elliptic";
        hyperbolic += R.torus_type == "hyperbolic";
        residue = std::max(residue, R.reality_residue);
    }
    json detection = {{"m0", det.m0}, {"generators", to_json(det.generators)}, {"tol", det.tol}, {"cap", det.cap},
                      {"residuals", det.residuals}, {"warnings", det.warnings}};
    json out = {{"preset", c.preset},
                {"y0", vec(y0)},
                {"detection", detection},
                {"frame", to_json(frame)},
                {"det_K0", frame.det},
                {"families", forms.size()},
                {"expected_families", 1 << frame.m0},
                {"reductions", red},
                {"reality_residue", residue}};
    w.json_file("reduction.json", out);

    LambdaGrid grid = make_grid(c);
    SConditionOptions so;
    so.cond = condition_options(c);
    ConditionReport all = verify_s_conditions(ex.family(ro), grid, so);
    ConditionReport report;
    for (const auto& id : c.conditions.ids) report.verdicts[id] = all.verdicts.at(id);
    w.json_file("conditions.json", {{"preset", c.preset},
                                    {"grid", {{"kind", c.grid.kind}, {"size", grid.size()}}},
                                    {"verdicts", to_json(report)},
                                    {"all_hold", report.all()}});
    rep.summary["det_K0"] = frame.det;
    rep.summary["families"] = forms.size();
    rep.summary["elliptic"] = elliptic;
    rep.summary["hyperbolic"] = hyperbolic;
    rep.summary["s_conditions_hold"] = report.all();
    rep.summary["reality_residue"] = residue;
    if (!(residue <= 1e-12)) {
        rep.exit_code = exit_numeric;
        rep.status = "reality-residue";
        rep.error = "reduced normal form imaginary residue exceeds 1e-12";
    }
}

inline int exit_code_of(const std::exception_ptr& e, std::string& msg) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        msg = x.what();
        return exit_config;
    } catch (const StructuralError& x) {
        msg = x.what();
        return exit_config;
    } catch (const FloorError& x) {
        msg = x.what();
        return exit_floor;
    } catch (const std::exception& x) {
        msg = x.what();
        return exit_numeric;
    } catch (...) {
        msg = "unknown failure";
        return exit_numeric;
    }
}

}  // namespace pipeline_detail

inline nlohmann::json manifest_json(const RunConfig& c, const RunReport& rep, const std::string& dir) {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& name : rep.outputs) {
        std::error_code ec;
        const auto bytes = std::filesystem::file_size(std::filesystem::path(dir) / name, ec);
        outs.push_back({{"file", name}, {"bytes", ec ? 0 : bytes}});
    }
    nlohmann::json j = {{"tool", "mskam"},
                        {"version", kToolVersion},
                        {"mode", c.mode},
                        {"preset", c.preset},
                        {"seed", c.seed},
                        {"workers", c.workers},
                        {"config", to_json(c)},
                        {"outputs", outs},
                        {"exit_code", rep.exit_code},
                        {"status", rep.status},
                        {"summary", rep.summary}};
    if (!rep.stage.empty()) j["failed_stage"] = rep.stage;
    if (!rep.error.empty()) j["message"] = rep.error;
    return j;
}

// Run one mode, write its outputs and manifest.json into c.output, and return the exit code.
inline RunReport run_mode(const RunConfig& c, std::ostream& log = std::cerr) {
    using namespace pipeline_detail;
    RunReport rep;
    rep.stage = "output";
    try {
        Writer w(c.output, rep);
        rep.stage = c.mode;
        if (c.mode == "normalize")
            normalize(c, w, rep);
        else if (c.mode == "kam-run")
            kam_run(c, w, rep);
        else if (c.mode == "measure")
            measure(c, w, rep);
        else if (c.mode == "check-conditions")
            check_conditions_mode(c, w, rep);
        else
            reduce_resonance(c, w, rep);
        if (rep.exit_code == exit_ok) rep.stage.clear();
    } catch (...) {
        std::string msg;
        rep.exit_code = exit_code_of(std::current_exception(), msg);
        rep.status = rep.exit_code == exit_config ? "config-error" : rep.exit_code == exit_floor ? "floor" : "numerical-failure";
        rep.error = msg;
    }
    if (rep.exit_code != exit_ok) log << "mskam: stage " << rep.stage << ": " << rep.error << "\n";
    try {
        std::filesystem::create_directories(c.output);
        const std::string path = (std::filesystem::path(c.output) / "manifest.json").string();
        std::ofstream f(path, std::ios::binary);
        f << manifest_json(c, rep, c.output).dump(2) << "\n";
        if (!f) throw std::runtime_error("cannot write " + path);
    } catch (const std::exception& e) {
        log << "mskam: stage manifest: " << e.what() << "\n";
        if (rep.exit_code == exit_ok) rep.exit_code = exit_numeric;
    }
    return rep;
}

}  // namespace mskam

#endif  // MSKAM_PIPELINE_HPP
