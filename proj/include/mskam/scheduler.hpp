#ifndef MSKAM_SCHEDULER_HPP
#define MSKAM_SCHEDULER_HPP

#include "mskam/kamstep.hpp"

#include <cstdio>
#include <fstream>
#include <thread>

namespace mskam {

struct RunOptions {
    StepOptions step;
    bool calibrate = false;  // estimate c0 from a warm-up step
    int workers = 1;
};

enum class RunStatus { converged, max_steps, rejected, excluded };

inline std::string to_string(RunStatus s) {
    switch (s) {
        case RunStatus::converged: return "converged";
        case RunStatus::max_steps: return "max-steps";
        case RunStatus::rejected: return "rejected";
        default: return "excluded";
    }
}

struct RunResult {
    NormalForm H_star;
    std::vector<StepCertificate> history;
    KAMSchedule schedule;  // as used, after calibration
    RunStatus status = RunStatus::max_steps;
    double initial_norm = 0.0;
    double final_norm = 0.0;
    double target = 0.0;
    std::vector<ExcludedShell> excluded_by;
    int excluded_at = -1;
    std::string diagnosis;
};

// c0 from one trial step: q = norm_after / norm_before^{1+sigma}, c0 = (safety q)^{1-lambda0} / 64, at most 1/64.
inline double calibrate_c0(const NormalForm& H0, const KAMSchedule& sched, const StepOptions& opt = {},
                           double safety = 10.0) {
    KAMSchedule trial = sched;
    trial.c0 = 1.0 / 64.0;
    NormalForm H = H0;
    H.dom.r = trial.r0;
    H.dom.s = trial.s0;
    H.dom.eta = trial.eta0;
    StepOutcome so = perform_step(H, trial, 0, opt);
    const StepCertificate& c = so.cert;
    if (!(c.norm_before > 0.0) || !(c.norm_after > 0.0) || !so.cert.excluded_shells.empty()) return sched.c0;
    const double q = c.norm_after / std::pow(c.norm_before, 1.0 + sched.sigma);
    const double c0 = std::pow(safety * q, 1.0 - sched.lambda0) / 64.0;
    return std::clamp(c0, 1e-12, 1.0 / 64.0);
}

// Iterate perform_step from the schedule's initial domain until the perturbation norm reaches the target,
// a step is rejected, or max_steps is exhausted.
inline RunResult run(const NormalForm& H0, const KAMSchedule& sched, const RunOptions& opts = {}) {
    sched.validate(H0.n);
    RunResult out;
    out.schedule = sched;
    if (opts.calibrate) out.schedule.c0 = calibrate_c0(H0, sched, opts.step);
    const KAMSchedule& sc = out.schedule;
    NormalForm H = H0;
    H.dom.r = sc.r0;
    H.dom.s = sc.s0;
    H.dom.eta = sc.eta0;
    out.initial_norm = weighted_norm(cd(H.eps) * H.P, H.dom.r, H.dom.s);
    out.target = sc.target_norm > 0.0 ? sc.target_norm : sc.target_rel * out.initial_norm;
    out.final_norm = out.initial_norm;
    out.H_star = H;
    if (out.initial_norm <= out.target) {
        out.status = RunStatus::converged;
        return out;
    }
    for (int nu = 0; nu < sc.max_steps; ++nu) {
        StepOutcome so = perform_step(H, sc, nu, opts.step);
        out.history.push_back(so.cert);
        if (!so.cert.excluded_shells.empty()) {
            out.status = RunStatus::excluded;
            out.excluded_by = so.cert.excluded_shells;
            out.excluded_at = nu;
            out.diagnosis = "excluded at step " + std::to_string(nu);
            return out;
        }
        if (!so.cert.accepted) {
            out.status = RunStatus::rejected;
            out.diagnosis = "step " + std::to_string(nu) + " rejected: " + so.cert.diagnosis;
            return out;
        }
        H = so.H_plus;
        out.H_star = H;
        out.final_norm = so.cert.norm_after;
        if (out.final_norm <= out.target) {
            out.status = RunStatus::converged;
            return out;
        }
    }
    out.status = RunStatus::max_steps;
    return out;
}

// One run per parameter node. A node leaves the surviving set at the first step whose floors exclude it
// and never re-enters.
struct NodeSetResult {
    std::vector<RunResult> runs;
    std::vector<int> surviving;
    bool empty() const { return surviving.empty(); }
};

inline NodeSetResult run_nodes(const std::vector<NormalForm>& nodes, const KAMSchedule& sched,
                               const RunOptions& opts = {}) {
    NodeSetResult out;
    out.runs.resize(nodes.size());
    const int w = std::max(1, std::min<int>(opts.workers, static_cast<int>(nodes.size())));
    std::vector<std::exception_ptr> errs(w);
    auto work = [&](int id) {
        try {
            for (std::size_t i = id; i < nodes.size(); i += w) out.runs[i] = run(nodes[i], sched, opts);
        } catch (...) {
            errs[id] = std::current_exception();
        }
    };
    if (w == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < w; ++i) pool.emplace_back(work, i);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (out.runs[i].status != RunStatus::excluded) out.surviving.push_back(static_cast<int>(i));
    return out;
}

// ---------------- output ----------------

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline const char* steps_csv_header() {
    return "nu,r,s,gamma,eta,mu,K,norm_P,norm_P_plus,excluded_shell_count,accepted";
}

inline void write_steps_csv(std::ostream& os, const std::vector<StepCertificate>& history) {
    os << steps_csv_header() << '\n';
    for (const auto& c : history)
        os << c.nu << ',' << fmt_g(c.r) << ',' << fmt_g(c.s) << ',' << fmt_g(c.gamma) << ',' << fmt_g(c.eta) << ','
           << fmt_g(c.mu) << ',' << c.K << ',' << fmt_g(c.norm_before) << ',' << fmt_g(c.norm_after) << ','
           << c.excluded_shells.size() << ',' << (c.accepted ? 1 : 0) << '\n';
}

inline void write_steps_csv(const std::string& path, const std::vector<StepCertificate>& history) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_steps_csv(f, history);
}

inline nlohmann::json to_json(const RunResult& r) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& c : r.history) hist.push_back(to_json(c));
    nlohmann::json j = {{"schedule", to_json(r.schedule)},
                        {"status", to_string(r.status)},
                        {"initial_norm", r.initial_norm},
                        {"final_norm", r.final_norm},
                        {"target", r.target},
                        {"steps", r.history.size()},
                        {"history", hist}};
    if (r.status == RunStatus::excluded) {
        j["excluded_at"] = r.excluded_at;
        j["excluded_by"] = to_json(r.excluded_by);
    }
    if (!r.diagnosis.empty()) j["diagnosis"] = r.diagnosis;
    return j;
}

}  // namespace mskam

#endif  // MSKAM_SCHEDULER_HPP
