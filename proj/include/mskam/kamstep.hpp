#ifndef MSKAM_KAMSTEP_HPP
#define MSKAM_KAMSTEP_HPP

#include "mskam/homological.hpp"
#include "mskam/schedule.hpp"

namespace mskam {

// ---------------- Lie series ----------------

struct LieSeriesResult {
    TFSeries H_bar;
    TFSeries remainder;  // H_bar - H - {N,F}
    int terms = 0;
    double budget = 0.0;
    double dropped = 0.0;
    double max_ratio = 0.0;  // largest ||T_j|| / ||T_{j-1}||, j >= 2
};

// H o phi_F^1 = sum_j ad_F^j H / j!, with ad_F G = {G,F}.
// Stops once a term is below rel_stop times the second-order size and the geometric tail estimate
// is at rounding level; the tail estimate is returned in `dropped`.
inline LieSeriesResult lie_series(const TFSeries& H, const TFSeries& F, const TFSeries& N, double r, double s,
                                  double rel_stop = 1e-3, int max_terms = 40) {
    LieSeriesResult out;
    out.H_bar = H;
    out.remainder = H.empty_like();
    if (F.is_zero()) return out;
    TFSeries NF = poisson_bracket(N, F);
    TFSeries T = poisson_bracket(H, F);
    out.H_bar += T;
    out.remainder += T - NF;
    double second = weighted_norm(T - NF, r, s);
    double prev = weighted_norm(T, r, s);
    out.terms = 1;
    for (int j = 2; j <= max_terms; ++j) {
        T = poisson_bracket(T, F);
        T *= cd(1.0 / j);
        const double tn = weighted_norm(T, r, s);
        out.H_bar += T;
        out.remainder += T;
        out.terms = j;
        if (j == 2) second += tn;
        out.budget = second;
        const double q = prev > 0.0 ? tn / prev : 0.0;
        out.max_ratio = std::max(out.max_ratio, q);
        prev = tn;
        if (tn == 0.0) return out;
        if (q < 1.0 && tn < rel_stop * second) {
            const double tail = tn * q / (1.0 - q);
            if (tail <= 1e-16 * std::max(second, 1e-300) || tn <= 1e-300) {
                out.dropped = tail;
                return out;
            }
        }
    }
    throw ConvergenceError("Lie series did not converge", prev);
}

struct LieTransformResult {
    NormalForm H_bar;
    TFSeries remainder;
    int terms = 0;
    double dropped = 0.0;
};

inline LieTransformResult lie_transform(const NormalForm& H, const TFSeries& F, double rel_stop = 1e-3) {
    TFSeries N = integrable_series(H);
    TFSeries Hs = N;
    Hs += cd(H.eps) * H.P;
    LieSeriesResult ls = lie_series(Hs, F, N, H.dom.r, H.dom.s, rel_stop);
    LieTransformResult out;
    out.H_bar = H;
    out.H_bar.P = cd(1.0 / H.eps) * (ls.H_bar - N);
    out.H_bar.P.prune(0.0);
    out.remainder = ls.remainder;
    out.terms = ls.terms;
    out.dropped = ls.dropped;
    return out;
}

// ---------------- one step ----------------

enum class TranslationMode { fixed_frequency, isoenergetic, drifted_frequency };

inline std::string to_string(TranslationMode m) {
    switch (m) {
        case TranslationMode::fixed_frequency: return "fixed-frequency";
        case TranslationMode::isoenergetic: return "isoenergetic";
        default: return "drifted-frequency";
    }
}

struct StepParams {
    int nu = 0;
    double r = 0, s = 0, r_plus = 0, s_plus = 0, eta_plus = 0;
    double gamma = 0, gamma_plus = 0, eta = 0, mu = 0, alpha = 0;
    long K = 0;
    int K_used = 0;
    double tau = 3.0;
    int b = 1, l0 = 1;
    double sigma = 1.0 / 12.0;
    double contraction_const = 1.0;  // (64 c0)^{1/(1-lambda0)}
};

inline int solved_shell_cap(long K_plus, int k_cap, int fourier_cap) {
    const long cap = k_cap > 0 ? k_cap : fourier_cap;
    return static_cast<int>(std::max(1L, std::min(K_plus, cap)));
}

inline StepParams step_params(const KAMSchedule& sc, int nu, const AnalyticDomain& dom, int fourier_cap) {
    const SequenceValues a = sequence_at(sc, nu), p = sequence_at(sc, nu + 1);
    StepParams P;
    P.nu = nu;
    P.r = dom.r;
    P.s = dom.s;
    P.r_plus = dom.r - (a.r - p.r);
    P.s_plus = a.alpha * dom.s / 8.0;
    P.eta = dom.eta;
    P.eta_plus = dom.eta - (a.eta - p.eta);
    P.gamma = a.gamma;
    P.gamma_plus = p.gamma;
    P.mu = a.mu;
    P.alpha = a.alpha;
    P.K = a.K_plus;
    P.K_used = solved_shell_cap(a.K_plus, sc.k_cap, fourier_cap);
    P.tau = sc.tau;
    P.b = sc.b;
    P.l0 = sc.l0;
    P.sigma = sc.sigma;
    P.contraction_const = std::pow(64.0 * sc.c0, 1.0 / (1.0 - sc.lambda0));
    return P;
}

struct StepOptions {
    TranslationMode mode = TranslationMode::fixed_frequency;
    double lie_rel_stop = 1e-3;
    double negligible = 0.0;  // perturbations with norm at or below this are treated as zero
};

struct StepCertificate {
    int nu = 0;
    double r = 0, s = 0, gamma = 0, eta = 0, mu = 0;
    long K = 0;
    int K_used = 0;
    std::vector<ExcludedShell> excluded_shells;
    double norm_before = 0.0;
    double norm_after = 0.0;
    double drift_e = 0.0, drift_omega = 0.0, drift_M = 0.0;
    double drift_bound = 0.0;
    bool drift_within_bound = true;
    double homological_residual = 0.0;
    double homological_reference = 0.0;
    double remainder_budget = 0.0;
    double lie_dropped = 0.0;
    int lie_terms = 0;
    double lie_ratio = 0.0;
    double omega_error = 0.0;
    double reality_residue = 0.0;
    double resonant_leftover = 0.0;
    TranslationShift translation;
    std::string mode;
    AssumptionReport assumptions;
    bool accepted = false;
    std::string diagnosis;
};

inline nlohmann::json to_json(const StepCertificate& c) {
    return {{"nu", c.nu},
            {"r", c.r},
            {"s", c.s},
            {"gamma", c.gamma},
            {"eta", c.eta},
            {"mu", c.mu},
            {"K", c.K},
            {"K_used", c.K_used},
            {"excluded_shells", to_json(c.excluded_shells)},
            {"norm_before", c.norm_before},
            {"norm_after", c.norm_after},
            {"drift", {{"e", c.drift_e}, {"omega", c.drift_omega}, {"M", c.drift_M}, {"bound", c.drift_bound},
                       {"within_bound", c.drift_within_bound}}},
            {"homological_residual", c.homological_residual},
            {"homological_reference", c.homological_reference},
            {"remainder_budget", c.remainder_budget},
            {"lie_dropped", c.lie_dropped},
            {"lie_terms", c.lie_terms},
            {"lie_ratio", c.lie_ratio},
            {"omega_error", c.omega_error},
            {"reality_residue", c.reality_residue},
            {"resonant_leftover", c.resonant_leftover},
            {"translation", {{"y0", std::vector<double>(c.translation.y0.data(), c.translation.y0.data() + c.translation.y0.size())},
                             {"z0", std::vector<double>(c.translation.z0.data(), c.translation.z0.data() + c.translation.z0.size())},
                             {"t", c.translation.t},
                             {"iterations", c.translation.iterations}}},
            {"mode", c.mode},
            {"assumptions", to_json(c.assumptions)},
            {"accepted", c.accepted},
            {"diagnosis", c.diagnosis}};
}

struct StepOutcome {
    NormalForm H_plus;
    StepCertificate cert;
    GeneratorF F;
};

namespace detail {

inline double max_partial_norm(const TFSeries& F, char which, double r, double s) {
    double v = 0.0;
    const int cnt = which == 'z' ? 2 * F.m : F.n;
    for (int a = 0; a < cnt; ++a) {
        TFSeries D = which == 'x' ? d_x(F, a) : which == 'y' ? d_y(F, a) : d_z(F, a);
        v = std::max(v, weighted_norm(D, r, s));
    }
    return v;
}

inline TFSeries k_zero_part(const TFSeries& S, int lo, int hi) {
    TFSeries out = S.empty_like();
    for (const auto& [mi, c] : S.terms)
        if (mi.k_is_zero() && mi.degree() >= lo && mi.degree() <= hi) out.terms.emplace(mi, c);
    return out;
}

inline TFSeries real_coefficients(const TFSeries& S) {
    TFSeries out = S.empty_like();
    for (const auto& [mi, c] : S.terms)
        if (c.real() != 0.0) out.terms.emplace(mi, c.real());
    return out;
}

inline void set_literal_sequence(StepCertificate& c, const StepParams& p) {
    c.nu = p.nu;
    c.r = p.r;
    c.s = p.s;
    c.gamma = p.gamma;
    c.eta = p.eta;
    c.mu = p.mu;
    c.K = p.K;
    c.K_used = p.K_used;
}

}  // namespace detail

inline StepOutcome perform_step(const NormalForm& H, const StepParams& p, const StepOptions& opt = {}) {
    H.validate();
    StepOutcome out;
    StepCertificate& cert = out.cert;
    detail::set_literal_sequence(cert, p);
    cert.mode = to_string(opt.mode);
    cert.drift_bound = std::pow(p.gamma, 3.0 * p.b) * p.mu / std::pow(std::max(p.eta, 1e-300), p.l0);
    const int n = H.n, m = H.m;
    const double eps = H.eps;
    NormalForm Hp = H;
    Hp.dom.r = p.r_plus;
    Hp.dom.s = p.s_plus;
    Hp.dom.eta = p.eta_plus;
    out.F.n = n;
    out.F.m = m;
    out.F.K_plus = p.K_used;

    cert.norm_before = weighted_norm(cd(eps) * H.P, p.r, p.s);
    if (H.P.is_zero() || cert.norm_before <= opt.negligible) {
        for (const char* id : {"H1", "H2", "H3", "H4", "H5", "H6", "H7", "H8"})
            cert.assumptions.set(id, 0.0, 0.0, true, "no perturbation");
        cert.norm_after = weighted_norm(cd(eps) * H.P, p.r_plus, p.s_plus);
        cert.accepted = true;
        out.H_plus = Hp;
        return out;
    }

    Truncation tr = truncate(H.P, p.K_used);
    TFSeries R = degree_part(tr.R, 0, 2);
    FloorSpec fl{p.gamma, p.tau, H.scales.min_eps(), H.scales.min_all()};
    HomologicalResult hr = solve_homological(H, R, p.K_used, fl, p.r, p.s);
    if (!hr.excluded.empty()) {
        cert.excluded_shells = hr.excluded;
        cert.diagnosis = "excluded shells";
        out.H_plus = H;
        return out;
    }
    cert.homological_residual = hr.residual_norm;
    cert.homological_reference = hr.reference_norm;
    out.F = hr.F;
    TFSeries F = hr.F.to_series(H.P.degree_cap, H.P.fourier_cap);

    TFSeries N = integrable_series(H);
    TFSeries Hs = N;
    Hs += cd(eps) * H.P;
    LieSeriesResult ls;
    try {
        ls = lie_series(Hs, F, N, p.r, p.s, opt.lie_rel_stop);
    } catch (const ConvergenceError& e) {
        cert.diagnosis = std::string("flow domain violation: ") + e.what();
        out.H_plus = H;
        return out;
    }
    cert.remainder_budget = ls.budget;
    cert.lie_dropped = ls.dropped;
    cert.lie_terms = ls.terms;
    cert.lie_ratio = ls.max_ratio;
    const TFSeries& Hbar = ls.H_bar;

    // translation of the action origin
    const IVec k0(n, 0);
    QuadCoeffs c = extract_quadratic(Hbar, k0, 0, 1);
    MatD Mt = quadratic_form_of(Hbar);
    std::optional<TFSeries> ht = detail::real_coefficients(detail::k_zero_part(Hbar, 3, Hbar.degree_cap));
    if (ht->terms.empty()) ht.reset();
    VecD p010 = c.c10.real() - H.omega;
    VecD p001 = c.c01.real();
    TranslationShift sh;
    try {
        if (opt.mode == TranslationMode::fixed_frequency) {
            sh = solve_translation(Mt, ht, n, p010, p001, 1.0);
        } else if (opt.mode == TranslationMode::isoenergetic) {
            sh = solve_isoenergetic_translation(Mt, H.omega, ht, c.c00.real() - H.e, p010, p001, 1.0, 0.0, Mt);
        } else {
            sh.y0 = VecD::Zero(n);
            sh.z0 = m ? VecD(Mt.bottomRightCorner(2 * m, 2 * m).fullPivLu().solve(-p001)) : VecD();
        }
    } catch (const std::exception& e) {
        cert.diagnosis = std::string("translation failed: ") + e.what();
        out.H_plus = H;
        return out;
    }
    cert.translation = sh;
    TFSeries Hplus = shift(Hbar, sh.y0, sh.z0);
    cert.reality_residue = reality_residue(Hplus) / std::max(max_abs_coef(Hplus), 1e-300);

    // re-assemble the normal form
    QuadCoeffs cp = extract_quadratic(Hplus, k0, 0, 1);
    Hp.e = cp.c00.real();
    const VecD w_at_origin = cp.c10.real();
    if (opt.mode == TranslationMode::fixed_frequency) {
        Hp.omega = H.omega;
        cert.omega_error = (w_at_origin - H.omega).cwiseAbs().maxCoeff();
    } else if (opt.mode == TranslationMode::isoenergetic) {
        Hp.omega = (1.0 - sh.t) * H.omega;
        cert.omega_error = (w_at_origin - Hp.omega).cwiseAbs().maxCoeff();
    } else {
        Hp.omega = w_at_origin;
    }
    Hp.M = quadratic_form_of(Hplus);
    Hp.M = 0.5 * (Hp.M + Hp.M.transpose()).eval();
    Hp.h = detail::real_coefficients(detail::k_zero_part(Hplus, 3, Hplus.degree_cap));
    TFSeries Nplus = integrable_series(Hp);
    TFSeries Pp = Hplus - Nplus;
    Pp.spill = Hplus.spill;
    Pp = real_part_symmetrized(Pp);
    Pp.prune(0.0);
    Pp *= cd(1.0 / eps);
    Pp.add_spill(0, 0, ls.dropped / eps);
    Hp.P = Pp;

    cert.norm_after = weighted_norm(cd(eps) * Hp.P, p.r_plus, p.s_plus);
    cert.resonant_leftover = weighted_norm(degree_part(average(cd(eps) * Hp.P), 0, 2), p.r_plus, p.s_plus);
    cert.drift_e = std::abs(Hp.e - H.e);
    cert.drift_omega = (Hp.omega - H.omega).norm();
    cert.drift_M = (Hp.M - H.M).norm();
    cert.drift_within_bound = cert.drift_M <= cert.drift_bound;

    // a-posteriori forms of (H1)-(H8)
    AssumptionReport& A = cert.assumptions;
    const double normP = std::max(cert.norm_before, 1e-300);
    {
        TFSeries fourier_tail = H.P.empty_like();
        for (const auto& [mi, cc] : H.P.terms)
            if (mi.kl1() > p.K_used) fourier_tail.terms.emplace(mi, cc);
        for (const auto& [key, w] : H.P.spill)
            if (key.first > p.K_used) fourier_tail.spill[key] = w;
        const double t1 = weighted_norm(cd(eps) * fourier_tail, p.r_plus, p.s);
        A.set("H1", t1, p.mu * normP, t1 <= p.mu * normP, "Fourier tail beyond the solved shells");
        TFSeries high = degree_part(H.P, 3, H.P.degree_cap);
        for (const auto& [key, w] : H.P.spill)
            if (key.second >= 3 && key.first <= p.K_used) high.spill[key] = w;
        const double t2 = weighted_norm(cd(eps) * high, p.r, p.s_plus);
        A.set("H2", t2, p.mu * normP, t2 <= p.mu * normP, "Taylor tail on the shrunk action domain");
    }
    {
        const double mf = H.scales.min_mu();
        Eigen::SelfAdjointEigenSolver<MatD> es(Hp.M.transpose() * Hp.M, Eigen::EigenvaluesOnly);
        const double lm = es.eigenvalues().minCoeff();
        A.set("H3", lm, 0.5 * mf * mf, lm >= 0.5 * mf * mf, "half floor of the normal matrix");
    }
    A.set("H4", hr.residual_norm, 1e-10 * hr.reference_norm,
          hr.residual_norm <= 1e-10 * hr.reference_norm && !hr.ill_conditioned, "homological identity residual");
    const double dyF = detail::max_partial_norm(F, 'y', p.r, p.s);
    A.set("H5", dyF, (p.r - p.r_plus) / 8.0, dyF < (p.r - p.r_plus) / 8.0, "angle displacement of the flow");
    A.set("H6", ls.max_ratio, 0.5, ls.max_ratio < 0.5, "geometric convergence of the Lie series");
    A.set("H7", p.mu, p.alpha / 8.0, p.mu < p.alpha / 8.0);
    const double bound8 = p.contraction_const * std::pow(normP, 1.0 + p.sigma);
    A.set("H8", cert.norm_after, bound8, cert.norm_after <= bound8, "super-linear contraction");
    cert.accepted = A.all();
    if (!cert.accepted) {
        cert.diagnosis = "assumptions failed:";
        for (const auto& f : A.failing()) cert.diagnosis += " " + f;
    }
    out.H_plus = Hp;
    return out;
}

inline StepOutcome perform_step(const NormalForm& H, const KAMSchedule& sched, int nu, const StepOptions& opt = {}) {
    return perform_step(H, step_params(sched, nu, H.dom, H.P.fourier_cap), opt);
}

// ---------------- preprocessing ----------------

inline int preprocessing_steps(double a, double sigma) {
    if (!(a > 0.0) || !(sigma > 0.0 && sigma < 1.0)) throw DomainError("preprocessing needs a > 0 and 0 < sigma < 1");
    return static_cast<int>(std::floor(std::log(9.0) / std::log(1.0 + (1.0 - sigma) / a))) + 1;
}

struct StepRejected : std::runtime_error {
    int step;
    StepCertificate cert;
    StepRejected(int s, StepCertificate c)
        : std::runtime_error("preprocessing step " + std::to_string(s) + " rejected: " + c.diagnosis), step(s),
          cert(std::move(c)) {}
};

struct PreprocessResult {
    NormalForm H;
    std::vector<StepCertificate> history;
    std::vector<double> eps_ledger;  // eps_j with mu_j^a = eps_j
    std::vector<double> measured;    // ||eps P_j|| on the domain of step j, j = 0..steps
    std::vector<double> ledger;      // L_{j+1} = max(measured_{j+1}, L_j mu_j^{1-sigma}), L_0 = measured_0
    int steps = 0;
};

// Steps with mu^a = eps_j, eps_{j+1} = eps_j^{1 + (1-sigma)/a}, starting from s = eps^4.
inline PreprocessResult preprocess_normal_form(const NormalForm& H0, double a, double sigma, double eps,
                                               const KAMSchedule& base, const StepOptions& opt = {}) {
    PreprocessResult out;
    out.steps = preprocessing_steps(a, sigma);
    NormalForm H = H0;
    H.dom.s = std::pow(eps, 4);
    double ej = eps;
    out.eps_ledger.push_back(ej);
    const double n0 = weighted_norm(cd(H.eps) * H.P, H.dom.r, H.dom.s);
    out.measured.push_back(n0);
    out.ledger.push_back(n0);
    StepOptions o = opt;
    if (o.negligible <= 0.0) o.negligible = 1e-16 * n0;
    for (int j = 0; j < out.steps; ++j) {
        StepParams p;
        p.nu = j;
        p.r = H.dom.r;
        p.s = H.dom.s;
        p.r_plus = H.dom.r - base.r0 / std::ldexp(1.0, j + 2);
        p.eta = H.dom.eta;
        p.eta_plus = H.dom.eta - base.eta0 / std::ldexp(1.0, j + 2);
        p.gamma = base.gamma0 * geometric_factor(j);
        p.gamma_plus = base.gamma0 * geometric_factor(j + 1);
        p.mu = std::pow(ej, 1.0 / a);
        p.alpha = std::cbrt(p.mu);
        p.s_plus = p.alpha * p.s / 8.0;
        p.K = shell_cap_from_mu(p.mu, base.kappa);
        p.K_used = solved_shell_cap(p.K, base.k_cap, H.P.fourier_cap);
        p.tau = base.tau;
        p.b = base.b;
        p.l0 = base.l0;
        p.sigma = sigma;
        p.contraction_const = std::pow(64.0 * base.c0, 1.0 / (1.0 - base.lambda0));
        StepOutcome so = perform_step(H, p, o);
        out.history.push_back(so.cert);
        if (!so.cert.accepted) throw StepRejected(j, so.cert);
        H = so.H_plus;
        out.measured.push_back(so.cert.norm_after);
        out.ledger.push_back(std::max(so.cert.norm_after, out.ledger.back() * std::pow(p.mu, 1.0 - sigma)));
        ej = std::pow(ej, 1.0 + (1.0 - sigma) / a);
        out.eps_ledger.push_back(ej);
    }
    out.H = H;
    return out;
}

}  // namespace mskam

#endif  // MSKAM_KAMSTEP_HPP
