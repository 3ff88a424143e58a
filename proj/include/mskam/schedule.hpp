#ifndef MSKAM_SCHEDULE_HPP
#define MSKAM_SCHEDULE_HPP

#include "mskam/common.hpp"

#include <json.hpp>

#include <map>
#include <optional>

namespace mskam {

// Constants and initial values of the iteration.
struct KAMSchedule {
    double r0 = 0.5;
    double s0 = 0.5;
    double gamma0 = 0.1;
    double eta0 = 0.1;
    double mu0 = 1e-4;
    double tau = 3.0;
    int b = 1;
    int l0 = 1;
    int N = 0;
    double sigma = 1.0 / 12.0;
    double lambda0 = 0.5;
    double c0 = 1.0 / 64.0;
    double kappa = 1.0;  // K+ = ([log 1/mu] + 1)^(3 kappa)
    int max_steps = 12;
    double target_norm = 0.0;  // 0: 1e-16 times the initial norm
    double target_rel = 1e-16;
    int k_cap = 0;  // shells actually solved: |k| <= min(K+, k_cap); 0 means the Fourier cap of the series

    double chi() const { return (b + 2) * tau + 5.0 * l0 + 10.0; }

    void validate(int n) const {
        for (double v : {r0, s0, gamma0, eta0, mu0})
            if (!(v > 0.0 && v <= 1.0)) throw DomainError("schedule initial values must lie in (0,1]");
        if (!(lambda0 > 0.0 && lambda0 < 1.0)) throw DomainError("lambda0 must lie in (0,1)");
        if (!(sigma > 0.0 && sigma < 1.0)) throw DomainError("sigma must lie in (0,1)");
        if (!(c0 > 0.0)) throw DomainError("c0 must be positive");
        if (!(kappa > 0.0)) throw DomainError("kappa must be positive");
        if (b < 1 || l0 < 0 || N < 0) throw DomainError("b >= 1, l0 >= 0, N >= 0 required");
        if (n > 0 && !(tau > n * (N + 1) + 1)) throw DomainError("tau must exceed n(N+1)+1");
        if (max_steps < 0 || k_cap < 0) throw DomainError("max_steps and k_cap must be nonnegative");
    }
};

inline nlohmann::json to_json(const KAMSchedule& s) {
    return {{"r0", s.r0},         {"s0", s.s0},       {"gamma0", s.gamma0},   {"eta0", s.eta0},
            {"mu0", s.mu0},       {"tau", s.tau},     {"b", s.b},             {"l0", s.l0},
            {"N", s.N},           {"sigma", s.sigma}, {"lambda0", s.lambda0}, {"c0", s.c0},
            {"kappa", s.kappa},   {"chi", s.chi()},   {"max_steps", s.max_steps},
            {"target_norm", s.target_norm},           {"target_rel", s.target_rel}, {"k_cap", s.k_cap}};
}

struct SequenceValues {
    int nu = 0;
    double r = 0, gamma = 0, eta = 0, mu = 0, s = 0, alpha = 0;
    long K = 0;       // K_nu = ([log 1/mu_{nu-1}] + 1)^(3 kappa); K_0 uses mu_0
    long K_plus = 0;  // cap of the step starting at nu, from mu_nu
};

inline long shell_cap_from_mu(double mu, double kappa) {
    const double base = std::floor(std::log(1.0 / mu)) + 1.0;
    const double v = std::pow(std::max(base, 1.0), 3.0 * kappa);
    if (!(v < 1e9)) return 1000000000L;
    return std::max(1L, static_cast<long>(std::floor(v + 1e-9)));
}

inline double geometric_factor(int nu) {
    // 1 - sum_{i=1}^nu 2^{-(i+1)}
    return 0.5 + std::ldexp(1.0, -(nu + 1));
}

inline double log_mu_at(const KAMSchedule& s, int nu) {
    const double g = std::pow(1.0 + s.sigma, nu);
    return (g - 1.0) / ((1.0 - s.lambda0) * s.sigma) * std::log(64.0 * s.c0) + g * std::log(s.mu0);
}

inline SequenceValues sequence_at(const KAMSchedule& sc, int nu) {
    if (nu < 0) throw DomainError("step index must be nonnegative");
    SequenceValues v;
    v.nu = nu;
    const double f = geometric_factor(nu);
    v.r = sc.r0 * f;
    v.gamma = sc.gamma0 * f;
    v.eta = sc.eta0 * f;
    v.mu = std::exp(log_mu_at(sc, nu));
    v.alpha = std::cbrt(v.mu);
    double s = sc.s0;
    for (int i = 1; i <= nu; ++i) s *= std::cbrt(std::exp(log_mu_at(sc, i - 1))) / 8.0;
    v.s = s;
    v.K = shell_cap_from_mu(nu == 0 ? sc.mu0 : std::exp(log_mu_at(sc, nu - 1)), sc.kappa);
    v.K_plus = shell_cap_from_mu(v.mu, sc.kappa);
    return v;
}

inline double choose(long a, long b) {
    if (b < 0 || b > a) return 0.0;
    double r = 1.0;
    for (long i = 1; i <= b; ++i) r = r * double(a - b + i) / double(i);
    return r;
}

// number of k in Z^n with |k|_1 = j
inline double shell_count(int n, long j) {
    if (j == 0) return 1.0;
    double c = 0.0;
    for (int i = 1; i <= std::min<long>(n, j); ++i) c += std::ldexp(choose(n, i) * choose(j - 1, i - 1), i);
    return c;
}

// Gamma(r - r+) = sum_{0<|k|<=K} |k|^chi exp(-|k| (r - r+)/8)
inline double gamma_sum(int n, long K, double chi, double dr) {
    double total = 0.0;
    for (long j = 1; j <= K; ++j)
        total += std::exp(std::log(shell_count(n, j)) + chi * std::log(double(j)) - j * dr / 8.0);
    return total;
}

// int_K^inf x^p e^{-a x} dx for integer p >= 0, via Gamma(p+1, aK) = p! e^{-aK} sum_{j<=p} (aK)^j / j!
inline double tail_integral(int p, double K, double a) {
    const double x = a * K;
    double term = 1.0, sum = 1.0;
    for (int j = 1; j <= p; ++j) {
        term *= x / j;
        sum += term;
    }
    return std::exp(std::lgamma(p + 1.0) - x - (p + 1.0) * std::log(a)) * sum;
}

// ratio gamma_{nu+1}/gamma_nu of the geometric shrink, equal to 1 - 1/(2^{nu+1} + 2)
inline double gamma_ratio(int nu) { return geometric_factor(nu + 1) / geometric_factor(nu); }

// 2^{sigma x} (gamma_{x+1}/gamma_x)^{3b}, increasing in x
inline double h8_monotone_term(double sigma, int b, int x) {
    return std::pow(2.0, sigma * x) * std::pow(gamma_ratio(x), 3.0 * b);
}

struct AssumptionReport {
    std::map<std::string, bool> verdict;
    std::map<std::string, double> lhs;
    std::map<std::string, double> rhs;
    std::map<std::string, std::string> note;

    bool all() const {
        for (const auto& [k, v] : verdict)
            if (!v) return false;
        return !verdict.empty();
    }
    std::vector<std::string> failing() const {
        std::vector<std::string> f;
        for (const auto& [k, v] : verdict)
            if (!v) f.push_back(k);
        return f;
    }
    void set(const std::string& id, double l, double r, bool ok, const std::string& why = {}) {
        verdict[id] = ok;
        lhs[id] = l;
        rhs[id] = r;
        if (!why.empty()) note[id] = why;
    }
};

inline nlohmann::json to_json(const AssumptionReport& a) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : a.verdict) {
        j[k] = {{"holds", v}, {"lhs", a.lhs.at(k)}, {"rhs", a.rhs.at(k)}};
        if (a.note.count(k)) j[k]["note"] = a.note.at(k);
    }
    return j;
}

// Literal evaluation of (H1)-(H8) from the schedule at step nu.
// The normal matrix check (H3) needs the matrix; without one it is reported as not evaluated (true).
inline AssumptionReport check_assumptions(const KAMSchedule& sc, int nu, int n, const MatD* M = nullptr,
                                          double mu_floor = 0.0) {
    const SequenceValues a = sequence_at(sc, nu), p = sequence_at(sc, nu + 1);
    const double dr = a.r - p.r;
    const double K = double(a.K_plus);
    const double Gam = gamma_sum(n, a.K_plus, sc.chi(), dr);
    const double c = sc.c0;
    AssumptionReport rep;
    rep.set("H1", K, 8.0 * (n + sc.l0) / dr, K >= 8.0 * (n + sc.l0) / dr);
    const double tail = tail_integral(n + sc.l0, K, dr / 8.0);
    rep.set("H2", tail, a.mu, tail <= a.mu);
    if (M) {
        Eigen::SelfAdjointEigenSolver<MatD> es(M->transpose() * *M, Eigen::EigenvaluesOnly);
        const double lm = es.eigenvalues().minCoeff();
        rep.set("H3", lm, mu_floor * mu_floor, lm >= mu_floor * mu_floor);
    } else {
        rep.set("H3", 0.0, 0.0, true, "not evaluated without a normal matrix");
    }
    const double h4 = std::sqrt(a.s) * std::pow(K, sc.tau + 1.0);
    rep.set("H4", h4, a.gamma, h4 <= a.gamma);
    rep.set("H5", c * a.mu * Gam, dr / 8.0, c * a.mu * Gam < dr / 8.0);
    rep.set("H6", c * a.mu * Gam, a.alpha / 8.0, c * a.mu * Gam < a.alpha / 8.0);
    rep.set("H7", a.mu, a.alpha / 8.0, a.mu < a.alpha / 8.0);
    const double l8 = std::pow(a.gamma, 3.0 * sc.b) * std::pow(a.mu, sc.sigma) * (Gam + std::pow(a.gamma, sc.b));
    const double r8 = std::pow(p.gamma, 3.0 * sc.b);
    rep.set("H8", l8, r8, l8 <= r8);
    return rep;
}

}  // namespace mskam

#endif  // MSKAM_SCHEDULE_HPP
