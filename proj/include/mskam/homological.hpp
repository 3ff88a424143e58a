#ifndef MSKAM_HOMOLOGICAL_HPP
#define MSKAM_HOMOLOGICAL_HPP

#include "mskam/mslinalg.hpp"
#include "mskam/normalform.hpp"

#include <json.hpp>

#include <optional>

namespace mskam {

struct ShellSolution {
    IVec k;
    QuadCoeffs f;
    double condition = 1.0;
    bool ill_conditioned = false;
};

struct ExcludedShell {
    IVec k;
    double divisor = 0.0;
    double floor = 0.0;
    std::string which;
};

inline nlohmann::json to_json(const std::vector<ExcludedShell>& ex) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : ex) j.push_back({{"k", e.k}, {"divisor", e.divisor}, {"floor", e.floor}, {"which", e.which}});
    return j;
}

struct PartialAssemblyError : std::runtime_error {
    std::vector<ExcludedShell> excluded;
    explicit PartialAssemblyError(std::vector<ExcludedShell> ex)
        : std::runtime_error("generator has excluded shells: " + to_json(ex).dump()), excluded(std::move(ex)) {}
};

struct GeneratorF {
    int n = 0;
    int m = 0;
    int K_plus = 0;
    std::map<IVec, ShellSolution> shells;  // both k and -k stored

    TFSeries to_series(int degree_cap, int fourier_cap) const {
        TFSeries F(n, m, degree_cap, std::max(fourier_cap, K_plus));
        for (const auto& [k, s] : shells) add_quadratic_coeffs(F, k, s.f);
        return F;
    }
    double max_abs(int degree) const {
        double r = 0.0;
        for (const auto& [k, s] : shells) {
            if (degree == 0) r = std::max(r, std::abs(s.f.c00));
            if (degree == 1) {
                if (s.f.c10.size()) r = std::max(r, s.f.c10.cwiseAbs().maxCoeff());
                if (s.f.c01.size()) r = std::max(r, s.f.c01.cwiseAbs().maxCoeff());
            }
            if (degree == 2)
                for (const MatC* X : {&s.f.c20, &s.f.c11, &s.f.c02})
                    if (X->size()) r = std::max(r, X->cwiseAbs().maxCoeff());
        }
        return r;
    }
};

// scale floors eps_min gamma/|k|^tau (scalar) and min{eps_i, mu_j} gamma/|k|^tau (matrix)
struct FloorSpec {
    double gamma = 0.0;
    double tau = 2.0;
    double eps_min = 1.0;
    double mix_min = 1.0;

    double scalar(const IVec& k) const { return eps_min * gamma / std::pow(double(l1norm(k)), tau); }
    double matrix(const IVec& k) const { return mix_min * gamma / std::pow(double(l1norm(k)), tau); }
};

inline cd solve_order0(const DivisorOperators& ops, cd p, double eps, double half_floor = 0.0) {
    const cd div = ops.Lk0 + ops.varpi;
    if (std::abs(div) < half_floor || div == cd(0.0)) throw SmallDivisor(ops.k, std::abs(div), half_floor);
    return eps * p / div;
}

namespace detail {

inline void check_half_floor(const DivisorOperators& ops, const MatC& A, double floor) {
    if (floor <= 0.0 || A.rows() == 0) return;
    const double lm = hermitian_floor(A, 0.0).lambda_min;
    if (lm < 0.5 * floor * floor) throw SmallDivisor(ops.k, std::sqrt(std::max(lm, 0.0)), floor / std::sqrt(2.0));
}

inline MatC solve_block(const MatC& A, const MatC& B) {
    if (A.rows() == 0) return MatC::Zero(0, B.cols());
    return Eigen::PartialPivLU<MatC>(A).solve(B);
}

}  // namespace detail

inline std::pair<VecC, VecC> solve_order1(const DivisorOperators& ops, const VecC& p10, const VecC& p01, double eps,
                                          double floor = 0.0) {
    const cd div = ops.Lk0 + ops.varpi;
    if (div == cd(0.0)) throw SmallDivisor(ops.k, 0.0, floor);
    detail::check_half_floor(ops, ops.A1_full, floor);
    VecC f01 = detail::solve_block(ops.Lk1_full, MatC(eps * p01));
    VecC f10 = (eps * p10 + ops.M21TJ * f01) / div;
    return {f10, f01};
}

struct SecondOrder {
    MatC f20, f11, f02;
};

// back substitution through the block triangle: f02 from a33, then f11, then f20
inline SecondOrder solve_order2(const DivisorOperators& ops, const MatC& p20, const MatC& p11, const MatC& p02, double eps,
                                double floor = 0.0) {
    const int n = ops.n, q = 2 * ops.m;
    const cd div = ops.Lk0 + ops.varpi;
    if (div == cd(0.0)) throw SmallDivisor(ops.k, 0.0, floor);
    detail::check_half_floor(ops, ops.A_full, floor);
    SecondOrder s;
    VecC x3 = q ? VecC(detail::solve_block(ops.a33_full, MatC(eps * vec(p02)))) : VecC();
    s.f02 = q ? unvec(x3, q, q) : MatC::Zero(0, 0);
    MatC rhs11 = eps * p11;
    if (q) rhs11 += s.f02 * ops.M21TJ.transpose();
    s.f11 = q ? detail::solve_block(ops.Lk1_full, rhs11) : MatC::Zero(0, n);
    s.f20 = (eps * p20 + (q ? MatC(ops.M21TJ * s.f11) : MatC::Zero(n, n))) / div;
    return s;
}

struct HomologicalResult {
    GeneratorF F;
    std::vector<ExcludedShell> excluded;
    double residual_norm = 0.0;
    double reference_norm = 0.0;
    bool ill_conditioned = false;
};

// Degree <= 2, |k| <= K projection of {N,F} + eps (R - [R]).
inline TFSeries homological_residual(const NormalForm& H, const TFSeries& R, const TFSeries& F, int K_plus) {
    TFSeries N = integrable_series(H, false);
    N.degree_cap = std::max(N.degree_cap, 2);
    TFSeries res = poisson_bracket(N, F);
    TFSeries osc = R - average(R);
    res += cd(H.eps) * osc;
    TFSeries out = res.empty_like();
    for (const auto& [mi, c] : res.terms)
        if (mi.degree() <= 2 && mi.kl1() <= K_plus) out.terms.emplace(mi, c);
    return out;
}

// Solve {N,F} + eps (R - [R]) = 0 for F on lexicographically positive shells, degree by degree.
// The degree-raising couplings of N (M11 y + M12 z, d_y h, d_z h) enter as sources from the lower-degree parts.
inline HomologicalResult solve_homological(const NormalForm& H, const TFSeries& R, int K_plus, const FloorSpec& fl,
                                           double dom_r = -1.0, double dom_s = -1.0) {
    const int n = H.n, m = H.m;
    HomologicalResult out;
    out.F.n = n;
    out.F.m = m;
    out.F.K_plus = K_plus;
    const auto shells = lattice_shell(n, K_plus, true);
    std::map<IVec, DivisorOperators> ops;
    std::vector<IVec> live;
    for (const auto& k : shells) {
        DivisorOperators op = build_operators_from(H.omega, H.M, k, n, m);
        const double sf = fl.scalar(k), mf = fl.matrix(k);
        const double d0 = std::abs(op.Lk0);
        if (d0 < 0.5 * sf || d0 == 0.0) {
            out.excluded.push_back({k, d0, 0.5 * sf, "Lk0"});
            continue;
        }
        const double l1 = hermitian_floor(op.A1_full, 0.0).lambda_min;
        if (l1 < 0.5 * mf * mf || l1 <= 0.0) {
            out.excluded.push_back({k, std::sqrt(std::max(l1, 0.0)), mf / std::sqrt(2.0), "A1"});
            continue;
        }
        const double l2 = hermitian_floor(op.A_full, 0.0).lambda_min;
        if (l2 < 0.5 * mf * mf || l2 <= 0.0) {
            out.excluded.push_back({k, std::sqrt(std::max(l2, 0.0)), mf / std::sqrt(2.0), "A2"});
            continue;
        }
        Eigen::SelfAdjointEigenSolver<MatC> es(op.A_full.adjoint() * op.A_full, Eigen::EigenvaluesOnly);
        const double cond = std::sqrt(es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff());
        ShellSolution sol;
        sol.k = k;
        sol.f = QuadCoeffs::zero(n, m);
        sol.condition = cond;
        sol.ill_conditioned = cond > 1e12;
        out.ill_conditioned = out.ill_conditioned || sol.ill_conditioned;
        out.F.shells[k] = sol;
        ops.emplace(k, op);
        live.push_back(k);
    }

    TFSeries N = integrable_series(H, false);
    for (int d = 0; d <= 2; ++d) {
        TFSeries src = N.empty_like();
        if (d > 0) {
            TFSeries Flow = out.F.to_series(std::max(2, N.degree_cap), std::max(N.fourier_cap, K_plus));
            src = poisson_bracket(N, Flow);
        }
        for (const auto& k : live) {
            const DivisorOperators& op = ops.at(k);
            QuadCoeffs p = extract_quadratic(R, k, d, d);
            QuadCoeffs s = extract_quadratic(src, k, d, d);
            ShellSolution& sol = out.F.shells[k];
            const double e = H.eps;
            if (d == 0) sol.f.c00 = solve_order0(op, e * p.c00 + s.c00, 1.0);
            if (d == 1) {
                auto [f10, f01] = solve_order1(op, e * p.c10 + s.c10, e * p.c01 + s.c01, 1.0);
                sol.f.c10 = f10;
                sol.f.c01 = f01;
            }
            if (d == 2) {
                SecondOrder so = solve_order2(op, e * p.c20 + s.c20, e * p.c11 + s.c11, e * p.c02 + s.c02, 1.0);
                sol.f.c20 = so.f20;
                sol.f.c11 = so.f11;
                sol.f.c02 = so.f02;
            }
            IVec mk = k;
            for (auto& v : mk) v = -v;
            ShellSolution neg = sol;
            neg.k = mk;
            neg.f = sol.f.conj();
            out.F.shells[mk] = neg;
        }
    }
    if (out.excluded.empty()) {
        TFSeries F = out.F.to_series(2, K_plus);
        TFSeries res = homological_residual(H, R, F, K_plus);
        const double r = dom_r > 0 ? dom_r : H.dom.r, s = dom_s > 0 ? dom_s : H.dom.s;
        out.residual_norm = weighted_norm(res, r, s);
        out.reference_norm = weighted_norm(cd(H.eps) * R, r, s);
    }
    return out;
}

inline GeneratorF assemble_generator(const HomologicalResult& r) {
    if (!r.excluded.empty()) throw PartialAssemblyError(r.excluded);
    return r.F;
}

// ---------------- translations ----------------

struct TranslationShift {
    VecD y0, z0;
    double t = 0.0;
    int iterations = 0;
    double residual = 0.0;
    double bound = 0.0;
    bool within_bound = true;
};

namespace detail {

struct HDerivs {
    std::vector<TFSeries> grad;
    std::vector<std::vector<TFSeries>> hess;
    bool active = false;

    HDerivs(const std::optional<TFSeries>& h, int n, int m) {
        if (!h || h->terms.empty()) return;
        active = true;
        const int d = n + 2 * m;
        for (int a = 0; a < d; ++a) grad.push_back(a < n ? d_y(*h, a) : d_z(*h, a - n));
        hess.resize(d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) hess[a].push_back(b < n ? d_y(grad[a], b) : d_z(grad[a], b - n));
    }
    static void split(const VecD& v, int n, VecD& y, VecD& z) {
        y = v.head(n);
        z = v.tail(v.size() - n);
    }
    VecD g(const VecD& v, int n) const {
        VecD out = VecD::Zero(v.size());
        if (!active) return out;
        VecD y, z;
        split(v, n, y, z);
        VecD x = VecD::Zero(n);
        for (int a = 0; a < v.size(); ++a) out(a) = grad[a].evaluate(x, y, z).real();
        return out;
    }
    MatD H(const VecD& v, int n) const {
        MatD out = MatD::Zero(v.size(), v.size());
        if (!active) return out;
        VecD y, z;
        split(v, n, y, z);
        VecD x = VecD::Zero(n);
        for (int a = 0; a < v.size(); ++a)
            for (int b = 0; b < v.size(); ++b) out(a, b) = hess[a][b].evaluate(x, y, z).real();
        return out;
    }
};

}  // namespace detail

inline double h_value(const std::optional<TFSeries>& h, const VecD& v, int n) {
    if (!h) return 0.0;
    VecD x = VecD::Zero(n);
    return h->evaluate(x, VecD(v.head(n)), VecD(v.tail(v.size() - n))).real();
}

// M v + grad h(v) = -eps (p010, p001); damped Newton from 0
inline TranslationShift solve_translation(const MatD& M, const std::optional<TFSeries>& h, int n, const VecD& p010,
                                          const VecD& p001, double eps, double mu_floor = 0.0,
                                          double bound = std::numeric_limits<double>::infinity()) {
    const int d = static_cast<int>(M.rows());
    if (p010.size() != n || p001.size() != d - n) throw StructuralError("translation dimensions");
    if (mu_floor > 0.0) {
        const double lm = lambda_min_hermitian((M.transpose() * M).cast<cd>());
        if (lm < mu_floor * mu_floor) throw FloorError("normal matrix floor violated", lm, mu_floor * mu_floor);
    }
    VecD b(d);
    b << eps * p010, eps * p001;
    TranslationShift out;
    VecD v = VecD::Zero(d);
    detail::HDerivs hd(h, n, (d - n) / 2);
    auto G = [&](const VecD& x) { return VecD(M * x + hd.g(x, n) + b); };
    VecD r = G(v);
    const double tol = 1e-12 * std::max(b.norm(), 1e-300);
    int it = 0;
    while (r.norm() > tol) {
        if (it >= 50) throw ConvergenceError("translation Newton did not converge", r.norm());
        MatD Jm = M + hd.H(v, n);
        VecD step = Jm.fullPivLu().solve(r);
        double lam = 1.0;
        VecD trial = v - step;
        VecD rt = G(trial);
        int halvings = 0;
        while (rt.norm() >= r.norm() && halvings < 30) {
            lam *= 0.5;
            trial = v - lam * step;
            rt = G(trial);
            ++halvings;
        }
        v = trial;
        r = rt;
        ++it;
        if (halvings == 30) throw ConvergenceError("translation Newton stalled", r.norm());
    }
    out.y0 = v.head(n);
    out.z0 = v.tail(d - n);
    out.iterations = it;
    out.residual = r.norm();
    out.bound = bound;
    out.within_bound = v.norm() <= 2.0 * bound;
    return out;
}

inline TranslationShift solve_translation(const FrequencyData& freq, const VecD& lam, const VecD& p010, const VecD& p001,
                                          double eps, double mu_floor = 0.0,
                                          double bound = std::numeric_limits<double>::infinity()) {
    return solve_translation(freq.M(lam), freq.h, freq.n, p010, p001, eps, mu_floor, bound);
}

// bordered system: 1/2 v^T Mt v + <(omega + eps p010, eps p001), v> + eps p000 + h(v) = 0,
//                  M v + grad h(v) + eps (p010, p001) + (t omega, 0) = 0
inline TranslationShift solve_isoenergetic_translation(const MatD& M, const VecD& omega, const std::optional<TFSeries>& h,
                                                       double p000, const VecD& p010, const VecD& p001, double eps,
                                                       double mix_floor = 0.0, const MatD& M_tilde = MatD()) {
    const int d = static_cast<int>(M.rows());
    const int n = static_cast<int>(omega.size());
    if (p010.size() != n || p001.size() != d - n) throw StructuralError("translation dimensions");
    const MatD Mt = M_tilde.size() ? M_tilde : M;
    VecD wpad = VecD::Zero(d);
    wpad.head(n) = omega;
    MatD B = MatD::Zero(d + 1, d + 1);
    B.topLeftCorner(d, d) = M;
    B.topRightCorner(d, 1) = wpad;
    B.bottomLeftCorner(1, d) = wpad.transpose();
    const double lmB = lambda_min_hermitian((B.transpose() * B).cast<cd>());
    if (mix_floor > 0.0 && lmB < mix_floor * mix_floor)
        throw FloorError("bordered matrix floor violated", lmB, mix_floor * mix_floor);
    if (lmB <= 1e-300) throw FloorError("bordered matrix is singular", lmB, mix_floor * mix_floor);
    VecD lin(d);
    lin << omega + eps * p010, eps * p001;
    VecD b(d);
    b << eps * p010, eps * p001;
    detail::HDerivs hd(h, n, (d - n) / 2);
    auto G = [&](const VecD& u) {
        VecD v = u.head(d);
        double t = u(d);
        VecD r(d + 1);
        r.head(d) = M * v + hd.g(v, n) + b + t * wpad;
        r(d) = 0.5 * v.dot(Mt * v) + lin.dot(v) + eps * p000 + h_value(h, v, n);
        return r;
    };
    VecD u = VecD::Zero(d + 1);
    VecD r = G(u);
    const double tol = 1e-12 * std::max(std::abs(eps * p000) + b.norm(), 1e-300);
    int it = 0;
    while (r.norm() > tol) {
        if (it >= 50) throw ConvergenceError("isoenergetic Newton did not converge", r.norm());
        VecD v = u.head(d);
        MatD Jm = MatD::Zero(d + 1, d + 1);
        Jm.topLeftCorner(d, d) = M + hd.H(v, n);
        Jm.topRightCorner(d, 1) = wpad;
        Jm.bottomLeftCorner(1, d) = (Mt * v + lin + hd.g(v, n)).transpose();
        VecD step = Jm.fullPivLu().solve(r);
        double lam = 1.0;
        VecD trial = u - step;
        VecD rt = G(trial);
        int halvings = 0;
        while (rt.norm() >= r.norm() && halvings < 30) {
            lam *= 0.5;
            trial = u - lam * step;
            rt = G(trial);
            ++halvings;
        }
        u = trial;
        r = rt;
        ++it;
        if (halvings == 30) throw ConvergenceError("isoenergetic Newton stalled", r.norm());
    }
    TranslationShift out;
    out.y0 = u.head(n);
    out.z0 = u.segment(n, d - n);
    out.t = u(d);
    out.iterations = it;
    out.residual = r.norm();
    return out;
}

}  // namespace mskam

#endif  // MSKAM_HOMOLOGICAL_HPP
