#ifndef MSKAM_NONRES_HPP
#define MSKAM_NONRES_HPP

#include "mskam/homological.hpp"
#include "mskam/schedule.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <json.hpp>

#include <random>
#include <thread>

namespace mskam {

// ---------------- parameter grids ----------------

struct NodeStatus {
    bool included = true;
    IVec k;             // first failing shell
    std::string which;  // "Lk0" | "A1" | "A2"
    int step = -1;
    double value = 0.0;  // |L_k0| or sqrt(lambda_min)
    double floor = 0.0;
};

struct LambdaGrid {
    int p = 0;
    std::vector<VecD> nodes;
    std::vector<NodeStatus> status;

    std::size_t size() const { return nodes.size(); }
    std::size_t surviving() const {
        std::size_t c = 0;
        for (const auto& s : status) c += s.included;
        return c;
    }
    double excluded_fraction() const { return nodes.empty() ? 0.0 : 1.0 - double(surviving()) / double(nodes.size()); }

    void push(const VecD& v) {
        if (nodes.empty()) p = static_cast<int>(v.size());
        if (v.size() != p) throw StructuralError("grid nodes must share one dimension");
        nodes.push_back(v);
        status.emplace_back();
    }

    // cell-centred tensor lattice on the box [lo, hi]
    static LambdaGrid lattice(const VecD& lo, const VecD& hi, const std::vector<int>& counts) {
        if (lo.size() != hi.size() || counts.size() != static_cast<std::size_t>(lo.size()))
            throw StructuralError("lattice bounds and counts must agree");
        LambdaGrid g;
        g.p = static_cast<int>(lo.size());
        std::vector<int> idx(counts.size(), 0);
        for (int c : counts)
            if (c < 1) throw DomainError("lattice counts must be positive");
        while (true) {
            VecD v(g.p);
            for (int a = 0; a < g.p; ++a) v(a) = lo(a) + (idx[a] + 0.5) * (hi(a) - lo(a)) / counts[a];
            g.push(v);
            int a = g.p - 1;
            while (a >= 0 && ++idx[a] == counts[a]) idx[a--] = 0;
            if (a < 0) break;
        }
        return g;
    }

    // low-discrepancy R_d sequence (generalised golden ratio), deterministic
    static LambdaGrid r2(const VecD& lo, const VecD& hi, int count) {
        LambdaGrid g;
        g.p = static_cast<int>(lo.size());
        double phi = 2.0;
        for (int it = 0; it < 60; ++it) phi = std::pow(1.0 + phi, 1.0 / (g.p + 1));
        VecD alpha(g.p);
        for (int a = 0; a < g.p; ++a) alpha(a) = std::fmod(std::pow(1.0 / phi, a + 1), 1.0);
        for (int i = 0; i < count; ++i) {
            VecD v(g.p);
            for (int a = 0; a < g.p; ++a) {
                const double u = std::fmod(0.5 + alpha(a) * (i + 1), 1.0);
                v(a) = lo(a) + u * (hi(a) - lo(a));
            }
            g.push(v);
        }
        return g;
    }

    static LambdaGrid monte_carlo(const VecD& lo, const VecD& hi, int count, std::uint64_t seed) {
        LambdaGrid g;
        g.p = static_cast<int>(lo.size());
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        for (int i = 0; i < count; ++i) {
            VecD v(g.p);
            for (int a = 0; a < g.p; ++a) v(a) = lo(a) + U(rng) * (hi(a) - lo(a));
            g.push(v);
        }
        return g;
    }
};

inline nlohmann::json to_json(const LambdaGrid& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < g.size(); ++i) {
        nlohmann::json j = {{"lambda", std::vector<double>(g.nodes[i].data(), g.nodes[i].data() + g.p)},
                            {"included", g.status[i].included}};
        if (!g.status[i].included)
            j["excluded"] = {{"k", g.status[i].k}, {"which", g.status[i].which}, {"step", g.status[i].step},
                             {"value", g.status[i].value}, {"floor", g.status[i].floor}};
        nodes.push_back(j);
    }
    return {{"p", g.p}, {"surviving", g.surviving()}, {"size", g.size()}, {"nodes", nodes}};
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(count, 1))));
    if (w == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errs(w);
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < count; i += w) fn(i);
            } catch (...) {
                errs[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

// sqrt(lambda_min(A^* A)) and |L_k0| for one node and shell; the matrix floors are skipped when m = 0
// (then A1 and A2 are L_k0 times the identity)
struct ShellDivisors {
    double scalar = 0.0, a1 = 0.0, a2 = 0.0;
};

inline ShellDivisors shell_divisors(const FrequencyData& freq, const IVec& k, const VecD& lam) {
    ShellDivisors d;
    if (freq.m == 0) {
        d.scalar = std::abs(dot(k, freq.omega(lam)));
        d.a1 = d.a2 = d.scalar;
        return d;
    }
    DivisorOperators op = build_operators(freq, k, lam);
    d.scalar = std::abs(op.Lk0);
    d.a1 = std::sqrt(std::max(0.0, lambda_min_hermitian(op.A1.adjoint() * op.A1)));
    d.a2 = std::sqrt(std::max(0.0, lambda_min_hermitian(op.A2.adjoint() * op.A2)));
    return d;
}

}  // namespace detail

// Tests every included node against |L_k0| >= eps_min gamma/|k|^tau and
// A_i^* A_i >= (mix_min gamma/|k|^tau)^2, 0 < |k| <= K+. Excluded nodes stay excluded.
inline LambdaGrid build_nonresonant_set(const FrequencyData& freq, const ScaleSet& scales, LambdaGrid grid, double gamma,
                                        double tau, int K_plus, int step = 0, int workers = 1) {
    if (grid.nodes.empty()) throw DomainError("parameter grid is empty");
    if (gamma <= 0.0) return grid;
    const FloorSpec fl{gamma, tau, scales.min_eps(), scales.min_all()};
    const auto shells = lattice_shell(freq.n, K_plus, true);
    detail::parallel_for(grid.size(), workers, [&](std::size_t i) {
        NodeStatus& st = grid.status[i];
        if (!st.included) return;
        for (const IVec& k : shells) {
            const auto d = detail::shell_divisors(freq, k, grid.nodes[i]);
            const double fs = fl.scalar(k), fm = fl.matrix(k);
            const char* which = nullptr;
            double v = 0.0, f = 0.0;
            if (d.scalar < fs) {
                which = "Lk0", v = d.scalar, f = fs;
            } else if (d.a1 < fm) {
                which = "A1", v = d.a1, f = fm;
            } else if (d.a2 < fm) {
                which = "A2", v = d.a2, f = fm;
            }
            if (which) {
                st.included = false;
                st.k = k;
                st.which = which;
                st.step = step;
                st.value = v;
                st.floor = f;
                return;
            }
        }
    });
    return grid;
}

// ---------------- conditions ----------------

struct ConditionVerdict {
    std::string id;
    bool holds = false;
    bool evaluated = true;
    int rank = -1, target = -1;  // worst rank over nodes and shells
    double sigma_ratio = 0.0;    // smallest sigma_min/sigma_max at the worst instance
    double lambda_min = 0.0;
    double floor = 0.0;
    int order = -1;  // derivative order needed at the worst instance (-1: never reached)
    IVec k;
    VecD node;
    std::string note;
};

inline nlohmann::json to_json(const ConditionVerdict& v) {
    nlohmann::json j = {{"holds", v.holds}, {"evaluated", v.evaluated}};
    if (v.target >= 0) {
        j["rank"] = v.rank;
        j["target"] = v.target;
        j["sigma_ratio"] = v.sigma_ratio;
        j["order"] = v.order;
    } else {
        j["lambda_min"] = v.lambda_min;
        j["floor"] = v.floor;
    }
    if (!v.k.empty()) j["k"] = v.k;
    if (v.node.size()) j["node"] = std::vector<double>(v.node.data(), v.node.data() + v.node.size());
    if (!v.note.empty()) j["note"] = v.note;
    return j;
}

struct ConditionReport {
    std::map<std::string, ConditionVerdict> verdicts;

    bool holds(const std::string& id) const { return verdicts.at(id).holds; }
    bool all() const {
        for (const auto& [k, v] : verdicts)
            if (!v.holds) return false;
        return !verdicts.empty();
    }
    void merge(const ConditionReport& o) {
        for (const auto& [k, v] : o.verdicts) verdicts[k] = v;
    }
};

inline nlohmann::json to_json(const ConditionReport& r) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : r.verdicts) j[k] = to_json(v);
    return j;
}

struct ConditionOptions {
    int N = 2;             // highest derivative order
    int K_cap = 3;         // shells 0 < |k| <= K_cap
    double rank_tol = 1e-10;
    double nonzero_tol = 1e-9;  // relative threshold for the scalar derivative tests
};

struct RankResult {
    int rank = 0;
    double ratio = 0.0;  // sigma_r / sigma_1 with r the target
};

// numerical rank with singular values above tol * sigma_max
inline RankResult numerical_rank(const MatC& A, int target, double tol) {
    RankResult r;
    if (A.size() == 0) return r;
    Eigen::JacobiSVD<MatC> svd(A);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return r;
    for (Eigen::Index i = 0; i < s.size(); ++i) r.rank += s(i) > tol * s(0);
    r.ratio = target >= 1 && target <= s.size() ? s(target - 1) / s(0) : 0.0;
    return r;
}

// horizontal stack of deriv(alpha) for lo <= |alpha| <= hi
inline MatC derivative_stack(const std::function<MatC(const IVec&)>& deriv, int p, int lo, int hi) {
    std::vector<MatC> blocks;
    Eigen::Index rows = -1, cols = 0;
    for (const IVec& a : multi_indices(p, lo, hi)) {
        MatC B = deriv(a);
        if (rows < 0) rows = B.rows();
        if (B.rows() != rows) throw StructuralError("derivative blocks must share the row count");
        cols += B.cols();
        blocks.push_back(std::move(B));
    }
    MatC S(std::max<Eigen::Index>(rows, 0), cols);
    Eigen::Index c = 0;
    for (const auto& B : blocks) {
        S.middleCols(c, B.cols()) = B;
        c += B.cols();
    }
    return S;
}

struct RankScan {
    int rank = -1;
    double ratio = 0.0;
    int order = -1;
};

// smallest order o in [lo, N] where the stack reaches full rank; rank and ratio at order N
inline RankScan rank_scan(const std::function<MatC(const IVec&)>& deriv, int p, int lo, int N, int target, double tol) {
    RankScan out;
    for (int o = std::max(lo, 0); o <= N; ++o) {
        if (o == 0 && lo > 0) continue;
        MatC S = derivative_stack(deriv, p, lo, o);
        RankResult r = numerical_rank(S, target, tol);
        out.rank = r.rank;
        out.ratio = r.ratio;
        if (r.rank >= target) {
            out.order = o;
            return out;
        }
    }
    return out;
}

namespace detail {

inline void worse(ConditionVerdict& v, const RankScan& rs, const IVec& k, const VecD& node) {
    const bool first = v.rank < 0;
    if (first || rs.rank < v.rank || (rs.rank == v.rank && rs.ratio < v.sigma_ratio)) {
        v.rank = rs.rank;
        v.sigma_ratio = rs.ratio;
        v.k = k;
        v.node = node;
    }
    v.order = std::max(v.order, rs.order < 0 ? v.order : rs.order);
}

inline DivisorOperators operators_of_derivative(const FrequencyData& f, const IVec& k, const VecD& lam, const IVec& a) {
    // the operators are linear in (omega, M) with no constant part
    return build_operators_from(f.omega_d(lam, a), f.M_d(lam, a), k, f.n, f.m);
}

inline ConditionVerdict rank_condition(const std::string& id, const FrequencyData& f, const LambdaGrid& grid,
                                       const ConditionOptions& o, int lo, int target,
                                       const std::function<MatC(const DivisorOperators&)>& pick) {
    ConditionVerdict v;
    v.id = id;
    v.target = target;
    v.holds = true;
    const auto shells = lattice_shell(f.n, o.K_cap, true);
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (const IVec& k : shells) {
            auto deriv = [&](const IVec& a) { return pick(operators_of_derivative(f, k, grid.nodes[i], a)); };
            RankScan rs = rank_scan(deriv, f.p, lo, o.N, target, o.rank_tol);
            worse(v, rs, k, grid.nodes[i]);
            if (rs.rank < target) v.holds = false;
        }
    if (shells.empty()) {
        v.evaluated = false;
        v.note = "no shells";
    }
    return v;
}

inline double bordered_min_scale(const ScaleSet& s) {
    double v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < s.eps_vec.size(); ++i) v = std::min(v, s.eps_vec[i]);
    for (double mu : s.mu_vec) v = std::min(v, mu);
    return std::isfinite(v) ? v : s.eps;
}

}  // namespace detail

// eigen-decomposition of M22 J and the derivatives of its eigenvalues
struct NormalSpectrum {
    VecC eigenvalues;
    MatC S;  // right eigenvectors
    double condition = 0.0;
    bool diagonalizable = false;
};

inline NormalSpectrum normal_spectrum(const MatD& M, int n, int m) {
    NormalSpectrum sp;
    const int q = 2 * m;
    if (q == 0) {
        sp.diagonalizable = true;
        return sp;
    }
    MatD MJ = M.bottomRightCorner(q, q) * symplectic_J(m);
    Eigen::ComplexEigenSolver<MatC> es(MJ.cast<cd>());
    sp.eigenvalues = es.eigenvalues();
    sp.S = es.eigenvectors();
    Eigen::JacobiSVD<MatC> svd(sp.S);
    const auto& s = svd.singularValues();
    sp.condition = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
    sp.diagonalizable = sp.condition < 1e8;
    (void)n;
    return sp;
}

namespace detail {

// eigenvalues of M22 J at lam, ordered to match ref by nearest assignment
inline VecC matched_eigenvalues(const FrequencyData& f, const VecD& lam, const VecC& ref) {
    VecC ev = normal_spectrum(f.M(lam), f.n, f.m).eigenvalues;
    VecC out(ref.size());
    std::vector<bool> used(ev.size(), false);
    for (Eigen::Index i = 0; i < ref.size(); ++i) {
        Eigen::Index best = -1;
        for (Eigen::Index j = 0; j < ev.size(); ++j)
            if (!used[j] && (best < 0 || std::abs(ev(j) - ref(i)) < std::abs(ev(best) - ref(i)))) best = j;
        used[best] = true;
        out(i) = ev(best);
    }
    return out;
}

// d^alpha of the eigenvalues: first order from left/right eigenvectors, higher orders by central differences of it
inline VecC eigenvalue_derivative(const FrequencyData& f, const VecD& lam, const IVec& alpha, const VecC& ref) {
    const int q = 2 * f.m;
    const int ord = l1norm(alpha);
    if (ord == 0) return matched_eigenvalues(f, lam, ref);
    int a = 0;
    while (alpha[a] == 0) ++a;
    if (ord == 1) {
        VecC ev = matched_eigenvalues(f, lam, ref);
        MatD MJ = f.M(lam).bottomRightCorner(q, q) * symplectic_J(f.m);
        MatD dMJ = f.M_d(lam, alpha).bottomRightCorner(q, q) * symplectic_J(f.m);
        VecC out(ev.size());
        for (Eigen::Index i = 0; i < ev.size(); ++i) {
            // right and left null vectors of MJ - ev_i
            MatC A = MJ.cast<cd>() - ev(i) * MatC::Identity(q, q);
            Eigen::JacobiSVD<MatC> sr(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
            VecC v = sr.matrixV().col(q - 1);
            VecC w = sr.matrixU().col(q - 1);
            const cd den = w.adjoint() * v;
            out(i) = std::abs(den) > 1e-12 ? cd(w.adjoint() * (dMJ.cast<cd>() * v)) / den : cd(0.0);
        }
        return out;
    }
    IVec rest = alpha;
    --rest[a];
    VecD lp = lam, lm = lam;
    lp(a) += f.fd_step;
    lm(a) -= f.fd_step;
    return (eigenvalue_derivative(f, lp, rest, ref) - eigenvalue_derivative(f, lm, rest, ref)) / (2.0 * f.fd_step);
}

// scalar test: some 1 <= |alpha| <= N has |d^alpha g| > tol * scale
inline int first_nonzero_order(const std::function<cd(const IVec&)>& g, int p, int N, double tol, double scale) {
    for (int o = 1; o <= N; ++o)
        for (const IVec& a : multi_indices(p, o, o))
            if (std::abs(g(a)) > tol * scale) return o;
    return -1;
}

}  // namespace detail

// (M1'') / (M2''): d^l of i<k,omega> - lhat_i (resp. - lhat_i - lhat_j) is nonzero for some 1 <= |l| <= N
inline ConditionReport check_eigen_conditions(const FrequencyData& f, const LambdaGrid& grid, const ConditionOptions& o) {
    ConditionReport rep;
    ConditionVerdict v1, v2;
    v1.id = "M1''";
    v2.id = "M2''";
    v1.holds = v2.holds = true;
    const auto shells = lattice_shell(f.n, o.K_cap, true);
    for (std::size_t i = 0; i < grid.size() && (v1.holds || v2.holds); ++i) {
        const VecD& lam = grid.nodes[i];
        NormalSpectrum sp = normal_spectrum(f.M(lam), f.n, f.m);
        if (!sp.diagonalizable) {
            for (auto* v : {&v1, &v2}) {
                v->holds = false;
                v->evaluated = false;
                v->node = lam;
                v->note = "M22 J is not diagonalizable at this node";
            }
            break;
        }
        const VecC ref = sp.eigenvalues;
        std::map<IVec, VecC> dl;
        auto dlam = [&](const IVec& a) -> const VecC& {
            auto it = dl.find(a);
            if (it == dl.end()) it = dl.emplace(a, detail::eigenvalue_derivative(f, lam, a, ref)).first;
            return it->second;
        };
        const double scale = std::max({1.0, f.omega(lam).cwiseAbs().maxCoeff(), ref.size() ? ref.cwiseAbs().maxCoeff() : 0.0});
        for (const IVec& k : shells) {
            auto dkw = [&](const IVec& a) { return I_unit * dot(k, f.omega_d(lam, a)); };
            for (Eigen::Index a = 0; a < ref.size(); ++a) {
                auto g = [&](const IVec& al) { return dkw(al) - dlam(al)(a); };
                const int ord = detail::first_nonzero_order(g, f.p, o.N, o.nonzero_tol, scale);
                if (ord < 0 && v1.holds) {
                    v1.holds = false;
                    v1.k = k;
                    v1.node = lam;
                    v1.note = "all derivatives vanish for eigenvalue " + std::to_string(a);
                }
                v1.order = std::max(v1.order, ord);
                for (Eigen::Index b = a; b < ref.size(); ++b) {
                    auto g2 = [&](const IVec& al) { return dkw(al) - dlam(al)(a) - dlam(al)(b); };
                    const int o2 = detail::first_nonzero_order(g2, f.p, o.N, o.nonzero_tol, scale);
                    if (o2 < 0 && v2.holds) {
                        v2.holds = false;
                        v2.k = k;
                        v2.node = lam;
                        v2.note = "all derivatives vanish for eigenvalue pair " + std::to_string(a) + "," + std::to_string(b);
                    }
                    v2.order = std::max(v2.order, o2);
                }
            }
        }
    }
    rep.verdicts[v1.id] = v1;
    rep.verdicts[v2.id] = v2;
    return rep;
}

// One condition by id: D, M1, M2, C1, C1', C2, M1', M2', M1'', M2''.
inline ConditionReport check_conditions(const FrequencyData& f, const ScaleSet& scales, const LambdaGrid& grid,
                                        const std::string& which, const ConditionOptions& o = {}) {
    if (grid.nodes.empty()) throw DomainError("parameter grid is empty");
    if (!f.omega || !f.M) throw StructuralError("derivative data missing: omega and M must be supplied");
    for (const auto& lam : grid.nodes) f.validate(lam);
    ConditionReport rep;
    const int n = f.n, q = 2 * f.m, d = n + q;
    if (which == "D") {
        ConditionVerdict v;
        v.id = which;
        v.target = n;
        v.holds = true;
        for (const auto& lam : grid.nodes) {
            auto deriv = [&](const IVec& a) { return MatC(f.omega_d(lam, a).cast<cd>()); };
            RankScan rs = rank_scan(deriv, f.p, 0, o.N, n, o.rank_tol);
            detail::worse(v, rs, {}, lam);
            if (rs.rank < n) v.holds = false;
        }
        rep.verdicts[which] = v;
    } else if (which == "M1") {
        rep.verdicts[which] = detail::rank_condition(which, f, grid, o, 0, d, [](const DivisorOperators& op) { return op.A1; });
    } else if (which == "M2") {
        rep.verdicts[which] = detail::rank_condition(which, f, grid, o, 0, n * n + n * q + q * q, [](const DivisorOperators& op) { return op.A2; });
    } else if (which == "M1'") {
        rep.verdicts[which] = detail::rank_condition(which, f, grid, o, 1, q, [](const DivisorOperators& op) { return op.Lk1; });
    } else if (which == "M2'") {
        rep.verdicts[which] = detail::rank_condition(which, f, grid, o, 1, q * q, [](const DivisorOperators& op) { return op.Lk2; });
    } else if (which == "C1" || which == "C1'" || which == "C2") {
        ConditionVerdict v;
        v.id = which;
        v.holds = true;
        v.lambda_min = std::numeric_limits<double>::infinity();
        const double mu = which == "C2" ? detail::bordered_min_scale(scales) : scales.min_mu();
        v.floor = mu * mu;
        for (const auto& lam : grid.nodes) {
            const MatD M = f.M(lam);
            MatD B;
            if (which == "C1") {
                B = M;
            } else if (which == "C1'") {
                B = M.bottomRightCorner(q, q);
            } else {
                B = MatD::Zero(d + 1, d + 1);
                B.topLeftCorner(d, d) = M;
                const VecD w = f.omega(lam);
                B.block(0, d, n, 1) = w;
                B.block(d, 0, 1, n) = w.transpose();
            }
            Eigen::SelfAdjointEigenSolver<MatD> es(B.transpose() * B, Eigen::EigenvaluesOnly);
            const double lm = B.size() ? es.eigenvalues()(0) : 0.0;
            if (lm < v.lambda_min) {
                v.lambda_min = lm;
                v.node = lam;
            }
            if (lm < v.floor) v.holds = false;
        }
        rep.verdicts[which] = v;
    } else if (which == "M1''" || which == "M2''") {
        ConditionReport e = check_eigen_conditions(f, grid, o);
        rep.verdicts[which] = e.verdicts.at(which);
    } else {
        throw DomainError("unknown condition id: " + which);
    }
    return rep;
}

inline ConditionReport check_all_conditions(const FrequencyData& f, const ScaleSet& scales, const LambdaGrid& grid,
                                            const ConditionOptions& o = {}) {
    ConditionReport rep;
    for (const char* id : {"D", "M1", "M2", "C1", "C1'", "C2", "M1'", "M2'"}) rep.merge(check_conditions(f, scales, grid, id, o));
    rep.merge(check_eigen_conditions(f, grid, o));
    return rep;
}

// ---------------- reduction of the primed conditions ----------------

struct ReductionStep {
    IVec k;
    VecD node;
    std::vector<int> pivot_columns;  // column exchange selecting a full-rank square block
    double block_sigma_ratio = 0.0;
    bool block_full_rank = false;
};

struct ReductionReport {
    ConditionReport primed;  // D, M1', M2'
    ConditionReport direct;  // M1, M2
    ConditionReport eigen;   // M1'', M2''
    bool diagonal_path = false;
    bool implication_holds = true;  // primed => direct on every tested instance
    bool eigen_agrees = true;       // eigenvalue tests agree with the primed verdicts
    std::vector<ReductionStep> steps;
    std::string note;
};

// Column-exchange elimination: from the derivative stack of A_i select n_i independent columns by
// pivoted QR (the orthogonal exchange), and confirm the selected square block is nonsingular.
inline ReductionStep column_exchange(const MatC& stack, int target, double tol) {
    ReductionStep st;
    Eigen::ColPivHouseholderQR<MatC> qr(stack);
    qr.setThreshold(tol);
    const auto perm = qr.colsPermutation().indices();
    MatC block(stack.rows(), target);
    for (int c = 0; c < target && c < perm.size(); ++c) {
        st.pivot_columns.push_back(perm(c));
        block.col(c) = stack.col(perm(c));
    }
    if (static_cast<int>(st.pivot_columns.size()) < target) return st;
    RankResult r = numerical_rank(block, target, tol);
    st.block_sigma_ratio = r.ratio;
    st.block_full_rank = r.rank >= target;
    return st;
}

inline ReductionReport reduce_conditions(const FrequencyData& f, const ScaleSet& scales, const LambdaGrid& grid,
                                         const ConditionOptions& o = {}) {
    ReductionReport rep;
    for (const char* id : {"D", "M1'", "M2'"}) rep.primed.merge(check_conditions(f, scales, grid, id, o));
    for (const char* id : {"M1", "M2"}) rep.direct.merge(check_conditions(f, scales, grid, id, o));
    const int d = f.n + 2 * f.m;
    const auto shells = lattice_shell(f.n, o.K_cap, true);
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (const IVec& k : shells) {
            auto deriv = [&](const IVec& a) { return detail::operators_of_derivative(f, k, grid.nodes[i], a).A1; };
            ReductionStep st = column_exchange(derivative_stack(deriv, f.p, 0, o.N), d, o.rank_tol);
            st.k = k;
            st.node = grid.nodes[i];
            rep.steps.push_back(std::move(st));
        }
    const bool primed_ok = rep.primed.all();
    if (primed_ok && !rep.direct.all()) rep.implication_holds = false;
    for (const auto& st : rep.steps)
        if (primed_ok && !st.block_full_rank) rep.implication_holds = false;

    bool diag = true;
    for (const auto& lam : grid.nodes) diag = diag && normal_spectrum(f.M(lam), f.n, f.m).diagonalizable;
    rep.diagonal_path = diag;
    if (diag) {
        rep.eigen = check_eigen_conditions(f, grid, o);
        rep.eigen_agrees = rep.eigen.holds("M1''") == rep.primed.holds("M1'") && rep.eigen.holds("M2''") == rep.primed.holds("M2'");
    } else {
        rep.note = "M22 J not diagonalizable on the grid; direct (M1)/(M2) verdicts used";
    }
    return rep;
}

inline nlohmann::json to_json(const ReductionReport& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.steps)
        steps.push_back({{"k", s.k},
                         {"node", std::vector<double>(s.node.data(), s.node.data() + s.node.size())},
                         {"pivot_columns", s.pivot_columns},
                         {"block_sigma_ratio", s.block_sigma_ratio},
                         {"block_full_rank", s.block_full_rank}});
    nlohmann::json j = {{"primed", to_json(r.primed)},       {"direct", to_json(r.direct)},
                        {"diagonal_path", r.diagonal_path},  {"implication_holds", r.implication_holds},
                        {"eigen_agrees", r.eigen_agrees},    {"column_exchanges", steps}};
    if (r.diagonal_path) j["eigen"] = to_json(r.eigen);
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

// ---------------- excluded measure ----------------

struct MeasureRow {
    double gamma = 0.0;
    double excluded_fraction = 0.0;
    double tail_bound = 0.0;  // shells beyond the cap
};

struct MeasureTable {
    std::vector<MeasureRow> rows;
    double slope = 0.0, ci_low = 0.0, ci_high = 0.0;
    double predicted = 1.0;
    bool degenerate = false;
    std::string note;
};

namespace detail {

// Student t quantile (two-sided 95%) for small degrees of freedom
inline double t95(int dof) {
    static const double tab[] = {0, 12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228};
    return dof >= 1 && dof <= 10 ? tab[dof] : 1.96 + 2.5 / dof;
}

}  // namespace detail

// For every node the largest gamma at which it survives all shells |k| <= cap is
//   g*(node) = min_k min(|L_k0| / eps_min, sigma_min(A1)/mix_min, sigma_min(A2)/mix_min) |k|^tau,
// so one pass yields the excluded fraction for every gamma (excluded iff gamma > g*).
inline MeasureTable estimate_excluded_measure(const FrequencyData& f, const ScaleSet& scales, const LambdaGrid& grid,
                                              const std::vector<double>& gammas, double tau, int N, int cap = 20,
                                              int workers = 1) {
    if (grid.nodes.empty()) throw DomainError("parameter grid is empty");
    MeasureTable tab;
    tab.predicted = 1.0 / (N + 1);
    const double em = scales.min_eps(), mm = scales.min_all();
    const auto shells = lattice_shell(f.n, cap, true);
    std::vector<double> gstar(grid.size(), std::numeric_limits<double>::infinity());
    detail::parallel_for(grid.size(), workers, [&](std::size_t i) {
        double g = std::numeric_limits<double>::infinity();
        for (const IVec& k : shells) {
            const auto d = detail::shell_divisors(f, k, grid.nodes[i]);
            const double kt = std::pow(double(l1norm(k)), tau);
            g = std::min({g, d.scalar / em * kt, d.a1 / mm * kt, d.a2 / mm * kt});
        }
        gstar[i] = g;
    });
    // tail of the shells beyond the cap: strip |<k,lambda>| < delta has relative measure at most
    // 2 delta sqrt(n) diam^{n-1} / (|k|_1 vol)
    VecD lo = grid.nodes[0], hi = grid.nodes[0];
    for (const auto& v : grid.nodes) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    double diam = (hi - lo).norm(), vol = 1.0;
    for (Eigen::Index a = 0; a < lo.size(); ++a) vol *= std::max(hi(a) - lo(a), 1e-300);
    for (double gamma : gammas) {
        MeasureRow row;
        row.gamma = gamma;
        std::size_t ex = 0;
        for (double g : gstar) ex += gamma > g;
        row.excluded_fraction = double(ex) / double(grid.size());
        double tail = 0.0;
        for (long j = cap + 1; j < cap + 100000; ++j) {
            const double t = 0.5 * shell_count(f.n, j) * 2.0 * em * gamma / std::pow(double(j), tau) * std::sqrt(double(f.n)) *
                             std::pow(diam, f.n - 1) / (j * vol);
            tail += t;
            if (t < 1e-14 * tail) break;
        }
        row.tail_bound = std::min(tail, 1.0);
        tab.rows.push_back(row);
    }
    std::vector<double> X, Y;
    for (const auto& r : tab.rows)
        if (r.excluded_fraction > 0.0 && r.gamma > 0.0) {
            X.push_back(std::log(r.gamma));
            Y.push_back(std::log(r.excluded_fraction));
        }
    if (X.size() < 2) {
        tab.degenerate = true;
        tab.note = "fewer than two nonzero exclusion fractions; no slope fitted";
        return tab;
    }
    const double nx = double(X.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < X.size(); ++i) mx += X[i] / nx, my += Y[i] / nx;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < X.size(); ++i) sxx += (X[i] - mx) * (X[i] - mx), sxy += (X[i] - mx) * (Y[i] - my);
    if (sxx == 0.0) {
        tab.degenerate = true;
        tab.note = "all gammas equal";
        return tab;
    }
    tab.slope = sxy / sxx;
    double half = 0.0;
    if (X.size() > 2) {
        double sse = 0.0;
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double e = Y[i] - (my + tab.slope * (X[i] - mx));
            sse += e * e;
        }
        half = detail::t95(static_cast<int>(X.size()) - 2) * std::sqrt(sse / (nx - 2) / sxx);
    }
    tab.ci_low = tab.slope - half;
    tab.ci_high = tab.slope + half;
    return tab;
}

inline void write_measure_csv(std::ostream& os, const MeasureTable& t) {
    auto g = [](double v) {
        char b[40];
        std::snprintf(b, sizeof b, "%.17g", v);
        return std::string(b);
    };
    os << "gamma,excluded_fraction,fitted_slope,ci_low,ci_high\n";
    for (const auto& r : t.rows)
        os << g(r.gamma) << ',' << g(r.excluded_fraction) << ',' << g(t.slope) << ',' << g(t.ci_low) << ',' << g(t.ci_high)
           << '\n';
}

inline nlohmann::json to_json(const MeasureTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"gamma", r.gamma}, {"excluded_fraction", r.excluded_fraction}, {"tail_bound", r.tail_bound}});
    nlohmann::json j = {{"rows", rows},         {"slope", t.slope},         {"ci_low", t.ci_low},
                        {"ci_high", t.ci_high}, {"predicted", t.predicted}, {"degenerate", t.degenerate}};
    if (!t.note.empty()) j["note"] = t.note;
    return j;
}

}  // namespace mskam

#endif  // MSKAM_NONRES_HPP
