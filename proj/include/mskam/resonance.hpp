#ifndef MSKAM_RESONANCE_HPP
#define MSKAM_RESONANCE_HPP

#include "mskam/nonres.hpp"
#include "mskam/normalform.hpp"

#include <unsupported/Eigen/FFT>

#include <numeric>

namespace mskam {

using IMat = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

struct MorseDegeneracy : NumericError {
    using NumericError::NumericError;
};

// small divisor in the averaging generating function; lists every offending mode
struct ResonanceSmallDivisor : SmallDivisor {
    std::vector<IVec> modes;
    std::string message;
    ResonanceSmallDivisor(std::vector<IVec> ms, double div, double fl)
        : SmallDivisor(ms.front(), div, fl), modes(std::move(ms)) {
        message = "small divisor <k, omega*> below " + std::to_string(fl) + " for modes";
        for (const auto& k : modes) message += " " + to_string_k(k);
    }
    const char* what() const noexcept override { return message.c_str(); }
};

// ---------------- integer lattice tools ----------------

namespace detail {

inline long long checked(__int128 v) {
    if (v > (__int128(1) << 62) || v < -(__int128(1) << 62)) throw NumericError("integer overflow in lattice arithmetic");
    return static_cast<long long>(v);
}

}  // namespace detail

// exact determinant (Bareiss)
inline long long integer_det(const IMat& A) {
    if (A.rows() != A.cols()) throw StructuralError("determinant of a non-square matrix");
    const Eigen::Index n = A.rows();
    if (n == 0) return 1;
    std::vector<std::vector<__int128>> M(n, std::vector<__int128>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) M[i][j] = A(i, j);
    __int128 prev = 1;
    int sign = 1;
    for (Eigen::Index k = 0; k < n - 1; ++k) {
        if (M[k][k] == 0) {
            Eigen::Index s = k + 1;
            while (s < n && M[s][k] == 0) ++s;
            if (s == n) return 0;
            std::swap(M[k], M[s]);
            sign = -sign;
        }
        for (Eigen::Index i = k + 1; i < n; ++i)
            for (Eigen::Index j = k + 1; j < n; ++j) {
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) / prev;
                detail::checked(M[i][j]);
            }
        prev = M[k][k];
    }
    return detail::checked(sign * M[n - 1][n - 1]);
}

// Column echelon form A V = H by unimodular column operations; W = V^{-1} is tracked alongside.
struct ColumnEchelon {
    IMat H, V, W;
    int rank = 0;
};

inline ColumnEchelon column_echelon(const IMat& A) {
    ColumnEchelon E;
    const Eigen::Index rows = A.rows(), cols = A.cols();
    E.H = A;
    E.V = IMat::Identity(cols, cols);
    E.W = IMat::Identity(cols, cols);
    auto swap_cols = [&](Eigen::Index a, Eigen::Index b) {
        if (a == b) return;
        E.H.col(a).swap(E.H.col(b));
        E.V.col(a).swap(E.V.col(b));
        E.W.row(a).swap(E.W.row(b));
    };
    // col j -= q col p; inverse: row p += q row j
    auto axpy = [&](Eigen::Index j, Eigen::Index p, long long q) {
        for (Eigen::Index r = 0; r < rows; ++r) E.H(r, j) = detail::checked(__int128(E.H(r, j)) - __int128(q) * E.H(r, p));
        for (Eigen::Index r = 0; r < cols; ++r) E.V(r, j) = detail::checked(__int128(E.V(r, j)) - __int128(q) * E.V(r, p));
        for (Eigen::Index c = 0; c < cols; ++c) E.W(p, c) = detail::checked(__int128(E.W(p, c)) + __int128(q) * E.W(j, c));
    };
    Eigen::Index piv = 0;
    for (Eigen::Index i = 0; i < rows && piv < cols; ++i) {
        while (true) {
            Eigen::Index best = -1;
            for (Eigen::Index j = piv; j < cols; ++j)
                if (E.H(i, j) != 0 && (best < 0 || std::llabs(E.H(i, j)) < std::llabs(E.H(i, best)))) best = j;
            if (best < 0) break;
            swap_cols(best, piv);
            bool done = true;
            for (Eigen::Index j = piv + 1; j < cols; ++j)
                if (E.H(i, j) != 0) {
                    axpy(j, piv, E.H(i, j) / E.H(i, piv));
                    done = done && E.H(i, j) == 0;
                }
            if (done) break;
        }
        if (E.H(i, piv) != 0) {
            if (E.H(i, piv) < 0) {
                E.H.col(piv) = -E.H.col(piv);
                E.V.col(piv) = -E.V.col(piv);
                E.W.row(piv) = -E.W.row(piv);
            }
            ++piv;
        }
    }
    E.rank = static_cast<int>(piv);
    return E;
}

inline IVec column_ivec(const IMat& A, Eigen::Index c) {
    IVec k(A.rows());
    for (Eigen::Index r = 0; r < A.rows(); ++r) k[r] = static_cast<int>(A(r, c));
    return k;
}

// first nonzero entry positive
inline void normalize_sign(IMat& B) {
    for (Eigen::Index c = 0; c < B.cols(); ++c)
        for (Eigen::Index r = 0; r < B.rows(); ++r)
            if (B(r, c) != 0) {
                if (B(r, c) < 0) B.col(c) = -B.col(c);
                break;
            }
}

// ---------------- resonance detection ----------------

struct ResonanceDetection {
    int d = 0;
    int m0 = 0;
    IMat generators;  // d x m0
    double tol = 0.0;
    int cap = 0;
    bool exact = false;
    std::vector<double> residuals;  // |<tau_i, omega>|
    std::vector<std::string> warnings;
};

inline int default_search_cap(int d) { return d <= 2 ? 20 : d == 3 ? 10 : d == 4 ? 6 : 4; }

// Lattice basis of {k : |<k, omega>| <= tol, |k|_1 <= cap} by exhaustive enumeration and column echelon
// reduction of the resonant vectors found. tol < 0 selects 1e-9 |omega|.
inline ResonanceDetection detect_resonance(const VecD& omega, double tol = -1.0, int cap = 0) {
    if (!omega.allFinite()) throw DomainError("frequency vector must be finite");
    ResonanceDetection out;
    out.d = static_cast<int>(omega.size());
    out.tol = tol < 0.0 ? 1e-9 * omega.norm() : tol;
    out.cap = cap > 0 ? cap : default_search_cap(out.d);
    std::vector<IVec> found;
    std::vector<std::pair<double, IVec>> near;
    const double near_tol = std::max(1e3 * out.tol, 1e-6 * omega.norm());
    for (const IVec& k : lattice_shell(out.d, out.cap, true)) {
        const double r = std::abs(dot(k, omega));
        if (r <= out.tol)
            found.push_back(k);
        else if (r <= near_tol)
            near.emplace_back(r, k);
    }
    if (!found.empty()) {
        IMat F(out.d, static_cast<Eigen::Index>(found.size()));
        for (std::size_t c = 0; c < found.size(); ++c)
            for (int r = 0; r < out.d; ++r) F(r, c) = found[c][r];
        ColumnEchelon E = column_echelon(F);
        out.m0 = E.rank;
        out.generators = E.H.leftCols(E.rank);
        normalize_sign(out.generators);
    } else {
        out.generators = IMat(out.d, 0);
    }
    for (Eigen::Index c = 0; c < out.generators.cols(); ++c)
        out.residuals.push_back(std::abs(dot(column_ivec(out.generators, c), omega)));
    std::sort(near.begin(), near.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < near.size() && i < 3; ++i)
        out.warnings.push_back("near resonance at k=" + SmallDivisor::to_string_k(near[i].second) +
                               " residual " + std::to_string(near[i].first) + "; cap " +
                               std::to_string(out.cap) + " may hide a resonance");
    return out;
}

// Exact version for rational omega = num / den: integer kernel of the scaled integer vector.
inline ResonanceDetection detect_resonance_rational(const std::vector<long long>& num, const std::vector<long long>& den) {
    if (num.size() != den.size() || num.empty()) throw StructuralError("rational frequency dimensions");
    ResonanceDetection out;
    out.d = static_cast<int>(num.size());
    out.exact = true;
    long long L = 1;
    for (long long q : den) {
        if (q == 0) throw DomainError("zero denominator");
        L = detail::checked(__int128(L) / std::gcd(L, std::llabs(q)) * std::llabs(q));
    }
    IMat w(1, out.d);
    for (int a = 0; a < out.d; ++a) w(0, a) = detail::checked(__int128(num[a]) * (L / den[a]));
    ColumnEchelon E = column_echelon(w);
    out.m0 = out.d - E.rank;
    out.generators = E.V.rightCols(out.m0);
    if (out.m0 > 0) {
        // echelon form of the kernel basis for a canonical answer
        ColumnEchelon K = column_echelon(out.generators);
        out.generators = K.H.leftCols(K.rank);
    }
    normalize_sign(out.generators);
    out.residuals.assign(out.m0, 0.0);
    return out;
}

// ---------------- unimodular completion ----------------

struct ResonanceFrame {
    int d = 0, m0 = 0, n = 0;
    IMat K_prime;  // d x m0, resonance generators
    IMat K_star;   // d x n
    IMat K0;       // (K_star, K_prime)
    IMat K0_inv;
    long long det = 0;

    MatD K0d() const { return K0.cast<double>(); }
};

// integer K* with det(K*, K') = +1
inline ResonanceFrame complete_unimodular(const IMat& K_prime) {
    ResonanceFrame f;
    f.d = static_cast<int>(K_prime.rows());
    f.m0 = static_cast<int>(K_prime.cols());
    f.n = f.d - f.m0;
    if (f.n < 0) throw StructuralError("more generators than dimensions");
    f.K_prime = K_prime;
    ColumnEchelon E = column_echelon(IMat(K_prime.transpose()));
    if (E.rank < f.m0) throw DomainError("resonance generators are linearly dependent");
    long long g = 1;
    for (int i = 0; i < f.m0; ++i) g *= E.H(i, i);
    if (g != 1) throw DomainError("K' is not primitive: gcd of maximal minors = " + std::to_string(g));
    f.K_star = E.W.bottomRows(f.n).transpose();
    {
        // order completion columns by their leading row
        std::vector<Eigen::Index> order(f.n);
        std::iota(order.begin(), order.end(), 0);
        auto lead = [&](Eigen::Index c) {
            for (Eigen::Index r = 0; r < f.K_star.rows(); ++r)
                if (f.K_star(r, c) != 0) return r;
            return f.K_star.rows();
        };
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lead(a) < lead(b); });
        IMat sorted(f.d, f.n);
        for (int c = 0; c < f.n; ++c) sorted.col(c) = f.K_star.col(order[c]);
        f.K_star = sorted;
    }
    f.K0 = IMat(f.d, f.d);
    f.K0 << f.K_star, f.K_prime;
    f.det = integer_det(f.K0);
    if (f.det == -1) {
        if (f.n == 0) throw DomainError("no completion column to fix the sign of det K0");
        f.K_star.col(0) = -f.K_star.col(0);
        f.K0.col(0) = -f.K0.col(0);
        f.det = integer_det(f.K0);
    }
    if (f.det != 1) throw NumericError("completion failed: det K0 = " + std::to_string(f.det));
    // adjugate-free inverse: solve K0 X = I exactly by echelon of K0^T
    ColumnEchelon T = column_echelon(IMat(f.K0.transpose()));
    // K0^T V = H with H lower triangular, unimodular; K0^{-1} = (V H^{-1})^T, H^{-1} integer
    const Eigen::Index d = f.d;
    IMat Hinv = IMat::Zero(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        // forward substitution H x = e_c, unit diagonal after |det| = 1
        for (Eigen::Index r = 0; r < d; ++r) {
            __int128 s = r == c ? 1 : 0;
            for (Eigen::Index t = 0; t < r; ++t) s -= __int128(T.H(r, t)) * Hinv(t, c);
            if (T.H(r, r) != 1) throw NumericError("non-unit pivot inverting K0");
            Hinv(r, c) = detail::checked(s);
        }
    }
    IMat VH = IMat::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            __int128 s = 0;
            for (Eigen::Index t = 0; t < d; ++t) s += __int128(T.V(i, t)) * Hinv(t, j);
            VH(i, j) = detail::checked(s);
        }
    f.K0_inv = VH.transpose();
    return f;
}

// y - y0 = K0 p, q = K0^T x preserves sum dy ^ dx: K0^T K0^{-T} = I and det K0 = 1, checked in integers
inline bool frame_is_symplectic(const ResonanceFrame& f) {
    IMat P = IMat::Zero(f.d, f.d);
    for (int i = 0; i < f.d; ++i)
        for (int j = 0; j < f.d; ++j) {
            __int128 s = 0;
            for (int t = 0; t < f.d; ++t) s += __int128(f.K0_inv(i, t)) * f.K0(t, j);
            P(i, j) = detail::checked(s);
        }
    return f.det == 1 && P == IMat::Identity(f.d, f.d);
}

inline nlohmann::json to_json(const IMat& A) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        std::vector<long long> row(A.cols());
        for (Eigen::Index c = 0; c < A.cols(); ++c) row[c] = A(r, c);
        j.push_back(row);
    }
    return j;
}

inline nlohmann::json to_json(const ResonanceFrame& f) {
    return {{"d", f.d}, {"m0", f.m0}, {"n", f.n}, {"K_prime", to_json(f.K_prime)}, {"K_star", to_json(f.K_star)},
            {"K0", to_json(f.K0)}, {"det_K0", f.det}, {"symplectic", frame_is_symplectic(f)}};
}

// ---------------- trigonometric polynomials on T^m ----------------

struct TrigPoly {
    int m = 0;
    std::map<IVec, cd> c;

    void add(const IVec& l, cd v) {
        if (v == cd(0.0)) return;
        c[l] += v;
    }
    cd value(const VecD& th) const {
        cd s = 0.0;
        for (const auto& [l, v] : c) s += v * std::exp(I_unit * dot(l, th));
        return s;
    }
    // d^alpha at theta
    cd derivative(const VecD& th, const IVec& alpha) const {
        cd s = 0.0;
        for (const auto& [l, v] : c) {
            cd f = v * std::exp(I_unit * dot(l, th));
            for (int a = 0; a < m; ++a)
                for (int t = 0; t < alpha[a]; ++t) f *= I_unit * double(l[a]);
            s += f;
        }
        return s;
    }
    VecD gradient(const VecD& th) const {
        VecD g = VecD::Zero(m);
        for (const auto& [l, v] : c) {
            const cd e = I_unit * v * std::exp(I_unit * dot(l, th));
            for (int a = 0; a < m; ++a) g(a) += (e * double(l[a])).real();
        }
        return g;
    }
    MatD hessian(const VecD& th) const {
        MatD H = MatD::Zero(m, m);
        for (const auto& [l, v] : c) {
            const double e = (-v * std::exp(I_unit * dot(l, th))).real();
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) H(a, b) += e * l[a] * l[b];
        }
        return H;
    }
    // V(theta + shift) as a trigonometric polynomial
    TrigPoly translated(const VecD& shift) const {
        TrigPoly out{m, {}};
        for (const auto& [l, v] : c) out.add(l, v * std::exp(I_unit * dot(l, shift)));
        return out;
    }
    double scale(int order) const {
        double s = 0.0;
        for (const auto& [l, v] : c) s += std::abs(v) * std::pow(double(std::max(1, l1norm(l))), order);
        return s;
    }
};

inline nlohmann::json to_json(const TrigPoly& V) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& [l, v] : V.c) t.push_back({{"l", l}, {"re", v.real()}, {"im", v.imag()}});
    return {{"m", V.m}, {"modes", t}};
}

// ---------------- critical points ----------------

struct CriticalPoint {
    VecD theta;
    double value = 0.0;
    MatD hessian;
    int n_pos = 0, n_neg = 0, n_zero = 0;
    bool degenerate = false;
    std::string kind;  // min | max | saddle | degenerate
};

struct CriticalOptions {
    int per_axis = 0;  // seeds per torus axis (0: 64, 16, 8 for m = 1, 2, >= 3)
    double newton_tol = 1e-12;
    double dedup_radius = 1e-6;
    int max_iter = 60;
    double degeneracy_tol = 1e-8;  // relative to the second-derivative scale
    int workers = 1;
};

struct CriticalSearch {
    std::vector<CriticalPoint> points;
    int seeds = 0;
    int diverged = 0;
    bool all_nondegenerate = true;
    bool count_law = false;  // #points >= 2^m when all are nondegenerate
    std::vector<std::string> notes;
};

inline double torus_distance(const VecD& a, const VecD& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        double t = std::fmod(std::abs(a(i) - b(i)), 2 * M_PI);
        t = std::min(t, 2 * M_PI - t);
        s += t * t;
    }
    return std::sqrt(s);
}

inline VecD wrap_angles(VecD th) {
    for (Eigen::Index i = 0; i < th.size(); ++i) {
        th(i) = std::fmod(th(i), 2 * M_PI);
        if (th(i) < 0) th(i) += 2 * M_PI;
        if (th(i) >= 2 * M_PI - 1e-14) th(i) = 0.0;
    }
    return th;
}

inline CriticalPoint classify_critical_point(const TrigPoly& V, const VecD& th, double degeneracy_tol = 1e-8) {
    CriticalPoint p;
    p.theta = th;
    p.value = V.value(th).real();
    p.hessian = V.hessian(th);
    const double s2 = std::max(V.scale(2), 1e-300);
    if (V.m > 0) {
        Eigen::SelfAdjointEigenSolver<MatD> es(p.hessian, Eigen::EigenvaluesOnly);
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            const double e = es.eigenvalues()(i);
            if (std::abs(e) <= degeneracy_tol * s2)
                ++p.n_zero;
            else if (e > 0)
                ++p.n_pos;
            else
                ++p.n_neg;
        }
    }
    p.degenerate = p.n_zero > 0;
    p.kind = p.degenerate ? "degenerate" : p.n_neg == 0 ? "min" : p.n_pos == 0 ? "max" : "saddle";
    return p;
}

// Seeds on a uniform torus grid, Newton on the gradient, merge within the dedup radius.
inline CriticalSearch find_critical_points(const TrigPoly& V, const CriticalOptions& o = {}) {
    CriticalSearch out;
    const int m = V.m;
    if (m == 0) throw DomainError("critical points need at least one slow angle");
    const int per = o.per_axis > 0 ? o.per_axis : m == 1 ? 64 : m == 2 ? 16 : 8;
    long long total = 1;
    for (int a = 0; a < m; ++a) total *= per;
    out.seeds = static_cast<int>(total);
    std::vector<std::optional<VecD>> found(total);
    const double s1 = std::max(V.scale(1), 1e-300);
    detail::parallel_for(static_cast<std::size_t>(total), o.workers, [&](std::size_t idx) {
        VecD th(m);
        std::size_t r = idx;
        for (int a = 0; a < m; ++a) {
            th(a) = 2 * M_PI * ((r % per) + 0.5) / per;
            r /= per;
        }
        for (int it = 0; it < o.max_iter; ++it) {
            const VecD g = V.gradient(th);
            if (g.norm() <= o.newton_tol * s1) {
                found[idx] = wrap_angles(th);
                return;
            }
            const MatD H = V.hessian(th);
            VecD step = H.fullPivLu().solve(-g);
            if (!step.allFinite()) return;
            const double len = step.norm();
            if (len > 0.5) step *= 0.5 / len;
            th += step;
        }
        const VecD g = V.gradient(th);
        if (g.norm() <= 1e3 * o.newton_tol * s1) found[idx] = wrap_angles(th);
    });
    for (const auto& f : found) {
        if (!f) {
            ++out.diverged;
            continue;
        }
        bool dup = false;
        for (const auto& p : out.points) dup = dup || torus_distance(p.theta, *f) < o.dedup_radius;
        if (!dup) out.points.push_back(classify_critical_point(V, *f, o.degeneracy_tol));
    }
    std::sort(out.points.begin(), out.points.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
        for (Eigen::Index i = 0; i < a.theta.size(); ++i)
            if (std::abs(a.theta(i) - b.theta(i)) > 1e-9) return a.theta(i) < b.theta(i);
        return false;
    });
    for (const auto& p : out.points) out.all_nondegenerate = out.all_nondegenerate && !p.degenerate;
    out.count_law = out.all_nondegenerate && out.points.size() >= (std::size_t(1) << m);
    if (out.diverged > 0) out.notes.push_back(std::to_string(out.diverged) + " seeds did not converge and were skipped");
    if (!out.all_nondegenerate) out.notes.push_back("degenerate critical point found");
    return out;
}

inline nlohmann::json to_json(const CriticalPoint& p) {
    nlohmann::json H = nlohmann::json::array();
    for (Eigen::Index r = 0; r < p.hessian.rows(); ++r) {
        std::vector<double> row(p.hessian.cols());
        for (Eigen::Index c = 0; c < p.hessian.cols(); ++c) row[c] = p.hessian(r, c);
        H.push_back(row);
    }
    return {{"theta", std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size())},
            {"value", p.value},
            {"hessian", H},
            {"signature", {p.n_pos, p.n_neg, p.n_zero}},
            {"kind", p.kind}};
}

// ---------------- resonant system and frame change ----------------

// H(x, y) = H1(y) + eps^2 P(x, y) on T^d x R^d; H1 carries only k = 0 terms.
struct ResonantSystem {
    int d = 0;
    TFSeries H1;
    TFSeries P;
    double eps = 0.01;

    void validate() const {
        if (H1.n != d || P.n != d || H1.m != 0 || P.m != 0) throw StructuralError("resonant system dimensions");
        for (const auto& [mi, c] : H1.terms)
            if (!mi.k_is_zero()) throw StructuralError("H1 must not depend on the angles");
        if (!(eps > 0.0 && eps < 1.0)) throw DomainError("eps must lie in (0, 1)");
    }
    VecD frequency(const VecD& y) const {
        VecD w(d);
        for (int a = 0; a < d; ++a) w(a) = d_y(H1, a).evaluate(VecD::Zero(d), y, VecD()).real();
        return w;
    }
    MatD hessian(const VecD& y) const {
        MatD Hs(d, d);
        for (int a = 0; a < d; ++a) {
            TFSeries da = d_y(H1, a);
            for (int b = 0; b < d; ++b) Hs(a, b) = d_y(da, b).evaluate(VecD::Zero(d), y, VecD()).real();
        }
        return Hs;
    }
};

namespace detail {

using Poly = std::map<IVec, double>;

// prod_a (sum_b K(a,b) p_b)^{i_a}
inline Poly linear_power(const IMat& K, const IVec& i) {
    const int d = static_cast<int>(K.rows());
    Poly acc{{IVec(d, 0), 1.0}};
    for (int a = 0; a < d; ++a)
        for (int t = 0; t < i[a]; ++t) {
            Poly next;
            for (const auto& [e, c] : acc)
                for (int b = 0; b < d; ++b) {
                    if (K(a, b) == 0) continue;
                    IVec f = e;
                    ++f[b];
                    next[f] += c * double(K(a, b));
                }
            acc.swap(next);
        }
    return acc;
}

}  // namespace detail

// S(x, y) -> S(K0^{-T} q, y0 + K0 p) as a series in (q, p)
inline TFSeries frame_change(const TFSeries& S, const ResonanceFrame& f, const VecD& y0) {
    TFSeries sh = shift(S, y0, VecD());
    int fcap = 0;
    std::vector<std::pair<MultiIndex, cd>> staged;
    std::map<IVec, detail::Poly> cache;
    for (const auto& [mi, c] : sh.terms) {
        const IVec k = mi.fourier_k(), i = mi.taylor_i();
        IVec l(f.d, 0);
        for (int a = 0; a < f.d; ++a) {
            long long s = 0;
            for (int b = 0; b < f.d; ++b) s += f.K0_inv(a, b) * k[b];
            l[a] = static_cast<int>(s);
        }
        fcap = std::max(fcap, supnorm(l));
        auto it = cache.find(i);
        if (it == cache.end()) it = cache.emplace(i, detail::linear_power(f.K0, i)).first;
        for (const auto& [e, w] : it->second) staged.emplace_back(MultiIndex(l, e, {}), c * w);
    }
    TFSeries out(f.d, 0, S.degree_cap, std::max(fcap, S.fourier_cap));
    for (const auto& [mi, c] : staged) out.add(mi, c);
    // angle-free bins keep their degree; a mode of l1 size K maps to at most |K0^{-1}|_1 K
    long long col = 0;
    for (int b = 0; b < f.d; ++b) {
        long long s = 0;
        for (int a = 0; a < f.d; ++a) s += std::llabs(f.K0_inv(a, b));
        col = std::max(col, s);
    }
    long long row = 0;
    for (int a = 0; a < f.d; ++a) {
        long long s = 0;
        for (int b = 0; b < f.d; ++b) s += std::llabs(f.K0(a, b));
        row = std::max(row, s);
    }
    for (const auto& [key, w] : sh.spill)
        out.add_spill(static_cast<int>(col * key.first), key.second, w * std::pow(double(row), key.second));
    return out;
}

// ---------------- reduction ----------------

struct ReductionOptions {
    double divisor_floor = 1e-8;  // |<k, omega*>| >= divisor_floor |omega*|
    int degree_cap = 0;           // 0: max(4, caps of the input)
    int fourier_cap = 0;          // 0: cap of the transformed perturbation
    int critical_index = -1;      // -1: first nondegenerate minimum, else first nondegenerate point
    CriticalOptions crit;
};

struct ReducedForm {
    ResonanceFrame frame;
    VecD y0;
    double eps = 0.0;
    VecD omega_star;
    MatD A;        // K0^T d^2 H1 K0
    MatD M_breve;  // unscaled normal matrix in (y, u, v) order
    TrigPoly averaged;
    CriticalSearch critical;
    CriticalPoint crit;
    std::string torus_type;  // elliptic | hyperbolic | mixed
    VecC normal_eigenvalues;
    TFSeries generating;  // S1(q), the averaging part of the generating function
    NormalForm nf;        // e + <omega*, y> + 1/2 <w, M w> + h + eps^{3/2} P-hat
    double homological_residual = 0.0;
    double fast_leftover = 0.0;
    double reality_residue = 0.0;
    nlohmann::json ledger;
};

namespace detail {

// split q = (q_f, q_s): n fast angles first, m0 slow angles last
inline IVec fast_part(const IVec& l, int n) { return IVec(l.begin(), l.begin() + n); }
inline IVec slow_part(const IVec& l, int n) { return IVec(l.begin() + n, l.end()); }

inline bool is_zero(const IVec& v) {
    for (int x : v)
        if (x) return false;
    return true;
}

// S(q, p) -> S(q, Y + G(q)), G_a angle-only series
inline TFSeries substitute_action_shift(const TFSeries& S, const std::vector<TFSeries>& G) {
    TFSeries out = S.empty_like();
    const int d = S.n;
    std::map<std::pair<int, int>, TFSeries> powers;  // (a, e) -> G_a^e
    auto gpow = [&](int a, int e) -> const TFSeries& {
        auto key = std::make_pair(a, e);
        auto it = powers.find(key);
        if (it != powers.end()) return it->second;
        TFSeries pw = constant_series(d, 0, S.degree_cap, S.fourier_cap, 1.0);
        for (int t = 0; t < e; ++t) pw = multiply(pw, G[a]);
        return powers.emplace(key, pw).first->second;
    };
    for (const auto& [mi, c] : S.terms) {
        const IVec i = mi.taylor_i();
        IVec e(d, 0);
        while (true) {
            // c * prod_a C(i_a, e_a) Y_a^{e_a} G_a^{i_a - e_a}
            TFSeries term(d, 0, S.degree_cap, S.fourier_cap);
            MultiIndex base = mi;
            double b = 1.0;
            for (int a = 0; a < d; ++a) {
                base.i(a) = e[a];
                b *= binom(i[a], e[a]);
            }
            term.add(base, c * b);
            for (int a = 0; a < d; ++a)
                if (i[a] > e[a]) term = multiply(term, gpow(a, i[a] - e[a]));
            out += term;
            int a = 0;
            while (a < d && e[a] == i[a]) e[a++] = 0;
            if (a == d) break;
            ++e[a];
        }
    }
    for (const auto& [key, w] : S.spill) out.add_spill(key.first, key.second, w);
    return out;
}

inline double factorial(int j) {
    double f = 1.0;
    for (int t = 2; t <= j; ++t) f *= t;
    return f;
}

}  // namespace detail

// Angle translation by theta* in the slow directions, Taylor expansion of e^{i<l_s, u>} in the slow
// displacement u, and the renaming (X_f, Y_f, X_s - theta*, Y_s) -> (x, y, u, v), z = (u, v).
inline TFSeries slow_angles_to_normal_variables(const TFSeries& T, int n, int m0, const VecD& theta, int degree_cap,
                                                int fourier_cap) {
    TFSeries out(n, m0, degree_cap, fourier_cap);
    for (const auto& [mi, c] : T.terms) {
        const IVec k = mi.fourier_k(), i = mi.taylor_i();
        const IVec lf = detail::fast_part(k, n), ls = detail::slow_part(k, n);
        const cd phase = c * std::exp(I_unit * dot(ls, theta));
        IVec yi(i.begin(), i.begin() + n), vi(i.begin() + n, i.end());
        const int base_deg = mi.degree();
        const int ls1 = l1norm(ls);
        // (i <l_s, u>)^j / j! expanded over u-monomials
        for (int j = 0;; ++j) {
            if (base_deg + j > degree_cap || (ls1 == 0 && j > 0)) {
                if (ls1 == 0) break;
                // tail mass as majorant bins
                for (int jj = j; jj < j + 60; ++jj) {
                    const double mass = std::abs(phase) * std::pow(double(ls1), jj) / detail::factorial(jj);
                    if (mass < 1e-300) break;
                    out.add_spill(l1norm(lf), base_deg + jj, mass);
                }
                break;
            }
            for (const IVec& alpha : multi_indices(m0, j, j)) {
                double coef = 1.0 / detail::factorial(j);
                // multinomial j! / prod alpha! times prod l_a^alpha_a
                coef *= detail::factorial(j);
                for (int a = 0; a < m0; ++a) coef *= std::pow(double(ls[a]), alpha[a]) / detail::factorial(alpha[a]);
                if (coef == 0.0) continue;
                cd ij = 1.0;
                for (int t = 0; t < j; ++t) ij *= I_unit;
                IVec jz(2 * m0, 0);
                for (int a = 0; a < m0; ++a) {
                    jz[a] = alpha[a];
                    jz[m0 + a] = vi[a];
                }
                out.add(MultiIndex(lf, yi, jz), phase * ij * coef);
            }
        }
    }
    for (const auto& [key, w] : T.spill) out.add_spill(key.first, key.second, w);
    return out;
}

inline std::string torus_type_of(const VecC& ev) {
    if (ev.size() == 0) return "none";
    bool all_im = true, all_re = true;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const double s = std::max(1e-300, std::abs(ev(i)));
        all_im = all_im && std::abs(ev(i).real()) <= 1e-9 * s;
        all_re = all_re && std::abs(ev(i).imag()) <= 1e-9 * s;
    }
    return all_im ? "elliptic" : all_re ? "hyperbolic" : "mixed";
}

// Reduction of H1 + eps^2 P near the resonant point y0 to
//   e + <omega*, y> + 1/2 <(y,z), M (y,z)> + eps h + eps^{3/2} P-hat,
// M = eps^{1/2} blockdiag(K0^T d^2H1 K0, eps d^2 [P~]) with z = (u, v) = (slow angle, slow action).
inline ReducedForm reduce_to_normal_form(const ResonantSystem& sys, const ResonanceFrame& frame, const VecD& y0,
                                         const ReductionOptions& opt = {}, const VecD* theta_star = nullptr) {
    sys.validate();
    if (frame.d != sys.d || y0.size() != sys.d) throw StructuralError("frame and system dimensions differ");
    if (frame.m0 == 0) throw DomainError("no resonance: nothing to reduce");
    const int n = frame.n, m0 = frame.m0, d = sys.d;
    const double eps = sys.eps, eps2 = eps * eps, se = std::sqrt(eps);
    ReducedForm R;
    R.frame = frame;
    R.y0 = y0;
    R.eps = eps;
    const VecD w0 = sys.frequency(y0);
    const MatD K0 = frame.K0d();
    const VecD kw = K0.transpose() * w0;
    R.omega_star = kw.head(n);
    const double wn = std::max(w0.norm(), 1e-300);
    for (int a = 0; a < m0; ++a)
        if (std::abs(kw(n + a)) > 1e-9 * wn * std::max<double>(1.0, frame.K_prime.cwiseAbs().maxCoeff()))
            throw DomainError("y0 is not on the resonant manifold: <tau, omega(y0)> = " + std::to_string(kw(n + a)));
    R.A = K0.transpose() * sys.hessian(y0) * K0;

    const int deg = opt.degree_cap > 0 ? opt.degree_cap : std::max({4, sys.P.degree_cap, sys.H1.degree_cap});
    TFSeries H1q = frame_change(sys.H1, frame, y0);
    TFSeries Pq = frame_change(sys.P, frame, y0);
    const int fcap = opt.fourier_cap > 0 ? opt.fourier_cap : Pq.fourier_cap;
    H1q.degree_cap = Pq.degree_cap = deg;
    H1q.fourier_cap = Pq.fourier_cap = fcap;

    // averaged potential and generating function from the p-free part of P~
    R.averaged.m = m0;
    R.generating = TFSeries(d, 0, deg, fcap);
    std::vector<IVec> bad;
    double worst = std::numeric_limits<double>::infinity();
    const double floor = opt.divisor_floor * std::max(R.omega_star.norm(), 1e-300);
    for (const auto& [mi, c] : Pq.terms) {
        if (mi.degree() != 0) continue;
        const IVec l = mi.fourier_k();
        const IVec lf = detail::fast_part(l, n), ls = detail::slow_part(l, n);
        if (detail::is_zero(lf)) {
            R.averaged.add(ls, c);
            continue;
        }
        const double div = dot(lf, R.omega_star);
        if (std::abs(div) < floor) {
            bad.push_back(lf);
            worst = std::min(worst, std::abs(div));
            continue;
        }
        R.generating.add(mi, I_unit * c / div);
    }
    if (!bad.empty()) throw ResonanceSmallDivisor(bad, worst, floor);
    // <omega*, d_{q_f} S1> + (P0 - [P0]) = 0 mode by mode
    {
        TFSeries res(d, 0, deg, fcap);
        for (int a = 0; a < n; ++a) res += cd(R.omega_star(a)) * d_x(R.generating, a);
        for (const auto& [mi, c] : Pq.terms)
            if (mi.degree() == 0 && !detail::is_zero(detail::fast_part(mi.fourier_k(), n))) res.add(mi, c);
        R.homological_residual = max_abs_coef(res);
    }

    // critical point of the averaged potential
    R.critical = find_critical_points(R.averaged, opt.crit);
    if (theta_star) {
        R.crit = classify_critical_point(R.averaged, *theta_star, opt.crit.degeneracy_tol);
        if (R.averaged.gradient(*theta_star).norm() > 1e-8 * std::max(R.averaged.scale(1), 1e-300))
            throw DomainError("supplied angle is not a critical point of the averaged potential");
    } else {
        int pick = -1;
        if (opt.critical_index >= 0) {
            pick = opt.critical_index < static_cast<int>(R.critical.points.size()) ? opt.critical_index : -2;
        } else {
            for (std::size_t i = 0; i < R.critical.points.size() && pick < 0; ++i)
                if (R.critical.points[i].kind == "min") pick = static_cast<int>(i);
            for (std::size_t i = 0; i < R.critical.points.size() && pick < 0; ++i)
                if (!R.critical.points[i].degenerate) pick = static_cast<int>(i);
        }
        if (pick < 0) throw MorseDegeneracy("no nondegenerate critical point of the averaged potential");
        R.crit = R.critical.points[pick];
    }
    if (R.crit.degenerate) throw MorseDegeneracy("critical point is Morse-degenerate");

    // exact generating-function change p = Y + eps^2 grad S1(q), X = q
    TFSeries Hq = H1q;
    Hq += cd(eps2) * Pq;
    std::vector<TFSeries> G;
    for (int a = 0; a < d; ++a) G.push_back(cd(eps2) * d_x(R.generating, a));
    TFSeries T = R.generating.terms.empty() ? Hq : detail::substitute_action_shift(Hq, G);
    // fast-angle dependence left in the action-free part, relative to eps^2
    for (const auto& [mi, c] : T.terms)
        if (mi.degree() == 0 && !detail::is_zero(detail::fast_part(mi.fourier_k(), n)))
            R.fast_leftover = std::max(R.fast_leftover, std::abs(c) / eps2);

    // slow angle to the critical point, normal variables, scaling (y, v) -> eps^{1/2} (y, v), H -> eps^{-1/2} H
    TFSeries Z = slow_angles_to_normal_variables(T, n, m0, R.crit.theta, deg, fcap);
    TFSeries Zs = Z.empty_like();
    for (const auto& [mi, c] : Z.terms) {
        int yv = 0;
        for (int a = 0; a < n; ++a) yv += mi.i(a);
        for (int a = 0; a < m0; ++a) yv += mi.j(m0 + a);
        Zs.add(mi, c * std::pow(se, yv - 1));
    }
    for (const auto& [key, w] : Z.spill) Zs.add_spill(key.first, key.second, w / se);

    // normal form pieces
    const int q = 2 * m0;
    R.M_breve = MatD::Zero(n + q, n + q);
    const MatD Vh = R.crit.hessian;
    R.M_breve.topLeftCorner(n, n) = R.A.topLeftCorner(n, n);
    R.M_breve.block(0, n + m0, n, m0) = R.A.topRightCorner(n, m0);
    R.M_breve.block(n + m0, 0, m0, n) = R.A.bottomLeftCorner(m0, n);
    R.M_breve.block(n + m0, n + m0, m0, m0) = R.A.bottomRightCorner(m0, m0);
    R.M_breve.block(n, n, m0, m0) = eps * Vh;

    NormalForm& nf = R.nf;
    nf.n = n;
    nf.m = m0;
    nf.omega = R.omega_star;
    nf.M = se * R.M_breve;
    nf.e = Zs.coef(MultiIndex::zero(n, m0)).real();
    nf.h = TFSeries(n, m0, deg, fcap);
    // eps h: cubic and higher Taylor terms of H1 in (y, v), scaled
    {
        TFSeries H1z = slow_angles_to_normal_variables(H1q, n, m0, VecD::Zero(m0), deg, fcap);
        for (const auto& [mi, c] : H1z.terms) {
            if (mi.degree() < 3 || !mi.k_is_zero()) continue;
            int yv = 0;
            for (int a = 0; a < n; ++a) yv += mi.i(a);
            for (int a = 0; a < m0; ++a) yv += mi.j(m0 + a);
            nf.h.add(mi, c * std::pow(se, yv - 1));
        }
    }
    nf.P = Zs.empty_like();
    TFSeries N = integrable_series(nf);
    TFSeries Phat = Zs - N;
    const double scale = std::pow(eps, 1.5);
    Phat *= cd(1.0 / scale);
    {
        // sin/cos of the critical angle leave rounding-level coefficients; their mass moves to the spill
        const double tol = 1e-13 * std::max(max_abs_coef(Phat), 1.0);
        for (const auto& [mi, c] : Phat.terms)
            if (std::abs(c) <= tol) Phat.add_spill(mi.kl1(), mi.degree(), std::abs(c));
        Phat.prune(tol);
    }
    nf.eps = scale;
    R.reality_residue = reality_residue(Phat) / std::max(max_abs_coef(Phat), 1e-300);
    nf.P = real_part_symmetrized(Phat);
    nf.scales.eps = scale;
    nf.scales.eps_vec = {se};
    nf.scales.mu_vec = {scale};
    nf.scales.ceiling = 1.0;
    nf.dom.r = 0.5;
    nf.dom.s = 0.5;
    nf.dom.eta = 0.1;

    const MatD MJ = nf.M.bottomRightCorner(q, q) * symplectic_J(m0);
    Eigen::ComplexEigenSolver<MatC> es(MJ.cast<cd>(), false);
    R.normal_eigenvalues = es.eigenvalues();
    R.torus_type = torus_type_of(R.normal_eigenvalues);

    // P-hat ledger by (degree in (y, v), degree in u)
    nlohmann::json by = nlohmann::json::object();
    for (const auto& [mi, c] : nf.P.terms) {
        int yv = 0, u = 0;
        for (int a = 0; a < n; ++a) yv += mi.i(a);
        for (int a = 0; a < m0; ++a) {
            u += mi.j(a);
            yv += mi.j(m0 + a);
        }
        const std::string key = "yv" + std::to_string(yv) + "_u" + std::to_string(u);
        by[key] = std::max(by.value(key, 0.0), std::abs(c));
    }
    R.ledger = {{"P_hat_norm", weighted_norm(nf.P, 0.1, 0.1)},
                {"P_hat_overflow", nf.P.overflow_mass()},
                {"P_hat_max_coef_by_degree", by},
                {"generating_modes", R.generating.terms.size()},
                {"fast_leftover", R.fast_leftover},
                {"homological_residual", R.homological_residual}};
    return R;
}

// one reduction per nondegenerate critical point of the averaged potential
inline std::vector<ReducedForm> reduce_all_critical_points(const ResonantSystem& sys, const ResonanceFrame& frame,
                                                           const VecD& y0, const ReductionOptions& opt = {}) {
    ReducedForm first = reduce_to_normal_form(sys, frame, y0, opt);
    std::vector<ReducedForm> out;
    for (const auto& p : first.critical.points) {
        if (p.degenerate) continue;
        out.push_back(reduce_to_normal_form(sys, frame, y0, opt, &p.theta));
    }
    return out;
}

inline nlohmann::json to_json(const ReducedForm& R) {
    nlohmann::json crits = nlohmann::json::array();
    for (const auto& p : R.critical.points) crits.push_back(to_json(p));
    auto mat = [](const MatD& M) {
        nlohmann::json j = nlohmann::json::array();
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
            std::vector<double> row(M.cols());
            for (Eigen::Index c = 0; c < M.cols(); ++c) row[c] = M(r, c);
            j.push_back(row);
        }
        return j;
    };
    nlohmann::json ev = nlohmann::json::array();
    for (Eigen::Index i = 0; i < R.normal_eigenvalues.size(); ++i)
        ev.push_back({R.normal_eigenvalues(i).real(), R.normal_eigenvalues(i).imag()});
    return {{"frame", to_json(R.frame)},
            {"y0", std::vector<double>(R.y0.data(), R.y0.data() + R.y0.size())},
            {"eps", R.eps},
            {"omega_star", std::vector<double>(R.omega_star.data(), R.omega_star.data() + R.omega_star.size())},
            {"averaged_potential", to_json(R.averaged)},
            {"critical_points", crits},
            {"count_law", R.critical.count_law},
            {"chosen_critical_point", to_json(R.crit)},
            {"torus_type", R.torus_type},
            {"normal_eigenvalues", ev},
            {"M_breve", mat(R.M_breve)},
            {"normal_form",
             {{"e", R.nf.e},
              {"omega", std::vector<double>(R.nf.omega.data(), R.nf.omega.data() + R.nf.omega.size())},
              {"M", mat(R.nf.M)},
              {"h", to_json(R.nf.h)},
              {"P_hat_multiplier", R.nf.eps},
              {"P_hat", to_json(R.nf.P)}}},
            {"reality_residue", R.reality_residue},
            {"ledger", R.ledger}};
}

// ---------------- checks ----------------

// Fourier coefficients over the fast angles of f sampled on an N^n grid (FFT along each axis)
inline std::map<IVec, cd> fast_fourier_coefficients(const std::function<cd(const VecD&)>& f, int n, int N, int cap) {
    if (n < 1 || n > 3) throw StructuralError("sampled Fourier transform supports 1 to 3 angles");
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) total *= N;
    std::vector<cd> data(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        VecD q(n);
        std::size_t r = idx;
        for (int a = 0; a < n; ++a) {
            q(a) = 2 * M_PI * double(r % N) / N;
            r /= N;
        }
        data[idx] = f(q);
    }
    Eigen::FFT<double> fft;
    std::size_t stride = 1;
    for (int a = 0; a < n; ++a) {
        for (std::size_t start = 0; start < total; ++start) {
            if ((start / stride) % N != 0) continue;
            std::vector<cd> line(N), outl;
            for (int t = 0; t < N; ++t) line[t] = data[start + t * stride];
            fft.fwd(outl, line);
            for (int t = 0; t < N; ++t) data[start + t * stride] = outl[t] / double(N);
        }
        stride *= N;
    }
    std::map<IVec, cd> out;
    for (const IVec& k : lattice_shell(n, cap, false)) {
        std::size_t idx = 0, mul = 1;
        for (int a = 0; a < n; ++a) {
            idx += mul * static_cast<std::size_t>(((k[a] % N) + N) % N);
            mul *= N;
        }
        out[k] = data[idx];
    }
    return out;
}

// Jacobian of (Y, X) -> (p, q) = (Y + eps^2 grad S1(X), X) by central differences; returns max |D^T Omega D - Omega|
inline double generating_map_symplectic_residual(const TFSeries& S1, double eps, const std::vector<VecD>& points,
                                                 double h = 1e-5) {
    const int d = S1.n;
    std::vector<TFSeries> grad;
    for (int a = 0; a < d; ++a) grad.push_back(d_x(S1, a));
    auto p_of = [&](const VecD& X, const VecD& Y) {
        VecD p = Y;
        for (int a = 0; a < d; ++a) p(a) += eps * eps * grad[a].evaluate(X, VecD::Zero(d), VecD()).real();
        return p;
    };
    MatD Om = MatD::Zero(2 * d, 2 * d);
    Om.topRightCorner(d, d) = MatD::Identity(d, d);
    Om.bottomLeftCorner(d, d) = -MatD::Identity(d, d);
    double worst = 0.0;
    for (const VecD& X : points) {
        const VecD Y = VecD::Zero(d);
        MatD D = MatD::Zero(2 * d, 2 * d);  // rows (q, p), columns (X, Y)
        for (int c = 0; c < 2 * d; ++c) {
            VecD Xp = X, Xm = X, Yp = Y, Ym = Y;
            if (c < d) {
                Xp(c) += h;
                Xm(c) -= h;
            } else {
                Yp(c - d) += h;
                Ym(c - d) -= h;
            }
            D.block(0, c, d, 1) = (Xp - Xm) / (2 * h);
            D.block(d, c, d, 1) = (p_of(Xp, Yp) - p_of(Xm, Ym)) / (2 * h);
        }
        worst = std::max(worst, (D.transpose() * Om * D - Om).cwiseAbs().maxCoeff());
    }
    return worst;
}

// ---------------- (S) conditions ----------------

struct SConditionOptions {
    ConditionOptions cond;
    double sigma_tilde = 1e-6;  // |det d^2 [P~]| floor
    double floor_rtol = 1e-12;  // rounding slack on the eps^2 floors, relative to the largest eigenvalue
    double fd_step = 1e-3;
};

// Reduced data as a function of the parameter (a point of the resonant manifold).
struct ReducedFamily {
    int n = 0, m0 = 0, p = 0;
    double eps = 0.01;
    std::function<ReducedForm(const VecD&)> at;
};

inline ConditionReport verify_s_conditions(const ReducedFamily& fam, const LambdaGrid& grid, const SConditionOptions& o = {}) {
    if (grid.nodes.empty()) throw DomainError("parameter grid is empty");
    std::map<std::vector<double>, ReducedForm> cache;
    std::mutex mu;
    auto at = [&](const VecD& lam) -> ReducedForm {
        std::vector<double> key(lam.data(), lam.data() + lam.size());
        {
            std::lock_guard<std::mutex> g(mu);
            auto it = cache.find(key);
            if (it != cache.end()) return it->second;
        }
        ReducedForm r = fam.at(lam);
        std::lock_guard<std::mutex> g(mu);
        return cache.emplace(key, std::move(r)).first->second;
    };
    FrequencyData f;
    f.n = fam.n;
    f.m = fam.m0;
    f.p = fam.p;
    f.fd_step = o.fd_step;
    f.omega = [&](const VecD& lam) -> VecD { return at(lam).omega_star; };
    f.M = [&](const VecD& lam) -> MatD { return at(lam).M_breve; };
    const int n = fam.n, q = 2 * fam.m0, dd = n + q;
    const double e2 = fam.eps * fam.eps;
    ConditionReport rep;

    ConditionVerdict s1;
    s1.id = "S1";
    s1.target = n;
    s1.holds = true;
    for (const auto& lam : grid.nodes) {
        auto deriv = [&](const IVec& a) { return MatC(f.omega_d(lam, a).cast<cd>()); };
        RankScan rs = rank_scan(deriv, f.p, 1, o.cond.N, n, o.cond.rank_tol);
        detail::worse(s1, rs, {}, lam);
        if (rs.rank < n) s1.holds = false;
    }
    rep.verdicts["S1"] = s1;

    ConditionVerdict s2;
    s2.id = "S2";
    s2.holds = true;
    s2.floor = o.sigma_tilde;
    s2.lambda_min = std::numeric_limits<double>::infinity();
    for (const auto& lam : grid.nodes) {
        const double det = std::abs(at(lam).crit.hessian.determinant());
        if (det < s2.lambda_min) {
            s2.lambda_min = det;
            s2.node = lam;
        }
        if (!(det > o.sigma_tilde)) s2.holds = false;
    }
    s2.note = "lambda_min holds the smallest |det| of the averaged-potential Hessian";
    rep.verdicts["S2"] = s2;

    for (const char* id : {"S3", "S4"}) {
        ConditionVerdict v;
        v.id = id;
        v.holds = true;
        v.floor = fam.eps * fam.eps;
        v.lambda_min = std::numeric_limits<double>::infinity();
        for (const auto& lam : grid.nodes) {
            const ReducedForm r = at(lam);
            MatD B = r.M_breve;
            if (std::string(id) == "S4") {
                B = MatD::Zero(dd + 1, dd + 1);
                B.topLeftCorner(dd, dd) = r.M_breve;
                B.block(0, dd, n, 1) = r.omega_star;
                B.block(dd, 0, 1, n) = r.omega_star.transpose();
            }
            Eigen::SelfAdjointEigenSolver<MatD> es(B.transpose() * B, Eigen::EigenvaluesOnly);
            const double lm = es.eigenvalues()(0);
            if (lm < v.lambda_min) {
                v.lambda_min = lm;
                v.node = lam;
            }
            if (lm < e2 - o.floor_rtol * es.eigenvalues().maxCoeff()) v.holds = false;
        }
        rep.verdicts[id] = v;
    }

    rep.verdicts["S5"] = detail::rank_condition("S5", f, grid, o.cond, 1, dd, [](const DivisorOperators& op) { return op.A1; });
    rep.verdicts["S6"] = detail::rank_condition("S6", f, grid, o.cond, 1, n * n + n * q + q * q,
                                                [](const DivisorOperators& op) { return op.A2; });
    rep.verdicts["S5'"] = detail::rank_condition("S5'", f, grid, o.cond, 1, q, [](const DivisorOperators& op) { return op.Lk1; });
    rep.verdicts["S6'"] = detail::rank_condition("S6'", f, grid, o.cond, 1, q * q, [](const DivisorOperators& op) { return op.Lk2; });
    return rep;
}

}  // namespace mskam

#endif  // MSKAM_RESONANCE_HPP
