#ifndef MSKAM_NORMALFORM_HPP
#define MSKAM_NORMALFORM_HPP

#include "mskam/mslinalg.hpp"
#include "mskam/tfseries.hpp"

namespace mskam {

// H = e + <omega, y> + 1/2 <(y,z), M (y,z)> + h(y,z) + eps P
struct NormalForm {
    int n = 0;
    int m = 0;
    double e = 0.0;
    VecD omega;
    MatD M;
    TFSeries h;
    TFSeries P;
    double eps = 1.0;
    ScaleSet scales;
    AnalyticDomain dom;

    int dim() const { return n + 2 * m; }
    int degree_cap() const { return P.degree_cap; }
    int fourier_cap() const { return P.fourier_cap; }

    void validate() const {
        if (omega.size() != n || M.rows() != dim() || M.cols() != dim()) throw StructuralError("normal form dimensions");
        if (P.n != n || P.m != m || h.n != n || h.m != m) throw StructuralError("series dimensions");
        if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff()))
            throw StructuralError("M must be symmetric");
        for (const auto& [mi, c] : h.terms)
            if (!mi.k_is_zero() || mi.degree() < 3) throw StructuralError("h must be angle-free and at least cubic");
    }
};

inline MultiIndex unit_index(int n, int m, int slot) {
    MultiIndex mi = MultiIndex::zero(n, m);
    mi.v[n + slot] += 1;
    return mi;
}

inline MultiIndex pair_index(int n, int m, int a, int b) {
    MultiIndex mi = MultiIndex::zero(n, m);
    mi.v[n + a] += 1;
    mi.v[n + b] += 1;
    return mi;
}

// add 1/2 v^T Q v, v = (y, z), as k = 0 terms
inline void add_quadratic_form(TFSeries& S, const MatD& Q) {
    const int d = S.n + 2 * S.m;
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double c = a == b ? 0.5 * Q(a, a) : 0.5 * (Q(a, b) + Q(b, a));
            S.add(pair_index(S.n, S.m, a, b), c);
        }
}

// the symmetric matrix Q with S_2(k=0) = 1/2 v^T Q v
inline MatD quadratic_form_of(const TFSeries& S) {
    const int d = S.n + 2 * S.m;
    MatD Q = MatD::Zero(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double c = S.coef(pair_index(S.n, S.m, a, b)).real();
            if (a == b)
                Q(a, a) = 2 * c;
            else
                Q(a, b) = Q(b, a) = c;
        }
    return Q;
}

inline TFSeries integrable_series(const NormalForm& H, bool with_energy = true) {
    TFSeries N = H.P.empty_like();
    if (with_energy) N.add(MultiIndex::zero(H.n, H.m), H.e);
    for (int a = 0; a < H.n; ++a) N.add(unit_index(H.n, H.m, a), H.omega(a));
    add_quadratic_form(N, H.M);
    for (const auto& [mi, c] : H.h.terms) N.add(mi, c);
    return N;
}

inline TFSeries hamiltonian_series(const NormalForm& H) {
    TFSeries S = integrable_series(H);
    S += cd(H.eps) * H.P;
    return S;
}

// Coefficients of the degree <= 2 part at one Fourier mode k in matrix form:
//   c00 + <c10,y> + <c01,z> + <y, c20 y> + z^T c11 y + 1/2 z^T c02 z
struct QuadCoeffs {
    cd c00 = 0.0;
    VecC c10, c01;
    MatC c20, c11, c02;

    static QuadCoeffs zero(int n, int m) {
        QuadCoeffs q;
        q.c10 = VecC::Zero(n);
        q.c01 = VecC::Zero(2 * m);
        q.c20 = MatC::Zero(n, n);
        q.c11 = MatC::Zero(2 * m, n);
        q.c02 = MatC::Zero(2 * m, 2 * m);
        return q;
    }
    QuadCoeffs conj() const {
        QuadCoeffs q;
        q.c00 = std::conj(c00);
        q.c10 = c10.conjugate();
        q.c01 = c01.conjugate();
        q.c20 = c20.conjugate();
        q.c11 = c11.conjugate();
        q.c02 = c02.conjugate();
        return q;
    }
    double max_abs() const {
        double s = std::abs(c00);
        for (const MatC* X : {&c20, &c11, &c02})
            if (X->size()) s = std::max(s, X->cwiseAbs().maxCoeff());
        if (c10.size()) s = std::max(s, c10.cwiseAbs().maxCoeff());
        if (c01.size()) s = std::max(s, c01.cwiseAbs().maxCoeff());
        return s;
    }
};

inline MultiIndex with_k(MultiIndex mi, const IVec& k) {
    for (int a = 0; a < mi.n; ++a) mi.k(a) = k[a];
    return mi;
}

inline QuadCoeffs extract_quadratic(const TFSeries& S, const IVec& k, int lo = 0, int hi = 2) {
    const int n = S.n, m = S.m, q = 2 * m;
    QuadCoeffs c = QuadCoeffs::zero(n, m);
    if (lo <= 0 && 0 <= hi) c.c00 = S.coef(with_k(MultiIndex::zero(n, m), k));
    if (lo <= 1 && 1 <= hi) {
        for (int a = 0; a < n; ++a) c.c10(a) = S.coef(with_k(unit_index(n, m, a), k));
        for (int a = 0; a < q; ++a) c.c01(a) = S.coef(with_k(unit_index(n, m, n + a), k));
    }
    if (lo <= 2 && 2 <= hi) {
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) {
                cd v = S.coef(with_k(pair_index(n, m, a, b), k));
                if (a == b)
                    c.c20(a, a) = v;
                else
                    c.c20(a, b) = c.c20(b, a) = 0.5 * v;
            }
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < q; ++b) c.c11(b, a) = S.coef(with_k(pair_index(n, m, a, n + b), k));
        for (int a = 0; a < q; ++a)
            for (int b = a; b < q; ++b) {
                cd v = S.coef(with_k(pair_index(n, m, n + a, n + b), k));
                if (a == b)
                    c.c02(a, a) = 2.0 * v;
                else
                    c.c02(a, b) = c.c02(b, a) = v;
            }
    }
    return c;
}

inline void add_quadratic_coeffs(TFSeries& S, const IVec& k, const QuadCoeffs& c) {
    const int n = S.n, m = S.m, q = 2 * m;
    S.add(with_k(MultiIndex::zero(n, m), k), c.c00);
    for (int a = 0; a < n; ++a) S.add(with_k(unit_index(n, m, a), k), c.c10(a));
    for (int a = 0; a < q; ++a) S.add(with_k(unit_index(n, m, n + a), k), c.c01(a));
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) S.add(with_k(pair_index(n, m, a, b), k), a == b ? c.c20(a, a) : c.c20(a, b) + c.c20(b, a));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < q; ++b) S.add(with_k(pair_index(n, m, a, n + b), k), c.c11(b, a));
    for (int a = 0; a < q; ++a)
        for (int b = a; b < q; ++b)
            S.add(with_k(pair_index(n, m, n + a, n + b), k), a == b ? 0.5 * c.c02(a, a) : 0.5 * (c.c02(a, b) + c.c02(b, a)));
}

}  // namespace mskam

#endif  // MSKAM_NORMALFORM_HPP
