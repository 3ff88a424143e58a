#ifndef MSKAM_MSLINALG_HPP
#define MSKAM_MSLINALG_HPP

#include "mskam/common.hpp"
#include "mskam/tfseries.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <functional>
#include <optional>

namespace mskam {

struct ScaleSet {
    double eps = 0.1;
    std::vector<double> eps_vec;  // eps_0 .. eps_m
    std::vector<double> mu_vec;   // mu_1 .. mu_l
    double ceiling = 0.1;

    void validate() const {
        if (!(eps > 0)) throw DomainError("base scale must be positive");
        for (double e : eps_vec)
            if (!(e >= eps) || !(e <= ceiling)) throw DomainError("eps_i must satisfy eps <= eps_i <= ceiling");
        for (double mu : mu_vec)
            if (!(mu >= eps) || !(mu <= ceiling)) throw DomainError("mu_j must satisfy eps <= mu_j <= ceiling");
    }
    double min_eps() const {
        double v = eps_vec.empty() ? eps : eps_vec[0];
        for (double e : eps_vec) v = std::min(v, e);
        return v;
    }
    double min_mu() const {
        double v = mu_vec.empty() ? eps : mu_vec[0];
        for (double e : mu_vec) v = std::min(v, e);
        return v;
    }
    double min_all() const { return std::min(min_eps(), min_mu()); }
};

// Frequency and normal-matrix data as functions of the parameter lambda.
struct FrequencyData {
    int n = 0;
    int m = 0;
    int p = 0;  // parameter dimension
    std::function<VecD(const VecD&)> omega;
    std::function<MatD(const VecD&)> M;
    std::function<VecD(const VecD&, const IVec&)> omega_partial;  // optional analytic partials
    std::function<MatD(const VecD&, const IVec&)> M_partial;
    std::optional<TFSeries> h;  // k = 0 jet with degree >= 3
    double fd_step = 1e-3;

    int dim() const { return n + 2 * m; }

    VecD omega_d(const VecD& lam, const IVec& alpha) const {
        if (l1norm(alpha) == 0) return omega(lam);
        if (omega_partial) return omega_partial(lam, alpha);
        return fd<VecD>([this](const VecD& l) { return omega(l); }, lam, alpha);
    }
    MatD M_d(const VecD& lam, const IVec& alpha) const {
        if (l1norm(alpha) == 0) return M(lam);
        if (M_partial) return M_partial(lam, alpha);
        return fd<MatD>([this](const VecD& l) { return M(l); }, lam, alpha);
    }
    bool has_analytic_partials() const { return bool(omega_partial) && bool(M_partial); }

    void validate(const VecD& lam) const {
        if (lam.size() != p) throw StructuralError("parameter dimension mismatch");
        VecD w = omega(lam);
        MatD MM = M(lam);
        if (w.size() != n) throw StructuralError("omega has wrong length");
        if (MM.rows() != dim() || MM.cols() != dim()) throw StructuralError("M has wrong shape");
        if ((MM - MM.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, MM.cwiseAbs().maxCoeff()))
            throw StructuralError("M must be symmetric");
        if (h) {
            if (h->n != n || h->m != m) throw StructuralError("h jet dimensions");
            for (const auto& [mi, c] : h->terms)
                if (!mi.k_is_zero() || mi.degree() < 3) throw StructuralError("h must be angle-free and at least cubic");
        }
    }

private:
    template <class T>
    T fd(const std::function<T(const VecD&)>& f, const VecD& lam, const IVec& alpha) const {
        int a = 0;
        while (alpha[a] == 0) ++a;
        IVec rest = alpha;
        --rest[a];
        VecD lp = lam, lm = lam;
        lp(a) += fd_step;
        lm(a) -= fd_step;
        if (l1norm(rest) == 0) return ((f(lp) - f(lm)) / (2 * fd_step)).eval();
        return ((fd<T>(f, lp, rest) - fd<T>(f, lm, rest)) / (2 * fd_step)).eval();
    }
};

struct DivisorOperators {
    IVec k;
    int n = 0, m = 0;
    cd Lk0;
    cd varpi = 0.0;
    MatC Lk1, Lk2, A1, A2, A1_full, A_full;
    MatC M21TJ;   // (M21^T + hat_h1^T) J, n x 2m
    MatC Lk1_full;  // L_k1 + varpi - hat_h2 J
    MatC a33_full;
};

// Build all divisor operators from (omega, M) values; hat_h1 is 2m x n, hat_h2 is 2m x 2m.
template <class VecT, class MatT>
DivisorOperators build_operators_from(const VecT& omega, const MatT& M, const IVec& k, int n, int m, cd varpi = 0.0,
                                      const MatC& hat_h1 = MatC(), const MatC& hat_h2 = MatC()) {
    if (static_cast<int>(k.size()) != n || omega.size() != n || M.rows() != n + 2 * m || M.cols() != n + 2 * m)
        throw StructuralError("operator dimensions");
    const int q = 2 * m;
    DivisorOperators op;
    op.k = k;
    op.n = n;
    op.m = m;
    op.varpi = varpi;
    cd kw = 0.0;
    for (int a = 0; a < n; ++a) kw += double(k[a]) * cd(omega(a));
    op.Lk0 = I_unit * kw;
    const MatC J = symplectic_J(m).cast<cd>();
    const MatC M22 = M.bottomRightCorner(q, q).template cast<cd>();
    const MatC M21 = M.bottomLeftCorner(q, n).template cast<cd>();
    const MatC M22J = M22 * J;
    const MatC Iq = MatC::Identity(q, q), In = MatC::Identity(n, n);
    op.Lk1 = op.Lk0 * Iq - M22J;
    op.Lk2 = op.Lk0 * MatC::Identity(q * q, q * q) - kron(M22J, Iq) - kron(Iq, M22J);
    const MatC M21TJ = M21.transpose() * J;

    op.A1 = MatC::Zero(n + q, n + q);
    op.A1.topLeftCorner(n, n) = op.Lk0 * In;
    op.A1.topRightCorner(n, q) = -M21TJ;
    op.A1.bottomRightCorner(q, q) = op.Lk1;

    const int d1 = n * n, d2 = n * q, d3 = q * q;
    op.A2 = MatC::Zero(d1 + d2 + d3, d1 + d2 + d3);
    op.A2.block(0, 0, d1, d1) = kron(In, op.Lk0 * In);
    op.A2.block(0, d1, d1, d2) = -kron(In, M21TJ);
    op.A2.block(d1, d1, d2, d2) = kron(In, op.Lk1);
    op.A2.block(d1, d1 + d2, d2, d3) = -kron(M21TJ, Iq);
    op.A2.block(d1 + d2, d1 + d2, d3, d3) = op.Lk2;

    MatC h1 = hat_h1.size() ? hat_h1 : MatC::Zero(q, n);
    MatC h2 = hat_h2.size() ? hat_h2 : MatC::Zero(q, q);
    op.M21TJ = (M21 + h1).transpose() * J;
    const MatC h2J = h2 * J;
    op.Lk1_full = op.Lk1 + varpi * Iq - h2J;
    op.a33_full = op.Lk2 + varpi * MatC::Identity(d3, d3) - kron(h2J, Iq) - kron(Iq, h2J);

    op.A1_full = MatC::Zero(n + q, n + q);
    op.A1_full.topLeftCorner(n, n) = (op.Lk0 + varpi) * In;
    op.A1_full.topRightCorner(n, q) = -op.M21TJ;
    op.A1_full.bottomRightCorner(q, q) = op.Lk1_full;

    op.A_full = MatC::Zero(d1 + d2 + d3, d1 + d2 + d3);
    op.A_full.block(0, 0, d1, d1) = kron(In, (op.Lk0 + varpi) * In);
    op.A_full.block(0, d1, d1, d2) = -kron(In, op.M21TJ);
    op.A_full.block(d1, d1, d2, d2) = kron(In, op.Lk1_full);
    op.A_full.block(d1, d1 + d2, d2, d3) = -kron(op.M21TJ, Iq);
    op.A_full.block(d1 + d2, d1 + d2, d3, d3) = op.a33_full;
    return op;
}

struct HJetBlocks {
    VecD grad_y, grad_z;
    MatD hat_h1, hat_h2;
};

// d_z h(y,z) = hat_h1 y + hat_h2 z with the blocks averaged along the ray (exact for polynomial h)
inline HJetBlocks h_jet_blocks(const TFSeries& h, const VecD& y, const VecD& z) {
    const int n = h.n, q = 2 * h.m;
    HJetBlocks b{VecD::Zero(n), VecD::Zero(q), MatD::Zero(q, n), MatD::Zero(q, q)};
    VecD x0 = VecD::Zero(n);
    for (int a = 0; a < n; ++a) b.grad_y(a) = d_y(h, a).evaluate(x0, y, z).real();
    for (int a = 0; a < q; ++a) b.grad_z(a) = d_z(h, a).evaluate(x0, y, z).real();
    static const double gx[4] = {0.0694318442029737, 0.3300094782075719, 0.6699905217924281, 0.9305681557970263};
    static const double gw[4] = {0.1739274225587269, 0.3260725774412731, 0.3260725774412731, 0.1739274225587269};
    for (int r = 0; r < q; ++r) {
        TFSeries dz = d_z(h, r);
        for (int t = 0; t < 4; ++t) {
            VecD yt = gx[t] * y, zt = gx[t] * z;
            for (int a = 0; a < n; ++a) b.hat_h1(r, a) += gw[t] * d_y(dz, a).evaluate(x0, yt, zt).real();
            for (int a = 0; a < q; ++a) b.hat_h2(r, a) += gw[t] * d_z(dz, a).evaluate(x0, yt, zt).real();
        }
    }
    return b;
}

inline DivisorOperators build_operators(const FrequencyData& freq, const IVec& k, const VecD& lam,
                                        const VecD& y = VecD(), const VecD& z = VecD()) {
    freq.validate(lam);
    const VecD w = freq.omega(lam);
    const MatD MM = freq.M(lam);
    const int n = freq.n, q = 2 * freq.m;
    VecD yy = y.size() ? y : VecD::Zero(n);
    VecD zz = z.size() ? z : VecD::Zero(q);
    if (yy.size() != n || zz.size() != q) throw StructuralError("jet point dimensions");
    VecD Delta = MM.topLeftCorner(n, n) * yy + MM.topRightCorner(n, q) * zz;
    MatC h1, h2;
    if (freq.h) {
        HJetBlocks hb = h_jet_blocks(*freq.h, yy, zz);
        Delta += hb.grad_y;
        h1 = hb.hat_h1.cast<cd>();
        h2 = hb.hat_h2.cast<cd>();
    }
    cd varpi = I_unit * dot(k, Delta);
    return build_operators_from(w, MM, k, n, freq.m, varpi, h1, h2);
}

struct FloorResult {
    bool holds = false;
    double lambda_min = 0.0;
};

inline double lambda_min_hermitian(const MatC& Hm) {
    if (Hm.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<MatC> es(Hm, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

// smallest eigenvalue of A^* A, compared against floor^2
inline FloorResult hermitian_floor(const MatC& A, double floor) {
    if (A.rows() != A.cols()) throw StructuralError("hermitian_floor needs a square matrix");
    if (!all_finite(A)) throw NumericError("non-finite operator entries");
    FloorResult r;
    r.lambda_min = lambda_min_hermitian(A.adjoint() * A);
    r.holds = r.lambda_min >= floor * floor;
    return r;
}

struct WeylReport {
    double lambda_base = 0.0;
    double lambda_H = 0.0;
    double lambda_sum = 0.0;
    double h_inf = 0.0;
    bool weyl_ok = false;
    bool half_floor = false;
};

// Hermitian base B and Hermitian perturbation H; half floor = lambda_min(B+H) >= lambda_min(B)/2
inline WeylReport weyl_hermitian_check(const MatC& B, const MatC& H) {
    if (B.rows() != H.rows() || B.cols() != H.cols()) throw StructuralError("shape mismatch");
    WeylReport w;
    w.lambda_base = lambda_min_hermitian(B);
    w.lambda_H = lambda_min_hermitian(H);
    w.lambda_sum = lambda_min_hermitian(B + H);
    w.h_inf = H.cwiseAbs().maxCoeff();
    const double scale = std::max({1.0, B.cwiseAbs().maxCoeff(), w.h_inf});
    w.weyl_ok = w.lambda_sum >= w.lambda_base + w.lambda_H - 1e-12 * scale;
    w.half_floor = w.lambda_sum >= 0.5 * w.lambda_base - 1e-12 * scale;
    return w;
}

// A_pert = A_base + perturbation; floor is the unperturbed floor (the lemma needs half its square)
inline WeylReport weyl_perturbation_check(const MatC& A_base, const MatC& A_pert, double floor) {
    if (A_base.rows() != A_pert.rows() || A_base.cols() != A_pert.cols()) throw StructuralError("shape mismatch");
    const MatC B = A_base.adjoint() * A_base;
    const MatC H = A_pert.adjoint() * A_pert - B;
    WeylReport w = weyl_hermitian_check(B, H);
    if (floor > 0) w.half_floor = w.lambda_sum >= 0.5 * floor * floor;
    return w;
}

// certified lower bound for lambda_min(A A^*), A = sum eps_j A_j
inline double multiscale_eig_lower_bound(const std::vector<MatC>& parts, const std::vector<double>& scales) {
    if (parts.empty()) return 0.0;
    if (parts.size() != scales.size()) throw StructuralError("one scale per part");
    const auto nn = parts[0].rows();
    MatC A = MatC::Zero(nn, nn);
    for (std::size_t j = 0; j < parts.size(); ++j) {
        if (parts[j].rows() != nn || parts[j].cols() != nn) throw StructuralError("parts must be square, same size");
        if (!(scales[j] > 0)) throw DomainError("scales must be positive");
        A += scales[j] * parts[j];
    }
    if (A.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    const MatC AA = A * A.adjoint();
    double cmax = 0.0;
    for (double e : scales) cmax = std::max(cmax, e * e);
    const double ctr = AA.trace().real() / double(nn);
    double best = 0.0;
    for (double c : {cmax, ctr}) {
        const double frob = (AA - c * MatC::Identity(nn, nn)).norm();
        best = std::max(best, c - frob);
    }
    return best * (1.0 - 1e-12);
}

inline double multiscale_eig_lower_bound(const std::vector<MatC>& parts, const ScaleSet& s) {
    return multiscale_eig_lower_bound(parts, s.eps_vec);
}

struct InverseScaleReport {
    bool bounded = true;
    bool singular = false;
    double failing_eps = 0.0;
    std::vector<double> sup_norms;
};

// ratios of successive sup norms of eps^2 D(eps)^{-1} along the sequence stay below bound
inline InverseScaleReport multiscale_inverse_denominator_check(const std::function<MatC(double)>& D,
                                                               const std::vector<double>& eps_seq,
                                                               double bound = 10.0) {
    InverseScaleReport rep;
    for (double e : eps_seq) {
        MatC De = D(e);
        Eigen::FullPivLU<MatC> lu(De);
        if (!lu.isInvertible()) {
            rep.bounded = false;
            rep.singular = true;
            rep.failing_eps = e;
            return rep;
        }
        MatC E = e * e * lu.inverse();
        rep.sup_norms.push_back(E.cwiseAbs().maxCoeff());
    }
    for (std::size_t t = 1; t < rep.sup_norms.size(); ++t) {
        const double prev = rep.sup_norms[t - 1];
        if (prev > 0 && !(rep.sup_norms[t] / prev < bound)) {
            rep.bounded = false;
            rep.failing_eps = eps_seq[t];
            return rep;
        }
    }
    return rep;
}

inline nlohmann::json matrix_to_json(const MatC& A) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back({A(i, j).real(), A(i, j).imag()});
        rows.push_back(row);
    }
    return rows;
}

inline MatC matrix_from_json(const nlohmann::json& j) {
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = r ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    MatC A(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < c; ++k) A(i, k) = cd(j.at(i).at(k).at(0).get<double>(), j.at(i).at(k).at(1).get<double>());
    return A;
}

inline nlohmann::json operators_to_json(const DivisorOperators& op) {
    return {{"k", op.k},
            {"Lk0", {op.Lk0.real(), op.Lk0.imag()}},
            {"Lk1", matrix_to_json(op.Lk1)},
            {"Lk2", matrix_to_json(op.Lk2)},
            {"A1", matrix_to_json(op.A1)},
            {"A2", matrix_to_json(op.A2)},
            {"A_full", matrix_to_json(op.A_full)}};
}

}  // namespace mskam

#endif  // MSKAM_MSLINALG_HPP
