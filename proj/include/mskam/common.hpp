#ifndef MSKAM_COMMON_HPP
#define MSKAM_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace mskam {

using cd = std::complex<double>;
using VecD = Eigen::VectorXd;
using VecC = Eigen::VectorXcd;
using MatD = Eigen::MatrixXd;
using MatC = Eigen::MatrixXcd;
using IVec = std::vector<int>;

inline constexpr cd I_unit{0.0, 1.0};

struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FloorError : std::runtime_error {
    double lambda_min;
    double floor;
    FloorError(const std::string& what, double lm, double fl)
        : std::runtime_error(what), lambda_min(lm), floor(fl) {}
};

struct ConvergenceError : std::runtime_error {
    double residual;
    ConvergenceError(const std::string& what, double res)
        : std::runtime_error(what), residual(res) {}
};

struct SmallDivisor : std::runtime_error {
    IVec k;
    double divisor;
    double floor;
    SmallDivisor(const IVec& kk, double div, double fl)
        : std::runtime_error("small divisor at k=" + to_string_k(kk) +
                             " value " + std::to_string(div) + " below " +
                             std::to_string(fl)),
          k(kk), divisor(div), floor(fl) {}

    static std::string to_string_k(const IVec& kk) {
        std::string s = "(";
        for (std::size_t a = 0; a < kk.size(); ++a) {
            if (a) s += ",";
            s += std::to_string(kk[a]);
        }
        return s + ")";
    }
};

inline int l1norm(const IVec& k) {
    int s = 0;
    for (int v : k) s += std::abs(v);
    return s;
}

inline int supnorm(const IVec& k) {
    int s = 0;
    for (int v : k) s = std::max(s, std::abs(v));
    return s;
}

inline double dot(const IVec& k, const VecD& w) {
    double s = 0.0;
    for (std::size_t a = 0; a < k.size(); ++a) s += k[a] * w(static_cast<Eigen::Index>(a));
    return s;
}

// J = [[0, I_m], [-I_m, 0]]
inline MatD symplectic_J(int m) {
    MatD J = MatD::Zero(2 * m, 2 * m);
    for (int a = 0; a < m; ++a) {
        J(a, m + a) = 1.0;
        J(m + a, a) = -1.0;
    }
    return J;
}

template <class A, class B>
MatC kron(const A& a, const B& b) {
    MatC out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) =
                cd(a(i, j)) * b.template cast<cd>();
    return out;
}

// column-major vectorization
inline VecC vec(const MatC& X) {
    return Eigen::Map<const VecC>(X.data(), X.size());
}

inline MatC unvec(const VecC& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const MatC>(v.data(), rows, cols);
}

// all integer vectors of length n with 0 < |k|_1 <= K, canonical order
inline std::vector<IVec> lattice_shell(int n, int K, bool half = false) {
    std::vector<IVec> out;
    if (n == 0) return out;
    IVec k(n, -K);
    while (true) {
        int l = l1norm(k);
        if (l > 0 && l <= K) {
            bool keep = true;
            if (half) {
                // keep the lexicographically positive half
                for (int v : k) {
                    if (v != 0) {
                        keep = v > 0;
                        break;
                    }
                }
            }
            if (keep) out.push_back(k);
        }
        int a = n - 1;
        while (a >= 0 && k[a] == K) {
            k[a] = -K;
            --a;
        }
        if (a < 0) break;
        ++k[a];
    }
    return out;
}

// all multi-indices alpha of length p with lo <= |alpha| <= hi
inline std::vector<IVec> multi_indices(int p, int lo, int hi) {
    std::vector<IVec> out;
    if (p == 0) {
        if (lo <= 0) out.push_back({});
        return out;
    }
    for (int total = lo; total <= hi; ++total) {
        IVec a(p, 0);
        a[0] = total;
        while (true) {
            out.push_back(a);
            // next composition of total into p parts (reverse lex)
            int j = p - 2;
            while (j >= 0 && a[j] == 0) --j;
            if (j < 0) break;
            --a[j];
            int rest = 0;
            for (int t = j + 1; t < p; ++t) rest += a[t];
            for (int t = j + 1; t < p; ++t) a[t] = 0;
            a[j + 1] = rest + 1;
        }
    }
    return out;
}

inline bool all_finite(const MatC& A) {
    for (Eigen::Index i = 0; i < A.size(); ++i)
        if (!std::isfinite(A.data()[i].real()) || !std::isfinite(A.data()[i].imag())) return false;
    return true;
}

}  // namespace mskam

#endif  // MSKAM_COMMON_HPP
