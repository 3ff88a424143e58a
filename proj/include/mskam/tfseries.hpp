#ifndef MSKAM_TFSERIES_HPP
#define MSKAM_TFSERIES_HPP

#include "mskam/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <utility>

namespace mskam {

inline constexpr int kMaxVars = 16;

// Key of one Taylor-Fourier term: Fourier vector k (n), y-powers i (n), z-powers j (2m).
struct MultiIndex {
    std::array<int, kMaxVars> v{};
    int n = 0;
    int nz = 0;

    MultiIndex() = default;
    MultiIndex(const IVec& k, const IVec& i, const IVec& j) : n(static_cast<int>(k.size())), nz(static_cast<int>(j.size())) {
        if (i.size() != k.size() || 2 * k.size() + j.size() > static_cast<std::size_t>(kMaxVars))
            throw StructuralError("multi-index dimensions");
        for (int a = 0; a < n; ++a) {
            v[a] = k[a];
            if (i[a] < 0) throw StructuralError("negative y power");
            v[n + a] = i[a];
        }
        for (int a = 0; a < nz; ++a) {
            if (j[a] < 0) throw StructuralError("negative z power");
            v[2 * n + a] = j[a];
        }
    }

    static MultiIndex zero(int n, int m) { return MultiIndex(IVec(n, 0), IVec(n, 0), IVec(2 * m, 0)); }

    int k(int a) const { return v[a]; }
    int i(int a) const { return v[n + a]; }
    int j(int a) const { return v[2 * n + a]; }
    int& k(int a) { return v[a]; }
    int& i(int a) { return v[n + a]; }
    int& j(int a) { return v[2 * n + a]; }
    int len() const { return 2 * n + nz; }

    IVec fourier_k() const { return IVec(v.begin(), v.begin() + n); }
    IVec taylor_i() const { return IVec(v.begin() + n, v.begin() + 2 * n); }
    IVec taylor_j() const { return IVec(v.begin() + 2 * n, v.begin() + 2 * n + nz); }

    int kl1() const {
        int s = 0;
        for (int a = 0; a < n; ++a) s += std::abs(v[a]);
        return s;
    }
    int ksup() const {
        int s = 0;
        for (int a = 0; a < n; ++a) s = std::max(s, std::abs(v[a]));
        return s;
    }
    int degree() const {
        int s = 0;
        for (int a = n; a < len(); ++a) s += v[a];
        return s;
    }
    int ydeg() const {
        int s = 0;
        for (int a = 0; a < n; ++a) s += i(a);
        return s;
    }
    int zdeg() const {
        int s = 0;
        for (int a = 0; a < nz; ++a) s += j(a);
        return s;
    }
    bool k_is_zero() const {
        for (int a = 0; a < n; ++a)
            if (v[a] != 0) return false;
        return true;
    }
    MultiIndex negated_k() const {
        MultiIndex o = *this;
        for (int a = 0; a < n; ++a) o.v[a] = -v[a];
        return o;
    }

    // graded lexicographic on (|k|, k, i, j)
    friend bool operator<(const MultiIndex& a, const MultiIndex& b) {
        int la = a.kl1(), lb = b.kl1();
        if (la != lb) return la < lb;
        int L = std::min(a.len(), b.len());
        for (int t = 0; t < L; ++t)
            if (a.v[t] != b.v[t]) return a.v[t] < b.v[t];
        return a.len() < b.len();
    }
    friend bool operator==(const MultiIndex& a, const MultiIndex& b) {
        if (a.n != b.n || a.nz != b.nz) return false;
        for (int t = 0; t < a.len(); ++t)
            if (a.v[t] != b.v[t]) return false;
        return true;
    }
};

struct AnalyticDomain {
    double r = 1.0;
    double s = 1.0;
    double eta = 0.1;
    double lambda_radius = 1.0;

    void validate() const {
        if (!(r > 0) || !(s > 0) || !(eta > 0)) throw DomainError("analytic domain needs r, s, eta > 0");
        if (!(eta < lambda_radius)) throw DomainError("eta must be below the parameter-box radius");
    }
};

class TFSeries {
public:
    int n = 0;
    int m = 0;
    int degree_cap = 2;
    int fourier_cap = 0;
    std::map<MultiIndex, cd> terms;
    // majorant mass of cap-violating terms, binned by (|k|_1, degree)
    std::map<std::pair<int, int>, double> spill;

    TFSeries() = default;
    TFSeries(int n_, int m_, int deg_cap, int four_cap) : n(n_), m(m_), degree_cap(deg_cap), fourier_cap(four_cap) {
        if (n < 0 || m < 0 || 2 * n + 2 * m > kMaxVars) throw StructuralError("series dimensions out of range");
    }

    TFSeries empty_like() const { return TFSeries(n, m, degree_cap, fourier_cap); }

    bool admits(const MultiIndex& mi) const { return mi.degree() <= degree_cap && mi.ksup() <= fourier_cap; }

    void add(const MultiIndex& mi, cd c) {
        if (c == cd(0.0)) return;
        if (mi.n != n || mi.nz != 2 * m) throw StructuralError("term dimensions do not match series");
        if (admits(mi)) {
            auto it = terms.find(mi);
            if (it == terms.end())
                terms.emplace(mi, c);
            else {
                it->second += c;
                if (it->second == cd(0.0)) terms.erase(it);
            }
        } else {
            add_spill(mi.kl1(), mi.degree(), std::abs(c));
        }
    }

    void add(const IVec& k, const IVec& i, const IVec& j, cd c) { add(MultiIndex(k, i, j), c); }

    void add_spill(int K, int D, double mass) {
        if (mass > 0.0) spill[{K, std::max(D, 0)}] += mass;
    }

    cd coef(const MultiIndex& mi) const {
        auto it = terms.find(mi);
        return it == terms.end() ? cd(0.0) : it->second;
    }
    cd coef(const IVec& k, const IVec& i, const IVec& j) const { return coef(MultiIndex(k, i, j)); }

    double overflow_mass() const {
        double s = 0.0;
        for (const auto& [key, w] : spill) s += w;
        return s;
    }

    std::size_t size() const { return terms.size(); }
    bool is_zero() const { return terms.empty() && spill.empty(); }

    void check_same_dims(const TFSeries& o) const {
        if (n != o.n || m != o.m) throw StructuralError("series dimension mismatch");
    }

    TFSeries& operator+=(const TFSeries& o) {
        check_same_dims(o);
        for (const auto& [mi, c] : o.terms) add(mi, c);
        for (const auto& [key, w] : o.spill) spill[key] += w;
        return *this;
    }
    TFSeries& operator-=(const TFSeries& o) {
        check_same_dims(o);
        for (const auto& [mi, c] : o.terms) add(mi, -c);
        for (const auto& [key, w] : o.spill) spill[key] += w;
        return *this;
    }
    TFSeries& operator*=(cd a) {
        if (a == cd(0.0)) {
            terms.clear();
            spill.clear();
            return *this;
        }
        for (auto& [mi, c] : terms) c *= a;
        for (auto& [key, w] : spill) w *= std::abs(a);
        return *this;
    }
    friend TFSeries operator+(TFSeries a, const TFSeries& b) { return a += b; }
    friend TFSeries operator-(TFSeries a, const TFSeries& b) { return a -= b; }
    friend TFSeries operator*(cd a, TFSeries b) { return b *= a; }
    friend TFSeries operator*(double a, TFSeries b) { return b *= cd(a); }

    void prune(double tol) {
        for (auto it = terms.begin(); it != terms.end();) {
            if (std::abs(it->second) <= tol)
                it = terms.erase(it);
            else
                ++it;
        }
    }

    // value at complex point (x, y, z)
    cd evaluate(const VecC& x, const VecC& y, const VecC& z) const {
        cd s = 0.0;
        for (const auto& [mi, c] : terms) {
            cd t = c;
            cd phase = 0.0;
            for (int a = 0; a < n; ++a) {
                phase += double(mi.k(a)) * x(a);
                if (mi.i(a)) t *= std::pow(y(a), mi.i(a));
            }
            for (int a = 0; a < 2 * m; ++a)
                if (mi.j(a)) t *= std::pow(z(a), mi.j(a));
            s += t * std::exp(I_unit * phase);
        }
        return s;
    }

    cd evaluate(const VecD& x, const VecD& y, const VecD& z) const {
        return evaluate(VecC(x.cast<cd>()), VecC(y.cast<cd>()), VecC(z.cast<cd>()));
    }
};

inline TFSeries constant_series(int n, int m, int deg_cap, int four_cap, cd c) {
    TFSeries s(n, m, deg_cap, four_cap);
    s.add(MultiIndex::zero(n, m), c);
    return s;
}

// {A,B} = d_x A d_y B - d_y A d_x B + d_z A J d_z B, truncated to the caps of A
inline TFSeries poisson_bracket(const TFSeries& A, const TFSeries& B) {
    A.check_same_dims(B);
    const int n = A.n, m = A.m;
    TFSeries out(n, m, std::max(A.degree_cap, B.degree_cap), std::max(A.fourier_cap, B.fourier_cap));
    out.degree_cap = A.degree_cap;
    out.fourier_cap = A.fourier_cap;
    for (const auto& [a, ca] : A.terms) {
        for (const auto& [b, cb] : B.terms) {
            const cd c = ca * cb;
            MultiIndex base = a;
            for (int t = 0; t < n; ++t) base.k(t) = a.k(t) + b.k(t);
            for (int t = 0; t < n; ++t) base.i(t) = a.i(t) + b.i(t);
            for (int t = 0; t < 2 * m; ++t) base.j(t) = a.j(t) + b.j(t);
            for (int l = 0; l < n; ++l) {
                const int w = a.k(l) * b.i(l) - a.i(l) * b.k(l);
                if (w == 0) continue;
                MultiIndex r = base;
                r.i(l) -= 1;
                out.add(r, I_unit * c * double(w));
            }
            for (int p = 0; p < m; ++p) {
                const int w = a.j(p) * b.j(p + m) - a.j(p + m) * b.j(p);
                if (w == 0) continue;
                MultiIndex r = base;
                r.j(p) -= 1;
                r.j(p + m) -= 1;
                out.add(r, c * double(w));
            }
        }
    }
    // majorant propagation of spill bins
    auto bin_term = [&](int K, int D, double mass, const MultiIndex& b, double cb) {
        const double f = double(K) * b.degree() + double(D) * b.kl1() + double(D) * b.degree();
        if (f > 0) out.add_spill(K + b.kl1(), D + b.degree() - 2, mass * cb * f);
    };
    for (const auto& [key, w] : A.spill)
        for (const auto& [b, cb] : B.terms) bin_term(key.first, key.second, w, b, std::abs(cb));
    for (const auto& [key, w] : B.spill)
        for (const auto& [a, ca] : A.terms) bin_term(key.first, key.second, w, a, std::abs(ca));
    for (const auto& [ka, wa] : A.spill)
        for (const auto& [kb, wb] : B.spill) {
            const double f = double(ka.first) * kb.second + double(ka.second) * kb.first + double(ka.second) * kb.second;
            if (f > 0) out.add_spill(ka.first + kb.first, ka.second + kb.second - 2, wa * wb * f);
        }
    return out;
}

// ordinary product, truncated to the caps of A
inline TFSeries multiply(const TFSeries& A, const TFSeries& B) {
    A.check_same_dims(B);
    TFSeries out = A.empty_like();
    for (const auto& [a, ca] : A.terms)
        for (const auto& [b, cb] : B.terms) {
            MultiIndex r = a;
            for (int t = 0; t < r.len(); ++t) r.v[t] = a.v[t] + b.v[t];
            out.add(r, ca * cb);
        }
    for (const auto& [key, w] : A.spill)
        for (const auto& [b, cb] : B.terms) out.add_spill(key.first + b.kl1(), key.second + b.degree(), w * std::abs(cb));
    for (const auto& [key, w] : B.spill)
        for (const auto& [a, ca] : A.terms) out.add_spill(key.first + a.kl1(), key.second + a.degree(), w * std::abs(ca));
    for (const auto& [ka, wa] : A.spill)
        for (const auto& [kb, wb] : B.spill) out.add_spill(ka.first + kb.first, ka.second + kb.second, wa * wb);
    return out;
}

struct Truncation {
    TFSeries R;
    TFSeries tail;
};

// R keeps |i|+|j| <= 2 and |k|_1 <= K_plus; tail = P - R
inline Truncation truncate(const TFSeries& P, int K_plus) {
    if (K_plus < 1) throw DomainError("truncation order must be >= 1");
    Truncation t{P.empty_like(), P.empty_like()};
    for (const auto& [mi, c] : P.terms) {
        if (mi.degree() <= 2 && mi.kl1() <= K_plus)
            t.R.terms.emplace(mi, c);
        else
            t.tail.terms.emplace(mi, c);
    }
    t.tail.spill = P.spill;
    return t;
}

inline TFSeries average(const TFSeries& R) {
    TFSeries out = R.empty_like();
    for (const auto& [mi, c] : R.terms)
        if (mi.k_is_zero()) out.terms.emplace(mi, c);
    for (const auto& [key, w] : R.spill)
        if (key.first == 0) out.spill[key] = w;
    return out;
}

inline TFSeries degree_part(const TFSeries& P, int lo, int hi) {
    TFSeries out = P.empty_like();
    for (const auto& [mi, c] : P.terms)
        if (mi.degree() >= lo && mi.degree() <= hi) out.terms.emplace(mi, c);
    return out;
}

// majorant norm sum |p| e^{|k| r} s^{|i|+|j|}
inline double weighted_norm(const TFSeries& P, const AnalyticDomain& dom) {
    double s = 0.0;
    for (const auto& [mi, c] : P.terms) s += std::abs(c) * std::exp(mi.kl1() * dom.r) * std::pow(dom.s, mi.degree());
    for (const auto& [key, w] : P.spill) s += w * std::exp(key.first * dom.r) * std::pow(dom.s, key.second);
    return s;
}

inline double weighted_norm(const TFSeries& P, double r, double s) {
    AnalyticDomain d;
    d.r = r;
    d.s = s;
    return weighted_norm(P, d);
}

// jets[q] holds, per term, the bound max_{|alpha|=q} |d^alpha p| over the parameter box
inline double weighted_norm_jet(const std::vector<TFSeries>& jets, const AnalyticDomain& dom, int l) {
    if (jets.empty()) return 0.0;
    if (l < 0 || l >= static_cast<int>(jets.size())) throw DomainError("derivative order beyond available jets");
    TFSeries maxed = jets[0].empty_like();
    std::map<MultiIndex, double> best;
    std::map<std::pair<int, int>, double> spill;
    for (int q = 0; q <= l; ++q) {
        for (const auto& [mi, c] : jets[q].terms) best[mi] = std::max(best[mi], std::abs(c));
        for (const auto& [key, w] : jets[q].spill) spill[key] = std::max(spill[key], w);
    }
    double s = 0.0;
    for (const auto& [mi, c] : best) s += c * std::exp(mi.kl1() * dom.r) * std::pow(dom.s, mi.degree());
    for (const auto& [key, w] : spill) s += w * std::exp(key.first * dom.r) * std::pow(dom.s, key.second);
    return s;
}

inline double cauchy_shrink_bound(const TFSeries& P, const AnalyticDomain& dom, int l) {
    if (!(dom.eta > 0)) throw DomainError("eta must be positive");
    return weighted_norm(P, dom) / std::pow(dom.eta, l);
}

// max |coef(-k,i,j) - conj coef(k,i,j)|
inline double reality_residue(const TFSeries& P) {
    double r = 0.0;
    for (const auto& [mi, c] : P.terms) r = std::max(r, std::abs(P.coef(mi.negated_k()) - std::conj(c)));
    return r;
}

inline double max_abs_coef(const TFSeries& P) {
    double r = 0.0;
    for (const auto& [mi, c] : P.terms) r = std::max(r, std::abs(c));
    return r;
}

inline TFSeries d_x(const TFSeries& P, int l) {
    TFSeries out = P.empty_like();
    for (const auto& [mi, c] : P.terms)
        if (mi.k(l) != 0) out.terms.emplace(mi, I_unit * double(mi.k(l)) * c);
    for (const auto& [key, w] : P.spill) out.add_spill(key.first, key.second, w * key.first);
    return out;
}

inline TFSeries d_y(const TFSeries& P, int l) {
    TFSeries out = P.empty_like();
    for (const auto& [mi, c] : P.terms)
        if (mi.i(l) > 0) {
            MultiIndex r = mi;
            r.i(l) -= 1;
            out.add(r, double(mi.i(l)) * c);
        }
    for (const auto& [key, w] : P.spill) out.add_spill(key.first, key.second - 1, w * key.second);
    return out;
}

inline TFSeries d_z(const TFSeries& P, int l) {
    TFSeries out = P.empty_like();
    for (const auto& [mi, c] : P.terms)
        if (mi.j(l) > 0) {
            MultiIndex r = mi;
            r.j(l) -= 1;
            out.add(r, double(mi.j(l)) * c);
        }
    for (const auto& [key, w] : P.spill) out.add_spill(key.first, key.second - 1, w * key.second);
    return out;
}

inline double binom(int a, int b) {
    double r = 1.0;
    for (int t = 1; t <= b; ++t) r = r * (a - b + t) / t;
    return r;
}

// substitution y -> y + y0, z -> z + z0
inline TFSeries shift(const TFSeries& P, const VecC& y0, const VecC& z0) {
    if (y0.size() != P.n || z0.size() != 2 * P.m) throw StructuralError("shift dimensions");
    TFSeries out = P.empty_like();
    const int nv = P.n + 2 * P.m;
    std::vector<cd> w(nv);
    for (int a = 0; a < P.n; ++a) w[a] = y0(a);
    for (int a = 0; a < 2 * P.m; ++a) w[P.n + a] = z0(a);
    double rho = 0.0;
    for (cd c : w) rho = std::max(rho, std::abs(c));
    for (const auto& [mi, c] : P.terms) {
        // enumerate lower powers e <= powers
        std::vector<int> pw(nv), e(nv, 0);
        for (int a = 0; a < nv; ++a) pw[a] = mi.v[P.n + a];
        while (true) {
            cd t = c;
            MultiIndex r = mi;
            for (int a = 0; a < nv; ++a) {
                r.v[P.n + a] = e[a];
                if (pw[a] != e[a]) t *= binom(pw[a], e[a]) * std::pow(w[a], pw[a] - e[a]);
            }
            out.add(r, t);
            int a = 0;
            while (a < nv && e[a] == pw[a]) {
                e[a] = 0;
                ++a;
            }
            if (a == nv) break;
            ++e[a];
        }
    }
    // |y + y0|^D <= sum_e C(D,e) rho^{D-e} |y|^e
    for (const auto& [key, mass] : P.spill)
        for (int e = 0; e <= key.second; ++e)
            out.add_spill(key.first, e, mass * binom(key.second, e) * std::pow(rho, key.second - e));
    return out;
}

inline TFSeries shift(const TFSeries& P, const VecD& y0, const VecD& z0) {
    return shift(P, VecC(y0.cast<cd>()), VecC(z0.cast<cd>()));
}

inline TFSeries real_part_symmetrized(const TFSeries& P) {
    // (P + conj-reflect P)/2: enforces the reality symmetry exactly
    TFSeries out = P.empty_like();
    for (const auto& [mi, c] : P.terms) {
        cd partner = P.coef(mi.negated_k());
        out.add(mi, 0.5 * (c + std::conj(partner)));
    }
    out.spill = P.spill;
    return out;
}

// ---------------- serialization ----------------

inline nlohmann::json to_json(const TFSeries& P) {
    nlohmann::json j;
    j["dims"] = {P.n, P.m};
    j["caps"] = {P.degree_cap, P.fourier_cap};
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& [mi, c] : P.terms) recs.push_back({mi.fourier_k(), mi.taylor_i(), mi.taylor_j(), c.real(), c.imag()});
    j["terms"] = recs;
    nlohmann::json sp = nlohmann::json::array();
    for (const auto& [key, w] : P.spill) sp.push_back({key.first, key.second, w});
    j["overflow"] = sp;
    return j;
}

inline TFSeries series_from_json(const nlohmann::json& j) {
    TFSeries P(j.at("dims").at(0).get<int>(), j.at("dims").at(1).get<int>(), j.at("caps").at(0).get<int>(),
               j.at("caps").at(1).get<int>());
    for (const auto& r : j.at("terms")) {
        MultiIndex mi(r.at(0).get<IVec>(), r.at(1).get<IVec>(), r.at(2).get<IVec>());
        if (!P.admits(mi)) throw StructuralError("serialized term violates caps");
        P.terms[mi] = cd(r.at(3).get<double>(), r.at(4).get<double>());
    }
    if (j.contains("overflow"))
        for (const auto& r : j.at("overflow")) P.spill[{r.at(0).get<int>(), r.at(1).get<int>()}] = r.at(2).get<double>();
    return P;
}

// ---------------- parameter-dependent coefficients ----------------

// Values plus partial derivatives through order l0 at sample nodes of the parameter box.
struct ParamCoefficient {
    int p = 0;
    int l0 = 0;
    std::vector<VecD> nodes;
    std::vector<IVec> alphas;                 // multi-indices 0 <= |alpha| <= l0
    std::vector<std::vector<cd>> jets;        // jets[node][alpha]
    std::function<cd(const VecD&, const IVec&)> closed_form;

    static ParamCoefficient from_callable(std::function<cd(const VecD&, const IVec&)> f, const std::vector<VecD>& nodes,
                                          int l0) {
        ParamCoefficient c;
        c.p = nodes.empty() ? 0 : static_cast<int>(nodes[0].size());
        c.l0 = l0;
        c.nodes = nodes;
        c.alphas = multi_indices(c.p, 0, l0);
        c.closed_form = f;
        for (const auto& x : nodes) {
            std::vector<cd> jet;
            for (const auto& a : c.alphas) jet.push_back(f(x, a));
            c.jets.push_back(jet);
        }
        return c;
    }

    cd value(std::size_t node) const { return jets.at(node).at(0); }

    cd partial(std::size_t node, const IVec& alpha) const {
        for (std::size_t t = 0; t < alphas.size(); ++t)
            if (alphas[t] == alpha) return jets.at(node).at(t);
        throw DomainError("derivative order beyond stored jet");
    }

    // |p|_{O,l}: max over nodes and |alpha| <= l
    double norm(int l) const {
        double s = 0.0;
        for (const auto& jet : jets)
            for (std::size_t t = 0; t < alphas.size(); ++t)
                if (l1norm(alphas[t]) <= l) s = std::max(s, std::abs(jet[t]));
        return s;
    }

    // first derivatives against differences of values between nearest neighbours along one coordinate
    bool consistent(double rtol) const {
        for (std::size_t a = 0; a < nodes.size(); ++a)
            for (int dir = 0; dir < p; ++dir) {
                std::size_t best = nodes.size();
                double gap = 0.0;
                for (std::size_t b = 0; b < nodes.size(); ++b) {
                    VecD d = nodes[b] - nodes[a];
                    bool line = d(dir) > 0.0;
                    for (int t = 0; t < p && line; ++t)
                        if (t != dir && d(t) != 0.0) line = false;
                    if (line && (best == nodes.size() || d(dir) < gap)) {
                        best = b;
                        gap = d(dir);
                    }
                }
                if (best == nodes.size()) continue;
                IVec e(p, 0);
                e[dir] = 1;
                cd fd = (value(best) - value(a)) / gap;
                cd avg = 0.5 * (partial(a, e) + partial(best, e));
                double scale = std::max({std::abs(avg), std::abs(fd), 1e-300});
                if (std::abs(fd - avg) > rtol * scale) return false;
            }
        return true;
    }
};

}  // namespace mskam

#endif  // MSKAM_TFSERIES_HPP
