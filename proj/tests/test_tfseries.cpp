#include "mskam/tfseries.hpp"

#include <catch_amalgamated.hpp>

#include <random>
#include <set>

using namespace mskam;

namespace {

TFSeries random_series(std::mt19937& rng, int n, int m, int deg, int K, int count, bool real = true) {
    TFSeries P(n, m, deg, K);
    std::uniform_int_distribution<int> kd(-K, K), dd(0, deg);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < count; ++t) {
        IVec k(n), i(n, 0), j(2 * m, 0);
        for (auto& v : k) v = kd(rng);
        int budget = dd(rng);
        for (int b = 0; b < budget; ++b) {
            std::uniform_int_distribution<int> slot(0, n + 2 * m - 1);
            int s = slot(rng);
            if (s < n)
                ++i[s];
            else
                ++j[s - n];
        }
        cd c(g(rng), g(rng));
        MultiIndex mi(k, i, j);
        if (real && mi.k_is_zero()) {
            P.add(mi, c.real());
        } else {
            P.add(mi, c);
            if (real) P.add(mi.negated_k(), std::conj(c));
        }
    }
    return P;
}

// value of c y^i z^j e^{ikx} and its partials, written out directly
struct Mono {
    MultiIndex mi;
    cd c;
    cd value(const VecC& x, const VecC& y, const VecC& z) const {
        cd v = c;
        cd ph = 0.0;
        for (int a = 0; a < mi.n; ++a) {
            ph += double(mi.k(a)) * x(a);
            v *= std::pow(y(a), mi.i(a));
        }
        for (int a = 0; a < mi.nz; ++a) v *= std::pow(z(a), mi.j(a));
        return v * std::exp(I_unit * ph);
    }
    cd dx(int l, const VecC& x, const VecC& y, const VecC& z) const { return I_unit * double(mi.k(l)) * value(x, y, z); }
    cd dy(int l, const VecC& x, const VecC& y, const VecC& z) const {
        if (mi.i(l) == 0) return 0.0;
        return double(mi.i(l)) * value(x, y, z) / y(l);
    }
    cd dz(int l, const VecC& x, const VecC& y, const VecC& z) const {
        if (mi.j(l) == 0) return 0.0;
        return double(mi.j(l)) * value(x, y, z) / z(l);
    }
};

cd bracket_oracle(const Mono& a, const Mono& b, int n, int m, const VecC& x, const VecC& y, const VecC& z) {
    cd s = 0.0;
    for (int l = 0; l < n; ++l) s += a.dx(l, x, y, z) * b.dy(l, x, y, z) - a.dy(l, x, y, z) * b.dx(l, x, y, z);
    for (int p = 0; p < m; ++p)
        s += a.dz(p, x, y, z) * b.dz(p + m, x, y, z) - a.dz(p + m, x, y, z) * b.dz(p, x, y, z);
    return s;
}

}  // namespace

TEST_CASE("bracket of linear action term with a Fourier mode") {
    const int n = 2;
    TFSeries A(n, 0, 2, 3), B(n, 0, 2, 3);
    VecD w(2);
    w << 0.7, -1.3;
    A.add({0, 0}, {1, 0}, {}, w(0));
    A.add({0, 0}, {0, 1}, {}, w(1));
    IVec k{2, -1};
    B.add(k, {0, 0}, {}, 1.0);
    TFSeries C = poisson_bracket(A, B);
    REQUIRE(C.size() == 1);
    // {<w,y>, e^{ikx}} = -d_y<w,y> d_x e^{ikx} = -i<k,w> e^{ikx}
    CHECK(std::abs(C.coef(k, {0, 0}, {}) - (-I_unit * dot(k, w))) < 1e-15);
}

TEST_CASE("bracket is antisymmetric and vanishes on the diagonal") {
    std::mt19937 rng(11);
    for (int t = 0; t < 10; ++t) {
        TFSeries A = random_series(rng, 2, 1, 2, 2, 8);
        TFSeries B = random_series(rng, 2, 1, 2, 2, 8);
        A.degree_cap = B.degree_cap = 6;
        A.fourier_cap = B.fourier_cap = 6;
        TFSeries AA = poisson_bracket(A, A);
        CHECK(max_abs_coef(AA) < 1e-12);
        TFSeries s = poisson_bracket(A, B) + poisson_bracket(B, A);
        CHECK(max_abs_coef(s) < 1e-12);
    }
}

TEST_CASE("y^2/2 bracket sin x gives -y cos x") {
    TFSeries A(1, 1, 4, 2), B(1, 1, 4, 2);
    A.add({0}, {2}, {0, 0}, 0.5);
    B.add({1}, {0}, {0, 0}, cd(0.0, -0.5));
    B.add({-1}, {0}, {0, 0}, cd(0.0, 0.5));
    TFSeries C = poisson_bracket(A, B);
    CHECK(C.size() == 2);
    CHECK(std::abs(C.coef({1}, {1}, {0, 0}) - cd(-0.5, 0.0)) < 1e-15);
    CHECK(std::abs(C.coef({-1}, {1}, {0, 0}) - cd(-0.5, 0.0)) < 1e-15);
}

TEST_CASE("bracket matches term-by-term differentiation oracle") {
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> kd(-3, 3), pd(0, 3);
    std::normal_distribution<double> g;
    const int n = 1, m = 1;
    for (int t = 0; t < 5; ++t) {
        Mono a{MultiIndex({kd(rng)}, {pd(rng)}, {pd(rng), pd(rng)}), cd(g(rng), g(rng))};
        Mono b{MultiIndex({kd(rng)}, {pd(rng)}, {pd(rng), pd(rng)}), cd(g(rng), g(rng))};
        TFSeries A(n, m, 12, 8), B(n, m, 12, 8);
        A.add(a.mi, a.c);
        B.add(b.mi, b.c);
        TFSeries C = poisson_bracket(A, B);
        CHECK(C.spill.empty());
        for (int s = 0; s < 4; ++s) {
            VecC x(1), y(1), z(2);
            x << cd(g(rng), 0.1 * g(rng));
            y << cd(g(rng), g(rng));
            z << cd(g(rng), g(rng)), cd(g(rng), g(rng));
            cd ref = bracket_oracle(a, b, n, m, x, y, z);
            CHECK(std::abs(C.evaluate(x, y, z) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
        }
    }
}

TEST_CASE("Jacobi identity on random low-degree triples") {
    std::mt19937 rng(21);
    for (int t = 0; t < 5; ++t) {
        TFSeries A = random_series(rng, 1, 1, 2, 1, 4);
        TFSeries B = random_series(rng, 1, 1, 2, 1, 4);
        TFSeries C = random_series(rng, 1, 1, 2, 1, 4);
        for (TFSeries* s : {&A, &B, &C}) {
            s->degree_cap = 8;
            s->fourier_cap = 6;
        }
        TFSeries J = poisson_bracket(A, poisson_bracket(B, C)) + poisson_bracket(B, poisson_bracket(C, A)) +
                     poisson_bracket(C, poisson_bracket(A, B));
        double scale = max_abs_coef(poisson_bracket(A, poisson_bracket(B, C))) + 1.0;
        CHECK(J.spill.empty());
        CHECK(max_abs_coef(J) <= 1e-10 * scale);
    }
}

TEST_CASE("dimension mismatch is a structural error") {
    TFSeries A(1, 1, 2, 2), B(2, 1, 2, 2);
    CHECK_THROWS_AS(poisson_bracket(A, B), StructuralError);
    CHECK_THROWS_AS(A + B, StructuralError);
}

TEST_CASE("cap overflow is accounted as spill and keeps the norm an upper bound") {
    std::mt19937 rng(3);
    TFSeries A = random_series(rng, 1, 1, 2, 3, 6);
    TFSeries B = random_series(rng, 1, 1, 2, 3, 6);
    TFSeries Abig = A, Bbig = B;
    Abig.degree_cap = Bbig.degree_cap = 10;
    Abig.fourier_cap = Bbig.fourier_cap = 10;
    A.degree_cap = B.degree_cap = 2;
    A.fourier_cap = B.fourier_cap = 3;
    TFSeries exact = poisson_bracket(Abig, Bbig);
    TFSeries capped = poisson_bracket(A, B);
    CHECK(capped.overflow_mass() > 0.0);
    for (double r : {0.1, 0.5, 1.0})
        for (double s : {0.1, 0.5, 1.0}) CHECK(weighted_norm(capped, r, s) >= weighted_norm(exact, r, s) * (1 - 1e-14));
    // second-generation spill propagation stays an upper bound too
    TFSeries exact2 = poisson_bracket(exact, Bbig);
    TFSeries capped2 = poisson_bracket(capped, B);
    for (double r : {0.1, 0.5})
        for (double s : {0.1, 0.5}) CHECK(weighted_norm(capped2, r, s) >= weighted_norm(exact2, r, s) * (1 - 1e-14));
    TFSeries prod_exact = multiply(Abig, Bbig), prod_capped = multiply(A, B);
    CHECK(weighted_norm(prod_capped, 0.3, 0.4) >= weighted_norm(prod_exact, 0.3, 0.4) * (1 - 1e-14));
}

TEST_CASE("truncate keeps low terms and partitions the term set") {
    TFSeries P(1, 0, 3, 5);
    P.add({0}, {0}, {}, 1.0);
    auto t = truncate(P, 1);
    CHECK(t.R.size() == 1);
    CHECK(t.tail.is_zero());

    TFSeries Q(1, 0, 3, 5);
    Q.add({3}, {0}, {}, 1.0);
    auto u = truncate(Q, 2);
    CHECK(u.R.is_zero());
    CHECK(u.tail.size() == 1);
    CHECK_THROWS_AS(truncate(Q, 0), DomainError);

    std::mt19937 rng(8);
    TFSeries X = random_series(rng, 2, 1, 4, 5, 25);
    REQUIRE(X.size() >= 40);
    auto v = truncate(X, 3);
    std::set<MultiIndex> all, parts;
    for (const auto& [mi, c] : X.terms) all.insert(mi);
    for (const auto& [mi, c] : v.R.terms) {
        CHECK(mi.degree() <= 2);
        CHECK(mi.kl1() <= 3);
        CHECK(parts.insert(mi).second);
    }
    for (const auto& [mi, c] : v.tail.terms) {
        CHECK((mi.degree() > 2 || mi.kl1() > 3));
        CHECK(parts.insert(mi).second);
    }
    CHECK(all == parts);
    TFSeries back = v.R + v.tail;
    CHECK(back.terms == X.terms);
    auto w = truncate(v.R, 3);
    CHECK(w.R.terms == v.R.terms);
    CHECK(w.tail.is_zero());
}

TEST_CASE("average extracts the k = 0 part and is idempotent") {
    TFSeries R(1, 0, 2, 3);
    R.add({1}, {0}, {}, 0.5);
    R.add({-1}, {0}, {}, 0.5);
    CHECK(average(R).is_zero());
    R.add({0}, {0}, {}, 2.5);
    TFSeries a = average(R);
    CHECK(a.size() == 1);
    CHECK(a.coef({0}, {0}, {}) == cd(2.5));
    std::mt19937 rng(4);
    TFSeries X = random_series(rng, 2, 1, 2, 3, 30);
    CHECK(average(average(X)).terms == average(X).terms);
}

TEST_CASE("weighted norm values and properties") {
    TFSeries Z(1, 0, 2, 3);
    CHECK(weighted_norm(Z, 0.5, 0.5) == 0.0);
    TFSeries P(1, 0, 2, 3);
    P.add({1}, {0}, {}, 2.0);
    CHECK(weighted_norm(P, 0.5, 0.3) == Catch::Approx(3.2974425414002564).epsilon(1e-14));

    std::mt19937 rng(9);
    for (int t = 0; t < 20; ++t) {
        TFSeries A = random_series(rng, 2, 1, 3, 3, 10);
        TFSeries B = random_series(rng, 2, 1, 3, 3, 10);
        double r = 0.1 + 0.1 * t, s = 0.05 + 0.04 * t;
        CHECK(weighted_norm(A, r, s) <= weighted_norm(A, r + 0.05, s));
        CHECK(weighted_norm(A, r, s) <= weighted_norm(A, r, s + 0.01));
        // equality up to summation-order rounding
        CHECK(weighted_norm(A + B, r, s) <= (weighted_norm(A, r, s) + weighted_norm(B, r, s)) * (1 + 1e-15));
    }
}

TEST_CASE("Cauchy shrink bound") {
    TFSeries P(1, 0, 2, 3);
    P.add({1}, {0}, {}, 1.0);
    AnalyticDomain d;
    d.r = 0.0;
    d.s = 1.0;
    d.eta = 0.1;
    CHECK(cauchy_shrink_bound(P, d, 0) == weighted_norm(P, d));
    CHECK(cauchy_shrink_bound(P, d, 2) == Catch::Approx(100.0).epsilon(1e-14));
    d.eta = 1.0;
    CHECK(cauchy_shrink_bound(P, d, 3) == weighted_norm(P, d));
    d.eta = 0.0;
    CHECK_THROWS_AS(cauchy_shrink_bound(P, d, 1), DomainError);
}

TEST_CASE("derivative jets give the parameter-derivative norm") {
    TFSeries v(1, 0, 2, 2), d1(1, 0, 2, 2);
    v.add({1}, {0}, {}, 1.0);
    d1.add({1}, {0}, {}, 3.0);
    AnalyticDomain dom;
    dom.r = 0.0;
    dom.s = 1.0;
    CHECK(weighted_norm_jet({v, d1}, dom, 0) == 1.0);
    CHECK(weighted_norm_jet({v, d1}, dom, 1) == 3.0);
    CHECK_THROWS_AS(weighted_norm_jet({v, d1}, dom, 2), DomainError);
}

TEST_CASE("series built from real data satisfy reality symmetry") {
    std::mt19937 rng(12);
    for (int t = 0; t < 5; ++t) {
        TFSeries A = random_series(rng, 2, 1, 2, 2, 10);
        TFSeries B = random_series(rng, 2, 1, 2, 2, 10);
        A.degree_cap = B.degree_cap = 6;
        A.fourier_cap = B.fourier_cap = 6;
        for (auto& [mi, c] : A.terms)
            if (mi.k_is_zero()) c = c.real();
        for (auto& [mi, c] : B.terms)
            if (mi.k_is_zero()) c = c.real();
        TFSeries C = poisson_bracket(A, B);
        CHECK(reality_residue(C) <= 1e-12 * std::max(1.0, max_abs_coef(C)));
        TFSeries D = multiply(A, B);
        CHECK(reality_residue(D) <= 1e-12 * std::max(1.0, max_abs_coef(D)));
    }
}

TEST_CASE("shift substitutes y -> y + y0 exactly") {
    std::mt19937 rng(2);
    TFSeries A = random_series(rng, 1, 1, 3, 2, 10);
    VecD y0(1), z0(2);
    y0 << 0.3;
    z0 << -0.2, 0.15;
    TFSeries S = shift(A, y0, z0);
    std::normal_distribution<double> g;
    for (int t = 0; t < 5; ++t) {
        VecC x(1), y(1), z(2);
        x << g(rng);
        y << g(rng);
        z << g(rng), g(rng);
        VecC yy = y + y0.cast<cd>(), zz = z + z0.cast<cd>();
        CHECK(std::abs(S.evaluate(x, y, z) - A.evaluate(x, yy, zz)) < 1e-12 * (1 + std::abs(A.evaluate(x, yy, zz))));
    }
}

TEST_CASE("derivatives of series") {
    TFSeries A(1, 1, 3, 2);
    A.add({1}, {2}, {1, 0}, 2.0);
    CHECK(d_x(A, 0).coef({1}, {2}, {1, 0}) == cd(0.0, 2.0));
    CHECK(d_y(A, 0).coef({1}, {1}, {1, 0}) == cd(4.0));
    CHECK(d_z(A, 0).coef({1}, {2}, {0, 0}) == cd(2.0));
    CHECK(d_z(A, 1).is_zero());
}

TEST_CASE("json round trip is exact") {
    std::mt19937 rng(13);
    TFSeries A = random_series(rng, 2, 1, 3, 3, 15);
    A.add_spill(4, 2, 1.2345678901234567e-9);
    std::string text = to_json(A).dump();
    TFSeries B = series_from_json(nlohmann::json::parse(text));
    CHECK(B.terms == A.terms);
    CHECK(B.spill == A.spill);
    CHECK(to_json(B).dump() == text);
    auto j = to_json(A);
    CHECK(j["dims"][0] == 2);
    CHECK(j["terms"][0].size() == 5);
    // canonical ordering: |k|_1 non-decreasing
    int last = -1;
    for (const auto& r : j["terms"]) {
        int l = l1norm(r[0].get<IVec>());
        CHECK(l >= last);
        last = l;
    }
}

TEST_CASE("term ordering and cap invariants") {
    MultiIndex a({1, 0}, {0, 0}, {}), b({0, -2}, {0, 0}, {}), c({-1, 0}, {0, 0}, {});
    CHECK(a < b);
    CHECK(c < a);
    TFSeries P(2, 0, 2, 2);
    P.add({3, 0}, {0, 0}, {}, 1.0);
    CHECK(P.size() == 0);
    CHECK(P.overflow_mass() == 1.0);
    P.add({0, 0}, {2, 1}, {}, 0.5);
    CHECK(P.size() == 0);
    CHECK(P.overflow_mass() == 1.5);
    CHECK_THROWS_AS(MultiIndex({1}, {-1}, {}), StructuralError);
}

TEST_CASE("parameter coefficient derivative data is consistent with values") {
    std::vector<VecD> nodes;
    for (int t = 0; t <= 20; ++t) nodes.push_back(VecD::Constant(1, 1.0 + 0.05 * t));
    auto f = [](const VecD& l, const IVec& a) -> cd {
        double x = l(0);
        switch (a[0]) {
            case 0: return std::sin(x) + I_unit * x * x;
            case 1: return std::cos(x) + 2.0 * I_unit * x;
            default: return -std::sin(x) + 2.0 * I_unit;
        }
    };
    ParamCoefficient c = ParamCoefficient::from_callable(f, nodes, 2);
    CHECK(c.consistent(1e-3));
    CHECK(c.norm(0) == Catch::Approx(std::abs(std::sin(2.0) + 4.0 * I_unit)));
    CHECK(c.partial(3, {1}) == f(nodes[3], {1}));
    CHECK_THROWS_AS(c.partial(0, {3}), DomainError);
    auto bad = [&](const VecD& l, const IVec& a) -> cd { return a[0] == 1 ? 5.0 * f(l, a) : f(l, a); };
    CHECK_FALSE(ParamCoefficient::from_callable(bad, nodes, 2).consistent(1e-3));
}
