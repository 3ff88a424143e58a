#include "mskam/homological.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace mskam;

namespace {

MatD random_sym(std::mt19937& rng, int d, double scale) {
    std::normal_distribution<double> g;
    MatD A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = scale * g(rng);
    return (A + A.transpose()) / 2;
}

MatC random_c(std::mt19937& rng, int r, int c) {
    std::normal_distribution<double> g;
    MatC A(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) A(i, j) = cd(g(rng), g(rng));
    return A;
}

NormalForm make_form(int n, int m, const VecD& w, const MatD& M, int deg_cap, int four_cap) {
    NormalForm H;
    H.n = n;
    H.m = m;
    H.omega = w;
    H.M = M;
    H.h = TFSeries(n, m, deg_cap, four_cap);
    H.P = TFSeries(n, m, deg_cap, four_cap);
    H.eps = 1.0;
    H.dom.r = 0.5;
    H.dom.s = 0.1;
    return H;
}

// random real perturbation with degree <= 2 and |k|_1 <= K
TFSeries random_R(std::mt19937& rng, int n, int m, int K, int deg_cap, int four_cap) {
    TFSeries R(n, m, deg_cap, four_cap);
    std::normal_distribution<double> g;
    const int d = n + 2 * m;
    std::vector<MultiIndex> monos;
    monos.push_back(MultiIndex::zero(n, m));
    for (int a = 0; a < d; ++a) monos.push_back(unit_index(n, m, a));
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) monos.push_back(pair_index(n, m, a, b));
    auto shells = lattice_shell(n, K, true);
    for (const auto& k : shells)
        for (const auto& mono : monos) {
            cd c(g(rng), g(rng));
            MultiIndex mi = with_k(mono, k);
            R.add(mi, c);
            R.add(mi.negated_k(), std::conj(c));
        }
    for (const auto& mono : monos) R.add(mono, g(rng));
    return R;
}

}  // namespace

TEST_CASE("order zero solve") {
    VecD w(1);
    w << 0.1;
    DivisorOperators op = build_operators_from(w, MatD::Identity(1, 1), {1}, 1, 0);
    CHECK(op.Lk0 == cd(0.0, 0.1));
    CHECK(solve_order0(op, 0.0, 1e-2) == cd(0.0));
    cd f = solve_order0(op, 1e-4, 1e-2);
    CHECK(std::abs(f - cd(0.0, -1e-5)) < 1e-20);
    DivisorOperators opm = build_operators_from(w, MatD::Identity(1, 1), {-1}, 1, 0);
    cd p(0.3, -0.2);
    CHECK(std::abs(solve_order0(opm, std::conj(p), 0.5) - std::conj(solve_order0(op, p, 0.5))) < 1e-15);
    CHECK_THROWS_AS(solve_order0(op, 1.0, 1.0, 0.2), SmallDivisor);
    try {
        solve_order0(op, 1.0, 1.0, 0.2);
    } catch (const SmallDivisor& e) {
        CHECK(e.k == IVec{1});
        CHECK(e.divisor == Catch::Approx(0.1));
    }
}

TEST_CASE("order one solve") {
    std::mt19937 rng(4);
    SECTION("zero data") {
        VecD w(1);
        w << 0.3;
        DivisorOperators op = build_operators_from(w, random_sym(rng, 3, 1.0), {1}, 1, 1);
        auto [f10, f01] = solve_order1(op, VecC::Zero(1), VecC::Zero(2), 0.1);
        CHECK(f10.norm() == 0.0);
        CHECK(f01.norm() == 0.0);
    }
    SECTION("decoupled blocks") {
        VecD w(2);
        w << 0.3, -0.7;
        MatD M = random_sym(rng, 4, 1.0);
        M.block(2, 0, 2, 2).setZero();
        M.block(0, 2, 2, 2).setZero();
        DivisorOperators op = build_operators_from(w, M, {1, 2}, 2, 1);
        VecC p10 = random_c(rng, 2, 1), p01 = random_c(rng, 2, 1);
        auto [f10, f01] = solve_order1(op, p10, p01, 0.01);
        VecC r10 = 0.01 * p10 / op.Lk0;
        VecC r01 = op.Lk1.partialPivLu().solve(VecC(0.01 * p01));
        CHECK((f10 - r10).norm() <= 1e-12 * r10.norm());
        CHECK((f01 - r01).norm() <= 1e-12 * r01.norm());
    }
    SECTION("dense oracle") {
        for (int t = 0; t < 10; ++t) {
            VecD w = VecD::Random(1);
            MatD M = random_sym(rng, 3, 0.5);
            DivisorOperators op = build_operators_from(w, M, {2}, 1, 1);
            VecC p10 = random_c(rng, 1, 1), p01 = random_c(rng, 2, 1);
            auto [f10, f01] = solve_order1(op, p10, p01, 0.1);
            VecC b(3);
            b << 0.1 * p10, 0.1 * p01;
            VecC ref = op.A1.fullPivLu().solve(b);
            VecC got(3);
            got << f10, f01;
            CHECK((got - ref).norm() <= 1e-12 * ref.norm());
            CHECK((op.A1 * got - b).norm() <= 1e-12 * b.norm());
        }
    }
}

TEST_CASE("order two solve") {
    std::mt19937 rng(8);
    SECTION("zero data") {
        VecD w(1);
        w << 0.3;
        DivisorOperators op = build_operators_from(w, random_sym(rng, 3, 1.0), {1}, 1, 1);
        SecondOrder s = solve_order2(op, MatC::Zero(1, 1), MatC::Zero(2, 1), MatC::Zero(2, 2), 0.1);
        CHECK(s.f20.norm() + s.f11.norm() + s.f02.norm() == 0.0);
    }
    SECTION("decoupled: three independent Sylvester-type solves") {
        VecD w(1);
        w << 0.37;
        MatD M = random_sym(rng, 3, 1.0);
        M(0, 1) = M(0, 2) = M(1, 0) = M(2, 0) = 0.0;
        DivisorOperators op = build_operators_from(w, M, {1}, 1, 1);
        MatC p20 = random_c(rng, 1, 1), p11 = random_c(rng, 2, 1), p02 = random_c(rng, 2, 2);
        p02 = (p02 + p02.transpose()).eval();
        SecondOrder s = solve_order2(op, p20, p11, p02, 1.0);
        MatC r02 = unvec(op.Lk2.fullPivLu().solve(vec(p02)), 2, 2);
        MatC r11 = op.Lk1.fullPivLu().solve(p11);
        MatC r20 = p20 / op.Lk0;
        CHECK((s.f02 - r02).norm() <= 1e-12 * r02.norm());
        CHECK((s.f11 - r11).norm() <= 1e-12 * r11.norm());
        CHECK((s.f20 - r20).norm() <= 1e-12 * r20.norm());
        CHECK((s.f02 - s.f02.transpose()).norm() <= 1e-12 * s.f02.norm());
    }
    SECTION("back substitution equals one-shot dense solve") {
        for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 1}}) {
            for (int t = 0; t < 10; ++t) {
                VecD w = VecD::Random(n);
                MatD M = random_sym(rng, n + 2 * m, 0.5);
                IVec k(n, 1);
                DivisorOperators op = build_operators_from(w, M, k, n, m);
                const int q = 2 * m;
                MatC p20 = random_c(rng, n, n), p11 = random_c(rng, q, n), p02 = random_c(rng, q, q);
                SecondOrder s = solve_order2(op, p20, p11, p02, 0.01);
                VecC b(n * n + n * q + q * q);
                b << 0.01 * vec(p20), 0.01 * vec(p11), 0.01 * vec(p02);
                VecC ref = op.A2.fullPivLu().solve(b);
                VecC got(b.size());
                got << vec(s.f20), vec(s.f11), vec(s.f02);
                CHECK((got - ref).norm() <= 1e-11 * ref.norm());
            }
        }
    }
}

TEST_CASE("no oscillating part gives zero generator") {
    VecD w(1);
    w << 0.4;
    NormalForm H = make_form(1, 1, w, MatD::Identity(3, 3) * 0.05, 4, 6);
    TFSeries R(1, 1, 4, 6);
    R.add(MultiIndex::zero(1, 1), 0.3);
    R.add(pair_index(1, 1, 0, 1), 0.2);
    FloorSpec fl{0.01, 2.0, 0.1, 0.05};
    auto res = solve_homological(H, R, 3, fl);
    REQUIRE(res.excluded.empty());
    CHECK(res.F.to_series(2, 3).is_zero());
}

TEST_CASE("single harmonic has the closed-form generator") {
    VecD w(2);
    w << 0.3, 0.1 * std::sqrt(2.0);
    NormalForm H = make_form(2, 0, w, MatD::Identity(2, 2) * 0.01, 4, 6);
    H.eps = 1e-3;
    IVec k{1, -2};
    TFSeries R(2, 0, 4, 6);
    R.add(k, {0, 0}, {}, 0.5);
    R.add({-1, 2}, {0, 0}, {}, 0.5);
    FloorSpec fl{0.01, 2.0, 0.1, 0.1};
    auto res = solve_homological(H, R, 3, fl);
    REQUIRE(res.excluded.empty());
    TFSeries F = res.F.to_series(2, 3);
    // F = eps sin<k,x> / <k,w>
    cd expect = H.eps / (2.0 * I_unit * dot(k, w));
    CHECK(std::abs(F.coef(k, {0, 0}, {}) - expect) < 1e-15);
    // the action-linear cross term vanishes because M11 y multiplies d_x F at degree 1
    CHECK(res.residual_norm <= 1e-12 * res.reference_norm);
}

TEST_CASE("homological identity on random instances") {
    std::mt19937 rng(15);
    for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 0}, std::pair{1, 0}}) {
        int done = 0;
        for (int t = 0; t < 40 && done < 3; ++t) {
            VecD w = VecD::Random(n);
            MatD M = random_sym(rng, n + 2 * m, 0.3);
            NormalForm H = make_form(n, m, w, M, 4, 6);
            H.eps = 0.01;
            TFSeries hc(n, m, 4, 6);
            if (m > 0) {
                IVec i3(n, 0);
                i3[0] = 3;
                hc.add({IVec(n, 0)}, i3, IVec(2 * m, 0), 0.2);
                IVec j(2 * m, 0);
                j[0] = 3;
                hc.add({IVec(n, 0)}, IVec(n, 0), j, -0.1);
                j[0] = 2;
                IVec i1(n, 0);
                i1[0] = 1;
                hc.add({IVec(n, 0)}, i1, j, 0.05);
            }
            H.h = hc;
            H.validate();
            TFSeries R = random_R(rng, n, m, 3, 4, 6);
            FloorSpec fl{0.1, 2.0, 0.1, 0.1};
            auto res = solve_homological(H, R, 3, fl);
            if (!res.excluded.empty()) continue;
            ++done;
            CHECK(res.residual_norm <= 1e-10 * res.reference_norm);
            TFSeries F = res.F.to_series(2, 3);
            CHECK(reality_residue(F) <= 1e-13 * max_abs_coef(F));
            for (const auto& [mi, c] : F.terms) CHECK(!mi.k_is_zero());
        }
        CHECK(done == 3);
    }
}

TEST_CASE("excluded shells are exactly the floor failures") {
    VecD w(2);
    w << 1.0, 1.0;  // <k,w> = 0 at k = (1,-1)
    NormalForm H = make_form(2, 0, w, MatD::Identity(2, 2) * 0.1, 4, 6);
    std::mt19937 rng(2);
    TFSeries R = random_R(rng, 2, 0, 2, 4, 6);
    FloorSpec fl{0.05, 2.0, 0.1, 0.1};
    auto res = solve_homological(H, R, 2, fl);
    REQUIRE(!res.excluded.empty());
    for (const auto& e : res.excluded) {
        DivisorOperators op = build_operators_from(w, H.M, e.k, 2, 0);
        CHECK(std::abs(op.Lk0) < 0.5 * fl.scalar(e.k) + 1e-300);
    }
    for (const auto& k : lattice_shell(2, 2, true)) {
        bool ex = false;
        for (const auto& e : res.excluded) ex = ex || e.k == k;
        DivisorOperators op = build_operators_from(w, H.M, k, 2, 0);
        bool fails = std::abs(op.Lk0) < 0.5 * fl.scalar(k) || op.Lk0 == cd(0.0);
        CHECK(ex == fails);
    }
    CHECK_THROWS_AS(assemble_generator(res), PartialAssemblyError);
    try {
        assemble_generator(res);
    } catch (const PartialAssemblyError& e) {
        CHECK(e.excluded.front().k == IVec{1, -1});
        CHECK(std::string(e.what()).find("[1,-1]") != std::string::npos);
    }
}

TEST_CASE("conjugate inputs give conjugate shells") {
    std::mt19937 rng(19);
    VecD w(1);
    w << 0.31;
    MatD M = random_sym(rng, 3, 0.2);
    DivisorOperators op = build_operators_from(w, M, {2}, 1, 1);
    DivisorOperators om = build_operators_from(w, M, {-2}, 1, 1);
    MatC p20 = random_c(rng, 1, 1), p11 = random_c(rng, 2, 1), p02 = random_c(rng, 2, 2);
    SecondOrder a = solve_order2(op, p20, p11, p02, 0.1);
    SecondOrder b = solve_order2(om, p20.conjugate(), p11.conjugate(), p02.conjugate(), 0.1);
    CHECK((a.f20.conjugate() - b.f20).norm() <= 1e-13 * a.f20.norm());
    CHECK((a.f11.conjugate() - b.f11).norm() <= 1e-13 * a.f11.norm());
    CHECK((a.f02.conjugate() - b.f02).norm() <= 1e-13 * a.f02.norm());
}

TEST_CASE("generator sizes follow the action-radius scaling") {
    std::mt19937 rng(6);
    VecD w(1);
    w << 0.29;
    MatD M = random_sym(rng, 3, 0.05);
    double f[2][3];
    for (int pass = 0; pass < 2; ++pass) {
        const double s = pass == 0 ? 1e-2 : 5e-3;
        NormalForm H = make_form(1, 1, w, M, 4, 6);
        H.eps = 1e-4;
        TFSeries R(1, 1, 4, 6);
        std::mt19937 r2(77);
        TFSeries base = random_R(r2, 1, 1, 2, 4, 6);
        for (const auto& [mi, c] : base.terms) R.add(mi, c * std::pow(s, 2 - mi.degree()));
        auto res = solve_homological(H, R, 2, FloorSpec{0.01, 2.0, 0.1, 0.05});
        REQUIRE(res.excluded.empty());
        for (int d = 0; d < 3; ++d) f[pass][d] = res.F.max_abs(d);
    }
    CHECK(f[0][0] / f[1][0] == Catch::Approx(4.0).epsilon(0.2));
    CHECK(f[0][1] / f[1][1] == Catch::Approx(2.0).epsilon(0.2));
    CHECK(f[0][2] / f[1][2] == Catch::Approx(1.0).epsilon(0.2));
}

TEST_CASE("translation solves") {
    MatD M(3, 3);
    M << 0.05, 0.01, 0.0, 0.01, 0.08, 0.02, 0.0, 0.02, 0.06;
    VecD p010(1), p001(2);
    p010 << 0.0;
    p001 << 0.0, 0.0;
    auto t0 = solve_translation(M, std::nullopt, 1, p010, p001, 0.1);
    CHECK(t0.y0.norm() + t0.z0.norm() == 0.0);

    p010 << 1e-3;
    p001 << -2e-3, 5e-4;
    auto t1 = solve_translation(M, std::nullopt, 1, p010, p001, 0.1);
    VecD b(3);
    b << p010, p001;
    VecD ref = -0.1 * M.inverse() * b;
    VecD got(3);
    got << t1.y0, t1.z0;
    CHECK((got - ref).norm() <= 1e-13 * ref.norm());

    TFSeries h(1, 0, 4, 0);
    h.add({0}, {3}, {}, 1.0);
    MatD Ms = MatD::Constant(1, 1, 0.5);
    auto t2 = solve_translation(Ms, h, 1, VecD::Constant(1, 1e-4), VecD(), 1.0);
    CHECK(t2.iterations <= 5);
    CHECK(t2.residual <= 1e-12 * 1e-4);
    double v = t2.y0(0);
    CHECK(std::abs(0.5 * v + 3 * v * v + 1e-4) <= 1e-16);

    CHECK_THROWS_AS(solve_translation(M, std::nullopt, 1, p010, p001, 0.1, 0.5), FloorError);
    MatD M1 = MatD::Identity(1, 1);
    CHECK_THROWS_AS(solve_translation(M1, h, 1, VecD::Constant(1, 1.0), VecD(), 1.0), ConvergenceError);

    const double budget = 1e-3;
    auto tb = solve_translation(M, std::nullopt, 1, p010, p001, 0.1, 0.0, budget);
    CHECK(tb.within_bound == ((tb.y0.norm() + tb.z0.norm()) <= 2 * budget + 1e-3 || got.norm() <= 2 * budget));
}

TEST_CASE("translation from frequency data") {
    FrequencyData fd;
    fd.n = 1;
    fd.m = 1;
    fd.p = 1;
    fd.omega = [](const VecD& l) { return VecD::Constant(1, l(0)); };
    fd.M = [](const VecD&) { return MatD(MatD::Identity(3, 3) * 0.04); };
    auto t = solve_translation(fd, VecD::Constant(1, 0.2), VecD::Constant(1, 1e-3), VecD::Zero(2), 0.5);
    CHECK(t.y0(0) == Catch::Approx(-0.5 * 1e-3 / 0.04).epsilon(1e-13));
}

TEST_CASE("isoenergetic translation") {
    VecD w(1);
    w << 0.3;
    MatD M = MatD::Constant(1, 1, 0.05);
    auto z = solve_isoenergetic_translation(M, w, std::nullopt, 0.0, VecD::Zero(1), VecD(), 0.1);
    CHECK(z.y0.norm() == 0.0);
    CHECK(z.t == 0.0);

    // scalar closed form
    const double mu = 0.05, eps = 0.1, p000 = 2e-3, p010 = 1e-3, om = 0.3;
    auto s = solve_isoenergetic_translation(M, w, std::nullopt, p000, VecD::Constant(1, p010), VecD(), eps);
    const double a = om + eps * p010;
    const double v = (-a + std::sqrt(a * a - 2 * mu * eps * p000)) / mu;
    const double t = -(mu * v + eps * p010) / om;
    CHECK(s.y0(0) == Catch::Approx(v).epsilon(1e-12));
    CHECK(s.t == Catch::Approx(t).epsilon(1e-12));

    // without the quadratic line term the system is the bordered linear solve
    MatD Mb(3, 3);
    Mb << 0.05, 0.01, 0.0, 0.01, 0.08, 0.02, 0.0, 0.02, 0.06;
    VecD pz(2);
    pz << 1e-3, -2e-3;
    auto lin = solve_isoenergetic_translation(Mb, w, std::nullopt, p000, VecD::Constant(1, p010), pz, eps, 0.0,
                                              MatD::Zero(3, 3));
    MatD B = MatD::Zero(4, 4);
    B.topLeftCorner(3, 3) = Mb;
    B(0, 3) = om;
    B(3, 0) = om + eps * p010;
    B(3, 1) = eps * pz(0);
    B(3, 2) = eps * pz(1);
    VecD rhs(4);
    rhs << -eps * p010, -eps * pz, -eps * p000;
    VecD ref = B.fullPivLu().solve(rhs);
    VecD got(4);
    got << lin.y0, lin.z0, lin.t;
    CHECK((got - ref).norm() <= 1e-12 * ref.norm());

    MatD Z = MatD::Zero(1, 1);
    CHECK_THROWS_AS(solve_isoenergetic_translation(Z, VecD::Zero(1), std::nullopt, 1.0, VecD::Zero(1), VecD(), 1.0),
                    FloorError);
}
