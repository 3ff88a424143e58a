#include "mskam/mslinalg.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace mskam;

namespace {

MatD random_sym(std::mt19937& rng, int d) {
    std::normal_distribution<double> g;
    MatD A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = g(rng);
    return (A + A.transpose()) / 2;
}

MatC random_c(std::mt19937& rng, int r, int c) {
    std::normal_distribution<double> g;
    MatC A(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) A(i, j) = cd(g(rng), g(rng));
    return A;
}

// operator of the degree-two equations, assembled column by column from the matrix form
//   L f20 - M21^T J f11,  L f11 - M22 J f11 + C J M21,  L C - M22 J C + C J M22
MatC second_order_oracle(const VecD& w, const MatD& M, const IVec& k, int n, int m) {
    const int q = 2 * m;
    cd L = I_unit * dot(k, w);
    MatC J = symplectic_J(m).cast<cd>();
    MatC M22 = M.bottomRightCorner(q, q).cast<cd>(), M21 = M.bottomLeftCorner(q, n).cast<cd>();
    const int d1 = n * n, d2 = n * q, d3 = q * q, D = d1 + d2 + d3;
    MatC out(D, D);
    for (int col = 0; col < D; ++col) {
        VecC e = VecC::Zero(D);
        e(col) = 1.0;
        MatC f20 = unvec(e.segment(0, d1), n, n);
        MatC f11 = unvec(e.segment(d1, d2), q, n);
        MatC C = unvec(e.segment(d1 + d2, d3), q, q);
        MatC r20 = L * f20 - M21.transpose() * J * f11;
        MatC r11 = L * f11 - M22 * J * f11 + C * J * M21;
        MatC r02 = L * C - M22 * J * C + C * J * M22;
        VecC r(D);
        r << vec(r20), vec(r11), vec(r02);
        out.col(col) = r;
    }
    return out;
}

}  // namespace

TEST_CASE("normal-matrix eigenvalues of the coupled oscillator example") {
    for (double w1 : {1.0, 1.5}) {
        MatD M = MatD::Zero(3, 3);
        M(0, 0) = 0.1;
        M(1, 1) = M(2, 2) = w1 * w1;
        VecD w(1);
        w << 0.1;
        DivisorOperators op = build_operators_from(w, M, {0}, 1, 1);
        MatD M22J = M.bottomRightCorner(2, 2) * symplectic_J(1);
        Eigen::ComplexEigenSolver<MatC> es(M22J.cast<cd>());
        std::vector<cd> ev(es.eigenvalues().data(), es.eigenvalues().data() + 2);
        std::sort(ev.begin(), ev.end(), [](cd a, cd b) { return a.imag() < b.imag(); });
        CHECK(std::abs(ev[0] - cd(0, -w1 * w1)) < 1e-12);
        CHECK(std::abs(ev[1] - cd(0, w1 * w1)) < 1e-12);
        CHECK((op.Lk1 + M22J.cast<cd>()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("operators have the documented shapes and structural zeros") {
    std::mt19937 rng(1);
    for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 2}, std::pair{3, 0}}) {
        MatD M = random_sym(rng, n + 2 * m);
        VecD w = VecD::Random(n);
        IVec k(n, 1);
        DivisorOperators op = build_operators_from(w, M, k, n, m);
        const int q = 2 * m, d1 = n * n, d2 = n * q, d3 = q * q;
        CHECK(op.Lk0 == I_unit * dot(k, w));
        CHECK(op.Lk1.rows() == q);
        CHECK(op.Lk2.rows() == d3);
        CHECK(op.A1.rows() == n + q);
        CHECK(op.A2.rows() == d1 + d2 + d3);
        CHECK(op.A1.bottomLeftCorner(q, n).cwiseAbs().sum() == 0.0);
        CHECK(op.A2.block(d1, 0, d2 + d3, d1).cwiseAbs().sum() == 0.0);
        CHECK(op.A2.block(0, d1 + d2, d1, d3).cwiseAbs().sum() == 0.0);
        CHECK(op.A2.block(d1 + d2, d1, d3, d2).cwiseAbs().sum() == 0.0);
        CHECK(op.A_full.block(d1, 0, d2 + d3, d1).cwiseAbs().sum() == 0.0);
        CHECK(op.A_full.block(d1 + d2, d1, d3, d2).cwiseAbs().sum() == 0.0);
        CHECK((op.A_full - op.A2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("second-order operator matches the column-by-column oracle") {
    std::mt19937 rng(2);
    for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 1}}) {
        for (int t = 0; t < 5; ++t) {
            MatD M = random_sym(rng, n + 2 * m);
            VecD w = VecD::Random(n);
            IVec k(n);
            for (int a = 0; a < n; ++a) k[a] = a + 1;
            DivisorOperators op = build_operators_from(w, M, k, n, m);
            MatC ref = second_order_oracle(w, M, k, n, m);
            CHECK((op.A2 - ref).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("perturbed operator adds the varpi diagonal when the h coupling vanishes") {
    FrequencyData fd;
    fd.n = 1;
    fd.m = 1;
    fd.p = 1;
    fd.omega = [](const VecD& l) { return VecD::Constant(1, 0.3 * l(0)); };
    fd.M = [](const VecD&) {
        MatD M(3, 3);
        M << 0.2, 0.05, 0.01, 0.05, 0.4, 0.1, 0.01, 0.1, 0.3;
        return M;
    };
    TFSeries h(1, 1, 4, 0);
    h.add({0}, {3}, {0, 0}, 0.7);  // z-independent
    fd.h = h;
    VecD lam = VecD::Constant(1, 1.2);
    VecD y = VecD::Constant(1, 0.01), z = VecD::Zero(2);
    z << 0.02, -0.01;
    DivisorOperators op = build_operators(fd, {2}, lam, y, z);
    MatD M = fd.M(lam);
    double Delta = M(0, 0) * y(0) + M(0, 1) * z(0) + M(0, 2) * z(1) + 3 * 0.7 * y(0) * y(0);
    CHECK(std::abs(op.varpi - I_unit * 2.0 * Delta) < 1e-15);
    const auto D = op.A2.rows();
    MatC diff = op.A_full - op.A2 - op.varpi * MatC::Identity(D, D);
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-15);
    // at the origin the perturbed operator is the unperturbed one
    DivisorOperators o0 = build_operators(fd, {2}, lam);
    CHECK((o0.A_full - o0.A2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("h coupling blocks reproduce the z-gradient of h") {
    TFSeries h(1, 1, 4, 0);
    h.add({0}, {1}, {1, 1}, 0.4);
    h.add({0}, {0}, {3, 0}, -0.2);
    h.add({0}, {2}, {0, 2}, 0.1);
    VecD y = VecD::Constant(1, 0.3), z(2);
    z << 0.2, -0.5;
    HJetBlocks b = h_jet_blocks(h, y, z);
    VecD lhs = b.hat_h1 * y + b.hat_h2 * z;
    CHECK((lhs - b.grad_z).norm() < 1e-12);
}

TEST_CASE("dimension mismatch raises a structural error") {
    MatD M = MatD::Identity(3, 3);
    VecD w = VecD::Ones(2);
    CHECK_THROWS_AS(build_operators_from(w, M, {1, 1}, 2, 1), StructuralError);
}

TEST_CASE("hermitian floor") {
    MatC A = cd(0.0, 0.3) * MatC::Identity(4, 4);
    FloorResult r = hermitian_floor(A, 0.3);
    CHECK(r.lambda_min == Catch::Approx(0.09).epsilon(1e-14));
    CHECK(r.holds == (r.lambda_min >= 0.09));
    MatC D = MatC::Zero(2, 2);
    D(0, 0) = 0.1 / 4.0;
    D(1, 1) = 1.0;
    FloorResult rd = hermitian_floor(D, 0.02);
    CHECK(rd.lambda_min == Catch::Approx(6.25e-4).epsilon(1e-12));
    CHECK(rd.holds);
    CHECK_FALSE(hermitian_floor(D, 0.03).holds);

    std::mt19937 rng(7);
    for (int t = 0; t < 20; ++t) {
        MatC B = random_c(rng, 6, 6);
        double lm = hermitian_floor(B, 0.0).lambda_min;
        Eigen::ComplexEigenSolver<MatC> es(B.adjoint() * B);
        double ref = es.eigenvalues().real().minCoeff();
        CHECK(std::abs(lm - ref) <= 1e-12 * std::max(1.0, es.eigenvalues().real().maxCoeff()));
        cd c(0.7, -1.1);
        CHECK(hermitian_floor(c * B, 0.0).lambda_min == Catch::Approx(std::norm(c) * lm).epsilon(1e-10).margin(1e-12));
    }
    MatC bad = MatC::Identity(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hermitian_floor(bad, 0.1), NumericError);
    CHECK_THROWS_AS(hermitian_floor(MatC::Zero(2, 3), 0.1), StructuralError);
}

TEST_CASE("Weyl perturbation check") {
    MatC B = MatC::Identity(3, 3) * 0.04;
    auto w0 = weyl_hermitian_check(B, MatC::Zero(3, 3));
    CHECK(w0.weyl_ok);
    CHECK(w0.half_floor);
    CHECK(w0.lambda_sum == Catch::Approx(w0.lambda_base));
    auto w1 = weyl_hermitian_check(B, -0.01 * MatC::Identity(3, 3));
    CHECK(w1.weyl_ok);
    CHECK(w1.half_floor);

    std::mt19937 rng(17);
    std::uniform_int_distribution<int> dd(1, 8);
    for (int t = 0; t < 100; ++t) {
        int d = dd(rng);
        MatC X = random_c(rng, d, d), Y = random_c(rng, d, d);
        MatC Bh = X.adjoint() * X, H = (Y + Y.adjoint()) / 2.0;
        CHECK(weyl_hermitian_check(Bh, H).weyl_ok);
    }
    MatC A = random_c(rng, 4, 4);
    auto wp = weyl_perturbation_check(A, A, 0.0);
    CHECK(wp.weyl_ok);
    CHECK(wp.h_inf < 1e-12);
}

TEST_CASE("multiscale eigenvalue lower bound") {
    MatC I4 = MatC::Identity(4, 4);
    double b1 = multiscale_eig_lower_bound({I4}, std::vector<double>{0.1});
    CHECK(b1 <= 0.01);
    CHECK(b1 > 0.0);
    double b2 = multiscale_eig_lower_bound({I4, I4}, std::vector<double>{0.1, 0.1});
    CHECK(b2 > 0.0);
    CHECK(b2 <= 0.04);
    CHECK(multiscale_eig_lower_bound({MatC::Zero(3, 3)}, std::vector<double>{0.1}) == 0.0);

    std::mt19937 rng(23);
    int positive = 0;
    for (int t = 0; t < 50; ++t) {
        MatC A0 = MatC::Identity(4, 4) + (t % 2 ? 0.02 : 0.3) * random_c(rng, 4, 4);
        MatC A1 = random_c(rng, 4, 4);
        std::vector<double> sc{0.1, 0.001};
        double lb = multiscale_eig_lower_bound({A0, A1}, sc);
        MatC A = sc[0] * A0 + sc[1] * A1;
        double lm = lambda_min_hermitian(A * A.adjoint());
        CHECK(lb <= lm);
        // appendix hypothesis at the largest scale
        MatC AA = A * A.adjoint();
        double c = sc[0] * sc[0];
        if ((AA - c * MatC::Identity(4, 4)).norm() < c) {
            CHECK(lb > 0.0);
            ++positive;
        }
    }
    CHECK(positive > 0);
}

TEST_CASE("scaled inverse stays bounded") {
    std::vector<double> seq{1e-2, 1e-3, 1e-4};
    auto d1 = [](double e) { return MatC(e * MatC::Identity(1, 1)); };
    CHECK(multiscale_inverse_denominator_check(d1, seq).bounded);
    auto d2 = [](double e) {
        MatC D = MatC::Zero(2, 2);
        D(0, 0) = e;
        D(1, 1) = 1.0;
        return D;
    };
    CHECK(multiscale_inverse_denominator_check(d2, seq).bounded);
    auto ex = [](double e) {
        const double w2 = 1.3 * 1.3 + 0.7 * 0.7, a = 1.0, b = 2.0;
        MatC M = MatC::Zero(4, 4);
        M(0, 0) = M(1, 1) = e * w2;
        M(2, 2) = e * e * e * a;
        M(3, 3) = e * e * e * b;
        M(2, 3) = M(3, 2) = w2;
        return M;
    };
    CHECK(multiscale_inverse_denominator_check(ex, seq).bounded);
    auto blow = [](double e) { return MatC(e * e * e * MatC::Identity(2, 2)); };
    CHECK_FALSE(multiscale_inverse_denominator_check(blow, seq).bounded);
    auto sing = [](double e) {
        MatC D = MatC::Zero(2, 2);
        D(0, 0) = e;
        return D;
    };
    auto rs = multiscale_inverse_denominator_check(sing, seq);
    CHECK_FALSE(rs.bounded);
    CHECK(rs.singular);
    CHECK(rs.failing_eps == 1e-2);
}

TEST_CASE("Kronecker product identities") {
    std::mt19937 rng(31);
    MatC A = random_c(rng, 2, 3), B = random_c(rng, 3, 2), C = random_c(rng, 3, 2), D = random_c(rng, 2, 3);
    MatC lhs = kron(A, B) * kron(C, D);
    MatC rhs = kron(MatC(A * C), MatC(B * D));
    CHECK((lhs - rhs).norm() <= 1e-13 * rhs.norm());
    MatC adj = kron(A, B).adjoint();
    MatC adj2 = kron(MatC(A.adjoint()), MatC(B.adjoint()));
    CHECK((adj - adj2).cwiseAbs().maxCoeff() == 0.0);
    // column-major vec: vec(AXB) = (B^T kron A) vec X
    MatC X = random_c(rng, 3, 3);
    MatC P = random_c(rng, 3, 3), Q = random_c(rng, 3, 3);
    CHECK((vec(P * X * Q) - kron(MatC(Q.transpose()), P) * vec(X)).norm() < 1e-12);
}

TEST_CASE("scale set validation and operator export") {
    ScaleSet s;
    s.eps = 1e-3;
    s.eps_vec = {1e-2, 1e-3};
    s.mu_vec = {5e-3};
    CHECK_NOTHROW(s.validate());
    CHECK(s.min_all() == 1e-3);
    s.mu_vec = {0.5};
    CHECK_THROWS_AS(s.validate(), DomainError);
    VecD w(1);
    w << 0.2;
    DivisorOperators op = build_operators_from(w, MatD::Identity(3, 3), {1}, 1, 1);
    auto j = operators_to_json(op);
    CHECK((matrix_from_json(j["A2"]) - op.A2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finite-difference fallback agrees with analytic partials") {
    FrequencyData fd;
    fd.n = 1;
    fd.m = 0;
    fd.p = 2;
    fd.omega = [](const VecD& l) { return VecD::Constant(1, l(0) * l(0) * l(1)); };
    fd.M = [](const VecD& l) { return MatD::Constant(1, 1, std::sin(l(1))); };
    VecD lam(2);
    lam << 1.1, 0.4;
    CHECK(fd.omega_d(lam, {1, 0})(0) == Catch::Approx(2 * 1.1 * 0.4).epsilon(1e-6));
    CHECK(fd.omega_d(lam, {1, 1})(0) == Catch::Approx(2 * 1.1).epsilon(1e-5));
    CHECK(fd.M_d(lam, {0, 2})(0, 0) == Catch::Approx(-std::sin(0.4)).epsilon(1e-5));
}
