#include <catch_amalgamated.hpp>

#include "model_system.hpp"

#include <sstream>

using namespace mskam;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("sequence at step 0 returns the initial values", "[scheduler]") {
    KAMSchedule sc;
    auto v = sequence_at(sc, 0);
    CHECK(v.r == sc.r0);
    CHECK(v.gamma == sc.gamma0);
    CHECK(v.eta == sc.eta0);
    CHECK(v.mu == Catch::Approx(sc.mu0).epsilon(1e-14));
    CHECK(v.s == sc.s0);
    CHECK_THAT(v.alpha, WithinRel(std::cbrt(sc.mu0), 1e-14));
}

TEST_CASE("radius shrinks 1, 3/4, 5/8", "[scheduler]") {
    KAMSchedule sc;
    sc.r0 = 1.0;
    CHECK(sequence_at(sc, 1).r == 0.75);
    CHECK(sequence_at(sc, 2).r == 0.625);
}

TEST_CASE("mu closed form with c0 = 1/64", "[scheduler]") {
    KAMSchedule sc;
    sc.c0 = 1.0 / 64.0;
    sc.lambda0 = 0.5;
    sc.mu0 = 1e-4;
    sc.sigma = 1.0 / 12.0;
    CHECK_THAT(sequence_at(sc, 1).mu, WithinRel(std::pow(10.0, -4.0 * 13.0 / 12.0), 1e-12));
    CHECK_THAT(sequence_at(sc, 1).mu, WithinRel(4.642e-5, 1e-3));
    // general c0 against the recursion mu+ = (64 c0)^{1/(1-lambda0)} mu^{1+sigma}
    sc.c0 = 0.01;
    double mu = sc.mu0;
    for (int nu = 1; nu <= 6; ++nu) {
        mu = std::pow(64.0 * sc.c0, 1.0 / (1.0 - sc.lambda0)) * std::pow(mu, 1.0 + sc.sigma);
        CHECK_THAT(sequence_at(sc, nu).mu, WithinRel(mu, 1e-11));
    }
}

TEST_CASE("s and K follow their recursions", "[scheduler]") {
    KAMSchedule sc;
    for (int nu = 1; nu <= 5; ++nu) {
        auto a = sequence_at(sc, nu - 1), b = sequence_at(sc, nu);
        CHECK_THAT(b.s, WithinRel(a.alpha * a.s / 8.0, 1e-13));
        CHECK(b.K == a.K_plus);
        CHECK(b.K_plus == shell_cap_from_mu(b.mu, sc.kappa));
    }
    CHECK(shell_cap_from_mu(1e-4, 1.0) == 10 * 10 * 10);
    CHECK(shell_cap_from_mu(1e-4, 1.0 / 3.0) == 10);
}

TEST_CASE("geometric shrinks reach half the initial values", "[scheduler]") {
    KAMSchedule sc;
    sc.r0 = 0.9;
    sc.gamma0 = 0.3;
    sc.eta0 = 0.7;
    auto v = sequence_at(sc, 60);
    CHECK_THAT(v.r, WithinAbs(sc.r0 / 2, 1e-12));
    CHECK_THAT(v.gamma, WithinAbs(sc.gamma0 / 2, 1e-12));
    CHECK_THAT(v.eta, WithinAbs(sc.eta0 / 2, 1e-12));
    for (int nu = 0; nu < 30; ++nu) {
        auto a = sequence_at(sc, nu), b = sequence_at(sc, nu + 1);
        CHECK(b.r < a.r);
        CHECK(b.mu < a.mu);
        CHECK(b.s < a.s);
    }
}

TEST_CASE("schedule validation", "[scheduler]") {
    KAMSchedule sc;
    CHECK_NOTHROW(sc.validate(1));
    sc.tau = 3.0;
    CHECK_THROWS_AS(sc.validate(2), DomainError);  // tau > n(N+1)+1 = 3 fails
    sc.tau = 3.5;
    CHECK_NOTHROW(sc.validate(2));
    sc.mu0 = 1.5;
    CHECK_THROWS_AS(sc.validate(1), DomainError);
    KAMSchedule bad;
    bad.lambda0 = 1.0;
    CHECK_THROWS_AS(bad.validate(1), DomainError);
    CHECK(KAMSchedule{}.chi() == Catch::Approx(3 * 3.0 + 5 + 10));
}

TEST_CASE("shell count matches enumeration", "[scheduler]") {
    for (int n = 1; n <= 3; ++n)
        for (int j = 0; j <= 6; ++j) {
            int cnt = 0;
            const int R = j;
            if (n == 1) {
                for (int a = -R; a <= R; ++a) cnt += std::abs(a) == j;
            } else if (n == 2) {
                for (int a = -R; a <= R; ++a)
                    for (int b = -R; b <= R; ++b) cnt += std::abs(a) + std::abs(b) == j;
            } else {
                for (int a = -R; a <= R; ++a)
                    for (int b = -R; b <= R; ++b)
                        for (int c = -R; c <= R; ++c) cnt += std::abs(a) + std::abs(b) + std::abs(c) == j;
            }
            CHECK(shell_count(n, j) == cnt);
        }
}

TEST_CASE("Gamma sum by direct lattice summation", "[scheduler]") {
    const double chi = 7.0, dr = 0.3;
    double direct = 0.0;
    for (int a = -6; a <= 6; ++a)
        for (int b = -6; b <= 6; ++b) {
            const int k = std::abs(a) + std::abs(b);
            if (k == 0 || k > 6) continue;
            direct += std::pow(double(k), chi) * std::exp(-k * dr / 8.0);
        }
    CHECK_THAT(gamma_sum(2, 6, chi, dr), WithinRel(direct, 1e-13));
}

TEST_CASE("H2 tail integral matches quadrature", "[scheduler]") {
    for (auto [p, K, a] : {std::tuple{2, 10.0, 0.1}, std::tuple{3, 40.0, 0.05}, std::tuple{1, 5.0, 0.7}, std::tuple{0, 2.0, 1.3}}) {
        // composite Simpson on [K, K + 60/a]; the remainder beyond is below 1e-20 relative
        const double L = 80.0 / a;
        const int steps = 400000;
        const double h = L / steps;
        auto f = [&](double x) { return std::pow(x, p) * std::exp(-a * x); };
        double sum = f(K) + f(K + L);
        for (int i = 1; i < steps; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(K + i * h);
        const double quad = sum * h / 3.0;
        CHECK_THAT(tail_integral(p, K, a), WithinRel(quad, 1e-10));
    }
}

TEST_CASE("mu0 = 0.5 violates H7", "[scheduler]") {
    KAMSchedule sc;
    sc.mu0 = 0.5;
    auto rep = check_assumptions(sc, 0, 1);
    CHECK_FALSE(rep.verdict.at("H7"));
    CHECK(rep.lhs.at("H7") == Catch::Approx(0.5));
    CHECK(rep.rhs.at("H7") == Catch::Approx(std::cbrt(0.5) / 8));
}

TEST_CASE("literal assumption verdicts at mu0 = 1e-8", "[scheduler]") {
    KAMSchedule sc;
    sc.mu0 = 1e-8;
    auto rep = check_assumptions(sc, 0, 1);
    REQUIRE(rep.verdict.size() == 8);
    // K+ = 19^3 dominates 8(n + l0)/(r - r+) = 128 and makes the tail integral negligible
    CHECK(rep.verdict.at("H1"));
    CHECK(rep.verdict.at("H2"));
    CHECK(rep.verdict.at("H3"));
    CHECK(rep.verdict.at("H7"));
    // Gamma with chi = 24 summed to 6859 shells is astronomically large
    CHECK(rep.lhs.at("H5") > 1e50);
    CHECK_FALSE(rep.verdict.at("H4"));
    CHECK_FALSE(rep.verdict.at("H5"));
    CHECK_FALSE(rep.verdict.at("H6"));
    CHECK_FALSE(rep.verdict.at("H8"));
    CHECK_FALSE(rep.all());
    CHECK(rep.failing() == std::vector<std::string>{"H4", "H5", "H6", "H8"});
}

TEST_CASE("H3 uses the normal matrix when supplied", "[scheduler]") {
    KAMSchedule sc;
    MatD M = MatD::Identity(3, 3) * 0.01;
    CHECK(check_assumptions(sc, 0, 1, &M, 0.01).verdict.at("H3"));
    CHECK_FALSE(check_assumptions(sc, 0, 1, &M, 0.02).verdict.at("H3"));
}

TEST_CASE("H8 monotone term", "[scheduler]") {
    const double sigma = 1.0 / 12.0;
    for (int b = 1; b <= 3; ++b) {
        double prev = 0.0;
        for (int x = 1; x <= 20; ++x) {
            CHECK_THAT(gamma_ratio(x), WithinRel(1.0 - 1.0 / (std::ldexp(1.0, x + 1) + 2.0), 1e-15));
            const double t = h8_monotone_term(sigma, b, x);
            CHECK(t > std::pow(2.0, sigma - 3.0 * b));
            CHECK(t > prev);
            prev = t;
            // direct evaluation of the ratio from the sequence
            KAMSchedule sc;
            const double direct = sequence_at(sc, x + 1).gamma / sequence_at(sc, x).gamma;
            CHECK_THAT(direct, WithinRel(gamma_ratio(x), 1e-14));
        }
    }
}

TEST_CASE("run with zero perturbation converges at step 0", "[scheduler][run]") {
    NormalForm H = testing::model_system(0.0);
    auto res = run(H, testing::model_schedule(1e-4));
    CHECK(res.status == RunStatus::converged);
    CHECK(res.history.empty());
    CHECK(res.final_norm == 0.0);
}

TEST_CASE("model run at mu0 = 1e-6", "[scheduler][run]") {
    NormalForm H = testing::model_system(1e-6);
    auto res = run(H, testing::model_schedule(1e-6));
    REQUIRE(res.status == RunStatus::converged);
    CHECK(res.history.size() <= 4);
    CHECK(res.final_norm <= 1e-18);
    std::vector<double> L{std::log(res.history.front().norm_before)};
    for (const auto& c : res.history) {
        CHECK(c.accepted);
        L.push_back(std::log(c.norm_after));
    }
    for (std::size_t i = 1; i < L.size(); ++i) CHECK(L[i] < L[i - 1]);
    // decrements of the log norm do not shrink
    for (std::size_t i = 2; i < L.size(); ++i) CHECK(L[i - 1] - L[i] >= L[i - 2] - L[i - 1]);
    for (const auto& c : res.history)
        CHECK(std::log(c.norm_after) / std::log(c.norm_before) >= 1.0 + 1.0 / 12.0 - 0.2);
}

TEST_CASE("calibrated c0 keeps the run converging", "[scheduler][run]") {
    NormalForm H = testing::model_system(1e-5);
    const double c0 = calibrate_c0(H, testing::model_schedule(1e-5));
    CHECK(c0 > 0.0);
    CHECK(c0 <= 1.0 / 64.0);
    RunOptions o;
    o.calibrate = true;
    auto res = run(H, testing::model_schedule(1e-5), o);
    CHECK(res.schedule.c0 == c0);
    INFO(res.diagnosis);
    CHECK(res.status == RunStatus::converged);
}

TEST_CASE("resonant frequency empties the surviving set", "[scheduler][run]") {
    std::vector<NormalForm> nodes;
    for (double lam : {0.9, 1.0, 1.1}) {
        NormalForm H;
        H.n = 2;
        H.m = 0;
        H.omega = VecD::Constant(2, lam);
        H.M = MatD::Identity(2, 2) * 0.05;
        H.h = TFSeries(2, 0, 3, 6);
        H.P = TFSeries(2, 0, 3, 6);
        H.P.add({1, -1}, {0, 0}, {}, 0.5e-4);
        H.P.add({-1, 1}, {0, 0}, {}, 0.5e-4);
        H.scales.eps = 0.05;
        H.scales.eps_vec = {1.0};
        H.scales.mu_vec = {0.05};
        H.scales.ceiling = 1.0;
        nodes.push_back(H);
    }
    KAMSchedule sc;
    sc.tau = 3.5;
    RunOptions o;
    o.workers = 2;
    auto res = run_nodes(nodes, sc, o);
    CHECK(res.empty());
    for (const auto& r : res.runs) {
        REQUIRE(r.status == RunStatus::excluded);
        CHECK(r.excluded_at == 0);
        REQUIRE_FALSE(r.excluded_by.empty());
        CHECK(std::abs(r.excluded_by.front().k[0]) == 1);
        CHECK(r.excluded_by.front().k[0] == -r.excluded_by.front().k[1]);
    }
}

TEST_CASE("steps CSV is deterministic", "[scheduler][run]") {
    NormalForm H = testing::model_system(1e-4);
    auto a = run(H, testing::model_schedule(1e-4));
    auto b = run(H, testing::model_schedule(1e-4));
    std::ostringstream sa, sb;
    write_steps_csv(sa, a.history);
    write_steps_csv(sb, b.history);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind(steps_csv_header(), 0) == 0);
    auto j = to_json(a);
    CHECK(j["status"] == "converged");
    CHECK(j["history"].size() == a.history.size());
}
