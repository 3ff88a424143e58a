#ifndef MSKAM_PRESETS_HPP
#define MSKAM_PRESETS_HPP

#include "mskam/nonres.hpp"
#include "mskam/resonance.hpp"
#include "mskam/scheduler.hpp"

namespace mskam::presets {

// Coupled oscillators after the action-angle / (u, v) change: tangent frequencies eps * lambda_t,
// normal block M22 = diag(w1^2 .. wn1^2, w1^2 .. wn1^2), no y-quadratic part.
// Parameters lambda = (w_1 .. w_n1, wt_1 .. wt_nt).
struct Example61 {
    int n1 = 2;  // normal oscillator pairs
    int nt = 2;  // tangent frequencies
    double eps = 0.01;
    std::vector<double> normal;   // centres of w_j (default 1, 1.5, 2, ...)
    std::vector<double> tangent;  // centres of wt_t (default 1, sqrt 2, sqrt 3, ...)

    int p() const { return n1 + nt; }

    double normal_centre(int j) const { return j < static_cast<int>(normal.size()) ? normal[j] : 1.0 + 0.5 * j; }
    double tangent_centre(int t) const { return t < static_cast<int>(tangent.size()) ? tangent[t] : std::sqrt(1.0 + t); }

    FrequencyData frequency() const {
        FrequencyData f;
        f.n = nt;
        f.m = n1;
        f.p = p();
        const int n1c = n1, ntc = nt;
        const double e = eps;
        f.omega = [=](const VecD& lam) -> VecD { return e * lam.tail(ntc); };
        f.M = [=](const VecD& lam) -> MatD {
            MatD M = MatD::Zero(ntc + 2 * n1c, ntc + 2 * n1c);
            for (int j = 0; j < n1c; ++j) M(ntc + j, ntc + j) = M(ntc + n1c + j, ntc + n1c + j) = lam(j) * lam(j);
            return M;
        };
        f.omega_partial = [=](const VecD& lam, const IVec& a) -> VecD {
            VecD out = VecD::Zero(ntc);
            if (l1norm(a) == 1)
                for (int t = 0; t < ntc; ++t) out(t) = a[n1c + t] == 1 ? e : 0.0;
            (void)lam;
            return out;
        };
        f.M_partial = [=](const VecD& lam, const IVec& a) -> MatD {
            MatD M = MatD::Zero(ntc + 2 * n1c, ntc + 2 * n1c);
            const int ord = l1norm(a);
            for (int j = 0; j < n1c; ++j) {
                if (a[j] != ord) continue;
                const double v = ord == 1 ? 2.0 * lam(j) : ord == 2 ? 2.0 : 0.0;
                M(ntc + j, ntc + j) = M(ntc + n1c + j, ntc + n1c + j) = v;
            }
            return M;
        };
        return f;
    }

    ScaleSet scales() const {
        ScaleSet s;
        s.eps = eps;
        s.eps_vec = {eps};
        s.mu_vec = {1.0};
        s.ceiling = 1.0;
        return s;
    }

    VecD lower() const {
        VecD lo(p());
        for (int j = 0; j < n1; ++j) lo(j) = normal_centre(j) - 0.05;
        for (int t = 0; t < nt; ++t) lo(n1 + t) = tangent_centre(t) - 0.05;
        return lo;
    }
    VecD upper() const { return lower().array() + 0.1; }

    // boxes of width 0.1 around the centres
    LambdaGrid grid(int per_axis = 3) const { return LambdaGrid::lattice(lower(), upper(), std::vector<int>(p(), per_axis)); }

    // eps <omega~, I> + 1/2 <z, M z> + eps^2 U with U = sum_t cos x_t + 1/2 u_1^2 cos x_1
    NormalForm normal_form(const VecD& lam, int degree_cap = 4, int fourier_cap = 6) const {
        FrequencyData f = frequency();
        NormalForm H;
        H.n = nt;
        H.m = n1;
        H.omega = f.omega(lam);
        H.M = f.M(lam);
        H.h = TFSeries(nt, n1, degree_cap, fourier_cap);
        H.P = TFSeries(nt, n1, degree_cap, fourier_cap);
        const IVec yi(nt, 0), z0(2 * n1, 0);
        for (int t = 0; t < nt; ++t) {
            IVec k(nt, 0);
            k[t] = 1;
            H.P.add(k, yi, z0, 0.5);
            k[t] = -1;
            H.P.add(k, yi, z0, 0.5);
        }
        IVec zu(2 * n1, 0);
        zu[0] = 2;
        IVec k1(nt, 0);
        k1[0] = 1;
        H.P.add(k1, yi, zu, 0.25);
        k1[0] = -1;
        H.P.add(k1, yi, zu, 0.25);
        H.eps = eps * eps;
        H.scales = scales();
        return H;
    }

    VecD nominal() const {
        VecD lam(p());
        for (int j = 0; j < n1; ++j) lam(j) = normal_centre(j);
        for (int t = 0; t < nt; ++t) lam(n1 + t) = tangent_centre(t);
        return lam;
    }
};

// n = 1, m = 1 model: H = 0.1 y + 0.037/2 |(y,z)|^2 + amp cos x
inline NormalForm model_system(double amp, int degree_cap = 4, int fourier_cap = 12) {
    NormalForm H;
    H.n = 1;
    H.m = 1;
    H.omega = VecD::Constant(1, 0.1);
    H.M = MatD::Identity(3, 3) * 0.037;
    H.h = TFSeries(1, 1, degree_cap, fourier_cap);
    H.P = TFSeries(1, 1, degree_cap, fourier_cap);
    H.P.add({1}, {0}, {0, 0}, 0.5 * amp);
    H.P.add({-1}, {0}, {0, 0}, 0.5 * amp);
    H.scales.eps = 0.037;
    H.scales.eps_vec = {0.1};
    H.scales.mu_vec = {0.037};
    H.scales.ceiling = 0.1;
    H.dom.r = 0.5;
    H.dom.s = 0.5;
    H.dom.eta = 0.1;
    return H;
}

inline KAMSchedule model_schedule(double mu0) {
    KAMSchedule sc;
    sc.mu0 = mu0;
    return sc;
}

// omega(lambda) = lambda on a box, no normal directions
inline FrequencyData identity_frequency(int n) {
    FrequencyData f;
    f.n = n;
    f.m = 0;
    f.p = n;
    f.omega = [](const VecD& lam) -> VecD { return lam; };
    f.M = [n](const VecD&) -> MatD { return MatD::Identity(n, n); };
    f.omega_partial = [n](const VecD&, const IVec& a) -> VecD {
        VecD out = VecD::Zero(n);
        if (l1norm(a) == 1)
            for (int t = 0; t < n; ++t)
                if (a[t] == 1) out(t) = 1.0;
        return out;
    };
    f.M_partial = [n](const VecD&, const IVec&) -> MatD { return MatD::Zero(n, n); };
    return f;
}

inline ScaleSet unit_scales() {
    ScaleSet s;
    s.eps = 1.0;
    s.eps_vec = {1.0};
    s.mu_vec = {1.0};
    s.ceiling = 1.0;
    return s;
}

// A divisor collision with frozen data: <k, omega> equals w_1^2 for k = e_1 and nothing depends on lambda.
inline FrequencyData divisor_collision() {
    FrequencyData f;
    f.n = 1;
    f.m = 1;
    f.p = 1;
    f.omega = [](const VecD&) -> VecD { return VecD::Constant(1, 1.0); };
    f.M = [](const VecD&) -> MatD {
        MatD M = MatD::Zero(3, 3);
        M(1, 1) = M(2, 2) = 1.0;
        return M;
    };
    f.omega_partial = [](const VecD&, const IVec&) -> VecD { return VecD::Zero(1); };
    f.M_partial = [](const VecD&, const IVec&) -> MatD { return MatD::Zero(3, 3); };
    return f;
}

// n = 2, m = 1: frequency eps^2 lambda, M = diag(eps |lambda|^2 I2, [[eps^3 a, |lambda|^2], [|lambda|^2, eps^3 b]]).
struct Example63 {
    double eps = 1e-2;
    double a = 1.0;
    double b = 2.0;
    VecD lo = VecD::Constant(2, 1.0);
    VecD hi = VecD::Constant(2, 2.0);

    FrequencyData frequency() const {
        FrequencyData f;
        f.n = 2;
        f.m = 1;
        f.p = 2;
        const double e = eps, e2 = eps * eps, e3 = eps * eps * eps, ac = a, bc = b;
        f.omega = [=](const VecD& lam) -> VecD { return e2 * lam; };
        f.M = [=](const VecD& lam) -> MatD {
            const double w2 = lam.squaredNorm();
            MatD M = MatD::Zero(4, 4);
            M(0, 0) = M(1, 1) = e * w2;
            M(2, 2) = e3 * ac;
            M(3, 3) = e3 * bc;
            M(2, 3) = M(3, 2) = w2;
            return M;
        };
        f.omega_partial = [=](const VecD&, const IVec& al) -> VecD {
            VecD out = VecD::Zero(2);
            if (l1norm(al) == 1) out(al[0] == 1 ? 0 : 1) = e2;
            return out;
        };
        f.M_partial = [=](const VecD& lam, const IVec& al) -> MatD {
            // d^alpha |lambda|^2
            double dw = 0.0;
            const int ord = l1norm(al);
            if (ord == 1) dw = 2.0 * lam(al[0] == 1 ? 0 : 1);
            if (ord == 2 && (al[0] == 2 || al[1] == 2)) dw = 2.0;
            MatD M = MatD::Zero(4, 4);
            M(0, 0) = M(1, 1) = e * dw;
            M(2, 3) = M(3, 2) = dw;
            return M;
        };
        return f;
    }

    ScaleSet scales() const {
        ScaleSet s;
        s.eps = eps * eps * eps;
        s.eps_vec = {eps * eps};
        s.mu_vec = {eps * eps * eps, eps, 1.0};
        s.ceiling = 1.0;
        return s;
    }

    LambdaGrid grid(int per_axis = 5) const { return LambdaGrid::lattice(lo, hi, {per_axis, per_axis}); }

    // eps^4 (cos x1 + cos x2) on top of the normal form at lambda
    NormalForm normal_form(const VecD& lam, int degree_cap = 4, int fourier_cap = 6) const {
        FrequencyData f = frequency();
        NormalForm H;
        H.n = 2;
        H.m = 1;
        H.omega = f.omega(lam);
        H.M = f.M(lam);
        H.h = TFSeries(2, 1, degree_cap, fourier_cap);
        H.P = TFSeries(2, 1, degree_cap, fourier_cap);
        for (int a = 0; a < 2; ++a) {
            IVec k(2, 0);
            k[a] = 1;
            H.P.add(k, {0, 0}, {0, 0}, 0.5);
            k[a] = -1;
            H.P.add(k, {0, 0}, {0, 0}, 0.5);
        }
        H.eps = std::pow(eps, 4);
        H.scales = scales();
        return H;
    }

    // Short run. The order-1 and order-2 generators grow like eps and 1 (the y-block eps |lambda|^2 against
    // divisors eps^2 <k, lambda>), so the action radius must be small and eps at most ~1e-3 for the angle
    // displacement gate; see run_eps.
    static constexpr double run_eps = 1e-3;

    KAMSchedule schedule() const {
        KAMSchedule sc;
        sc.tau = 3.5;
        sc.mu0 = 1e-4;
        sc.s0 = 1e-4;
        sc.k_cap = 6;
        sc.max_steps = 3;
        return sc;
    }

    NormalForm run_normal_form(const VecD& lam) const { return normal_form(lam, 12, 14); }
};

// d = 2 resonant toy: H = |y|^2 / 2 + eps^2 (cos(x1 - x2) + fast cos x1), resonance <(1,-1), omega> = 0
// on the diagonal y = (t, t). Parameter lambda = t.
struct Example62 {
    double eps = 0.01;
    double fast = 0.0;  // amplitude of the fast mode cos x1
    double lo = 0.8, hi = 1.2;
    int degree_cap = 4;
    int fourier_cap = 4;

    ResonantSystem system() const {
        ResonantSystem s;
        s.d = 2;
        s.eps = eps;
        s.H1 = TFSeries(2, 0, degree_cap, fourier_cap);
        s.H1.add({0, 0}, {2, 0}, {}, 0.5);
        s.H1.add({0, 0}, {0, 2}, {}, 0.5);
        s.P = TFSeries(2, 0, degree_cap, fourier_cap);
        s.P.add({1, -1}, {0, 0}, {}, 0.5);
        s.P.add({-1, 1}, {0, 0}, {}, 0.5);
        if (fast != 0.0) {
            s.P.add({1, 0}, {0, 0}, {}, 0.5 * fast);
            s.P.add({-1, 0}, {0, 0}, {}, 0.5 * fast);
        }
        return s;
    }

    ResonanceFrame frame() const {
        IMat Kp(2, 1);
        Kp << 1, -1;
        return complete_unimodular(Kp);
    }

    VecD base_point(double t) const { return VecD::Constant(2, t); }

    ReducedForm reduce(double t = 1.0, const ReductionOptions& o = {}) const {
        return reduce_to_normal_form(system(), frame(), base_point(t), o);
    }

    ReducedFamily family(const ReductionOptions& o = {}) const {
        ReducedFamily f;
        f.n = 1;
        f.m0 = 1;
        f.p = 1;
        f.eps = eps;
        const Example62 self = *this;
        f.at = [self, o](const VecD& lam) { return self.reduce(lam(0), o); };
        return f;
    }

    LambdaGrid grid(int count = 5) const { return LambdaGrid::lattice(VecD::Constant(1, lo), VecD::Constant(1, hi), {count}); }
};

}  // namespace mskam::presets

#endif  // MSKAM_PRESETS_HPP
