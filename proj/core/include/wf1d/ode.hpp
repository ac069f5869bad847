#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "wf1d/errors.hpp"

namespace wf1d {

// Dormand-Prince 5(4) embedded pair with FSAL, PI step-size control and the
// standard quartic dense output. Header-only and templated on the state
// dimension; the right-hand side returns false to reject a trial state that
// left the physical domain (the controller then retries with a smaller step).

struct OdeOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double max_step = 0.0;      // 0: no cap beyond the remaining interval
    double initial_step = 0.0;  // 0: automatic
    std::size_t max_steps = 4'000'000;
};

// One accepted step plus everything needed to evaluate the solution and its
// derivative anywhere inside it.
template <std::size_t N>
struct OdeStep {
    double tau0 = 0.0, h = 0.0;             // h is signed
    std::array<double, N> y0{}, y1{};
    std::array<std::array<double, N>, 5> rcont{};

    // Solution at tau0 + theta*h, theta in [0,1].
    std::array<double, N> eval(double theta) const {
        std::array<double, N> y;
        const double th1 = 1.0 - theta;
        for (std::size_t i = 0; i < N; ++i)
            y[i] = rcont[0][i] +
                   theta * (rcont[1][i] +
                            th1 * (rcont[2][i] + theta * (rcont[3][i] + th1 * rcont[4][i])));
        return y;
    }

    // d/dtau of the dense polynomial at tau0 + theta*h.
    std::array<double, N> eval_derivative(double theta) const {
        std::array<double, N> dy;
        const double th1 = 1.0 - theta;
        for (std::size_t i = 0; i < N; ++i) {
            const double c2 = rcont[1][i], c3 = rcont[2][i], c4 = rcont[3][i], c5 = rcont[4][i];
            // d/dtheta of c2*th + c3*th*th1 + c4*th^2*th1 + c5*th^2*th1^2
            const double d = c2 + c3 * (th1 - theta) + c4 * theta * (2.0 * th1 - theta) +
                             c5 * theta * th1 * (2.0 * th1 - 2.0 * theta);
            dy[i] = d / h;
        }
        return dy;
    }
};

namespace dopri5_detail {
constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
constexpr double a21 = 0.2, a31 = 3.0 / 40.0, a32 = 9.0 / 40.0, a41 = 44.0 / 45.0,
                 a42 = -56.0 / 15.0, a43 = 32.0 / 9.0, a51 = 19372.0 / 6561.0,
                 a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0,
                 a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0, a71 = 35.0 / 384.0,
                 a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                 a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
constexpr double safe = 0.9, facl = 0.2, facr = 10.0, beta = 0.04;
}  // namespace dopri5_detail

// Integrate y' = f(tau, y) from tau0 to tau_end (either direction).
//   f(tau, const y&, dy&) -> bool   false = state outside domain, reject step
//   on_step(const OdeStep<N>&)      called once per accepted step
// Throws StepSizeUnderflow when the controller cannot find an acceptable step
// and DomainError when even the initial state is rejected.
template <std::size_t N, class RHS, class Observer>
void integrate_ode(RHS&& f, std::array<double, N> y, double tau0, double tau_end,
                   const OdeOptions& opt, Observer&& on_step) {
    using namespace dopri5_detail;
    if (tau_end == tau0) return;
    const double dir = tau_end > tau0 ? 1.0 : -1.0;
    const double span = std::fabs(tau_end - tau0);
    const double hmax = opt.max_step > 0.0 ? std::fmin(opt.max_step, span) : span;

    std::array<double, N> k1, k2, k3, k4, k5, k6, k7, ytmp, y1;

    double tau = tau0;
    if (!f(tau, y, k1)) throw DomainError("initial state rejected by the right-hand side");

    // Initial step: rough curvature estimate, then let the controller adapt.
    double h = opt.initial_step;
    if (h <= 0.0) {
        double d0 = 0.0, d1n = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double sc = opt.abs_tol + opt.rel_tol * std::fabs(y[i]);
            d0 += (y[i] / sc) * (y[i] / sc);
            d1n += (k1[i] / sc) * (k1[i] / sc);
        }
        d0 = std::sqrt(d0 / N);
        d1n = std::sqrt(d1n / N);
        double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
        h0 = std::fmin(h0, hmax);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + dir * h0 * k1[i];
        double h1 = h0;
        if (f(tau + dir * h0, ytmp, k2)) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double sc = opt.abs_tol + opt.rel_tol * std::fabs(y[i]);
                d2 += ((k2[i] - k1[i]) / sc) * ((k2[i] - k1[i]) / sc);
            }
            d2 = std::sqrt(d2 / N) / h0;
            const double dm = std::fmax(d1n, d2);
            h1 = dm <= 1e-15 ? std::fmax(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        }
        h = std::fmin(std::fmin(100.0 * h0, h1), hmax);
    }
    h = std::fmin(h, hmax);

    double facold = 1e-4;
    bool last = false;
    for (std::size_t step = 0; step < opt.max_steps && !last; ++step) {
        if (std::fabs(tau_end - tau) <= 1.01 * h) {  // stretch instead of leaving a sliver
            h = std::fabs(tau_end - tau);
            last = true;
        }
        if (h < 1e-14 * std::fmax(1.0, std::fabs(tau)) && !last) throw StepSizeUnderflow(tau);
        const double hs = dir * h;

        bool ok = true;
        auto stage = [&](const std::array<double, N>& yin, double c, std::array<double, N>& kout) {
            return f(tau + c * hs, yin, kout);
        };
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + hs * a21 * k1[i];
        ok = stage(ytmp, c2, k2);
        if (ok) {
            for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + hs * (a31 * k1[i] + a32 * k2[i]);
            ok = stage(ytmp, c3, k3);
        }
        if (ok) {
            for (std::size_t i = 0; i < N; ++i)
                ytmp[i] = y[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            ok = stage(ytmp, c4, k4);
        }
        if (ok) {
            for (std::size_t i = 0; i < N; ++i)
                ytmp[i] = y[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            ok = stage(ytmp, c5, k5);
        }
        if (ok) {
            for (std::size_t i = 0; i < N; ++i)
                ytmp[i] = y[i] +
                          hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
            ok = stage(ytmp, 1.0, k6);
        }
        if (ok) {
            for (std::size_t i = 0; i < N; ++i)
                y1[i] = y[i] +
                        hs * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
            ok = stage(y1, 1.0, k7);
        }

        double err = 2.0;  // forces rejection when a stage left the domain
        if (ok) {
            err = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double ei = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                        e6 * k6[i] + e7 * k7[i]);
                const double sc =
                    opt.abs_tol + opt.rel_tol * std::fmax(std::fabs(y[i]), std::fabs(y1[i]));
                err += (ei / sc) * (ei / sc);
            }
            err = std::sqrt(err / N);
        }

        const double expo1 = 0.2 - beta * 0.75;
        const double fac11 = std::pow(std::fmax(err, 1e-32), expo1);
        if (err <= 1.0) {
            facold = std::fmax(err, 1e-4);
            OdeStep<N> rec;
            rec.tau0 = tau;
            rec.h = hs;
            rec.y0 = y;
            rec.y1 = y1;
            for (std::size_t i = 0; i < N; ++i) {
                const double ydiff = y1[i] - y[i];
                const double bspl = hs * k1[i] - ydiff;
                rec.rcont[0][i] = y[i];
                rec.rcont[1][i] = ydiff;
                rec.rcont[2][i] = bspl;
                rec.rcont[3][i] = ydiff - hs * k7[i] - bspl;
                rec.rcont[4][i] = hs * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] +
                                        d6 * k6[i] + d7 * k7[i]);
            }
            tau += hs;
            y = y1;
            k1 = k7;  // FSAL
            on_step(rec);
            if (last) return;
            double fac = fac11 / std::pow(facold, beta);
            fac = std::fmax(1.0 / facr, std::fmin(1.0 / facl, fac / safe));
            h = std::fmin(h / fac, hmax);
        } else {
            last = false;
            const double fac = std::fmin(1.0 / facl, fac11 / safe);
            h = h / fac;
        }
    }
    if (!last) throw Error("integrator exceeded max_steps before reaching the horizon");
}

}  // namespace wf1d
