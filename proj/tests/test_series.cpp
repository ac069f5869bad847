#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "wf1d/errors.hpp"
#include "wf1d/ode.hpp"
#include "wf1d/series.hpp"
#include "wf1d/worldline.hpp"

using namespace wf1d;

TEST_CASE("empty series is identically k0") {
    GhostSeries s;
    CHECK(eval_F(s, 7.3) == 1.0);
    CHECK(eval_F(s, 1e-9) == 1.0);
}

TEST_CASE("single-term arithmetic") {
    GhostSeries s;
    s.coeffs = {0.5};
    CHECK(eval_F(s, 2.0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("domain throws") {
    GhostSeries s;
    s.coeffs = {2.0};
    CHECK_THROWS_AS(eval_F(s, 0.0), NonPositiveRadius);
    CHECK_THROWS_AS(eval_F(s, -3.0), NonPositiveRadius);
    CHECK_THROWS_AS(eval_F(s, 1.0), NonPositiveF);  // 1 - 2/1 < 0
    CHECK(std::isnan(eval_F_raw(s, -1.0)));
    CHECK(eval_F_raw(s, 1.0) == doctest::Approx(-1.0));
}

TEST_CASE("scaling: identity, worked example, metadata") {
    GhostSeries s;
    s.coeffs = {1.0};
    s.r_min_valid = 0.8;

    GhostSeries id = scale_series(s, 1.0);
    CHECK(id.k0 == s.k0);
    CHECK(id.coeffs == s.coeffs);
    CHECK(id.r_min_valid == s.r_min_valid);

    GhostSeries d = scale_series(s, 2.0);
    CHECK(d.k0 == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(d.coeffs[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d.r_min_valid == doctest::Approx(0.4).epsilon(1e-15));

    CHECK_THROWS_AS(scale_series(s, 0.0), NonPositiveLambda);
    CHECK_THROWS_AS(scale_series(s, -1.0), NonPositiveLambda);
}

TEST_CASE("scaling law holds to machine precision for random series") {
    std::mt19937 rng(20260818);
    std::uniform_real_distribution<double> lam(0.5, 2.0), rad(1.0, 100.0), coef(-0.2, 0.2);
    for (int trial = 0; trial < 200; ++trial) {
        GhostSeries s;
        const int n = 1 + static_cast<int>(rng() % 8);
        for (int i = 0; i < n; ++i) s.coeffs.push_back(coef(rng));
        const double l = lam(rng), r = rad(rng);
        const double lhs = eval_F(scale_series(s, l), r);
        const double rhs = l * l * eval_F(s, l * r);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
    }
}

TEST_CASE("scaling composes") {
    GhostSeries s;
    s.coeffs = {0.3, -0.1, 0.02, 0.0, 1e-4};
    const GhostSeries two = scale_series(scale_series(s, 1.3), 0.7);
    const GhostSeries one = scale_series(s, 1.3 * 0.7);
    CHECK(two.k0 == doctest::Approx(one.k0).epsilon(1e-14));
    for (std::size_t i = 0; i < s.coeffs.size(); ++i)
        CHECK(two.coeffs[i] == doctest::Approx(one.coeffs[i]).epsilon(1e-13));
}

TEST_CASE("analytic derivative matches central differences") {
    GhostSeries s;
    s.coeffs = {0.4, 0.05, -0.01, 0.002};
    for (const double r : {1.0, 2.5, 7.0, 40.0, 300.0}) {
        const double h = 1e-5 * r;
        const double fd = (eval_F(s, r + h) - eval_F(s, r - h)) / (2.0 * h);
        const double an = eval_dF(s, r);
        CHECK(an == doctest::Approx(fd).epsilon(1e-6));

        double F, dF;
        eval_F_dF(s, r, F, dF);
        CHECK(F == eval_F(s, r));
        CHECK(dF == eval_dF(s, r));
    }
}

TEST_CASE("positivity guard on the sampling grid") {
    GhostSeries s;
    s.coeffs = {0.9};
    s.r_min_valid = 1.0;  // F(1) = 0.1 > 0
    CHECK(domain_ok(s));
    s.r_min_valid = 0.5;  // F(0.5) = -0.8
    CHECK_FALSE(domain_ok(s));
    CHECK_THROWS_AS(check_domain(s), DomainError);
}

TEST_CASE("series text round trip is bit exact") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    GhostSeries s;
    s.k0 = 1.0 + 1e-13;
    for (int i = 0; i < 11; ++i) s.coeffs.push_back(coef(rng) * std::pow(10.0, -(i % 6)));
    const GhostSeries back = series_from_text(series_to_text(s), s.r_min_valid);
    CHECK(back.k0 == s.k0);
    REQUIRE(back.coeffs.size() == s.coeffs.size());
    for (std::size_t i = 0; i < s.coeffs.size(); ++i) CHECK(back.coeffs[i] == s.coeffs[i]);
}

TEST_CASE("series text parser rejects malformed input") {
    CHECK_THROWS_AS(series_from_text("k1 = 0.5\n", 1.0), Error);                  // no k0
    CHECK_THROWS_AS(series_from_text("k0 = 1\nk2 = 0.5\n", 1.0), Error);          // gap
    CHECK_THROWS_AS(series_from_text("k0 = 1\nk1 = 1\nk1 = 2\n", 1.0), Error);    // dup
    CHECK_THROWS_AS(series_from_text("k0 = 1\nq3 = 2\n", 1.0), Error);            // key
    CHECK_THROWS_AS(series_from_text("k0 = banana\n", 1.0), Error);               // float
    std::string too_many = "k0 = 1\n";
    for (int i = 1; i <= 19; ++i) too_many += "k" + std::to_string(i) + " = 0.001\n";
    CHECK_THROWS_AS(series_from_text(too_many, 1.0), Error);
    const GhostSeries ok = series_from_text("# comment\nk0 = 1 # trailing\n\nk1 = -2e-3\n", 0.7);
    CHECK(ok.k0 == 1.0);
    CHECK(ok.coeffs == std::vector<double>{-2e-3});
    CHECK(ok.r_min_valid == 0.7);
}

namespace {

// Worldline sampling x(t) = sin(t)/2, whose velocity stays inside (-1, 1).
Worldline sine_worldline(double t0, double t1, std::size_t n, bool with_accel) {
    std::vector<double> tau(n), t(n), x(n), v(n), a(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n - 1);
        tau[i] = ti;
        t[i] = ti;
        x[i] = 0.5 * std::sin(ti);
        v[i] = 0.5 * std::cos(ti);
        a[i] = -0.5 * std::sin(ti);
    }
    if (with_accel) return Worldline(tau, t, x, v, a);
    return Worldline(tau, t, x, v);
}

}  // namespace

TEST_CASE("worldline reproduces nodes exactly and interpolates to h^4") {
    const Worldline w = sine_worldline(0.0, 6.0, 121, true);
    CHECK(w.x_at(w.t()[17]) == w.x()[17]);
    CHECK(w.x_at(w.t_front()) == w.x().front());
    CHECK(w.x_at(w.t_back()) == w.x().back());

    double emax = 0.0, vmax = 0.0, smax = 0.0;
    for (int k = 0; k <= 500; ++k) {
        const double t = 6.0 * k / 500.0;
        emax = std::fmax(emax, std::fabs(w.x_at(t) - 0.5 * std::sin(t)));
        vmax = std::fmax(vmax, std::fabs(w.v_at(t) - 0.5 * std::cos(t)));
        smax = std::fmax(smax, std::fabs(w.x_slope_at(t) - 0.5 * std::cos(t)));
    }
    // h = 0.05: cubic Hermite error ~ h^4/384 * |x''''| ~ 8e-9 here.
    CHECK(emax < 5e-8);
    CHECK(vmax < 5e-8);
    CHECK(smax < 5e-6);  // slope loses one order
}

TEST_CASE("worldline finite-difference slopes are serviceable") {
    const Worldline w = sine_worldline(0.0, 6.0, 301, false);
    double vmax = 0.0;
    for (int k = 0; k <= 500; ++k) {
        const double t = 0.1 + 5.8 * k / 500.0;
        vmax = std::fmax(vmax, std::fabs(w.v_at(t) - 0.5 * std::cos(t)));
    }
    CHECK(vmax < 1e-6);
}

TEST_CASE("worldline validation") {
    std::vector<double> tau{0, 1}, t{0, 1}, x{0, 0.1}, v{0.1, 0.1}, a{0, 0};
    CHECK_NOTHROW(Worldline(tau, t, x, v, a));
    CHECK_THROWS_AS(Worldline({0}, {0}, {0}, {0}, {0}), Error);              // too short
    CHECK_THROWS_AS(Worldline(tau, {0, 0}, x, v, a), Error);                 // t not increasing
    CHECK_THROWS_AS(Worldline(tau, t, x, {0.1, 1.0}, a), Error);             // |v| >= 1
    CHECK_THROWS_AS(Worldline(tau, t, {0}, v, a), Error);                    // ragged
    const Worldline w(tau, t, x, v, a);
    CHECK_THROWS_AS(w.x_at(1.5), LagOutOfSpan);
    CHECK_THROWS_AS(w.x_at(-0.5), LagOutOfSpan);
    CHECK(w.covers(0.5));
    CHECK_FALSE(w.covers(1.5));
}

namespace {

template <std::size_t N, class RHS>
std::array<double, N> run_ode(RHS&& f, std::array<double, N> y0, double t0, double t1,
                              std::vector<OdeStep<N>>* steps = nullptr, double rtol = 1e-10,
                              double atol = 1e-12) {
    OdeOptions opt;
    opt.rel_tol = rtol;
    opt.abs_tol = atol;
    std::array<double, N> out = y0;
    integrate_ode<N>(
        f, y0, t0, t1, opt, [&](const OdeStep<N>& st) {
            out = st.y1;
            if (steps) steps->push_back(st);
        });
    return out;
}

}  // namespace

TEST_CASE("integrator: exponential growth forward and backward") {
    const auto f = [](double, const std::array<double, 1>& y, std::array<double, 1>& dy) {
        dy[0] = y[0];
        return true;
    };
    std::vector<OdeStep<1>> steps;
    const auto fwd = run_ode<1>(f, {1.0}, 0.0, 1.0, &steps);
    CHECK(fwd[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-10));
    CHECK(steps.size() < 200);

    const auto back = run_ode<1>(f, {1.0}, 0.0, -1.0);
    CHECK(back[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-10));
}

TEST_CASE("integrator: dense output hits endpoints exactly and interior to tolerance") {
    const auto f = [](double, const std::array<double, 1>& y, std::array<double, 1>& dy) {
        dy[0] = y[0];
        return true;
    };
    std::vector<OdeStep<1>> steps;
    run_ode<1>(f, {1.0}, 0.0, 1.0, &steps);
    double emax = 0.0, dmax = 0.0;
    for (const auto& st : steps) {
        CHECK(st.eval(0.0)[0] == st.y0[0]);
        CHECK(st.eval(1.0)[0] == st.y1[0]);
        for (const double th : {0.2, 0.5, 0.8}) {
            const double u = st.eval(th)[0];
            const double exact = std::exp(st.tau0 + th * st.h);
            emax = std::fmax(emax, std::fabs(u - exact) / exact);
            dmax = std::fmax(dmax, std::fabs(st.eval_derivative(th)[0] - u) / u);
        }
    }
    CHECK(emax < 1e-9);
    CHECK(dmax < 1e-6);
}

TEST_CASE("integrator: oscillator phase accuracy over many periods") {
    const auto f = [](double, const std::array<double, 2>& y, std::array<double, 2>& dy) {
        dy[0] = y[1];
        dy[1] = -y[0];
        return true;
    };
    const double T = 20.0 * M_PI;
    const auto y = run_ode<2>(f, {1.0, 0.0}, 0.0, T);
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(y[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-8));
}

TEST_CASE("integrator: domain rejection leads to step underflow at the wall") {
    const auto f = [](double, const std::array<double, 1>& y, std::array<double, 1>& dy) {
        if (y[0] <= 0.25) return false;
        dy[0] = -1.0;
        return true;
    };
    CHECK_THROWS_AS(run_ode<1>(f, {0.5}, 0.0, 1.0), StepSizeUnderflow);

    const auto g = [](double, const std::array<double, 1>& y, std::array<double, 1>& dy) {
        if (y[0] <= 0.25) return false;
        dy[0] = -1.0;
        return true;
    };
    // Horizon inside the domain: must succeed and stay accurate.
    const auto y = run_ode<1>(g, {0.5}, 0.0, 0.2);
    CHECK(y[0] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("integrator: initial state outside domain") {
    const auto f = [](double, const std::array<double, 1>&, std::array<double, 1>&) {
        return false;
    };
    CHECK_THROWS_AS(run_ode<1>(f, {1.0}, 0.0, 1.0), DomainError);
}
