#include "wf1d/matching.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "wf1d/errors.hpp"

namespace wf1d {

void SolveConfig::validate() const {
    if (!(r_c > 0.0) || !std::isfinite(r_c)) throw Error("SolveConfig: r_c must be positive");
    if (tau_max < 0.0 || !std::isfinite(tau_max)) throw Error("SolveConfig: bad tau_max");
    const auto tol_ok = [](double t) { return t > 0.0 && t <= 1e-3; };
    if (!tol_ok(rel_tol) || !tol_ok(abs_tol))
        throw Error("SolveConfig: tolerances must lie in (0, 1e-3]");
    if (max_step < 0.0) throw Error("SolveConfig: max_step must be >= 0");
    if (r_a0 < 0.0 || r_b0 < 0.0) throw Error("SolveConfig: anchors must be > 0 (or 0 for r_c)");
    if (mode == OrbitMode::Symmetric && anchor_a() != anchor_b())
        throw Error("SolveConfig: symmetric mode requires r_a0 = r_b0 = r_c");
}

namespace {

// Everything the right-hand side and the diagnostics need from one state.
struct Rates {
    double Fa = 0.0, Fb = 0.0;
    double dra = 0.0, drb = 0.0, dphi = 0.0;
    double s_a = 0.0, s_b = 0.0;
    CoordinateRates c{};
    bool ok = false;
};

Rates eval_rates(const MatchingState& y, const GhostSeries& A, const GhostSeries& B) noexcept {
    Rates out;
    const double ra = y[iRa], rb = y[iRb], phi = y[iPhi];
    if (!(ra > 0.0) || !(rb > 0.0)) return out;
    const double Fa = eval_F_raw(A, ra), Fb = eval_F_raw(B, rb);
    if (!(Fa > 0.0) || !(Fb > 0.0)) return out;  // also rejects NaN

    const double p = std::exp(phi), q = 1.0 / p;
    const double Fa2 = Fa * Fa, Fb2 = Fb * Fb;
    const double p3 = p * p * p, q3 = q * q * q;

    out.Fa = Fa;
    out.Fb = Fb;
    out.dra = -0.5 * (q - p3 / Fa2);
    out.drb = 0.5 * (p - q3 / Fb2);
    out.dphi = 0.5 * (p * p / (ra * ra * Fa2) + q * q / (rb * rb * Fb2));
    out.s_a = std::log(Fa) - 2.0 * phi;
    out.s_b = 2.0 * phi + std::log(Fb);

    out.c.dt1 = 0.5 * (p + q);
    out.c.dx1 = 0.5 * (p - q);
    // The same two values assembled from each foliation's labels. The sinh(s)
    // factors of the raw differentials cancel against dr/dtau analytically;
    // only the cancelled products below are ever evaluated.
    const double sqa = std::sqrt(Fa), sqb = std::sqrt(Fb);
    const double ua = sqa * std::exp(-0.5 * out.s_a);
    const double va = std::exp(0.5 * out.s_a) / sqa;
    const double ub = std::exp(0.5 * out.s_b) / sqb;
    const double vb = sqb * std::exp(-0.5 * out.s_b);
    out.c.dt1A = 0.5 * (ua + va);
    out.c.dx1A = 0.5 * (ua - va);
    out.c.dt1B = 0.5 * (ub + vb);
    out.c.dx1B = 0.5 * (ub - vb);

    out.c.dt2a = 0.5 * (p + p3 / Fa2);
    out.c.dx2a = 0.5 * (p - p3 / Fa2);
    out.c.dt2b = 0.5 * (q + q3 / Fb2);
    out.c.dx2b = 0.5 * (q3 / Fb2 - q);

    out.ok = std::isfinite(out.dra) && std::isfinite(out.drb) && std::isfinite(out.dphi) &&
             std::isfinite(out.c.dt1A) && std::isfinite(out.c.dt1B);
    return out;
}

}  // namespace

bool rhs_raw(const MatchingState& y, MatchingState& dy, const GhostSeries& F_a,
             const GhostSeries& F_b) noexcept {
    const Rates r = eval_rates(y, F_a, F_b);
    if (!r.ok) return false;
    dy[iRa] = r.dra;
    dy[iRb] = r.drb;
    dy[iPhi] = r.dphi;
    dy[iT1] = r.c.dt1;
    dy[iX1] = r.c.dx1;
    dy[iT1A] = r.c.dt1A;
    dy[iX1A] = r.c.dx1A;
    dy[iT1B] = r.c.dt1B;
    dy[iX1B] = r.c.dx1B;
    dy[iT2a] = r.c.dt2a;
    dy[iX2a] = r.c.dx2a;
    dy[iT2b] = r.c.dt2b;
    dy[iX2b] = r.c.dx2b;
    return true;
}

MatchingState rhs(const MatchingState& y, const GhostSeries& F_a, const GhostSeries& F_b) {
    MatchingState dy;
    if (!rhs_raw(y, dy, F_a, F_b))
        throw DomainError("state outside the physical domain (r <= 0 or F <= 0)");
    return dy;
}

BranchLabels s_values(const MatchingState& y, const GhostSeries& F_a, const GhostSeries& F_b) {
    const Rates r = eval_rates(y, F_a, F_b);
    if (!r.ok) throw DomainError("state outside the physical domain (r <= 0 or F <= 0)");
    return BranchLabels{r.s_a, r.s_b};
}

CoordinateRates reconstruct_derivatives(const MatchingState& y, const BranchLabels&,
                                        const GhostSeries& F_a, const GhostSeries& F_b) {
    const Rates r = eval_rates(y, F_a, F_b);
    if (!r.ok) throw DomainError("state outside the physical domain (r <= 0 or F <= 0)");
    return r.c;
}

MatchingState initial_state(const SolveConfig& cfg) {
    MatchingState y{};
    const double ra0 = cfg.anchor_a(), rb0 = cfg.anchor_b();
    const double x1 = cfg.mode == OrbitMode::Symmetric ? 0.5 * cfg.r_c : 0.0;
    y[iRa] = ra0;
    y[iRb] = rb0;
    y[iPhi] = 0.0;
    y[iT1] = 0.0;
    y[iX1] = x1;
    y[iT1A] = 0.0;
    y[iX1A] = x1;
    y[iT1B] = 0.0;
    y[iX1B] = x1;
    y[iT2a] = ra0;       // advanced point (t, x) = (r_a0, x1 - r_a0)
    y[iX2a] = x1 - ra0;
    y[iT2b] = -rb0;      // retarded point (t, x) = (-r_b0, x1 - r_b0)
    y[iX2b] = x1 - rb0;
    return y;
}

MatchingState mirror_state(const MatchingState& y) {
    MatchingState m{};
    m[iRa] = y[iRb];
    m[iRb] = y[iRa];
    m[iPhi] = -y[iPhi];
    m[iT1] = -y[iT1];
    m[iX1] = y[iX1];
    m[iT1A] = -y[iT1B];  // time reversal exchanges the foliations
    m[iX1A] = y[iX1B];
    m[iT1B] = -y[iT1A];
    m[iX1B] = y[iX1A];
    m[iT2a] = -y[iT2b];
    m[iX2a] = y[iX2b];
    m[iT2b] = -y[iT2a];
    m[iX2b] = y[iX2a];
    return m;
}

namespace {

struct Columns {
    std::vector<double> tau, t, x, v, a;
    void reserve(std::size_t n) {
        tau.reserve(n);
        t.reserve(n);
        x.reserve(n);
        v.reserve(n);
        a.reserve(n);
    }
    void push(double tau_, double t_, double x_, double v_, double a_) {
        tau.push_back(tau_);
        t.push_back(t_);
        x.push_back(x_);
        v.push_back(v_);
        a.push_back(a_);
    }
    std::size_t size() const { return tau.size(); }
};

struct LegData {
    std::vector<OdeStep<NSTATE>> steps;
    OrbitNodes nodes;           // accepted-step endpoints (incl. tau = 0 when asked)
    Columns w1, w2a, w2b;       // subdivided dense nodes
    OrbitDiagnostics diag;      // identity diagnostics only
};

// Materialize one worldline node per particle from a dense state. Velocities
// and accelerations come from the state through the rapidity relations, not
// from differentiating the interpolant, so node data is as accurate as the
// state itself.
void push_node(double tau, const MatchingState& y, const GhostSeries& A, const GhostSeries& B,
               LegData& L) {
    double Fa, dFa, Fb, dFb;
    eval_F_dF(A, y[iRa], Fa, dFa);
    eval_F_dF(B, y[iRb], Fb, dFb);
    const double phi = y[iPhi];
    const double p = std::exp(phi), q = 1.0 / p;
    const double Fa2 = Fa * Fa, Fb2 = Fb * Fb;
    const double p3 = p * p * p, q3 = q * q * q;
    const double dra = -0.5 * (q - p3 / Fa2);
    const double drb = 0.5 * (p - q3 / Fb2);
    const double dphi =
        0.5 * (p * p / (y[iRa] * y[iRa] * Fa2) + q * q / (y[iRb] * y[iRb] * Fb2));
    const double dt2a = 0.5 * (p + p3 / Fa2);
    const double dt2b = 0.5 * (q + q3 / Fb2);

    const double ch1 = std::cosh(phi);
    L.w1.push(tau, y[iT1], y[iX1], std::tanh(phi), dphi / (ch1 * ch1 * ch1));

    const double phi2a = std::log(Fa) - phi;           // rapidity of particle 2, foliation a
    const double dphi2a = (dFa / Fa) * dra - dphi;
    const double ch2a = std::cosh(phi2a);
    L.w2a.push(tau, y[iT2a], y[iX2a], std::tanh(phi2a), dphi2a / (ch2a * ch2a) / dt2a);

    const double phi2b = -phi - std::log(Fb);          // rapidity of particle 2, foliation b
    const double dphi2b = -dphi - (dFb / Fb) * drb;
    const double ch2b = std::cosh(phi2b);
    L.w2b.push(tau, y[iT2b], y[iX2b], std::tanh(phi2b), dphi2b / (ch2b * ch2b) / dt2b);
}

void update_identity_diag(const MatchingState& y, const GhostSeries& A, const GhostSeries& B,
                          double r_c, OrbitDiagnostics& d) {
    const Rates r = eval_rates(y, A, B);
    if (!r.ok) return;
    d.paralelism =
        std::fmax(d.paralelism, std::fabs(std::exp(r.s_a + r.s_b) / (r.Fa * r.Fb) - 1.0));
    double nrm = std::fabs(r.c.dt1 * r.c.dt1 - r.c.dx1 * r.c.dx1 - 1.0);
    nrm = std::fmax(nrm, std::fabs(r.c.dt1A * r.c.dt1A - r.c.dx1A * r.c.dx1A - 1.0));
    nrm = std::fmax(nrm, std::fabs(r.c.dt1B * r.c.dt1B - r.c.dx1B * r.c.dx1B - 1.0));
    d.normalization = std::fmax(d.normalization, nrm);
    d.foliation_gap = std::fmax(
        d.foliation_gap,
        std::fmax(std::fabs(y[iT1A] - y[iT1B]), std::fabs(y[iX1A] - y[iX1B])));
    double clo = std::fabs(y[iX1] - y[iX2a] - y[iRa]);
    clo = std::fmax(clo, std::fabs(y[iT2a] - y[iT1] - y[iRa]));
    clo = std::fmax(clo, std::fabs(y[iX1] - y[iX2b] - y[iRb]));
    clo = std::fmax(clo, std::fabs(y[iT1] - y[iT2b] - y[iRb]));
    d.lightcone_closure = std::fmax(d.lightcone_closure, clo / r_c);
}

void push_endpoint_scalars(double tau, const MatchingState& y, const GhostSeries& A,
                           const GhostSeries& B, OrbitNodes& n) {
    const Rates r = eval_rates(y, A, B);
    n.tau.push_back(tau);
    n.r_a.push_back(y[iRa]);
    n.r_b.push_back(y[iRb]);
    n.phi.push_back(y[iPhi]);
    n.s_a.push_back(r.s_a);
    n.s_b.push_back(r.s_b);
}

// Integrate one contiguous span and append its accepted steps and nodes.
void extend_leg(LegData& L, const SolveConfig& cfg, const GhostSeries& A,
                const GhostSeries& B, const MatchingState& y_from, double tau_from,
                double tau_to) {
    OdeOptions opt;
    opt.rel_tol = cfg.rel_tol;
    opt.abs_tol = cfg.abs_tol;
    opt.max_step = cfg.max_step;

    const auto f = [&](double, const MatchingState& y, MatchingState& dy) {
        return rhs_raw(y, dy, A, B);
    };
    integrate_ode<NSTATE>(
        f, y_from, tau_from, tau_to, opt, [&](const OdeStep<NSTATE>& st) {
            L.steps.push_back(st);
            for (const double th : {0.25, 0.5, 0.75, 1.0}) {
                const MatchingState yn = st.eval(th);
                push_node(st.tau0 + th * st.h, yn, A, B, L);
            }
            push_endpoint_scalars(st.tau0 + st.h, st.y1, A, B, L.nodes);
            update_identity_diag(st.y1, A, B, cfg.r_c, L.diag);
        });
}

double leg_end(const LegData& L) {
    return L.steps.back().tau0 + L.steps.back().h;
}

LegData run_leg(const SolveConfig& cfg, const GhostSeries& A, const GhostSeries& B,
                double tau_end, bool include_initial) {
    LegData L;
    const MatchingState y0 = initial_state(cfg);
    if (include_initial) {
        push_node(0.0, y0, A, B, L);
        push_endpoint_scalars(0.0, y0, A, B, L.nodes);
        update_identity_diag(y0, A, B, cfg.r_c, L.diag);
    }
    extend_leg(L, cfg, A, B, y0, 0.0, tau_end);
    return L;
}

// Dense state lookup over one leg's accepted steps (either direction).
MatchingState eval_steps(const std::vector<OdeStep<NSTATE>>& steps, double tau) {
    if (steps.empty()) throw LagOutOfSpan("orbit has no integrated steps");
    const double dir = steps.front().h > 0.0 ? 1.0 : -1.0;
    const double u = dir * tau;
    const double u_end = dir * (steps.back().tau0 + steps.back().h);
    if (u < -1e-12 || u > u_end * (1.0 + 1e-12) + 1e-12)
        throw LagOutOfSpan("tau outside the integrated horizon");
    // Binary search for the last step whose start is <= tau (in direction u).
    std::size_t lo = 0, hi = steps.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        if (dir * steps[mid].tau0 <= u)
            lo = mid;
        else
            hi = mid - 1;
    }
    const OdeStep<NSTATE>& st = steps[lo];
    double theta = (tau - st.tau0) / st.h;
    theta = std::fmin(1.0, std::fmax(0.0, theta));
    return st.eval(theta);
}

Worldline make_worldline(const Columns& c) {
    return Worldline(c.tau, c.t, c.x, c.v, c.a);
}

// Mirror image of forward-leg columns under time reversal: node i of the
// source becomes a node at (-tau, -t, x, -v, a), emitted in increasing-t
// order, excluding the tau = 0 node (owned by the direct half).
Columns mirror_columns(const Columns& src) {
    Columns out;
    const std::size_t n = src.size();
    out.reserve(n);
    for (std::size_t k = n; k-- > 1;)
        out.push(-src.tau[k], -src.t[k], src.x[k], -src.v[k], src.a[k]);
    return out;
}

Columns concat(Columns left, const Columns& right) {
    left.tau.insert(left.tau.end(), right.tau.begin(), right.tau.end());
    left.t.insert(left.t.end(), right.t.begin(), right.t.end());
    left.x.insert(left.x.end(), right.x.begin(), right.x.end());
    left.v.insert(left.v.end(), right.v.begin(), right.v.end());
    left.a.insert(left.a.end(), right.a.begin(), right.a.end());
    return left;
}

// Backward-leg columns arrive in integration order (tau decreasing); flip to
// increasing order and drop nothing (the tau = 0 node lives in the other leg).
Columns reversed(const Columns& src) {
    Columns out;
    out.reserve(src.size());
    for (std::size_t k = src.size(); k-- > 0;)
        out.push(src.tau[k], src.t[k], src.x[k], src.v[k], src.a[k]);
    return out;
}

struct TailFit {
    double phi_inf = 0.0, amplitude = 0.0, rms = 0.0;
    bool ok = false;
};

// Least-squares fit phi(tau) = phi_inf - amplitude/tau over tau >= tau_max/10.
TailFit fit_phi_tail(const OrbitNodes& nodes, double tau_max) {
    TailFit fit;
    const double tau_lo = 0.1 * tau_max;
    double s00 = 0, s01 = 0, s11 = 0, b0 = 0, b1 = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < nodes.tau.size(); ++i) {
        const double tau = nodes.tau[i];
        if (tau < tau_lo) continue;
        const double g = -1.0 / tau;  // basis {1, -1/tau}
        s00 += 1.0;
        s01 += g;
        s11 += g * g;
        b0 += nodes.phi[i];
        b1 += nodes.phi[i] * g;
        ++n;
    }
    if (n < 8) return fit;
    const double det = s00 * s11 - s01 * s01;
    if (std::fabs(det) < 1e-300) return fit;
    fit.phi_inf = (b0 * s11 - b1 * s01) / det;
    fit.amplitude = (s00 * b1 - s01 * b0) / det;
    double ss = 0.0;
    for (std::size_t i = 0; i < nodes.tau.size(); ++i) {
        const double tau = nodes.tau[i];
        if (tau < tau_lo) continue;
        const double res = nodes.phi[i] - (fit.phi_inf - fit.amplitude / tau);
        ss += res * res;
    }
    fit.rms = std::sqrt(ss / static_cast<double>(n));
    fit.ok = fit.rms <= 1e-4;
    return fit;
}

}  // namespace

OrbitSolution integrate_orbit(const SolveConfig& cfg, const GhostSeries& F_a,
                              const GhostSeries& F_b) {
    cfg.validate();
    if (cfg.mode == OrbitMode::Symmetric &&
        (F_a.k0 != F_b.k0 || F_a.coeffs != F_b.coeffs))
        throw Error("symmetric mode requires one shared series");

    OrbitSolution sol;
    sol.series_a = F_a;
    sol.series_b = F_b;
    sol.mode = cfg.mode;
    sol.r_c = cfg.r_c;

    double tau_end = cfg.horizon();
    LegData fwd = run_leg(cfg, F_a, F_b, tau_end, true);
    if (cfg.tau_max == 0.0) {
        // Auto horizon: the default 40*r_c undershoots the asymptotic regime
        // at low energies (slow escape means r grows slowly in proper time).
        // Extend by doubling until the far zone is reached and the rapidity
        // tail is clean, so the velocity fit below has a valid window.
        const double cap = 400.0 * cfg.r_c;
        while (tau_end < cap) {
            const bool far_enough = fwd.nodes.r_a.back() >= 20.0 * cfg.r_c &&
                                    fwd.nodes.r_b.back() >= 20.0 * cfg.r_c;
            const TailFit probe = fit_phi_tail(fwd.nodes, tau_end);
            if (far_enough && probe.rms <= 5e-5) break;
            const double next = std::fmin(cap, 2.0 * tau_end);
            extend_leg(fwd, cfg, F_a, F_b, fwd.steps.back().y1, leg_end(fwd), next);
            tau_end = next;
        }
    }
    sol.tau_max = tau_end;
    sol.diag = fwd.diag;

    const bool explicit_back = cfg.mode == OrbitMode::Generalized || cfg.time_reversal_check;
    LegData back;
    if (explicit_back) {
        back = run_leg(cfg, F_a, F_b, -sol.tau_max, false);
        sol.diag.paralelism = std::fmax(sol.diag.paralelism, back.diag.paralelism);
        sol.diag.normalization = std::fmax(sol.diag.normalization, back.diag.normalization);
        sol.diag.foliation_gap = std::fmax(sol.diag.foliation_gap, back.diag.foliation_gap);
        sol.diag.lightcone_closure =
            std::fmax(sol.diag.lightcone_closure, back.diag.lightcone_closure);
    }

    if (cfg.mode == OrbitMode::Symmetric) {
        // tau < 0 from the exact reversal map; the foliations swap roles.
        sol.p1 = make_worldline(concat(mirror_columns(fwd.w1), fwd.w1));
        sol.p2a = make_worldline(concat(mirror_columns(fwd.w2b), fwd.w2a));
        sol.p2b = make_worldline(concat(mirror_columns(fwd.w2a), fwd.w2b));
        if (cfg.time_reversal_check) {
            // Genuine integrator-symmetry defect: an explicitly integrated
            // backward leg against the forward leg through the reversal map.
            double defect = 0.0;
            const int n_check = 256;
            for (int k = 1; k <= n_check; ++k) {
                const double tau = sol.tau_max * k / n_check;
                const MatchingState yb = eval_steps(back.steps, -tau);
                const MatchingState yf = eval_steps(fwd.steps, tau);
                defect = std::fmax(defect, std::fabs(yb[iRa] - yf[iRb]));
                defect = std::fmax(defect, std::fabs(yb[iRb] - yf[iRa]));
                defect = std::fmax(defect, std::fabs(yb[iPhi] + yf[iPhi]));
            }
            sol.diag.time_reversal = defect;
        }
    } else {
        sol.p1 = make_worldline(concat(reversed(back.w1), fwd.w1));
        sol.p2a = make_worldline(concat(reversed(back.w2a), fwd.w2a));
        sol.p2b = make_worldline(concat(reversed(back.w2b), fwd.w2b));
        sol.steps_back = std::move(back.steps);
        // Backward-leg endpoint scalars, appended for the minimal-distance scan.
        for (std::size_t i = 0; i < back.nodes.tau.size(); ++i) {
            sol.nodes_back.tau.push_back(back.nodes.tau[i]);
            sol.nodes_back.r_a.push_back(back.nodes.r_a[i]);
            sol.nodes_back.r_b.push_back(back.nodes.r_b[i]);
            sol.nodes_back.phi.push_back(back.nodes.phi[i]);
            sol.nodes_back.s_a.push_back(back.nodes.s_a[i]);
            sol.nodes_back.s_b.push_back(back.nodes.s_b[i]);
        }
    }
    sol.p2a_fwd = make_worldline(fwd.w2a);
    sol.p2b_fwd = make_worldline(fwd.w2b);
    sol.nodes = std::move(fwd.nodes);
    sol.steps_fwd = std::move(fwd.steps);

    const TailFit fit = fit_phi_tail(sol.nodes, sol.tau_max);
    sol.diag.v_inf_fit_residual = fit.rms;
    sol.diag.v_inf_ok = fit.ok;
    sol.v_inf = fit.ok ? std::tanh(fit.phi_inf) : std::tanh(sol.nodes.phi.back());

    const MinimalDistance md = minimal_lightcone_distance(sol);
    sol.r_o = md.r_min;
    sol.r_o_s = md.r_at_s_zero;

    // Midpoint of the pair at the turn, from the anchor state itself: robust
    // for horizons too short for the particle-2 track to reach t = 0.
    const MatchingState y0 = initial_state(cfg);
    sol.anchor_offset = 0.5 * (y0[iX1] + 0.5 * (y0[iX2a] + y0[iX2b]));
    return sol;
}

MatchingState OrbitSolution::state_at(double tau) const {
    if (tau >= 0.0) return eval_steps(steps_fwd, tau);
    if (!steps_back.empty()) return eval_steps(steps_back, tau);
    return mirror_state(eval_steps(steps_fwd, -tau));
}

double asymptotic_velocity(const OrbitSolution& orbit) {
    if (!orbit.diag.v_inf_ok) throw HorizonTooShort(orbit.diag.v_inf_fit_residual);
    return orbit.v_inf;
}

namespace {

// Golden-section minimum of f on [a, b] to ~1e-12 relative width.
template <class F>
double golden_minimize(F&& f, double a, double b) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 120 && (b - a) > 1e-12 * (1.0 + std::fabs(a) + std::fabs(b)); ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

// Bisection root of g on [a, b] with g(a), g(b) of opposite sign.
template <class G>
double bisect_root(G&& g, double a, double b) {
    double ga = g(a);
    for (int it = 0; it < 200 && (b - a) > 1e-14 * (1.0 + std::fabs(a) + std::fabs(b)); ++it) {
        const double m = 0.5 * (a + b);
        const double gm = g(m);
        if ((ga <= 0.0) == (gm <= 0.0)) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

MinimalDistance minimal_lightcone_distance(const OrbitSolution& orbit) {
    MinimalDistance out;
    const auto& nf = orbit.nodes;
    if (nf.tau.empty()) throw Error("orbit carries no node data");

    // Refined minimum of r_b over the forward leg.
    std::size_t jmin = 0;
    for (std::size_t i = 1; i < nf.r_b.size(); ++i)
        if (nf.r_b[i] < nf.r_b[jmin]) jmin = i;
    double r_min = nf.r_b[jmin];
    const auto rb_fwd = [&](double tau) { return eval_steps(orbit.steps_fwd, tau)[iRb]; };
    if (jmin > 0 && jmin + 1 < nf.tau.size()) {
        const double tau_star =
            golden_minimize(rb_fwd, nf.tau[jmin - 1], nf.tau[jmin + 1]);
        r_min = std::fmin(r_min, rb_fwd(tau_star));
    }
    // Forward r_a can only dip below r_c if F(r_c) > 1; scan it too.
    for (std::size_t i = 0; i < nf.r_a.size(); ++i) r_min = std::fmin(r_min, nf.r_a[i]);

    // Explicit backward leg (generalized mode): minimum of r_a there.
    if (!orbit.steps_back.empty() && !orbit.nodes_back.tau.empty()) {
        const auto& nb = orbit.nodes_back;
        std::size_t kmin = 0;
        for (std::size_t i = 1; i < nb.r_a.size(); ++i)
            if (nb.r_a[i] < nb.r_a[kmin]) kmin = i;
        r_min = std::fmin(r_min, nb.r_a[kmin]);
        const auto ra_back = [&](double tau) { return eval_steps(orbit.steps_back, tau)[iRa]; };
        if (kmin > 0 && kmin + 1 < nb.tau.size()) {
            const double tau_star =
                golden_minimize(ra_back, nb.tau[kmin + 1], nb.tau[kmin - 1]);
            r_min = std::fmin(r_min, ra_back(tau_star));
        }
        for (std::size_t i = 0; i < nb.r_b.size(); ++i) r_min = std::fmin(r_min, nb.r_b[i]);
    }
    out.r_min = r_min;

    // Radius at the s = 0 crossing. On the forward leg s_b starts at
    // ln F(r_c) (<= 0 for physical series) and grows; the crossing radius is
    // r_b there. When s_b(0) >= 0 the crossing sits at the turning point.
    const auto s_b_of = [&](double tau) {
        const MatchingState y = eval_steps(orbit.steps_fwd, tau);
        return 2.0 * y[iPhi] + std::log(eval_F_raw(orbit.series_b, y[iRb]));
    };
    if (nf.s_b.front() >= 0.0) {
        out.r_at_s_zero = nf.r_b.front();
    } else {
        std::size_t k = 0;
        while (k + 1 < nf.s_b.size() && nf.s_b[k + 1] < 0.0) ++k;
        if (k + 1 >= nf.s_b.size()) {
            out.r_at_s_zero = nf.r_b.back();  // never crossed: horizon too short
        } else {
            const double tau_star = bisect_root(s_b_of, nf.tau[k], nf.tau[k + 1]);
            out.r_at_s_zero = eval_steps(orbit.steps_fwd, tau_star)[iRb];
        }
    }
    return out;
}

}  // namespace wf1d
