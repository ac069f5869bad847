#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <vector>

#include "wf1d/ode.hpp"
#include "wf1d/series.hpp"
#include "wf1d/worldline.hpp"

namespace wf1d {

// Reduced two-body system in the frame where particle 1 turns at tau = 0.
// State layout: the three dynamical variables (r_a, r_b, Phi), the lab
// coordinates of particle 1 integrated three ways (primary rapidity form plus
// the two foliation routes, kept separate to measure their agreement), and the
// particle-2 coordinates in both foliations.
enum StateIndex : std::size_t {
    iRa = 0,
    iRb,
    iPhi,
    iT1,
    iX1,
    iT1A,
    iX1A,
    iT1B,
    iX1B,
    iT2a,
    iX2a,
    iT2b,
    iX2b,
    NSTATE
};

using MatchingState = std::array<double, NSTATE>;

enum class OrbitMode { Symmetric, Generalized };

struct SolveConfig {
    double r_c = 50.0;
    double tau_max = 0.0;  // 0: 40 * r_c
    double abs_tol = 1e-12;
    double rel_tol = 1e-10;
    double max_step = 0.0;  // 0: uncapped
    OrbitMode mode = OrbitMode::Symmetric;
    // Generalized-mode light-cone anchors at tau = 0 (0 means r_c). Symmetric
    // mode forces both to r_c.
    double r_a0 = 0.0;
    double r_b0 = 0.0;
    // Integrate an explicit backward leg in symmetric mode and record the
    // genuine time-reversal defect (the tau < 0 data itself always comes from
    // the exact reversal map). Costs one extra integration.
    bool time_reversal_check = false;

    double horizon() const { return tau_max > 0.0 ? tau_max : 40.0 * r_c; }
    double anchor_a() const { return r_a0 > 0.0 ? r_a0 : r_c; }
    double anchor_b() const { return r_b0 > 0.0 ? r_b0 : r_c; }
    void validate() const;  // throws Error on out-of-contract fields
};

struct BranchLabels {
    double s_a = 0.0;  // ln F_a(r_a) - 2*Phi
    double s_b = 0.0;  // 2*Phi + ln F_b(r_b)
};

// d/dtau of all driven coordinates, in the sinh(s)-cancelled closed forms.
struct CoordinateRates {
    double dt1, dx1;          // cosh(Phi), sinh(Phi)
    double dt1A, dx1A;        // same values built from the foliation-a labels
    double dt1B, dx1B;        // ... and from the foliation-b labels
    double dt2a, dx2a;        // particle 2, advanced-cone parametrization
    double dt2b, dx2b;        // particle 2, retarded-cone parametrization
};

// Right-hand side for the integrator; returns false when the state has left
// the physical domain (r <= 0 or F <= 0), which makes the controller retry
// with a smaller step.
bool rhs_raw(const MatchingState& y, MatchingState& dy, const GhostSeries& F_a,
             const GhostSeries& F_b) noexcept;

// Throwing wrapper (DomainError) for callers outside the integrator loop.
MatchingState rhs(const MatchingState& y, const GhostSeries& F_a, const GhostSeries& F_b);

BranchLabels s_values(const MatchingState& y, const GhostSeries& F_a, const GhostSeries& F_b);

CoordinateRates reconstruct_derivatives(const MatchingState& y, const BranchLabels& labels,
                                        const GhostSeries& F_a, const GhostSeries& F_b);

// Worst-case defects over all accepted steps of a solve. The first three are
// algebraic identities of the cancelled forms and sit at rounding level; the
// others scale with integrator tolerance.
struct OrbitDiagnostics {
    double paralelism = 0.0;       // |exp(s_a + s_b)/(F_a F_b) - 1|
    double normalization = 0.0;    // |(dt1)^2 - (dx1)^2 - 1| over all three routes
    double foliation_gap = 0.0;    // max(|t1A - t1B|, |x1A - x1B|)
    double lightcone_closure = 0.0;  // |x1 - x2 - r| and |t2 - (t1 +/- r)|, / r_c
    double time_reversal = -1.0;   // explicit-leg defect; -1 when not measured
    double v_inf_fit_residual = 0.0;
    bool v_inf_ok = false;
};

// Per-accepted-step scalars of the forward leg (tau >= 0), used by the
// asymptotic fit, the minimal-distance search and the potentials table.
struct OrbitNodes {
    std::vector<double> tau, r_a, r_b, phi, s_a, s_b;
};

struct OrbitSolution {
    GhostSeries series_a, series_b;  // identical in symmetric mode
    OrbitMode mode = OrbitMode::Symmetric;
    double r_c = 0.0;
    double tau_max = 0.0;

    // Dense worldlines over the full two-sided history.
    Worldline p1, p2a, p2b;
    // Forward-leg-only reconstructions (tau >= 0); in symmetric mode these are
    // the two independent datasets whose mismatch the quench minimizes (the
    // full p2a/p2b above share their tau < 0 half by the reversal map).
    Worldline p2a_fwd, p2b_fwd;

    double r_o = 0.0;       // minimal light-cone distance over the orbit
    double r_o_s = 0.0;     // light-cone distance at the s = 0 crossing
    double v_inf = 0.0;     // asymptotic speed (fit; end-value fallback if !v_inf_ok)
    double deviation = std::numeric_limits<double>::quiet_NaN();  // filled by the quench
    double anchor_offset = 0.0;  // delta: x2(t) = -x1(t) + 2*delta in symmetric mode

    OrbitDiagnostics diag;
    OrbitNodes nodes;        // forward-leg accepted-step endpoints
    OrbitNodes nodes_back;   // backward-leg endpoints (generalized mode only)
    std::vector<OdeStep<NSTATE>> steps_fwd;  // dense accepted steps, tau >= 0

    // Dense state at any |tau| <= tau_max (tau < 0 via the reversal map in
    // symmetric mode; generalized mode stores the backward leg explicitly).
    MatchingState state_at(double tau) const;

    std::vector<OdeStep<NSTATE>> steps_back;  // generalized mode / reversal check
};

// Integrate from the turning point (Phi = 0) to +/- the horizon and assemble
// dense worldlines of both particles in both foliations.
OrbitSolution integrate_orbit(const SolveConfig& cfg, const GhostSeries& F_a,
                              const GhostSeries& F_b);
inline OrbitSolution integrate_orbit(const SolveConfig& cfg, const GhostSeries& F) {
    return integrate_orbit(cfg, F, F);
}

// tanh of Phi(tau -> inf) from the 1/tau fit over the final decade of tau.
// Throws HorizonTooShort when the fit residual exceeds 1e-4.
double asymptotic_velocity(const OrbitSolution& orbit);

struct MinimalDistance {
    double r_min = 0.0;         // min over tau of min(r_a, r_b), refined
    double r_at_s_zero = 0.0;   // r at the s = 0 crossing (equals r_min in exact arithmetic)
};

MinimalDistance minimal_lightcone_distance(const OrbitSolution& orbit);

// Initial state shared by both legs: particle 1 anchored per mode, particle 2
// placed on the advanced/retarded cones at distance r_a0 / r_b0.
MatchingState initial_state(const SolveConfig& cfg);

// Exact time-reversal map of a symmetric-mode state (a <-> b, signs flipped).
MatchingState mirror_state(const MatchingState& y);

}  // namespace wf1d
