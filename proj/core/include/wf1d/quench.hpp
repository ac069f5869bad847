#pragma once
// Self-consistency loop: measure the mismatch between the two particle-2
// reconstructions and drive the ghost-series coefficients down the gradient,
// with continuation in r_c.

#include <functional>
#include <vector>

#include "wf1d/matching.hpp"
#include "wf1d/series.hpp"

namespace wf1d {

struct QuenchConfig {
    int grid_size = 64;      // comparison abscissae (>= 16)
    double grid_span = 0.6;  // fraction of the overlapping x2-range compared
    double fd_step = 1e-5;   // finite-difference step scale
    double step0 = 0.1;      // initial descent step
    double shrink = 0.5;     // backtracking factor, in (0, 1)
    double grow = 2.0;       // step growth on success, > 1
    double A_tol = 1e-6;     // convergence target for the deviation
    int max_iters = 8000;
    // The reconstructions agree asymptotically for any F with F(inf) = 1, so
    // the comparison is restricted to the turning region |t| <= factor * r_c;
    // without the window the grid would dilute the mismatch that matters.
    double t_window_factor = 5.0;
    // Descend in the scaled coefficients k_n / r_c^(n-1). This is the same
    // gradient flow written in per-coefficient units; without it the raw
    // components differ by many orders of magnitude and the common step size
    // crawls. Disable to recover the raw-coefficient flow.
    bool precondition = true;

    void validate() const;
};

enum class QuenchStatus { Converged, Stalled, MaxIters };

struct QuenchLogEntry {
    int iter = 0;
    double deviation = 0.0;
    double step = 0.0;
    double grad_norm = 0.0;
    int n_coeffs = 0;
};

// Called after every accepted descent step (and once for the seed) with the
// current series, so callers can append to a log and checkpoint the series.
using QuenchLogger = std::function<void(const QuenchLogEntry&, const GhostSeries&)>;

struct QuenchResult {
    OrbitSolution orbit;  // best orbit found; orbit.deviation holds its A
    QuenchStatus status = QuenchStatus::Converged;
    int iterations = 0;
    double wall_time = 0.0;  // seconds
};

struct GradientResult {
    std::vector<double> dA_dk;    // one entry per series coefficient
    std::vector<bool> available;  // false where differencing left the domain
    double A0 = 0.0;              // deviation at the base point
};

struct ScalingReport {
    double lambda = 1.0;    // best scale with scale_series(F_a, lambda) ~ F_b
    double w = 0.0;         // equivalent boost speed, lambda = (1+w)/(1-w)
    double residual = 0.0;  // relative coefficient mismatch after scaling
};

struct GeneralizedResult {
    QuenchResult quench;
    ScalingReport scaling;
};

struct ContinuationStage {
    double r_c = 0.0;
    QuenchResult result;
    int n_significant = 0;
};

// RMS time gap between the two particle-2 reconstructions, compared on a
// common position grid over the turning region. Each reconstruction
// contributes its outgoing branch (position monotone from the turn to the
// window edge); grid times are found by inverting the dense interpolants.
double deviation(const OrbitSolution& orbit, const QuenchConfig& qcfg);

// Central finite-difference estimate of dA/dk_n in raw coefficient space,
// with per-coefficient step fd_step * max(1, |k_n|). A perturbation leaving
// the F > 0 domain falls back to one-sided differencing; if both sides fail
// the component is flagged unavailable.
GradientResult gradient(const GhostSeries& series, const SolveConfig& cfg,
                        const QuenchConfig& qcfg);

// Backtracking steepest descent from the seed (k0 held fixed). The seed is
// zero-extended to the cold-start length for cfg.r_c, never truncated.
// Throws NoDescentDirection if backtracking underflows while A > A_tol.
QuenchResult quench(const GhostSeries& seed, const SolveConfig& cfg,
                    const QuenchConfig& qcfg, const QuenchLogger& log = {});

// Runs quench along a strictly decreasing r_c schedule, seeding each stage
// with the previous converged series (trailing coefficients below the
// significance threshold dropped). Throws StageFailed on the first stage
// that errors or stops above A_tol.
std::vector<ContinuationStage> continuation(const std::vector<double>& schedule,
                                            SolveConfig cfg, const QuenchConfig& qcfg,
                                            const QuenchLogger& log = {});

// Joint quench of two independent series (k0 free on both) from generalized
// anchors cfg.r_a0 / cfg.r_b0; afterwards fits the scale relating the pair.
GeneralizedResult generalized_quench(const GhostSeries& seed_a, const GhostSeries& seed_b,
                                     const SolveConfig& cfg, const QuenchConfig& qcfg,
                                     const QuenchLogger& log = {});

// Best lambda relating two series by the two-particle scaling map, with the
// relative coefficient mismatch at the optimum.
ScalingReport fit_series_scaling(const GhostSeries& a, const GhostSeries& b);

// Largest n with |k_n| at or above the significance threshold.
int significant_terms(const GhostSeries& s, double threshold = 1e-12);

// Cold-start series length for a given r_c (grows as r_c shrinks).
int default_terms(double r_c);

}  // namespace wf1d
