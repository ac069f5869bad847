#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace wf1d {

// Units convention shared by every module: c = 1, m1 = m2 = m = 1, e^2 = 1.
// Lengths are classical electron radii, so all velocities satisfy |v| < 1 and
// the unit of time equals the unit of length.
struct Units {
    static constexpr double c = 1.0;
    static constexpr double m = 1.0;
    static constexpr double e2 = 1.0;
};

// Truncated inverse-power series F(r) = k0 - sum_n k_n / r^n, n = 1..N.
// The single unknown of the matching problem. k0 = 1 in the centre-of-mass
// frame (F -> 1 at infinity); generalized solves free it. The series is only
// trusted for r >= r_min_valid, where it must stay strictly positive.
struct GhostSeries {
    double k0 = 1.0;
    std::vector<double> coeffs;   // k1..kN, N <= max_terms
    double r_min_valid = 0.5;

    static constexpr std::size_t max_terms = 18;
};

// F(r). Throws NonPositiveRadius (r <= 0) or NonPositiveF (result <= 0): a
// non-positive value means the quench stepped into an unphysical series.
double eval_F(const GhostSeries& s, double r);

// F(r) without the domain throws; returns the raw value (possibly <= 0) and
// NaN for r <= 0. Hot path for the integrator, which rejects the step itself.
double eval_F_raw(const GhostSeries& s, double r) noexcept;

// dF/dr = sum_n n k_n / r^(n+1).
double eval_dF(const GhostSeries& s, double r);

// Both at once (one pass over the coefficients).
void eval_F_dF(const GhostSeries& s, double r, double& F, double& dF) noexcept;

// Lorentz rescaling of the series: k0 -> lambda^2 k0, k_n -> lambda^(2-n) k_n,
// so that eval_F(scaled, r) = lambda^2 * eval_F(original, lambda * r) exactly.
// r_min_valid maps to r_min_valid / lambda. Throws NonPositiveLambda.
GhostSeries scale_series(const GhostSeries& s, double lambda);

// True iff F > 0 on n_samples log-spaced radii in [s.r_min_valid, r_max].
bool domain_ok(const GhostSeries& s, double r_max = 1e3, std::size_t n_samples = 256);

// domain_ok or throw DomainError naming the first failing radius.
void check_domain(const GhostSeries& s, double r_max = 1e3, std::size_t n_samples = 256);

// Plain-text block: one "k0 = <float>" line then "k<n> = <float>" lines,
// floats at 17 significant digits.
std::string series_to_text(const GhostSeries& s);

// Strict inverse of series_to_text. '#' comments and blank lines are allowed;
// any other key, duplicate key, or gap in k1..kN is rejected (throws Error).
// r_min_valid is runtime state, not part of the format.
GhostSeries series_from_text(const std::string& text, double r_min_valid);

}  // namespace wf1d
