#pragma once

#include <stdexcept>
#include <string>

namespace wf1d {

// Base class for everything this library throws, so callers can catch the
// whole family at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- series / evaluation domain ----
struct NonPositiveRadius : Error {
    explicit NonPositiveRadius(double r)
        : Error("series evaluated at non-positive radius r = " + std::to_string(r)) {}
};

struct NonPositiveF : Error {
    NonPositiveF(double r, double value)
        : Error("F(r) <= 0 at r = " + std::to_string(r) + " (F = " + std::to_string(value) +
                "); the series left its physical domain") {}
};

struct NonPositiveLambda : Error {
    explicit NonPositiveLambda(double lambda)
        : Error("scale factor must be positive, got " + std::to_string(lambda)) {}
};

// Generic in-domain failure (F <= 0 on the positivity grid, r <= 0 reached
// during integration, and similar).
struct DomainError : Error {
    using Error::Error;
};

// ---- integrator ----
struct StepSizeUnderflow : Error {
    explicit StepSizeUnderflow(double tau)
        : Error("adaptive step size underflow near tau = " + std::to_string(tau)) {}
};

// ---- diagnostics / extraction ----
struct HorizonTooShort : Error {
    explicit HorizonTooShort(double fit_residual)
        : Error("asymptotic rapidity fit residual " + std::to_string(fit_residual) +
                " exceeds 1e-4; increase tau_max") {}
};

struct GridOutOfRange : Error {
    using Error::Error;
};

// ---- optimizer ----
struct NoDescentDirection : Error {
    using Error::Error;
};

struct StageFailed : Error {
    StageFailed(std::size_t stage, double r_c, double best_A, const std::string& why)
        : Error("continuation stage " + std::to_string(stage) + " (r_c = " + std::to_string(r_c) +
                ") failed with best A = " + std::to_string(best_A) + ": " + why),
          stage_index(stage), stage_r_c(r_c), best_deviation(best_A) {}
    std::size_t stage_index;
    double stage_r_c;
    double best_deviation;
};

// ---- light-cone root solver ----
struct LagOutOfSpan : Error {
    using Error::Error;
};

struct NoBracket : Error {
    using Error::Error;
};

// ---- potentials branch ----
struct DegenerateSystem : Error {
    using Error::Error;
};

struct NegativeDiscriminant : Error {
    using Error::Error;
};

struct SingularDenominator : Error {
    using Error::Error;
};

}  // namespace wf1d
