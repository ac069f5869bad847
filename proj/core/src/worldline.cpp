#include "wf1d/worldline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wf1d/errors.hpp"

namespace wf1d {

namespace {

// Hermite basis on [0,1].
inline void hermite(double u, double h, double y0, double y1, double m0, double m1, double& y,
                    double& dy) {
    const double u2 = u * u, u3 = u2 * u;
    const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
    const double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
    y = h00 * y0 + h * (h10 * m0 + h11 * m1) + h01 * y1;
    const double d00 = 6 * u2 - 6 * u, d10 = 3 * u2 - 4 * u + 1, d11 = 3 * u2 - 2 * u;
    dy = (d00 * (y0 - y1)) / h + d10 * m0 + d11 * m1;
}

}  // namespace

Worldline::Worldline(std::vector<double> tau, std::vector<double> t, std::vector<double> x,
                     std::vector<double> v, std::vector<double> a)
    : tau_(std::move(tau)), t_(std::move(t)), x_(std::move(x)), v_(std::move(v)), a_(std::move(a)) {
    validate();
}

Worldline::Worldline(std::vector<double> tau, std::vector<double> t, std::vector<double> x,
                     std::vector<double> v)
    : tau_(std::move(tau)), t_(std::move(t)), x_(std::move(x)), v_(std::move(v)) {
    // Slopes dv/dt by non-uniform 3-point differences; one-sided at the ends.
    const std::size_t n = t_.size();
    a_.assign(n, 0.0);
    if (n >= 3) {
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double hl = t_[i] - t_[i - 1], hr = t_[i + 1] - t_[i];
            a_[i] = (v_[i + 1] * hl * hl - v_[i - 1] * hr * hr + v_[i] * (hr * hr - hl * hl)) /
                    (hl * hr * (hl + hr));
        }
        a_[0] = (v_[1] - v_[0]) / (t_[1] - t_[0]);
        a_[n - 1] = (v_[n - 1] - v_[n - 2]) / (t_[n - 1] - t_[n - 2]);
    } else if (n == 2) {
        a_[0] = a_[1] = (v_[1] - v_[0]) / (t_[1] - t_[0]);
    }
    validate();
}

void Worldline::validate() const {
    const std::size_t n = t_.size();
    if (n < 2) throw Error("worldline needs at least two samples");
    if (tau_.size() != n || x_.size() != n || v_.size() != n || a_.size() != n)
        throw Error("worldline sample arrays disagree in length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(t_[i]) || !std::isfinite(x_[i]) || !std::isfinite(v_[i]))
            throw Error("worldline sample " + std::to_string(i) + " is not finite");
        if (!(std::fabs(v_[i]) < 1.0))
            throw Error("worldline sample " + std::to_string(i) + " has |v| >= 1 (v = " +
                        std::to_string(v_[i]) + ")");
        if (i > 0 && !(t_[i] > t_[i - 1]))
            throw Error("worldline t is not strictly increasing at sample " + std::to_string(i));
    }
}

std::size_t Worldline::locate(double t) const {
    if (!covers(t))
        throw LagOutOfSpan("t = " + std::to_string(t) + " outside worldline span [" +
                           std::to_string(t_.front()) + ", " + std::to_string(t_.back()) + "]");
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    std::size_t i = (std::size_t)(it - t_.begin());
    if (i == 0) i = 1;
    if (i == t_.size()) i = t_.size() - 1;
    return i - 1;   // interval [i-1, i]
}

double Worldline::x_at(double t) const {
    double y, dy;
    x_and_slope_at(t, y, dy);
    return y;
}

void Worldline::x_and_slope_at(double t, double& x, double& dxdt) const {
    const std::size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    hermite((t - t_[i]) / h, h, x_[i], x_[i + 1], v_[i], v_[i + 1], x, dxdt);
}

double Worldline::x_slope_at(double t) const {
    double y, dy;
    x_and_slope_at(t, y, dy);
    return dy;
}

double Worldline::v_at(double t) const {
    const std::size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    double y, dy;
    hermite((t - t_[i]) / h, h, v_[i], v_[i + 1], a_[i], a_[i + 1], y, dy);
    return y;
}

}  // namespace wf1d
