#pragma once

#include <cstddef>
#include <vector>

namespace wf1d {

// A sampled particle trajectory with C1 dense output. Nodes carry the
// particle-1 proper time tau of the state they were reconstructed from, lab
// time t (strictly increasing), position x, velocity v (|v| < 1), and the lab
// acceleration a = dv/dt used as the slope of the velocity interpolant.
//
// x(t) is the cubic Hermite through (t, x) with slopes v, so interpolated
// positions reproduce the nodes exactly and the light-cone root solver sees a
// C1 function. v(t) is the cubic Hermite through (t, v) with slopes a.
class Worldline {
public:
    Worldline() = default;

    // a = dv/dt known analytically at the nodes.
    Worldline(std::vector<double> tau, std::vector<double> t, std::vector<double> x,
              std::vector<double> v, std::vector<double> a);

    // For data re-ingested from CSV (tau,t,x,v): velocity slopes are rebuilt
    // by 3-point finite differences.
    Worldline(std::vector<double> tau, std::vector<double> t, std::vector<double> x,
              std::vector<double> v);

    std::size_t size() const { return t_.size(); }
    bool empty() const { return t_.empty(); }
    double t_front() const { return t_.front(); }
    double t_back() const { return t_.back(); }

    const std::vector<double>& tau() const { return tau_; }
    const std::vector<double>& t() const { return t_; }
    const std::vector<double>& x() const { return x_; }
    const std::vector<double>& v() const { return v_; }
    const std::vector<double>& a() const { return a_; }

    // Dense output. All throw LagOutOfSpan outside [t_front, t_back].
    double x_at(double t) const;
    double v_at(double t) const;           // velocity Hermite
    double x_slope_at(double t) const;     // d/dt of the position Hermite
    void x_and_slope_at(double t, double& x, double& dxdt) const;

    bool covers(double t) const { return t >= t_.front() && t <= t_.back(); }

private:
    void validate() const;
    std::size_t locate(double t) const;

    std::vector<double> tau_, t_, x_, v_, a_;
};

}  // namespace wf1d
