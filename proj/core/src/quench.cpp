#include "wf1d/quench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "wf1d/errors.hpp"

namespace wf1d {

void QuenchConfig::validate() const {
    if (grid_size < 16) throw Error("grid_size must be at least 16");
    if (!(grid_span > 0.0) || grid_span > 1.0)
        throw Error("grid_span must lie in (0, 1]");
    if (!(fd_step > 0.0)) throw Error("fd_step must be positive");
    if (!(step0 > 0.0)) throw Error("step0 must be positive");
    if (!(shrink > 0.0) || !(shrink < 1.0) || !(grow > 1.0))
        throw Error("backtracking factors need 0 < shrink < 1 < grow");
    if (!(A_tol > 0.0)) throw Error("A_tol must be positive");
    if (max_iters < 1) throw Error("max_iters must be at least 1");
    if (!(t_window_factor > 0.0)) throw Error("t_window_factor must be positive");
}

int default_terms(double r_c) {
    if (!(r_c > 0.0)) throw NonPositiveRadius(r_c);
    const int n = 3 + static_cast<int>(std::lround(16.0 / std::sqrt(r_c)));
    return std::clamp(n, 4, 18);
}

int significant_terms(const GhostSeries& s, double threshold) {
    for (std::size_t i = s.coeffs.size(); i-- > 0;)
        if (std::fabs(s.coeffs[i]) >= threshold) return static_cast<int>(i) + 1;
    return 0;
}

namespace {

// ---------------------------------------------------------------- deviation

// Outgoing branch of one particle-2 reconstruction: samples from the turn
// (refined position maximum) to the window edge, position strictly
// decreasing. Both endpoints are interpolated, not node-snapped, so the
// branch bounds move smoothly with the series coefficients.
struct Branch {
    std::vector<double> t, x;  // t ascending, x strictly decreasing
};

// Golden-section maximum of f on [a, b].
template <class F>
double golden_maximize(F&& f, double a, double b) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 120 && (b - a) > 1e-13 * (1.0 + std::fabs(a) + std::fabs(b)); ++it) {
        if (f1 >= f2) {
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

Branch outgoing_branch(const Worldline& w, double window) {
    const auto& T = w.t();
    const auto& X = w.x();
    const auto lo_it = std::lower_bound(T.begin(), T.end(), -window);
    const auto hi_it = std::upper_bound(T.begin(), T.end(), window);
    const std::size_t lo = static_cast<std::size_t>(lo_it - T.begin());
    const std::size_t hi_excl = static_cast<std::size_t>(hi_it - T.begin());
    if (hi_excl < lo + 4)
        throw GridOutOfRange("comparison window holds too few worldline samples");
    const std::size_t hi = hi_excl - 1;

    std::size_t pk = lo;
    for (std::size_t i = lo + 1; i <= hi; ++i)
        if (X[i] > X[pk]) pk = i;
    if (pk == hi)
        throw GridOutOfRange("particle-2 track has no turn inside the window");

    // refine the turn on the dense interpolant
    const double ta = T[pk > lo ? pk - 1 : pk];
    const double tb = T[pk + 1];
    const double t_pk = golden_maximize([&](double t) { return w.x_at(t); }, ta, tb);
    const double x_pk = w.x_at(t_pk);

    Branch br;
    br.t.push_back(t_pk);
    br.x.push_back(x_pk);
    for (std::size_t i = pk + 1; i <= hi; ++i) {
        if (T[i] <= br.t.back()) continue;
        if (X[i] >= br.x.back()) break;  // position turned back up: branch ends
        br.t.push_back(T[i]);
        br.x.push_back(X[i]);
    }
    // extend to the exact window edge when the run reaches it and the
    // worldline continues beyond (interpolable)
    if (!br.t.empty() && br.t.back() < window && w.covers(window)) {
        const double x_w = w.x_at(window);
        if (x_w < br.x.back()) {
            br.t.push_back(window);
            br.x.push_back(x_w);
        }
    }
    if (br.x.size() < 2 || !(br.x.front() > br.x.back()))
        throw GridOutOfRange("outgoing branch of the particle-2 track is degenerate");
    return br;
}

// Invert x(t) = x_target on a monotone branch: bracket by branch samples,
// then safeguarded Newton on the dense interpolant.
double invert_branch(const Worldline& w, const Branch& br, double x_target) {
    if (x_target >= br.x.front()) return br.t.front();
    if (x_target <= br.x.back()) return br.t.back();
    std::size_t lo = 0, hi = br.x.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (br.x[mid] >= x_target)
            lo = mid;
        else
            hi = mid;
    }
    double ta = br.t[lo], tb = br.t[hi];
    double t = ta + (tb - ta) * (br.x[lo] - x_target) /
                        std::fmax(br.x[lo] - br.x[hi], 1e-300);
    const double f_tol = 1e-13 * std::fmax(1.0, std::fabs(x_target));
    for (int it = 0; it < 60; ++it) {
        double x, s;
        w.x_and_slope_at(t, x, s);
        const double f = x - x_target;
        if (std::fabs(f) <= f_tol) break;
        if (f > 0.0)  // x decreases with t on the branch: t is still too small
            ta = t;
        else
            tb = t;
        double tn = (s != 0.0) ? t - f / s : 0.5 * (ta + tb);
        if (!(tn > ta) || !(tn < tb)) tn = 0.5 * (ta + tb);
        if (tn == t) break;
        t = tn;
    }
    return t;
}

}  // namespace

namespace {

// Time gaps t_a(x) - t_b(x) between the two particle-2 reconstructions on
// the comparison grid. With an empty `grid` the abscissae are built from
// this orbit (central grid_span fraction of the overlapping x2-range) and
// written back; a non-empty grid is reused as-is so nearby orbits can be
// compared on identical abscissae.
void time_gaps(const OrbitSolution& orbit, const QuenchConfig& qcfg,
               std::vector<double>& grid, std::vector<double>& gap) {
    const double window = qcfg.t_window_factor * orbit.r_c;
    const Branch a = outgoing_branch(orbit.p2a, window);
    const Branch b = outgoing_branch(orbit.p2b, window);

    if (grid.empty()) {
        const double x_hi = std::fmin(a.x.front(), b.x.front());
        const double x_lo = std::fmax(a.x.back(), b.x.back());
        const double span = x_hi - x_lo;
        if (!(span > 0.0))
            throw GridOutOfRange(
                "particle-2 reconstructions do not overlap in position");
        const double margin = 0.5 * (1.0 - qcfg.grid_span);
        const double g_lo = x_lo + margin * span;
        const double g_hi = x_hi - margin * span;
        if (!(g_hi > g_lo)) throw GridOutOfRange("comparison grid collapsed");
        const int n = qcfg.grid_size;
        grid.resize(n);
        for (int i = 0; i < n; ++i)
            grid[i] = g_lo + (g_hi - g_lo) * i / (n - 1);
    }
    gap.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        gap[i] = invert_branch(orbit.p2a, a, grid[i]) -
                 invert_branch(orbit.p2b, b, grid[i]);
}

}  // namespace

double deviation(const OrbitSolution& orbit, const QuenchConfig& qcfg) {
    qcfg.validate();
    std::vector<double> grid, gap;
    time_gaps(orbit, qcfg, grid, gap);
    double ss = 0.0;
    for (const double d : gap) ss += d * d;
    return std::sqrt(ss / static_cast<double>(gap.size()));
}

namespace {

// ---------------------------------------------------------------- optimizer

// Descent coordinates for the series parameters.
//
// In raw coefficients the deviation landscape is catastrophically
// ill-conditioned: on the radial window the orbit probes, the basis
// functions 1/r^n are nearly collinear, and the measured Jacobian
// condition runs 1e11..1e16 for N = 3..12 - still 1e7..1e15 after the
// best possible diagonal rescaling, and ~4e5 at N = 4 (worse for larger
// N) in coordinates orthonormalized against the analytic Gram of the
// basis on the probed window. First-order descent in any such fixed
// coordinates either crawls at the condition-number rate or pumps
// enormous alternating-sign combinations into the trailing coefficients,
// which the comparison barely senses.
//
// The only metric that reflects what the comparison actually resolves is
// the objective's own Jacobian. At the phase origin p0 the map probes
// J_ij = d(gap_i)/d(p_j) by finite differences on a frozen comparison
// grid - one extra orbit per parameter, cheaper than a single descent
// iteration - takes J = U S V^T, and descends in
//
//   z = S' V^T (p - p0),   p = p0 + V S'^{-1} z,   S'_j = max(S_j, f S_0)
//
// so a unit move of any live z-coordinate shifts the time-gap vector by
// one unit: the live subspace has condition ~1 and a finite-difference
// step in z is equally resolvable in every direction. Directions with
// S_j below the floor are below what the comparison data can resolve;
// their z-gradients carry the factor S_j/S'_j, so the descent leaves
// them essentially frozen at the origin instead of pumping unresolvable
// coefficient combinations. The map is rebuilt at the current iterate
// when a descent phase stalls (the Jacobian is position-dependent); each
// phase remains plain backtracking steepest descent in fixed
// coordinates, and the public k-space gradient op is untouched.
struct ParamMap {
    bool pair = false;     // two independent series (generalized mode)
    bool free_k0 = false;  // k0 entries present (generalized mode)
    int n_a = 0, n_b = 0;  // coefficient counts
    double r_min_a = 0.0, r_min_b = 0.0;
    Eigen::VectorXd origin;  // parameter vector at the phase origin
    Eigen::MatrixXd T, Ti;   // z = T (p - origin), p = origin + Ti z
    std::vector<double> grid;  // frozen comparison abscissae of this phase
    Eigen::MatrixXd Jt;        // phase-model gradient factor: d(ssq/2)/dz = Jt gap
    bool model = false;        // grid/Jt are populated

    int dim() const {
        return n_a + (pair ? n_b : 0) + (free_k0 ? (pair ? 2 : 1) : 0);
    }

    Eigen::VectorXd pack(const GhostSeries& A, const GhostSeries& B) const {
        Eigen::VectorXd p(dim());
        Eigen::Index j = 0;
        if (free_k0) p(j++) = A.k0;
        for (int i = 0; i < n_a; ++i) p(j++) = A.coeffs[static_cast<std::size_t>(i)];
        if (pair) {
            p(j++) = B.k0;
            for (int i = 0; i < n_b; ++i) p(j++) = B.coeffs[static_cast<std::size_t>(i)];
        }
        return p;
    }

    void unpack(const Eigen::VectorXd& p, GhostSeries& A, GhostSeries& B) const {
        Eigen::Index j = 0;
        A.k0 = free_k0 ? p(j++) : 1.0;
        A.coeffs.assign(static_cast<std::size_t>(n_a), 0.0);
        for (int i = 0; i < n_a; ++i) A.coeffs[static_cast<std::size_t>(i)] = p(j++);
        A.r_min_valid = r_min_a;
        if (pair) {
            B.k0 = p(j++);
            B.coeffs.assign(static_cast<std::size_t>(n_b), 0.0);
            for (int i = 0; i < n_b; ++i) B.coeffs[static_cast<std::size_t>(i)] = p(j++);
            B.r_min_valid = r_min_b;
        } else {
            B = A;
        }
    }

    void decode(const std::vector<double>& z, GhostSeries& A, GhostSeries& B) const {
        Eigen::Map<const Eigen::VectorXd> zv(z.data(), dim());
        unpack(origin + Ti * zv, A, B);
    }

    std::vector<double> encode(const GhostSeries& A, const GhostSeries& B) const {
        const Eigen::VectorXd zv = T * (pack(A, B) - origin);
        return std::vector<double>(zv.data(), zv.data() + zv.size());
    }

    // Layout and origin only: identity coordinates anchored at the seeds.
    void init(const GhostSeries& seedA, const GhostSeries& seedB,
              bool generalized, double rmin_a, double rmin_b) {
        pair = generalized;
        free_k0 = generalized;
        n_a = static_cast<int>(seedA.coeffs.size());
        n_b = pair ? static_cast<int>(seedB.coeffs.size()) : 0;
        r_min_a = rmin_a;
        r_min_b = rmin_b;
        GhostSeries A = seedA, B = pair ? seedB : seedA;
        A.r_min_valid = r_min_a;
        B.r_min_valid = pair ? r_min_b : r_min_a;
        origin = pack(A, B);
        T = Eigen::MatrixXd::Identity(dim(), dim());
        Ti = T;
    }

    // Builds the map with its origin at the given seeds, probing the orbit
    // once per parameter. Falls back to identity coordinates when the base
    // orbit cannot be solved; the descent then reports that failure itself.
    void build(const SolveConfig& cfg, const QuenchConfig& qcfg,
               const GhostSeries& seedA, const GhostSeries& seedB,
               bool generalized, double rmin_a, double rmin_b) {
        init(seedA, seedB, generalized, rmin_a, rmin_b);
        const int d = dim();
        if (!qcfg.precondition) return;

        GhostSeries A, B;
        unpack(origin, A, B);
        std::vector<double> gap0, gapp, gapm;
        try {
            const OrbitSolution base =
                pair ? integrate_orbit(cfg, A, B) : integrate_orbit(cfg, A);
            time_gaps(base, qcfg, grid, gap0);
        } catch (const Error&) {
            grid.clear();
            return;
        }
        const auto rows = static_cast<Eigen::Index>(grid.size());
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(rows, d);
        const auto probe = [&](const Eigen::VectorXd& p,
                               std::vector<double>& gap) -> bool {
            GhostSeries Ap, Bp;
            unpack(p, Ap, Bp);
            if (!(Ap.k0 > 0.0) || !domain_ok(Ap)) return false;
            if (pair && (!(Bp.k0 > 0.0) || !domain_ok(Bp))) return false;
            try {
                const OrbitSolution orb =
                    pair ? integrate_orbit(cfg, Ap, Bp) : integrate_orbit(cfg, Ap);
                time_gaps(orb, qcfg, grid, gap);
            } catch (const Error&) {
                return false;
            }
            return true;
        };
        for (int j = 0; j < d; ++j) {
            const double h = qcfg.fd_step * std::fmax(1.0, std::fabs(origin(j)));
            Eigen::VectorXd p = origin;
            p(j) = origin(j) + h;
            const bool okp = probe(p, gapp);
            p(j) = origin(j) - h;
            const bool okm = probe(p, gapm);
            if (okp && okm) {
                for (Eigen::Index i = 0; i < rows; ++i)
                    J(i, j) = (gapp[static_cast<std::size_t>(i)] -
                               gapm[static_cast<std::size_t>(i)]) /
                              (2.0 * h);
            } else if (okp || okm) {  // one-sided at the domain boundary
                const std::vector<double>& g1 = okp ? gapp : gapm;
                const double sgn = okp ? 1.0 : -1.0;
                for (Eigen::Index i = 0; i < rows; ++i)
                    J(i, j) = (g1[static_cast<std::size_t>(i)] -
                               gap0[static_cast<std::size_t>(i)]) /
                              (sgn * h);
            }
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            J, Eigen::ComputeThinU | Eigen::ComputeFullV);
        const Eigen::VectorXd& sv = svd.singularValues();
        if (sv.size() == 0 || !(sv(0) > 0.0)) {  // fully insensitive
            grid.clear();
            return;
        }
        // Tiny singular values carry real descent information here - the
        // deep valley directions sit many decades below the leading one
        // yet their measured responses are genuine - so the floor is a
        // 1/sigma overflow guard only, not a resolution cutoff.
        Eigen::VectorXd st = Eigen::VectorXd::Constant(d, 1e-9 * sv(0));
        for (Eigen::Index j = 0; j < sv.size() && j < d; ++j)
            st(j) = std::fmax(sv(j), st(j));
        const Eigen::MatrixXd& V = svd.matrixV();
        T = st.asDiagonal() * V.transpose();
        Ti = V * st.cwiseInverse().asDiagonal();
        // A mid-spectrum direction can be locally measurable yet so
        // nonlinear that its full-amplitude component poisons every mixed
        // step: uniform backtracking then rejects moves whose leading
        // components alone would have dropped the deviation by decades.
        // So evaluate the truncated Gauss-Newton jump once per rank from
        // this origin and freeze the directions beyond the best performer
        // for the phase; the next rebuild re-probes all of them.
        Eigen::Index r_keep = sv.size();
        {
            Eigen::Map<const Eigen::VectorXd> g0(gap0.data(), rows);
            const double ss0 = g0.squaredNorm();
            double best = ss0;
            Eigen::VectorXd dk = Eigen::VectorXd::Zero(d);
            std::vector<double> gap_r;
            for (Eigen::Index r = 1; r <= sv.size(); ++r) {
                if (!(sv(r - 1) > 1e-9 * sv(0))) break;  // below the guard
                dk -= V.col(r - 1) *
                      (svd.matrixU().col(r - 1).dot(g0) / sv(r - 1));
                // same feasibility notion as the line search's reach cap
                if (dk.cwiseAbs().maxCoeff() > 100.0) continue;
                if (!probe(origin + dk, gap_r)) continue;
                double ssr = 0.0;
                for (const double g : gap_r) ssr += g * g;
                if (ssr < best) {
                    best = ssr;
                    r_keep = r;
                }
            }
        }
        // In these coordinates d(gap)/dz = U diag(sigma/sigma~), so the
        // half-sum-of-squares gradient at any iterate is Jt * gap with one
        // orbit solve for the gap - the probe columns are reused instead
        // of re-differencing the objective direction by direction. Frozen
        // directions get zero rows: their coordinates never move.
        Eigen::VectorXd ratio = Eigen::VectorXd::Zero(d);
        for (Eigen::Index j = 0; j < sv.size() && j < d && j < r_keep; ++j)
            ratio(j) = sv(j) / st(j);
        Jt = ratio.asDiagonal() * svd.matrixU().transpose();
        model = true;
    }
};

// Canonical objective (rms time gap on the orbit's own fresh grid) plus,
// when the map carries a phase model, the gap vector on the map's frozen
// grid - the rows the model gradient Jt * gap needs. nothrow mode reports
// any failure as "no value" so the line search can reject the trial.
std::optional<double> eval_phase(const ParamMap& pm, const SolveConfig& cfg,
                                 const QuenchConfig& qcfg,
                                 const std::vector<double>& z, bool nothrow,
                                 std::vector<double>& gap_frozen) {
    GhostSeries A, B;
    pm.decode(z, A, B);
    if (nothrow) {
        if (!(A.k0 > 0.0) || !domain_ok(A)) return std::nullopt;
        if (pm.pair && (!(B.k0 > 0.0) || !domain_ok(B))) return std::nullopt;
    } else {
        check_domain(A);
        if (pm.pair) check_domain(B);
    }
    try {
        const OrbitSolution orb =
            pm.pair ? integrate_orbit(cfg, A, B) : integrate_orbit(cfg, A);
        std::vector<double> grid, gap;
        time_gaps(orb, qcfg, grid, gap);
        double ss = 0.0;
        for (const double g : gap) ss += g * g;
        const double dev = std::sqrt(ss / static_cast<double>(gap.size()));
        if (!std::isfinite(dev)) {
            if (nothrow) return std::nullopt;
            throw Error("deviation is not finite");
        }
        if (pm.model) {
            grid = pm.grid;
            time_gaps(orb, qcfg, grid, gap_frozen);
        }
        return dev;
    } catch (const Error&) {
        if (nothrow) return std::nullopt;
        throw;
    }
}

// Objective: solve the orbit for the decoded series and measure the
// deviation. nothrow mode reports any failure as "no value" so the line
// search can reject the trial.
std::optional<double> eval_objective(const ParamMap& pm, const SolveConfig& cfg,
                                     const QuenchConfig& qcfg,
                                     const std::vector<double>& z, bool nothrow) {
    GhostSeries A, B;
    pm.decode(z, A, B);
    if (nothrow) {
        if (!(A.k0 > 0.0) || !domain_ok(A)) return std::nullopt;
        if (pm.pair && (!(B.k0 > 0.0) || !domain_ok(B))) return std::nullopt;
    } else {
        check_domain(A);
        if (pm.pair) check_domain(B);
    }
    try {
        const OrbitSolution orb =
            pm.pair ? integrate_orbit(cfg, A, B) : integrate_orbit(cfg, A);
        const double dev = deviation(orb, qcfg);
        if (!std::isfinite(dev)) {
            if (nothrow) return std::nullopt;
            throw Error("deviation is not finite");
        }
        return dev;
    } catch (const Error&) {
        if (nothrow) return std::nullopt;
        throw;
    }
}

// Largest raw-coefficient displacement between two parameter vectors.
double coeff_reach(const ParamMap& pm, const std::vector<double>& z0,
                   const std::vector<double>& z1) {
    GhostSeries a0, b0, a1, b1;
    pm.decode(z0, a0, b0);
    pm.decode(z1, a1, b1);
    double m = std::fabs(a1.k0 - a0.k0);
    for (std::size_t i = 0; i < a0.coeffs.size(); ++i)
        m = std::fmax(m, std::fabs(a1.coeffs[i] - a0.coeffs[i]));
    if (pm.pair) {
        m = std::fmax(m, std::fabs(b1.k0 - b0.k0));
        for (std::size_t i = 0; i < b0.coeffs.size(); ++i)
            m = std::fmax(m, std::fabs(b1.coeffs[i] - b0.coeffs[i]));
    }
    return m;
}

// Central finite differences of the objective in z-space, falling back to
// one-sided stencils at the domain boundary; a fully blocked component
// contributes no direction. h_scale widens the probe to match the step
// scale while the objective is large: a fixed tiny probe there reads
// mostly integrator staircase noise along flat directions, and the noise
// reading shrinks in proportion to the probe width.
std::vector<double> objective_gradient(const ParamMap& pm, const SolveConfig& cfg,
                                       const QuenchConfig& qcfg,
                                       const std::vector<double>& z, double A_base,
                                       double h_scale) {
    std::vector<double> g(z.size(), 0.0);
    std::vector<double> zt = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double h = qcfg.fd_step * std::fmax(h_scale, std::fabs(z[i]));
        zt[i] = z[i] + h;
        const std::optional<double> Ap = eval_objective(pm, cfg, qcfg, zt, true);
        zt[i] = z[i] - h;
        const std::optional<double> Am = eval_objective(pm, cfg, qcfg, zt, true);
        zt[i] = z[i];
        if (Ap && Am)
            g[i] = (*Ap - *Am) / (2.0 * h);
        else if (Ap)
            g[i] = (*Ap - A_base) / h;
        else if (Am)
            g[i] = (A_base - *Am) / h;
    }
    return g;
}

struct DescentOutcome {
    std::vector<double> z;
    double deviation = 0.0;
    QuenchStatus status = QuenchStatus::MaxIters;
    int iterations = 0;        // global iteration counter after this phase
    bool underflow = false;    // backtracking shrank the step to nothing
    bool accepted_any = false; // at least one step accepted this phase
};

void emit_log(const QuenchLogger& log, const ParamMap& pm, int iter, double A,
              double step, double gnorm, const std::vector<double>& z) {
    if (!log) return;
    GhostSeries sa, sb;
    pm.decode(z, sa, sb);
    QuenchLogEntry e;
    e.iter = iter;
    e.deviation = A;
    e.step = step;
    e.grad_norm = gnorm;
    e.n_coeffs = significant_terms(sa);
    log(e, sa);
}

// Backtracking steepest descent with strict-decrease acceptance, staged
// over a growing active subspace of the hierarchical coordinates.
//
// Descending on all coefficients at once fails structurally: the trailing
// coordinates reach enormous raw coefficients per unit move, so the cold
// gradient drives the iterate onto the F > 0 boundary along an
// alternating-sign knife edge where single-coordinate difference probes all
// leave the domain. Activating the coordinates one at a time - each new
// direction Gram-Schmidt-orthogonal to the converged span - keeps every
// subproblem low-dimensional and well-conditioned, and reproduces the
// physical structure: F is first-term dominated and successive terms
// refine it. The next coordinate is released when the active subproblem
// stalls above A_tol; a stall with everything active is a genuine stall.
//
// The adaptive integrator's step-acceptance pattern reshuffles under tiny
// parameter changes, so A carries a micro-staircase of height ~rel_tol x
// time scale. Acceptance needs eta |g|^2 above that noise while curvature
// caps eta from above, so descent jams once A nears noise x condition
// number - measured a few times 1e-6 at the working tolerances, i.e. at
// A_tol itself. The descent therefore tightens the integration tolerance
// for its own evaluations once A comes within two decades of A_tol, and
// the final reported deviation uses the tightened setting.
//
// One call runs a single descent phase in the fixed coordinates of `pm`,
// up to global iteration iter_cap; the caller owns the evaluation config,
// the tightening flag, and the last logged deviation so they persist
// across phases, and decides whether an expired or stalled phase warrants
// rebuilding the map or giving up.
DescentOutcome descend(const ParamMap& pm, SolveConfig& ecfg, bool& tight,
                       const QuenchConfig& qcfg, std::vector<double> z,
                       const QuenchLogger& log, int iter_start, int iter_cap,
                       double& A_logged) {
    DescentOutcome out;
    out.iterations = iter_start;
    std::vector<double> gap;  // time gaps at the current iterate
    double A = *eval_phase(pm, ecfg, qcfg, z, false, gap);  // seed errors escape
    if (iter_start == 0) {
        emit_log(log, pm, 0, A, 0.0, 0.0, z);
        A_logged = A;
    }
    // Later phases re-evaluate the same iterate the previous phase ended
    // on, so A == A_logged there and nothing is emitted for it.
    const auto tighten = [&]() {
        if (tight || A > 100.0 * qcfg.A_tol) return;
        tight = true;
        ecfg.rel_tol = std::fmax(1e-2 * ecfg.rel_tol, 1e-13);
        ecfg.abs_tol = std::fmax(1e-2 * ecfg.abs_tol, 1e-15);
        std::vector<double> gt;
        const std::optional<double> Ar = eval_phase(pm, ecfg, qcfg, z, true, gt);
        // Re-baseline so later acceptances compare within one tolerance
        // regime; never above the last logged value, which keeps the
        // emitted deviation sequence strictly decreasing.
        if (Ar) {
            A = std::fmin(*Ar, A_logged);
            gap = std::move(gt);
        }
    };
    if (A <= qcfg.A_tol) {
        out.z = std::move(z);
        out.deviation = A;
        out.status = QuenchStatus::Converged;
        return out;
    }
    tighten();

    const double ngrid = static_cast<double>(qcfg.grid_size);
    double eta = qcfg.step0;
    int stagnant = 0;
    std::vector<double> g(z.size());
    std::vector<double> trial(z.size()), gap_trial;
    for (int iter = iter_start + 1; iter <= iter_cap; ++iter) {
        out.iterations = iter;
        if (pm.model) {
            // Gradient of the rms deviation under the phase model:
            // chain rule from half the sum of squared gaps.
            Eigen::Map<const Eigen::VectorXd> gv(
                gap.data(), static_cast<Eigen::Index>(gap.size()));
            Eigen::Map<Eigen::VectorXd> gz(g.data(),
                                           static_cast<Eigen::Index>(g.size()));
            gz = pm.Jt * gv / (A * ngrid);
        } else {
            g = objective_gradient(pm, ecfg, qcfg, z, A,
                                   std::fmax(1.0, std::sqrt(ngrid) * A));
        }
        double gnorm = 0.0;
        for (const double gi : g) gnorm = std::fmax(gnorm, std::fabs(gi));
        if (gnorm <= 1e-6 * std::fmax(A, qcfg.A_tol)) {
            out.status = QuenchStatus::Stalled;
            break;
        }
        // In the map's coordinates a unit z-move shifts the time-gap
        // vector by one unit, so the step that zeroes the locally
        // reachable part of the residual is exactly -N A grad A (the
        // chain rule factor between the rms deviation and half the sum
        // of squared gaps). The grown step from previous successes rides
        // within a band around that scale: below it descent crawls, far
        // above it the move is pure overshoot fed by noise.
        const double eta_gn = ngrid * A;
        eta = std::fmin(std::fmax(eta, eta_gn), 100.0 * eta_gn);

        double A_new = A;
        double eta_used = eta;
        bool accepted = false;
        for (int bt = 0; bt < 200; ++bt) {
            for (std::size_t i = 0; i < z.size(); ++i)
                trial[i] = z[i] - eta_used * g[i];
            // Reject disproportionate raw-coefficient moves before paying
            // for an integration. Near-flat directions reach large
            // coefficients per unit move while the deviation barely
            // responds, so an unbounded line search can accept a
            // noise-scale improvement that dumps huge alternating-sign
            // coefficients into the tail and strands the iterate on the
            // F > 0 cancellation ridge. Genuine descent moves are orders
            // of magnitude below this cap.
            if (coeff_reach(pm, z, trial) > 100.0) {
                eta_used *= qcfg.shrink;
                if (eta_used * gnorm <= 1e-18) break;
                continue;
            }
            const std::optional<double> At =
                eval_phase(pm, ecfg, qcfg, trial, true, gap_trial);
            if (At && *At < A) {
                A_new = *At;
                accepted = true;
                break;
            }
            eta_used *= qcfg.shrink;
            if (eta_used * gnorm <= 1e-18) break;
        }
        if (!accepted) {
            out.underflow = true;
            out.status = QuenchStatus::Stalled;
            break;
        }

        out.accepted_any = true;
        const double drop = A - A_new;
        z.swap(trial);
        gap.swap(gap_trial);
        A = A_new;
        emit_log(log, pm, iter, A, eta_used, gnorm, z);
        A_logged = A;
        eta = eta_used * qcfg.grow;
        tighten();
        if (A <= qcfg.A_tol) {
            out.status = QuenchStatus::Converged;
            break;
        }
        // Five consecutive sub-1e-4 relative drops mean the phase has hit
        // the resolution of its (by now stale) coordinates; hand control
        // back so the caller can rebuild the map at the current iterate.
        if (drop <= 1e-4 * A) {
            if (++stagnant >= 5) {
                out.status = QuenchStatus::Stalled;
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    out.z = std::move(z);
    out.deviation = A;
    return out;
}

GhostSeries trim_trailing(GhostSeries s, double threshold) {
    while (!s.coeffs.empty() && std::fabs(s.coeffs.back()) < threshold)
        s.coeffs.pop_back();
    return s;
}

// Shared driver: seed short-circuit, then descent phases with the
// coordinate map rebuilt at the current iterate whenever a phase stalls
// (the objective Jacobian is position-dependent, so a map probed at the
// seed goes stale as the iterate moves). A stalled phase that made no
// relative progress over the previous one ends the run: NoDescentDirection
// when its backtracking underflowed, Stalled otherwise. Seeds arrive
// resized, r_min-stamped, and domain-checked.
QuenchResult quench_core(GhostSeries sA, GhostSeries sB, bool generalized,
                         const SolveConfig& cfg, const QuenchConfig& qcfg,
                         const QuenchLogger& log, double rmin_a, double rmin_b) {
    QuenchResult res;
    SolveConfig ecfg = cfg;  // evaluation config; tolerances tighten near A_tol
    bool tight = false;

    // A converged seed returns immediately, before paying for a map probe.
    double A_prev_phase;
    {
        OrbitSolution orb =
            generalized ? integrate_orbit(ecfg, sA, sB) : integrate_orbit(ecfg, sA);
        const double A0 = deviation(orb, qcfg);
        if (!std::isfinite(A0)) throw Error("deviation is not finite");
        if (A0 <= qcfg.A_tol) {
            if (log) {
                ParamMap pm0;
                pm0.init(sA, sB, generalized, rmin_a, rmin_b);
                emit_log(log, pm0, 0, A0, 0.0, 0.0,
                         std::vector<double>(pm0.dim(), 0.0));
            }
            orb.deviation = A0;
            res.orbit = std::move(orb);
            res.status = QuenchStatus::Converged;
            res.iterations = 0;
            return res;
        }
        A_prev_phase = A0;
    }

    // The map is probed at each phase origin and goes stale as the iterate
    // moves, so phases are capped: the map refresh costs about half of one
    // descent iteration, and descending in stale coordinates costs far more.
    constexpr int phase_len = 40;
    double A_logged = A_prev_phase;
    int iter_start = 0;
    DescentOutcome out;
    while (true) {
        ParamMap pm;
        pm.build(ecfg, qcfg, sA, sB, generalized, rmin_a, rmin_b);
        out = descend(pm, ecfg, tight, qcfg,
                      std::vector<double>(pm.dim(), 0.0), log, iter_start,
                      std::min(iter_start + phase_len, qcfg.max_iters),
                      A_logged);
        pm.decode(out.z, sA, sB);
        iter_start = out.iterations;
        res.status = out.status;
        res.iterations = out.iterations;
        if (out.status == QuenchStatus::Converged) break;
        if (out.iterations >= qcfg.max_iters) {
            res.status = QuenchStatus::MaxIters;
            break;
        }
        if (!(out.deviation < A_prev_phase * (1.0 - 1e-4))) {
            // A phase must buy a meaningful relative drop to earn a
            // rebuild; phases recycling sub-1e-4 gains are riding
            // integrator noise.
            if (out.underflow && !out.accepted_any)
                throw NoDescentDirection("backtracking step underflowed at A = " +
                                         std::to_string(out.deviation));
            res.status = QuenchStatus::Stalled;
            break;  // no progress with a fresh map: genuinely out of descent
        }
        A_prev_phase = out.deviation;
    }

    OrbitSolution orb =
        generalized ? integrate_orbit(ecfg, sA, sB) : integrate_orbit(ecfg, sA);
    orb.deviation = deviation(orb, qcfg);
    res.orbit = std::move(orb);
    return res;
}

}  // namespace

GradientResult gradient(const GhostSeries& series, const SolveConfig& cfg,
                        const QuenchConfig& qcfg) {
    qcfg.validate();
    cfg.validate();
    const std::size_t n = series.coeffs.size();

    const auto eval_k = [&](const GhostSeries& s) -> std::optional<double> {
        if (!(s.k0 > 0.0) || !domain_ok(s)) return std::nullopt;
        try {
            const OrbitSolution orb = integrate_orbit(cfg, s);
            const double dev = deviation(orb, qcfg);
            if (!std::isfinite(dev)) return std::nullopt;
            return dev;
        } catch (const Error&) {
            return std::nullopt;
        }
    };

    GradientResult res;
    res.dA_dk.assign(n, 0.0);
    res.available.assign(n, false);
    check_domain(series);
    const OrbitSolution base = integrate_orbit(cfg, series);
    res.A0 = deviation(base, qcfg);

    GhostSeries s = series;
    for (std::size_t i = 0; i < n; ++i) {
        const double k = series.coeffs[i];
        const double h = qcfg.fd_step * std::fmax(1.0, std::fabs(k));
        s.coeffs[i] = k + h;
        const std::optional<double> Ap = eval_k(s);
        s.coeffs[i] = k - h;
        const std::optional<double> Am = eval_k(s);
        s.coeffs[i] = k;
        if (Ap && Am) {
            res.dA_dk[i] = (*Ap - *Am) / (2.0 * h);
            res.available[i] = true;
        } else if (Ap) {
            res.dA_dk[i] = (*Ap - res.A0) / h;
            res.available[i] = true;
        } else if (Am) {
            res.dA_dk[i] = (res.A0 - *Am) / h;
            res.available[i] = true;
        }
    }
    return res;
}

QuenchResult quench(const GhostSeries& seed, const SolveConfig& cfg,
                    const QuenchConfig& qcfg, const QuenchLogger& log) {
    const auto t0 = std::chrono::steady_clock::now();
    qcfg.validate();
    cfg.validate();

    GhostSeries s = seed;
    const int n = std::max(static_cast<int>(seed.coeffs.size()), default_terms(cfg.r_c));
    s.coeffs.resize(static_cast<std::size_t>(n), 0.0);
    s.r_min_valid = 0.5 * cfg.r_c;
    check_domain(s);

    QuenchResult res =
        quench_core(s, s, false, cfg, qcfg, log, s.r_min_valid, s.r_min_valid);
    res.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::vector<ContinuationStage> continuation(const std::vector<double>& schedule,
                                            SolveConfig cfg, const QuenchConfig& qcfg,
                                            const QuenchLogger& log) {
    if (schedule.empty()) throw Error("continuation schedule is empty");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (!(schedule[i] < schedule[i - 1]))
            throw Error("continuation schedule must be strictly decreasing");

    std::vector<ContinuationStage> stages;
    stages.reserve(schedule.size());
    GhostSeries seed;  // cold start: F = 1
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        cfg.r_c = schedule[i];
        cfg.mode = OrbitMode::Symmetric;
        if (i > 0) {
            // The smaller r_c widens the validity domain downward, exposing
            // radii the previous stage never constrained; F may dip negative
            // there. Damping k_n by gamma^n evaluates F at r/gamma, which is
            // positive wherever the previous stage's domain check passed, so
            // dilate just enough to clear the new check.
            double gamma = schedule[i] / schedule[i - 1];
            for (int guard = 0; guard < 16; ++guard) {
                GhostSeries probe = seed;
                probe.r_min_valid = 0.5 * cfg.r_c;
                try {
                    check_domain(probe);
                    break;
                } catch (const Error&) {
                    double g = gamma;
                    for (double& k : seed.coeffs) {
                        k *= g;
                        g *= gamma;
                    }
                    gamma = 0.95;
                }
            }
        }
        double best_A = std::numeric_limits<double>::infinity();
        const QuenchLogger tracking = [&](const QuenchLogEntry& e, const GhostSeries& cur) {
            best_A = std::fmin(best_A, e.deviation);
            if (log) log(e, cur);
        };
        QuenchResult qr;
        bool stage_ok = false;
        std::string why = "descent stopped above the deviation tolerance";
        GhostSeries attempt_seed = seed;
        for (int attempt = 0; attempt < 3; ++attempt) {
            if (attempt > 0) {
                // A stall just above tolerance usually means the truncated
                // series is a term or two short of representing F at this
                // energy; widen the space and retry from the same seed.
                const auto base = std::max<std::size_t>(
                    attempt_seed.coeffs.size(),
                    static_cast<std::size_t>(default_terms(cfg.r_c)));
                const std::size_t grown = std::min<std::size_t>(base + 2, 18);
                if (grown <= attempt_seed.coeffs.size()) break;
                attempt_seed.coeffs.resize(grown, 0.0);
            }
            try {
                qr = quench(attempt_seed, cfg, qcfg, tracking);
            } catch (const Error& e) {
                why = e.what();
                continue;
            }
            if (qr.status == QuenchStatus::Converged &&
                qr.orbit.deviation <= qcfg.A_tol) {
                stage_ok = true;
                break;
            }
        }
        if (!stage_ok) throw StageFailed(i, cfg.r_c, best_A, why);
        seed = trim_trailing(qr.orbit.series_a, 1e-12);
        ContinuationStage st;
        st.r_c = cfg.r_c;
        st.n_significant = significant_terms(qr.orbit.series_a);
        st.result = std::move(qr);
        stages.push_back(std::move(st));
    }
    return stages;
}

ScalingReport fit_series_scaling(const GhostSeries& a, const GhostSeries& b) {
    if (!(a.k0 > 0.0) || !(b.k0 > 0.0)) throw Error("scaling fit needs positive k0");
    const auto mismatch = [&](double lam) {
        const GhostSeries s = scale_series(a, lam);
        const std::size_t n = std::max(s.coeffs.size(), b.coeffs.size());
        double num = (s.k0 - b.k0) * (s.k0 - b.k0);
        double den = b.k0 * b.k0;
        for (std::size_t i = 0; i < n; ++i) {
            const double sa = i < s.coeffs.size() ? s.coeffs[i] : 0.0;
            const double sb = i < b.coeffs.size() ? b.coeffs[i] : 0.0;
            num += (sa - sb) * (sa - sb);
            den += sb * sb;
        }
        return std::sqrt(num / den);
    };

    const double lam0 = std::sqrt(b.k0 / a.k0);
    double lo = 0.5 * lam0, hi = 2.0 * lam0;
    // golden-section minimum of the mismatch
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = mismatch(x1), f2 = mismatch(x2);
    for (int it = 0; it < 200 && (hi - lo) > 1e-14 * (1.0 + hi); ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = mismatch(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = mismatch(x2);
        }
    }
    ScalingReport rep;
    rep.lambda = 0.5 * (lo + hi);
    rep.w = (rep.lambda - 1.0) / (rep.lambda + 1.0);
    rep.residual = mismatch(rep.lambda);
    return rep;
}

GeneralizedResult generalized_quench(const GhostSeries& seed_a, const GhostSeries& seed_b,
                                     const SolveConfig& cfg, const QuenchConfig& qcfg,
                                     const QuenchLogger& log) {
    const auto t0 = std::chrono::steady_clock::now();
    qcfg.validate();
    SolveConfig gcfg = cfg;
    gcfg.mode = OrbitMode::Generalized;
    gcfg.validate();

    const int n = std::max({static_cast<int>(seed_a.coeffs.size()),
                            static_cast<int>(seed_b.coeffs.size()),
                            default_terms(gcfg.r_c)});
    const double r_min = 0.5 * std::fmin(gcfg.anchor_a(), gcfg.anchor_b());
    GhostSeries sa = seed_a, sb = seed_b;
    sa.coeffs.resize(static_cast<std::size_t>(n), 0.0);
    sb.coeffs.resize(static_cast<std::size_t>(n), 0.0);
    sa.r_min_valid = r_min;
    sb.r_min_valid = r_min;
    check_domain(sa);
    check_domain(sb);

    GeneralizedResult res;
    res.quench = quench_core(sa, sb, true, gcfg, qcfg, log, r_min, r_min);
    res.quench.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.scaling =
        fit_series_scaling(res.quench.orbit.series_a, res.quench.orbit.series_b);
    return res;
}

}  // namespace wf1d
