#include "wf1d/series.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "wf1d/errors.hpp"

namespace wf1d {

namespace {

// sum_n k_n u^n with u = 1/r, by Horner in u.
inline double tail_sum(const std::vector<double>& k, double u) noexcept {
    double acc = 0.0;
    for (std::size_t i = k.size(); i-- > 0;) acc = (acc + k[i]) * u;
    return acc;
}

}  // namespace

double eval_F_raw(const GhostSeries& s, double r) noexcept {
    if (!(r > 0.0)) return std::nan("");
    return s.k0 - tail_sum(s.coeffs, 1.0 / r);
}

double eval_F(const GhostSeries& s, double r) {
    if (!(r > 0.0)) throw NonPositiveRadius(r);
    const double F = s.k0 - tail_sum(s.coeffs, 1.0 / r);
    if (!(F > 0.0)) throw NonPositiveF(r, F);
    return F;
}

double eval_dF(const GhostSeries& s, double r) {
    if (!(r > 0.0)) throw NonPositiveRadius(r);
    const double u = 1.0 / r;
    double acc = 0.0;
    for (std::size_t i = s.coeffs.size(); i-- > 0;)
        acc = (acc + (double)(i + 1) * s.coeffs[i]) * u;
    return acc * u;   // sum n k_n u^(n+1)
}

void eval_F_dF(const GhostSeries& s, double r, double& F, double& dF) noexcept {
    const double u = 1.0 / r;
    double f = 0.0, d = 0.0;
    for (std::size_t i = s.coeffs.size(); i-- > 0;) {
        f = (f + s.coeffs[i]) * u;
        d = (d + (double)(i + 1) * s.coeffs[i]) * u;
    }
    F = s.k0 - f;
    dF = d * u;
}

GhostSeries scale_series(const GhostSeries& s, double lambda) {
    if (!(lambda > 0.0)) throw NonPositiveLambda(lambda);
    GhostSeries out;
    out.k0 = lambda * lambda * s.k0;
    out.coeffs.resize(s.coeffs.size());
    for (std::size_t n = 1; n <= s.coeffs.size(); ++n)
        out.coeffs[n - 1] = std::pow(lambda, 2.0 - (double)n) * s.coeffs[n - 1];
    out.r_min_valid = s.r_min_valid / lambda;
    return out;
}

bool domain_ok(const GhostSeries& s, double r_max, std::size_t n_samples) {
    if (!(s.r_min_valid > 0.0) || !(r_max > s.r_min_valid)) return false;
    const double lg0 = std::log(s.r_min_valid), lg1 = std::log(r_max);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double r = std::exp(lg0 + (lg1 - lg0) * (double)i / (double)(n_samples - 1));
        if (!(eval_F_raw(s, r) > 0.0)) return false;
    }
    return true;
}

void check_domain(const GhostSeries& s, double r_max, std::size_t n_samples) {
    if (!(s.r_min_valid > 0.0) || !(r_max > s.r_min_valid))
        throw DomainError("series r_min_valid/r_max sampling range is empty");
    const double lg0 = std::log(s.r_min_valid), lg1 = std::log(r_max);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double r = std::exp(lg0 + (lg1 - lg0) * (double)i / (double)(n_samples - 1));
        const double F = eval_F_raw(s, r);
        if (!(F > 0.0))
            throw DomainError("F(r) = " + std::to_string(F) + " <= 0 at sample radius r = " +
                              std::to_string(r));
    }
}

std::string series_to_text(const GhostSeries& s) {
    char line[64];
    std::string out;
    std::snprintf(line, sizeof line, "k0 = %.17g\n", s.k0);
    out += line;
    for (std::size_t n = 1; n <= s.coeffs.size(); ++n) {
        std::snprintf(line, sizeof line, "k%zu = %.17g\n", n, s.coeffs[n - 1]);
        out += line;
    }
    return out;
}

GhostSeries series_from_text(const std::string& text, double r_min_valid) {
    GhostSeries s;
    s.r_min_valid = r_min_valid;
    bool have_k0 = false;
    std::vector<bool> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw.substr(0, raw.find('#'));
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("series line " + std::to_string(lineno) + ": expected 'k<n> = <float>'");
        std::string key = line.substr(0, eq);
        key.erase(key.find_last_not_of(" \t") + 1);
        const std::string val = line.substr(eq + 1);

        std::size_t idx = 0;
        if (key.size() < 2 || key[0] != 'k')
            throw Error("series line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        try {
            std::size_t used = 0;
            idx = std::stoul(key.substr(1), &used);
            if (used != key.size() - 1) throw std::invalid_argument(key);
        } catch (const std::exception&) {
            throw Error("series line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        if (idx > GhostSeries::max_terms)
            throw Error("series line " + std::to_string(lineno) + ": k" + std::to_string(idx) +
                        " exceeds the maximum of " + std::to_string(GhostSeries::max_terms) +
                        " terms");

        double x = 0.0;
        try {
            std::size_t used = 0;
            x = std::stod(val, &used);
            while (used < val.size() && (val[used] == ' ' || val[used] == '\t' || val[used] == '\r'))
                ++used;
            if (used != val.size()) throw std::invalid_argument(val);
        } catch (const std::exception&) {
            throw Error("series line " + std::to_string(lineno) + ": bad float '" + val + "'");
        }

        if (idx == 0) {
            if (have_k0) throw Error("series line " + std::to_string(lineno) + ": duplicate k0");
            have_k0 = true;
            s.k0 = x;
        } else {
            if (seen.size() < idx) seen.resize(idx, false);
            if (seen[idx - 1])
                throw Error("series line " + std::to_string(lineno) + ": duplicate k" +
                            std::to_string(idx));
            seen[idx - 1] = true;
            if (s.coeffs.size() < idx) s.coeffs.resize(idx, 0.0);
            s.coeffs[idx - 1] = x;
        }
    }
    if (!have_k0) throw Error("series text is missing the k0 line");
    for (std::size_t n = 0; n < seen.size(); ++n)
        if (!seen[n]) throw Error("series text is missing k" + std::to_string(n + 1));
    return s;
}

}  // namespace wf1d
