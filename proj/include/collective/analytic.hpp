#pragma once

// Complex-analytic Hamiltonians H(beta): critical points beta* (H' = 0),
// geodesic flow along level sets of Re H, and Taylor coefficients of
// S(beta) = i * integral H dbeta.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "collective/models.hpp"

namespace collective {

struct BetaStar {
    cplx beta;
    cplx H_at_star;
    int multiplicity = 1;
};

struct ComplexBox {
    double re_min, re_max, im_min, im_max;
};

namespace detail {

/// Number of zeros of f inside the circle |beta - c| = r (argument principle).
inline int winding_zeros(const std::function<cplx(cplx)>& f, cplx c, double r, int samples = 512) {
    double total = 0.0;
    cplx prev = f(c + r);
    for (int k = 1; k <= samples; ++k) {
        const double th = 2.0 * std::numbers::pi * k / samples;
        const cplx cur = f(c + std::polar(r, th));
        total += std::arg(cur / prev);
        prev = cur;
    }
    return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

}  // namespace detail

/// Roots of H'(beta) = 0 by grid-seeded Newton, deduplicated within 1e-10.
inline std::vector<BetaStar> find_beta_star(const AnalyticHamiltonian& h, const ComplexBox& box, int grid_n = 12) {
    if (!(box.re_max > box.re_min) || !(box.im_max > box.im_min)) throw ConfigError("find_beta_star: degenerate box");
    auto d2 = [&](cplx b) {
        const double step = 1e-5 * std::max(1.0, std::abs(b));
        return (h.dH(b + step) - h.dH(b - step)) / (2.0 * step);
    };
    std::vector<cplx> roots;
    for (int i = 0; i < grid_n; ++i) {
        for (int j = 0; j < grid_n; ++j) {
            cplx b(box.re_min + (box.re_max - box.re_min) * (i + 0.5) / grid_n,
                   box.im_min + (box.im_max - box.im_min) * (j + 0.5) / grid_n);
            bool ok = false;
            for (int it = 0; it < 200; ++it) {
                if (h.distance_to_pole(b) < 1e-8) break;
                const cplx g = h.dH(b), gg = d2(b);
                if (!std::isfinite(std::abs(g)) || !std::isfinite(std::abs(gg)) || std::abs(gg) == 0.0) {
                    if (std::abs(g) == 0.0) ok = true;
                    break;
                }
                const cplx step = g / gg;
                b -= step;
                if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(b))) {
                    ok = true;
                    break;
                }
            }
            if (!ok || h.distance_to_pole(b) < 1e-8) continue;
            if (!(std::abs(h.dH(b)) < 1e-10)) continue;
            if (b.real() < box.re_min || b.real() > box.re_max || b.imag() < box.im_min || b.imag() > box.im_max)
                continue;
            if (std::none_of(roots.begin(), roots.end(), [&](cplx r) { return std::abs(r - b) < 1e-10; }))
                roots.push_back(b);
        }
    }
    std::sort(roots.begin(), roots.end(),
              [](cplx a, cplx b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
    std::vector<BetaStar> out;
    for (cplx r : roots) {
        double rad = 1e-3;
        for (cplx other : roots)
            if (other != r) rad = std::min(rad, 0.25 * std::abs(other - r));
        rad = std::min(rad, 0.25 * h.distance_to_pole(r));
        out.push_back({r, h.value(r), std::max(1, detail::winding_zeros(h.dH, r, rad))});
    }
    return out;
}

/// Integrates beta' = i * conj(H'(beta)) and returns beta at t = 0, dt, ..., n dt.
/// Along the path dH/dt = i |H'|^2, so Re H is conserved and Im H never
/// decreases. RK4 with step doubling: each output step is split into substeps
/// whose local error estimate stays below 1e-13 (1 + |beta|) and which keep
/// Re H and the sign of the change in Im H. Near a pole
/// (or a finite-time escape to infinity) the substeps shrink until the path
/// comes within 1e-12 of the pole or needs more than 1e6 of them.
inline std::vector<cplx> geodesic_flow(const AnalyticHamiltonian& h, cplx beta0, double dt, int n) {
    if (!(dt > 0.0) || n < 0) throw ConfigError("geodesic_flow: dt must be > 0 and n >= 0");
    const cplx I(0.0, 1.0);
    auto fail = [](cplx b, const std::string& why) {
        throw DivergedError("geodesic_flow: " + why, PhaseState{b.imag(), b.real(), 0.0});
    };
    auto check = [&](cplx b) {
        if (!std::isfinite(b.real()) || !std::isfinite(b.imag())) fail(b, "non-finite state");
        if (h.distance_to_pole(b) < 1e-12) fail(b, "passed within 1e-12 of a pole");
    };
    auto f = [&](cplx b) { return I * std::conj(h.dH(b)); };
    auto rk4 = [&](cplx b, double s) {
        const cplx k1 = f(b);
        const cplx k2 = f(b + 0.5 * s * k1);
        const cplx k3 = f(b + 0.5 * s * k2);
        const cplx k4 = f(b + s * k3);
        return b + s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    };
    std::vector<cplx> path;
    path.reserve(static_cast<std::size_t>(n) + 1);
    check(beta0);
    path.push_back(beta0);
    cplx b = beta0;
    double s = dt;
    for (int k = 0; k < n; ++k) {
        double left = dt;
        long substeps = 0;
        while (left > 0.0) {
            if (++substeps > 1000000) fail(b, "step size collapsed");
            const double step = std::min(s, left);
            const cplx full = rk4(b, step);
            const cplx half = rk4(rk4(b, 0.5 * step), 0.5 * step);
            const double err = std::abs(half - full) / 15.0;
            const double tol = 1e-13 * (1.0 + std::abs(b));
            // a step that jumps past a pole shows up as a broken invariant
            const cplx H0 = h.H(b), H1 = h.H(half);
            const bool jumped = std::abs(H1.real() - H0.real()) > 1e-9 * (1.0 + std::abs(H0)) || H1.imag() < H0.imag() - 1e-13 * (1.0 + std::abs(H0));
            if (!std::isfinite(err) || err > tol || jumped) {
                s = 0.5 * step;
                if (h.distance_to_pole(b) < 1e-12 || s < 1e-300) fail(b, "passed within 1e-12 of a pole");
                continue;
            }
            b = half + (half - full) / 15.0;
            check(b);
            left = step < left ? left - step : 0.0;
            if (err < tol / 64.0) s = std::min(2.0 * step, dt);
        }
        path.push_back(b);
    }
    return path;
}

/// d^m S / dbeta^m for m = 1..m_max with S(beta) = i * integral H dbeta, so
/// S_m = i * H^{(m-1)}. Derivatives come from the Cauchy integral on a circle
/// of the given radius (trapezoidal rule, exponentially convergent).
inline std::vector<cplx> smatrix_coeffs(const AnalyticHamiltonian& h, cplx beta0, int m_max, double radius = 0.0,
                                        int samples = 128) {
    if (m_max < 1 || m_max > 12) throw ConfigError("smatrix_coeffs: m_max must be in 1..12");
    const double pole_dist = h.distance_to_pole(beta0);
    if (radius <= 0.0) radius = std::min(1.0, 0.5 * pole_dist);
    if (!(radius < pole_dist)) throw DomainError("smatrix_coeffs: Cauchy disk touches a pole");
    const cplx I(0.0, 1.0);
    std::vector<cplx> values(samples);
    for (int k = 0; k < samples; ++k) values[k] = h.H(beta0 + std::polar(radius, 2.0 * std::numbers::pi * k / samples));
    std::vector<cplx> out;
    double factorial = 1.0;
    for (int n = 0; n < m_max; ++n) {
        if (n > 0) factorial *= n;
        cplx acc = 0.0;
        for (int k = 0; k < samples; ++k) acc += values[k] * std::polar(1.0, -2.0 * std::numbers::pi * n * k / samples);
        out.push_back(I * acc / static_cast<double>(samples) * factorial / std::pow(radius, n));
    }
    return out;
}

}  // namespace collective
