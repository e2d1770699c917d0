#pragma once

// Fixed points of the canonical flow, separatrix tracing, and action-angle
// data (J, omega_Q, period) for bound orbits of separable models.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "collective/dynamics.hpp"
#include "collective/models.hpp"

namespace collective {

enum class EquilibriumKind { o_point, x_point };

inline const char* to_string(EquilibriumKind k) { return k == EquilibriumKind::o_point ? "o_point" : "x_point"; }

/// Linearization of (q', p') = (dH/dp, -dH/dq), row-major [a b; c d].
using Mat2 = std::array<double, 4>;

struct Equilibrium {
    double q = 0.0;
    double p = 0.0;
    EquilibriumKind kind = EquilibriumKind::o_point;
    std::array<std::complex<double>, 2> eigenvalues{};
    double energy = 0.0;
    Mat2 linearization{};

    /// Growth rate of an x-point (positive real eigenvalue); 0 for o-points.
    double growth_rate() const { return std::max(eigenvalues[0].real(), eigenvalues[1].real()); }
};

struct Box {
    double q_min, q_max, p_min, p_max;

    bool contains(double q, double p, double slack = 0.0) const {
        return q >= q_min - slack && q <= q_max + slack && p >= p_min - slack && p <= p_max + slack;
    }
};

namespace detail {

inline double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

/// Hessian [Hqq Hqp; Hpq Hpp] by central differences of the analytic gradient.
inline Mat2 hessian(const ModelSpec& m, double q, double p, double tau = 0.0) {
    const double hq = fd_step(q), hp = fd_step(p);
    const double Hqq = (m.dH_dq(p, q + hq, tau) - m.dH_dq(p, q - hq, tau)) / (2 * hq);
    const double Hqp = (m.dH_dq(p + hp, q, tau) - m.dH_dq(p - hp, q, tau)) / (2 * hp);
    const double Hpq = (m.dH_dp(p, q + hq, tau) - m.dH_dp(p, q - hq, tau)) / (2 * hq);
    const double Hpp = (m.dH_dp(p + hp, q, tau) - m.dH_dp(p - hp, q, tau)) / (2 * hp);
    const double off = 0.5 * (Hqp + Hpq);
    return {Hqq, off, off, Hpp};
}

inline std::array<std::complex<double>, 2> eigenvalues(const Mat2& a) {
    const double tr = a[0] + a[3];
    const double det = a[0] * a[3] - a[1] * a[2];
    const std::complex<double> disc = std::sqrt(std::complex<double>(0.25 * tr * tr - det, 0.0));
    return {0.5 * tr + disc, 0.5 * tr - disc};
}

}  // namespace detail

/// Classifies the fixed point at (q, p) from the linearized canonical equations.
inline Equilibrium classify_equilibrium(const ModelSpec& model, double q, double p) {
    const Mat2 hess = detail::hessian(model, q, p);
    // q' = Hp, p' = -Hq  =>  A = [Hpq Hpp; -Hqq -Hqp]
    Equilibrium eq;
    eq.q = q;
    eq.p = p;
    eq.linearization = {hess[2], hess[3], -hess[0], -hess[1]};
    eq.eigenvalues = detail::eigenvalues(eq.linearization);
    const bool center = std::abs(eq.eigenvalues[0].real()) < 1e-8 && std::abs(eq.eigenvalues[1].real()) < 1e-8;
    eq.kind = center ? EquilibriumKind::o_point : EquilibriumKind::x_point;
    eq.energy = model.H(p, q, 0.0);
    return eq;
}

/// Newton on grad H = 0 from a grid_n x grid_n lattice of seeds; converged
/// roots inside the box are deduplicated within 1e-8 and sorted by (q, p).
inline std::vector<Equilibrium> find_equilibria(const ModelSpec& model, const Box& box, int grid_n = 16) {
    if (!(box.q_max > box.q_min) || !(box.p_max > box.p_min)) throw ConfigError("find_equilibria: degenerate box");
    if (grid_n < 4) throw ConfigError("find_equilibria: grid_n must be >= 4");
    const double max_step = 0.25 * std::hypot(box.q_max - box.q_min, box.p_max - box.p_min);

    std::vector<std::pair<double, double>> roots;
    for (int i = 0; i < grid_n; ++i) {
        for (int j = 0; j < grid_n; ++j) {
            double q = box.q_min + (box.q_max - box.q_min) * (i + 0.5) / grid_n;
            double p = box.p_min + (box.p_max - box.p_min) * (j + 0.5) / grid_n;
            bool ok = false;
            for (int it = 0; it < 100; ++it) {
                const double gq = model.dH_dq(p, q, 0.0), gp = model.dH_dp(p, q, 0.0);
                if (!std::isfinite(gq) || !std::isfinite(gp)) break;
                const Mat2 h = detail::hessian(model, q, p);
                const double det = h[0] * h[3] - h[1] * h[2];
                if (std::abs(det) < 1e-14) break;
                double dq = -(h[3] * gq - h[1] * gp) / det;
                double dp = -(-h[2] * gq + h[0] * gp) / det;
                const double len = std::hypot(dq, dp);
                if (len > max_step) {
                    dq *= max_step / len;
                    dp *= max_step / len;
                }
                q += dq;
                p += dp;
                if (len < 1e-15 * std::max(1.0, std::hypot(q, p))) {
                    ok = true;
                    break;
                }
            }
            if (!ok) {
                const double g = std::hypot(model.dH_dq(p, q, 0.0), model.dH_dp(p, q, 0.0));
                ok = std::isfinite(g) && g < 1e-12;
            }
            if (!ok || !box.contains(q, p, 1e-9)) continue;
            if (std::hypot(model.dH_dq(p, q, 0.0), model.dH_dp(p, q, 0.0)) >= 1e-10) continue;
            const bool dup = std::any_of(roots.begin(), roots.end(),
                                         [&](const auto& r) { return std::hypot(r.first - q, r.second - p) < 1e-8; });
            if (!dup) roots.emplace_back(q, p);
        }
    }
    std::sort(roots.begin(), roots.end());
    std::vector<Equilibrium> out;
    out.reserve(roots.size());
    for (const auto& [q, p] : roots) out.push_back(classify_equilibrium(model, q, p));
    return out;
}

/// Unit eigenvectors of an x-point's linearization: {unstable, stable}.
inline std::array<std::array<double, 2>, 2> eigenvectors(const Equilibrium& xp) {
    const auto& a = xp.linearization;
    auto vec = [&](double lambda) {
        std::array<double, 2> v;
        if (std::abs(a[1]) > std::abs(a[2]))
            v = {a[1], lambda - a[0]};
        else
            v = {lambda - a[3], a[2]};
        const double n = std::hypot(v[0], v[1]);
        if (n == 0.0) return std::array<double, 2>{1.0, 0.0};
        return std::array<double, 2>{v[0] / n, v[1] / n};
    };
    const double lam = xp.growth_rate();
    return {vec(lam), vec(-lam)};
}

// ---------------------------------------------------------------------------
// Basins and action-angle data

struct BasinInfo {
    double q_min = 0.0;  ///< bottom of the well
    double V_min = 0.0;
    double q_left_barrier = -std::numeric_limits<double>::infinity();
    double V_left_barrier = std::numeric_limits<double>::infinity();
    double q_right_barrier = std::numeric_limits<double>::infinity();
    double V_right_barrier = std::numeric_limits<double>::infinity();

    double top() const { return std::min(V_left_barrier, V_right_barrier); }
};

namespace detail {

inline void require_autonomous_separable(const ModelSpec& m, const char* who) {
    if (!m.separable || m.time_dependent)
        throw ConfigError(std::string(who) + " requires an autonomous separable model, got '" + m.id + "'");
}

/// Root of g on [a, b] (sign change assumed) to full double precision.
template <class F>
double bisect_root(F g, double a, double b) {
    auto tol = [](double x, double y) { return std::abs(x - y) <= 1e-15 * std::max(1.0, std::abs(x)); };
    std::uintmax_t iters = 200;
    auto [lo, hi] = boost::math::tools::bisect(g, a, b, tol, iters);
    return 0.5 * (lo + hi);
}

/// Marches from q in direction dir while dir * V' keeps the same sign as
/// `uphill`, and returns the point where the slope flips (bisected on V').
inline std::optional<double> march_to_slope_flip(const ModelSpec& m, double q, double dir, bool uphill,
                                                 double max_dist, double step = 1e-2) {
    auto slope = [&](double x) { return dir * m.force_gradient(x); };
    double prev = q;
    for (double d = step; d <= max_dist + 0.5 * step; d += step) {
        const double x = q + dir * d;
        const double s = slope(x);
        if (uphill ? s <= 0.0 : s >= 0.0) {
            if (slope(prev) == 0.0) return prev;
            return bisect_root([&](double y) { return m.force_gradient(y); }, std::min(prev, x), std::max(prev, x));
        }
        prev = x;
    }
    return std::nullopt;
}

}  // namespace detail

/// Locates the well containing q_inside: its bottom and the barrier on each side.
inline BasinInfo find_basin(const ModelSpec& model, double q_inside, double max_dist = 50.0) {
    detail::require_autonomous_separable(model, "find_basin");
    BasinInfo b;
    double q = q_inside;
    const double g = model.force_gradient(q);
    if (g != 0.0) {
        const double dir = g > 0.0 ? -1.0 : 1.0;
        auto qm = detail::march_to_slope_flip(model, q, dir, false, max_dist);
        if (!qm) throw NoClosedOrbitError("find_basin: potential unbounded below near q=" + std::to_string(q_inside));
        q = *qm;
    }
    b.q_min = q;
    b.V_min = model.potential(q);
    if (auto r = detail::march_to_slope_flip(model, q, +1.0, true, max_dist)) {
        b.q_right_barrier = *r;
        b.V_right_barrier = model.potential(*r);
    }
    if (auto l = detail::march_to_slope_flip(model, q, -1.0, true, max_dist)) {
        b.q_left_barrier = *l;
        b.V_left_barrier = model.potential(*l);
    }
    return b;
}

struct TurningPoints {
    double left, right;
};

/// Turning points V(q) = E of the bound orbit at energy E in the basin.
inline TurningPoints turning_points(const ModelSpec& model, const BasinInfo& basin, double E) {
    if (!(E > basin.V_min) || !(E < basin.top()))
        throw NoClosedOrbitError("no closed orbit at E=" + std::to_string(E) + " (bound range " +
                                 std::to_string(basin.V_min) + ".." + std::to_string(basin.top()) + ")");
    auto f = [&](double q) { return model.potential(q) - E; };
    auto side = [&](double dir, double barrier) {
        double far = barrier;
        if (!std::isfinite(far)) {
            double d = 1.0;
            while (f(basin.q_min + dir * d) < 0.0) {
                d *= 2.0;
                if (d > 1e6) throw NoClosedOrbitError("orbit unbounded");
            }
            far = basin.q_min + dir * d;
        }
        return detail::bisect_root(f, std::min(basin.q_min, far), std::max(basin.q_min, far));
    };
    return {side(-1.0, basin.q_left_barrier), side(+1.0, basin.q_right_barrier)};
}

namespace detail {

inline double gk_integrate(const std::function<double(double)>& f, double a, double b) {
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 12, 1e-12, &err);
}

/// Integral over [q1, q2] of g(q, E - V(q)) with both endpoints substituted
/// q = q1 + u^2 and q = q2 - u^2, which removes the square-root singularity.
template <class G>
double turning_point_integral(const ModelSpec& m, double E, double q1, double q2, G g) {
    const double mid = 0.5 * (q1 + q2);
    const double ul = std::sqrt(mid - q1), ur = std::sqrt(q2 - mid);
    auto left = [&](double u) {
        const double q = q1 + u * u;
        return 2.0 * u * g(q, u, std::max(0.0, E - m.potential(q)), m.force_gradient(q1));
    };
    auto right = [&](double u) {
        const double q = q2 - u * u;
        return 2.0 * u * g(q, u, std::max(0.0, E - m.potential(q)), -m.force_gradient(q2));
    };
    return gk_integrate(left, 0.0, ul) + gk_integrate(right, 0.0, ur);
}

/// J = (1/2 pi) closed integral p dq = (1/pi) int_{q1}^{q2} sqrt(2(E - V)) dq.
inline double action(const ModelSpec& m, double E, const TurningPoints& tp) {
    return turning_point_integral(m, E, tp.left, tp.right,
                                  [](double, double, double kinetic, double) { return std::sqrt(2.0 * kinetic); }) /
           std::numbers::pi;
}

/// T = 2 int_{q1}^{q2} dq / sqrt(2(E - V)).
inline double period(const ModelSpec& m, double E, const TurningPoints& tp) {
    return 2.0 * turning_point_integral(m, E, tp.left, tp.right, [](double, double u, double kinetic, double slope) {
               // 2u * 1/sqrt(2 K);  K ~ slope * u^2 near the endpoint
               if (kinetic <= 0.0) return slope > 0.0 ? 1.0 / (u * std::sqrt(2.0 * slope)) : 0.0;
               return 1.0 / std::sqrt(2.0 * kinetic);
           });
}

}  // namespace detail

struct OrbitSummary {
    double E = 0.0;
    double J = 0.0;
    double omega_Q = 0.0;      ///< 2 pi / period
    double period = 0.0;
    double omega_dEdJ = 0.0;   ///< independent estimate by central difference of J(E)
    double q_left = 0.0;
    double q_right = 0.0;
};

/// Action J(E) of the bound orbit in the basin containing q_inside.
inline double orbit_action(const ModelSpec& model, const BasinInfo& basin, double E) {
    return detail::action(model, E, turning_points(model, basin, E));
}

inline OrbitSummary orbit_summary(const ModelSpec& model, const BasinInfo& basin, double E) {
    const TurningPoints tp = turning_points(model, basin, E);
    OrbitSummary out;
    out.E = E;
    out.q_left = tp.left;
    out.q_right = tp.right;
    out.J = detail::action(model, E, tp);
    out.period = detail::period(model, E, tp);
    out.omega_Q = 2.0 * std::numbers::pi / out.period;

    double h = std::min({1e-4, 0.25 * (E - basin.V_min), 0.25 * (basin.top() - E)});
    const double Jp = orbit_action(model, basin, E + h);
    const double Jm = orbit_action(model, basin, E - h);
    out.omega_dEdJ = 2.0 * h / (Jp - Jm);
    return out;
}

inline OrbitSummary orbit_summary(const ModelSpec& model, double E, double q_inside) {
    return orbit_summary(model, find_basin(model, q_inside), E);
}

// ---------------------------------------------------------------------------
// Separatrix

struct SeparatrixInfo {
    Equilibrium xpoint;
    double E_s = 0.0;
    /// Polylines in (q, p): unstable+, unstable-, stable+, stable-.
    std::vector<std::vector<std::array<double, 2>>> branches;
    std::vector<std::string> branch_names;
};

/// Traces the four manifold branches leaving the x-point by RK4 in arclength,
/// starting 1e-6 off the equilibrium along each eigenvector, until the branch
/// reaches another hyperbolic point, returns to xp, or leaves the box.
inline SeparatrixInfo trace_separatrix(const ModelSpec& model, const Equilibrium& xp, double ds = 1e-3,
                                       std::optional<Box> box = std::nullopt, double max_length = 100.0) {
    if (xp.kind != EquilibriumKind::x_point) throw ConfigError("trace_separatrix: equilibrium is not an x-point");
    if (!(ds > 0.0)) throw ConfigError("trace_separatrix: ds must be > 0");
    const Box bounds = box.value_or(Box{xp.q - 10.0, xp.q + 10.0, xp.p - 10.0, xp.p + 10.0});
    const double lam = xp.growth_rate();
    const double offset = 1e-6;
    const double stop_radius = std::max(2.0 * ds, 1e-4);
    const auto vecs = eigenvectors(xp);

    SeparatrixInfo info;
    info.xpoint = xp;
    info.E_s = xp.energy;

    auto trace = [&](std::array<double, 2> v, double sign, double time_dir) {
        std::vector<std::array<double, 2>> line;
        double q = xp.q + sign * offset * v[0];
        double p = xp.p + sign * offset * v[1];
        line.push_back({xp.q, xp.p});
        line.push_back({q, p});
        auto field = [&](double qq, double pp, double& dq, double& dp) {
            const double fq = model.dH_dp(pp, qq, 0.0), fp = -model.dH_dq(pp, qq, 0.0);
            const double n = std::hypot(fq, fp);
            dq = n > 0 ? time_dir * fq / n : 0.0;
            dp = n > 0 ? time_dir * fp / n : 0.0;
        };
        double travelled = 0.0;
        while (travelled < max_length) {
            double k1q, k1p, k2q, k2p, k3q, k3p, k4q, k4p;
            field(q, p, k1q, k1p);
            field(q + 0.5 * ds * k1q, p + 0.5 * ds * k1p, k2q, k2p);
            field(q + 0.5 * ds * k2q, p + 0.5 * ds * k2p, k3q, k3p);
            field(q + ds * k3q, p + ds * k3p, k4q, k4p);
            q += ds / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q);
            p += ds / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
            travelled += ds;
            line.push_back({q, p});
            if (!bounds.contains(q, p)) break;
            const double speed = std::hypot(model.dH_dp(p, q, 0.0), model.dH_dq(p, q, 0.0));
            if (travelled > 2.0 * stop_radius && speed < lam * stop_radius) break;
        }
        return line;
    };
    info.branches.push_back(trace(vecs[0], +1.0, +1.0));
    info.branches.push_back(trace(vecs[0], -1.0, +1.0));
    info.branches.push_back(trace(vecs[1], +1.0, -1.0));
    info.branches.push_back(trace(vecs[1], -1.0, -1.0));
    info.branch_names = {"unstable_plus", "unstable_minus", "stable_plus", "stable_minus"};
    return info;
}

struct SeparatrixSlowdown {
    std::vector<double> eps;
    std::vector<OrbitSummary> orbits;
    double slope = 0.0;      ///< d period / d ln(1/eps)
    double intercept = 0.0;
    double r_squared = 0.0;
    bool omega_strictly_decreasing = false;
};

struct LinearFit {
    double slope, intercept, r_squared;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double slope = sxy / sxx;
    const double r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return {slope, my - slope * mx, r2};
}

/// omega_Q on the ladder E = E_s - eps (ordered as given) for the basin
/// containing q_inside, plus a linear fit of period against ln(1/eps).
inline SeparatrixSlowdown omega_at_separatrix(const ModelSpec& model, const Equilibrium& xp,
                                              const std::vector<double>& eps_list, double q_inside) {
    for (double e : eps_list)
        if (!(e > 0.0)) throw ConfigError("omega_at_separatrix: eps must be > 0");
    const BasinInfo basin = find_basin(model, q_inside);
    SeparatrixSlowdown out;
    out.eps = eps_list;
    std::vector<double> x, y;
    for (double e : eps_list) {
        out.orbits.push_back(orbit_summary(model, basin, xp.energy - e));
        x.push_back(std::log(1.0 / e));
        y.push_back(out.orbits.back().period);
    }
    if (x.size() >= 2) {
        const auto fit = linear_fit(x, y);
        out.slope = fit.slope;
        out.intercept = fit.intercept;
        out.r_squared = fit.r_squared;
    }
    // strictly decreasing toward the separatrix, i.e. as eps shrinks
    std::vector<std::size_t> idx(eps_list.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return eps_list[a] > eps_list[b]; });
    out.omega_strictly_decreasing = true;
    for (std::size_t k = 1; k < idx.size(); ++k)
        if (!(out.orbits[idx[k]].omega_Q < out.orbits[idx[k - 1]].omega_Q)) out.omega_strictly_decreasing = false;
    return out;
}

/// m_Q = omega_Q^-2; +infinity at omega_Q = 0.
inline double effective_mass(double omega_Q) {
    if (std::isnan(omega_Q) || omega_Q < 0.0) throw ConfigError("effective_mass: omega_Q must be >= 0");
    if (omega_Q == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / (omega_Q * omega_Q);
}

}  // namespace collective
