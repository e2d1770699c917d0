#pragma once

// Stationary Hamilton-Jacobi solutions for 1-DOF models: the conservative
// generating function S(q) = int p(q; E) dq built along characteristics, its
// finite-difference residual, and a discounted ("viscous") variant solved on a
// grid by upwind fixed-point iteration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "collective/dynamics.hpp"
#include "collective/equilibria.hpp"
#include "collective/parallel.hpp"

namespace collective {

enum class Branch { upper, lower };

inline const char* to_string(Branch b) { return b == Branch::upper ? "upper" : "lower"; }

inline Branch branch_from_string(const std::string& s) {
    if (s == "upper") return Branch::upper;
    if (s == "lower") return Branch::lower;
    throw ConfigError("unknown branch '" + s + "' (expected upper|lower)");
}

struct GeneratingFunction {
    std::vector<double> q_grid;
    std::vector<double> S_values;
    std::vector<double> dS_dq;  ///< exact p(q) for characteristics, centered differences otherwise
    double E = 0.0;
    Branch branch = Branch::upper;
    bool turning_left = false;   ///< q_grid.front() is a turning point
    bool turning_right = false;
    bool rotation = false;       ///< one period of a rotating orbit
    // viscous solves only
    double nu = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;

    std::size_t size() const { return q_grid.size(); }
};

struct HJBConfig {
    double nu = 0.0;
    int grid_n = 4096;
    int max_iter = 100000;
    double tol = 1e-12;
    double q_min = -2.0;  ///< viscous grid extent
    double q_max = 2.0;

    void validate() const {
        if (!(nu >= 0.0)) throw ConfigError("hjb: nu must be >= 0");
        if (!(tol > 0.0)) throw ConfigError("hjb: tol must be > 0");
        if (grid_n < 8) throw ConfigError("hjb: grid_n must be >= 8");
        if (max_iter < 1) throw ConfigError("hjb: max_iter must be >= 1");
        if (!(q_max > q_min)) throw ConfigError("hjb: q_max must exceed q_min");
    }
};

namespace detail {

/// |p| on the energy shell H(p, q) = E, or 0 where the shell is empty.
inline double shell_momentum(const ModelSpec& m, double q, double E) {
    const double K = E - m.potential(q);
    if (K <= 0.0) return 0.0;
    if (m.separable) return std::sqrt(2.0 * K);
    auto g = [&](double p) { return m.H(p, q, 0.0) - E; };
    double hi = 1.0;
    while (g(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1e12) throw DomainError("energy shell unbounded in p");
    }
    return bisect_root(g, 0.0, hi);
}

/// Edge of the allowed set {V <= E} going from q in direction dir, or
/// nullopt when V stays below E up to max_dist.
inline std::optional<double> allowed_edge(const ModelSpec& m, double q, double dir, double E, double max_dist) {
    auto f = [&](double x) { return m.potential(x) - E; };
    double prev = q, step = 1e-2, d = 0.0;
    while (d < max_dist) {
        d += step;
        const double x = q + dir * d;
        if (f(x) > 0.0) return bisect_root(f, std::min(prev, x), std::max(prev, x));
        prev = x;
        if (d > 50.0) step *= 2.0;
    }
    return std::nullopt;
}

/// Second-order first derivative at interior node i of a nonuniform grid.
inline double centered_derivative(const std::vector<double>& x, const std::vector<double>& y, std::size_t i) {
    const double h1 = x[i] - x[i - 1], h2 = x[i + 1] - x[i];
    return (h1 * h1 * y[i + 1] - h2 * h2 * y[i - 1] + (h2 * h2 - h1 * h1) * y[i]) / (h1 * h2 * (h1 + h2));
}

}  // namespace detail

/// S(q) = int p dq on the chosen branch over the allowed interval containing
/// q_inside (or one period of a rotation when the coordinate is periodic and
/// E clears every barrier). Bound intervals use the grid
/// q = q1 + (q2 - q1)(1 - cos theta)/2, which clusters nodes at the turning
/// points; S is accumulated by Gauss quadrature in theta per cell.
inline GeneratingFunction solve_characteristics(const ModelSpec& model, double E, Branch branch, int grid_n = 4096,
                                                double q_inside = 0.0) {
    detail::require_autonomous_separable(model, "solve_characteristics");
    if (grid_n < 8) throw ConfigError("solve_characteristics: grid_n must be >= 8");
    if (!std::isfinite(E)) throw ConfigError("solve_characteristics: E must be finite");

    double q_start = q_inside;
    if (!(model.potential(q_start) < E)) {
        // fall back to the bottom of the surrounding well
        const BasinInfo b = find_basin(model, q_inside);
        if (!(b.V_min < E))
            throw StructuralAbsenceError("solve_characteristics: no classically allowed region at E=" +
                                         std::to_string(E));
        q_start = b.q_min;
    }

    GeneratingFunction out;
    out.E = E;
    out.branch = branch;
    const double max_dist = model.q_period ? *model.q_period : 1e6;
    auto right = detail::allowed_edge(model, q_start, +1.0, E, max_dist);
    auto left = detail::allowed_edge(model, q_start, -1.0, E, max_dist);
    const int n = grid_n;
    out.q_grid.resize(n);
    out.S_values.assign(n, 0.0);
    out.dS_dq.resize(n);
    const double sgn = branch == Branch::upper ? 1.0 : -1.0;
    boost::math::quadrature::gauss<double, 10> gauss;

    if (left && right) {
        const double q1 = *left, q2 = *right;
        out.turning_left = out.turning_right = true;
        auto q_of = [&](double th) { return q1 + 0.5 * (q2 - q1) * (1.0 - std::cos(th)); };
        const double dth = std::numbers::pi / (n - 1);
        for (int i = 0; i < n; ++i) out.q_grid[i] = q_of(i * dth);
        out.q_grid.front() = q1;
        out.q_grid.back() = q2;
        auto integrand = [&](double th) {
            return detail::shell_momentum(model, q_of(th), E) * 0.5 * (q2 - q1) * std::sin(th);
        };
        for (int i = 1; i < n; ++i)
            out.S_values[i] = out.S_values[i - 1] + sgn * gauss.integrate(integrand, (i - 1) * dth, i * dth);
    } else if (model.q_period && !left && !right) {
        const double L = *model.q_period;
        const double q0 = q_start - 0.5 * L;
        out.rotation = true;
        for (int i = 0; i < n; ++i) out.q_grid[i] = q0 + L * i / (n - 1);
        auto integrand = [&](double q) { return detail::shell_momentum(model, q, E); };
        for (int i = 1; i < n; ++i)
            out.S_values[i] = out.S_values[i - 1] + sgn * gauss.integrate(integrand, out.q_grid[i - 1], out.q_grid[i]);
    } else {
        throw StructuralAbsenceError("solve_characteristics: motion at E=" + std::to_string(E) + " is unbounded");
    }
    for (int i = 0; i < n; ++i) out.dS_dq[i] = sgn * detail::shell_momentum(model, out.q_grid[i], E);
    return out;
}

/// max |H(S'(q), q) - E| over interior nodes, with S' from centered
/// differences of S_values. Nodes within 2 cells of a turning point are
/// skipped since S' has a square-root singularity there.
inline double hjb_residual(const ModelSpec& model, const GeneratingFunction& S) {
    const std::size_t n = S.size();
    if (n < 3 || S.S_values.size() != n) return 0.0;
    const std::size_t lo = S.turning_left ? 3 : 1;
    const std::size_t hi = S.turning_right ? n - 3 : n - 1;
    double r = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double dS = detail::centered_derivative(S.q_grid, S.S_values, i);
        r = std::max(r, std::abs(model.H(dS, S.q_grid[i], 0.0) - S.E));
    }
    return r;
}

/// Closed-orbit integral of S' dq: along the upper branch from q1 to q2,
/// then back along the lower branch. Equals 2 pi J.
inline double closed_orbit_integral(const GeneratingFunction& upper, const GeneratingFunction& lower) {
    if (upper.size() < 2 || lower.size() < 2) throw ConfigError("closed_orbit_integral: empty branch");
    const double up = upper.S_values.back() - upper.S_values.front();
    const double down = lower.S_values.front() - lower.S_values.back();
    return up + down;
}

/// Upper then lower branch joined at the turning points: a closed loop
/// q1 -> q2 -> q1 with S accumulated continuously.
struct ClosedOrbitS {
    std::vector<double> q, p, S;
};

inline ClosedOrbitS concatenate_branches(const GeneratingFunction& upper, const GeneratingFunction& lower) {
    if (!upper.turning_left || !upper.turning_right || upper.size() != lower.size())
        throw ConfigError("concatenate_branches: need matching bound-orbit branches");
    ClosedOrbitS out;
    const std::size_t n = upper.size();
    for (std::size_t i = 0; i < n; ++i) {
        out.q.push_back(upper.q_grid[i]);
        out.p.push_back(upper.dS_dq[i]);
        out.S.push_back(upper.S_values[i] - upper.S_values.front());
    }
    const double offset = out.S.back();
    for (std::size_t k = 1; k < n; ++k) {
        const std::size_t i = n - 1 - k;
        out.q.push_back(lower.q_grid[i]);
        out.p.push_back(lower.dS_dq[i]);
        out.S.push_back(offset + lower.S_values[i] - lower.S_values.back());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Discounted (viscous) variant

/// Solves nu V = R(q) + f(q) V'(q) with f = -V_bare'(q) on a uniform grid over
/// [cfg.q_min, cfg.q_max]. Upwind differences; alternating Gauss-Seidel
/// sweeps until the largest update falls below cfg.tol.
inline GeneratingFunction solve_viscous(const ModelSpec& model, const std::function<double(double)>& R,
                                        const HJBConfig& cfg) {
    cfg.validate();
    detail::require_autonomous_separable(model, "solve_viscous");
    if (!(cfg.nu > 0.0)) throw ConfigError("solve_viscous: nu must be > 0");
    if (!R) throw ConfigError("solve_viscous: reward missing");

    const int n = cfg.grid_n;
    const double h = (cfg.q_max - cfg.q_min) / (n - 1);
    const double nu = cfg.nu;
    GeneratingFunction out;
    out.nu = nu;
    out.q_grid.resize(n);
    std::vector<double> r(n), f(n);
    for (int i = 0; i < n; ++i) {
        out.q_grid[i] = cfg.q_min + h * i;
        r[i] = R(out.q_grid[i]);
        f[i] = -model.force_gradient(out.q_grid[i]);
    }
    std::vector<double>& V = out.S_values;
    V.resize(n);
    for (int i = 0; i < n; ++i) V[i] = r[i] / nu;

    auto update = [&](int i) {
        int j = f[i] > 0.0 ? i + 1 : (f[i] < 0.0 ? i - 1 : i);
        if (j < 0 || j >= n) j = i;  // outflow boundary: drop the transport term
        const double a = j == i ? 0.0 : std::abs(f[i]) / h;
        const double v = V[j] + (r[i] - nu * V[j]) / (nu + a);
        const double d = std::abs(v - V[i]);
        V[i] = v;
        return d;
    };
    bool converged = false;
    for (int it = 0; it < cfg.max_iter; ++it) {
        double d = 0.0;
        if (it % 2 == 0)
            for (int i = 0; i < n; ++i) d = std::max(d, update(i));
        else
            for (int i = n - 1; i >= 0; --i) d = std::max(d, update(i));
        out.residual_history.push_back(d);
        out.iterations = it + 1;
        if (d < cfg.tol * std::max(1.0, 1.0 / nu)) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("solve_viscous: no convergence after " + std::to_string(cfg.max_iter) + " sweeps",
                               out.residual_history.back());

    out.dS_dq.assign(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) out.dS_dq[i] = detail::centered_derivative(out.q_grid, V, i);
    out.dS_dq.front() = (V[1] - V[0]) / h;
    out.dS_dq.back() = (V[n - 1] - V[n - 2]) / h;
    return out;
}

/// Independent solves for each nu, merged in grid order.
inline std::vector<GeneratingFunction> viscous_sweep(const ModelSpec& model, const std::function<double(double)>& R,
                                                     const HJBConfig& base, const std::vector<double>& nus,
                                                     int threads = 1) {
    std::vector<GeneratingFunction> out(nus.size());
    detail::parallel_for(nus.size(), threads, [&](std::size_t i) {
        HJBConfig c = base;
        c.nu = nus[i];
        out[i] = solve_viscous(model, R, c);
    });
    return out;
}

/// Linear interpolation of the grid solution.
inline double sample(const GeneratingFunction& g, double q) {
    const auto& x = g.q_grid;
    if (q <= x.front()) return g.S_values.front();
    if (q >= x.back()) return g.S_values.back();
    const std::size_t k = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), q) - x.begin());
    const double t = (q - x[k - 1]) / (x[k] - x[k - 1]);
    return (1.0 - t) * g.S_values[k - 1] + t * g.S_values[k];
}

/// Discounted reward int_0^inf exp(-nu t) R(q(t)) dt along q' = -V_bare'(q),
/// by RK4 and trapezoidal accumulation until the discount falls below 1e-14.
inline double trajectory_value(const ModelSpec& model, const std::function<double(double)>& R, double nu, double q0,
                               double dt = 1e-3) {
    if (!(nu > 0.0)) throw ConfigError("trajectory_value: nu must be > 0");
    auto f = [&](double q) { return -model.force_gradient(q); };
    const long steps = static_cast<long>(std::ceil(-std::log(1e-14) / nu / dt));
    double q = q0, V = 0.0, prev = R(q);
    for (long k = 1; k <= steps; ++k) {
        const double k1 = f(q), k2 = f(q + 0.5 * dt * k1), k3 = f(q + 0.5 * dt * k2), k4 = f(q + dt * k3);
        q += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const double cur = std::exp(-nu * dt * k) * R(q);
        V += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    return V;
}

inline void write_generating_function_csv(std::ostream& os, const GeneratingFunction& g) {
    os << "q,S,dS_dq\n" << std::setprecision(17);
    for (std::size_t i = 0; i < g.size(); ++i) os << g.q_grid[i] << ',' << g.S_values[i] << ',' << g.dS_dq[i] << '\n';
}

}  // namespace collective
