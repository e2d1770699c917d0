#pragma once

// Viscous, stimulus and ponderomotive control of 1-DOF systems, x-point
// dwell metrics and the discounted value functional.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

#include "collective/dynamics.hpp"
#include "collective/equilibria.hpp"
#include "collective/parallel.hpp"
#include "collective/policy.hpp"

namespace collective {

using Reward = std::function<double(double q)>;

// ---------------------------------------------------------------------------
// Dwell time near an x-point

struct DwellReport {
    double xpoint_q = 0.0;
    double xpoint_p = 0.0;
    double radius = 0.0;
    double dwell_time = 0.0;
    bool escaped = false;
};

/// Distance from (q, p) to the equilibrium measured in the coordinates of its
/// unit eigenvectors (Euclidean for o-points).
inline double xpoint_distance(const Equilibrium& xp, double q, double p) {
    const double dq = q - xp.q, dp = p - xp.p;
    if (xp.kind != EquilibriumKind::x_point) return std::hypot(dq, dp);
    const auto v = eigenvectors(xp);
    const double det = v[0][0] * v[1][1] - v[1][0] * v[0][1];
    if (std::abs(det) < 1e-12) return std::hypot(dq, dp);
    const double u = (dq * v[1][1] - dp * v[1][0]) / det;
    const double s = (v[0][0] * dp - v[0][1] * dq) / det;
    return std::hypot(u, s);
}

/// Time spent within `radius` of xp. Each sample interval contributes half
/// its length per endpoint inside. `escaped` is set when, after first
/// entering, the trajectory moves beyond 2 * radius.
inline DwellReport dwell_time(const Trajectory& traj, const Equilibrium& xp, double radius) {
    if (!(radius > 0.0)) throw ConfigError("dwell_time: radius must be > 0");
    DwellReport r{xp.q, xp.p, radius, 0.0, false};
    bool entered = false;
    bool prev_in = false;
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        const auto& s = traj.samples[i];
        const double d = xpoint_distance(xp, s.q, s.p);
        const bool in = d < radius;
        if (i > 0) r.dwell_time += 0.5 * (s.tau - traj.samples[i - 1].tau) * ((in ? 1.0 : 0.0) + (prev_in ? 1.0 : 0.0));
        if (in) entered = true;
        if (entered && d > 2.0 * radius) r.escaped = true;
        prev_in = in;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Discounted value

struct ValueReport {
    double nu = 0.0;
    double V = 0.0;
    double horizon = 0.0;
    double baseline_V = 0.0;
    double ratio = 0.0;
};

/// Trapezoidal integral of exp(-nu (tau - tau0)) R(q(tau)) along the trajectory.
inline double discounted_integral(const Trajectory& traj, const Reward& reward, double nu) {
    if (!(nu >= 0.0)) throw ConfigError("discounted_value: nu must be >= 0");
    if (traj.samples.empty()) return 0.0;
    const double t0 = traj.samples.front().tau;
    double V = 0.0;
    double prev = reward(traj.samples.front().q);
    for (std::size_t i = 1; i < traj.samples.size(); ++i) {
        const auto& s = traj.samples[i];
        const double cur = std::exp(-nu * (s.tau - t0)) * reward(s.q);
        V += 0.5 * (s.tau - traj.samples[i - 1].tau) * (prev + cur);
        prev = cur;
    }
    return V;
}

inline ValueReport discounted_value(const Trajectory& traj, const Reward& reward, double nu, double reference_nu = 0.0) {
    ValueReport r;
    r.nu = nu;
    r.V = discounted_integral(traj, reward, nu);
    r.horizon = traj.duration();
    r.baseline_V = discounted_integral(traj, reward, reference_nu);
    r.ratio = r.baseline_V != 0.0 ? r.V / r.baseline_V : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Stimulus to just below the separatrix

struct StimulusPlan {
    ControlPolicy policy;
    Stimulus stimulus;
    double initial_energy = 0.0;
    double target_energy = 0.0;
    double final_energy = 0.0;
    /// Co-state change accumulated stepwise as sum dE / omega_Q.
    double delta_P = 0.0;
    /// J(final) - J(initial) from orbit quadrature, for comparison with delta_P.
    double delta_J = 0.0;
    PhaseState final_state;
};

namespace detail {

/// Runs the ramp window of a stimulus with RK4 and returns the state at its end.
inline PhaseState run_stimulus(const ModelSpec& model, PhaseState s, const Stimulus& stim, double dt,
                               const std::function<void(const PhaseState&, long)>& observe = nullptr) {
    const long n = std::max(1L, std::lround(stim.ramp_time / dt));
    const double h = stim.ramp_time / static_cast<double>(n);
    const ControlPolicy pol{stim};
    const double t0 = s.tau;
    for (long k = 1; k <= n; ++k) {
        s = step_rk4(model, s, h, &pol);
        s.tau = t0 + static_cast<double>(k) * h;
        if (escaped_bounds(s)) throw DivergedError("stimulus run diverged", s);
        if (observe) observe(s, k);
    }
    return s;
}

}  // namespace detail

/// Finds the amplitude of a half-sine momentum-aligned force so that the
/// energy after the ramp lands at E_s - delta (bisection on the amplitude).
inline StimulusPlan plan_stimulus(const ModelSpec& model, const PhaseState& s0, const SeparatrixInfo& sep, double delta,
                                  double ramp_time = 20.0, double dt = 1e-3) {
    detail::require_autonomous_separable(model, "plan_stimulus");
    if (!(delta > 0.0)) throw ConfigError("plan_stimulus: delta must be > 0 (a zero margin overshoots the separatrix)");
    if (!(ramp_time > 0.0) || !(dt > 0.0)) throw ConfigError("plan_stimulus: ramp_time and dt must be > 0");
    const double E0 = energy(model, s0);
    const double target = sep.E_s - delta;
    if (E0 > sep.E_s) throw ConfigError("plan_stimulus: initial state is outside the separatrix");
    if (E0 >= target) throw ConfigError("plan_stimulus: initial energy already at or above the target");

    Stimulus stim{delta, ramp_time, 0.0, s0.tau};
    auto final_energy = [&](double amp) {
        stim.amplitude = amp;
        return energy(model, detail::run_stimulus(model, s0, stim, dt));
    };

    double lo = 0.0, hi = 1e-3;
    double E_hi = final_energy(hi);
    for (int k = 0; k < 80 && E_hi < target; ++k) {
        lo = hi;
        hi *= 2.0;
        E_hi = final_energy(hi);
    }
    if (E_hi < target) throw ConfigError("plan_stimulus: could not bracket the stimulus amplitude");
    double amp = hi, E_amp = E_hi;
    for (int it = 0; it < 200; ++it) {
        amp = 0.5 * (lo + hi);
        E_amp = final_energy(amp);
        if (std::abs(E_amp - target) < 1e-3 * delta) break;
        (E_amp < target ? lo : hi) = amp;
    }
    stim.amplitude = amp;

    StimulusPlan plan;
    plan.stimulus = stim;
    plan.policy = ControlPolicy{stim};
    plan.initial_energy = E0;
    plan.target_energy = target;

    // co-state bookkeeping dP = dE / omega_Q along the executed ramp
    const BasinInfo basin = find_basin(model, s0.q);
    const long chunk = std::max(1L, std::lround(stim.ramp_time / dt) / 200);
    double E_prev = E0;
    plan.final_state = detail::run_stimulus(model, s0, stim, dt, [&](const PhaseState& s, long k) {
        if (k % chunk != 0) return;
        const double E = energy(model, s);
        const double mid = 0.5 * (E + E_prev);
        try {
            const auto tp = turning_points(model, basin, mid);
            plan.delta_P += (E - E_prev) * detail::period(model, mid, tp) / (2.0 * std::numbers::pi);
        } catch (const NoClosedOrbitError&) {
        }
        E_prev = E;
    });
    plan.final_energy = energy(model, plan.final_state);
    auto J_at = [&](double E) {
        if (E <= basin.V_min + 1e-14) return 0.0;
        return orbit_action(model, basin, E);
    };
    if (plan.final_energy < basin.top()) plan.delta_J = J_at(plan.final_energy) - J_at(E0);
    return plan;
}

// ---------------------------------------------------------------------------
// Viscosity scan

struct ViscosityScenario {
    PhaseState s0;
    Equilibrium xpoint;
    double E_s = 0.0;
    double delta = 1e-3;
    double ramp_time = 20.0;
    double horizon = 200.0;
    double dt = 1e-2;
    double radius = 0.1;
    Reward reward;
};

struct ViscosityRow {
    double nu = 0.0;
    double dwell_time = 0.0;
    double V = 0.0;
    double ratio = 0.0;
    bool escaped = false;
};

struct ViscosityScan {
    std::vector<ViscosityRow> rows;
    StimulusPlan plan;
    std::optional<double> critical_nu;
    double e_folding_time = 0.0;
};

/// Runs the stimulate-then-dwell scenario under damping nu for each grid
/// value; the value functional is discounted at the same rate nu.
inline ViscosityScan viscosity_scan(const ModelSpec& model, const std::vector<double>& nu_grid,
                                    const ViscosityScenario& sc, int threads = 1) {
    if (nu_grid.empty()) throw ConfigError("viscosity_scan: empty nu grid");
    if (!std::is_sorted(nu_grid.begin(), nu_grid.end())) throw ConfigError("viscosity_scan: nu grid must be ascending");
    if (nu_grid.front() < 0.0) throw ConfigError("viscosity_scan: nu must be >= 0");
    if (!sc.reward) throw ConfigError("viscosity_scan: scenario needs a reward");

    SeparatrixInfo sep;
    sep.xpoint = sc.xpoint;
    sep.E_s = sc.E_s;
    ViscosityScan out;
    out.plan = plan_stimulus(model, sc.s0, sep, sc.delta, sc.ramp_time, sc.dt);
    out.rows.resize(nu_grid.size());

    auto run = [&](std::size_t i) {
        const double nu = nu_grid[i];
        ControlPolicy pol{out.plan.stimulus, Viscous{nu}};
        IntegratorConfig cfg{sc.dt, std::lround(sc.horizon / sc.dt), 1, Scheme::rk4};
        const Trajectory traj = integrate(model, sc.s0, cfg, &pol);
        const auto dw = dwell_time(traj, sc.xpoint, sc.radius);
        out.rows[i] = {nu, dw.dwell_time, discounted_integral(traj, sc.reward, nu), 0.0, dw.escaped};
    };
    detail::parallel_for(nu_grid.size(), threads, run);
    const double base = out.rows.front().V;
    for (auto& r : out.rows) r.ratio = base != 0.0 ? r.V / base : 0.0;
    out.e_folding_time = 1.0 / sc.xpoint.growth_rate();
    for (const auto& r : out.rows)
        if (r.dwell_time < out.e_folding_time) {
            out.critical_nu = r.nu;
            break;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Ponderomotive stabilization

/// Drive-averaged potential of the Kapitza pendulum (theta from upright):
/// V_eff = cos(theta) + (a^2 w^2 / 4) sin^2(theta).
struct EffectivePotential {
    double a = 0.0;
    double omega = 0.0;

    double operator()(double theta) const {
        const double s = std::sin(theta);
        return std::cos(theta) + 0.25 * a * a * omega * omega * s * s;
    }
    /// V_eff''(0) = a^2 w^2 / 2 - 1
    double curvature_at_inverted() const { return 0.5 * a * a * omega * omega - 1.0; }
    bool inverted_stable() const { return a * a * omega * omega > 2.0; }
};

inline EffectivePotential effective_potential(const ModelSpec& model) {
    if (model.id != "kapitza") throw ConfigError("effective_potential: model '" + model.id + "' is not the Kapitza form");
    return {model.parameter("a"), model.parameter("omega")};
}

struct PonderomotiveReport {
    Trajectory trajectory;
    DwellReport dwell;
    Equilibrium xpoint;
    double secular_frequency = std::numeric_limits<double>::quiet_NaN();
    double predicted_frequency = std::numeric_limits<double>::quiet_NaN();
    bool slow_drive_warning = false;
    bool stopped_early = false;
};

struct PonderomotiveOptions {
    double radius = 0.1;
    int steps_per_drive_period = 40;
    /// Stop integrating once the trajectory is farther than 2 * radius.
    bool stop_on_escape = false;
    /// Keep every k-th state in the returned trajectory (dwell uses all).
    long output_stride = 1;
};

namespace detail {

/// Frequency of the drive-period-averaged coordinate from its zero crossings.
inline double secular_frequency(const std::vector<double>& t, const std::vector<double>& x) {
    std::vector<double> crossings;
    for (std::size_t i = 1; i < x.size(); ++i) {
        if ((x[i - 1] < 0.0) != (x[i] < 0.0)) {
            const double w = x[i - 1] / (x[i - 1] - x[i]);
            crossings.push_back(t[i - 1] + w * (t[i] - t[i - 1]));
        }
    }
    if (crossings.size() < 3) return std::numeric_limits<double>::quiet_NaN();
    return std::numbers::pi * static_cast<double>(crossings.size() - 1) / (crossings.back() - crossings.front());
}

}  // namespace detail

/// Full (unaveraged) simulation of a fast parametric drive around the x-point
/// nearest s0. For the Kapitza model the drive lives in the Hamiltonian and
/// the policy's (a, omega) replace the model's; for other separable models
/// the policy force a w^2 cos(w tau) V'(q) is added.
inline PonderomotiveReport run_ponderomotive(const ModelSpec& model, const Ponderomotive& drive, const PhaseState& s0,
                                             double duration, const PonderomotiveOptions& opt = {}) {
    if (!(drive.omega > 0.0) || !(drive.a >= 0.0)) throw ConfigError("run_ponderomotive: need a >= 0, omega > 0");
    if (!(duration > 0.0)) throw ConfigError("run_ponderomotive: duration must be > 0");
    if (!model.separable) throw ConfigError("run_ponderomotive: model must be separable");

    const bool kapitza = model.id == "kapitza";
    const ModelSpec bare = kapitza ? make_kapitza(0.0, drive.omega) : model;
    const ModelSpec driven = kapitza ? make_kapitza(drive.a, drive.omega) : model;
    const ControlPolicy pol = kapitza ? ControlPolicy{} : ControlPolicy{drive};

    const Box box{s0.q - 4.0, s0.q + 4.0, s0.p - 2.0, s0.p + 2.0};
    std::optional<Equilibrium> xp;
    for (const auto& e : find_equilibria(bare, box, 16))
        if (e.kind == EquilibriumKind::x_point &&
            (!xp || std::hypot(e.q - s0.q, e.p - s0.p) < std::hypot(xp->q - s0.q, xp->p - s0.p)))
            xp = e;
    if (!xp) throw StructuralAbsenceError("run_ponderomotive: no x-point near the initial state");

    PonderomotiveReport rep;
    rep.xpoint = *xp;
    const double lambda = xp->growth_rate();
    rep.slow_drive_warning = drive.omega < 10.0 * lambda;
    // V_eff'' = V'' + (a^2 w^2 / 2) V''^2 at the fixed point
    const double v2 = detail::hessian(bare, xp->q, xp->p)[0];
    const double curv = v2 + 0.5 * drive.a * drive.a * drive.omega * drive.omega * v2 * v2;
    rep.predicted_frequency = curv > 0.0 ? std::sqrt(curv) : 0.0;

    const int npp = std::max(8, opt.steps_per_drive_period);
    const double dt = 2.0 * std::numbers::pi / drive.omega / npp;
    const long n_steps = std::lround(duration / dt);
    const ControlPolicy* pptr = pol.empty() ? nullptr : &pol;

    auto& traj = rep.trajectory;
    traj.dt = dt;
    traj.output_stride = std::max(1L, opt.output_stride);
    traj.model_id = driven.id;
    traj.samples.push_back(s0);

    DwellReport dw{xp->q, xp->p, opt.radius, 0.0, false};
    bool entered = false;
    double prev_d = xpoint_distance(*xp, s0.q, s0.p);
    if (prev_d < opt.radius) entered = true;

    std::vector<double> avg_t, avg_q;
    double acc = 0.0;
    PhaseState s = s0;
    for (long k = 1; k <= n_steps; ++k) {
        PhaseState next = step_rk4(driven, s, dt, pptr);
        next.tau = s0.tau + static_cast<double>(k) * dt;
        if (escaped_bounds(next)) throw DivergedError("run_ponderomotive: integration diverged", s);
        const double d = xpoint_distance(*xp, next.q, next.p);
        dw.dwell_time += 0.5 * dt * ((d < opt.radius ? 1.0 : 0.0) + (prev_d < opt.radius ? 1.0 : 0.0));
        if (d < opt.radius) entered = true;
        if (entered && d > 2.0 * opt.radius) dw.escaped = true;
        prev_d = d;
        acc += next.q - xp->q;
        if (k % npp == 0) {
            avg_t.push_back(next.tau - 0.5 * npp * dt);
            avg_q.push_back(acc / npp);
            acc = 0.0;
        }
        s = next;
        if (k % traj.output_stride == 0) traj.samples.push_back(s);
        if (opt.stop_on_escape && dw.escaped) {
            rep.stopped_early = true;
            break;
        }
    }
    rep.dwell = dw;
    rep.secular_frequency = detail::secular_frequency(avg_t, avg_q);
    return rep;
}

struct ThresholdResult {
    double omega_critical = 0.0;
    double omega_lo = 0.0;  ///< escapes
    double omega_hi = 0.0;  ///< stays
    int iterations = 0;
};

/// Bisection on the drive frequency between an escaping and a stabilized run.
inline ThresholdResult ponderomotive_threshold(const ModelSpec& model, double a, double omega_lo, double omega_hi,
                                               const PhaseState& s0, double duration, double rel_tol = 1e-3,
                                               PonderomotiveOptions opt = {}) {
    opt.stop_on_escape = true;
    opt.output_stride = 1L << 30;
    auto escapes = [&](double w) { return run_ponderomotive(model, Ponderomotive{a, w}, s0, duration, opt).dwell.escaped; };
    if (!escapes(omega_lo)) throw ConfigError("ponderomotive_threshold: lower frequency does not escape");
    if (escapes(omega_hi)) throw ConfigError("ponderomotive_threshold: upper frequency does not stabilize");
    ThresholdResult r;
    while (omega_hi - omega_lo > rel_tol * omega_hi && r.iterations < 100) {
        const double mid = 0.5 * (omega_lo + omega_hi);
        (escapes(mid) ? omega_lo : omega_hi) = mid;
        ++r.iterations;
    }
    r.omega_lo = omega_lo;
    r.omega_hi = omega_hi;
    r.omega_critical = 0.5 * (omega_lo + omega_hi);
    return r;
}

}  // namespace collective
