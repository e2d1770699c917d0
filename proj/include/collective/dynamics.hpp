#pragma once

// Time integration on (q, p): kick-drift-kick leapfrog for conservative
// separable flows and classical RK4 once a control policy or explicit time
// dependence enters.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "collective/models.hpp"
#include "collective/phase_space.hpp"
#include "collective/policy.hpp"

namespace collective {

enum class Scheme { leapfrog, rk4 };

inline const char* to_string(Scheme s) { return s == Scheme::leapfrog ? "leapfrog" : "rk4"; }

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "leapfrog") return Scheme::leapfrog;
    if (s == "rk4") return Scheme::rk4;
    throw ConfigError("unknown integration scheme '" + s + "'");
}

struct IntegratorConfig {
    double dt = 1e-3;
    long n_steps = 1000;
    long output_stride = 1;
    Scheme scheme = Scheme::leapfrog;

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("integrator: dt must be > 0");
        if (n_steps < 1) throw ConfigError("integrator: n_steps must be >= 1");
        if (output_stride < 1) throw ConfigError("integrator: output_stride must be >= 1");
    }
};

struct Trajectory {
    std::vector<PhaseState> samples;
    double dt = 0.0;
    long output_stride = 1;
    std::string model_id;
    std::uint64_t seed = 0;

    double sample_spacing() const { return dt * static_cast<double>(output_stride); }
    double duration() const { return samples.empty() ? 0.0 : samples.back().tau - samples.front().tau; }
};

inline double energy(const ModelSpec& model, const PhaseState& s) { return model.H(s.p, s.q, s.tau); }

inline bool escaped_bounds(const PhaseState& s) {
    return !s.finite() || std::abs(s.q) > 1e6 || std::abs(s.p) > 1e6;
}

/// One kick-drift-kick step. dt may be negative (time reversal).
inline PhaseState step_symplectic(const ModelSpec& model, const PhaseState& s, double dt) {
    if (!model.separable) throw UnsupportedSchemeError("leapfrog requires a separable model, got '" + model.id + "'");
    if (!(dt != 0.0) || !std::isfinite(dt)) throw ConfigError("leapfrog: dt must be finite and non-zero");
    const double half = 0.5 * dt;
    const double p_half = s.p - half * model.dH_dq(s.p, s.q, s.tau);
    const double q_new = s.q + dt * model.dH_dp(p_half, s.q, s.tau);
    const double tau_new = s.tau + dt;
    const double p_new = p_half - half * model.dH_dq(p_half, q_new, tau_new);
    return {q_new, p_new, tau_new};
}

/// One classical Runge-Kutta step of q' = dH/dp, p' = -dH/dq + F_policy.
inline PhaseState step_rk4(const ModelSpec& model, const PhaseState& s, double dt,
                           const ControlPolicy* policy = nullptr) {
    auto rhs = [&](double q, double p, double tau, double& dq, double& dp) {
        dq = model.dH_dp(p, q, tau);
        dp = -model.dH_dq(p, q, tau);
        if (policy) dp += policy_force(*policy, model, q, p, tau);
    };
    double k1q, k1p, k2q, k2p, k3q, k3p, k4q, k4p;
    const double h = dt, h2 = 0.5 * dt;
    rhs(s.q, s.p, s.tau, k1q, k1p);
    rhs(s.q + h2 * k1q, s.p + h2 * k1p, s.tau + h2, k2q, k2p);
    rhs(s.q + h2 * k2q, s.p + h2 * k2p, s.tau + h2, k3q, k3p);
    rhs(s.q + h * k3q, s.p + h * k3p, s.tau + h, k4q, k4p);
    return {s.q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q), s.p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
            s.tau + h};
}

/// Scheme actually used: leapfrog is kept only for conservative, autonomous,
/// separable flows.
inline Scheme effective_scheme(const ModelSpec& model, const IntegratorConfig& cfg, const ControlPolicy* policy) {
    if (cfg.scheme == Scheme::rk4) return Scheme::rk4;
    if ((policy && !policy->empty()) || model.time_dependent || !model.separable) return Scheme::rk4;
    return Scheme::leapfrog;
}

/// Integrates n_steps from s0 and keeps every output_stride-th state
/// (the initial state is always kept). Throws DivergedError on blow-up.
inline Trajectory integrate(const ModelSpec& model, PhaseState s0, const IntegratorConfig& cfg,
                            const ControlPolicy* policy = nullptr, std::uint64_t seed = 0) {
    cfg.validate();
    if (policy) policy->validate();
    if (escaped_bounds(s0)) throw ConfigError("integrate: initial state is not finite");
    const Scheme scheme = effective_scheme(model, cfg, policy);

    Trajectory traj;
    traj.dt = cfg.dt;
    traj.output_stride = cfg.output_stride;
    traj.model_id = model.id;
    traj.seed = seed;
    traj.samples.reserve(static_cast<std::size_t>(cfg.n_steps / cfg.output_stride + 2));
    traj.samples.push_back(s0);

    PhaseState s = s0;
    for (long k = 1; k <= cfg.n_steps; ++k) {
        PhaseState next = scheme == Scheme::leapfrog ? step_symplectic(model, s, cfg.dt) : step_rk4(model, s, cfg.dt, policy);
        // accumulate tau by index to avoid drift in the sample grid
        next.tau = s0.tau + static_cast<double>(k) * cfg.dt;
        if (escaped_bounds(next)) {
            std::ostringstream msg;
            msg << "integration diverged at step " << k << " (tau=" << next.tau << ")";
            throw DivergedError(msg.str(), s);
        }
        s = next;
        if (k % cfg.output_stride == 0) traj.samples.push_back(s);
    }
    return traj;
}

inline Trajectory integrate(const ModelSpec& model, PhaseState s0, const IntegratorConfig& cfg,
                            const ControlPolicy& policy, std::uint64_t seed = 0) {
    return integrate(model, s0, cfg, &policy, seed);
}

/// Writes `tau,q,p,energy` with 17 significant digits.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const ModelSpec& model) {
    os << "tau,q,p,energy\n";
    os << std::setprecision(17);
    for (const auto& s : traj.samples) os << s.tau << ',' << s.q << ',' << s.p << ',' << energy(model, s) << '\n';
}

}  // namespace collective
