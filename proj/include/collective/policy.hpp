#pragma once

#include <cmath>
#include <numbers>
#include <variant>
#include <vector>

#include "collective/models.hpp"

namespace collective {

/// Linear damping -nu * p.
struct Viscous {
    double nu = 0.0;
};

/// Time-limited forcing along the momentum direction with a half-sine
/// envelope; amplitude is solved for by plan_stimulus.
struct Stimulus {
    double delta = 0.0;       ///< requested margin below the separatrix energy
    double ramp_time = 20.0;  ///< envelope length
    double amplitude = 0.0;
    double t_start = 0.0;
};

/// Parametric pivot drive a * omega^2 * cos(omega tau) multiplying the
/// potential force.
struct Ponderomotive {
    double a = 0.0;
    double omega = 1.0;
};

using ControlTerm = std::variant<Viscous, Stimulus, Ponderomotive>;

struct ControlPolicy {
    std::vector<ControlTerm> terms;

    ControlPolicy() = default;
    ControlPolicy(std::initializer_list<ControlTerm> t) : terms(t) { validate(); }

    bool empty() const { return terms.empty(); }

    void validate() const {
        for (const auto& t : terms) {
            if (auto v = std::get_if<Viscous>(&t); v && !(v->nu >= 0.0)) throw ConfigError("viscous: nu must be >= 0");
            if (auto s = std::get_if<Stimulus>(&t); s && (!(s->delta > 0.0) || !(s->ramp_time > 0.0)))
                throw ConfigError("stimulus: delta and ramp_time must be > 0");
            if (auto w = std::get_if<Ponderomotive>(&t); w && !(w->omega > 0.0))
                throw ConfigError("ponderomotive: omega must be > 0");
        }
    }

    double viscosity() const {
        double nu = 0.0;
        for (const auto& t : terms)
            if (auto v = std::get_if<Viscous>(&t)) nu += v->nu;
        return nu;
    }
};

inline double stimulus_envelope(const Stimulus& s, double tau) {
    const double x = (tau - s.t_start) / s.ramp_time;
    if (x < 0.0 || x > 1.0) return 0.0;
    return std::sin(std::numbers::pi * x);
}

/// Extra dp/dtau contributed by the policy at state (q, p, tau).
inline double policy_force(const ControlPolicy& policy, const ModelSpec& model, double q, double p, double tau) {
    double f = 0.0;
    for (const auto& t : policy.terms) {
        if (auto v = std::get_if<Viscous>(&t)) {
            f -= v->nu * p;
        } else if (auto s = std::get_if<Stimulus>(&t)) {
            f += s->amplitude * stimulus_envelope(*s, tau) * (p >= 0.0 ? 1.0 : -1.0);
        } else if (auto w = std::get_if<Ponderomotive>(&t)) {
            f += w->a * w->omega * w->omega * std::cos(w->omega * tau) * model.dH_dq(p, q, tau);
        }
    }
    return f;
}

}  // namespace collective
