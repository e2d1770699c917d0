#pragma once

// Concrete 1-DOF Hamiltonians: pendulum (one basin), double well (two basins),
// Kapitza pendulum (parametric drive) and the analytic Joukowski Hamiltonian.
// All models are nondimensional (g = l = m = 1).

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "collective/phase_space.hpp"

namespace collective {

using ScalarField = std::function<double(double p, double q, double tau)>;

/// Contract for a 1-DOF Hamiltonian system H(p, q, tau).
struct ModelSpec {
    std::string id;
    ScalarField H;
    ScalarField dH_dp;
    ScalarField dH_dq;
    /// H = p^2/2 + V(q, tau)
    bool separable = false;
    bool time_dependent = false;
    std::map<std::string, double> parameters;
    /// Period of the coordinate when q is an angle.
    std::optional<double> q_period;

    double operator()(double p, double q, double tau = 0.0) const { return H(p, q, tau); }

    /// V(q) = H(0, q); meaningful for separable models.
    double potential(double q, double tau = 0.0) const { return H(0.0, q, tau); }
    /// V'(q)
    double force_gradient(double q, double tau = 0.0) const { return dH_dq(0.0, q, tau); }

    double parameter(const std::string& name) const {
        auto it = parameters.find(name);
        if (it == parameters.end()) throw ConfigError("model '" + id + "' has no parameter '" + name + "'");
        return it->second;
    }
};

/// Builds a separable model H = p^2/2 + V(q, tau) from V and V'.
inline ModelSpec make_separable(std::string id, std::function<double(double, double)> V,
                                std::function<double(double, double)> dV, bool time_dependent = false) {
    ModelSpec m;
    m.id = std::move(id);
    m.H = [V](double p, double q, double tau) { return 0.5 * p * p + V(q, tau); };
    m.dH_dp = [](double p, double, double) { return p; };
    m.dH_dq = [dV](double, double q, double tau) { return dV(q, tau); };
    m.separable = true;
    m.time_dependent = time_dependent;
    return m;
}

/// H = p^2/2 - cos q. o-point (0,0) at E = -1, x-point (pi,0) at E = +1.
inline ModelSpec make_pendulum() {
    auto m = make_separable(
        "pendulum", [](double q, double) { return -std::cos(q); }, [](double q, double) { return std::sin(q); });
    m.q_period = 2.0 * std::numbers::pi;
    return m;
}

/// H = p^2/2 + (q^2 - 1)^2 / 4. o-points (+-1, 0) at E = 0, x-point (0,0) at E = 1/4.
inline ModelSpec make_double_well() {
    return make_separable(
        "double_well", [](double q, double) { return 0.25 * (q * q - 1.0) * (q * q - 1.0); },
        [](double q, double) { return q * q * q - q; });
}

/// H = (p^2 + q^2)/2. Single o-point, no separatrix.
inline ModelSpec make_harmonic() {
    return make_separable(
        "harmonic", [](double q, double) { return 0.5 * q * q; }, [](double q, double) { return q; });
}

/// Inverted pendulum with a vertically vibrating pivot, theta measured from the
/// upright position:  theta'' = (1 - a w^2 cos(w tau)) sin(theta).
/// H = p^2/2 + (1 - a w^2 cos(w tau)) cos(theta).
inline ModelSpec make_kapitza(double a, double omega) {
    if (!(a >= 0.0)) throw ConfigError("kapitza: pivot amplitude a must be >= 0");
    if (!(omega > 0.0)) throw ConfigError("kapitza: drive frequency omega must be > 0");
    const double drive = a * omega * omega;
    auto m = make_separable(
        "kapitza",
        [drive, omega](double q, double tau) { return (1.0 - drive * std::cos(omega * tau)) * std::cos(q); },
        [drive, omega](double q, double tau) { return -(1.0 - drive * std::cos(omega * tau)) * std::sin(q); },
        a > 0.0);
    m.parameters = {{"a", a}, {"omega", omega}};
    m.q_period = 2.0 * std::numbers::pi;
    return m;
}

/// Looks a model up by its CLI/config id.
inline ModelSpec make_model(const std::string& id, const std::map<std::string, double>& params = {}) {
    auto get = [&](const char* k, double def) {
        auto it = params.find(k);
        return it == params.end() ? def : it->second;
    };
    if (id == "pendulum") return make_pendulum();
    if (id == "double_well") return make_double_well();
    if (id == "harmonic") return make_harmonic();
    if (id == "kapitza") return make_kapitza(get("a", 0.1), get("omega", 30.0));
    throw ConfigError("unknown model id '" + id + "'");
}

using cplx = std::complex<double>;

/// Complex-analytic Hamiltonian H(beta) with its derivative. Evaluation at a
/// listed pole is a domain error.
struct AnalyticHamiltonian {
    std::string id;
    std::function<cplx(cplx)> H;
    std::function<cplx(cplx)> dH;
    std::vector<cplx> poles;

    void check_domain(cplx beta) const {
        for (const auto& pole : poles)
            if (beta == pole) throw DomainError(id + ": evaluation at a pole");
    }
    cplx value(cplx beta) const {
        check_domain(beta);
        return H(beta);
    }
    cplx derivative(cplx beta) const {
        check_domain(beta);
        return dH(beta);
    }
    double distance_to_pole(cplx beta) const {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& pole : poles) d = std::min(d, std::abs(beta - pole));
        return d;
    }
};

/// H(beta) = (beta + 1/beta)/2, the Joukowski map.
inline AnalyticHamiltonian make_joukowski() {
    return {"joukowski", [](cplx b) { return 0.5 * (b + 1.0 / b); },
            [](cplx b) { return 0.5 * (1.0 - 1.0 / (b * b)); }, {cplx(0.0, 0.0)}};
}

/// H(beta) = sum_k c_k beta^k.
inline AnalyticHamiltonian make_analytic_polynomial(std::vector<cplx> coeffs, std::string id = "polynomial") {
    auto eval = [](const std::vector<cplx>& c, cplx b) {
        cplx acc = 0.0;
        for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * b + *it;
        return acc;
    };
    std::vector<cplx> deriv;
    for (std::size_t k = 1; k < coeffs.size(); ++k) deriv.push_back(coeffs[k] * static_cast<double>(k));
    return {std::move(id), [eval, coeffs](cplx b) { return eval(coeffs, b); },
            [eval, deriv](cplx b) { return eval(deriv, b); }, {}};
}

inline AnalyticHamiltonian make_analytic(const std::string& id) {
    if (id == "joukowski") return make_joukowski();
    if (id == "free") return make_analytic_polynomial({0.0, 1.0}, "free");
    if (id == "quadratic") return make_analytic_polynomial({0.0, 0.0, 1.0}, "quadratic");
    if (id == "cubic") return make_analytic_polynomial({0.0, -1.0, 0.0, 1.0 / 3.0}, "cubic");
    throw ConfigError("unknown analytic Hamiltonian id '" + id + "'");
}

}  // namespace collective
