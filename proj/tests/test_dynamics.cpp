#include <catch_amalgamated.hpp>

#include <boost/math/special_functions/ellint_1.hpp>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "collective/dynamics.hpp"
#include "collective/models.hpp"

using namespace collective;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// exact pendulum period 4 K(k), k^2 = (1 + E) / 2
double pendulum_period(double E) { return 4.0 * boost::math::ellint_1(std::sqrt(0.5 * (1.0 + E))); }

}  // namespace

TEST_CASE("model energies at landmarks", "[models]") {
    const auto pend = make_pendulum();
    const auto dw = make_double_well();
    CHECK(energy(pend, {0.0, 0.0, 0.0}) == -1.0);
    CHECK(energy(pend, {std::numbers::pi, 0.0, 0.0}) == 1.0);
    CHECK(energy(dw, {0.0, 0.0, 0.0}) == 0.25);
    CHECK_THAT(pend.dH_dq(0.0, std::numbers::pi, 0.0), WithinAbs(0.0, 1e-15));
    CHECK(pend.separable);
    CHECK(pend.q_period);
    CHECK_FALSE(dw.q_period);
}

TEST_CASE("make_model resolves ids", "[models]") {
    CHECK(make_model("pendulum").id == "pendulum");
    CHECK(make_model("double_well").id == "double_well");
    CHECK(make_model("harmonic").id == "harmonic");
    const auto k = make_model("kapitza", {{"a", 0.2}, {"omega", 12.0}});
    CHECK(k.parameter("a") == 0.2);
    CHECK(k.parameter("omega") == 12.0);
    CHECK(k.time_dependent);
    CHECK_FALSE(make_kapitza(0.0, 5.0).time_dependent);
    CHECK_THROWS_AS(make_model("nope"), ConfigError);
    CHECK_THROWS_AS(make_kapitza(-0.1, 5.0), ConfigError);
    CHECK_THROWS_AS(make_kapitza(0.1, 0.0), ConfigError);
}

TEST_CASE("leapfrog leaves equilibria fixed", "[dynamics]") {
    const auto pend = make_pendulum();
    const auto s = step_symplectic(pend, {0.0, 0.0, 0.0}, 0.01);
    CHECK(s.q == 0.0);
    CHECK(s.p == 0.0);
    CHECK(s.tau == 0.01);

    const auto dw = make_double_well();
    PhaseState w{1.0, 0.0, 0.0};
    for (int k = 0; k < 10000; ++k) w = step_symplectic(dw, w, 1e-2);
    CHECK(w.q == 1.0);
    CHECK(w.p == 0.0);
}

TEST_CASE("leapfrog is time reversible", "[dynamics]") {
    const auto pend = make_pendulum();
    PhaseState s{0.7, 0.3, 0.0};
    const PhaseState s0 = s;
    for (int k = 0; k < 5000; ++k) s = step_symplectic(pend, s, 1e-2);
    for (int k = 0; k < 5000; ++k) s = step_symplectic(pend, s, -1e-2);
    CHECK_THAT(s.q, WithinAbs(s0.q, 1e-11));
    CHECK_THAT(s.p, WithinAbs(s0.p, 1e-11));
}

TEST_CASE("leapfrog energy error is second order", "[dynamics]") {
    const auto pend = make_pendulum();
    auto max_err = [&](double dt) {
        PhaseState s{1.0, 0.0, 0.0};
        const double E0 = energy(pend, s);
        double m = 0.0;
        const long n = std::lround(50.0 / dt);
        for (long k = 0; k < n; ++k) {
            s = step_symplectic(pend, s, dt);
            m = std::max(m, std::abs(energy(pend, s) - E0));
        }
        return m;
    };
    const double e1 = max_err(1e-2), e2 = max_err(5e-3);
    CHECK_THAT(e1 / e2, WithinRel(4.0, 0.05));
}

TEST_CASE("pendulum orbit closes after one exact period", "[dynamics]") {
    const auto pend = make_pendulum();
    const PhaseState s0{0.1, 0.0, 0.0};
    const double T = pendulum_period(energy(pend, s0));
    const long n = 20000;
    IntegratorConfig cfg{T / n, n, n, Scheme::leapfrog};
    const auto traj = integrate(pend, s0, cfg);
    REQUIRE(traj.samples.size() == 2);
    CHECK_THAT(traj.samples.back().q, WithinAbs(s0.q, 1e-4));
    CHECK_THAT(traj.samples.back().p, WithinAbs(s0.p, 1e-4));
}

TEST_CASE("damped double well relaxes to a well bottom", "[dynamics]") {
    const auto dw = make_double_well();
    const ControlPolicy pol{Viscous{0.05}};
    IntegratorConfig cfg{1e-2, 60000, 1000, Scheme::leapfrog};
    const auto traj = integrate(dw, {0.3, 0.0, 0.0}, cfg, pol);
    const auto& end = traj.samples.back();
    CHECK(std::hypot(std::abs(end.q) - 1.0, end.p) < 1e-3);
}

TEST_CASE("scheme selection", "[dynamics]") {
    const auto pend = make_pendulum();
    const IntegratorConfig lf{};
    CHECK(effective_scheme(pend, lf, nullptr) == Scheme::leapfrog);
    const ControlPolicy pol{Viscous{0.1}};
    CHECK(effective_scheme(pend, lf, &pol) == Scheme::rk4);
    CHECK(effective_scheme(make_kapitza(0.1, 30.0), lf, nullptr) == Scheme::rk4);
    CHECK(scheme_from_string("rk4") == Scheme::rk4);
    CHECK_THROWS_AS(scheme_from_string("euler"), ConfigError);
}

TEST_CASE("rk4 matches the exact harmonic solution", "[dynamics]") {
    const auto h = make_harmonic();
    IntegratorConfig cfg{1e-3, 10000, 10000, Scheme::rk4};
    const auto traj = integrate(h, {1.0, 0.0, 0.0}, cfg);
    CHECK_THAT(traj.samples.back().q, WithinAbs(std::cos(10.0), 1e-11));
    CHECK_THAT(traj.samples.back().p, WithinAbs(-std::sin(10.0), 1e-11));
}

TEST_CASE("integrator preconditions and divergence", "[dynamics]") {
    const auto h = make_harmonic();
    CHECK_THROWS_AS(integrate(h, {1.0, 0.0, 0.0}, IntegratorConfig{1e-3, 0}), ConfigError);
    CHECK_THROWS_AS(integrate(h, {1.0, 0.0, 0.0}, IntegratorConfig{0.0, 10}), ConfigError);
    CHECK_THROWS_AS(integrate(h, {1.0, 0.0, 0.0}, IntegratorConfig{1e-3, 10, 0}), ConfigError);
    CHECK_THROWS_AS(integrate(h, {NAN, 0.0, 0.0}, IntegratorConfig{}), ConfigError);
    // leapfrog is unstable for dt > 2 on the unit oscillator
    CHECK_THROWS_AS(integrate(h, {1.0, 0.0, 0.0}, IntegratorConfig{3.0, 1000}), DivergedError);
}

TEST_CASE("trajectory csv contract", "[dynamics]") {
    const auto pend = make_pendulum();
    const auto traj = integrate(pend, {1.0, 0.0, 0.0}, IntegratorConfig{1e-2, 20, 10});
    std::ostringstream os;
    write_trajectory_csv(os, traj, pend);
    const std::string text = os.str();
    CHECK(text.rfind("tau,q,p,energy\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    CHECK(traj.samples[1].tau == 0.1);
}

TEST_CASE("model gradients agree with finite differences", "[models]") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-3.0, 3.0), t(0.0, 10.0);
    for (const auto& m : {make_pendulum(), make_double_well(), make_harmonic(), make_kapitza(0.1, 30.0)}) {
        double worst = 0.0;
        for (int k = 0; k < 1000; ++k) {
            const double p = u(rng), q = u(rng), tau = t(rng), h = 1e-6;
            const double fp = (m.H(p + h, q, tau) - m.H(p - h, q, tau)) / (2 * h);
            const double fq = (m.H(p, q + h, tau) - m.H(p, q - h, tau)) / (2 * h);
            const double gp = m.dH_dp(p, q, tau), gq = m.dH_dq(p, q, tau);
            worst = std::max(worst, std::abs(fp - gp) / std::max(1.0, std::abs(gp)));
            worst = std::max(worst, std::abs(fq - gq) / std::max(1.0, std::abs(gq)));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("pendulum and double well are even in p", "[models]") {
    for (const auto& m : {make_pendulum(), make_double_well()})
        for (double p : {0.1, 0.7, 2.5})
            for (double q : {-1.3, 0.0, 0.4}) CHECK(m.H(p, q, 0.0) == m.H(-p, q, 0.0));
}

TEST_CASE("Kapitza pendulum without drive leaves the inverted position", "[models]") {
    const auto k = make_kapitza(0.0, 30.0);
    PhaseState s{0.01, 0.0, 0.0};
    double t_escape = -1.0;
    for (long n = 0; n < 20000 && t_escape < 0.0; ++n) {
        s = step_rk4(k, s, 1e-3);
        if (std::abs(s.q) > 1.0) t_escape = s.tau;
    }
    CHECK(t_escape > 0.0);
    CHECK(t_escape < 20.0);
}
