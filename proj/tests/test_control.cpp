#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "collective/control.hpp"

using namespace collective;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Trace of the one-drive-period monodromy of the linearized Kapitza equation
// x'' = (1 - a w^2 cos(w t)) x. |trace| < 2 is stable; the Floquet phase
// gives the secular frequency.
double mathieu_trace(double a, double w) {
    const double T = 2.0 * std::numbers::pi / w;
    const int n = 4000;
    const double h = T / n;
    auto run = [&](double x, double v) {
        auto f = [&](double t, double x_, double v_, double& dx, double& dv) {
            dx = v_;
            dv = (1.0 - a * w * w * std::cos(w * t)) * x_;
        };
        double t = 0.0;
        for (int k = 0; k < n; ++k) {
            double k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v;
            f(t, x, v, k1x, k1v);
            f(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v, k2x, k2v);
            f(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v, k3x, k3v);
            f(t + h, x + h * k3x, v + h * k3v, k4x, k4v);
            x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
            v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
            t += h;
        }
        return std::pair{x, v};
    };
    const auto [m11, m21] = run(1.0, 0.0);
    const auto [m12, m22] = run(0.0, 1.0);
    (void)m21;
    (void)m12;
    return m11 + m22;
}

double floquet_frequency(double a, double w) {
    const double T = 2.0 * std::numbers::pi / w;
    return std::acos(0.5 * mathieu_trace(a, w)) / T;
}

Equilibrium pendulum_xpoint() { return classify_equilibrium(make_pendulum(), std::numbers::pi, 0.0); }

}  // namespace

TEST_CASE("dwell time basics", "[control]") {
    const auto xp = pendulum_xpoint();
    Trajectory pinned;
    pinned.dt = 0.1;
    for (int k = 0; k <= 100; ++k) pinned.samples.push_back({std::numbers::pi, 0.0, 0.1 * k});
    const auto d = dwell_time(pinned, xp, 0.1);
    CHECK_THAT(d.dwell_time, WithinAbs(10.0, 1e-12));
    CHECK_FALSE(d.escaped);

    const auto far = integrate(make_pendulum(), {0.1, 0.0, 0.0}, IntegratorConfig{1e-2, 1000});
    CHECK(dwell_time(far, xp, 0.1).dwell_time == 0.0);
}

TEST_CASE("discounted value of a constant reward", "[control]") {
    Trajectory t;
    t.dt = 1e-2;
    for (int k = 0; k <= 10000; ++k) t.samples.push_back({0.0, 0.0, 1e-2 * k});
    const Reward one = [](double) { return 1.0; };
    // int_0^100 e^{-0.5 t} dt
    CHECK_THAT(discounted_integral(t, one, 0.5), WithinRel(2.0 * (1.0 - std::exp(-50.0)), 1e-5));
    CHECK_THAT(discounted_integral(t, one, 0.0), WithinRel(100.0, 1e-12));

    const auto orbit = integrate(make_pendulum(), {1.0, 0.0, 0.0}, IntegratorConfig{1e-2, 10000});
    const Reward sq = [](double q) { return q * q; };
    CHECK(discounted_integral(orbit, sq, 1.0) < discounted_integral(orbit, sq, 0.1));
    const auto rep = discounted_value(orbit, sq, 1.0, 0.1);
    CHECK(rep.ratio < 1.0);
}

TEST_CASE("stimulus lands just below the separatrix", "[control]") {
    const auto dw = make_double_well();
    SeparatrixInfo sep;
    sep.xpoint = classify_equilibrium(dw, 0.0, 0.0);
    sep.E_s = 0.25;
    const auto plan = plan_stimulus(dw, {1.0, 0.0, 0.0}, sep, 1e-3);
    CHECK(plan.final_energy >= 0.2489);
    CHECK(plan.final_energy <= 0.2491);
    CHECK(plan.stimulus.amplitude > 0.0);
    CHECK_THAT(plan.delta_P, WithinRel(plan.delta_J, 1e-2));

    const auto pend = make_pendulum();
    SeparatrixInfo ps;
    ps.xpoint = pendulum_xpoint();
    ps.E_s = 1.0;
    const auto pp = plan_stimulus(pend, {0.1, 0.0, 0.0}, ps, 1e-2);
    CHECK(pp.final_energy >= 0.989);
    CHECK(pp.final_energy <= 0.991);

    CHECK_THROWS_AS(plan_stimulus(dw, {1.0, 0.0, 0.0}, sep, 0.0), ConfigError);
    CHECK_THROWS_AS((ControlPolicy{Stimulus{0.0, 20.0, 1.0, 0.0}}), ConfigError);
}

TEST_CASE("closer margins dwell longer", "[control]") {
    const auto dw = make_double_well();
    SeparatrixInfo sep;
    sep.xpoint = classify_equilibrium(dw, 0.0, 0.0);
    sep.E_s = 0.25;
    auto dwell_for = [&](double delta) {
        const auto plan = plan_stimulus(dw, {1.0, 0.0, 0.0}, sep, delta, 20.0, 1e-2);
        const auto traj = integrate(dw, {1.0, 0.0, 0.0}, IntegratorConfig{1e-2, 20000, 1, Scheme::rk4}, plan.policy);
        return dwell_time(traj, sep.xpoint, 0.1).dwell_time;
    };
    CHECK(dwell_for(1e-4) > dwell_for(1e-2));
}

TEST_CASE("viscosity scan degrades dwell and value", "[control]") {
    const auto dw = make_double_well();
    ViscosityScenario sc;
    sc.s0 = {1.0, 0.0, 0.0};
    sc.xpoint = classify_equilibrium(dw, 0.0, 0.0);
    sc.E_s = 0.25;
    sc.delta = 1e-4;
    sc.reward = [](double q) { return std::exp(-q * q / 0.02); };
    const std::vector<double> grid{0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
    const auto scan = viscosity_scan(dw, grid, sc, 2);
    REQUIRE(scan.rows.size() == grid.size());
    for (std::size_t i = 1; i < grid.size(); ++i) {
        CHECK(scan.rows[i].dwell_time <= scan.rows[i - 1].dwell_time);
        CHECK(scan.rows[i].V <= scan.rows[i - 1].V);
    }
    CHECK(scan.rows.front().dwell_time > 0.0);
    CHECK(scan.critical_nu);
    CHECK(scan.rows.back().ratio < 0.1);

    const auto serial = viscosity_scan(dw, grid, sc, 1);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(serial.rows[i].V == scan.rows[i].V);
    CHECK_THROWS_AS(viscosity_scan(dw, {0.1, 0.0}, sc), ConfigError);
}

TEST_CASE("averaged Kapitza potential", "[control]") {
    const EffectivePotential above{0.1, 20.0};
    CHECK_THAT(above.curvature_at_inverted(), WithinAbs(1.0, 1e-12));
    CHECK(above.inverted_stable());
    const EffectivePotential below{0.1, 10.0};
    CHECK(below.curvature_at_inverted() < 0.0);
    CHECK_FALSE(below.inverted_stable());
    const EffectivePotential bare{0.0, 30.0};
    for (double th : {0.0, 0.3, 1.0}) CHECK(bare(th) == std::cos(th));
    CHECK_THROWS_AS(effective_potential(make_pendulum()), ConfigError);
}

TEST_CASE("Kapitza pendulum escapes without a fast drive", "[control]") {
    const auto k = make_kapitza(0.0, 30.0);
    const auto traj = integrate(k, {0.01, 0.0, 0.0}, IntegratorConfig{1e-3, 20000, 1, Scheme::rk4});
    const bool escaped = std::any_of(traj.samples.begin(), traj.samples.end(), [](const PhaseState& s) { return std::abs(s.q) > 1.0; });
    CHECK(escaped);
}

TEST_CASE("ponderomotive stabilization above threshold", "[control]") {
    const auto model = make_kapitza(0.1, 30.0);
    PonderomotiveOptions opt;
    opt.output_stride = 100;
    const auto hi = run_ponderomotive(model, Ponderomotive{0.1, 30.0}, {0.01, 0.0, 0.0}, 1000.0, opt);
    CHECK_FALSE(hi.dwell.escaped);
    CHECK(hi.dwell.dwell_time >= 999.0);
    double max_q = 0.0;
    for (const auto& s : hi.trajectory.samples) max_q = std::max(max_q, std::abs(s.q));
    CHECK(max_q < 0.1);
    // secular frequency against the averaged curvature and the Floquet oracle
    CHECK_THAT(hi.secular_frequency, WithinRel(hi.predicted_frequency, 0.05));
    CHECK_THAT(hi.secular_frequency, WithinRel(floquet_frequency(0.1, 30.0), 0.01));

    const auto lo = run_ponderomotive(model, Ponderomotive{0.1, 8.0}, {0.01, 0.0, 0.0}, 200.0, opt);
    CHECK(lo.dwell.escaped);
}

TEST_CASE("threshold bisection agrees with Floquet stability", "[control]") {
    const auto model = make_kapitza(0.1, 30.0);
    const auto th = ponderomotive_threshold(model, 0.1, 5.0, 40.0, {0.01, 0.0, 0.0}, 200.0);
    CHECK_THAT(th.omega_critical, WithinRel(std::sqrt(2.0) / 0.1, 0.15));
    CHECK(th.omega_lo < th.omega_hi);
    // the linear stability boundary |trace| = 2 lies inside the bracket, up to
    // the finite run length
    double lo = 10.0, hi = 20.0;
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        (std::abs(mathieu_trace(0.1, mid)) > 2.0 ? lo : hi) = mid;
    }
    CHECK_THAT(th.omega_critical, WithinRel(0.5 * (lo + hi), 0.02));
    CHECK_THROWS_AS(ponderomotive_threshold(model, 0.1, 30.0, 40.0, {0.01, 0.0, 0.0}, 200.0), ConfigError);
}
