#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "collective/analytic.hpp"

using namespace collective;
using Catch::Matchers::WithinAbs;

namespace {

const cplx I(0.0, 1.0);

}  // namespace

TEST_CASE("Joukowski values", "[analytic]") {
    const auto h = make_joukowski();
    CHECK(h.value(1.0) == cplx(1.0, 0.0));
    CHECK(std::abs(h.value(I)) < 1e-15);
    CHECK(h.derivative(1.0) == cplx(0.0, 0.0));
    CHECK(h.derivative(-1.0) == cplx(0.0, 0.0));
    CHECK_THROWS_AS(h.value(0.0), DomainError);
    CHECK_THROWS_AS(make_analytic("sextic"), ConfigError);
}

TEST_CASE("critical points of analytic Hamiltonians", "[analytic]") {
    const ComplexBox box{-3, 3, -3, 3};
    const auto j = find_beta_star(make_joukowski(), box);
    REQUIRE(j.size() == 2);
    CHECK_THAT(j[0].beta.real(), WithinAbs(-1.0, 1e-10));
    CHECK_THAT(j[0].beta.imag(), WithinAbs(0.0, 1e-10));
    CHECK_THAT(j[1].beta.real(), WithinAbs(1.0, 1e-10));
    CHECK_THAT(j[1].beta.imag(), WithinAbs(0.0, 1e-10));
    CHECK_THAT(j[0].H_at_star.real(), WithinAbs(-1.0, 1e-10));
    CHECK_THAT(j[1].H_at_star.real(), WithinAbs(1.0, 1e-10));
    for (const auto& b : j) {
        CHECK(b.multiplicity == 1);
        CHECK(std::abs(make_joukowski().dH(b.beta)) < 1e-10);
    }

    const auto q = find_beta_star(make_analytic("quadratic"), box);
    REQUIRE(q.size() == 1);
    CHECK(std::abs(q[0].beta) < 1e-10);

    const auto c = find_beta_star(make_analytic("cubic"), box);
    REQUIRE(c.size() == 2);
    CHECK_THAT(c[0].beta.real(), WithinAbs(-1.0, 1e-10));
    CHECK_THAT(c[1].beta.real(), WithinAbs(1.0, 1e-10));

    // a double root counts twice
    const auto sq = find_beta_star(make_analytic_polynomial({0.0, 0.0, 0.0, 1.0}), box);
    REQUIRE(sq.size() == 1);
    CHECK(std::abs(sq[0].beta) < 1e-6);
    CHECK(sq[0].multiplicity == 2);

    CHECK(find_beta_star(make_analytic("free"), box).empty());
    CHECK_THROWS_AS(find_beta_star(make_joukowski(), ComplexBox{1, 1, -1, 1}), ConfigError);
}

TEST_CASE("geodesics conserve Re H and raise Im H", "[analytic]") {
    const auto h = make_joukowski();
    int seeds = 0;
    for (double re : {-2.0, -1.0, 0.0, 1.0, 2.0})
        for (double im : {0.5, 1.0, 1.5, 2.0}) {
            const cplx b0(re, im);
            const auto path = geodesic_flow(h, b0, 1e-2, 500);
            REQUIRE(path.size() == 501);
            const double E = h.H(b0).real();
            double worst = 0.0;
            bool monotone = true;
            for (std::size_t i = 0; i < path.size(); ++i) {
                worst = std::max(worst, std::abs(h.H(path[i]).real() - E));
                if (i > 0 && h.H(path[i]).imag() < h.H(path[i - 1]).imag()) monotone = false;
            }
            CHECK(worst < 1e-8);
            CHECK(monotone);
            ++seeds;
        }
    CHECK(seeds == 20);

    const auto two = geodesic_flow(h, 2.0, 1e-2, 1000);
    double worst = 0.0;
    for (const auto& b : two) worst = std::max(worst, std::abs(h.H(b).real() - 1.25));
    CHECK(worst < 1e-8);
}

TEST_CASE("geodesic fixed points and free flow", "[analytic]") {
    const auto h = make_joukowski();
    for (const auto& b : geodesic_flow(h, 1.0, 0.1, 100)) CHECK(b == cplx(1.0, 0.0));

    const cplx b0(0.3, -0.7);
    const auto free = geodesic_flow(make_analytic("free"), b0, 1e-2, 300);
    for (std::size_t k = 0; k < free.size(); ++k) CHECK(std::abs(free[k] - (b0 + I * (1e-2 * k))) < 1e-10);
}

TEST_CASE("geodesics that run into the pole diverge", "[analytic]") {
    // near 0, level curves of Re H are circles through the pole
    CHECK_THROWS_AS(geodesic_flow(make_joukowski(), cplx(-1.0, -1.0) * std::sqrt(0.5) * 2.0, 1e-2, 500), DivergedError);
    CHECK_THROWS_AS(geodesic_flow(make_joukowski(), 0.0, 1e-2, 5), DivergedError);
    CHECK_THROWS_AS(geodesic_flow(make_joukowski(), 2.0, 0.0, 5), ConfigError);
}

TEST_CASE("S-matrix Taylor coefficients", "[analytic]") {
    const auto h = make_joukowski();
    const auto s = smatrix_coeffs(h, 2.0, 4);
    REQUIRE(s.size() == 4);
    CHECK_THAT(s[0].real(), WithinAbs(0.0, 1e-10));
    CHECK_THAT(s[0].imag(), WithinAbs(1.25, 1e-10));
    CHECK_THAT(s[1].real(), WithinAbs(0.0, 1e-10));
    CHECK_THAT(s[1].imag(), WithinAbs(0.375, 1e-10));
    // H'' = 1 / beta^3, H''' = -3 / beta^4
    CHECK(std::abs(s[2] - I * 0.125) < 1e-9);
    CHECK(std::abs(s[3] - I * (-3.0 / 16.0)) < 1e-8);

    const auto free = smatrix_coeffs(make_analytic("free"), cplx(0.4, 1.1), 6);
    CHECK(std::abs(free[0] - I * cplx(0.4, 1.1)) < 1e-12);
    CHECK(std::abs(free[1] - I) < 1e-12);
    for (std::size_t m = 2; m < free.size(); ++m) CHECK(std::abs(free[m]) < 1e-10);

    CHECK_THROWS_AS(smatrix_coeffs(h, 2.0, 13), ConfigError);
    CHECK_THROWS_AS(smatrix_coeffs(h, 0.5, 3, 0.6), DomainError);
}
