#include "atomlaser/errors.hpp"
#include "atomlaser/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace atomlaser;

namespace {

constexpr double kPi = std::numbers::pi;

// Dawson integral D(x) = exp(-x^2) int_0^x exp(s^2) ds by its Maclaurin series.
double dawson(double x) {
    double term = x, sum = x;
    for (int n = 1; n < 60; ++n) {
        term *= -2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    return sum;
}

double piecewise_gauss(const std::function<double(double)>& f, double a, double b, int pieces) {
    double s = 0.0;
    const double h = (b - a) / pieces;
    for (int i = 0; i < pieces; ++i) s += gauss_legendre(f, a + i * h, a + (i + 1) * h);
    return s;
}

}  // namespace

TEST_CASE("alpha from the reference parameters") {
    const auto p = reference_trap(1e5);
    CHECK(derive_alpha(p) == doctest::Approx(2.636e3).epsilon(1e-3));
    auto q = p;
    q.sigma_k *= 2.0;
    CHECK(derive_alpha(q) == doctest::Approx(4.0 * derive_alpha(p)).epsilon(1e-14));
    q = p;
    q.mass *= 2.0;
    CHECK(derive_alpha(q) == doctest::Approx(0.5 * derive_alpha(p)).epsilon(1e-14));
}

TEST_CASE("parameter validation") {
    auto p = reference_trap(1e5);
    p.mass = -1.0;
    CHECK_THROWS_AS(p.validate(), InvalidParameter);
    p = reference_trap(1e5);
    p.coupling = -1.0;
    CHECK_THROWS_AS(p.validate(), InvalidParameter);
    CHECK_NOTHROW(reference_trap(0.0).validate());
}

TEST_CASE("Gaussian coupling amplitude") {
    const auto p = reference_trap(1e5);
    const double s = p.sigma_k;
    const cplx k0 = coupling_kappa(p, 0.0);
    CHECK(k0.real() == 0.0);
    CHECK(k0.imag() == doctest::Approx(std::sqrt(p.coupling) * std::pow(2.0 * kPi * s * s, -0.25)).epsilon(1e-14));
    CHECK(std::abs(coupling_kappa(p, 2.0 * s)) / std::abs(k0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(std::abs(coupling_kappa(p, 0.7 * s)) == doctest::Approx(std::abs(coupling_kappa(p, -0.7 * s))).epsilon(1e-15));
    CHECK(std::abs(detail::coupling_kappa_shifted(p, 3e5 + 0.4 * s, 3e5)) ==
          doctest::Approx(std::abs(detail::coupling_kappa_shifted(p, 3e5 - 0.4 * s, 3e5))).epsilon(1e-14));
    const double norm = piecewise_gauss([&](double k) { return std::norm(coupling_kappa(p, k)); }, -12 * s, 12 * s, 48);
    CHECK(norm == doctest::Approx(p.coupling).epsilon(1e-12));
}

TEST_CASE("spectral density values and normalization") {
    const auto p = reference_trap(1e5);
    const double a = p.alpha();
    CHECK(spectral_density(p, a) == doctest::Approx(p.coupling / (a * std::sqrt(kPi) * std::exp(1.0))).epsilon(1e-14));
    CHECK(spectral_density(p, a / 4) == doctest::Approx(2.0 * p.coupling * std::exp(-0.25) / (a * std::sqrt(kPi))).epsilon(1e-14));
    CHECK(spectral_density(p, 1e-3 * a) > 0.0);
    CHECK_THROWS_AS(spectral_density(p, 0.0), DomainError);
    // omega = alpha x^2 removes the endpoint singularity.
    const double total = piecewise_gauss([&](double x) { return spectral_density(p, a * x * x) * 2.0 * a * x; }, 0.0, 9.0, 36);
    CHECK(total == doctest::Approx(p.coupling).epsilon(1e-12));
}

TEST_CASE("correlation function closed form") {
    const auto p = reference_trap(1e5);
    const ReservoirFunctions res(p);
    CHECK(res.f(0.0) == cplx(p.coupling, 0.0));
    CHECK(std::abs(res.f(1.0 / res.alpha())) == doctest::Approx(p.coupling * std::pow(2.0, -0.25)).epsilon(1e-14));
    CHECK(res.phi(0.0) == doctest::Approx(2.0 * p.coupling));
    CHECK(res.psi(0.0) == 0.0);
    CHECK_THROWS_AS(res.f(-1e-9), DomainError);
    CHECK(correlation_f(p, 2e-3) == res.f(2e-3));
}

TEST_CASE("correlation function reconstructed from the spectral density") {
    const auto p = reference_trap(1e5);
    const ReservoirFunctions res(p);
    const double a = res.alpha();
    for (double at : {0.0, 0.3, 1.0, 7.5, 30.0, 100.0}) {
        const double tau = at / a;
        // f(tau) = exp(i omega0 tau) int_0^inf J(w) exp(-i w tau) dw with w = alpha x^2.
        const auto part = [&](bool imag) {
            return piecewise_gauss(
                [&](double x) {
                    const double w = a * x * x;
                    const double ph = -w * tau;
                    return spectral_density(p, w) * 2.0 * a * x * (imag ? std::sin(ph) : std::cos(ph));
                },
                0.0, 9.0, 3000);
        };
        const cplx recon = std::polar(1.0, p.omega0 * tau) * cplx(part(false), part(true));
        CHECK(std::abs(recon - res.f(tau)) < 1e-9 * p.coupling);
    }
}

TEST_CASE("Markov rate: closed form, spectral density and quadrature") {
    const auto p = reference_trap(5e4);
    const double gm = markov_rate(p);
    CHECK(gm == doctest::Approx(2.0 * kPi * spectral_density(p, p.omega0)).epsilon(1e-13));
    CHECK(markov_rate(reference_trap(1e5)) == doctest::Approx(2.0 * gm).epsilon(1e-14));

    const ReservoirFunctions res(p);
    TailOptions opt;
    opt.period = 2.0 * kPi / p.omega0;
    opt.phase_offset = 0.75 * kPi / p.omega0;
    const auto q = integrate_oscillatory_tail([&](double t) { return res.phi(t); }, opt);
    CHECK(q.value.real() == doctest::Approx(gm).epsilon(1e-3));
}

TEST_CASE("Markov Lamb shift against the Dawson-function closed form") {
    for (double g : {1e4, 5e4, 1e5}) {
        const auto p = reference_trap(g);
        const auto mc = markov_constants(p);
        const double a = p.alpha();
        const double expected = 4.0 * g * dawson(std::sqrt(p.omega0 / a)) / std::sqrt(a * p.omega0);
        CHECK(mc.shift_m == doctest::Approx(expected).epsilon(1e-7));
        CHECK(mc.shift_m_error < 1e-6 * std::abs(mc.shift_m));
        CHECK(mc.t_sys == doctest::Approx(1.0 / mc.gamma_m));
    }
    const auto zero = markov_constants(reference_trap(0.0));
    CHECK(zero.gamma_m == 0.0);
    CHECK(zero.shift_m == 0.0);
}

TEST_CASE("time-scale ratios of the reference scenarios") {
    CHECK(time_scale_ratio(reference_trap(5e4)) == doctest::Approx(16.0).epsilon(0.15));
    CHECK(time_scale_ratio(reference_trap(1e5)) == doctest::Approx(8.0).epsilon(0.15));
    CHECK(time_scale_ratio(reference_trap(1e4)) == doctest::Approx(5.0 * time_scale_ratio(reference_trap(5e4))).epsilon(1e-12));
    const auto mc = markov_constants(reference_trap(5e4));
    CHECK(mc.t_res == doctest::Approx(0.4 / reference_trap(5e4).omega0));
}
