#include "atomlaser/errors.hpp"
#include "atomlaser/quad.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace atomlaser;

namespace {

SampledFunction constant(const UniformGrid& g, cplx v) { return {g, std::vector<cplx>(g.n_points, v)}; }

}  // namespace

TEST_CASE("covering grid reaches t_max") {
    const auto g = UniformGrid::covering(1.0, 0.25);
    CHECK(g.n_points == 5);
    CHECK(g.t_end() == doctest::Approx(1.0));
    CHECK(UniformGrid::covering(1.0, 0.3).t_end() >= 1.0);
    CHECK_THROWS_AS(UniformGrid::covering(1.0, 0.0), InvalidParameter);
}

TEST_CASE("cumulative integral of constants and lines is exact") {
    const auto g = UniformGrid::covering(1.0, 0.25);
    const auto F = cumulative_integral(constant(g, 1.0));
    const double expected[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t j = 0; j < 5; ++j) CHECK(F.values[j].real() == doctest::Approx(expected[j]).epsilon(1e-15));
    const auto lin = cumulative_integral(sample<double>(g, [](double t) { return t; }));
    CHECK(lin.values.back() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("cumulative integral of a phase converges at second order") {
    const double w = 7.0;
    double prev = 0.0;
    for (double dt : {0.02, 0.01, 0.005}) {
        const auto g = UniformGrid::covering(1.0, dt);
        const auto F = cumulative_integral(sample<cplx>(g, [w](double t) { return std::exp(cplx(0.0, w * t)); }));
        double err = 0.0;
        for (std::size_t j = 0; j < g.n_points; ++j) {
            const cplx exact = (std::exp(cplx(0.0, w * g.time(j))) - 1.0) / cplx(0.0, w);
            err = std::max(err, std::abs(F.values[j] - exact));
        }
        if (prev > 0.0) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.5 / 4.0 * 1.5));
        prev = err;
    }
}

TEST_CASE("cumulative integral is linear") {
    const auto g = UniformGrid::covering(2.0, 0.01);
    const auto f = sample<cplx>(g, [](double t) { return std::exp(cplx(-t, 3.0 * t)); });
    const auto h = sample<cplx>(g, [](double t) { return cplx(std::cos(t), t * t); });
    SampledFunction mix = f;
    const cplx a(2.0, -1.0), b(-0.5, 3.0);
    for (std::size_t j = 0; j < g.n_points; ++j) mix.values[j] = a * f.values[j] + b * h.values[j];
    const auto Fm = cumulative_integral(mix);
    const auto Ff = cumulative_integral(f);
    const auto Fh = cumulative_integral(h);
    for (std::size_t j = 0; j < g.n_points; ++j)
        CHECK(std::abs(Fm.values[j] - (a * Ff.values[j] + b * Fh.values[j])) < 1e-13);
}

TEST_CASE("iterated convolution oracles") {
    const auto g = UniformGrid::covering(2.0, 0.01);
    const auto zero = iterated_convolution(constant(g, 0.0), constant(g, 1.0));
    for (const auto& v : zero.values) CHECK(v == cplx(0.0, 0.0));

    const auto lin = iterated_convolution(constant(g, 1.0), constant(g, 1.0));
    for (std::size_t j = 0; j < g.n_points; ++j) CHECK(lin.values[j].real() == doctest::Approx(g.time(j)).epsilon(1e-12));

    double prev = 0.0;
    for (double dt : {0.02, 0.01, 0.005}) {
        const auto gg = UniformGrid::covering(2.0, dt);
        const auto v = iterated_convolution(sample<cplx>(gg, [](double t) { return std::exp(-t); }), constant(gg, 1.0));
        CHECK(v.values.front() == cplx(0.0, 0.0));
        double err = 0.0;
        for (std::size_t j = 0; j < gg.n_points; ++j) err = std::max(err, std::abs(v.values[j] - (1.0 - std::exp(-gg.time(j)))));
        if (prev > 0.0) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.375));
        prev = err;
    }
}

TEST_CASE("iterated convolution is bilinear and rejects mismatched grids") {
    const auto g = UniformGrid::covering(1.0, 0.01);
    const auto k1 = sample<cplx>(g, [](double t) { return cplx(std::cos(3 * t), t); });
    const auto k2 = sample<cplx>(g, [](double t) { return cplx(1.0, -t * t); });
    const auto u = sample<cplx>(g, [](double t) { return std::exp(cplx(0.0, t)); });
    SampledFunction ksum = k1;
    for (std::size_t j = 0; j < g.n_points; ++j) ksum.values[j] = 2.0 * k1.values[j] + k2.values[j];
    const auto lhs = iterated_convolution(ksum, u);
    const auto a = iterated_convolution(k1, u);
    const auto b = iterated_convolution(k2, u);
    for (std::size_t j = 0; j < g.n_points; ++j) CHECK(std::abs(lhs.values[j] - (2.0 * a.values[j] + b.values[j])) < 1e-13);
    CHECK_THROWS_AS(iterated_convolution(k1, constant(UniformGrid::covering(1.0, 0.02), 1.0)), InvalidParameter);
}

TEST_CASE("simplex integral volume and moments") {
    const SimplexIntegrand one = [](double, double, double) { return cplx(1.0, 0.0); };
    const SimplexIntegrand first = [](double t1, double, double) { return cplx(t1, 0.0); };
    const double t = 1.0;
    const auto e1 = simplex_integral_3_estimate(one, t, 0.05, SimplexPath::direct);
    CHECK(std::abs(e1.value - 1.0 / 6.0) < 3e-3);
    CHECK(std::abs(e1.value - 1.0 / 6.0) <= 3.0 * e1.error + 1e-14);
    const auto e2 = simplex_integral_3_estimate(first, t, 0.05, SimplexPath::direct);
    CHECK(std::abs(e2.value - 1.0 / 8.0) < 3e-3);

    // Richardson: errors at dt and dt/2 shrink by about four.
    const double err_c = std::abs(simplex_integral_3(one, t, 0.1, SimplexPath::direct) - 1.0 / 6.0);
    const double err_f = std::abs(simplex_integral_3(one, t, 0.05, SimplexPath::direct) - 1.0 / 6.0);
    CHECK(err_c / err_f == doctest::Approx(4.0).epsilon(0.375));
}

TEST_CASE("factorized and direct simplex paths agree") {
    FactorizedIntegrand g;
    const LagFunction a = [](double x) { return std::exp(cplx(-0.3 * x, 2.0 * x)); };
    const LagFunction b = [](double x) { return cplx(1.0 / std::sqrt(1.0 + x), 0.2 * x); };
    g.terms.push_back({Pairing::outer_first, a, b, cplx(1.0, 0.5)});
    g.terms.push_back({Pairing::outer_second, b, a, cplx(-0.7, 0.0)});
    g.terms.push_back({Pairing::outer_third, a, a, cplx(0.0, 2.0)});
    const double t = 1.2, dt = 0.04;
    // Same discrete sum for the outer_first pairing; the others reorder the
    // nested trapezoid weights and agree only to O(dt^2).
    FactorizedIntegrand first;
    first.terms.push_back(g.terms.front());
    const cplx d1 = simplex_integral_3(first, t, dt, SimplexPath::direct);
    const cplx f1 = simplex_integral_3(first, t, dt, SimplexPath::factorized);
    CHECK(std::abs(d1 - f1) < 1e-12 * std::max(1.0, std::abs(d1)));
    const auto direct = simplex_integral_3_estimate(g, t, dt, SimplexPath::direct);
    const auto fast = simplex_integral_3_estimate(g, t, dt, SimplexPath::factorized);
    CHECK(std::abs(direct.value - fast.value) <= 3.0 * (direct.error + fast.error));

    const auto grid = UniformGrid::covering(t, dt);
    const auto table = simplex_integral_3_table(g, grid);
    for (std::size_t j : {std::size_t{0}, std::size_t{7}, grid.n_points - 1}) {
        const cplx point = simplex_integral_3(g, grid.time(j), dt, SimplexPath::factorized);
        CHECK(std::abs(table.values[j] - point) < 1e-12 * std::max(1.0, std::abs(point)));
    }

    // Analytic oracle: a(x) = x on the first pairing gives t^4 / 24.
    FactorizedIntegrand lin;
    lin.terms.push_back({Pairing::outer_first, [](double x) { return cplx(x, 0.0); },
                         [](double) { return cplx(1.0, 0.0); }, 1.0});
    const auto est = simplex_integral_3_estimate(lin, 1.0, 0.02, SimplexPath::factorized);
    CHECK(std::abs(est.value - 1.0 / 24.0) < 1e-3);
    CHECK(std::abs(est.value - 1.0 / 24.0) <= 3.0 * est.error + 1e-14);

    const SimplexIntegrand general = [](double, double, double) { return cplx(1.0, 0.0); };
    CHECK_THROWS_AS(simplex_integral_3(general, 1.0, 0.1, SimplexPath::factorized), InvalidParameter);
}

TEST_CASE("Gauss-Legendre is exact for degree 39") {
    CHECK(gauss_legendre([](double x) { return std::pow(x, 19); }, 0.0, 1.0) == doctest::Approx(1.0 / 20.0).epsilon(1e-14));
    CHECK(gauss_legendre([](double x) { return std::pow(x, 39); }, 0.0, 1.0) == doctest::Approx(1.0 / 40.0).epsilon(1e-12));
}

TEST_CASE("oscillatory tail quadrature") {
    TailOptions opt;
    opt.period = 2.0 * std::numbers::pi;
    opt.phase_offset = std::numbers::pi;
    const auto sinc = integrate_oscillatory_tail([](double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }, opt);
    CHECK(sinc.value.real() == doctest::Approx(std::numbers::pi / 2).epsilon(1e-9));

    // int_0^inf cos(x) / (1 + x) dx = reference value from an independent arbitrary-precision quadrature.
    const auto ci = integrate_oscillatory_tail([](double x) { return std::cos(x) / (1.0 + x); },
                                               {2.0 * std::numbers::pi, 0.5 * std::numbers::pi, 40, 24, 4, 1e-10});
    CHECK(ci.value.real() == doctest::Approx(0.34337796155642).epsilon(1e-8));

    opt.tolerance = 1e-300;
    opt.tail_panels = 4;
    CHECK_THROWS_AS(integrate_oscillatory_tail([](double x) { return std::cos(x) / std::sqrt(1.0 + x); }, opt),
                    NumericalFailure);
}
