#include "atomlaser/errors.hpp"
#include "atomlaser/volterra.hpp"

#include <doctest.h>

#include <cmath>

using namespace atomlaser;

namespace {

double base_dt(const TrapParams& p) { return 0.05 * std::min(1.0 / p.omega0, 1.0 / p.alpha()); }

std::size_t node(const UniformGrid& g, double t) { return static_cast<std::size_t>(std::lround(t / g.dt)); }

}  // namespace

TEST_CASE("zero coupling leaves the amplitude untouched") {
    const auto p = reference_trap(0.0);
    const auto traj = solve_amplitude(p, 0.01, base_dt(p));
    for (const auto& u : traj.u) CHECK(u == cplx(1.0, 0.0));
    const auto r = exact_rates(traj);
    CHECK_FALSE(r.diverged);
    for (double v : r.gamma.values) CHECK(v == 0.0);
    for (double v : r.shift.values) CHECK(v == 0.0);
}

TEST_CASE("time step must resolve the reservoir") {
    const auto p = reference_trap(1e5);
    CHECK_THROWS_AS(solve_amplitude(p, 0.01, 2.0 * base_dt(p)), InvalidParameter);
    SolveOptions loose;
    loose.enforce_resolution = false;
    CHECK_NOTHROW(solve_amplitude(p, 0.001, 2.0 * base_dt(p), loose));
}

TEST_CASE("short-time expansion n = 1 - Gamma t^2") {
    const auto p = reference_trap(1e5);
    const double t = 1e-3 / p.alpha();
    const auto traj = solve_amplitude(p, t, t / 100.0);
    const double n = std::norm(traj.u.back());
    CHECK((1.0 - n) / (p.coupling * t * t) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("occupation is the squared modulus") {
    AmplitudeTrajectory traj;
    traj.grid = UniformGrid::covering(1.0, 0.1);
    const double g = 0.8;
    for (std::size_t j = 0; j < traj.grid.n_points; ++j) traj.u.push_back(std::exp(-0.5 * g * traj.grid.time(j)));
    const auto n = occupation(traj);
    for (std::size_t j = 0; j < n.size(); ++j) CHECK(n.values[j] == doctest::Approx(std::exp(-g * traj.grid.time(j))).epsilon(1e-14));
}

TEST_CASE("weak coupling follows Born-Markov") {
    const auto p = reference_trap(1e3);
    const double gm = markov_rate(p);
    const auto traj = solve_amplitude(p, 3.0 / gm, base_dt(p));
    const auto n = occupation(traj);
    double worst = 0.0;
    for (std::size_t j = 0; j < n.size(); ++j) worst = std::max(worst, std::abs(n.values[j] - std::exp(-gm * n.grid.time(j))));
    CHECK(worst < 0.02);
}

TEST_CASE("moderate coupling decays slower than Born-Markov") {
    const auto p = reference_trap(5e4);
    const double gm = markov_rate(p);
    const auto traj = solve_amplitude(p, 3.0 / gm, base_dt(p));
    const auto n = occupation(traj);
    const auto j2 = node(n.grid, 2.0 / gm);
    const auto j3 = node(n.grid, 3.0 / gm);
    CHECK(n.values[j2] > std::exp(-gm * n.grid.time(j2)));
    CHECK(n.values[j3] > 1.1 * std::exp(-gm * n.grid.time(j3)));
}

TEST_CASE("exact rate starts with slope 2 Gamma") {
    const auto p = reference_trap(1e5);
    const double dt = 1e-4 / p.alpha();
    const auto r = exact_rates(solve_amplitude(p, 1e-2 / p.alpha(), dt));
    const std::size_t j = r.gamma.size() - 1;
    CHECK(r.gamma.values[0] == 0.0);
    CHECK(r.gamma.values[j] / r.gamma.grid.time(j) == doctest::Approx(2.0 * p.coupling).epsilon(0.01));
}

TEST_CASE("exp(-int gamma_exact) reproduces the occupation") {
    const auto p = reference_trap(5e4);
    const double gm = markov_rate(p);
    const auto traj = solve_amplitude(p, 4.0 / gm, base_dt(p));
    const auto r = exact_rates(traj);
    REQUIRE_FALSE(r.diverged);
    auto integral = cumulative_integral(r.gamma);
    const auto n = occupation(traj);
    double worst = 0.0;
    for (std::size_t j = 0; j < n.size(); ++j) worst = std::max(worst, std::abs(std::exp(-integral.values[j]) - n.values[j]));
    CHECK(worst < 1e-4);
}

TEST_CASE("grid refinement converges at second order") {
    const auto p = reference_trap(5e4);
    const double t_max = 1.0 / markov_rate(p);
    const double dt = base_dt(p);
    const auto n1 = occupation(solve_amplitude(p, t_max, dt)).values;
    const auto n2 = occupation(solve_amplitude(p, t_max, dt / 2)).values;
    const auto n4 = occupation(solve_amplitude(p, t_max, dt / 4)).values;
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t j = 0; j < n1.size() && 4 * j < n4.size(); ++j) {
        e1 = std::max(e1, std::abs(n1[j] - n2[2 * j]));
        e2 = std::max(e2, std::abs(n2[2 * j] - n4[4 * j]));
    }
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.5));
}

TEST_CASE("monotone draining where Born-Markov holds") {
    const auto p = reference_trap(1e4);
    const auto n = occupation(solve_amplitude(p, 3.0 / markov_rate(p), base_dt(p)));
    std::size_t rises = 0;
    for (std::size_t j = 1; j < n.size(); ++j)
        if (n.values[j] > n.values[j - 1]) ++rises;
    CHECK(rises == 0);
}

TEST_CASE("strong coupling: collapse, revival and a pole in the rate") {
    const auto p = reference_trap(1e6);
    const double gm = markov_rate(p);
    const auto traj = solve_amplitude(p, 8.0 / gm, 4e-6);
    const auto n = occupation(traj);
    const auto r = exact_rates(traj);
    const auto info = find_first_collapse(n, r.gamma, gm);
    REQUIRE(info.found);
    CHECK(info.n_revival > info.n_min);
    CHECK(info.t_revival > info.t_min);
    CHECK(info.rate_pole);
    CHECK(info.peak_rate > 3.0 * gm);
    CHECK(info.trough_rate < -3.0 * gm);
}
