#include "atomlaser/volterra.hpp"

#include "atomlaser/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace atomlaser {

namespace {

constexpr double kDivergentModulus = 1.0 + 1e-3;
constexpr double kModulusSanity = 1.0 + 1e-6;
constexpr double kVanishingAmplitude = 1e-6;

}  // namespace

AmplitudeTrajectory solve_amplitude(const TrapParams& params, double t_max, double dt, const SolveOptions& options) {
    const ReservoirFunctions res(params);
    if (options.enforce_resolution) {
        const double limit = options.resolution * std::min(1.0 / params.omega0, 1.0 / res.alpha());
        if (dt > limit * (1.0 + 1e-12)) {
            std::ostringstream msg;
            msg << "time step " << dt << " s does not resolve the reservoir (limit " << limit << " s)";
            throw InvalidParameter(msg.str());
        }
    }
    const UniformGrid grid = UniformGrid::covering(t_max, dt);
    const std::size_t n = grid.n_points;
    const auto kernel = res.kernel_on(grid);
    const cplx* k = kernel.values.data();

    AmplitudeTrajectory traj;
    traj.grid = grid;
    traj.u.assign(n, cplx{});
    traj.du.assign(n, cplx{});
    traj.u[0] = 1.0;

    // du_j = -dt [ k_0 u_j / 2 + sum_{m=1}^{j-1} k_m u_{j-m} + k_j u_0 / 2 ]
    // u_j  = u_{j-1} + dt/2 (du_{j-1} + du_j), solved for u_j.
    const double half = 0.5 * dt;
    const cplx diag = 1.0 + half * half * k[0];
    for (std::size_t j = 1; j < n; ++j) {
        cplx history = 0.5 * k[j] * traj.u[0];
        for (std::size_t m = 1; m < j; ++m) history += k[m] * traj.u[j - m];
        const cplx explicit_part = -dt * history;
        const cplx uj = (traj.u[j - 1] + half * traj.du[j - 1] + half * explicit_part) / diag;
        traj.u[j] = uj;
        traj.du[j] = explicit_part - half * k[0] * uj;

        const double mod = std::abs(uj);
        if (!std::isfinite(mod) || mod > kDivergentModulus) {
            std::ostringstream msg;
            msg << "amplitude solver diverged at t = " << grid.time(j) << " s (|u| = " << mod << ")";
            throw NumericalFailure(msg.str(), mod);
        }
        traj.max_modulus = std::max(traj.max_modulus, mod);
    }
    if (traj.max_modulus > kModulusSanity) {
        std::ostringstream msg;
        msg << "amplitude exceeds unity by " << traj.max_modulus - 1.0 << "; refine the time step";
        warn(msg.str());
    }
    return traj;
}

RealSampled occupation(const AmplitudeTrajectory& traj) {
    RealSampled n{traj.grid, std::vector<double>(traj.u.size())};
    for (std::size_t j = 0; j < traj.u.size(); ++j) n.values[j] = std::norm(traj.u[j]);
    return n;
}

ExactRates exact_rates(const AmplitudeTrajectory& traj) {
    ExactRates out;
    std::size_t valid = traj.u.size();
    for (std::size_t j = 0; j < traj.u.size(); ++j) {
        if (std::abs(traj.u[j]) < kVanishingAmplitude) {
            valid = j;
            out.diverged = true;
            out.divergence_time = traj.grid.time(j);
            break;
        }
    }
    UniformGrid g = traj.grid;
    g.n_points = valid;
    out.gamma = {g, std::vector<double>(valid)};
    out.shift = {g, std::vector<double>(valid)};
    for (std::size_t j = 0; j < valid; ++j) {
        const cplx ratio = traj.du[j] / traj.u[j];
        out.gamma.values[j] = -2.0 * ratio.real();
        out.shift.values[j] = 2.0 * ratio.imag();
    }
    return out;
}

CollapseInfo find_first_collapse(const RealSampled& n, const RealSampled& gamma_exact, double gamma_m,
                                 double pole_factor) {
    CollapseInfo info;
    const auto& v = n.values;
    const std::size_t len = v.size();
    std::size_t jmin = 0;
    for (std::size_t j = 1; j + 1 < len; ++j) {
        if (v[j - 1] > v[j] && v[j] <= v[j + 1]) {
            jmin = j;
            break;
        }
    }
    if (jmin == 0) return info;
    std::size_t jmax = 0;
    for (std::size_t j = jmin + 1; j + 1 < len; ++j) {
        if (v[j - 1] < v[j] && v[j] >= v[j + 1]) {
            jmax = j;
            break;
        }
    }
    if (jmax == 0) return info;

    info.found = true;
    info.t_min = n.grid.time(jmin);
    info.n_min = v[jmin];
    info.t_revival = n.grid.time(jmax);
    info.n_revival = v[jmax];

    const auto& g = gamma_exact.values;
    const std::size_t upto = std::min(jmin + 1, g.size());
    if (upto > 0) info.peak_rate = *std::max_element(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(upto));
    if (jmin < g.size()) {
        const std::size_t end = std::min(jmax + 1, g.size());
        info.trough_rate = *std::min_element(g.begin() + static_cast<std::ptrdiff_t>(jmin),
                                             g.begin() + static_cast<std::ptrdiff_t>(end));
    }
    info.rate_pole = info.peak_rate > pole_factor * gamma_m && info.trough_rate < -pole_factor * gamma_m;
    return info;
}

}  // namespace atomlaser
