#include "atomlaser/tcl.hpp"

#include "atomlaser/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace atomlaser {

std::vector<double> RateSeries::total_gamma(int order) const {
    const int top = order > 0 ? order : order_max;
    std::vector<double> sum(grid.n_points, 0.0);
    for (const auto& [n, values] : gamma_by_order) {
        if (n > top) continue;
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += values[j];
    }
    return sum;
}

std::vector<double> RateSeries::total_shift(int order) const {
    const int top = order > 0 ? order : order_max;
    std::vector<double> sum(grid.n_points, 0.0);
    for (const auto& [n, values] : shift_by_order) {
        if (n > top) continue;
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += values[j];
    }
    return sum;
}

namespace {

void require_origin(const UniformGrid& grid) {
    grid.validate();
    if (grid.t0 != 0.0) throw InvalidParameter("rate grids must start at t = 0");
}

RatePair split(const SampledFunction& g) {
    RatePair out{{g.grid, std::vector<double>(g.size())}, {g.grid, std::vector<double>(g.size())}};
    for (std::size_t j = 0; j < g.size(); ++j) {
        out.gamma.values[j] = g.values[j].real();
        out.shift.values[j] = -g.values[j].imag();
    }
    return out;
}

}  // namespace

RatePair tcl2_rates(const TrapParams& params, const UniformGrid& grid) {
    require_origin(grid);
    const ReservoirFunctions res(params);
    // phi - i psi = 2 f*, so both rates come from one cumulative table.
    auto twice_kernel = res.kernel_on(grid);
    for (auto& v : twice_kernel.values) v *= 2.0;
    return split(cumulative_integral(twice_kernel));
}

FactorizedIntegrand tcl4_integrand(const TrapParams& params) {
    const ReservoirFunctions res(params);
    LagFunction kernel = [res](double tau) { return res.f_conj(tau); };
    FactorizedIntegrand g;
    g.terms.push_back({Pairing::outer_second, kernel, kernel, 2.0});
    g.terms.push_back({Pairing::outer_third, kernel, kernel, 2.0});
    return g;
}

RatePair tcl4_rates(const TrapParams& params, const UniformGrid& grid, const Tcl4Options& options) {
    require_origin(grid);
    const auto integrand = tcl4_integrand(params);
    const auto table = simplex_integral_3_table(integrand, grid);

    if (options.validate_direct && params.coupling > 0.0) {
        const std::size_t m = std::min(options.validation_steps, grid.n_points - 1);
        const double t = grid.time(m);
        const auto direct = simplex_integral_3_estimate(integrand, t, grid.dt, SimplexPath::direct);
        const auto fast = simplex_integral_3_estimate(integrand, t, grid.dt, SimplexPath::factorized);
        const double diff = std::abs(direct.value - fast.value);
        const double tol = 10.0 * (direct.error + fast.error) + 1e-12 * std::abs(direct.value);
        if (diff > tol) {
            std::ostringstream msg;
            msg << "fourth-order quadrature paths disagree at t = " << t << " s: |diff| = " << diff
                << " > " << tol;
            throw NumericalFailure(msg.str(), diff);
        }
    }
    return split(table);
}

std::vector<cplx> series_divide(const std::vector<cplx>& num, const std::vector<cplx>& den) {
    if (den.empty() || std::abs(den[0]) < 1e-300)
        throw NumericalFailure("series division: leading denominator coefficient vanishes");
    std::vector<cplx> q(num.size());
    for (std::size_t i = 0; i < num.size(); ++i) {
        cplx s = num[i];
        for (std::size_t j = 1; j <= i && j < den.size(); ++j) s -= den[j] * q[i - j];
        q[i] = s / den[0];
    }
    return q;
}

RateSeries tcl_series_rates(const TrapParams& params, const UniformGrid& grid, int order_max) {
    if (order_max != 2 && order_max != 4 && order_max != 6)
        throw InvalidParameter("TCL order must be 2, 4 or 6, got " + std::to_string(order_max));
    require_origin(grid);
    const ReservoirFunctions res(params);
    const auto kernel = res.kernel_on(grid);
    const std::size_t terms = static_cast<std::size_t>(order_max / 2);

    // Neumann terms: u_0 = 1, du_m = f* (*) u_{m-1}, u_m = int du_m, with
    // u = sum (-1)^m u_m and du/dt = sum (-1)^m du_{m+1}; each carries Gamma^m.
    std::vector<SampledFunction> u_terms;
    std::vector<SampledFunction> du_terms;
    u_terms.push_back({grid, std::vector<cplx>(grid.n_points, cplx(1.0, 0.0))});
    du_terms.push_back({grid, std::vector<cplx>(grid.n_points)});
    for (std::size_t m = 1; m <= terms; ++m) {
        du_terms.push_back(iterated_convolution(kernel, u_terms[m - 1]));
        if (m < terms) u_terms.push_back(cumulative_integral(du_terms[m]));
    }

    RateSeries out;
    out.grid = grid;
    out.order_max = order_max;
    for (std::size_t p = 1; p <= terms; ++p) {
        out.gamma_by_order[static_cast<int>(2 * p)].assign(grid.n_points, 0.0);
        out.shift_by_order[static_cast<int>(2 * p)].assign(grid.n_points, 0.0);
    }

    // g = -2 (du/dt) / u, expanded as a power series in Gamma at each node.
    std::vector<cplx> num(terms + 1), den(terms + 1);
    for (std::size_t j = 0; j < grid.n_points; ++j) {
        num[0] = 0.0;
        for (std::size_t p = 1; p <= terms; ++p) num[p] = (p % 2 == 1 ? 2.0 : -2.0) * du_terms[p].values[j];
        for (std::size_t p = 0; p < terms; ++p) den[p] = (p % 2 == 0 ? 1.0 : -1.0) * u_terms[p].values[j];
        den[terms] = 0.0;
        const auto q = series_divide(num, den);
        for (std::size_t p = 1; p <= terms; ++p) {
            out.gamma_by_order[static_cast<int>(2 * p)][j] = q[p].real();
            out.shift_by_order[static_cast<int>(2 * p)][j] = -q[p].imag();
        }
    }
    return out;
}

RealSampled occupation_from_rate(const RealSampled& gamma) {
    auto integral = cumulative_integral(gamma);
    for (auto& v : integral.values) v = std::exp(-v);
    return integral;
}

RealSampled occupation_from_rates(const RateSeries& rates) {
    return occupation_from_rate({rates.grid, rates.total_gamma()});
}

WaitingTime waiting_time(const RealSampled& n) {
    if (n.values.empty()) throw InvalidParameter("waiting_time: empty occupation");
    if (std::abs(n.values.front() - 1.0) > 1e-9) throw InvalidParameter("waiting_time: occupation must start at 1");
    WaitingTime out;
    out.distribution = {n.grid, std::vector<double>(n.size())};
    for (std::size_t j = 0; j < n.size(); ++j) out.distribution.values[j] = 1.0 - n.values[j];
    const auto& F = out.distribution.values;
    std::size_t j = 1;
    while (j < F.size()) {
        if (F[j] < F[j - 1]) {
            const std::size_t begin = j - 1;
            while (j < F.size() && F[j] < F[j - 1]) ++j;
            out.decreasing.emplace_back(begin, j - 1);
        } else {
            ++j;
        }
    }
    return out;
}

double asymptotic_envelope(const TrapParams& params, double t) {
    params.validate();
    if (!(t > 0.0)) throw DomainError("asymptotic rate needs t > 0");
    return 2.0 * params.coupling / std::sqrt(params.alpha() * params.omega0 * params.omega0 * t);
}

double asymptotic_gamma2(const TrapParams& params, double t) {
    params.validate();
    if (!(t > 0.0)) throw DomainError("asymptotic rate needs t > 0");
    const double phase = params.omega0 * t;
    if (phase < 10.0) throw DomainError("asymptotic rate needs omega0 * t >= 10, got " + std::to_string(phase));
    if (phase < 30.0) warn("asymptotic rate used at omega0 * t = " + std::to_string(phase) + " < 30");
    return markov_rate(params) - asymptotic_envelope(params, t) * std::cos(phase + 0.25 * std::numbers::pi);
}

}  // namespace atomlaser
