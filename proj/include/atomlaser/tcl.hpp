#pragma once

#include "atomlaser/model.hpp"
#include "atomlaser/quad.hpp"

#include <map>
#include <utility>
#include <vector>

namespace atomlaser {

/// Time-dependent decay rates gamma^(n)(t) and Lamb shifts S^(n)(t) of the
/// time-convolutionless generator, one array per even order n <= order_max.
struct RateSeries {
    UniformGrid grid;
    int order_max = 2;
    std::map<int, std::vector<double>> gamma_by_order;
    std::map<int, std::vector<double>> shift_by_order;

    /// Sum of gamma^(n) over the stored orders up to `order` (default: all).
    std::vector<double> total_gamma(int order = 0) const;
    std::vector<double> total_shift(int order = 0) const;
};

struct RatePair {
    RealSampled gamma;
    RealSampled shift;
};

/// gamma^(2) = int_0^t phi, S^(2) = int_0^t psi (cumulative trapezoid).
RatePair tcl2_rates(const TrapParams& params, const UniformGrid& grid);

struct Tcl4Options {
    /// Compare the O(n^2) factorized tables against the O(n^3) direct path at
    /// a few early nodes and throw NumericalFailure on disagreement.
    bool validate_direct = true;
    std::size_t validation_steps = 24;  ///< largest node index checked
};

/// Fourth-order rates from the ordered triple integrals. The integrand is
/// 2 [f*(t-t2) f*(t1-t3) + f*(t-t3) f*(t1-t2)], whose real part gives gamma^(4)
/// and minus its imaginary part S^(4).
RatePair tcl4_rates(const TrapParams& params, const UniformGrid& grid, const Tcl4Options& options = {});

/// The triple-integral integrand above as a factorized spec.
FactorizedIntegrand tcl4_integrand(const TrapParams& params);

/// Rates up to order 2, 4 or 6 from the logarithmic derivative of the Neumann
/// series of the amplitude equation, expanded order by order in Gamma.
RateSeries tcl_series_rates(const TrapParams& params, const UniformGrid& grid, int order_max);

/// n(t) = exp(-int_0^t gamma), with gamma summed over all stored orders.
RealSampled occupation_from_rates(const RateSeries& rates);
RealSampled occupation_from_rate(const RealSampled& gamma);

struct WaitingTime {
    RealSampled distribution;  ///< F = 1 - n
    /// [begin, end] node ranges where F decreases.
    std::vector<std::pair<std::size_t, std::size_t>> decreasing;
    bool monotone() const noexcept { return decreasing.empty(); }
};

/// F(t) = 1 - n(t); decreasing stretches are flagged, not rejected.
WaitingTime waiting_time(const RealSampled& n);

/// gamma_M - 2 Gamma / sqrt(alpha omega0^2 t) cos(omega0 t + pi/4); needs
/// omega0 t >= 10 and warns below 30.
double asymptotic_gamma2(const TrapParams& params, double t);

/// The t^{-1/2} envelope 2 Gamma / sqrt(alpha omega0^2 t).
double asymptotic_envelope(const TrapParams& params, double t);

/// Formal power series division q = num / den, coefficient by coefficient.
/// Throws NumericalFailure when den[0] vanishes.
std::vector<cplx> series_divide(const std::vector<cplx>& num, const std::vector<cplx>& den);

}  // namespace atomlaser
