#pragma once

#include "atomlaser/model.hpp"
#include "atomlaser/quad.hpp"

#include <optional>

namespace atomlaser {

/// Interaction-picture amplitude u(t) = c*(t) exp(-i omega0 t) / c*(0) of the
/// condensate mode, together with its time derivative taken from the
/// right-hand side of the memory equation.
struct AmplitudeTrajectory {
    UniformGrid grid;
    std::vector<cplx> u;
    std::vector<cplx> du;
    cplx c0{1.0, 0.0};
    double max_modulus = 1.0;  ///< largest |u| seen on the grid
};

struct SolveOptions {
    /// dt must not exceed resolution * min(1/omega0, 1/alpha).
    double resolution = 0.05;
    bool enforce_resolution = true;
};

/// Solves du/dt = -int_0^t f*(tau) u(t - tau) dtau, u(0) = 1, by the product
/// trapezoid scheme with the diagonal term treated implicitly.
AmplitudeTrajectory solve_amplitude(const TrapParams& params, double t_max, double dt,
                                    const SolveOptions& options = {});

/// Normalized occupation n(t) = |u(t)|^2.
RealSampled occupation(const AmplitudeTrajectory& traj);

struct ExactRates {
    RealSampled gamma;  ///< -2 Re(du/u)
    RealSampled shift;  ///< 2 Im(du/u), same sign convention as the TCL shifts
    bool diverged = false;
    std::optional<double> divergence_time;
};

/// Exact time-local rate and Lamb shift. Output stops at the first node where
/// |u| < 1e-6 and the result is flagged as diverged.
ExactRates exact_rates(const AmplitudeTrajectory& traj);

/// First collapse of the occupation: a local minimum followed by a local
/// maximum (revival). The rate at a collapse where u passes close to zero
/// shows a pole: a large positive peak, then a sign flip to a large negative
/// value.
struct CollapseInfo {
    bool found = false;
    double t_min = 0.0;
    double n_min = 0.0;
    double t_revival = 0.0;
    double n_revival = 0.0;
    double peak_rate = 0.0;    ///< max gamma before the minimum
    double trough_rate = 0.0;  ///< min gamma after the minimum
    /// peak and trough both exceed `pole_factor` gamma_M in magnitude.
    bool rate_pole = false;
};

CollapseInfo find_first_collapse(const RealSampled& n, const RealSampled& gamma_exact, double gamma_m,
                                 double pole_factor = 3.0);

}  // namespace atomlaser
