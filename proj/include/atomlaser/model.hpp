#pragma once

#include "atomlaser/quad.hpp"

#include <complex>
#include <numbers>

namespace atomlaser {

/// Reduced Planck constant in J*s.
inline constexpr double kHbar = 1.054571817e-34;

/// Physical parameters of the single-mode trap and its Raman output coupler.
/// All values in SI; the coupling strength is in 1/s^2.
struct TrapParams {
    double mass = 0.0;        ///< atomic mass M (kg)
    double omega0 = 0.0;      ///< trap ground-state angular frequency (rad/s)
    double sigma_k = 0.0;     ///< ground-state width in k-space (1/m)
    double coupling = 0.0;    ///< output-coupling strength Gamma (1/s^2)

    /// Throws InvalidParameter when an invariant is violated.
    void validate() const;

    /// hbar * sigma_k^2 / (2 M), in 1/s.
    double alpha() const;
};

/// Parameter block used for all reference scenarios: M = 2e-26 kg,
/// omega0 = 2*pi*123 rad/s, sigma_k = 1e6 1/m, with the given coupling.
TrapParams reference_trap(double coupling);

double derive_alpha(const TrapParams& params);

/// Gaussian coupling amplitude kappa(k); momentum kick k0 is zero.
cplx coupling_kappa(const TrapParams& params, double k);

namespace detail {
/// Shifted Gaussian, only for checking the shape against k0 != 0.
cplx coupling_kappa_shifted(const TrapParams& params, double k, double k0);
}

/// J(omega) = Gamma / sqrt(pi alpha omega) * exp(-omega / alpha), omega > 0.
double spectral_density(const TrapParams& params, double omega);

/// f(tau) = exp(i omega0 tau) Gamma / sqrt(1 + i alpha tau), tau >= 0.
cplx correlation_f(const TrapParams& params, double tau);

/// Closed-form reservoir functions bound to one parameter set.
class ReservoirFunctions {
public:
    explicit ReservoirFunctions(const TrapParams& params);

    const TrapParams& params() const noexcept { return params_; }
    double alpha() const noexcept { return alpha_; }

    cplx f(double tau) const;
    /// Conjugate correlation, the memory kernel of the amplitude equation.
    cplx f_conj(double tau) const { return std::conj(f(tau)); }
    double phi(double tau) const { return 2.0 * f(tau).real(); }
    double psi(double tau) const { return 2.0 * f(tau).imag(); }
    double J(double omega) const;
    cplx kappa(double k) const;

    /// f* sampled on a grid starting at zero.
    SampledFunction kernel_on(const UniformGrid& grid) const;

private:
    TrapParams params_;
    double alpha_;
};

struct MarkovConstants {
    double gamma_m = 0.0;        ///< Markovian decay rate (1/s)
    double shift_m = 0.0;        ///< Markovian Lamb shift (rad/s)
    double shift_m_error = 0.0;  ///< quadrature error estimate of shift_m
    double t_sys = 0.0;          ///< 1 / gamma_m
    double t_res = 0.0;          ///< reservoir correlation time, fixed at 0.4 / omega0
    double time_scale_ratio = 0.0;
};

/// gamma_M = Gamma sqrt(4 pi / (omega0 alpha)) exp(-omega0 / alpha).
double markov_rate(const TrapParams& params);

/// Born-Markov validity ratio omega0^{3/2} sqrt(alpha/pi) exp(omega0/alpha) / Gamma.
double time_scale_ratio(const TrapParams& params);

/// gamma_M in closed form and S_M by accelerated quadrature of psi.
MarkovConstants markov_constants(const TrapParams& params);

}  // namespace atomlaser
