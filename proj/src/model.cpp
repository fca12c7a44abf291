#include "atomlaser/model.hpp"

#include "atomlaser/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace atomlaser {

namespace {

constexpr double kPi = std::numbers::pi;

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
        throw InvalidParameter(std::string(name) + " must be positive and finite, got " + std::to_string(v));
}

}  // namespace

void TrapParams::validate() const {
    require_positive(mass, "mass");
    require_positive(omega0, "omega0");
    require_positive(sigma_k, "sigma_k");
    if (!(coupling >= 0.0) || !std::isfinite(coupling))
        throw InvalidParameter("coupling must be non-negative and finite, got " + std::to_string(coupling));
}

double TrapParams::alpha() const { return derive_alpha(*this); }

TrapParams reference_trap(double coupling) {
    TrapParams p{2e-26, 2.0 * kPi * 123.0, 1e6, coupling};
    p.validate();
    return p;
}

double derive_alpha(const TrapParams& params) {
    require_positive(params.mass, "mass");
    require_positive(params.sigma_k, "sigma_k");
    return kHbar * params.sigma_k * params.sigma_k / (2.0 * params.mass);
}

namespace detail {

cplx coupling_kappa_shifted(const TrapParams& params, double k, double k0) {
    params.validate();
    const double s2 = params.sigma_k * params.sigma_k;
    const double amplitude = std::sqrt(params.coupling) / std::pow(2.0 * kPi * s2, 0.25);
    const double shape = std::exp(-(k - k0) * (k - k0) / (4.0 * s2));
    return {0.0, amplitude * shape};
}

}  // namespace detail

cplx coupling_kappa(const TrapParams& params, double k) { return detail::coupling_kappa_shifted(params, k, 0.0); }

double spectral_density(const TrapParams& params, double omega) {
    params.validate();
    if (!(omega > 0.0)) throw DomainError("spectral density is singular at omega <= 0");
    const double a = params.alpha();
    return params.coupling / std::sqrt(kPi * a * omega) * std::exp(-omega / a);
}

cplx correlation_f(const TrapParams& params, double tau) {
    return ReservoirFunctions(params).f(tau);
}

ReservoirFunctions::ReservoirFunctions(const TrapParams& params) : params_(params) {
    params_.validate();
    alpha_ = params_.alpha();
}

cplx ReservoirFunctions::f(double tau) const {
    if (tau < 0.0) throw DomainError("correlation function requested at negative lag");
    // Principal branch: arg(1 + i alpha tau) lies in [0, pi/2) for tau >= 0.
    const cplx root = std::sqrt(cplx(1.0, alpha_ * tau));
    return std::polar(params_.coupling, params_.omega0 * tau) / root;
}

double ReservoirFunctions::J(double omega) const { return spectral_density(params_, omega); }

cplx ReservoirFunctions::kappa(double k) const { return coupling_kappa(params_, k); }

SampledFunction ReservoirFunctions::kernel_on(const UniformGrid& grid) const {
    return sample<cplx>(grid, [this](double t) { return f_conj(t); });
}

double markov_rate(const TrapParams& params) {
    params.validate();
    const double a = params.alpha();
    return params.coupling * std::sqrt(4.0 * kPi / (params.omega0 * a)) * std::exp(-params.omega0 / a);
}

double time_scale_ratio(const TrapParams& params) {
    params.validate();
    if (params.coupling == 0.0) return std::numeric_limits<double>::infinity();
    const double a = params.alpha();
    return std::pow(params.omega0, 1.5) * std::sqrt(a / kPi) * std::exp(params.omega0 / a) / params.coupling;
}

MarkovConstants markov_constants(const TrapParams& params) {
    const ReservoirFunctions res(params);
    MarkovConstants mc;
    mc.gamma_m = markov_rate(params);
    mc.t_sys = mc.gamma_m > 0.0 ? 1.0 / mc.gamma_m : std::numeric_limits<double>::infinity();
    mc.t_res = 0.4 / params.omega0;
    mc.time_scale_ratio = time_scale_ratio(params);

    if (params.coupling == 0.0) return mc;

    // psi ~ sin(omega0 t - pi/4) / sqrt(alpha t) at large t: panels start at
    // the asymptotic zeros so the panel sums alternate.
    TailOptions opt;
    opt.period = 2.0 * kPi / params.omega0;
    opt.phase_offset = 0.25 * kPi / params.omega0;
    opt.direct_panels = 60;
    opt.tail_panels = 30;
    opt.tolerance = 1e-9;
    const auto est = integrate_oscillatory_tail([&res](double t) { return res.psi(t); }, opt);
    mc.shift_m = est.value.real();
    mc.shift_m_error = est.error;
    return mc;
}

}  // namespace atomlaser
