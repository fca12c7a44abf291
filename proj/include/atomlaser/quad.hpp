#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <variant>
#include <vector>

namespace atomlaser {

using cplx = std::complex<double>;

/// Equidistant time axis; node j sits at t0 + j*dt.
struct UniformGrid {
    double t0 = 0.0;
    double dt = 0.0;
    std::size_t n_points = 0;

    /// Smallest grid starting at zero whose last node is at or beyond t_max.
    static UniformGrid covering(double t_max, double dt);

    double time(std::size_t j) const noexcept { return t0 + static_cast<double>(j) * dt; }
    double t_end() const noexcept { return time(n_points - 1); }

    /// Throws InvalidParameter unless dt > 0 and n_points >= 2.
    void validate() const;

    bool operator==(const UniformGrid&) const = default;
};

template <class T>
struct Sampled {
    UniformGrid grid;
    std::vector<T> values;

    std::size_t size() const noexcept { return values.size(); }
    const T& operator[](std::size_t j) const { return values[j]; }
    T& operator[](std::size_t j) { return values[j]; }
};

using SampledFunction = Sampled<cplx>;
using RealSampled = Sampled<double>;

template <class T, class F>
Sampled<T> sample(const UniformGrid& grid, F&& fn) {
    Sampled<T> out{grid, std::vector<T>(grid.n_points)};
    for (std::size_t j = 0; j < grid.n_points; ++j) out.values[j] = static_cast<T>(fn(grid.time(j)));
    return out;
}

/// Checks that every value is finite; throws NumericalFailure otherwise.
void require_finite(const SampledFunction& f);
void require_finite(const RealSampled& f);

/// F(t_j) = integral of f from t0 to t_j by the composite trapezoid rule.
SampledFunction cumulative_integral(const SampledFunction& f);
RealSampled cumulative_integral(const RealSampled& f);

/// v(t_j) = integral_0^{t_j} kernel(tau) u(t_j - tau) dtau by the product
/// trapezoid rule. Both inputs must live on the same grid.
SampledFunction iterated_convolution(const SampledFunction& kernel, const SampledFunction& u);

/// Result of a quadrature together with a one-halving error estimate.
struct Estimate {
    cplx value;
    double error = 0.0;
};

// ---------------------------------------------------------------------------
// Ordered triple integrals  I(t) = int_0^t dt1 int_0^t1 dt2 int_0^t2 dt3 g

/// General integrand g(t1, t2, t3) for a fixed outer time.
using SimplexIntegrand = std::function<cplx(double, double, double)>;

/// Lag function of a single time difference, sampled at tau >= 0.
using LagFunction = std::function<cplx(double)>;

/// The three ways of splitting {t, t1, t2, t3} into two differences.
enum class Pairing {
    outer_first,   ///< a(t - t1) * b(t2 - t3)
    outer_second,  ///< a(t - t2) * b(t1 - t3)
    outer_third,   ///< a(t - t3) * b(t1 - t2)
};

struct FactorizedTerm {
    Pairing pairing;
    LagFunction outer;  ///< a: depends on the difference involving t
    LagFunction inner;  ///< b: difference of two integration variables
    cplx weight{1.0, 0.0};
};

/// Sum of products of two-point functions of time differences.
struct FactorizedIntegrand {
    std::vector<FactorizedTerm> terms;

    /// Pointwise value, usable by the direct path for cross-checks.
    cplx operator()(double t, double t1, double t2, double t3) const;

    /// The same integrand viewed as a general one at fixed outer time t.
    SimplexIntegrand at(double t) const;
};

using SimplexSpec = std::variant<SimplexIntegrand, FactorizedIntegrand>;

enum class SimplexPath {
    direct,      ///< nested trapezoid, O(n^3)
    factorized,  ///< nested cumulative tables, O(n) per point
};

/// Ordered triple integral at time t with step dt (t must be a multiple of
/// dt). The factorized path only accepts a FactorizedIntegrand and throws
/// InvalidParameter for a general integrand.
cplx simplex_integral_3(const SimplexSpec& g, double t, double dt, SimplexPath path);

/// Same integral at dt and dt/2; the value is the fine one and the error is
/// |fine - coarse| / 3 (second-order Richardson estimate).
Estimate simplex_integral_3_estimate(const SimplexSpec& g, double t, double dt, SimplexPath path);

/// The factorized integral at every node of a grid starting at zero, O(n^2).
SampledFunction simplex_integral_3_table(const FactorizedIntegrand& g, const UniformGrid& grid);

// ---------------------------------------------------------------------------
// Oscillatory half-line integrals

struct TailOptions {
    double period = 0.0;          ///< oscillation period of the integrand
    double phase_offset = 0.0;    ///< first panel boundary (sign change) in time units
    std::size_t direct_panels = 40;
    std::size_t tail_panels = 24;
    std::size_t subdivisions = 4;  ///< Gauss-Legendre pieces per panel
    double tolerance = 1e-10;     ///< relative
};

/// integral_0^inf f(t) dt for an integrand that oscillates with a slowly
/// decaying envelope. Panels are half-periods; the alternating panel sums
/// are summed with repeated averaging (Euler transform). Throws
/// NumericalFailure with the reached error if the tolerance is missed.
Estimate integrate_oscillatory_tail(const std::function<double(double)>& f, const TailOptions& opt);

/// 20-point Gauss-Legendre rule on [a, b].
double gauss_legendre(const std::function<double(double)>& f, double a, double b);

}  // namespace atomlaser
