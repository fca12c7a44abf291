#include "atomlaser/quad.hpp"

#include "atomlaser/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace atomlaser {

UniformGrid UniformGrid::covering(double t_max, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("grid step must be positive, got " + std::to_string(dt));
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw InvalidParameter("grid length must be positive, got " + std::to_string(t_max));
    // Tolerate round-off so that t_max = k*dt gives exactly k+1 points.
    const double steps = std::ceil(t_max / dt - 1e-9);
    UniformGrid g{0.0, dt, static_cast<std::size_t>(std::max(1.0, steps)) + 1};
    return g;
}

void UniformGrid::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("grid step must be positive");
    if (n_points < 2) throw InvalidParameter("grid needs at least two points");
    if (!std::isfinite(t0)) throw InvalidParameter("grid origin must be finite");
}

namespace {

template <class T>
bool finite_value(const T& v) {
    if constexpr (std::is_same_v<T, cplx>) return std::isfinite(v.real()) && std::isfinite(v.imag());
    else return std::isfinite(v);
}

template <class T>
void check_finite(const Sampled<T>& f) {
    for (std::size_t j = 0; j < f.values.size(); ++j) {
        if (!finite_value(f.values[j]))
            throw NumericalFailure("non-finite sample at index " + std::to_string(j));
    }
}

template <class T>
Sampled<T> cumulative(const Sampled<T>& f) {
    Sampled<T> out{f.grid, std::vector<T>(f.values.size(), T{})};
    const double half = 0.5 * f.grid.dt;
    for (std::size_t j = 1; j < f.values.size(); ++j)
        out.values[j] = out.values[j - 1] + half * (f.values[j - 1] + f.values[j]);
    return out;
}

// Trapezoid sum of y[0..n] with step dt.
template <class T>
T trapezoid(const std::vector<T>& y, std::size_t n, double dt) {
    if (n == 0) return T{};
    T s = 0.5 * (y[0] + y[n]);
    for (std::size_t k = 1; k < n; ++k) s += y[k];
    return dt * s;
}

std::vector<cplx> sample_lags(const LagFunction& fn, std::size_t n, double dt) {
    std::vector<cplx> v(n + 1);
    for (std::size_t k = 0; k <= n; ++k) v[k] = fn(static_cast<double>(k) * dt);
    return v;
}

// B1(x_k): twice-cumulated trapezoid table of the lag function b.
std::vector<cplx> double_cumulative(const std::vector<cplx>& b, double dt) {
    UniformGrid g{0.0, dt, b.size()};
    auto once = cumulative(SampledFunction{g, b});
    return cumulative(once).values;
}

std::size_t steps_for(double t, double dt) {
    if (!(dt > 0.0)) throw InvalidParameter("simplex integral needs dt > 0");
    if (t < 0.0) throw DomainError("simplex integral needs t >= 0");
    const double r = t / dt;
    const double n = std::round(r);
    if (std::abs(r - n) > 1e-6 * std::max(1.0, r))
        throw InvalidParameter("simplex integral: t is not a multiple of dt");
    return static_cast<std::size_t>(n);
}

cplx direct_path(const SimplexIntegrand& g, double t, double dt) {
    const std::size_t n = steps_for(t, dt);
    if (n == 0) return {};
    std::vector<double> nodes(n + 1);
    for (std::size_t i = 0; i <= n; ++i) nodes[i] = static_cast<double>(i) * dt;

    std::vector<cplx> level2(n + 1), level3(n + 1), level1(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            for (std::size_t k = 0; k <= j; ++k) level3[k] = g(nodes[i], nodes[j], nodes[k]);
            level2[j] = trapezoid(level3, j, dt);
        }
        level1[i] = trapezoid(level2, i, dt);
    }
    return trapezoid(level1, n, dt);
}

cplx factorized_term(const FactorizedTerm& term, std::size_t n, double dt) {
    if (n == 0) return {};
    const auto a = sample_lags(term.outer, n, dt);
    const auto b1 = double_cumulative(sample_lags(term.inner, n, dt), dt);
    std::vector<cplx> y(n + 1);
    switch (term.pairing) {
    case Pairing::outer_first:
        for (std::size_t i = 0; i <= n; ++i) y[i] = a[n - i] * b1[i];
        break;
    case Pairing::outer_second:
        for (std::size_t m = 0; m <= n; ++m) y[m] = a[n - m] * (b1[n] - b1[m] - b1[n - m]);
        break;
    case Pairing::outer_third:
        for (std::size_t m = 0; m <= n; ++m) y[m] = a[m] * b1[m];
        break;
    }
    return term.weight * trapezoid(y, n, dt);
}

cplx factorized_path(const FactorizedIntegrand& g, double t, double dt) {
    const std::size_t n = steps_for(t, dt);
    cplx sum{};
    for (const auto& term : g.terms) sum += factorized_term(term, n, dt);
    return sum;
}

}  // namespace

void require_finite(const SampledFunction& f) { check_finite(f); }
void require_finite(const RealSampled& f) { check_finite(f); }

SampledFunction cumulative_integral(const SampledFunction& f) { return cumulative(f); }
RealSampled cumulative_integral(const RealSampled& f) { return cumulative(f); }

SampledFunction iterated_convolution(const SampledFunction& kernel, const SampledFunction& u) {
    if (!(kernel.grid == u.grid) || kernel.values.size() != u.values.size())
        throw InvalidParameter("iterated_convolution: kernel and input live on different grids");
    const std::size_t n = u.values.size();
    const double dt = u.grid.dt;
    SampledFunction v{u.grid, std::vector<cplx>(n)};
    const cplx* k = kernel.values.data();
    const cplx* x = u.values.data();
    for (std::size_t j = 1; j < n; ++j) {
        cplx s = 0.5 * (k[0] * x[j] + k[j] * x[0]);
        for (std::size_t m = 1; m < j; ++m) s += k[m] * x[j - m];
        v.values[j] = dt * s;
    }
    return v;
}

cplx FactorizedIntegrand::operator()(double t, double t1, double t2, double t3) const {
    cplx sum{};
    for (const auto& term : terms) {
        switch (term.pairing) {
        case Pairing::outer_first: sum += term.weight * term.outer(t - t1) * term.inner(t2 - t3); break;
        case Pairing::outer_second: sum += term.weight * term.outer(t - t2) * term.inner(t1 - t3); break;
        case Pairing::outer_third: sum += term.weight * term.outer(t - t3) * term.inner(t1 - t2); break;
        }
    }
    return sum;
}

SimplexIntegrand FactorizedIntegrand::at(double t) const {
    return [self = *this, t](double t1, double t2, double t3) { return self(t, t1, t2, t3); };
}

cplx simplex_integral_3(const SimplexSpec& g, double t, double dt, SimplexPath path) {
    if (path == SimplexPath::factorized) {
        const auto* fac = std::get_if<FactorizedIntegrand>(&g);
        if (fac == nullptr)
            throw InvalidParameter("simplex_integral_3: a general integrand cannot use the factorized path");
        return factorized_path(*fac, t, dt);
    }
    if (const auto* gen = std::get_if<SimplexIntegrand>(&g)) return direct_path(*gen, t, dt);
    return direct_path(std::get<FactorizedIntegrand>(g).at(t), t, dt);
}

Estimate simplex_integral_3_estimate(const SimplexSpec& g, double t, double dt, SimplexPath path) {
    const cplx coarse = simplex_integral_3(g, t, dt, path);
    const cplx fine = simplex_integral_3(g, t, 0.5 * dt, path);
    return {fine, std::abs(fine - coarse) / 3.0};
}

SampledFunction simplex_integral_3_table(const FactorizedIntegrand& g, const UniformGrid& grid) {
    grid.validate();
    if (grid.t0 != 0.0) throw InvalidParameter("simplex_integral_3_table: grid must start at zero");
    const std::size_t n = grid.n_points;
    const double dt = grid.dt;
    SampledFunction out{grid, std::vector<cplx>(n)};
    for (const auto& term : g.terms) {
        const auto a = sample_lags(term.outer, n - 1, dt);
        const auto b1 = double_cumulative(sample_lags(term.inner, n - 1, dt), dt);
        if (term.pairing == Pairing::outer_third) {
            std::vector<cplx> y(n);
            for (std::size_t m = 0; m < n; ++m) y[m] = a[m] * b1[m];
            const auto c = cumulative(SampledFunction{grid, std::move(y)});
            for (std::size_t j = 0; j < n; ++j) out.values[j] += term.weight * c.values[j];
            continue;
        }
        for (std::size_t j = 1; j < n; ++j) {
            cplx s{};
            if (term.pairing == Pairing::outer_first) {
                s = 0.5 * (a[j] * b1[0] + a[0] * b1[j]);
                for (std::size_t i = 1; i < j; ++i) s += a[j - i] * b1[i];
            } else {
                // End points vanish: the bracket is zero at m = 0 and m = j.
                for (std::size_t m = 1; m < j; ++m) s += a[j - m] * (b1[j] - b1[m] - b1[j - m]);
            }
            out.values[j] += term.weight * dt * s;
        }
    }
    return out;
}

double gauss_legendre(const std::function<double(double)>& f, double a, double b) {
    return boost::math::quadrature::gauss<double, 20>::integrate(f, a, b);
}

namespace {

double panel(const std::function<double(double)>& f, double a, double b, std::size_t pieces) {
    const double h = (b - a) / static_cast<double>(pieces);
    double s = 0.0;
    for (std::size_t p = 0; p < pieces; ++p) s += gauss_legendre(f, a + h * p, a + h * (p + 1));
    return s;
}

double euler_average(std::vector<double> sums) {
    while (sums.size() > 1) {
        for (std::size_t k = 0; k + 1 < sums.size(); ++k) sums[k] = 0.5 * (sums[k] + sums[k + 1]);
        sums.pop_back();
    }
    return sums.front();
}

}  // namespace

Estimate integrate_oscillatory_tail(const std::function<double(double)>& f, const TailOptions& opt) {
    if (!(opt.period > 0.0)) throw InvalidParameter("oscillatory quadrature needs a positive period");
    if (opt.tail_panels < 3) throw InvalidParameter("oscillatory quadrature needs at least three tail panels");
    const double half = 0.5 * opt.period;
    const std::size_t pieces = std::max<std::size_t>(1, opt.subdivisions);

    double head = 0.0;
    if (opt.phase_offset > 0.0) head = panel(f, 0.0, opt.phase_offset, pieces);
    double a = opt.phase_offset;
    for (std::size_t p = 0; p < opt.direct_panels; ++p, a += half) head += panel(f, a, a + half, pieces);

    std::vector<double> partial;
    partial.reserve(opt.tail_panels);
    double running = head;
    for (std::size_t p = 0; p < opt.tail_panels; ++p, a += half) {
        running += panel(f, a, a + half, pieces);
        partial.push_back(running);
    }
    const double value = euler_average(partial);
    partial.pop_back();
    const double previous = euler_average(partial);
    const double err = std::abs(value - previous);
    if (err > opt.tolerance * std::max(std::abs(value), 1e-300))
        throw NumericalFailure("oscillatory quadrature did not converge (error " + std::to_string(err) + ")", err);
    return {cplx(value, 0.0), err};
}

}  // namespace atomlaser
