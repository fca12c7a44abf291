#include "atomlaser/cw.hpp"

#include "atomlaser/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

namespace atomlaser {

std::string_view to_string(CwOrder order) {
    switch (order) {
        case CwOrder::markov: return "markov";
        case CwOrder::second: return "2";
        case CwOrder::fourth: return "4";
    }
    return "?";
}

std::string_view to_string(RReading reading) {
    return reading == RReading::outer ? "outer" : "inner";
}

CwOrder parse_cw_order(std::string_view text) {
    if (text == "markov" || text == "0") return CwOrder::markov;
    if (text == "2") return CwOrder::second;
    if (text == "4") return CwOrder::fourth;
    throw InvalidParameter("unknown cw order '" + std::string(text) + "' (expected markov, 2 or 4)");
}

RReading parse_r_reading(std::string_view text) {
    if (text == "outer") return RReading::outer;
    if (text == "inner") return RReading::inner;
    throw InvalidParameter("unknown r reading '" + std::string(text) + "' (expected outer or inner)");
}

void CwParams::validate() const {
    trap.validate();
    if (!(kappa1 > 0.0) || !std::isfinite(kappa1)) throw InvalidParameter("kappa1 must be positive");
    if (!(omega_coll > 0.0) || !std::isfinite(omega_coll)) throw InvalidParameter("Omega must be positive");
    if (!(pump_occupation > 0.0) || !std::isfinite(pump_occupation)) throw InvalidParameter("N must be positive");
    if (n0_max < 1 || n1_max < 1) throw InvalidParameter("truncation bounds must be at least 1");
}

std::vector<std::string> CwParams::regime_warnings() const {
    std::vector<std::string> out;
    const double gm = markov_rate(trap);
    if (gm > 0.0 && kappa1 < 3.0 * gm) {
        std::ostringstream msg;
        msg << "kappa1 = " << kappa1 << " 1/s is not large against gamma_M = " << gm << " 1/s";
        out.push_back(msg.str());
    }
    return out;
}

CwParams reference_cw(double coupling, CwOrder order) {
    CwParams p;
    p.trap = reference_trap(coupling);
    const double gm = markov_rate(p.trap);
    p.omega_coll = 15.0 * gm;
    p.kappa1 = 10.0 * gm;
    p.pump_occupation = 20.3;
    p.order = order;
    return p;
}

DiagonalState::DiagonalState(int n0_max, int n1_max)
    : n0_max_(n0_max), n1_max_(n1_max),
      p_(static_cast<std::size_t>(std::max(n0_max, 0) + 1) * static_cast<std::size_t>(std::max(n1_max, 0) + 1), 0.0) {
    if (n0_max < 0 || n1_max < 0) throw InvalidParameter("truncation bounds must be non-negative");
}

DiagonalState DiagonalState::vacuum(int n0_max, int n1_max) {
    DiagonalState s(n0_max, n1_max);
    s.at(0, 0) = 1.0;
    return s;
}

double DiagonalState::mean_n0() const {
    double m = 0.0;
    for (int a = 0; a <= n0_max_; ++a)
        for (int b = 0; b <= n1_max_; ++b) m += a * at(a, b);
    return m;
}

double DiagonalState::mean_n1() const {
    double m = 0.0;
    for (int a = 0; a <= n0_max_; ++a)
        for (int b = 0; b <= n1_max_; ++b) m += b * at(a, b);
    return m;
}

double DiagonalState::total() const {
    double s = 0.0;
    for (double v : p_) s += v;
    return s;
}

double DiagonalState::min() const {
    return p_.empty() ? 0.0 : *std::min_element(p_.begin(), p_.end());
}

double DiagonalState::edge_mass_n0() const {
    double s = 0.0;
    for (int b = 0; b <= n1_max_; ++b) s += at(n0_max_, b);
    return s;
}

SampledFunction r_function_from_correlation(const SampledFunction& f, double omega_coll, RReading reading) {
    f.grid.validate();
    if (f.grid.t0 != 0.0) throw InvalidParameter("r(t) needs a grid starting at t = 0");
    SampledFunction out;
    if (reading == RReading::outer) {
        // int_0^t dt1 int_0^t1 dt2 f(t - t2) = int_0^t x f(x) dx
        SampledFunction weighted = f;
        for (std::size_t j = 0; j < weighted.size(); ++j) weighted.values[j] *= f.grid.time(j);
        out = cumulative_integral(weighted);
    } else {
        out = cumulative_integral(cumulative_integral(f));
    }
    for (auto& v : out.values) v *= omega_coll;
    return out;
}

SampledFunction r_function(const CwParams& params, const UniformGrid& grid) {
    params.validate();
    const ReservoirFunctions res(params.trap);
    return r_function_from_correlation(sample<cplx>(grid, [&](double t) { return res.f(t); }), params.omega_coll,
                                       params.r_reading);
}

namespace {

struct Rates {
    double kappa1;
    double omega_coll;
    double pump;
};

// Generator split into parts with a shared sparsity pattern:
// G = G_static + gamma G_out + rho G_oc with rho = 2 Re r.
struct GeneratorParts {
    int n0_max = 0;
    int n1_max = 0;
    Eigen::SparseMatrix<double> pattern;
    std::vector<double> c_static, c_gamma, c_rho;
    std::vector<double> abs_static, abs_gamma, abs_rho;  // per-column sum of |entries|
    std::vector<Eigen::Index> diag_pos;
    std::vector<double> clip_static, clip_rho;

    std::size_t states() const { return static_cast<std::size_t>(n0_max + 1) * static_cast<std::size_t>(n1_max + 1); }
};

struct Entry {
    Eigen::Index row;
    double s, g, r;
};

GeneratorParts assemble_parts(const Rates& rates, int n0_max, int n1_max) {
    if (rates.kappa1 < 0.0 || rates.omega_coll < 0.0 || rates.pump < 0.0)
        throw InvalidParameter("generator rates must be non-negative");
    if (n0_max < 1 || n1_max < 1) throw InvalidParameter("truncation bounds must be at least 1");
    GeneratorParts parts;
    parts.n0_max = n0_max;
    parts.n1_max = n1_max;
    const auto n = static_cast<Eigen::Index>(parts.states());
    const auto idx = [n1_max](int a, int b) { return static_cast<Eigen::Index>(a) * (n1_max + 1) + b; };

    parts.pattern.resize(n, n);
    parts.pattern.reserve(Eigen::VectorXi::Constant(n, 8));
    parts.diag_pos.resize(static_cast<std::size_t>(n));
    parts.clip_static.assign(static_cast<std::size_t>(n), 0.0);
    parts.clip_rho.assign(static_cast<std::size_t>(n), 0.0);
    parts.abs_static.assign(static_cast<std::size_t>(n), 0.0);
    parts.abs_gamma.assign(static_cast<std::size_t>(n), 0.0);
    parts.abs_rho.assign(static_cast<std::size_t>(n), 0.0);

    std::vector<Entry> col;
    for (int a = 0; a <= n0_max; ++a) {
        for (int b = 0; b <= n1_max; ++b) {
            const Eigen::Index j = idx(a, b);
            const auto js = static_cast<std::size_t>(j);
            col.clear();
            double diag_s = 0.0, diag_g = 0.0, diag_r = 0.0;
            const double c = static_cast<double>(b) * (b - 1);

            // pump gain n1 -> n1 + 1
            const double up = rates.kappa1 * rates.pump * (b + 1);
            if (b + 1 <= n1_max) {
                col.push_back({idx(a, b + 1), up, 0.0, 0.0});
                diag_s -= up;
            } else {
                parts.clip_static[js] += up;
            }
            // pump loss n1 -> n1 - 1
            if (b >= 1) {
                const double down = rates.kappa1 * (1.0 + rates.pump) * b;
                col.push_back({idx(a, b - 1), down, 0.0, 0.0});
                diag_s -= down;
            }
            // collisions (n0, n1) -> (n0 + 1, n1 - 2)
            if (b >= 2) {
                const double coll = rates.omega_coll * c * (a + 1);
                if (a + 1 <= n0_max) {
                    col.push_back({idx(a + 1, b - 2), coll, 0.0, 0.0});
                    diag_s -= coll;
                } else {
                    parts.clip_static[js] += coll;
                }
                // cross term, channel a: zero-sum pair on the n1 - 2 row
                const double cr = (a + 1) * c;
                if (a + 1 <= n0_max) {
                    col.push_back({idx(a + 1, b - 2), 0.0, 0.0, cr});
                    col.push_back({idx(a, b - 2), 0.0, 0.0, -cr});
                } else {
                    parts.clip_rho[js] += cr;
                }
            }
            // output n0 -> n0 - 1, and cross term channel b
            if (a >= 1) {
                col.push_back({idx(a - 1, b), 0.0, static_cast<double>(a), 0.5 * a * c});
                diag_g -= a;
                diag_r -= 0.5 * a * c;
            }
            col.push_back({j, diag_s, diag_g, diag_r});

            std::sort(col.begin(), col.end(), [](const Entry& x, const Entry& y) { return x.row < y.row; });
            Eigen::Index last = -1;
            for (const auto& e : col) {
                if (e.row == last) {
                    auto pos = parts.c_static.size() - 1;
                    parts.c_static[pos] += e.s;
                    parts.c_gamma[pos] += e.g;
                    parts.c_rho[pos] += e.r;
                } else {
                    parts.pattern.insert(e.row, j) = 0.0;
                    parts.c_static.push_back(e.s);
                    parts.c_gamma.push_back(e.g);
                    parts.c_rho.push_back(e.r);
                    last = e.row;
                }
                parts.abs_static[js] += std::abs(e.s);
                parts.abs_gamma[js] += std::abs(e.g);
                parts.abs_rho[js] += std::abs(e.r);
            }
        }
    }
    parts.pattern.makeCompressed();

    // Coefficients were pushed column by column in row order, which is the
    // compressed storage order; record where each diagonal lives.
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = parts.pattern.outerIndexPtr()[j]; k < parts.pattern.outerIndexPtr()[j + 1]; ++k) {
            if (parts.pattern.innerIndexPtr()[k] == j) parts.diag_pos[static_cast<std::size_t>(j)] = k;
        }
    }
    return parts;
}

Rates rates_of(const CwParams& params) {
    return {params.kappa1, params.omega_coll, params.pump_occupation};
}

double column_sum_defect(const GeneratorParts& parts, const Eigen::SparseMatrix<double>& g, double gamma, double rho) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < g.outerSize(); ++j) {
        double sum = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(g, j); it; ++it) sum += it.value();
        const auto js = static_cast<std::size_t>(j);
        const double scale =
            std::max(1.0, parts.abs_static[js] + std::abs(gamma) * parts.abs_gamma[js] + std::abs(rho) * parts.abs_rho[js]);
        worst = std::max(worst, std::abs(sum) / scale);
    }
    return worst;
}

void fill_values(const GeneratorParts& parts, double gamma, double rho, Eigen::SparseMatrix<double>& g) {
    double* v = g.valuePtr();
    for (std::size_t k = 0; k < parts.c_static.size(); ++k)
        v[k] = parts.c_static[k] + gamma * parts.c_gamma[k] + rho * parts.c_rho[k];
}

void require_closed_columns(double defect, double t) {
    if (defect > 1e-12) {
        std::ostringstream msg;
        msg << "generator column sum " << defect << " exceeds 1e-12 at t = " << t << " s";
        throw NumericalFailure(msg.str(), defect);
    }
}

}  // namespace

Generator build_generator(const CwParams& params, const GeneratorInputs& inputs) {
    const auto parts = assemble_parts(rates_of(params), params.n0_max, params.n1_max);
    const double rho = params.order == CwOrder::fourth ? 2.0 * inputs.r.real() : 0.0;
    Generator out;
    out.matrix = parts.pattern;
    fill_values(parts, inputs.gamma, rho, out.matrix);
    out.max_column_sum = column_sum_defect(parts, out.matrix, inputs.gamma, rho);
    require_closed_columns(out.max_column_sum, 0.0);
    out.clipped_rate.resize(parts.states());
    for (std::size_t s = 0; s < parts.states(); ++s) {
        out.clipped_rate[s] = parts.clip_static[s] + std::abs(rho) * parts.clip_rho[s];
        out.max_outflow = std::max(out.max_outflow, std::abs(out.matrix.valuePtr()[parts.diag_pos[s]]));
    }
    return out;
}

double steady_state_markov(const CwParams& params) {
    const double gm = markov_rate(params.trap);
    if (!(gm > 0.0)) throw InvalidParameter("steady state needs gamma_M > 0");
    if (!(params.omega_coll > 0.0)) throw InvalidParameter("steady state needs Omega > 0");
    return params.kappa1 / (2.0 * gm) * (params.pump_occupation - 0.5 - std::sqrt(0.25 + gm / params.omega_coll));
}

DiagonalState stationary_state(const CwParams& params) {
    const auto parts = assemble_parts(rates_of(params), params.n0_max, params.n1_max);
    Eigen::SparseMatrix<double> g = parts.pattern;
    const double gm = params.trap.coupling > 0.0 ? markov_rate(params.trap) : 0.0;
    fill_values(parts, gm, 0.0, g);
    require_closed_columns(column_sum_defect(parts, g, gm, 0.0), 0.0);

    // Replace the first balance equation by the normalization.
    const auto n = g.rows();
    Eigen::SparseMatrix<double> a = g;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(a.nonZeros() + n));
    for (Eigen::Index j = 0; j < a.outerSize(); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, j); it; ++it)
            if (it.row() != 0) trip.emplace_back(it.row(), j, it.value());
    for (Eigen::Index j = 0; j < n; ++j) trip.emplace_back(0, j, 1.0);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw NumericalFailure("stationary solve: factorization failed");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(0) = 1.0;
    const Eigen::VectorXd p = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !p.allFinite()) throw NumericalFailure("stationary solve failed");

    DiagonalState out(params.n0_max, params.n1_max);
    for (Eigen::Index i = 0; i < n; ++i) out.values()[static_cast<std::size_t>(i)] = p(i);
    return out;
}

DiagonalClosureReport verify_diagonal_closure() {
    using Mat = Eigen::MatrixXcd;
    constexpr int D = 6;  // single-mode cutoff of the dense test space
    constexpr int dim = (D + 1) * (D + 1);
    constexpr int top = 3;

    Mat a = Mat::Zero(D + 1, D + 1);
    for (int k = 1; k <= D; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
    const Mat id = Mat::Identity(D + 1, D + 1);
    const auto kron = [](const Mat& x, const Mat& y) {
        Mat out(x.rows() * y.rows(), x.cols() * y.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) out.block(i * y.rows(), j * y.cols(), y.rows(), y.cols()) = x(i, j) * y;
        return out;
    };
    const Mat a0 = kron(a, id), a1 = kron(id, a);
    const Mat a0d = a0.adjoint(), a1d = a1.adjoint();
    const Mat a1sq = a1 * a1, a1dsq = a1d * a1d;

    const double kappa1 = 1.7, omega = 0.9, pump = 2.3, gamma = 1.3, shift = 0.45;
    const cplx r(0.8, -0.35);
    const cplx rc = std::conj(r);
    const cplx I(0.0, 1.0);

    const auto lindblad = [](const Mat& l, const Mat& rho) {
        const Mat ld = l.adjoint();
        return Mat(l * rho * ld - 0.5 * ld * l * rho - 0.5 * rho * ld * l);
    };
    const auto apply = [&](const Mat& R) {
        Mat out = lindblad(a0, R) * gamma;
        out += pump * kappa1 * lindblad(a1d, R);
        out += (1.0 + pump) * kappa1 * lindblad(a1, R);
        out += omega * lindblad(a0d * a1sq, R);
        out += r * (a0d * a1sq * R * a0 * a1dsq - a1sq * R * a0 * a0d * a1dsq);
        out += rc * (a0d * a1sq * R * a0 * a1dsq - a0 * a0d * a1sq * R * a1dsq);
        out += 0.5 * r * (a0 * a1dsq * a1sq * R * a0d - a0d * a0 * a1dsq * a1sq * R);
        out += 0.5 * rc * (a0 * R * a0d * a1dsq * a1sq - R * a0d * a0 * a1dsq * a1sq);
        return out;
    };

    CwParams p;
    p.kappa1 = kappa1;
    p.omega_coll = omega;
    p.pump_occupation = pump;
    p.n0_max = D;
    p.n1_max = D;
    p.order = CwOrder::fourth;
    const auto parts = assemble_parts(rates_of(p), D, D);
    Eigen::SparseMatrix<double> g = parts.pattern;
    fill_values(parts, gamma, 2.0 * r.real(), g);
    const Eigen::MatrixXd dense_g(g);

    DiagonalClosureReport rep;
    for (int n0 = 0; n0 <= top; ++n0) {
        for (int n1 = 0; n1 <= top; ++n1) {
            const int j = n0 * (D + 1) + n1;
            Mat R = Mat::Zero(dim, dim);
            R(j, j) = 1.0;
            const Mat out = apply(R);
            const Mat lamb = -0.5 * I * shift * (a0d * a0 * R - R * a0d * a0);
            rep.lamb_shift_norm = std::max(rep.lamb_shift_norm, lamb.cwiseAbs().maxCoeff());
            for (int i = 0; i < dim; ++i) {
                for (int k = 0; k < dim; ++k) {
                    if (i == k) {
                        rep.max_mismatch = std::max(rep.max_mismatch, std::abs(out(i, i) - dense_g(i, j)));
                    } else {
                        rep.max_offdiagonal = std::max(rep.max_offdiagonal, std::abs(out(i, k)));
                    }
                }
            }
        }
    }
    return rep;
}

namespace {

constexpr double kBreakdownMass = 1e-3;

void ensure_diagonal_closure() {
    static std::once_flag once;
    static DiagonalClosureReport report;
    std::call_once(once, [] { report = verify_diagonal_closure(); });
    if (!report.ok()) {
        std::ostringstream msg;
        msg << "diagonal closure self-test failed (off-diagonal " << report.max_offdiagonal << ", mismatch "
            << report.max_mismatch << ", Lamb shift " << report.lamb_shift_norm << ")";
        throw NumericalFailure(msg.str(), std::max(report.max_offdiagonal, report.max_mismatch));
    }
}

// gamma(t) and r(t) tabulated on a grid at half the step, linearly interpolated.
class Drive {
public:
    Drive(const CwParams& params, double t_max, double dt) {
        const double gm = markov_rate(params.trap);
        order_ = params.order;
        if (order_ == CwOrder::markov) {
            constant_ = gm;
            return;
        }
        grid_ = UniformGrid::covering(t_max + dt, 0.5 * dt);
        auto rates = tcl2_rates(params.trap, grid_);
        gamma_ = rates.gamma.values;
        if (order_ == CwOrder::fourth) {
            const auto r4 = tcl4_rates(params.trap, grid_);
            for (std::size_t j = 0; j < gamma_.size(); ++j) gamma_[j] += r4.gamma.values[j];
            const auto r = r_function(params, grid_);
            rho_.resize(r.size());
            for (std::size_t j = 0; j < r.size(); ++j) rho_[j] = 2.0 * r.values[j].real();
        }
    }

    double gamma(double t) const { return order_ == CwOrder::markov ? constant_ : interp(gamma_, t); }
    double rho(double t) const { return order_ == CwOrder::fourth ? interp(rho_, t) : 0.0; }

private:
    double interp(const std::vector<double>& v, double t) const {
        const double x = t / grid_.dt;
        auto k = static_cast<std::size_t>(std::floor(x));
        if (k + 1 >= v.size()) return v.back();
        const double w = x - static_cast<double>(k);
        return (1.0 - w) * v[k] + w * v[k + 1];
    }

    CwOrder order_ = CwOrder::markov;
    double constant_ = 0.0;
    UniformGrid grid_;
    std::vector<double> gamma_, rho_;
};

}  // namespace

CwTrajectory evolve(const CwParams& params, const DiagonalState& p0, double t_max, double dt,
                    const EvolveOptions& options) {
    params.validate();
    for (const auto& w : params.regime_warnings()) warn(w);
    if (p0.n0_max() != params.n0_max || p0.n1_max() != params.n1_max)
        throw InvalidParameter("initial state does not match the truncation bounds");
    if (std::abs(p0.total() - 1.0) > 1e-9) throw InvalidParameter("initial state is not normalized");
    if (!(t_max > 0.0) || !(dt > 0.0)) throw InvalidParameter("t_max and dt must be positive");
    if (dt > options.max_phase_step / params.trap.omega0 * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "time step " << dt << " s does not resolve the trap frequency (limit "
            << options.max_phase_step / params.trap.omega0 << " s)";
        throw InvalidParameter(msg.str());
    }
    if (options.record_every == 0) throw InvalidParameter("record_every must be positive");
    ensure_diagonal_closure();

    const auto parts = assemble_parts(rates_of(params), params.n0_max, params.n1_max);
    const Drive drive(params, t_max, dt);
    const auto n = static_cast<Eigen::Index>(parts.states());
    const std::size_t steps = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-9));
    const bool lindblad = params.order != CwOrder::fourth;

    // TR-BDF2: trapezoid to t + c h, then BDF2 to t + h; both stages share the
    // implicit factor (I - d h G) with d = c / 2.
    const double c = 2.0 - std::sqrt(2.0);
    const double d = 0.5 * c;
    const double w_prev = (1.0 - c) * (1.0 - c) / (c * (2.0 - c));
    const double w_mid = 1.0 / (c * (2.0 - c));

    Eigen::SparseMatrix<double> g = parts.pattern;
    Eigen::SparseMatrix<double> a = parts.pattern;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(a);

    double last_factor_gamma = std::nan(""), last_factor_rho = std::nan("");
    const auto factor = [&](double gamma, double rho) {
        if (gamma == last_factor_gamma && rho == last_factor_rho) return;
        fill_values(parts, gamma, rho, g);
        double* av = a.valuePtr();
        const double* gv = g.valuePtr();
        for (Eigen::Index k = 0; k < a.nonZeros(); ++k) av[k] = -d * dt * gv[k];
        for (auto pos : parts.diag_pos) av[pos] += 1.0;
        lu.factorize(a);
        if (lu.info() != Eigen::Success) throw NumericalFailure("cw stepper: factorization failed");
        last_factor_gamma = gamma;
        last_factor_rho = rho;
    };

    CwTrajectory traj;
    traj.r_reading = params.r_reading;
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(p0.values().data(), n);
    Eigen::VectorXd work(n), mid(n), last_good;
    DiagonalState state = p0;

    const auto clipped_rate = [&](double rho) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto is = static_cast<std::size_t>(i);
            const double rate = parts.clip_static[is] + std::abs(rho) * parts.clip_rho[is];
            if (rate != 0.0) s += rate * std::abs(p(i));
        }
        return s;
    };
    const auto record = [&](double t, double flux) {
        std::copy(p.data(), p.data() + n, state.values().begin());
        traj.samples.push_back({t, state.mean_n0(), state.mean_n1(), state.total(), state.min(), flux});
    };

    double flux = 0.0;
    double flux_rate = clipped_rate(drive.rho(0.0));
    record(0.0, 0.0);
    const auto check_columns = [&](double t, double gamma, double rho) {
        fill_values(parts, gamma, rho, g);
        const double defect = column_sum_defect(parts, g, gamma, rho);
        require_closed_columns(defect, t);
        traj.max_column_sum = std::max(traj.max_column_sum, defect);
    };
    check_columns(0.0, drive.gamma(0.0), drive.rho(0.0));

    for (std::size_t step = 1; step <= steps; ++step) {
        const double t0 = static_cast<double>(step - 1) * dt;
        const double t_mid = t0 + c * dt;
        const double t1 = static_cast<double>(step) * dt;

        if (options.stop_on_breakdown) last_good = p;

        // Trapezoidal stage: (I - d h G(t_mid)) p* = (I + d h G(t0)) p.
        fill_values(parts, drive.gamma(t0), drive.rho(t0), g);
        work = p + d * dt * (g * p);
        factor(drive.gamma(t_mid), drive.rho(t_mid));
        mid = lu.solve(work);

        // BDF2 stage: (I - d h G(t1)) p1 = w_mid p* - w_prev p.
        work = w_mid * mid - w_prev * p;
        factor(drive.gamma(t1), drive.rho(t1));
        p = lu.solve(work);
        const auto broke = [&](const std::string& reason) {
            traj.breakdown = Breakdown{t0, reason};
            p = last_good;
            warn(reason + "; trajectory truncated");
        };
        if (!p.allFinite()) {
            std::ostringstream msg;
            msg << "cw stepper produced non-finite probabilities at t = " << t1 << " s";
            if (!options.stop_on_breakdown) throw NumericalFailure(msg.str());
            broke(msg.str());
            break;
        }

        const double new_rate = clipped_rate(drive.rho(t1));
        flux += 0.5 * dt * (flux_rate + new_rate);
        flux_rate = new_rate;

        const double sum = p.sum();
        if (std::abs(sum - 1.0) > 1e-6) {
            std::ostringstream msg;
            msg << "probability drift |sum p - 1| = " << std::abs(sum - 1.0) << " at t = " << t1 << " s";
            if (!options.stop_on_breakdown) throw NumericalFailure(msg.str(), std::abs(sum - 1.0));
            broke(msg.str());
            break;
        }
        if (options.stop_on_breakdown && p.lpNorm<1>() - 1.0 > kBreakdownMass) {
            std::ostringstream msg;
            msg << "quasi-probability norm sum |p| = " << p.lpNorm<1>() << " at t = " << t1 << " s";
            broke(msg.str());
            break;
        }
        const double pmin = p.minCoeff();
        if (lindblad ? pmin < -1e-12 : pmin < -1e-6) {
            if (!traj.negativity_flag) {
                std::ostringstream msg;
                msg << "negative probability " << pmin << " at t = " << t1 << " s (order " << to_string(params.order)
                    << ")";
                warn(msg.str());
            }
            traj.negativity_flag = true;
        }
        if (step % options.record_every == 0 || step == steps) {
            check_columns(t1, drive.gamma(t1), drive.rho(t1));
            record(t1, flux);
        }
    }
    std::copy(p.data(), p.data() + n, state.values().begin());
    traj.final_state = std::move(state);
    return traj;
}

}  // namespace atomlaser
