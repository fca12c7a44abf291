#pragma once

#include "atomlaser/model.hpp"
#include "atomlaser/quad.hpp"
#include "atomlaser/tcl.hpp"

#include <Eigen/SparseCore>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace atomlaser {

/// Treatment of the output coupler in the pumped laser.
enum class CwOrder { markov, second, fourth };

/// Reading of the cross-term function r(t) = Omega int_0^t dt1 int_0^t1 dt2 f(. - t2):
/// `outer` uses f(t - t2), `inner` uses f(t1 - t2).
enum class RReading { outer, inner };

std::string_view to_string(CwOrder order);
std::string_view to_string(RReading reading);
CwOrder parse_cw_order(std::string_view text);
RReading parse_r_reading(std::string_view text);

/// Pump, collision and output parameters of the three-mode continuous-wave
/// laser (mode 2 eliminated). Rates in 1/s.
struct CwParams {
    TrapParams trap;
    double kappa1 = 0.0;           ///< pump-reservoir coupling
    double omega_coll = 0.0;       ///< effective binary-collision strength Omega
    double pump_occupation = 0.0;  ///< N, stationary pump-mode occupation without collisions
    int n0_max = 200;
    int n1_max = 60;
    CwOrder order = CwOrder::markov;
    RReading r_reading = RReading::outer;

    void validate() const;
    /// Soft checks of the regime the model assumes (kappa1 >> gamma_M).
    std::vector<std::string> regime_warnings() const;
};

/// Omega = 15 gamma_M, kappa1 = 10 gamma_M, N = 20.3 on the reference trap.
CwParams reference_cw(double coupling, CwOrder order);

/// Probability vector p(n0, n1) on the truncated box; n1 runs fastest.
class DiagonalState {
public:
    DiagonalState(int n0_max, int n1_max);
    static DiagonalState vacuum(int n0_max, int n1_max);

    int n0_max() const noexcept { return n0_max_; }
    int n1_max() const noexcept { return n1_max_; }
    std::size_t size() const noexcept { return p_.size(); }
    std::size_t index(int n0, int n1) const noexcept {
        return static_cast<std::size_t>(n0) * static_cast<std::size_t>(n1_max_ + 1) + static_cast<std::size_t>(n1);
    }

    double& at(int n0, int n1) { return p_[index(n0, n1)]; }
    double at(int n0, int n1) const { return p_[index(n0, n1)]; }
    std::vector<double>& values() noexcept { return p_; }
    const std::vector<double>& values() const noexcept { return p_; }

    double mean_n0() const;
    double mean_n1() const;
    double total() const;
    double min() const;
    /// Probability mass on the n0 = n0_max face.
    double edge_mass_n0() const;

private:
    int n0_max_;
    int n1_max_;
    std::vector<double> p_;
};

/// r(t) on a grid starting at zero, with the reading selected in params.
SampledFunction r_function(const CwParams& params, const UniformGrid& grid);

/// r(t) from sampled correlation values; exposes the quadrature for tests.
SampledFunction r_function_from_correlation(const SampledFunction& f, double omega_coll, RReading reading);

/// Instantaneous output-coupler inputs of the generator.
struct GeneratorInputs {
    double gamma = 0.0;  ///< total decay rate of the selected order
    double shift = 0.0;  ///< Lamb shift; acts trivially on populations
    cplx r{};            ///< cross-term function, fourth order only
};

/// Rate matrix of dp/dt = G p on the diagonal space (column-major sparse).
struct Generator {
    Eigen::SparseMatrix<double> matrix;
    /// Per-state total rate of transitions dropped at the box boundary.
    std::vector<double> clipped_rate;
    double max_outflow = 0.0;       ///< max |G_ii|
    double max_column_sum = 0.0;    ///< max |sum_i G_ij| / column scale
};

/// Assembles G from the pump, collision, output and (fourth order) cross-term
/// superoperators. Throws NumericalFailure if a column sum exceeds 1e-12
/// relative to the column's magnitude.
Generator build_generator(const CwParams& params, const GeneratorInputs& inputs);

/// Markovian stationary occupation kappa1/(2 gamma_M) (N - 1/2 - sqrt(1/4 + gamma_M/Omega)).
double steady_state_markov(const CwParams& params);

/// Null vector of the Markovian generator (direct sparse solve).
DiagonalState stationary_state(const CwParams& params);

/// Applies every superoperator to |n0 n1><n0 n1| (n0, n1 <= 3) with dense
/// ladder operators and compares against the assembled rate matrix.
struct DiagonalClosureReport {
    double max_offdiagonal = 0.0;  ///< largest off-diagonal element produced
    double max_mismatch = 0.0;     ///< largest deviation from the rate matrix
    double lamb_shift_norm = 0.0;  ///< largest element of the Lamb-shift action
    bool ok() const noexcept { return max_offdiagonal < 1e-12 && max_mismatch < 1e-12 && lamb_shift_norm < 1e-12; }
};

DiagonalClosureReport verify_diagonal_closure();

struct CwSample {
    double t = 0.0;
    double mean_n0 = 0.0;
    double mean_n1 = 0.0;
    double prob_sum = 0.0;
    double min_p = 0.0;
    double clipped_flux = 0.0;  ///< probability flux dropped at the box boundary so far
};

struct EvolveOptions {
    std::size_t record_every = 1;
    /// dt must not exceed max_phase_step / omega0.
    double max_phase_step = 0.1;
    /// Stop at a normalization failure, or once sum |p| exceeds 1 by 1e-3, and
    /// return the valid prefix instead of throwing; the failure is reported in
    /// CwTrajectory::breakdown.
    bool stop_on_breakdown = false;
};

struct Breakdown {
    double t = 0.0;  ///< last time at which the state was still valid
    std::string reason;
};

struct CwTrajectory {
    std::vector<CwSample> samples;
    DiagonalState final_state{0, 0};
    bool negativity_flag = false;
    double max_column_sum = 0.0;
    RReading r_reading = RReading::outer;
    std::optional<Breakdown> breakdown;
};

/// Integrates dp/dt = G(t) p with the L-stable TR-BDF2 scheme; the generator
/// is refreshed at every stage time and each stage is a sparse linear solve.
CwTrajectory evolve(const CwParams& params, const DiagonalState& p0, double t_max, double dt,
                    const EvolveOptions& options = {});

}  // namespace atomlaser
