#pragma once

#include "atomlaser/cw.hpp"
#include "atomlaser/model.hpp"
#include "atomlaser/tcl.hpp"
#include "atomlaser/volterra.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace atomlaser {

/// Parsed `[section]` / `key = value` text, in file order.
struct Config {
    using Section = std::vector<std::pair<std::string, std::string>>;
    std::vector<std::pair<std::string, Section>> sections;

    const Section* find(std::string_view section) const;
    std::optional<std::string> get(std::string_view section, std::string_view key) const;
};

/// Grammar: `[section]`, `key = value`, `#` comments, blank lines.
/// Throws ConfigError on malformed lines and duplicate keys.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

enum class Mode { pulsed_exact, pulsed_markov, pulsed_tcl, cw };

std::string_view to_string(Mode mode);

/// Fully resolved run description; every value in SI.
struct Scenario {
    std::string name;
    std::string description;
    std::vector<Mode> modes;
    TrapParams trap;
    double t_max = 0.0;
    double dt = 0.0;
    std::size_t record_every = 1;
    bool refine = true;  ///< rerun at 2 dt for a grid-refinement error estimate

    int tcl_order = 4;
    bool rates = false;

    double kappa1 = 0.0;
    double omega_coll = 0.0;
    double pump_occupation = 0.0;
    int n0_max = 200;
    int n1_max = 60;
    std::vector<CwOrder> cw_orders;
    RReading r_reading = RReading::outer;

    bool is_cw() const;
    CwParams cw_params(CwOrder order) const;
    /// Throws ConfigError naming the key whose value is inconsistent.
    void validate() const;
};

/// Builds a scenario from a config; unknown sections and keys are rejected,
/// `[diagnostics]` is ignored.
Scenario scenario_from_config(const Config& config);

/// Inverse of scenario_from_config; values printed with 17 significant digits.
std::string scenario_to_config(const Scenario& scenario);

/// Built-ins fig2, fig3, fig4, fig5, fig7.
std::vector<Scenario> builtin_scenarios();
std::optional<Scenario> find_builtin(std::string_view name);

struct ScenarioListing {
    std::string name;
    std::string description;
    std::string source;  ///< "builtin" or the file path
    bool malformed = false;
    std::string problem;
};

/// Built-ins in fixed order, then `*.ini` files of `user_dir` sorted by name.
/// Malformed files are listed with malformed = true.
std::vector<ScenarioListing> list_scenarios(const std::optional<std::filesystem::path>& user_dir = {});

/// Resolves a config path, a built-in name or a name in `user_dir`.
Scenario resolve_scenario(std::string_view ref, const std::optional<std::filesystem::path>& user_dir = {});

struct Overrides {
    std::optional<int> order;
    std::optional<double> dt;
    std::optional<double> t_max;
    std::optional<RReading> r_reading;
};

void apply_overrides(Scenario& scenario, const Overrides& overrides);

/// Pulsed results on one grid; absent curves are empty.
struct PulsedResult {
    UniformGrid grid;
    double gamma_m = 0.0;
    std::vector<double> n_exact;
    std::vector<double> n_markov;
    std::map<int, std::vector<double>> n_tcl;          ///< keyed by order
    std::vector<double> gamma_exact;                   ///< NaN past a vanishing amplitude
    std::map<int, std::vector<double>> gamma_cumulative;  ///< gamma2 + ... + gamma_order
    std::optional<CollapseInfo> collapse;
    /// First collapse time when the exact rate shows a pole; TCL columns are
    /// written as NaN beyond it.
    std::optional<double> tcl_valid_until;
    double refinement_error = 0.0;  ///< max |n(dt) - n(2dt)| / 3 over the computed curves
};

PulsedResult run_pulsed(const Scenario& scenario);

struct CwResult {
    std::vector<std::pair<CwOrder, CwTrajectory>> runs;
    double gamma_m = 0.0;
    double refinement_error = 0.0;  ///< max |<n0>(dt) - <n0>(2dt)| / 3, first order
    double steady_state_formula = 0.0;
};

CwResult run_cw(const Scenario& scenario);

/// Writes `<out>/<name>.csv` and `<out>/<name>.meta`; returns the CSV path.
std::filesystem::path write_pulsed(const Scenario& scenario, const PulsedResult& result, const std::filesystem::path& out);
std::filesystem::path write_cw(const Scenario& scenario, const CwResult& result, const std::filesystem::path& out);

/// Runs and writes one scenario.
std::filesystem::path run_scenario(const Scenario& scenario, const std::filesystem::path& out);

/// `%.11e` formatting (12 significant digits); NaN prints as `nan`.
std::string format_value(double v);

}  // namespace atomlaser
