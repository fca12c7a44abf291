#include "atomlaser/scenario.hpp"

#include "atomlaser/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace atomlaser {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string full_key(std::string_view section, std::string_view key) {
    return std::string(section) + "." + std::string(key);
}

double parse_number(std::string_view section, std::string_view key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
        throw ConfigError(full_key(section, key), full_key(section, key) + ": not a finite number: '" + text + "'");
    return v;
}

long parse_integer(std::string_view section, std::string_view key, const std::string& text) {
    long v = 0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw ConfigError(full_key(section, key), full_key(section, key) + ": not an integer: '" + text + "'");
    return v;
}

bool parse_bool(std::string_view section, std::string_view key, const std::string& text) {
    if (text == "true" || text == "yes" || text == "1") return true;
    if (text == "false" || text == "no" || text == "0") return false;
    throw ConfigError(full_key(section, key), full_key(section, key) + ": expected true or false, got '" + text + "'");
}

Mode parse_mode(const std::string& text) {
    if (text == "pulsed_exact") return Mode::pulsed_exact;
    if (text == "pulsed_markov") return Mode::pulsed_markov;
    if (text == "pulsed_tcl") return Mode::pulsed_tcl;
    if (text == "cw") return Mode::cw;
    throw ConfigError("scenario.modes", "scenario.modes: unknown mode '" + text + "'");
}

std::string print_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"scenario", {"name", "description", "modes"}},
        {"trap", {"mass", "omega0", "sigma_k", "coupling"}},
        {"grid", {"t_max", "t_max_gm", "dt", "record_every", "refine"}},
        {"pulsed", {"tcl_order", "rates"}},
        {"cw", {"kappa1", "kappa1_gm", "omega", "omega_gm", "N", "n0_max", "n1_max", "orders", "r_reading", "initial"}},
    };
    return keys;
}

double pulsed_dt_limit(const TrapParams& trap) {
    return SolveOptions{}.resolution * std::min(1.0 / trap.omega0, 1.0 / derive_alpha(trap));
}

double cw_dt_limit(const TrapParams& trap) {
    return EvolveOptions{}.max_phase_step / trap.omega0;
}

}  // namespace

const Config::Section* Config::find(std::string_view section) const {
    for (const auto& [name, body] : sections)
        if (name == section) return &body;
    return nullptr;
}

std::optional<std::string> Config::get(std::string_view section, std::string_view key) const {
    if (const auto* s = find(section))
        for (const auto& [k, v] : *s)
            if (k == key) return v;
    return std::nullopt;
}

Config parse_config(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where, where + ": unterminated section header");
            const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
            if (name.empty()) throw ConfigError(where, where + ": empty section name");
            if (cfg.find(name)) throw ConfigError(name, where + ": duplicate section [" + name + "]");
            cfg.sections.emplace_back(name, Config::Section{});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where, where + ": expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ConfigError(where, where + ": missing key");
        if (cfg.sections.empty()) throw ConfigError(key, where + ": key '" + key + "' outside of a section");
        auto& [section, body] = cfg.sections.back();
        for (const auto& kv : body)
            if (kv.first == key) throw ConfigError(full_key(section, key), where + ": duplicate key " + full_key(section, key));
        body.emplace_back(key, value);
    }
    return cfg;
}

Config load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), "cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::pulsed_exact: return "pulsed_exact";
        case Mode::pulsed_markov: return "pulsed_markov";
        case Mode::pulsed_tcl: return "pulsed_tcl";
        case Mode::cw: return "cw";
    }
    return "?";
}

bool Scenario::is_cw() const {
    return std::find(modes.begin(), modes.end(), Mode::cw) != modes.end();
}

CwParams Scenario::cw_params(CwOrder order) const {
    CwParams p;
    p.trap = trap;
    p.kappa1 = kappa1;
    p.omega_coll = omega_coll;
    p.pump_occupation = pump_occupation;
    p.n0_max = n0_max;
    p.n1_max = n1_max;
    p.order = order;
    p.r_reading = r_reading;
    return p;
}

void Scenario::validate() const {
    if (name.empty()) throw ConfigError("scenario.name", "scenario.name is required");
    if (name.find_first_of("/\\") != std::string::npos)
        throw ConfigError("scenario.name", "scenario.name must not contain path separators");
    if (modes.empty()) throw ConfigError("scenario.modes", "scenario.modes is required");
    if (is_cw() && modes.size() > 1) throw ConfigError("scenario.modes", "scenario.modes: cw cannot be combined with pulsed modes");
    if (!(trap.mass > 0.0)) throw ConfigError("trap.mass", "trap.mass must be positive");
    if (!(trap.omega0 > 0.0)) throw ConfigError("trap.omega0", "trap.omega0 must be positive");
    if (!(trap.sigma_k > 0.0)) throw ConfigError("trap.sigma_k", "trap.sigma_k must be positive");
    if (!(trap.coupling >= 0.0)) throw ConfigError("trap.coupling", "trap.coupling must be non-negative");
    if (!(t_max > 0.0)) throw ConfigError("grid.t_max", "grid.t_max must be positive");
    if (!(dt > 0.0)) throw ConfigError("grid.dt", "grid.dt must be positive");
    if (record_every == 0) throw ConfigError("grid.record_every", "grid.record_every must be positive");
    if (is_cw()) {
        if (dt > cw_dt_limit(trap) * (1.0 + 1e-12))
            throw ConfigError("grid.dt", "grid.dt exceeds " + print_double(cw_dt_limit(trap)) + " s (0.1 / omega0)");
        if (!(kappa1 > 0.0)) throw ConfigError("cw.kappa1", "cw.kappa1 must be positive");
        if (!(omega_coll > 0.0)) throw ConfigError("cw.omega", "cw.omega must be positive");
        if (!(pump_occupation > 0.0)) throw ConfigError("cw.N", "cw.N must be positive");
        if (n0_max < 1) throw ConfigError("cw.n0_max", "cw.n0_max must be at least 1");
        if (n1_max < 1) throw ConfigError("cw.n1_max", "cw.n1_max must be at least 1");
        if (cw_orders.empty()) throw ConfigError("cw.orders", "cw.orders is required");
    } else {
        if (dt > pulsed_dt_limit(trap) * (1.0 + 1e-12))
            throw ConfigError("grid.dt", "grid.dt exceeds " + print_double(pulsed_dt_limit(trap)) +
                                             " s (0.05 min(1/omega0, 1/alpha))");
        if (tcl_order != 2 && tcl_order != 4 && tcl_order != 6)
            throw ConfigError("pulsed.tcl_order", "pulsed.tcl_order must be 2, 4 or 6");
        if (rates && std::find(modes.begin(), modes.end(), Mode::pulsed_tcl) == modes.end() &&
            std::find(modes.begin(), modes.end(), Mode::pulsed_exact) == modes.end())
            throw ConfigError("pulsed.rates", "pulsed.rates needs pulsed_exact or pulsed_tcl");
    }
}

Scenario scenario_from_config(const Config& cfg) {
    const auto& keys = known_keys();
    for (const auto& [section, body] : cfg.sections) {
        if (section == "diagnostics") continue;
        const auto it = keys.find(section);
        if (it == keys.end()) throw ConfigError(section, "unknown section [" + section + "]");
        for (const auto& kv : body)
            if (!it->second.count(kv.first))
                throw ConfigError(full_key(section, kv.first), "unknown key " + full_key(section, kv.first));
    }

    Scenario s;
    s.name = cfg.get("scenario", "name").value_or("");
    s.description = cfg.get("scenario", "description").value_or("");
    if (const auto m = cfg.get("scenario", "modes"))
        for (const auto& item : split_list(*m)) s.modes.push_back(parse_mode(item));

    s.trap = reference_trap(0.0);
    const auto num = [&](std::string_view section, std::string_view key) -> std::optional<double> {
        if (const auto v = cfg.get(section, key)) return parse_number(section, key, *v);
        return std::nullopt;
    };
    if (const auto v = num("trap", "mass")) s.trap.mass = *v;
    if (const auto v = num("trap", "omega0")) s.trap.omega0 = *v;
    if (const auto v = num("trap", "sigma_k")) s.trap.sigma_k = *v;
    if (const auto v = num("trap", "coupling")) {
        s.trap.coupling = *v;
    } else {
        throw ConfigError("trap.coupling", "trap.coupling is required");
    }
    const bool cw = s.is_cw();

    // Keys in units of gamma_M need a positive Markov rate.
    const auto per_gamma_m = [&](std::string_view section, std::string_view key) {
        if (!(s.trap.mass > 0.0 && s.trap.omega0 > 0.0 && s.trap.sigma_k > 0.0 && s.trap.coupling > 0.0))
            throw ConfigError(full_key(section, key), full_key(section, key) + " needs a valid trap with coupling > 0");
        return markov_rate(s.trap);
    };
    const auto tm = num("grid", "t_max");
    const auto tm_gm = num("grid", "t_max_gm");
    if (tm && tm_gm) throw ConfigError("grid.t_max_gm", "give either grid.t_max or grid.t_max_gm, not both");
    if (tm) s.t_max = *tm;
    else if (tm_gm) s.t_max = *tm_gm / per_gamma_m("grid", "t_max_gm");
    else throw ConfigError("grid.t_max", "grid.t_max (seconds) or grid.t_max_gm (units of 1/gamma_M) is required");
    if (const auto v = num("grid", "dt")) {
        s.dt = *v;
    } else if (s.trap.mass > 0.0 && s.trap.omega0 > 0.0 && s.trap.sigma_k > 0.0) {
        s.dt = cw ? 0.5 * cw_dt_limit(s.trap) : pulsed_dt_limit(s.trap);
    }
    s.record_every = cw ? 10 : 1;
    if (const auto v = cfg.get("grid", "record_every")) {
        const long r = parse_integer("grid", "record_every", *v);
        if (r < 1) throw ConfigError("grid.record_every", "grid.record_every must be positive");
        s.record_every = static_cast<std::size_t>(r);
    }
    if (const auto v = cfg.get("grid", "refine")) s.refine = parse_bool("grid", "refine", *v);

    if (const auto v = cfg.get("pulsed", "tcl_order")) s.tcl_order = static_cast<int>(parse_integer("pulsed", "tcl_order", *v));
    if (const auto v = cfg.get("pulsed", "rates")) s.rates = parse_bool("pulsed", "rates", *v);

    const auto k1 = num("cw", "kappa1");
    const auto k1_gm = num("cw", "kappa1_gm");
    if (k1 && k1_gm) throw ConfigError("cw.kappa1_gm", "give either cw.kappa1 or cw.kappa1_gm, not both");
    if (k1) s.kappa1 = *k1;
    if (k1_gm) s.kappa1 = *k1_gm * per_gamma_m("cw", "kappa1_gm");
    const auto om = num("cw", "omega");
    const auto om_gm = num("cw", "omega_gm");
    if (om && om_gm) throw ConfigError("cw.omega_gm", "give either cw.omega or cw.omega_gm, not both");
    if (om) s.omega_coll = *om;
    if (om_gm) s.omega_coll = *om_gm * per_gamma_m("cw", "omega_gm");
    if (const auto v = num("cw", "N")) s.pump_occupation = *v;
    if (const auto v = cfg.get("cw", "n0_max")) s.n0_max = static_cast<int>(parse_integer("cw", "n0_max", *v));
    if (const auto v = cfg.get("cw", "n1_max")) s.n1_max = static_cast<int>(parse_integer("cw", "n1_max", *v));
    if (const auto v = cfg.get("cw", "orders")) {
        for (const auto& item : split_list(*v)) {
            try {
                s.cw_orders.push_back(parse_cw_order(item));
            } catch (const InvalidParameter& e) {
                throw ConfigError("cw.orders", std::string("cw.orders: ") + e.what());
            }
        }
    }
    if (const auto v = cfg.get("cw", "r_reading")) {
        try {
            s.r_reading = parse_r_reading(*v);
        } catch (const InvalidParameter& e) {
            throw ConfigError("cw.r_reading", std::string("cw.r_reading: ") + e.what());
        }
    }
    if (const auto v = cfg.get("cw", "initial"); v && *v != "vacuum")
        throw ConfigError("cw.initial", "cw.initial: only 'vacuum' is supported");

    s.validate();
    return s;
}

std::string scenario_to_config(const Scenario& s) {
    std::ostringstream o;
    o << "[scenario]\n";
    o << "name = " << s.name << "\n";
    if (!s.description.empty()) o << "description = " << s.description << "\n";
    o << "modes = ";
    for (std::size_t i = 0; i < s.modes.size(); ++i) o << (i ? ", " : "") << to_string(s.modes[i]);
    o << "\n\n[trap]\n";
    o << "mass = " << print_double(s.trap.mass) << "\n";
    o << "omega0 = " << print_double(s.trap.omega0) << "\n";
    o << "sigma_k = " << print_double(s.trap.sigma_k) << "\n";
    o << "coupling = " << print_double(s.trap.coupling) << "\n";
    o << "\n[grid]\n";
    o << "t_max = " << print_double(s.t_max) << "\n";
    o << "dt = " << print_double(s.dt) << "\n";
    o << "record_every = " << s.record_every << "\n";
    o << "refine = " << (s.refine ? "true" : "false") << "\n";
    if (s.is_cw()) {
        o << "\n[cw]\n";
        o << "kappa1 = " << print_double(s.kappa1) << "\n";
        o << "omega = " << print_double(s.omega_coll) << "\n";
        o << "N = " << print_double(s.pump_occupation) << "\n";
        o << "n0_max = " << s.n0_max << "\n";
        o << "n1_max = " << s.n1_max << "\n";
        o << "orders = ";
        for (std::size_t i = 0; i < s.cw_orders.size(); ++i) o << (i ? ", " : "") << to_string(s.cw_orders[i]);
        o << "\n";
        o << "r_reading = " << to_string(s.r_reading) << "\n";
        o << "initial = vacuum\n";
    } else {
        o << "\n[pulsed]\n";
        o << "tcl_order = " << s.tcl_order << "\n";
        o << "rates = " << (s.rates ? "true" : "false") << "\n";
    }
    return o.str();
}

namespace {

constexpr const char* kBuiltins[] = {
    R"([scenario]
name = fig2
description = pulsed, Gamma = 5e4 s^-2: exact, Born-Markov and fourth-order TCL
modes = pulsed_exact, pulsed_markov, pulsed_tcl
[trap]
coupling = 5e4
[grid]
t_max_gm = 4
[pulsed]
tcl_order = 4
)",
    R"([scenario]
name = fig3
description = pulsed, Gamma = 1e5 s^-2: exact, Born-Markov, fourth- and sixth-order TCL
modes = pulsed_exact, pulsed_markov, pulsed_tcl
[trap]
coupling = 1e5
[grid]
t_max_gm = 4
[pulsed]
tcl_order = 6
)",
    R"([scenario]
name = fig4
description = pulsed, Gamma = 1e6 s^-2: collapse and revival against sixth-order TCL
modes = pulsed_exact, pulsed_markov, pulsed_tcl
[trap]
coupling = 1e6
[grid]
t_max_gm = 10
dt = 4e-6
[pulsed]
tcl_order = 6
rates = true
)",
    R"([scenario]
name = fig5
description = decay rates at Gamma = 1e5 s^-2: exact, Born-Markov, fourth- and sixth-order TCL
modes = pulsed_exact, pulsed_markov, pulsed_tcl
[trap]
coupling = 1e5
[grid]
t_max_gm = 4
[pulsed]
tcl_order = 6
rates = true
)",
    R"([scenario]
name = fig7
description = cw laser, Gamma = 5e4 s^-2: Born-Markov, second and fourth order
modes = cw
[trap]
coupling = 5e4
[grid]
t_max_gm = 8
record_every = 10
[cw]
kappa1_gm = 10
omega_gm = 15
N = 20.3
n0_max = 200
n1_max = 60
orders = markov, 2, 4
r_reading = outer
initial = vacuum
)",
};

std::vector<fs::path> user_files(const std::optional<fs::path>& dir) {
    std::vector<fs::path> out;
    if (!dir) return out;
    std::error_code ec;
    if (!fs::is_directory(*dir, ec)) return out;
    for (const auto& e : fs::directory_iterator(*dir, ec))
        if (e.is_regular_file() && e.path().extension() == ".ini") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<Scenario> builtin_scenarios() {
    std::vector<Scenario> out;
    for (const char* text : kBuiltins) out.push_back(scenario_from_config(parse_config(text)));
    return out;
}

std::optional<Scenario> find_builtin(std::string_view name) {
    for (auto& s : builtin_scenarios())
        if (s.name == name) return s;
    return std::nullopt;
}

std::vector<ScenarioListing> list_scenarios(const std::optional<fs::path>& user_dir) {
    std::vector<ScenarioListing> out;
    for (const auto& s : builtin_scenarios()) out.push_back({s.name, s.description, "builtin", false, {}});
    for (const auto& path : user_files(user_dir)) {
        ScenarioListing item;
        item.source = path.string();
        try {
            const auto s = scenario_from_config(load_config(path));
            item.name = s.name;
            item.description = s.description;
        } catch (const Error& e) {
            item.name = path.stem().string();
            item.malformed = true;
            item.problem = e.what();
        }
        out.push_back(std::move(item));
    }
    return out;
}

Scenario resolve_scenario(std::string_view ref, const std::optional<fs::path>& user_dir) {
    const fs::path as_path(ref);
    std::error_code ec;
    if (fs::is_regular_file(as_path, ec)) return scenario_from_config(load_config(as_path));
    if (auto b = find_builtin(ref)) return *b;
    for (const auto& path : user_files(user_dir)) {
        if (path.stem() == ref) return scenario_from_config(load_config(path));
    }
    throw ConfigError("scenario", "unknown scenario or missing config file '" + std::string(ref) + "'");
}

void apply_overrides(Scenario& s, const Overrides& o) {
    if (o.order) {
        if (s.is_cw()) {
            if (*o.order != 2 && *o.order != 4) throw ConfigError("--order", "--order for a cw scenario must be 2 or 4");
            s.cw_orders = {*o.order == 2 ? CwOrder::second : CwOrder::fourth};
        } else {
            s.tcl_order = *o.order;
        }
    }
    if (o.dt) s.dt = *o.dt;
    if (o.t_max) s.t_max = *o.t_max;
    if (o.r_reading) s.r_reading = *o.r_reading;
    s.validate();
}

namespace {

bool has_mode(const Scenario& s, Mode m) {
    return std::find(s.modes.begin(), s.modes.end(), m) != s.modes.end();
}

struct PulsedCurves {
    std::vector<double> exact;
    std::map<int, std::vector<double>> tcl;
};

PulsedCurves pulsed_curves(const Scenario& s, double dt) {
    PulsedCurves c;
    if (has_mode(s, Mode::pulsed_exact)) {
        SolveOptions opt;
        opt.enforce_resolution = false;
        c.exact = occupation(solve_amplitude(s.trap, s.t_max, dt, opt)).values;
    }
    if (has_mode(s, Mode::pulsed_tcl)) {
        const auto rates = tcl_series_rates(s.trap, UniformGrid::covering(s.t_max, dt), s.tcl_order);
        for (int k = 2; k <= s.tcl_order; k += 2)
            c.tcl[k] = occupation_from_rate({rates.grid, rates.total_gamma(k)}).values;
    }
    return c;
}

double max_half_grid_gap(const std::vector<double>& fine, const std::vector<double>& coarse) {
    double worst = 0.0;
    for (std::size_t j = 0; 2 * j < fine.size() && j < coarse.size(); ++j)
        worst = std::max(worst, std::abs(fine[2 * j] - coarse[j]));
    return worst / 3.0;
}

}  // namespace

PulsedResult run_pulsed(const Scenario& s) {
    s.validate();
    if (s.is_cw()) throw InvalidParameter("run_pulsed called with a cw scenario");
    PulsedResult r;
    r.grid = UniformGrid::covering(s.t_max, s.dt);
    r.gamma_m = markov_rate(s.trap);
    const double nan = std::numeric_limits<double>::quiet_NaN();

    if (has_mode(s, Mode::pulsed_exact)) {
        const auto traj = solve_amplitude(s.trap, s.t_max, s.dt);
        const auto n = occupation(traj);
        r.n_exact = n.values;
        const auto ex = exact_rates(traj);
        r.gamma_exact.assign(r.grid.n_points, nan);
        std::copy(ex.gamma.values.begin(), ex.gamma.values.end(), r.gamma_exact.begin());
        if (ex.diverged) r.tcl_valid_until = ex.divergence_time;
        if (r.gamma_m > 0.0) {
            const auto info = find_first_collapse(n, ex.gamma, r.gamma_m);
            if (info.found) {
                r.collapse = info;
                if (info.rate_pole && (!r.tcl_valid_until || info.t_min < *r.tcl_valid_until))
                    r.tcl_valid_until = info.t_min;
            }
        }
    }
    if (has_mode(s, Mode::pulsed_markov)) {
        r.n_markov.resize(r.grid.n_points);
        for (std::size_t j = 0; j < r.grid.n_points; ++j) r.n_markov[j] = std::exp(-r.gamma_m * r.grid.time(j));
    }
    std::map<int, std::vector<double>> tcl_full;
    if (has_mode(s, Mode::pulsed_tcl)) {
        const auto rates = tcl_series_rates(s.trap, r.grid, s.tcl_order);
        for (int k = 2; k <= s.tcl_order; k += 2) {
            r.gamma_cumulative[k] = rates.total_gamma(k);
            r.n_tcl[k] = occupation_from_rate({r.grid, r.gamma_cumulative[k]}).values;
        }
        tcl_full = r.n_tcl;
        if (r.tcl_valid_until) {
            std::ostringstream msg;
            msg << s.name << ": exact rate diverges at t = " << *r.tcl_valid_until
                << " s; perturbative columns truncated there";
            warn(msg.str());
            for (std::size_t j = 0; j < r.grid.n_points; ++j) {
                if (r.grid.time(j) <= *r.tcl_valid_until) continue;
                for (auto& [k, v] : r.n_tcl) v[j] = nan;
                for (auto& [k, v] : r.gamma_cumulative) v[j] = nan;
            }
        }
    }

    if (s.refine) {
        const auto coarse = pulsed_curves(s, 2.0 * s.dt);
        const std::size_t limit = r.tcl_valid_until
                                      ? static_cast<std::size_t>(std::floor(*r.tcl_valid_until / s.dt)) + 1
                                      : r.grid.n_points;
        const auto clip = [limit](std::vector<double> v) {
            if (v.size() > limit) v.resize(limit);
            return v;
        };
        if (!r.n_exact.empty()) r.refinement_error = max_half_grid_gap(r.n_exact, coarse.exact);
        for (const auto& [k, v] : tcl_full)
            r.refinement_error = std::max(r.refinement_error, max_half_grid_gap(clip(v), coarse.tcl.at(k)));
    }
    return r;
}

CwResult run_cw(const Scenario& s) {
    s.validate();
    if (!s.is_cw()) throw InvalidParameter("run_cw called with a pulsed scenario");
    CwResult r;
    r.gamma_m = markov_rate(s.trap);
    EvolveOptions opt;
    opt.record_every = s.record_every;
    for (const auto order : s.cw_orders) {
        const auto params = s.cw_params(order);
        // The fourth-order generator is not positive; its quasi-probabilities
        // can grow without bound, so that run is truncated rather than lost.
        opt.stop_on_breakdown = order == CwOrder::fourth;
        r.runs.emplace_back(order, evolve(params, DiagonalState::vacuum(s.n0_max, s.n1_max), s.t_max, s.dt, opt));
    }
    if (r.gamma_m > 0.0) r.steady_state_formula = steady_state_markov(s.cw_params(CwOrder::markov));

    if (s.refine && !r.runs.empty()) {
        EvolveOptions coarse_opt;
        coarse_opt.record_every = 1;
        coarse_opt.max_phase_step = 2.0 * opt.max_phase_step;
        coarse_opt.stop_on_breakdown = true;
        const auto params = s.cw_params(r.runs.front().first);
        const auto coarse =
            evolve(params, DiagonalState::vacuum(s.n0_max, s.n1_max), s.t_max, 2.0 * s.dt, coarse_opt);
        double worst = 0.0;
        for (const auto& sample : r.runs.front().second.samples) {
            const double steps = sample.t / s.dt;
            const auto fine_step = static_cast<std::size_t>(std::llround(steps));
            if (fine_step % 2 != 0) continue;
            const std::size_t k = fine_step / 2;
            if (k >= coarse.samples.size()) continue;
            worst = std::max(worst, std::abs(sample.mean_n0 - coarse.samples[k].mean_n0));
        }
        r.refinement_error = worst / 3.0;
    }
    return r;
}

std::string format_value(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.11e", v);
    return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string optional_value(const std::optional<double>& v) {
    return v ? print_double(*v) : std::string("none");
}

}  // namespace

fs::path write_pulsed(const Scenario& s, const PulsedResult& r, const fs::path& out) {
    fs::create_directories(out);
    std::vector<std::string> header = {"t_seconds", "gammaM_t"};
    std::vector<const std::vector<double>*> cols;
    const auto add = [&](const std::string& name, const std::vector<double>& v) {
        if (v.empty()) return;
        header.push_back(name);
        cols.push_back(&v);
    };
    add("n_exact", r.n_exact);
    add("n_markov", r.n_markov);
    for (const auto& [k, v] : r.n_tcl) add("n_tcl" + std::to_string(k), v);
    if (s.rates) {
        if (has_mode(s, Mode::pulsed_exact)) add("gamma_exact", r.gamma_exact);
        for (const auto& [k, v] : r.gamma_cumulative) add(k == 2 ? "gamma2" : "gamma" + std::to_string(k) + "_cum", v);
    }

    std::string csv;
    for (std::size_t i = 0; i < header.size(); ++i) csv += (i ? "," : "") + header[i];
    csv += "\n";
    for (std::size_t j = 0; j < r.grid.n_points; ++j) {
        if (j % s.record_every != 0 && j + 1 != r.grid.n_points) continue;
        const double t = r.grid.time(j);
        csv += format_value(t) + "," + format_value(r.gamma_m * t);
        for (const auto* c : cols) csv += "," + format_value((*c)[j]);
        csv += "\n";
    }
    const auto csv_path = out / (s.name + ".csv");
    write_text(csv_path, csv);

    const auto mc = markov_constants(s.trap);
    std::ostringstream meta;
    meta << scenario_to_config(s);
    meta << "\n[diagnostics]\n";
    meta << "alpha = " << print_double(derive_alpha(s.trap)) << "\n";
    meta << "gamma_m = " << print_double(mc.gamma_m) << "\n";
    meta << "shift_m = " << print_double(mc.shift_m) << "\n";
    meta << "time_scale_ratio = " << print_double(mc.time_scale_ratio) << "\n";
    meta << "grid_points = " << r.grid.n_points << "\n";
    meta << "refinement_error = " << print_double(r.refinement_error) << "\n";
    meta << "tcl_valid_until = " << optional_value(r.tcl_valid_until) << "\n";
    if (r.collapse) {
        meta << "collapse_t_min = " << print_double(r.collapse->t_min) << "\n";
        meta << "collapse_n_min = " << print_double(r.collapse->n_min) << "\n";
        meta << "revival_t = " << print_double(r.collapse->t_revival) << "\n";
        meta << "revival_n = " << print_double(r.collapse->n_revival) << "\n";
        meta << "rate_pole = " << (r.collapse->rate_pole ? "true" : "false") << "\n";
    }
    write_text(out / (s.name + ".meta"), meta.str());
    return csv_path;
}

fs::path write_cw(const Scenario& s, const CwResult& r, const fs::path& out) {
    fs::create_directories(out);
    const bool several = r.runs.size() > 1;
    static const char* const fields[] = {"mean_n0", "mean_n1", "prob_sum", "min_p", "clipped_flux"};
    std::string csv = "t_seconds,gammaM_t";
    for (const auto& [order, traj] : r.runs)
        for (const char* f : fields) csv += "," + std::string(f) + (several ? "_" + std::string(to_string(order)) : "");
    csv += "\n";
    // Truncated runs hold a prefix of the common sample times.
    const std::vector<CwSample>* longest = nullptr;
    for (const auto& run : r.runs)
        if (longest == nullptr || run.second.samples.size() > longest->size()) longest = &run.second.samples;
    const std::size_t rows = longest == nullptr ? 0 : longest->size();
    for (std::size_t i = 0; i < rows; ++i) {
        const double t = (*longest)[i].t;
        csv += format_value(t) + "," + format_value(r.gamma_m * t);
        for (const auto& [order, traj] : r.runs) {
            if (i >= traj.samples.size()) {
                for (std::size_t k = 0; k < std::size(fields); ++k) csv += ",nan";
                continue;
            }
            const auto& x = traj.samples[i];
            for (double v : {x.mean_n0, x.mean_n1, x.prob_sum, x.min_p, x.clipped_flux}) csv += "," + format_value(v);
        }
        csv += "\n";
    }
    const auto csv_path = out / (s.name + ".csv");
    write_text(csv_path, csv);

    std::ostringstream meta;
    meta << scenario_to_config(s);
    meta << "\n[diagnostics]\n";
    meta << "gamma_m = " << print_double(r.gamma_m) << "\n";
    meta << "steady_state_formula = " << print_double(r.steady_state_formula) << "\n";
    meta << "refinement_error = " << print_double(r.refinement_error) << "\n";
    meta << "initial_state = vacuum\n";
    meta << "r_reading = " << to_string(s.r_reading) << "\n";
    for (const auto& [order, traj] : r.runs) {
        const std::string tag(to_string(order));
        const auto& last = traj.samples.back();
        meta << "final_mean_n0_" << tag << " = " << print_double(last.mean_n0) << "\n";
        meta << "clipped_flux_" << tag << " = " << print_double(last.clipped_flux) << "\n";
        meta << "max_column_sum_" << tag << " = " << print_double(traj.max_column_sum) << "\n";
        meta << "negativity_flag_" << tag << " = " << (traj.negativity_flag ? "true" : "false") << "\n";
        meta << "valid_until_" << tag << " = " << (traj.breakdown ? print_double(traj.breakdown->t) : "end") << "\n";
    }
    write_text(out / (s.name + ".meta"), meta.str());
    return csv_path;
}

fs::path run_scenario(const Scenario& s, const fs::path& out) {
    if (s.is_cw()) return write_cw(s, run_cw(s), out);
    return write_pulsed(s, run_pulsed(s), out);
}

}  // namespace atomlaser
