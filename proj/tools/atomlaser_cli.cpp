#include "atomlaser/errors.hpp"
#include "atomlaser/scenario.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <thread>

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2 };

int classify(const std::exception& e) {
    if (dynamic_cast<const atomlaser::ConfigError*>(&e) || dynamic_cast<const atomlaser::InvalidParameter*>(&e))
        return kConfig;
    return kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace atomlaser;
    CLI::App app{"Pulsed and continuous-wave atom-laser output coupling beyond Born-Markov"};
    app.require_subcommand(1);

    std::string scenario_dir;
    app.add_option("--scenario-dir", scenario_dir, "Directory with user scenario configs (*.ini)");

    auto* list = app.add_subcommand("list", "List built-in and user scenarios");

    auto* run = app.add_subcommand("run", "Run scenarios given as config paths or names");
    std::vector<std::string> refs;
    std::string out_dir = "out";
    std::optional<int> order;
    std::optional<double> dt, tmax;
    std::string reading;
    unsigned jobs = 1;
    run->add_option("scenario", refs, "Config file, built-in or user scenario name")->required();
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();
    run->add_option("--order", order, "TCL order (pulsed: 2, 4, 6; cw: 2, 4)")->check(CLI::IsMember({2, 4, 6}));
    run->add_option("--dt", dt, "Time step in seconds")->check(CLI::PositiveNumber);
    run->add_option("--tmax", tmax, "Final time in seconds")->check(CLI::PositiveNumber);
    run->add_option("--r-reading", reading, "Cross-term reading (outer or inner)")->check(CLI::IsMember({"outer", "inner"}));
    run->add_option("--jobs", jobs, "Scenarios run concurrently")->check(CLI::Range(1u, 256u));

    CLI11_PARSE(app, argc, argv);
    const std::optional<std::filesystem::path> user_dir =
        scenario_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(scenario_dir);

    if (list->parsed()) {
        for (const auto& item : list_scenarios(user_dir)) {
            if (item.malformed) {
                std::cout << item.name << "  [malformed: " << item.problem << "]  (" << item.source << ")\n";
            } else {
                std::cout << item.name << "  " << item.description;
                if (item.source != "builtin") std::cout << "  (" << item.source << ")";
                std::cout << "\n";
            }
        }
        return kOk;
    }

    Overrides ov;
    ov.order = order;
    ov.dt = dt;
    ov.t_max = tmax;
    if (!reading.empty()) ov.r_reading = parse_r_reading(reading);

    std::vector<Scenario> scenarios;
    try {
        for (const auto& ref : refs) {
            auto s = resolve_scenario(ref, user_dir);
            apply_overrides(s, ov);
            scenarios.push_back(std::move(s));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
        return kConfig;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    }

    std::mutex io;
    std::atomic<std::size_t> next{0};
    std::atomic<int> status{kOk};
    const auto worker = [&] {
        for (std::size_t i = next++; i < scenarios.size(); i = next++) {
            const auto& s = scenarios[i];
            try {
                const auto path = run_scenario(s, out_dir);
                std::lock_guard lock(io);
                std::cout << s.name << ": wrote " << path.string() << "\n";
            } catch (const std::exception& e) {
                const int code = classify(e);
                int expected = kOk;
                status.compare_exchange_strong(expected, code);
                std::lock_guard lock(io);
                std::cerr << s.name << ": " << (code == kConfig ? "config error: " : "numerical failure: ") << e.what()
                          << "\n";
            }
        }
    };
    const unsigned n = std::min<unsigned>(jobs, static_cast<unsigned>(scenarios.size()));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return status.load();
}
