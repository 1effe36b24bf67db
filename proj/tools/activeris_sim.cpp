// Experiment runner: rate, power and convergence sweeps written as CSV.

#include "activeris/sim_harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace activeris;

namespace {

struct Overrides {
    std::string config;
    std::string out = "results";
    std::uint64_t seed = 0;
    int trials = 0;
    int threads = 0;
    std::string modes;
    std::vector<std::string> settings;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--trials", o.trials, "trials per cell")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--mode", o.modes, "comma-separated modes");
    cmd->add_option("--set", o.settings, "extra key=value settings, applied last");
}

ExperimentConfig resolve(const Overrides& o, CLI::App* cmd) {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (cmd->count("--seed")) cfg.seed = o.seed;
    if (o.trials > 0) cfg.trials = o.trials;
    if (o.threads > 0) cfg.threads = o.threads;
    if (!o.modes.empty()) apply_setting(cfg, "experiment.modes", o.modes);
    for (const auto& s : o.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active-RIS beamforming experiments"};
    app.require_subcommand(1);
    Overrides rate_opts, power_opts, conv_opts;
    CLI::App* rate = app.add_subcommand("rate", "ergodic sum rate per mode and sweep point");
    CLI::App* power = app.add_subcommand("power", "outage-constrained total power and empirical outage");
    CLI::App* conv = app.add_subcommand("converge", "objective traces with SQUAREM on and off");
    add_common(rate, rate_opts);
    add_common(power, power_opts);
    add_common(conv, conv_opts);
    CLI11_PARSE(app, argc, argv);

    try {
        std::string name, csv, timing;
        ExperimentConfig cfg;
        Overrides* o = nullptr;
        if (*rate) {
            o = &rate_opts;
            cfg = resolve(*o, rate);
            name = "rate";
            const ExperimentResult res = run_rate_experiment(cfg);
            csv = rate_csv(res);
            timing = trial_timing_csv(res);
        } else if (*power) {
            o = &power_opts;
            cfg = resolve(*o, power);
            name = "power";
            const ExperimentResult res = run_power_experiment(cfg);
            csv = power_csv(res);
            timing = trial_timing_csv(res);
        } else {
            o = &conv_opts;
            cfg = resolve(*o, conv);
            name = "converge";
            const auto rows = run_convergence_trace(cfg);
            csv = convergence_csv(rows);
            timing = convergence_timing_csv(rows);
        }
        const fs::path dir(o->out);
        fs::create_directories(dir);
        write_file(dir / (name + ".csv"), csv);
        write_file(dir / (name + "_timing.csv"), timing);
        write_file(dir / (name + "_manifest.txt"), run_manifest(cfg, name));
        std::cout << "wrote " << (dir / (name + ".csv")).string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
