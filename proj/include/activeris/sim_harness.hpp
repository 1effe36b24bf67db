#pragma once

#include "activeris/channel.hpp"
#include "activeris/metrics.hpp"
#include "activeris/mm_rate_max.hpp"
#include "activeris/outage_min.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace activeris {

/// Compared designs. active_perfect uses the hidden true channels; active_nonrobust ignores the
/// scattered RIS-user component; passive is unit modulus without amplifier noise; none drops the RIS.
enum class Scheme { active, active_perfect, active_nonrobust, passive, none };

Scheme parse_scheme(const std::string& name);
std::string to_string(Scheme scheme);
RisMode ris_mode(Scheme scheme);

/// Resolved experiment settings. Powers are stored in watts and gains linearly; the config file
/// carries dBm / dB and is converted at parse time.
struct ExperimentConfig {
    // geometry (m)
    Point2 bs_position{0.0, 0.0};
    std::vector<double> ris_x{80.0};
    double ris_y = 10.0;
    Point2 user_center{100.0, 0.0};
    double user_radius = 5.0;

    // system sizes
    std::size_t bs_antennas = 4;
    std::vector<std::size_t> ris_elements{8, 16, 32};
    std::vector<std::size_t> users{1, 2, 3, 4};

    // large-scale model
    double pl0_db = 40.0;
    double exponent_direct = 3.5;
    double exponent_ris = 2.0;
    std::vector<double> rician_factors{10.0};
    double bs_correlation = 0.0;
    double ris_correlation = 0.0;

    // power (W) and gain cap (linear)
    double bs_total = 2.6;
    double ris_total = 0.1;
    double element_dc = dbm_to_watts(-5.0);
    double element_circuit = dbm_to_watts(-10.0);
    double rf_chain = dbm_to_watts(23.0);
    double max_gain = db_to_linear(40.0);

    // noise (W)
    double user_noise = dbm_to_watts(-80.0);
    double ris_noise = dbm_to_watts(-80.0);

    // outage spec
    double target_rate = 2.0;
    double outage_eps = 0.05;
    int outage_draws = 1000;
    DrawLaw draw_law = DrawLaw::conditional;

    // run control
    int trials = 100;
    std::uint64_t seed = 1;
    int threads = 1;
    std::vector<Scheme> modes{Scheme::active, Scheme::passive, Scheme::none};

    MmConfig mm;
    OutageConfig ao;

    /// Throws std::invalid_argument naming the offending key.
    void validate() const;
    /// Canonical key = value text in config units; parse_config(to_text()) reproduces the config.
    std::string to_text() const;
};

/// Sets one dotted key from its text value. Throws std::invalid_argument on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` lines, `#` comments, dotted section keys; unknown and repeated keys are rejected.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

/// The keys accepted by apply_setting, in canonical order.
const std::vector<std::string>& config_keys();

struct SweepPoint {
    double ris_x = 0.0;
    std::size_t ris_elements = 0;
    std::size_t users = 0;
    double rician_factor = 0.0;
};

/// Cartesian product of the swept lists (ris_x, ris_elements, users, rician_factor), in that nesting order.
std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg);

/// Seed of trial t; shared by every scheme and sweep point so comparisons are paired.
std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial);

/// Users dropped uniformly in the disk around user_center.
Geometry trial_geometry(const ExperimentConfig& cfg, const SweepPoint& point, std::uint64_t seed);

struct Budgets {
    double bs = 0.0;
    double ris = std::numeric_limits<double>::infinity();
};

/// Transmit budgets left after circuit power for the given scheme.
Budgets scheme_budgets(const ExperimentConfig& cfg, std::size_t n, std::size_t m, Scheme scheme);

struct TrialRecord {
    Scheme mode = Scheme::active;
    SweepPoint point;
    int trial = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<double> rates;     // instantaneous, true channels
    std::vector<double> rates_lb;  // average-rate lower bound
    double bs_power = 0.0;
    double ris_power = 0.0;
    double total_power = 0.0;      // transmit plus circuit
    double outage = std::numeric_limits<double>::quiet_NaN();
    double violation = 0.0;        // worst relative constraint violation of the scheme's own problem
    int iterations = 0;
    bool converged = false;
    double seconds = 0.0;

    double sum_rate() const;
    double sum_rate_lb() const;
};

struct Stat {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();  // standard error of the mean
};

Stat summarize(const std::vector<double>& values);

struct CellSummary {
    Scheme mode = Scheme::active;
    SweepPoint point;
    int samples = 0;
    int failures = 0;
    Stat sum_rate;
    Stat sum_rate_lb;
    Stat total_power;
    Stat outage;
};

struct ExperimentResult {
    std::vector<TrialRecord> trials;  // ordered by (point, mode, trial)
    std::vector<CellSummary> cells;   // ordered by (point, mode)
};

/// One rate-maximization trial.
TrialRecord run_rate_trial(const ExperimentConfig& cfg, const SweepPoint& point, Scheme mode, int trial);
/// One outage-constrained power-minimization trial.
TrialRecord run_power_trial(const ExperimentConfig& cfg, const SweepPoint& point, Scheme mode, int trial);

ExperimentResult run_rate_experiment(const ExperimentConfig& cfg);
ExperimentResult run_power_experiment(const ExperimentConfig& cfg);

struct ConvergenceRow {
    int trial = 0;
    std::uint64_t seed = 0;
    bool squarem = false;
    int iteration = 0;
    double objective = 0.0;
    double seconds = 0.0;  // cumulative
};

/// Algorithm-1 objective traces with SQUAREM on and off at the first sweep point, one realization per trial.
std::vector<ConvergenceRow> run_convergence_trace(const ExperimentConfig& cfg);

std::string rate_csv(const ExperimentResult& result);
std::string power_csv(const ExperimentResult& result);
std::string trial_timing_csv(const ExperimentResult& result);
std::string convergence_csv(const std::vector<ConvergenceRow>& rows);
std::string convergence_timing_csv(const std::vector<ConvergenceRow>& rows);

/// Resolved config plus experiment name and code version.
std::string run_manifest(const ExperimentConfig& cfg, const std::string& experiment);

/// Code version recorded in manifests.
std::string code_version();

}  // namespace activeris
