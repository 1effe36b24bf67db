#include "activeris/sim_harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef ACTIVERIS_VERSION
#define ACTIVERIS_VERSION "unknown"
#endif

namespace activeris {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size() || !std::isfinite(v)) bad_value(key, value);
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

long long to_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) bad_value(key, value);
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    if (value.empty() || value[0] == '-') bad_value(key, value);
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) bad_value(key, value);
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

std::size_t to_size(const std::string& key, const std::string& value) {
    const long long v = to_integer(key, value);
    if (v < 0) bad_value(key, value);
    return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value);
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const auto& item : split_list(value)) out.push_back(to_double(key, item));
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(value)) out.push_back(to_size(key, item));
    return out;
}

std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_num(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& values, const std::function<std::string(const T&)>& fmt, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += fmt(values[i]);
    }
    return out;
}

std::string step_rule_name(DualStepRule r) { return r == DualStepRule::bisection ? "bisection" : "backtracking"; }
std::string draw_law_name(DrawLaw l) { return l == DrawLaw::conditional ? "conditional" : "joint_marginal"; }

struct KeyHandler {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyHandler>& handlers() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<KeyHandler> table = {
        {"experiment.trials", [](C& c, S v) { c.trials = static_cast<int>(to_integer("experiment.trials", v)); },
         [](const C& c) { return std::to_string(c.trials); }},
        {"experiment.seed", [](C& c, S v) { c.seed = to_u64("experiment.seed", v); },
         [](const C& c) { return std::to_string(c.seed); }},
        {"experiment.threads", [](C& c, S v) { c.threads = static_cast<int>(to_integer("experiment.threads", v)); },
         [](const C& c) { return std::to_string(c.threads); }},
        {"experiment.modes",
         [](C& c, S v) {
             c.modes.clear();
             for (const auto& item : split_list(v)) c.modes.push_back(parse_scheme(item));
         },
         [](const C& c) { return join<Scheme>(c.modes, [](const Scheme& s) { return to_string(s); }); }},
        {"geometry.bs_x", [](C& c, S v) { c.bs_position.x = to_double("geometry.bs_x", v); },
         [](const C& c) { return num(c.bs_position.x); }},
        {"geometry.bs_y", [](C& c, S v) { c.bs_position.y = to_double("geometry.bs_y", v); },
         [](const C& c) { return num(c.bs_position.y); }},
        {"geometry.ris_x", [](C& c, S v) { c.ris_x = to_doubles("geometry.ris_x", v); },
         [](const C& c) { return join<double>(c.ris_x, num); }},
        {"geometry.ris_y", [](C& c, S v) { c.ris_y = to_double("geometry.ris_y", v); },
         [](const C& c) { return num(c.ris_y); }},
        {"geometry.user_x", [](C& c, S v) { c.user_center.x = to_double("geometry.user_x", v); },
         [](const C& c) { return num(c.user_center.x); }},
        {"geometry.user_y", [](C& c, S v) { c.user_center.y = to_double("geometry.user_y", v); },
         [](const C& c) { return num(c.user_center.y); }},
        {"geometry.user_radius", [](C& c, S v) { c.user_radius = to_double("geometry.user_radius", v); },
         [](const C& c) { return num(c.user_radius); }},
        {"system.bs_antennas", [](C& c, S v) { c.bs_antennas = to_size("system.bs_antennas", v); },
         [](const C& c) { return std::to_string(c.bs_antennas); }},
        {"system.ris_elements", [](C& c, S v) { c.ris_elements = to_sizes("system.ris_elements", v); },
         [](const C& c) {
             return join<std::size_t>(c.ris_elements, [](const std::size_t& x) { return std::to_string(x); });
         }},
        {"system.users", [](C& c, S v) { c.users = to_sizes("system.users", v); },
         [](const C& c) { return join<std::size_t>(c.users, [](const std::size_t& x) { return std::to_string(x); }); }},
        {"channel.pl0_db", [](C& c, S v) { c.pl0_db = to_double("channel.pl0_db", v); },
         [](const C& c) { return num(c.pl0_db); }},
        {"channel.exponent_direct", [](C& c, S v) { c.exponent_direct = to_double("channel.exponent_direct", v); },
         [](const C& c) { return num(c.exponent_direct); }},
        {"channel.exponent_ris", [](C& c, S v) { c.exponent_ris = to_double("channel.exponent_ris", v); },
         [](const C& c) { return num(c.exponent_ris); }},
        {"channel.rician_factor", [](C& c, S v) { c.rician_factors = to_doubles("channel.rician_factor", v); },
         [](const C& c) { return join<double>(c.rician_factors, num); }},
        {"channel.bs_correlation", [](C& c, S v) { c.bs_correlation = to_double("channel.bs_correlation", v); },
         [](const C& c) { return num(c.bs_correlation); }},
        {"channel.ris_correlation", [](C& c, S v) { c.ris_correlation = to_double("channel.ris_correlation", v); },
         [](const C& c) { return num(c.ris_correlation); }},
        {"power.bs_dbm", [](C& c, S v) { c.bs_total = dbm_to_watts(to_double("power.bs_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.bs_total)); }},
        {"power.ris_dbm", [](C& c, S v) { c.ris_total = dbm_to_watts(to_double("power.ris_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.ris_total)); }},
        {"power.element_dc_dbm", [](C& c, S v) { c.element_dc = dbm_to_watts(to_double("power.element_dc_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.element_dc)); }},
        {"power.element_circuit_dbm",
         [](C& c, S v) { c.element_circuit = dbm_to_watts(to_double("power.element_circuit_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.element_circuit)); }},
        {"power.rf_chain_dbm", [](C& c, S v) { c.rf_chain = dbm_to_watts(to_double("power.rf_chain_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.rf_chain)); }},
        {"power.max_gain_db", [](C& c, S v) { c.max_gain = db_to_linear(to_double("power.max_gain_db", v)); },
         [](const C& c) { return num(10.0 * std::log10(c.max_gain)); }},
        {"noise.user_dbm", [](C& c, S v) { c.user_noise = dbm_to_watts(to_double("noise.user_dbm", v)); },
         [](const C& c) { return num(watts_to_dbm(c.user_noise)); }},
        {"noise.ris_dbm",
         [](C& c, S v) {
             c.ris_noise = (trim(v) == "off") ? 0.0 : dbm_to_watts(to_double("noise.ris_dbm", v));
         },
         [](const C& c) { return c.ris_noise > 0.0 ? num(watts_to_dbm(c.ris_noise)) : std::string("off"); }},
        {"outage.target_rate", [](C& c, S v) { c.target_rate = to_double("outage.target_rate", v); },
         [](const C& c) { return num(c.target_rate); }},
        {"outage.eps", [](C& c, S v) { c.outage_eps = to_double("outage.eps", v); },
         [](const C& c) { return num(c.outage_eps); }},
        {"outage.draws", [](C& c, S v) { c.outage_draws = static_cast<int>(to_integer("outage.draws", v)); },
         [](const C& c) { return std::to_string(c.outage_draws); }},
        {"outage.draw_law", [](C& c, S v) { c.draw_law = parse_draw_law(v); },
         [](const C& c) { return draw_law_name(c.draw_law); }},
        {"mm.outer_tol", [](C& c, S v) { c.mm.outer_tol = to_double("mm.outer_tol", v); },
         [](const C& c) { return num(c.mm.outer_tol); }},
        {"mm.max_outer_iters", [](C& c, S v) { c.mm.max_outer_iters = static_cast<int>(to_integer("mm.max_outer_iters", v)); },
         [](const C& c) { return std::to_string(c.mm.max_outer_iters); }},
        {"mm.squarem", [](C& c, S v) { c.mm.squarem = to_bool("mm.squarem", v); },
         [](const C& c) { return std::string(c.mm.squarem ? "true" : "false"); }},
        {"mm.dual_step_rule", [](C& c, S v) { c.mm.dual_step_rule = parse_dual_step_rule(v); },
         [](const C& c) { return step_rule_name(c.mm.dual_step_rule); }},
        {"mm.admm_tol", [](C& c, S v) { c.mm.admm_tol = to_double("mm.admm_tol", v); },
         [](const C& c) { return num(c.mm.admm_tol); }},
        {"mm.admm_adaptive", [](C& c, S v) { c.mm.admm_adaptive = to_bool("mm.admm_adaptive", v); },
         [](const C& c) { return std::string(c.mm.admm_adaptive ? "true" : "false"); }},
        {"ao.max_iters", [](C& c, S v) { c.ao.max_iters = static_cast<int>(to_integer("ao.max_iters", v)); },
         [](const C& c) { return std::to_string(c.ao.max_iters); }},
        {"ao.rel_tol", [](C& c, S v) { c.ao.rel_tol = to_double("ao.rel_tol", v); },
         [](const C& c) { return num(c.ao.rel_tol); }},
        {"ao.candidates", [](C& c, S v) { c.ao.candidates = static_cast<int>(to_integer("ao.candidates", v)); },
         [](const C& c) { return std::to_string(c.ao.candidates); }},
    };
    return table;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; results land at their own index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

ChannelModelParams channel_params(const ExperimentConfig& cfg, const SweepPoint& point) {
    ChannelModelParams p;
    p.pl0_db = cfg.pl0_db;
    p.exponent_direct = cfg.exponent_direct;
    p.exponent_ris = cfg.exponent_ris;
    p.rician_factor = point.rician_factor;
    p.bs_correlation = cfg.bs_correlation;
    p.ris_correlation = cfg.ris_correlation;
    return p;
}

PowerModel circuit_model(const ExperimentConfig& cfg) {
    PowerModel p;
    p.element_circuit = cfg.element_circuit;
    p.element_dc = cfg.element_dc;
    p.rf_chain = cfg.rf_chain;
    p.max_gain = cfg.max_gain;
    return p;
}

bool uses_ris(Scheme s) { return s != Scheme::none; }

std::vector<CMat> direct_rows(const ChannelRealization& r) {
    std::vector<CMat> rows;
    for (const auto& h : r.direct) rows.push_back(h.adjoint());
    return rows;
}

RisPowerModel zero_ris_power(Eigen::Index m, Eigen::Index n) {
    RisPowerModel p;
    p.mean = CMat::Zero(m, n);
    p.bs_correlation = CMat::Zero(n, n);
    p.ris_correlation_diag = RVec::Zero(m);
    return p;
}

std::string clean(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    return s;
}

/// Everything a trial needs that does not depend on the scheme.
struct TrialSetup {
    ChannelStatistics stats;
    ChannelRealization truth;
    NoiseModel noise;
    std::vector<CMat> los;
};

TrialSetup make_setup(const ExperimentConfig& cfg, const SweepPoint& point, std::uint64_t seed) {
    TrialSetup s;
    s.stats = build_statistics(trial_geometry(cfg, point, seed), channel_params(cfg, point));
    s.truth = sample_realization(s.stats, mix_seed(seed, 2));
    s.noise.ris_noise = cfg.ris_noise;
    s.noise.user_noise.assign(point.users, cfg.user_noise);
    for (std::size_t k = 0; k < point.users; ++k)
        s.los.push_back(cascaded_channel(s.stats.ris_user_los[k], s.stats.bs_ris_los));
    return s;
}

TrialRecord blank_record(const ExperimentConfig& cfg, const SweepPoint& point, Scheme mode, int trial) {
    TrialRecord rec;
    rec.mode = mode;
    rec.point = point;
    rec.trial = trial;
    rec.seed = trial_seed(cfg, trial);
    return rec;
}

using TrialFn = TrialRecord (*)(const ExperimentConfig&, const SweepPoint&, Scheme, int);

ExperimentResult run_grid(const ExperimentConfig& cfg, TrialFn fn) {
    cfg.validate();
    const auto points = sweep_points(cfg);
    const std::size_t n_modes = cfg.modes.size();
    const auto n_trials = static_cast<std::size_t>(cfg.trials);
    ExperimentResult out;
    out.trials.resize(points.size() * n_modes * n_trials);
    parallel_for(out.trials.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t t = i % n_trials;
        const std::size_t mode = (i / n_trials) % n_modes;
        const std::size_t pt = i / (n_trials * n_modes);
        out.trials[i] = fn(cfg, points[pt], cfg.modes[mode], static_cast<int>(t));
    });
    for (std::size_t c = 0; c < points.size() * n_modes; ++c) {
        CellSummary cell;
        cell.point = points[c / n_modes];
        cell.mode = cfg.modes[c % n_modes];
        std::vector<double> rate, lb, power, outage;
        for (std::size_t t = 0; t < n_trials; ++t) {
            const TrialRecord& r = out.trials[c * n_trials + t];
            if (!r.ok) {
                ++cell.failures;
                continue;
            }
            ++cell.samples;
            if (!r.rates.empty()) rate.push_back(r.sum_rate());
            if (!r.rates_lb.empty()) lb.push_back(r.sum_rate_lb());
            power.push_back(r.total_power);
            if (!std::isnan(r.outage)) outage.push_back(r.outage);
        }
        cell.sum_rate = summarize(rate);
        cell.sum_rate_lb = summarize(lb);
        cell.total_power = summarize(power);
        cell.outage = summarize(outage);
        out.cells.push_back(cell);
    }
    return out;
}

std::string point_fields(const SweepPoint& p) {
    return csv_num(p.ris_x) + "," + std::to_string(p.ris_elements) + "," + std::to_string(p.users) + "," +
           csv_num(p.rician_factor);
}

std::string rates_field(const std::vector<double>& v) { return join<double>(v, csv_num, ';'); }

}  // namespace

// ---------------------------------------------------------------- schemes

Scheme parse_scheme(const std::string& name) {
    if (name == "active") return Scheme::active;
    if (name == "active_perfect") return Scheme::active_perfect;
    if (name == "active_nonrobust") return Scheme::active_nonrobust;
    if (name == "passive") return Scheme::passive;
    if (name == "none") return Scheme::none;
    throw std::invalid_argument("unknown mode '" + name + "'");
}

std::string to_string(Scheme scheme) {
    switch (scheme) {
        case Scheme::active: return "active";
        case Scheme::active_perfect: return "active_perfect";
        case Scheme::active_nonrobust: return "active_nonrobust";
        case Scheme::passive: return "passive";
        case Scheme::none: return "none";
    }
    return "?";
}

RisMode ris_mode(Scheme scheme) {
    switch (scheme) {
        case Scheme::passive: return RisMode::passive;
        case Scheme::none: return RisMode::none;
        default: return RisMode::active;
    }
}

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("config: " + key + " " + why);
    };
    if (trials < 1) fail("experiment.trials", "must be >= 1");
    if (threads < 1) fail("experiment.threads", "must be >= 1");
    if (modes.empty()) fail("experiment.modes", "must not be empty");
    if (std::set<Scheme>(modes.begin(), modes.end()).size() != modes.size()) fail("experiment.modes", "has duplicates");
    if (ris_x.empty()) fail("geometry.ris_x", "must not be empty");
    if (ris_elements.empty()) fail("system.ris_elements", "must not be empty");
    if (users.empty()) fail("system.users", "must not be empty");
    if (rician_factors.empty()) fail("channel.rician_factor", "must not be empty");
    if (bs_antennas < 1) fail("system.bs_antennas", "must be >= 1");
    for (auto m : ris_elements)
        if (m < 1) fail("system.ris_elements", "entries must be >= 1");
    for (auto k : users)
        if (k < 1) fail("system.users", "entries must be >= 1");
    for (double d : rician_factors)
        if (d < 0.0) fail("channel.rician_factor", "entries must be >= 0");
    if (user_radius < 0.0) fail("geometry.user_radius", "must be >= 0");
    if (!(user_noise > 0.0)) fail("noise.user_dbm", "must be finite");
    if (ris_noise < 0.0) fail("noise.ris_dbm", "must be >= 0 W");
    if (!(max_gain >= 1.0)) fail("power.max_gain_db", "must be >= 0 dB");
    if (!(target_rate > 0.0)) fail("outage.target_rate", "must be > 0");
    if (!(outage_eps > 0.0 && outage_eps <= 1.0)) fail("outage.eps", "must be in (0, 1]");
    if (outage_draws < 1) fail("outage.draws", "must be >= 1");
    if (bs_correlation < 0.0 || bs_correlation >= 1.0) fail("channel.bs_correlation", "must be in [0, 1)");
    if (ris_correlation < 0.0 || ris_correlation >= 1.0) fail("channel.ris_correlation", "must be in [0, 1)");
    mm.validate();
    ao.validate();
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& h : handlers()) out += h.key + " = " + h.get(*this) + "\n";
    return out;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& h : handlers()) k.push_back(h.key);
        return k;
    }();
    return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& h : handlers())
        if (h.key == key) {
            h.set(cfg, trim(value));
            return;
        }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!seen.insert(key).second)
            throw std::invalid_argument("config line " + std::to_string(number) + ": repeated key '" + key + "'");
        try {
            apply_setting(cfg, key, line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(number) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    return parse_config(in);
}

// ---------------------------------------------------------------- trial setup

std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
    std::vector<SweepPoint> out;
    for (double x : cfg.ris_x)
        for (auto m : cfg.ris_elements)
            for (auto k : cfg.users)
                for (double d : cfg.rician_factors) out.push_back({x, m, k, d});
    return out;
}

std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
    return mix_seed(cfg.seed, static_cast<std::uint64_t>(trial));
}

Geometry trial_geometry(const ExperimentConfig& cfg, const SweepPoint& point, std::uint64_t seed) {
    Geometry g;
    g.bs_position = cfg.bs_position;
    g.ris_position = {point.ris_x, cfg.ris_y};
    g.bs_array.elements = cfg.bs_antennas;
    g.ris_array.columns = point.ris_elements;
    g.ris_array.rows = 1;
    // Drop order is fixed, so smaller user counts are prefixes of larger ones.
    Rng rng(mix_seed(seed, 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k < point.users; ++k) {
        const double r = cfg.user_radius * std::sqrt(u(rng));
        const double a = 2.0 * std::numbers::pi * u(rng);
        g.user_positions.push_back({cfg.user_center.x + r * std::cos(a), cfg.user_center.y + r * std::sin(a)});
    }
    g.validate();
    return g;
}

Budgets scheme_budgets(const ExperimentConfig& cfg, std::size_t n, std::size_t m, Scheme scheme) {
    const double rf = static_cast<double>(n) * cfg.rf_chain;
    const double md = static_cast<double>(m);
    Budgets b;
    switch (ris_mode(scheme)) {
        case RisMode::active:
            b.bs = cfg.bs_total - rf;
            b.ris = cfg.ris_total - md * (cfg.element_circuit + cfg.element_dc);
            break;
        case RisMode::passive: b.bs = cfg.bs_total + cfg.ris_total - rf - md * cfg.element_circuit; break;
        case RisMode::none: b.bs = cfg.bs_total + cfg.ris_total - rf; break;
    }
    return b;
}

double TrialRecord::sum_rate() const {
    double s = 0.0;
    for (double r : rates) s += r;
    return s;
}

double TrialRecord::sum_rate_lb() const {
    double s = 0.0;
    for (double r : rates_lb) s += r;
    return s;
}

Stat summarize(const std::vector<double>& values) {
    Stat s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / n;
    if (values.size() < 2) return s;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / (n - 1.0) / n);
    return s;
}

// ---------------------------------------------------------------- trials

TrialRecord run_rate_trial(const ExperimentConfig& cfg, const SweepPoint& point, Scheme mode, int trial) {
    TrialRecord rec = blank_record(cfg, point, mode, trial);
    const auto t0 = Clock::now();
    try {
        const TrialSetup s = make_setup(cfg, point, rec.seed);
        const auto n = static_cast<Eigen::Index>(cfg.bs_antennas);
        const auto m = static_cast<Eigen::Index>(point.ris_elements);
        const Budgets budget = scheme_budgets(cfg, cfg.bs_antennas, point.ris_elements, mode);
        if (!(budget.bs > 0.0)) throw std::invalid_argument("BS budget exhausted by circuit power");
        if (mode != Scheme::passive && mode != Scheme::none && !(budget.ris > 0.0))
            throw std::invalid_argument("RIS budget exhausted by circuit power");

        RateProblem p;
        p.noise = s.noise;
        p.bs_budget = budget.bs;
        p.max_gain = cfg.max_gain;
        // RIS noise seen by the design and by the lower bound.
        std::vector<CMat> design_psi, bound_psi;
        std::vector<CMat> los = s.los;
        switch (mode) {
            case Scheme::none:
                p.channels = direct_rows(s.truth);
                p.noise.ris_noise = 0.0;
                los.clear();
                design_psi.assign(point.users, CMat(0, 0));
                break;
            case Scheme::passive:
                p.channels = effective_channels(s.truth);
                p.noise.ris_noise = 0.0;
                p.max_gain = 1.0;
                p.power = zero_ris_power(m, n);
                design_psi.assign(point.users, CMat::Zero(m, m));
                break;
            case Scheme::active:
                p.channels = effective_channels(s.truth);
                p.ris_budget = budget.ris;
                p.power = statistical_ris_power(s.stats, s.noise);
                for (std::size_t k = 0; k < point.users; ++k) design_psi.push_back(psi_matrix(s.stats, k, s.noise));
                break;
            case Scheme::active_perfect:
                p.channels = effective_channels(s.truth);
                p.ris_budget = budget.ris;
                p.power = exact_ris_power(s.truth.bs_ris, s.noise);
                for (std::size_t k = 0; k < point.users; ++k)
                    design_psi.push_back(
                        (s.noise.ris_noise * s.truth.ris_user[k].cwiseAbs2()).cast<cd>().asDiagonal().toDenseMatrix());
                break;
            case Scheme::active_nonrobust:
                p.channels = effective_channels(s.truth);
                p.ris_budget = budget.ris;
                p.power = los_ris_power(s.stats, s.noise);
                design_psi.assign(point.users, CMat::Zero(m, m));
                break;
        }
        p.psi = design_psi;
        if (ris_mode(mode) == RisMode::active)
            for (std::size_t k = 0; k < point.users; ++k) bound_psi.push_back(psi_matrix(s.stats, k, s.noise));
        else
            bound_psi = design_psi;

        const MmResult res = maximize_sum_rate(p, cfg.mm, default_initialization(p, los));
        const Beamformers& bf = res.beamformers;
        rec.rates = instantaneous_rate(bf, s.truth, p.noise);
        rec.rates_lb = average_rate_lb(bf, p.channels, bound_psi, p.noise);
        rec.bs_power = bf.precoder.squaredNorm();
        rec.ris_power = ris_mode(mode) == RisMode::active ? average_ris_power(bf, s.stats, s.noise) : 0.0;
        const std::size_t circuit_m = uses_ris(mode) ? point.ris_elements : 0;
        rec.total_power = rec.bs_power + rec.ris_power +
                          circuit_power(cfg.bs_antennas, circuit_m, circuit_model(cfg), ris_mode(mode));
        rec.violation = constraint_residuals(bf, p).worst(p);
        rec.iterations = static_cast<int>(res.trace.size()) - 1;
        rec.converged = res.converged;
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.error = clean(e.what());
    }
    rec.seconds = seconds_since(t0);
    return rec;
}

TrialRecord run_power_trial(const ExperimentConfig& cfg, const SweepPoint& point, Scheme mode, int trial) {
    TrialRecord rec = blank_record(cfg, point, mode, trial);
    const auto t0 = Clock::now();
    try {
        if (mode == Scheme::active_perfect)
            throw std::invalid_argument("active_perfect is not defined for the power experiment");
        const TrialSetup s = make_setup(cfg, point, rec.seed);
        const auto n = static_cast<Eigen::Index>(cfg.bs_antennas);
        const auto m = static_cast<Eigen::Index>(point.ris_elements);

        OutageProblem op;
        op.noise = s.noise;
        op.spec.target_rate.assign(point.users, cfg.target_rate);
        op.spec.outage_eps.assign(point.users, cfg.outage_eps);
        op.max_gain = cfg.max_gain;
        switch (mode) {
            case Scheme::none:
                op.channels = direct_rows(s.truth);
                op.noise.ris_noise = 0.0;
                break;
            case Scheme::passive:
                op.channels = effective_channels(s.truth);
                op.stats = s.stats;
                op.noise.ris_noise = 0.0;
                op.power = zero_ris_power(m, n);
                op.max_gain = 1.0;
                break;
            default:
                op.channels = effective_channels(s.truth);
                op.stats = s.stats;
                op.power = statistical_ris_power(s.stats, s.noise);
                op.robust = mode == Scheme::active;
                break;
        }
        OutageConfig ao = cfg.ao;
        ao.seed = mix_seed(rec.seed, 4);
        const OutageResult res = run_outage_ao(op, ao);
        const Beamformers& bf = res.beamformers;

        OutageProblem judge = op;
        judge.robust = true;
        rec.outage = empirical_outage(bf, judge, cfg.outage_draws, mix_seed(rec.seed, 3), cfg.draw_law);
        rec.bs_power = bf.precoder.squaredNorm();
        rec.ris_power = op.power.evaluate(bf.precoder, bf.reflection);
        const std::size_t circuit_m = uses_ris(mode) ? point.ris_elements : 0;
        rec.total_power = rec.bs_power + rec.ris_power +
                          circuit_power(cfg.bs_antennas, circuit_m, circuit_model(cfg), ris_mode(mode));
        const auto v = bti_violation(bf.precoder, bf.reflection, op);
        rec.violation = std::max(0.0, *std::max_element(v.begin(), v.end()));
        rec.iterations = static_cast<int>(res.trace.size()) - 1;
        rec.converged = res.converged;
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.error = clean(e.what());
    }
    rec.seconds = seconds_since(t0);
    return rec;
}

ExperimentResult run_rate_experiment(const ExperimentConfig& cfg) { return run_grid(cfg, &run_rate_trial); }

ExperimentResult run_power_experiment(const ExperimentConfig& cfg) {
    for (Scheme s : cfg.modes)
        if (s == Scheme::active_perfect)
            throw std::invalid_argument("config: experiment.modes: active_perfect is not defined for the power experiment");
    return run_grid(cfg, &run_power_trial);
}

std::vector<ConvergenceRow> run_convergence_trace(const ExperimentConfig& cfg) {
    cfg.validate();
    const SweepPoint point = sweep_points(cfg).front();
    std::vector<std::vector<ConvergenceRow>> per_trial(static_cast<std::size_t>(cfg.trials));
    parallel_for(per_trial.size(), cfg.threads, [&](std::size_t t) {
        const std::uint64_t seed = trial_seed(cfg, static_cast<int>(t));
        const TrialSetup s = make_setup(cfg, point, seed);
        const Budgets budget = scheme_budgets(cfg, cfg.bs_antennas, point.ris_elements, Scheme::active);
        RateProblem p;
        p.channels = effective_channels(s.truth);
        p.noise = s.noise;
        p.power = statistical_ris_power(s.stats, s.noise);
        p.bs_budget = budget.bs;
        p.ris_budget = budget.ris;
        p.max_gain = cfg.max_gain;
        for (std::size_t k = 0; k < point.users; ++k) p.psi.push_back(psi_matrix(s.stats, k, s.noise));
        const Beamformers init = default_initialization(p, s.los);
        for (bool squarem : {true, false}) {
            MmConfig mm = cfg.mm;
            mm.squarem = squarem;
            const MmResult res = maximize_sum_rate(p, mm, init);
            for (const auto& r : res.trace)
                per_trial[t].push_back({static_cast<int>(t), seed, squarem, r.iteration, r.objective, r.seconds});
        }
    });
    std::vector<ConvergenceRow> rows;
    for (auto& v : per_trial) rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

// ---------------------------------------------------------------- output

std::string rate_csv(const ExperimentResult& result) {
    std::string out =
        "row_type,mode,ris_x,ris_elements,users,rician_factor,trial,seed,status,samples,failures,sum_rate,sum_rate_se,"
        "sum_rate_lb,sum_rate_lb_se,total_power,total_power_se,bs_power,ris_power,violation,iterations,converged,"
        "user_rates,user_rates_lb,error\n";
    for (const auto& r : result.trials) {
        out += "trial," + to_string(r.mode) + "," + point_fields(r.point) + "," + std::to_string(r.trial) + "," +
               std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," + (r.ok ? "1,0," : "0,1,");
        if (r.ok)
            out += csv_num(r.sum_rate()) + ",," + csv_num(r.sum_rate_lb()) + ",," + csv_num(r.total_power) + ",," +
                   csv_num(r.bs_power) + "," + csv_num(r.ris_power) + "," + csv_num(r.violation) + "," +
                   std::to_string(r.iterations) + "," + (r.converged ? "1" : "0") + "," + rates_field(r.rates) + "," +
                   rates_field(r.rates_lb) + ",\n";
        else
            out += ",,,,,,,,,,,,," + r.error + "\n";
    }
    for (const auto& c : result.cells)
        out += "cell," + to_string(c.mode) + "," + point_fields(c.point) + ",,,," + std::to_string(c.samples) + "," +
               std::to_string(c.failures) + "," + csv_num(c.sum_rate.mean) + "," + csv_num(c.sum_rate.se) + "," +
               csv_num(c.sum_rate_lb.mean) + "," + csv_num(c.sum_rate_lb.se) + "," + csv_num(c.total_power.mean) + "," +
               csv_num(c.total_power.se) + ",,,,,,,,\n";
    return out;
}

std::string power_csv(const ExperimentResult& result) {
    std::string out =
        "row_type,mode,ris_x,ris_elements,users,rician_factor,trial,seed,status,samples,failures,total_power,"
        "total_power_se,outage,outage_se,bs_power,ris_power,violation,iterations,converged,error\n";
    for (const auto& r : result.trials) {
        out += "trial," + to_string(r.mode) + "," + point_fields(r.point) + "," + std::to_string(r.trial) + "," +
               std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," + (r.ok ? "1,0," : "0,1,");
        if (r.ok)
            out += csv_num(r.total_power) + ",," + csv_num(r.outage) + ",," + csv_num(r.bs_power) + "," +
                   csv_num(r.ris_power) + "," + csv_num(r.violation) + "," + std::to_string(r.iterations) + "," +
                   (r.converged ? "1" : "0") + ",\n";
        else
            out += ",,,,,,,,," + r.error + "\n";
    }
    for (const auto& c : result.cells)
        out += "cell," + to_string(c.mode) + "," + point_fields(c.point) + ",,,," + std::to_string(c.samples) + "," +
               std::to_string(c.failures) + "," + csv_num(c.total_power.mean) + "," + csv_num(c.total_power.se) + "," +
               csv_num(c.outage.mean) + "," + csv_num(c.outage.se) + ",,,,,,\n";
    return out;
}

std::string trial_timing_csv(const ExperimentResult& result) {
    std::string out = "mode,ris_x,ris_elements,users,rician_factor,trial,seconds\n";
    for (const auto& r : result.trials)
        out += to_string(r.mode) + "," + point_fields(r.point) + "," + std::to_string(r.trial) + "," +
               csv_num(r.seconds) + "\n";
    return out;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
    std::string out = "trial,seed,squarem,iteration,objective\n";
    for (const auto& r : rows)
        out += std::to_string(r.trial) + "," + std::to_string(r.seed) + "," + (r.squarem ? "on" : "off") + "," +
               std::to_string(r.iteration) + "," + csv_num(r.objective) + "\n";
    return out;
}

std::string convergence_timing_csv(const std::vector<ConvergenceRow>& rows) {
    std::string out = "trial,squarem,iteration,seconds\n";
    for (const auto& r : rows)
        out += std::to_string(r.trial) + "," + (r.squarem ? "on" : "off") + "," + std::to_string(r.iteration) + "," +
               csv_num(r.seconds) + "\n";
    return out;
}

std::string code_version() { return ACTIVERIS_VERSION; }

std::string run_manifest(const ExperimentConfig& cfg, const std::string& experiment) {
    return "# experiment: " + experiment + "\n# code_version: " + code_version() + "\n" + cfg.to_text();
}

}  // namespace activeris
