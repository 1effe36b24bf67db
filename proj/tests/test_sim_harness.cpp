#include "activeris/sim_harness.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace activeris;

namespace {

ExperimentConfig parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::size_t column(const std::string& header, const std::string& name) {
    const auto cols = fields_of(header);
    const auto it = std::find(cols.begin(), cols.end(), name);
    REQUIRE(it != cols.end());
    return static_cast<std::size_t>(it - cols.begin());
}

// Small rate setting shared by the determinism and schema checks.
ExperimentConfig small_rate_config() {
    ExperimentConfig cfg;
    cfg.ris_elements = {8};
    cfg.users = {1, 2};
    cfg.trials = 3;
    cfg.mm.outer_tol = 1e-4;
    cfg.modes = {Scheme::active, Scheme::active_perfect, Scheme::active_nonrobust, Scheme::passive, Scheme::none};
    return cfg;
}

}  // namespace

TEST_CASE("config text round-trips and converts units") {
    ExperimentConfig cfg = parse_text(
        "# comment\n"
        "experiment.trials = 7\n"
        "experiment.modes = active, none\n"
        "system.ris_elements = 4, 12\n"
        "power.bs_dbm = 30   # trailing comment\n"
        "power.max_gain_db = 20\n"
        "noise.ris_dbm = off\n"
        "\n");
    CHECK(cfg.trials == 7);
    CHECK(cfg.modes == std::vector<Scheme>{Scheme::active, Scheme::none});
    CHECK(cfg.ris_elements == std::vector<std::size_t>{4, 12});
    CHECK(cfg.bs_total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cfg.max_gain == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(cfg.ris_noise == 0.0);

    const std::string text = cfg.to_text();
    CHECK(parse_text(text).to_text() == text);
    CHECK(parse_text(ExperimentConfig{}.to_text()).to_text() == ExperimentConfig{}.to_text());

    // every documented key appears exactly once in the canonical text
    for (const auto& key : config_keys()) {
        const auto first = text.find(key + " = ");
        CHECK(first != std::string::npos);
        CHECK(text.find("\n" + key + " = ", first + 1) == std::string::npos);
    }
}

TEST_CASE("config rejects unknown, repeated and malformed entries") {
    CHECK_THROWS_AS(parse_text("system.bogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_text("experiment.trials = 2\nexperiment.trials = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_text("experiment.trials\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_text("experiment.trials = two\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_text("experiment.modes = active,sideways\n"), std::invalid_argument);
    try {
        parse_text("experiment.seed = 3\n\nsystem.bogus = 1\n");
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        CHECK(std::string(e.what()).find("system.bogus") != std::string::npos);
    }
    ExperimentConfig cfg;
    CHECK_THROWS_AS(apply_setting(cfg, "nope", "1"), std::invalid_argument);
}

TEST_CASE("config validation names the offending key") {
    ExperimentConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.trials = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("experiment.trials"), std::invalid_argument);
    cfg = ExperimentConfig{};
    cfg.users.clear();
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("system.users"), std::invalid_argument);
    cfg = ExperimentConfig{};
    cfg.modes.clear();
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("experiment.modes"), std::invalid_argument);
}

TEST_CASE("sweep points nest location, elements, users, Rician factor") {
    ExperimentConfig cfg;
    cfg.ris_x = {20.0, 80.0};
    cfg.ris_elements = {8, 16};
    cfg.users = {1, 2, 3};
    cfg.rician_factors = {0.0, 10.0};
    const auto pts = sweep_points(cfg);
    REQUIRE(pts.size() == 24);
    CHECK(pts.front().ris_x == 20.0);
    CHECK(pts[1].rician_factor == 10.0);
    CHECK(pts[2].users == 2);
    CHECK(pts[6].ris_elements == 16);
    CHECK(pts[12].ris_x == 80.0);
    CHECK(pts.back().ris_elements == 16);
    CHECK(pts.back().users == 3);
}

TEST_CASE("budgets subtract the circuit power of each scheme") {
    const ExperimentConfig cfg;
    const double rf = 4.0 * dbm_to_watts(23.0);
    const double pc = dbm_to_watts(-10.0);
    const double pdc = dbm_to_watts(-5.0);
    const Budgets a = scheme_budgets(cfg, 4, 8, Scheme::active);
    CHECK(a.bs == doctest::Approx(2.6 - rf).epsilon(1e-14));
    CHECK(a.ris == doctest::Approx(0.1 - 8.0 * (pc + pdc)).epsilon(1e-14));
    CHECK(scheme_budgets(cfg, 4, 8, Scheme::active_nonrobust).ris == a.ris);
    const Budgets p = scheme_budgets(cfg, 4, 8, Scheme::passive);
    CHECK(p.bs == doctest::Approx(2.7 - rf - 8.0 * pc).epsilon(1e-14));
    CHECK(std::isinf(p.ris));
    CHECK(scheme_budgets(cfg, 4, 8, Scheme::none).bs == doctest::Approx(2.7 - rf).epsilon(1e-14));
}

TEST_CASE("user drops are seeded, inside the disk and nested in the user count") {
    ExperimentConfig cfg;
    const SweepPoint big{80.0, 8, 4, 10.0};
    const SweepPoint small{80.0, 8, 2, 10.0};
    for (int t = 0; t < 20; ++t) {
        const auto seed = trial_seed(cfg, t);
        const Geometry g = trial_geometry(cfg, big, seed);
        const Geometry h = trial_geometry(cfg, small, seed);
        REQUIRE(g.user_positions.size() == 4);
        for (const auto& u : g.user_positions)
            CHECK(std::hypot(u.x - 100.0, u.y) <= 5.0 + 1e-12);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(h.user_positions[k].x == g.user_positions[k].x);
            CHECK(h.user_positions[k].y == g.user_positions[k].y);
        }
        CHECK(trial_geometry(cfg, big, seed).user_positions[3].x == g.user_positions[3].x);
    }
    CHECK(trial_seed(cfg, 0) != trial_seed(cfg, 1));
    ExperimentConfig other = cfg;
    other.seed = 2;
    CHECK(trial_seed(other, 0) != trial_seed(cfg, 0));
}

TEST_CASE("summary statistics are the sample mean and standard error") {
    const Stat s = summarize({1.0, 2.0, 3.0, 6.0});
    CHECK(s.mean == doctest::Approx(3.0));
    // sample variance 14/3, divided by n = 4
    CHECK(s.se == doctest::Approx(std::sqrt(14.0 / 3.0 / 4.0)));
    CHECK(std::isnan(summarize({5.0}).se));
    CHECK(std::isnan(summarize({}).mean));
}

TEST_CASE("no-RIS single user reaches full-power matched filtering") {
    ExperimentConfig cfg;
    cfg.ris_elements = {8};
    cfg.users = {1};
    cfg.trials = 6;
    cfg.modes = {Scheme::none};
    const ExperimentResult res = run_rate_experiment(cfg);
    REQUIRE(res.trials.size() == 6);
    const double budget = scheme_budgets(cfg, 4, 8, Scheme::none).bs;
    ChannelModelParams params;
    double mean = 0.0;
    for (const auto& r : res.trials) {
        REQUIRE(r.ok);
        const Geometry g = trial_geometry(cfg, r.point, r.seed);
        const ChannelRealization truth = sample_realization(build_statistics(g, params), mix_seed(r.seed, 2));
        const double expected = std::log2(1.0 + budget * truth.direct[0].squaredNorm() / cfg.user_noise);
        CHECK(r.rates[0] == doctest::Approx(expected).epsilon(1e-6));
        CHECK(r.bs_power == doctest::Approx(budget).epsilon(1e-8));
        mean += expected / 6.0;
    }
    REQUIRE(res.cells.size() == 1);
    CHECK(res.cells[0].sum_rate.mean == doctest::Approx(mean).epsilon(1e-6));
    CHECK(res.cells[0].samples == 6);
}

TEST_CASE("rate experiment is deterministic, thread-count independent and schema-stable") {
    ExperimentConfig cfg = small_rate_config();
    const ExperimentResult one = run_rate_experiment(cfg);
    cfg.threads = 3;
    const ExperimentResult three = run_rate_experiment(cfg);
    const std::string csv = rate_csv(one);
    CHECK(csv == rate_csv(three));

    const auto lines = lines_of(csv);
    const std::size_t width = fields_of(lines.front()).size();
    const std::size_t status = column(lines.front(), "status");
    const std::size_t violation = column(lines.front(), "violation");
    const std::size_t samples = column(lines.front(), "samples");
    int trial_rows = 0, cell_rows = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = fields_of(lines[i]);
        REQUIRE(f.size() == width);
        if (f[0] == "trial") {
            ++trial_rows;
            CHECK(f[status] == "ok");
            CHECK(std::stod(f[violation]) <= 1e-6);
        } else {
            REQUIRE(f[0] == "cell");
            ++cell_rows;
            CHECK(std::stoi(f[samples]) == 3);
        }
    }
    CHECK(trial_rows == 2 * 5 * 3);
    CHECK(cell_rows == 2 * 5);

    for (const auto& r : one.trials) {
        CHECK(std::all_of(r.rates.begin(), r.rates.end(), [](double v) { return std::isfinite(v) && v >= 0.0; }));
        CHECK(r.rates.size() == r.point.users);
        CHECK(r.rates_lb.size() == r.point.users);
        CHECK(std::isfinite(r.total_power));
        if (r.mode == Scheme::passive || r.mode == Scheme::none) CHECK(r.ris_power == 0.0);
    }
}

TEST_CASE("paired trials share their channel draw across schemes") {
    ExperimentConfig cfg = small_rate_config();
    cfg.users = {1};
    cfg.trials = 2;
    cfg.modes = {Scheme::passive, Scheme::none};
    const ExperimentResult res = run_rate_experiment(cfg);
    // trial t of each scheme carries the same seed
    CHECK(res.trials[0].seed == res.trials[2].seed);
    CHECK(res.trials[1].seed == res.trials[3].seed);
    CHECK(res.trials[0].seed != res.trials[1].seed);
}

TEST_CASE("power experiment records outage and rejects the perfect-CSI scheme") {
    ExperimentConfig cfg;
    cfg.ris_elements = {4};
    cfg.users = {1};
    cfg.trials = 2;
    cfg.outage_draws = 200;
    cfg.modes = {Scheme::active, Scheme::active_nonrobust, Scheme::passive, Scheme::none};
    const ExperimentResult res = run_power_experiment(cfg);
    REQUIRE(res.trials.size() == 8);
    for (const auto& r : res.trials) {
        REQUIRE_MESSAGE(r.ok, r.error);
        CHECK(r.outage >= 0.0);
        CHECK(r.outage <= 1.0);
        CHECK(r.total_power > r.bs_power);
        if (r.mode != Scheme::active_nonrobust) CHECK(r.violation <= 1e-6);
    }
    const std::string csv = power_csv(res);
    CHECK(csv == power_csv(run_power_experiment(cfg)));
    const auto lines = lines_of(csv);
    const std::size_t width = fields_of(lines.front()).size();
    for (const auto& line : lines) CHECK(fields_of(line).size() == width);

    cfg.modes = {Scheme::active_perfect};
    CHECK_THROWS_AS(run_power_experiment(cfg), std::invalid_argument);
    const TrialRecord rec = run_power_trial(cfg, sweep_points(cfg).front(), Scheme::active_perfect, 0);
    CHECK_FALSE(rec.ok);
    CHECK(rec.error.find(',') == std::string::npos);
}

TEST_CASE("infeasible budgets are recorded per trial, not thrown") {
    ExperimentConfig cfg = small_rate_config();
    cfg.users = {1};
    cfg.trials = 1;
    cfg.ris_total = 0.001;  // below the element circuit power at M = 8
    cfg.modes = {Scheme::active, Scheme::none};
    const ExperimentResult res = run_rate_experiment(cfg);
    CHECK_FALSE(res.trials[0].ok);
    CHECK(res.trials[1].ok);
    CHECK(res.cells[0].failures == 1);
    CHECK(rate_csv(res).find("failed") != std::string::npos);
}

TEST_CASE("convergence traces are monotone, reproducible and faster with extrapolation") {
    ExperimentConfig cfg;
    cfg.ris_elements = {8};
    cfg.users = {2};
    cfg.trials = 6;
    const auto rows = run_convergence_trace(cfg);
    CHECK(convergence_csv(rows) == convergence_csv(run_convergence_trace(cfg)));

    int faster = 0;
    for (int t = 0; t < cfg.trials; ++t) {
        int reach[2] = {0, 0};
        for (bool on : {true, false}) {
            std::vector<double> obj;
            for (const auto& r : rows)
                if (r.trial == t && r.squarem == on) obj.push_back(r.objective);
            REQUIRE(obj.size() >= 2);
            for (std::size_t i = 1; i < obj.size(); ++i) CHECK(obj[i] >= obj[i - 1] - 1e-9);
            const double target = obj.back() - 1e-3;
            const auto it = std::find_if(obj.begin(), obj.end(), [&](double v) { return v >= target; });
            reach[on ? 0 : 1] = static_cast<int>(it - obj.begin());
        }
        if (reach[0] < reach[1]) ++faster;
    }
    CHECK(2 * faster > cfg.trials);
}

TEST_CASE("manifest carries the version and reloads as a config") {
    ExperimentConfig cfg;
    cfg.trials = 9;
    cfg.modes = {Scheme::passive};
    const std::string manifest = run_manifest(cfg, "rate");
    CHECK(manifest.find("# experiment: rate") == 0);
    CHECK(manifest.find("# code_version: " + code_version()) != std::string::npos);
    CHECK(parse_text(manifest).to_text() == cfg.to_text());
}
