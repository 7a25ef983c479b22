#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "splitfed/cli.hpp"
#include "splitfed/config.hpp"
#include "splitfed/report.hpp"

using namespace splitfed;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config_json() {
    nlohmann::json j;
    j["format_version"] = 1;
    j["architecture"] = {{"input_size", 16}, {"num_classes", 5},    {"down_filters", {4}},
                         {"bottleneck_filters", 8}, {"up_filters", {4}}, {"kernel_size", 3}};
    j["data"] = {{"client_samples", {4, 4}}, {"test_samples", 2}};
    j["protocol"] = {{"local_epochs", 1}, {"global_epochs", 2}, {"batch_size", 2}};
    j["channel"] = {{"sigma_noise", 0.0},
                    {"clients", {{{"client_id", 2}, {"onset_global_epoch", 2}}}}};
    j["strategy"] = {{"name", "naive"}, {"alpha", 10.0}};
    j["seeds"] = {{"model", 5}, {"data", 6}, {"channel", 7}};
    j["output_dir"] = "out";
    return j;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("format_double round-trips exactly and renders nan") {
    for (double v : {0.1, -3.14159265358979, 1e-300, 42.0, 93.39, 2e-4}) {
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}

TEST_CASE("config parsing: defaults, field diagnostics, round trip") {
    RunConfig defaults = parse_run_config(nlohmann::json::object());
    CHECK(defaults.num_clients == 5);
    CHECK(defaults.local_epochs == 12);
    CHECK(defaults.global_epochs == 10);
    CHECK(defaults.client_samples == std::vector<int>{42, 24, 17, 36, 24});
    CHECK(defaults.alpha == 10.0);
    CHECK(defaults.noisy_clients.size() == 3);
    CHECK(defaults.channel_for(3).onset_global_epoch == 5);
    CHECK(defaults.channel_for(5).onset_global_epoch == 3);
    CHECK(defaults.channel_for(1).sigma_noise == 0.0);

    nlohmann::json bad = tiny_config_json();
    bad["protocol"]["local_epochs"] = "twelve";
    try {
        parse_run_config(bad);
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("protocol.local_epochs") != std::string::npos);
    }

    nlohmann::json bad2 = tiny_config_json();
    bad2["strategy"]["name"] = "median";
    CHECK_THROWS_AS(parse_run_config(bad2), config_error);

    // Round trip: parse(emit(x)) == x semantically.
    RunConfig cfg = parse_run_config(tiny_config_json());
    RunConfig again = parse_run_config(run_config_to_json(cfg));
    CHECK(run_config_to_json(cfg) == run_config_to_json(again));
}

TEST_CASE("grid spec defaults to the seven-sigma, three-strategy sweep") {
    GridSpec spec = parse_grid_spec(nlohmann::json::object());
    CHECK(spec.sigmas == std::vector<double>{0.0, 2e-4, 6e-4, 1e-3, 1e-2, 1e-1, 5e-1});
    CHECK(spec.strategies.size() == 3);
    CHECK(spec.sigmas.size() * spec.strategies.size() == 21);

    nlohmann::json j;
    j["sigmas"] = {0.0, 0.5};
    j["strategies"] = {"smart"};
    GridSpec custom = parse_grid_spec(j);
    CHECK(custom.sigmas.size() == 2);
    CHECK(custom.strategies == std::vector<Strategy>{Strategy::smart});
}

TEST_CASE("metrics rows: G*(N+1) rows per run, summary matches the final epoch") {
    RunConfig cfg = parse_run_config(tiny_config_json());
    SimulationResult result = run_simulation(cfg);
    std::vector<MetricsRow> rows = rows_from_result(result, cfg);
    CHECK(rows.size() == static_cast<std::size_t>(cfg.global_epochs * (cfg.num_clients + 1)));

    // Final global row values equal the summary values exactly.
    CellSummary cell = summarize(result, cfg);
    const MetricsRow& final_global = rows.back();
    CHECK(final_global.client_id == -1);
    CHECK(final_global.test_loss == cell.loss);
    CHECK(final_global.test_accuracy_percent == cell.accuracy_percent);
    CHECK(final_global.iou == cell.iou);

    // summary.json round-trips and its numbers equal the csv values.
    nlohmann::json summary = summary_to_json({cell});
    nlohmann::json reparsed = nlohmann::json::parse(summary.dump());
    CHECK(reparsed == summary);
    CHECK(reparsed["cells"][0]["loss"].get<double>() == cell.loss);
    CHECK(reparsed["cells"][0]["accuracy_percent"].get<double>() == cell.accuracy_percent);
}

TEST_CASE("diverged cells render loss as the string nan") {
    CellSummary cell;
    cell.sigma_noise = 0.5;
    cell.strategy = "naive";
    cell.loss = std::numeric_limits<double>::quiet_NaN();
    cell.accuracy_percent = 40.27;
    cell.iou = {0.4, 0.0, 0.0, 0.0, 0.0};
    cell.diverged = true;
    nlohmann::json j = summary_to_json({cell});
    CHECK(j["cells"][0]["loss"] == "nan");
    CHECK(render_summary_table({cell}).find("nan") != std::string::npos);
}

TEST_CASE("run_cli simulate: deterministic outputs, exit codes, no partial files") {
    TempDir tmp("splitfed_cli_test");
    const fs::path cfg_path = tmp.path / "run.json";
    {
        std::ofstream out(cfg_path);
        out << tiny_config_json().dump(2);
    }

    const fs::path out_a = tmp.path / "a", out_b = tmp.path / "b";
    CHECK(run_cli({"simulate", "--config", cfg_path.string(), "--seed", "7", "--out",
                   out_a.string()}) == 0);
    CHECK(run_cli({"simulate", "--config", cfg_path.string(), "--seed", "7", "--out",
                   out_b.string()}) == 0);
    CHECK(slurp(out_a / "metrics.csv") == slurp(out_b / "metrics.csv"));
    CHECK(slurp(out_a / "summary.json") == slurp(out_b / "summary.json"));
    CHECK(fs::exists(out_a / "global_weights.json"));
    CHECK(fs::exists(out_a / "global_weights.bin"));

    // A different seed changes the metrics.
    const fs::path out_c = tmp.path / "c";
    CHECK(run_cli({"simulate", "--config", cfg_path.string(), "--seed", "8", "--out",
                   out_c.string()}) == 0);
    CHECK(slurp(out_a / "metrics.csv") != slurp(out_c / "metrics.csv"));

    // Missing config: nonzero exit, nothing written.
    const fs::path out_d = tmp.path / "d";
    CHECK(run_cli({"simulate", "--config", (tmp.path / "nope.json").string(), "--out",
                   out_d.string()}) != 0);
    CHECK_FALSE(fs::exists(out_d));

    // CSV layout: header plus G*(N+1) rows.
    std::istringstream csv(slurp(out_a / "metrics.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 2 + 2 * (2 + 1));  // version line + header + G*(N+1) rows
}

TEST_CASE("stored accuracy is recomputable from the dumped checkpoint") {
    TempDir tmp("splitfed_recompute_test");
    const fs::path cfg_path = tmp.path / "run.json";
    {
        std::ofstream out(cfg_path);
        out << tiny_config_json().dump(2);
    }
    const fs::path out_dir = tmp.path / "out";
    REQUIRE(run_cli({"simulate", "--config", cfg_path.string(), "--out", out_dir.string()}) == 0);

    nlohmann::json summary = nlohmann::json::parse(slurp(out_dir / "summary.json"));
    RunConfig cfg = load_run_config(cfg_path.string());
    Simulation sim(cfg);
    sim.set_global_model(
        load_checkpoint((out_dir / "global_weights").string(), cfg.arch));
    GlobalEpochMetrics row = sim.evaluate_global(cfg.global_epochs);
    CHECK(row.accuracy_percent == summary["cells"][0]["accuracy_percent"].get<double>());
    CHECK(row.test_loss == summary["cells"][0]["loss"].get<double>());
}

TEST_CASE("payload kinds map to their fixed directions") {
    CHECK(direction_of(PayloadKind::client_weights) == Direction::uplink);
    CHECK(direction_of(PayloadKind::scalar_indicator) == Direction::uplink);
    CHECK(direction_of(PayloadKind::global_client_weights) == Direction::downlink);
    CHECK(direction_of(PayloadKind::features, Direction::downlink) == Direction::downlink);
    CHECK(direction_of(PayloadKind::gradients, Direction::uplink) == Direction::uplink);
}

TEST_CASE("SPLITFED_OUT overrides the config output directory") {
    TempDir tmp("splitfed_env_test");
    const fs::path cfg_path = tmp.path / "run.json";
    {
        std::ofstream out(cfg_path);
        out << tiny_config_json().dump(2);
    }
    const fs::path env_dir = tmp.path / "from_env";
    setenv("SPLITFED_OUT", env_dir.c_str(), 1);
    CHECK(run_cli({"simulate", "--config", cfg_path.string()}) == 0);
    unsetenv("SPLITFED_OUT");
    CHECK(fs::exists(env_dir / "metrics.csv"));
}

TEST_CASE("run_cli simulate --dump-dataset writes the sample files and manifest") {
    TempDir tmp("splitfed_dump_test");
    const fs::path cfg_path = tmp.path / "run.json";
    {
        std::ofstream out(cfg_path);
        out << tiny_config_json().dump(2);
    }
    const fs::path out_dir = tmp.path / "out";
    CHECK(run_cli({"simulate", "--config", cfg_path.string(), "--out", out_dir.string(),
                   "--dump-dataset"}) == 0);
    CHECK(fs::exists(out_dir / "dataset" / "manifest.json"));
    CHECK(fs::exists(out_dir / "dataset" / "client_1" / "sample_0000.bin"));
    CHECK(fs::exists(out_dir / "dataset" / "test" / "sample_0000.bin"));
    // image (16*16 f64) + mask (16*16 u8)
    CHECK(fs::file_size(out_dir / "dataset" / "client_1" / "sample_0000.bin") == 256 * 8 + 256);
}

TEST_CASE("run_cli grid: cells in sigma-outer strategy-inner order") {
    TempDir tmp("splitfed_grid_test");
    const fs::path cfg_path = tmp.path / "grid.json";
    {
        nlohmann::json grid;
        grid["sigmas"] = {0.0, 0.3};
        grid["strategies"] = {"naive", "smart"};
        grid["base"] = tiny_config_json();
        std::ofstream out(cfg_path);
        out << grid.dump(2);
    }
    const fs::path out_dir = tmp.path / "out";
    CHECK(run_cli({"grid", "--config", cfg_path.string(), "--out", out_dir.string()}) == 0);

    nlohmann::json summary = nlohmann::json::parse(slurp(out_dir / "summary.json"));
    REQUIRE(summary["cells"].size() == 4);
    CHECK(summary["cells"][0]["sigma_noise"] == 0.0);
    CHECK(summary["cells"][0]["strategy"] == "naive");
    CHECK(summary["cells"][1]["strategy"] == "smart");
    CHECK(summary["cells"][2]["sigma_noise"] == 0.3);
    CHECK(fs::exists(out_dir / "cells" / "sigma_0_naive" / "metrics.csv"));
    CHECK(fs::exists(out_dir / "cells" / "sigma_0.3_smart" / "global_weights.bin"));

    // Every summary number equals the matching final-epoch metrics.csv value.
    for (const auto& cell : summary["cells"]) {
        const std::string dir =
            "sigma_" + format_double(cell["sigma_noise"].get<double>()) + "_" +
            cell["strategy"].get<std::string>();
        std::istringstream csv(slurp(out_dir / "cells" / dir / "metrics.csv"));
        std::string line, last_global;
        std::getline(csv, line);  // version comment
        std::getline(csv, line);  // header
        while (std::getline(csv, line)) {
            if (line.find(",global,") != std::string::npos) last_global = line;
        }
        REQUIRE_FALSE(last_global.empty());
        std::vector<std::string> fields;
        std::stringstream fs_(last_global);
        std::string field;
        while (std::getline(fs_, field, ',')) fields.push_back(field);
        const double csv_loss = std::stod(fields[7]);
        const double csv_acc = std::stod(fields[8]);
        if (cell["loss"].is_number()) {
            CHECK(cell["loss"].get<double>() == csv_loss);
        } else {
            CHECK(std::isnan(csv_loss));
        }
        CHECK(cell["accuracy_percent"].get<double>() == csv_acc);
    }
}
