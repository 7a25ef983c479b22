#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "splitfed/checkpoint.hpp"
#include "splitfed/config.hpp"
#include "splitfed/dataset_io.hpp"
#include "splitfed/report.hpp"
#include "splitfed/selfcheck.hpp"

namespace splitfed {

namespace detail {

inline std::string resolve_out_dir(const std::string& cli_out, const std::string& config_out) {
    if (!cli_out.empty()) return cli_out;
    if (const char* env = std::getenv("SPLITFED_OUT"); env && *env) return env;
    return config_out;
}

inline void apply_seed_override(RunConfig& cfg, std::uint64_t seed) {
    cfg.seeds.model = rng::derive_seed(seed, {1});
    cfg.seeds.data = rng::derive_seed(seed, {2});
    cfg.seeds.channel = rng::derive_seed(seed, {3});
}

inline void write_run_outputs(const std::string& dir, const RunConfig& cfg,
                              const SimulationResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_metrics_csv((fs::path(dir) / "metrics.csv").string(), rows_from_result(result, cfg),
                      cfg.arch.num_classes);
    save_checkpoint(result.final_model, (fs::path(dir) / "global_weights").string());
}

inline std::string cell_dir_name(double sigma, Strategy strategy) {
    return "sigma_" + format_double(sigma) + "_" + strategy_name(strategy);
}

}  // namespace detail

/// Runs every cell of the grid (sigma outer, strategy inner). Cells are
/// independent; with more than one hardware thread they run concurrently,
/// and results are merged in the fixed grid order afterwards.
inline std::vector<std::pair<RunConfig, SimulationResult>> run_grid(const GridSpec& spec) {
    std::vector<RunConfig> cells;
    for (double sigma : spec.sigmas) {
        for (Strategy strategy : spec.strategies) {
            RunConfig cfg = spec.base;
            cfg.sigma_noise = sigma;
            cfg.strategy = strategy;
            cells.push_back(std::move(cfg));
        }
    }
    std::vector<std::pair<RunConfig, SimulationResult>> results(cells.size());
    const unsigned workers =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                           static_cast<unsigned>(cells.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            results[i] = {cells[i], run_simulation(cells[i])};
        }
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
                results[i] = {cells[i], run_simulation(cells[i])};
            }
        });
    }
    for (auto& t : pool) t.join();
    return results;
}

/// CLI entry point. Subcommands: `simulate` (single run), `grid` (sigma x
/// strategy sweep), `check` (built-in oracle/property suite). Exit code 0
/// on success - a diverged run is a result, not an error.
inline int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"SplitFed-over-noisy-channels training simulator"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    std::uint64_t seed = 0;
    bool dump_dataset = false;

    CLI::App* sim = app.add_subcommand("simulate", "run one configuration");
    sim->add_option("--config", config_path, "run config (JSON)")->required();
    CLI::Option* sim_seed = sim->add_option("--seed", seed, "override all seeds from one value");
    sim->add_option("--out", out_override, "output directory (overrides config and SPLITFED_OUT)");
    sim->add_flag("--dump-dataset", dump_dataset, "also dump the generated dataset");

    CLI::App* grid = app.add_subcommand("grid", "run a sigma x strategy sweep");
    grid->add_option("--config", config_path, "grid config (JSON)")->required();
    CLI::Option* grid_seed = grid->add_option("--seed", seed, "override all seeds from one value");
    grid->add_option("--out", out_override, "output directory (overrides config and SPLITFED_OUT)");

    CLI::App* check = app.add_subcommand("check", "run the built-in self checks");

    std::vector<const char*> argv;
    argv.push_back("splitfed");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    namespace fs = std::filesystem;
    try {
        if (sim->parsed()) {
            RunConfig cfg = load_run_config(config_path);
            if (sim_seed->count() > 0) detail::apply_seed_override(cfg, seed);
            const std::string out_dir = detail::resolve_out_dir(out_override, cfg.output_dir);

            Simulation simulation(cfg);
            std::vector<std::pair<std::string, const std::vector<Sample>*>> dump_groups;
            SimulationResult result = simulation.run();

            detail::write_run_outputs(out_dir, cfg, result);
            const std::vector<CellSummary> cells = {summarize(result, cfg)};
            std::ofstream sout(fs::path(out_dir) / "summary.json", std::ios::trunc);
            sout << summary_to_json(cells).dump(2) << '\n';
            if (dump_dataset) {
                int total = 0;
                for (int m : cfg.client_samples) total += m;
                const std::vector<Sample> pool =
                    generate_dataset(cfg.seeds.data, total, cfg.arch.input_size);
                DataPartition part = partition(pool, cfg.client_samples, cfg.seeds.data);
                std::vector<std::pair<std::string, const std::vector<Sample>*>> groups;
                for (int i = 0; i < cfg.num_clients; ++i) {
                    groups.emplace_back("client_" + std::to_string(i + 1), &part.clients[i]);
                }
                groups.emplace_back("test", &simulation.test_set());
                write_dataset_dump((fs::path(out_dir) / "dataset").string(), groups);
            }
            std::cout << render_summary_table(cells);
            return 0;
        }

        if (grid->parsed()) {
            GridSpec spec = load_grid_spec(config_path);
            if (grid_seed->count() > 0) detail::apply_seed_override(spec.base, seed);
            const std::string out_dir = detail::resolve_out_dir(out_override, spec.base.output_dir);

            auto results = run_grid(spec);
            std::vector<CellSummary> cells;
            std::vector<MetricsRow> all_rows;
            for (const auto& [cfg, result] : results) {
                const std::string cell_dir =
                    (fs::path(out_dir) / "cells" / detail::cell_dir_name(cfg.sigma_noise, cfg.strategy))
                        .string();
                detail::write_run_outputs(cell_dir, cfg, result);
                for (auto& row : rows_from_result(result, cfg)) all_rows.push_back(std::move(row));
                cells.push_back(summarize(result, cfg));
            }
            fs::create_directories(out_dir);
            write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), all_rows,
                              spec.base.arch.num_classes);
            std::ofstream sout(fs::path(out_dir) / "summary.json", std::ios::trunc);
            sout << summary_to_json(cells).dump(2) << '\n';
            std::cout << render_summary_table(cells);
            return 0;
        }

        if (check->parsed()) {
            return run_self_checks(std::cout) ? 0 : 1;
        }
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace splitfed
