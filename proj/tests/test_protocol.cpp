#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "splitfed/protocol.hpp"

using namespace splitfed;

namespace {

RunConfig tiny_run() {
    RunConfig cfg;
    cfg.arch.input_size = 16;
    cfg.arch.num_classes = 5;
    cfg.arch.down_filters = {4};
    cfg.arch.bottleneck_filters = 8;
    cfg.arch.up_filters = {4};
    cfg.num_clients = 2;
    cfg.client_samples = {6, 6};
    cfg.test_samples = 4;
    cfg.local_epochs = 2;
    cfg.global_epochs = 2;
    cfg.batch_size = 2;
    cfg.noisy_clients = {};
    cfg.strategy = Strategy::naive;
    return cfg;
}

bool same_set(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].values != b[i].values) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("best_epoch: earliest minimum wins, non-finite epochs are skipped") {
    CHECK(best_epoch({0.5, 0.3, 0.3, 0.4}) == 2);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(best_epoch({nan, 0.7, 0.6}) == 3);
    CHECK(best_epoch({nan, nan}) == 0);
    CHECK(best_epoch({0.2}) == 1);
}

TEST_CASE("RunConfig validation names the offending field") {
    RunConfig cfg = tiny_run();
    cfg.client_samples = {6};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_run();
    cfg.noisy_clients = {{9, 0.1, 1}};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_run();
    cfg.sigma_noise = -0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("client report: per-sample loss list length equals the train set size") {
    RunConfig cfg = tiny_run();
    Simulation sim(cfg);
    ClientReport report = sim.run_local_training(0, 1);
    auto [train_n, val_n] = train_val_counts(cfg.client_samples[0]);
    (void)val_n;
    CHECK(static_cast<int>(report.per_sample_losses.size()) == train_n);
    CHECK(report.best_local_epoch >= 1);
    CHECK(report.best_local_epoch <= cfg.local_epochs);
    CHECK(std::isfinite(report.indicator_received));
    CHECK(report.indicator_received == report.indicator_raw);  // clean link
    CHECK_FALSE(report.diverged);
}

TEST_CASE("N=1: the global model equals the client's best snapshot for every strategy") {
    for (Strategy strategy : {Strategy::naive, Strategy::fedavg, Strategy::smart}) {
        RunConfig cfg = tiny_run();
        cfg.num_clients = 1;
        cfg.client_samples = {6};
        cfg.strategy = strategy;

        Simulation probe(cfg);
        ClientReport report = probe.run_local_training(0, 1);

        Simulation sim(cfg);
        sim.run_global_epoch(1);
        SplitModelWeights global = sim.global_model();
        CHECK(same_set(global.front_end, report.fe_weights));
        CHECK(same_set(global.back_end, report.be_weights));
        CHECK(same_set(global.server, report.server_weights));
    }
}

TEST_CASE("identical seeds give byte-identical metric histories") {
    RunConfig cfg = tiny_run();
    SimulationResult a = run_simulation(cfg);
    SimulationResult b = run_simulation(cfg);
    REQUIRE(a.client_rows.size() == b.client_rows.size());
    for (std::size_t i = 0; i < a.client_rows.size(); ++i) {
        CHECK(a.client_rows[i].train_loss == b.client_rows[i].train_loss);
        CHECK(a.client_rows[i].val_loss == b.client_rows[i].val_loss);
        CHECK(a.client_rows[i].r_weight == b.client_rows[i].r_weight);
    }
    for (std::size_t i = 0; i < a.global_rows.size(); ++i) {
        CHECK(a.global_rows[i].test_loss == b.global_rows[i].test_loss);
        CHECK(a.global_rows[i].accuracy_percent == b.global_rows[i].accuracy_percent);
        CHECK(a.global_rows[i].iou == b.global_rows[i].iou);
    }
    CHECK(same_set(a.final_model.server, b.final_model.server));
}

TEST_CASE("at sigma=0 naive and fedavg with equal counts produce identical histories") {
    RunConfig naive_cfg = tiny_run();
    naive_cfg.strategy = Strategy::naive;
    RunConfig fed_cfg = naive_cfg;
    fed_cfg.strategy = Strategy::fedavg;

    SimulationResult a = run_simulation(naive_cfg);
    SimulationResult b = run_simulation(fed_cfg);
    for (std::size_t i = 0; i < a.global_rows.size(); ++i) {
        CHECK(std::abs(a.global_rows[i].test_loss - b.global_rows[i].test_loss) < 1e-9);
        CHECK(std::abs(a.global_rows[i].accuracy_percent - b.global_rows[i].accuracy_percent) <
              1e-9);
    }
}

TEST_CASE("history length matches the configured epochs; rows cover every client") {
    RunConfig cfg = tiny_run();
    cfg.global_epochs = 3;
    SimulationResult r = run_simulation(cfg);
    CHECK(r.global_rows.size() == 3);
    CHECK(r.client_rows.size() == 3 * 2);
    for (std::size_t i = 0; i < r.global_rows.size(); ++i) {
        CHECK(r.global_rows[i].global_epoch == static_cast<int>(i) + 1);
    }
}

TEST_CASE("extreme sigma forces divergence: nan loss, background-collapse accuracy") {
    RunConfig cfg = tiny_run();
    cfg.num_clients = 3;
    cfg.client_samples = {6, 6, 6};
    cfg.global_epochs = 3;
    cfg.strategy = Strategy::naive;
    cfg.sigma_noise = 1e308;
    cfg.noisy_clients = {{3, -1.0, 1}};  // noisy from the first epoch

    SimulationResult r = run_simulation(cfg);
    CHECK(r.diverged);
    const GlobalEpochMetrics& last = r.global_rows.back();
    CHECK(!std::isfinite(last.test_loss));
    CHECK(last.diverged);

    // The collapsed model predicts only background, so accuracy equals the
    // test set's background pixel fraction and non-BG IOUs are zero.
    Simulation probe(cfg);
    std::size_t bg = 0, total = 0;
    for (const auto& s : probe.test_set()) {
        for (auto m : s.mask) bg += m == kBackground;
        total += s.mask.size();
    }
    const double bg_percent = 100.0 * static_cast<double>(bg) / static_cast<double>(total);
    CHECK(last.accuracy_percent == doctest::Approx(bg_percent).epsilon(1e-12));
    for (int c = 1; c < 5; ++c) CHECK(last.iou[c] == 0.0);

    // Client rows at the failed epochs carry NaN losses and the flag.
    bool saw_diverged_client = false;
    for (const auto& row : r.client_rows) {
        if (row.diverged) {
            saw_diverged_client = true;
            CHECK(!std::isfinite(row.train_loss));
            CHECK(!std::isfinite(row.val_loss));
        }
    }
    CHECK(saw_diverged_client);
}

TEST_CASE("smart aborts on a non-finite indicator and short-circuits the run") {
    RunConfig cfg = tiny_run();
    cfg.num_clients = 3;
    cfg.client_samples = {6, 6, 6};
    cfg.global_epochs = 3;
    cfg.strategy = Strategy::smart;
    cfg.sigma_noise = 1e308;
    cfg.noisy_clients = {{3, -1.0, 1}};

    SimulationResult r = run_simulation(cfg);
    CHECK(r.diverged);
    // All three epochs report: the first aborts, the rest short-circuit.
    CHECK(r.global_rows.size() == 3);
    for (const auto& row : r.global_rows) {
        CHECK(row.diverged);
        CHECK(!std::isfinite(row.test_loss));
    }
    // Short-circuited client rows stay NaN.
    for (std::size_t i = 3; i < r.client_rows.size(); ++i) {
        CHECK(!std::isfinite(r.client_rows[i].train_loss));
        CHECK(r.client_rows[i].diverged);
    }
}
