// Acceptance suite: one test case per acceptance criterion, each printing
// a single [PASS]/[FAIL] line. The sigma x strategy sweep backing the
// trend criteria runs once and is shared.

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitfed/cli.hpp"
#include "splitfed/splitfed.hpp"
#include "support/gradcheck.hpp"

using namespace splitfed;
namespace fs = std::filesystem;

namespace {

void announce(int criterion, const char* name, bool ok) {
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, name);
    std::fflush(stdout);
    CHECK_MESSAGE(ok, "criterion ", criterion, " (", name, ")");
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// ---------------------------------------------------------------------------
// Shared full sweep (the default sigma x strategy grid).
// ---------------------------------------------------------------------------
struct SweepData {
    std::vector<std::pair<RunConfig, SimulationResult>> cells;
    double runtime_seconds = 0.0;
};

const SweepData& full_sweep() {
    static SweepData data = [] {
        SweepData d;
        const double t0 = now_seconds();
        GridSpec spec;  // default seven sigmas x three strategies, desk base
        d.cells = run_grid(spec);
        d.runtime_seconds = now_seconds() - t0;
        std::printf("[info] full sweep: %zu cells in %.1f s\n", d.cells.size(),
                    d.runtime_seconds);
        std::fflush(stdout);
        return d;
    }();
    return data;
}

const SimulationResult* find_cell(const SweepData& sweep, double sigma, Strategy strategy) {
    for (const auto& [cfg, result] : sweep.cells) {
        if (cfg.sigma_noise == sigma && cfg.strategy == strategy) return &result;
    }
    return nullptr;
}

double final_accuracy(const SimulationResult& r) {
    return r.global_rows.back().accuracy_percent;
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Aggregation oracle equivalence.
// ---------------------------------------------------------------------------
TEST_CASE("criterion 1: aggregation oracle equivalence") {
    const double t0 = now_seconds();
    rng::Xoshiro256pp gen(8101);
    bool ok = true;
    for (int inst = 0; inst < 100; ++inst) {
        const int n = 1 + static_cast<int>(gen.below(8));
        const int width = 4 + static_cast<int>(gen.below(40));
        std::vector<SplitModelWeights> snaps(n);
        std::vector<int> m(n);
        std::vector<double> r_raw(n), r(n);
        double r_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            snaps[i].front_end = {{"fe.w", {width}, std::vector<double>(width), true}};
            snaps[i].server = {{"s.w", {width, 2}, std::vector<double>(2 * width), true}};
            snaps[i].back_end = {{"be.w", {3}, std::vector<double>(3), true}};
            for (auto* set : {&snaps[i].front_end, &snaps[i].server, &snaps[i].back_end}) {
                for (auto& arr : *set) {
                    for (double& v : arr.values) v = gen.uniform(-2.0, 2.0);
                }
            }
            m[i] = static_cast<int>(1 + gen.below(250));
            r_raw[i] = gen.uniform(0.01, 1.0);
            r_sum += r_raw[i];
        }
        double acc = 0.0;
        for (int i = 0; i < n - 1; ++i) {
            r[i] = r_raw[i] / r_sum;
            acc += r[i];
        }
        r[n - 1] = 1.0 - acc;

        std::vector<const SplitModelWeights*> ptrs;
        for (const auto& s : snaps) ptrs.push_back(&s);
        const SplitModelWeights got_naive = naive_average(ptrs);
        const SplitModelWeights got_fed = federated_average(ptrs, m);
        const SplitModelWeights got_weighted = weighted_average(ptrs, r);

        double total_m = 0.0;
        for (int c : m) total_m += c;
        auto check_section = [&](ParamSet SplitModelWeights::* section) {
            const ParamSet& base = snaps[0].*section;
            for (std::size_t a = 0; a < base.size(); ++a) {
                for (std::size_t k = 0; k < base[a].values.size(); ++k) {
                    long double mean = 0.0L, fed = 0.0L, wavg = 0.0L;
                    for (int i = 0; i < n; ++i) {
                        const double v = (snaps[i].*section)[a].values[k];
                        mean += v;
                        fed += static_cast<long double>(m[i]) * v;
                        wavg += static_cast<long double>(r[i]) * v;
                    }
                    mean /= n;
                    fed /= static_cast<long double>(total_m);
                    ok = ok &&
                         std::abs((got_naive.*section)[a].values[k] -
                                  static_cast<double>(mean)) <= 1e-15;
                    ok = ok &&
                         std::abs((got_fed.*section)[a].values[k] - static_cast<double>(fed)) <=
                             1e-15;
                    ok = ok && std::abs((got_weighted.*section)[a].values[k] -
                                        static_cast<double>(wavg)) <= 1e-15;
                }
            }
        };
        check_section(&SplitModelWeights::front_end);
        check_section(&SplitModelWeights::server);
        check_section(&SplitModelWeights::back_end);
    }
    const double dt = now_seconds() - t0;
    ok = ok && dt < 60.0;
    announce(1, "aggregation oracle equivalence (100 random snapshot sets)", ok);
}

// ---------------------------------------------------------------------------
// 2. Smart-weights formula suite.
// ---------------------------------------------------------------------------
TEST_CASE("criterion 2: smart-weights formula suite") {
    bool ok = true;

    // (a) Equal indicators reduce to the data shares exactly (1e-12).
    {
        const std::vector<int> m = {210, 120, 85, 180, 120};
        auto w = smart_weights({0.42, 0.42, 0.42, 0.42, 0.42}, m, 10.0);
        for (std::size_t i = 0; i < m.size(); ++i) {
            ok = ok && std::abs(w.r[i] - m[i] / 715.0) <= 1e-12;
        }
    }

    // (b) Two-client case against a high-precision long-double reference.
    {
        const long double e8 = std::exp(8.0L);
        auto w = smart_weights({0.1, 0.9}, {1, 1}, 10.0);
        ok = ok && std::abs(w.r[0] - static_cast<double>(e8 / (e8 + 1.0L))) <= 1e-9;
        ok = ok && std::abs(w.r[1] - static_cast<double>(1.0L / (e8 + 1.0L))) <= 1e-9;
    }

    // (c) Simplex, monotonicity, shift invariance over 100 random instances.
    rng::Xoshiro256pp gen(8202);
    for (int inst = 0; inst < 100 && ok; ++inst) {
        const int n = 2 + static_cast<int>(gen.below(7));
        std::vector<double> b(n);
        std::vector<int> m(n);
        for (int i = 0; i < n; ++i) {
            b[i] = gen.uniform(0.0, 1.5);
            m[i] = static_cast<int>(1 + gen.below(300));
        }
        const double alpha = gen.uniform(1.0, 20.0);
        auto w = smart_weights(b, m, alpha);
        double sum = 0.0;
        for (double v : w.r) {
            ok = ok && v >= 0.0;
            sum += v;
        }
        ok = ok && std::abs(sum - 1.0) <= 1e-9;

        const int k = static_cast<int>(gen.below(n));
        std::vector<double> worse = b;
        worse[k] += gen.uniform(0.05, 0.5);
        ok = ok && smart_weights(worse, m, alpha).r[k] < w.r[k];

        std::vector<double> shifted = b;
        for (double& v : shifted) v += 0.73;
        auto ws = smart_weights(shifted, m, alpha);
        for (int i = 0; i < n; ++i) ok = ok && std::abs(ws.r[i] - w.r[i]) <= 1e-12;
    }
    announce(2, "smart-weights formula suite", ok);
}

// ---------------------------------------------------------------------------
// 5. Channel statistics. (Cheap criteria run before the heavy ones.)
// ---------------------------------------------------------------------------
TEST_CASE("criterion 5: channel statistics") {
    bool ok = true;
    const double sigma = 0.1;
    const std::size_t n = 1000000;
    ChannelState ch(2024, 3, ChannelConfig{sigma, 1});
    std::vector<double> draws(n, 0.0);
    ch.transmit(draws, Direction::uplink, 1);
    double mean = 0.0;
    for (double v : draws) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : draws) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    ok = ok && std::abs(mean) <= 4.0 * sigma / std::sqrt(static_cast<double>(n));
    ok = ok && std::abs(std::sqrt(var) - sigma) / sigma <= 0.005;

    ChannelState clean(2024, 1, ChannelConfig{0.0, 1});
    std::vector<double> payload = {1.0, -0.25, 1e-12, 3e300};
    const std::vector<double> orig = payload;
    clean.transmit(payload, Direction::uplink, 1);
    clean.transmit(payload, Direction::downlink, 7);
    ok = ok && payload == orig;
    announce(5, "channel statistics (1e6 AWGN draws, sigma=0 identity)", ok);
}

// ---------------------------------------------------------------------------
// 8. Determinism.
// ---------------------------------------------------------------------------
TEST_CASE("criterion 8: determinism of emitted artifacts") {
    const fs::path tmp = fs::temp_directory_path() / "splitfed_acceptance_det";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::json j;
    j["data"] = {{"client_samples", {8, 6, 5}}, {"test_samples", 4}};
    j["protocol"] = {{"local_epochs", 2}, {"global_epochs", 2}, {"batch_size", 4}};
    j["channel"] = {{"sigma_noise", 0.01},
                    {"clients",
                     {{{"client_id", 2}, {"onset_global_epoch", 1}},
                      {{"client_id", 3}, {"onset_global_epoch", 2}}}}};
    j["strategy"] = {{"name", "smart"}, {"alpha", 10.0}};
    const fs::path cfg_path = tmp / "run.json";
    {
        std::ofstream out(cfg_path);
        out << j.dump(2);
    }
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    bool ok = run_cli({"simulate", "--config", cfg_path.string(), "--seed", "7", "--out",
                       (tmp / "a").string()}) == 0;
    ok = ok && run_cli({"simulate", "--config", cfg_path.string(), "--seed", "7", "--out",
                        (tmp / "b").string()}) == 0;
    ok = ok && slurp(tmp / "a" / "metrics.csv") == slurp(tmp / "b" / "metrics.csv");
    ok = ok && !slurp(tmp / "a" / "metrics.csv").empty();
    ok = ok && slurp(tmp / "a" / "summary.json") == slurp(tmp / "b" / "summary.json");
    ok = ok && slurp(tmp / "a" / "global_weights.bin") == slurp(tmp / "b" / "global_weights.bin");
    fs::remove_all(tmp);
    announce(8, "determinism (byte-identical metrics.csv and summary.json)", ok);
}

// ---------------------------------------------------------------------------
// 9. Divergence reporting.
// ---------------------------------------------------------------------------
TEST_CASE("criterion 9: divergence reporting") {
    RunConfig cfg;
    cfg.num_clients = 3;
    cfg.client_samples = {8, 6, 5};
    cfg.test_samples = 6;
    cfg.local_epochs = 2;
    cfg.global_epochs = 4;
    cfg.strategy = Strategy::naive;
    cfg.sigma_noise = 1e308;  // extreme noise: guaranteed non-finite payloads
    cfg.noisy_clients = {{3, -1.0, 2}};

    Simulation sim(cfg);
    std::size_t bg = 0, total = 0;
    for (const auto& s : sim.test_set()) {
        for (auto m : s.mask) bg += m == kBackground;
        total += s.mask.size();
    }
    const double bg_percent = 100.0 * static_cast<double>(bg) / static_cast<double>(total);

    SimulationResult result = sim.run();
    const CellSummary cell = summarize(result, cfg);
    const nlohmann::json summary = summary_to_json({cell});

    bool ok = result.diverged;
    ok = ok && summary["cells"][0]["loss"].is_string() &&
         summary["cells"][0]["loss"] == "nan";
    ok = ok && std::abs(cell.accuracy_percent - bg_percent) < 1e-12;
    for (int c = 1; c < 5; ++c) ok = ok && cell.iou[c] == 0.0;
    ok = ok && cell.iou[0] > 0.0;  // BG IOU equals the background fraction
    announce(9, "divergence reporting (nan loss, background-collapse accuracy)", ok);
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness.
// ---------------------------------------------------------------------------
TEST_CASE("criterion 3: gradient correctness") {
    const double t0 = now_seconds();
    bool ok = true;
    rng::Xoshiro256pp gen(8303);

    // Per-op finite-difference checks, 20 random instances each.
    auto cot = [&](Shape shape) {
        Tensor c = Tensor::zeros(std::move(shape));
        for (double& v : c.data()) v = gen.uniform(-1.0, 1.0);
        return c;
    };
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({2, 2, 4, 4}, gen);
        Tensor k = testsupport::random_tensor({3, 2, 3, 3}, gen);
        Tensor b = testsupport::random_tensor({3}, gen);
        Tensor c = cot({2, 3, 4, 4});
        ok = ok && testsupport::max_grad_error(
                       [&] { return sum(mul(conv2d(x, k, b), c)); }, {x, k, b}) <= 1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({3, 9}, gen);
        Tensor c = cot({3, 9});
        ok = ok &&
             testsupport::max_grad_error([&] { return sum(mul(relu(x), c)); }, {x}) <= 1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({2, 3, 4, 4}, gen, -2.0, 2.0);
        Tensor g = testsupport::random_tensor({3}, gen, 0.5, 1.5);
        Tensor be = testsupport::random_tensor({3}, gen, -0.5, 0.5);
        Tensor c = cot({2, 3, 4, 4});
        ok = ok && testsupport::max_grad_error(
                       [&] { return sum(mul(batchnorm2d_train(x, g, be), c)); }, {x, g, be}) <=
                       1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({2, 2, 4, 4}, gen);
        Tensor c = cot({2, 2, 2, 2});
        ok = ok && testsupport::max_grad_error([&] { return sum(mul(maxpool2d(x), c)); }, {x}) <=
                       1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({2, 2, 3, 3}, gen);
        Tensor c = cot({2, 2, 6, 6});
        ok = ok && testsupport::max_grad_error(
                       [&] { return sum(mul(upsample_nearest2x(x), c)); }, {x}) <= 1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor a = testsupport::random_tensor({1, 2, 3, 3}, gen);
        Tensor b2 = testsupport::random_tensor({1, 3, 3, 3}, gen);
        Tensor c = cot({1, 5, 3, 3});
        ok = ok && testsupport::max_grad_error(
                       [&] { return sum(mul(concat_channels(a, b2), c)); }, {a, b2}) <= 1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor x = testsupport::random_tensor({1, 4, 3, 3}, gen, -2.0, 2.0);
        Tensor c = cot({1, 4, 3, 3});
        ok = ok && testsupport::max_grad_error(
                       [&] { return sum(mul(softmax_channels(x), c)); }, {x}) <= 1e-4;
    }
    for (int inst = 0; inst < 20 && ok; ++inst) {
        Tensor probs = testsupport::random_tensor({1, 3, 4, 4}, gen, 0.05, 0.95);
        Tensor target = Tensor::zeros({1, 3, 4, 4});
        for (int i = 0; i < 16; ++i) target.data()[gen.below(3) * 16 + i] = 1.0;
        ok = ok &&
             testsupport::max_grad_error([&] { return dice_loss(probs, target); }, {probs}) <=
                 1e-4;
    }
    REQUIRE(ok);  // per-op stage must hold before the full-model stage

    // Full-model gradient check: desk U-Net, one sample, every trainable
    // parameter coordinate against central differences.
    SplitUNet net((ArchConfig()));
    net.init(424242);
    const std::vector<Sample> data = generate_dataset(31337, 1, 32);
    std::vector<int> idx = {0};
    auto [x, target] = make_batch(data, idx, 0, 1, 5);

    auto forward = [&] {
        Tensor f = net.forward_front(x, BNMode::train);
        Tensor s = net.forward_server(f, BNMode::train);
        return dice_loss(softmax_channels(net.forward_back_logits(s)), target);
    };
    Tensor loss = forward();
    loss.backward();

    std::vector<NamedParam> params = net.client_params();
    for (auto& p : net.server_params()) params.push_back(p);
    double worst = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic = p.tensor.grad();
        for (std::size_t i = 0; i < p.tensor.data().size(); ++i) {
            const double orig = p.tensor.data()[i];
            double fp, fm;
            {
                NoGradGuard ng;
                p.tensor.data()[i] = orig + 1e-5;
                fp = forward().item();
                p.tensor.data()[i] = orig - 1e-5;
                fm = forward().item();
                p.tensor.data()[i] = orig;
            }
            worst = std::max(worst, testsupport::rel_err(analytic[i], (fp - fm) / 2e-5));
        }
    }
    ok = ok && worst <= 1e-4;
    const double dt = now_seconds() - t0;
    std::printf("[info] criterion 3: full-model max rel err %.3g over %zu params, %.1f s\n",
                worst, params.size(), dt);
    ok = ok && dt < 300.0;
    announce(3, "gradient correctness (per-op and full-model finite differences)", ok);
}

// ---------------------------------------------------------------------------
// 4. Split/monolithic equivalence.
// ---------------------------------------------------------------------------
namespace {

// Channel-free unsplit reference: one connected graph per batch, a single
// optimizer, direct evaluation - no transmit calls, no leaf splicing.
struct ReferenceOutcome {
    std::vector<double> best_val, best_train, indicator;
    SplitModelWeights global;
};

ReferenceOutcome reference_global_epoch(const RunConfig& cfg) {
    int total = 0;
    for (int m : cfg.client_samples) total += m;
    const std::vector<Sample> pool = generate_dataset(cfg.seeds.data, total, cfg.arch.input_size);
    const DataPartition part = partition(pool, cfg.client_samples, cfg.seeds.data);

    const SplitModelWeights initial = build_split_unet(cfg.arch, cfg.seeds.model);
    ReferenceOutcome out;
    std::vector<SplitModelWeights> snapshots;
    std::vector<double> indicators;

    for (int ci = 0; ci < cfg.num_clients; ++ci) {
        const int client_id = ci + 1;
        auto [train_n, val_n] = train_val_counts(cfg.client_samples[ci]);
        (void)val_n;
        const std::vector<Sample> train_set(part.clients[ci].begin(),
                                            part.clients[ci].begin() + train_n);
        const std::vector<Sample> val_set(part.clients[ci].begin() + train_n,
                                          part.clients[ci].end());

        SplitUNet net(cfg.arch);
        net.load(initial);
        std::vector<NamedParam> params = net.client_params();
        for (auto& p : net.server_params()) params.push_back(p);
        Adam opt(params, cfg.learning_rate);

        auto eval_losses = [&](const std::vector<Sample>& samples) {
            NoGradGuard ng;
            std::vector<double> losses;
            std::vector<int> idx(samples.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
            for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(samples.size(), begin + cfg.batch_size);
                auto [x, target] = make_batch(samples, idx, begin, end, cfg.arch.num_classes);
                Tensor f = net.forward_front(x, BNMode::eval);
                Tensor s = net.forward_server(f, BNMode::eval);
                Tensor probs = softmax_channels(net.forward_back_logits(s));
                const auto& ps = probs.shape();
                const std::size_t len = static_cast<std::size_t>(ps[1]) * ps[2] * ps[3];
                for (std::size_t n = 0; n < end - begin; ++n) {
                    std::vector<double> pv(probs.data().begin() + n * len,
                                           probs.data().begin() + (n + 1) * len);
                    std::vector<double> tv(target.data().begin() + n * len,
                                           target.data().begin() + (n + 1) * len);
                    losses.push_back(dice_loss(Tensor::from_data({1, ps[1], ps[2], ps[3]}, pv),
                                               Tensor::from_data({1, ps[1], ps[2], ps[3]}, tv))
                                         .item());
                }
            }
            return losses;
        };

        struct Best {
            SplitModelWeights weights;
            double val_loss, train_loss;
        };
        std::optional<Best> best;
        for (int le = 1; le <= cfg.local_epochs; ++le) {
            rng::Xoshiro256pp stream = epoch_stream(cfg.seeds.data, client_id, 1, le);
            std::vector<int> order(train_set.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[stream.below(i)]);
            }
            double loss_sum = 0.0;
            int batches = 0;
            for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
                std::vector<Sample> batch;
                for (std::size_t i = begin; i < end; ++i) {
                    const Sample& s = train_set[order[i]];
                    batch.push_back(cfg.augment_training ? augment(s, stream) : s);
                }
                auto [x, target] = make_batch(batch, cfg.arch.num_classes);
                Tensor f = net.forward_front(x, BNMode::train);
                Tensor s = net.forward_server(f, BNMode::train);
                Tensor loss = dice_loss(softmax_channels(net.forward_back_logits(s)), target);
                loss.backward();
                opt.step();
                opt.zero_grad();
                loss_sum += loss.item();
                ++batches;
            }
            const std::vector<double> val_losses = eval_losses(val_set);
            double val = 0.0;
            for (double v : val_losses) val += v;
            val /= static_cast<double>(val_losses.size());
            if (std::isfinite(val) && (!best || val < best->val_loss)) {
                best = Best{net.snapshot(), val, loss_sum / batches};
            }
        }
        net.load(best->weights);
        const std::vector<double> sample_losses = eval_losses(train_set);
        out.best_val.push_back(best->val_loss);
        out.best_train.push_back(best->train_loss);
        indicators.push_back(unreliability_indicator(sample_losses));
        snapshots.push_back(best->weights);
    }

    std::vector<const SplitModelWeights*> ptrs;
    for (const auto& s : snapshots) ptrs.push_back(&s);
    switch (cfg.strategy) {
        case Strategy::naive: out.global = naive_average(ptrs); break;
        case Strategy::fedavg: out.global = federated_average(ptrs, cfg.client_samples); break;
        case Strategy::smart: {
            auto w = smart_weights(indicators, cfg.client_samples, cfg.alpha);
            out.global = weighted_average(ptrs, w.r);
            break;
        }
    }
    out.indicator = std::move(indicators);
    return out;
}

}  // namespace

TEST_CASE("criterion 4: split/monolithic equivalence at sigma=0") {
    RunConfig cfg;
    cfg.num_clients = 3;
    cfg.client_samples = {8, 6, 5};
    cfg.test_samples = 4;
    cfg.local_epochs = 3;
    cfg.global_epochs = 1;
    cfg.strategy = Strategy::smart;
    cfg.sigma_noise = 0.0;
    cfg.noisy_clients = {};

    Simulation sim(cfg);
    auto [rows, global_row] = sim.run_global_epoch(1);
    (void)global_row;
    const SplitModelWeights split_global = sim.global_model();

    const ReferenceOutcome ref = reference_global_epoch(cfg);

    bool ok = true;
    for (int i = 0; i < cfg.num_clients; ++i) {
        ok = ok && rows[i].val_loss == ref.best_val[i];
        ok = ok && rows[i].train_loss == ref.best_train[i];
    }
    auto same = [&](const ParamSet& a, const ParamSet& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].values != b[i].values) return false;
        }
        return true;
    };
    ok = ok && same(split_global.front_end, ref.global.front_end);
    ok = ok && same(split_global.server, ref.global.server);
    ok = ok && same(split_global.back_end, ref.global.back_end);
    announce(4, "split/monolithic equivalence (bit-identical losses and weights)", ok);
}

// ---------------------------------------------------------------------------
// 6. Noise-robustness trend across the sweep (qualitative).
// ---------------------------------------------------------------------------
TEST_CASE("criterion 6: noise-robustness trend across the sweep") {
    const SweepData& sweep = full_sweep();
    bool ok = true;

    const double acc0_naive = final_accuracy(*find_cell(sweep, 0.0, Strategy::naive));
    const double acc0_fed = final_accuracy(*find_cell(sweep, 0.0, Strategy::fedavg));
    const double acc0_smart = final_accuracy(*find_cell(sweep, 0.0, Strategy::smart));
    const double spread = std::max({acc0_naive, acc0_fed, acc0_smart}) -
                          std::min({acc0_naive, acc0_fed, acc0_smart});
    std::printf("[info] criterion 6: sigma=0 accuracy naive %.2f / fedavg %.2f / smart %.2f\n",
                acc0_naive, acc0_fed, acc0_smart);
    ok = ok && spread <= 3.0;

    GridSpec defaults;
    double chosen_sigma = -1.0;
    for (auto it = defaults.sigmas.rbegin(); it != defaults.sigmas.rend(); ++it) {
        const double sigma = *it;
        if (sigma == 0.0) continue;
        const SimulationResult* naive = find_cell(sweep, sigma, Strategy::naive);
        const SimulationResult* fed = find_cell(sweep, sigma, Strategy::fedavg);
        const SimulationResult* smart = find_cell(sweep, sigma, Strategy::smart);
        const bool naive_broken =
            naive->diverged || acc0_naive - final_accuracy(*naive) >= 15.0;
        const bool fed_broken = fed->diverged || acc0_fed - final_accuracy(*fed) >= 15.0;
        const bool smart_holds =
            !smart->diverged && std::abs(final_accuracy(*smart) - acc0_smart) <= 3.0;
        if (naive_broken && fed_broken && smart_holds) {
            chosen_sigma = sigma;
            break;
        }
    }
    std::printf("[info] criterion 6: sigma_high = %s\n",
                chosen_sigma >= 0 ? format_double(chosen_sigma).c_str() : "none");
    for (const auto& [cfg, result] : sweep.cells) {
        std::printf("[info]   sigma %-8s %-7s acc %6.2f %s\n",
                    format_double(cfg.sigma_noise).c_str(), strategy_name(cfg.strategy),
                    final_accuracy(result), result.diverged ? "(diverged)" : "");
    }
    ok = ok && chosen_sigma > 0.0;
    announce(6, "noise-robustness trend: parity at sigma=0, smart survives sigma_high", ok);
}

// ---------------------------------------------------------------------------
// 7. Weight-trajectory response to noise onset (qualitative).
// ---------------------------------------------------------------------------
TEST_CASE("criterion 7: smart weight trajectories at sigma_high") {
    const SweepData& sweep = full_sweep();
    const RunConfig base;  // desk defaults: onsets 5/4/3 for clients 3/4/5

    // Re-derive the sigma_high choice of criterion 6, then check the
    // trajectory claims on that smart run; accept the largest qualifying
    // sigma for which both hold.
    GridSpec defaults;
    const double acc0_naive = final_accuracy(*find_cell(sweep, 0.0, Strategy::naive));
    const double acc0_fed = final_accuracy(*find_cell(sweep, 0.0, Strategy::fedavg));
    const double acc0_smart = final_accuracy(*find_cell(sweep, 0.0, Strategy::smart));

    bool ok = false;
    double chosen_sigma = -1.0;
    for (auto it = defaults.sigmas.rbegin(); it != defaults.sigmas.rend(); ++it) {
        const double sigma = *it;
        if (sigma == 0.0) continue;
        const SimulationResult* naive = find_cell(sweep, sigma, Strategy::naive);
        const SimulationResult* fed = find_cell(sweep, sigma, Strategy::fedavg);
        const SimulationResult* smart = find_cell(sweep, sigma, Strategy::smart);
        const bool qualifies =
            (naive->diverged || acc0_naive - final_accuracy(*naive) >= 15.0) &&
            (fed->diverged || acc0_fed - final_accuracy(*fed) >= 15.0) &&
            !smart->diverged && std::abs(final_accuracy(*smart) - acc0_smart) <= 3.0;
        if (!qualifies) continue;

        // Onset response: (a) every noisy client's r drops below 0.05
        // within 2 epochs of its onset; (b) the clean clients' weights
        // reach a sum >= 0.9 within 2 epochs of the last onset. At large
        // sigma the transmitted b_i themselves are noisy, so a later
        // lucky draw can briefly re-admit a noisy client; the claim under
        // test is the response to onset, not permanent stationarity.
        bool traj = true;
        const int n = base.num_clients;
        auto r_of = [&](int epoch, int client_id) {
            return smart->client_rows[(epoch - 1) * n + (client_id - 1)].r_weight;
        };
        int last_onset = 0;
        for (const auto& e : base.noisy_clients) {
            last_onset = std::max(last_onset, e.onset_global_epoch);
            bool dropped = false;
            for (int g = e.onset_global_epoch;
                 g <= std::min(base.global_epochs, e.onset_global_epoch + 2); ++g) {
                dropped = dropped || r_of(g, e.client_id) < 0.05;
            }
            traj = traj && dropped;
        }
        bool clean_dominant = false;
        for (int g = last_onset; g <= std::min(base.global_epochs, last_onset + 2); ++g) {
            clean_dominant = clean_dominant || r_of(g, 1) + r_of(g, 2) >= 0.9;
        }
        traj = traj && clean_dominant;
        if (traj) {
            ok = true;
            chosen_sigma = sigma;
            break;
        }
    }
    std::printf("[info] criterion 7: sigma_high = %s\n",
                chosen_sigma >= 0 ? format_double(chosen_sigma).c_str() : "none");
    if (ok) {
        const SimulationResult* smart = find_cell(sweep, chosen_sigma, Strategy::smart);
        for (int g = 1; g <= base.global_epochs; ++g) {
            std::printf("[info]   epoch %2d r = [", g);
            for (int c = 1; c <= base.num_clients; ++c) {
                std::printf("%s%.4f", c > 1 ? ", " : "",
                            smart->client_rows[(g - 1) * base.num_clients + (c - 1)].r_weight);
            }
            std::printf("]\n");
        }
    }
    announce(7, "weight trajectories (noisy clients suppressed after onset)", ok);
}
