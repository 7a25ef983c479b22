#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "splitfed/adam.hpp"
#include "splitfed/aggregation.hpp"
#include "splitfed/channel.hpp"
#include "splitfed/data.hpp"
#include "splitfed/metrics.hpp"
#include "splitfed/model.hpp"
#include "splitfed/weights.hpp"

namespace splitfed {

enum class Strategy { naive, fedavg, smart };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::naive: return "naive";
        case Strategy::fedavg: return "fedavg";
        case Strategy::smart: return "smart";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& name) {
    if (name == "naive") return Strategy::naive;
    if (name == "fedavg") return Strategy::fedavg;
    if (name == "smart") return Strategy::smart;
    throw std::invalid_argument("unknown strategy '" + name + "' (naive|fedavg|smart)");
}

/// Noise schedule entry. sigma_noise < 0 means "use the run-wide sigma".
struct NoiseEntry {
    int client_id = 0;
    double sigma_noise = -1.0;
    int onset_global_epoch = 1;
};

struct SeedConfig {
    std::uint64_t model = 1;
    std::uint64_t data = 2;
    std::uint64_t channel = 3;
};

struct RunConfig {
    ArchConfig arch;
    int num_clients = 5;
    std::vector<int> client_samples = {42, 24, 17, 36, 24};
    int test_samples = 20;
    int local_epochs = 12;
    int global_epochs = 10;
    int batch_size = 4;
    double learning_rate = 1e-3;
    bool augment_training = true;
    bool server_carryover = false;  // experimental: carry server weights between clients
    Strategy strategy = Strategy::smart;
    double alpha = 10.0;
    double sigma_noise = 0.0;
    std::vector<NoiseEntry> noisy_clients = {{3, -1.0, 5}, {4, -1.0, 4}, {5, -1.0, 3}};
    SeedConfig seeds;
    std::string output_dir = "out";

    void validate() const {
        arch.validate();
        if (num_clients < 1) throw std::invalid_argument("RunConfig: num_clients must be >= 1");
        if (static_cast<int>(client_samples.size()) != num_clients) {
            throw std::invalid_argument("RunConfig: client_samples must list one count per client");
        }
        for (int m : client_samples) {
            if (m < 2) throw std::invalid_argument("RunConfig: every client needs >= 2 samples");
        }
        if (test_samples < 1) throw std::invalid_argument("RunConfig: test_samples must be >= 1");
        if (local_epochs < 1 || global_epochs < 1) {
            throw std::invalid_argument("RunConfig: epoch counts must be >= 1");
        }
        if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
        if (!(learning_rate > 0)) throw std::invalid_argument("RunConfig: learning_rate must be > 0");
        if (sigma_noise < 0) throw std::invalid_argument("RunConfig: sigma_noise must be >= 0");
        for (const auto& e : noisy_clients) {
            if (e.client_id < 1 || e.client_id > num_clients) {
                throw std::invalid_argument("RunConfig: noise entry for unknown client " +
                                            std::to_string(e.client_id));
            }
            if (e.onset_global_epoch < 1) {
                throw std::invalid_argument("RunConfig: onset_global_epoch must be >= 1");
            }
        }
    }

    ChannelConfig channel_for(int client_id) const {
        for (const auto& e : noisy_clients) {
            if (e.client_id == client_id) {
                const double sigma = e.sigma_noise >= 0 ? e.sigma_noise : sigma_noise;
                return ChannelConfig{sigma, e.onset_global_epoch};
            }
        }
        return ChannelConfig{0.0, std::numeric_limits<int>::max()};
    }
};

/// What a client delivers after its local epochs with the server.
struct ClientReport {
    int client_id = 0;
    ParamSet fe_weights;      // W^FE as received over the uplink
    ParamSet be_weights;      // W^BE as received over the uplink
    ParamSet server_weights;  // W^S_i, held server-side (never transmitted)
    std::vector<double> per_sample_losses;
    double indicator_raw = std::numeric_limits<double>::quiet_NaN();
    double indicator_received = std::numeric_limits<double>::quiet_NaN();
    int best_local_epoch = 0;  // 1-based; 0 when every epoch was non-finite
    double best_val_loss = std::numeric_limits<double>::quiet_NaN();
    double best_train_loss = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
};

struct ClientEpochMetrics {
    int global_epoch = 0;
    int client_id = 0;
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double r_weight = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
};

struct GlobalEpochMetrics {
    int global_epoch = 0;
    double test_loss = std::numeric_limits<double>::quiet_NaN();
    double accuracy_percent = 0.0;
    std::vector<double> iou;
    bool diverged = false;
};

struct SimulationResult {
    std::vector<ClientEpochMetrics> client_rows;
    std::vector<GlobalEpochMetrics> global_rows;
    SplitModelWeights final_model;
    bool diverged = false;
};

namespace detail {
inline constexpr std::uint64_t kEpochStreamTag = 0x45504F43ULL;  // "EPOC"
inline constexpr std::uint64_t kTestSetTag = 0x7E57ULL;
}  // namespace detail

/// Seeded stream driving batch shuffling and augmentation for one
/// (client, global epoch, local epoch) training pass.
inline rng::Xoshiro256pp epoch_stream(std::uint64_t data_seed, int client_id, int global_epoch,
                                      int local_epoch) {
    return rng::Xoshiro256pp(rng::derive_seed(
        data_seed, {detail::kEpochStreamTag, static_cast<std::uint64_t>(client_id),
                    static_cast<std::uint64_t>(global_epoch), static_cast<std::uint64_t>(local_epoch)}));
}

/// Best-local-epoch rule: earliest strict minimum over the finite
/// validation losses; 0 when every epoch is non-finite. 1-based.
inline int best_epoch(const std::vector<double>& val_losses) {
    int best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < val_losses.size(); ++i) {
        if (std::isfinite(val_losses[i]) && val_losses[i] < best_v) {
            best_v = val_losses[i];
            best = static_cast<int>(i) + 1;
        }
    }
    return best;
}

/// Per-sample Dice losses of a model over `samples`, evaluated in eval
/// mode with every feature hop routed through the channel, exactly like
/// training traffic. Samples whose forward pass turns non-finite get NaN.
inline std::vector<double> per_sample_losses(SplitUNet& model, const std::vector<Sample>& samples,
                                             ChannelState& channel, int global_epoch,
                                             int batch_size) {
    if (samples.empty()) throw std::invalid_argument("per_sample_losses: empty sample list");
    NoGradGuard ng;
    const int num_classes = model.config().num_classes;
    std::vector<double> losses;
    losses.reserve(samples.size());
    std::vector<int> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
        const std::size_t end = std::min(samples.size(), begin + batch_size);
        try {
            auto [x, target] = make_batch(samples, idx, begin, end, num_classes);
            Tensor f = model.forward_front(x, BNMode::eval);
            Tensor f_up = channel.transmit(f, direction_of(PayloadKind::features, Direction::uplink),
                                           global_epoch);
            Tensor s = model.forward_server(f_up, BNMode::eval);
            Tensor s_down = channel.transmit(
                s, direction_of(PayloadKind::features, Direction::downlink), global_epoch);
            Tensor probs = softmax_channels(model.forward_back_logits(s_down));

            const auto& ps = probs.shape();
            const std::size_t sample_len = static_cast<std::size_t>(ps[1]) * ps[2] * ps[3];
            const std::size_t target_len = sample_len;
            for (std::size_t n = 0; n < end - begin; ++n) {
                std::vector<double> pslice(probs.data().begin() + n * sample_len,
                                           probs.data().begin() + (n + 1) * sample_len);
                std::vector<double> tslice(target.data().begin() + n * target_len,
                                           target.data().begin() + (n + 1) * target_len);
                Shape one = {1, ps[1], ps[2], ps[3]};
                losses.push_back(dice_loss(Tensor::from_data(one, std::move(pslice)),
                                           Tensor::from_data(one, std::move(tslice)))
                                     .item());
            }
        } catch (const nonfinite_error&) {
            for (std::size_t n = begin; n < end; ++n) {
                losses.push_back(std::numeric_limits<double>::quiet_NaN());
            }
        }
    }
    return losses;
}

/// Sequential SplitFed simulation: per-client local training with the
/// server over a noisy channel, best-epoch selection, aggregation, and
/// broadcast. One instance owns all state for one run.
class Simulation {
public:
    explicit Simulation(RunConfig cfg) : cfg_(std::move(cfg)), model_(cfg_.arch) {
        cfg_.validate();
        int total = 0;
        for (int m : cfg_.client_samples) total += m;
        const std::vector<Sample> pool =
            generate_dataset(cfg_.seeds.data, total, cfg_.arch.input_size);
        DataPartition part = partition(pool, cfg_.client_samples, cfg_.seeds.data);
        test_set_ = generate_dataset(rng::derive_seed(cfg_.seeds.data, {detail::kTestSetTag}),
                                     cfg_.test_samples, cfg_.arch.input_size);

        SplitModelWeights global = build_split_unet(cfg_.arch, cfg_.seeds.model);
        server_weights_ = global.server;
        global_client_fe_ = global.front_end;
        global_client_be_ = global.back_end;

        clients_.reserve(cfg_.num_clients);
        for (int i = 0; i < cfg_.num_clients; ++i) {
            const int id = i + 1;
            ClientState c{id,
                          {},
                          {},
                          ChannelState(cfg_.seeds.channel, id, cfg_.channel_for(id)),
                          global.front_end,
                          global.back_end};
            auto [train_n, val_n] = train_val_counts(cfg_.client_samples[i]);
            auto& chunk = part.clients[i];
            c.train_set.assign(chunk.begin(), chunk.begin() + train_n);
            c.val_set.assign(chunk.begin() + train_n, chunk.end());
            (void)val_n;
            clients_.push_back(std::move(c));
        }
    }

    const RunConfig& config() const { return cfg_; }
    const std::vector<Sample>& test_set() const { return test_set_; }
    bool aborted() const { return aborted_; }

    /// Local epochs of one client with the server, every payload through
    /// the channel. Returns the assembled report.
    ClientReport run_local_training(int client_index, int global_epoch) {
        ClientState& client = clients_[client_index];
        ChannelState& ch = client.channel;
        ClientReport report;
        report.client_id = client.id;

        model_.load_front_end(client.fe_weights);
        model_.load_back_end(client.be_weights);
        if (!cfg_.server_carryover || client_index == 0) {
            model_.load_server(server_weights_);
        }
        // Session-start server weights back the all-epochs-failed report.
        ParamSet server_session_start = cfg_.server_carryover && client_index != 0
                                            ? model_.snapshot().server
                                            : server_weights_;

        Adam client_opt(model_.client_params(), cfg_.learning_rate);
        Adam server_opt(model_.server_params(), cfg_.learning_rate);

        struct Best {
            SplitModelWeights weights;
            int epoch;
            double val_loss, train_loss;
        };
        std::optional<Best> best;

        const int num_classes = cfg_.arch.num_classes;
        for (int le = 1; le <= cfg_.local_epochs; ++le) {
            rng::Xoshiro256pp stream =
                epoch_stream(cfg_.seeds.data, client.id, global_epoch, le);
            std::vector<int> order(client.train_set.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[stream.below(i)]);
            }

            double loss_sum = 0.0;
            int batches = 0;
            bool failed = false;
            for (std::size_t begin = 0; begin < order.size() && !failed;
                 begin += cfg_.batch_size) {
                const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
                try {
                    std::vector<Sample> batch_samples;
                    batch_samples.reserve(end - begin);
                    for (std::size_t i = begin; i < end; ++i) {
                        const Sample& s = client.train_set[order[i]];
                        batch_samples.push_back(cfg_.augment_training ? augment(s, stream) : s);
                    }
                    auto [x, target] = make_batch(batch_samples, num_classes);

                    Tensor fe_out = model_.forward_front(x, BNMode::train);
                    Tensor server_in = ch.transmit(
                        fe_out, direction_of(PayloadKind::features, Direction::uplink),
                        global_epoch);
                    server_in.set_requires_grad(true);
                    Tensor server_out = model_.forward_server(server_in, BNMode::train);
                    Tensor be_in = ch.transmit(
                        server_out, direction_of(PayloadKind::features, Direction::downlink),
                        global_epoch);
                    be_in.set_requires_grad(true);
                    Tensor probs = softmax_channels(model_.forward_back_logits(be_in));
                    Tensor loss = dice_loss(probs, target);

                    loss.backward();
                    std::vector<double> grad_up = be_in.grad();
                    ch.transmit(grad_up, direction_of(PayloadKind::gradients, Direction::uplink),
                                global_epoch);
                    server_out.backward(grad_up);
                    std::vector<double> grad_down = server_in.grad();
                    ch.transmit(grad_down, direction_of(PayloadKind::gradients, Direction::downlink),
                                global_epoch);
                    fe_out.backward(grad_down);

                    client_opt.step();
                    server_opt.step();
                    client_opt.zero_grad();
                    server_opt.zero_grad();
                    loss_sum += loss.item();
                    ++batches;
                } catch (const nonfinite_error&) {
                    failed = true;
                    client_opt.zero_grad();
                    server_opt.zero_grad();
                }
            }

            double train_loss = std::numeric_limits<double>::quiet_NaN();
            double val_loss = std::numeric_limits<double>::quiet_NaN();
            if (!failed && batches > 0) {
                train_loss = loss_sum / batches;
                const std::vector<double> val_losses = per_sample_losses(
                    model_, client.val_set, ch, global_epoch, cfg_.batch_size);
                double acc = 0.0;
                for (double v : val_losses) acc += v;
                val_loss = acc / static_cast<double>(val_losses.size());
            }
            // Earliest strict minimum wins; non-finite epochs are skipped.
            if (std::isfinite(val_loss) && (!best || val_loss < best->val_loss)) {
                best = Best{model_.snapshot(), le, val_loss, train_loss};
            }
        }

        if (!best) {
            // Every local epoch was non-finite: the report carries the
            // weights the client started from and the +inf sentinel.
            report.diverged = true;
            report.fe_weights = client.fe_weights;
            report.be_weights = client.be_weights;
            report.server_weights = std::move(server_session_start);
            report.per_sample_losses.assign(client.train_set.size(),
                                            std::numeric_limits<double>::quiet_NaN());
            report.indicator_raw = std::numeric_limits<double>::infinity();
        } else {
            model_.load(best->weights);
            report.best_local_epoch = best->epoch;
            report.best_val_loss = best->val_loss;
            report.best_train_loss = best->train_loss;
            report.fe_weights = best->weights.front_end;
            report.be_weights = best->weights.back_end;
            report.server_weights = best->weights.server;
            report.per_sample_losses =
                per_sample_losses(model_, client.train_set, ch, global_epoch, cfg_.batch_size);
            report.indicator_raw = unreliability_indicator(report.per_sample_losses);
        }

        // Uplink of W^C_i (front-end then back-end, array by array) and b_i.
        const Direction up = direction_of(PayloadKind::client_weights);
        for (auto& arr : report.fe_weights) ch.transmit(arr.values, up, global_epoch);
        for (auto& arr : report.be_weights) ch.transmit(arr.values, up, global_epoch);
        report.indicator_received = ch.transmit_scalar(
            report.indicator_raw, direction_of(PayloadKind::scalar_indicator), global_epoch);
        return report;
    }

    /// One pass across all clients followed by aggregation and broadcast.
    /// Returns the per-client rows and the global-model test row.
    std::pair<std::vector<ClientEpochMetrics>, GlobalEpochMetrics> run_global_epoch(
        int global_epoch) {
        std::vector<ClientEpochMetrics> rows(cfg_.num_clients);
        for (int i = 0; i < cfg_.num_clients; ++i) {
            rows[i].global_epoch = global_epoch;
            rows[i].client_id = i + 1;
        }

        if (aborted_) {
            // Short-circuit: the run already failed; rows keep NaN losses.
            for (auto& row : rows) row.diverged = true;
            GlobalEpochMetrics g = evaluate_global(global_epoch);
            g.diverged = true;
            return {rows, g};
        }

        std::vector<ClientReport> reports;
        reports.reserve(cfg_.num_clients);
        for (int i = 0; i < cfg_.num_clients; ++i) {
            reports.push_back(run_local_training(i, global_epoch));
            rows[i].train_loss = reports[i].best_train_loss;
            rows[i].val_loss = reports[i].best_val_loss;
            rows[i].diverged = reports[i].diverged;
        }

        std::vector<double> effective(cfg_.num_clients,
                                      std::numeric_limits<double>::quiet_NaN());
        bool abort_now = false;
        std::vector<SplitModelWeights> snapshots(cfg_.num_clients);
        for (int i = 0; i < cfg_.num_clients; ++i) {
            snapshots[i].front_end = std::move(reports[i].fe_weights);
            snapshots[i].server = std::move(reports[i].server_weights);
            snapshots[i].back_end = std::move(reports[i].be_weights);
        }
        std::vector<const SplitModelWeights*> snapshot_ptrs;
        for (const auto& s : snapshots) snapshot_ptrs.push_back(&s);

        SplitModelWeights global;
        switch (cfg_.strategy) {
            case Strategy::naive: {
                global = naive_average(snapshot_ptrs);
                for (double& w : effective) w = 1.0 / cfg_.num_clients;
                break;
            }
            case Strategy::fedavg: {
                global = federated_average(snapshot_ptrs, cfg_.client_samples);
                double total = 0.0;
                for (int m : cfg_.client_samples) total += m;
                for (int i = 0; i < cfg_.num_clients; ++i) {
                    effective[i] = cfg_.client_samples[i] / total;
                }
                break;
            }
            case Strategy::smart: {
                std::vector<double> b(cfg_.num_clients);
                for (int i = 0; i < cfg_.num_clients; ++i) b[i] = reports[i].indicator_received;
                try {
                    AggregationWeights w = smart_weights(b, cfg_.client_samples, cfg_.alpha);
                    effective = w.r;
                    global = weighted_average(snapshot_ptrs, w.r);
                } catch (const nonfinite_error&) {
                    abort_now = true;
                }
                break;
            }
        }

        for (int i = 0; i < cfg_.num_clients; ++i) rows[i].r_weight = effective[i];

        if (abort_now) {
            // The channel delivered a non-finite indicator: training has
            // failed and the global model is gone. Poison it so every
            // later evaluation reports the collapse instead of stale
            // numbers.
            aborted_ = true;
            poison_global();
            GlobalEpochMetrics g = evaluate_global(global_epoch);
            g.diverged = true;
            return {rows, g};
        }

        server_weights_ = std::move(global.server);
        global_client_fe_ = std::move(global.front_end);
        global_client_be_ = std::move(global.back_end);

        // Broadcast of the averaged client part; contaminated only on
        // noisy links. The server keeps its own part uncorrupted.
        for (auto& client : clients_) {
            client.fe_weights = global_client_fe_;
            client.be_weights = global_client_be_;
            const Direction down = direction_of(PayloadKind::global_client_weights);
            for (auto& arr : client.fe_weights) {
                client.channel.transmit(arr.values, down, global_epoch);
            }
            for (auto& arr : client.be_weights) {
                client.channel.transmit(arr.values, down, global_epoch);
            }
        }

        GlobalEpochMetrics g = evaluate_global(global_epoch);
        g.diverged = !std::isfinite(g.test_loss);
        return {rows, g};
    }

    /// Full run: cfg_.global_epochs passes, test-set evaluation after each.
    SimulationResult run() {
        SimulationResult result;
        for (int g = 1; g <= cfg_.global_epochs; ++g) {
            auto [rows, global_row] = run_global_epoch(g);
            for (auto& r : rows) result.client_rows.push_back(r);
            result.global_rows.push_back(global_row);
        }
        result.final_model = global_model();
        result.diverged = aborted_ || !std::isfinite(result.global_rows.back().test_loss);
        return result;
    }

    SplitModelWeights global_model() const {
        SplitModelWeights w;
        w.front_end = global_client_fe_;
        w.server = server_weights_;
        w.back_end = global_client_be_;
        return w;
    }

    /// Replaces the global model, e.g. with a loaded checkpoint, so stored
    /// metrics can be recomputed from dumped artifacts.
    void set_global_model(const SplitModelWeights& w) {
        check_same_structure(global_model(), w, "set_global_model");
        global_client_fe_ = w.front_end;
        server_weights_ = w.server;
        global_client_be_ = w.back_end;
    }

    /// Clean server-side evaluation of the current global model on the
    /// held-out test set. Finite checks are suspended: a diverged model
    /// reports NaN loss and collapses to background predictions.
    GlobalEpochMetrics evaluate_global(int global_epoch) {
        GlobalEpochMetrics row;
        row.global_epoch = global_epoch;
        AnalysisModeGuard analysis;
        NoGradGuard ng;
        model_.load(global_model());

        SegmentationTally tally(cfg_.arch.num_classes);
        double loss_sum = 0.0;
        std::size_t count = 0;
        std::vector<int> idx(test_set_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        const std::size_t plane =
            static_cast<std::size_t>(cfg_.arch.input_size) * cfg_.arch.input_size;
        for (std::size_t begin = 0; begin < test_set_.size(); begin += cfg_.batch_size) {
            const std::size_t end = std::min(test_set_.size(), begin + cfg_.batch_size);
            auto [x, target] = make_batch(test_set_, idx, begin, end, cfg_.arch.num_classes);
            Tensor f = model_.forward_front(x, BNMode::eval);
            Tensor s = model_.forward_server(f, BNMode::eval);
            auto [probs, labels] = model_.forward_back(s);
            const auto& ps = probs.shape();
            const std::size_t sample_len = static_cast<std::size_t>(ps[1]) * plane;
            for (std::size_t n = 0; n < end - begin; ++n) {
                std::vector<double> pslice(probs.data().begin() + n * sample_len,
                                           probs.data().begin() + (n + 1) * sample_len);
                std::vector<double> tslice(target.data().begin() + n * sample_len,
                                           target.data().begin() + (n + 1) * sample_len);
                Shape one = {1, ps[1], ps[2], ps[3]};
                loss_sum += dice_loss(Tensor::from_data(one, std::move(pslice)),
                                      Tensor::from_data(one, std::move(tslice)))
                                .item();
                ++count;
                std::vector<std::uint8_t> pred(labels.begin() + n * plane,
                                               labels.begin() + (n + 1) * plane);
                tally.add(pred, test_set_[begin + n].mask);
            }
        }
        row.test_loss = loss_sum / static_cast<double>(count);
        row.accuracy_percent = tally.accuracy_percent();
        row.iou = tally.iou();
        return row;
    }

private:
    struct ClientState {
        int id;
        std::vector<Sample> train_set;
        std::vector<Sample> val_set;
        ChannelState channel;
        ParamSet fe_weights;  // as received from the last broadcast
        ParamSet be_weights;
    };

    void poison_global() {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (ParamSet* set : {&server_weights_, &global_client_fe_, &global_client_be_}) {
            for (auto& arr : *set) {
                for (double& v : arr.values) v = nan;
            }
        }
    }

    RunConfig cfg_;
    SplitUNet model_;
    std::vector<ClientState> clients_;
    std::vector<Sample> test_set_;
    ParamSet server_weights_;
    ParamSet global_client_fe_;
    ParamSet global_client_be_;
    bool aborted_ = false;
};

inline SimulationResult run_simulation(const RunConfig& cfg) { return Simulation(cfg).run(); }

}  // namespace splitfed
