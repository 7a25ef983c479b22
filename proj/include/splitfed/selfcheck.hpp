#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>

#include "splitfed/aggregation.hpp"
#include "splitfed/channel.hpp"
#include "splitfed/protocol.hpp"

namespace splitfed {

namespace detail {

inline double selfcheck_rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

/// Fast oracle/property suite behind `splitfed check`: one line per check,
/// true iff everything passed.
inline bool run_self_checks(std::ostream& out) {
    bool all_ok = true;
    auto report = [&](const char* name, bool ok) {
        out << (ok ? "[ ok ] " : "[FAIL] ") << name << '\n';
        all_ok = all_ok && ok;
    };

    {
        // Averaging strategies against a long-double brute-force mean.
        rng::Xoshiro256pp gen(404);
        bool ok = true;
        for (int inst = 0; inst < 10 && ok; ++inst) {
            const int n = 1 + static_cast<int>(gen.below(6));
            std::vector<SplitModelWeights> snaps(n);
            std::vector<int> m(n);
            for (int i = 0; i < n; ++i) {
                snaps[i].server = {{"w", {32}, std::vector<double>(32), true}};
                for (double& v : snaps[i].server[0].values) v = gen.uniform(-1.0, 1.0);
                m[i] = static_cast<int>(1 + gen.below(100));
            }
            std::vector<const SplitModelWeights*> ptrs;
            for (const auto& s : snaps) ptrs.push_back(&s);
            SplitModelWeights naive = naive_average(ptrs);
            SplitModelWeights fed = federated_average(ptrs, m);
            double total = 0.0;
            for (int c : m) total += c;
            for (int k = 0; k < 32 && ok; ++k) {
                long double mean = 0.0L, wmean = 0.0L;
                for (int i = 0; i < n; ++i) {
                    mean += snaps[i].server[0].values[k];
                    wmean += static_cast<long double>(m[i]) * snaps[i].server[0].values[k];
                }
                mean /= n;
                wmean /= static_cast<long double>(total);
                ok = ok && std::abs(naive.server[0].values[k] - static_cast<double>(mean)) <= 1e-15;
                ok = ok && std::abs(fed.server[0].values[k] - static_cast<double>(wmean)) <= 1e-15;
            }
        }
        report("aggregation vs brute-force elementwise mean", ok);
    }

    {
        // Smart weights against the high-precision two-client reference.
        const long double e8 = std::exp(8.0L);
        auto w = smart_weights({0.1, 0.9}, {1, 1}, 10.0);
        bool ok = std::abs(w.r[0] - static_cast<double>(e8 / (e8 + 1.0L))) <= 1e-9 &&
                  std::abs(w.r[1] - static_cast<double>(1.0L / (e8 + 1.0L))) <= 1e-9;
        report("smart weights two-client reference", ok);
    }

    {
        // Channel: sigma=0 identity and AWGN moments at sigma=0.1.
        ChannelState clean(1, 1, ChannelConfig{0.0, 1});
        std::vector<double> payload = {1.0, -2.0, 3.5};
        const std::vector<double> orig = payload;
        clean.transmit(payload, Direction::uplink, 5);
        bool ok = payload == orig;

        const double sigma = 0.1;
        const std::size_t n = 1000000;
        ChannelState noisy(2024, 3, ChannelConfig{sigma, 1});
        std::vector<double> draws(n, 0.0);
        noisy.transmit(draws, Direction::uplink, 1);
        double mean = 0.0;
        for (double v : draws) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : draws) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        ok = ok && std::abs(mean) <= 4.0 * sigma / std::sqrt(static_cast<double>(n));
        ok = ok && std::abs(std::sqrt(var) - sigma) / sigma <= 0.005;
        report("channel identity at sigma=0 and AWGN moments", ok);
    }

    {
        // Spot finite-difference check: conv2d -> softmax -> dice.
        rng::Xoshiro256pp gen(505);
        bool ok = true;
        for (int inst = 0; inst < 3 && ok; ++inst) {
            Tensor x = Tensor::zeros({1, 2, 6, 6}, true);
            for (double& v : x.data()) v = gen.uniform(-1.0, 1.0);
            Tensor k = Tensor::zeros({3, 2, 3, 3}, true);
            for (double& v : k.data()) v = gen.uniform(-0.5, 0.5);
            Tensor b = Tensor::zeros({3}, true);
            Tensor target = Tensor::zeros({1, 3, 6, 6});
            for (int i = 0; i < 36; ++i) target.data()[gen.below(3) * 36 + i] = 1.0;
            auto forward = [&] {
                return dice_loss(softmax_channels(conv2d(x, k, b)), target);
            };
            Tensor loss = forward();
            loss.backward();
            for (Tensor* t : {&x, &k, &b}) {
                for (std::size_t i = 0; i < t->data().size() && ok; i += 7) {
                    const double orig = t->data()[i];
                    double fp, fm;
                    {
                        NoGradGuard ng;
                        t->data()[i] = orig + 1e-5;
                        fp = forward().item();
                        t->data()[i] = orig - 1e-5;
                        fm = forward().item();
                        t->data()[i] = orig;
                    }
                    const double numeric = (fp - fm) / 2e-5;
                    ok = ok && detail::selfcheck_rel_err(t->grad()[i], numeric) <= 1e-4;
                }
            }
        }
        report("gradients vs central finite differences", ok);
    }

    {
        // Two identical micro runs produce identical metrics.
        RunConfig cfg;
        cfg.arch.input_size = 16;
        cfg.arch.down_filters = {4};
        cfg.arch.bottleneck_filters = 8;
        cfg.arch.up_filters = {4};
        cfg.num_clients = 2;
        cfg.client_samples = {4, 4};
        cfg.test_samples = 2;
        cfg.local_epochs = 1;
        cfg.global_epochs = 1;
        cfg.batch_size = 2;
        cfg.noisy_clients = {{2, 0.05, 1}};
        SimulationResult a = run_simulation(cfg);
        SimulationResult b = run_simulation(cfg);
        bool ok = a.global_rows[0].test_loss == b.global_rows[0].test_loss &&
                  a.global_rows[0].accuracy_percent == b.global_rows[0].accuracy_percent;
        for (std::size_t i = 0; i < a.client_rows.size(); ++i) {
            const bool train_eq = a.client_rows[i].train_loss == b.client_rows[i].train_loss ||
                                  (std::isnan(a.client_rows[i].train_loss) &&
                                   std::isnan(b.client_rows[i].train_loss));
            ok = ok && train_eq;
        }
        report("simulation determinism", ok);
    }

    return all_ok;
}

}  // namespace splitfed
