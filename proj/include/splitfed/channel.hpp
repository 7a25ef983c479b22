#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "splitfed/rng.hpp"
#include "splitfed/tensor.hpp"

namespace splitfed {

enum class Direction { uplink, downlink };

/// What a transmission carries. Features and gradients cross the link in
/// both directions during training; weight uploads and the scalar
/// indicator are uplink-only, the averaged client model is downlink-only.
enum class PayloadKind { features, gradients, client_weights, global_client_weights, scalar_indicator };

/// The direction a payload kind travels. Features/gradients need the leg
/// spelled out (client->server or server->client); the rest is fixed.
inline Direction direction_of(PayloadKind kind, Direction leg = Direction::uplink) {
    switch (kind) {
        case PayloadKind::features:
        case PayloadKind::gradients:
            return leg;
        case PayloadKind::client_weights:
        case PayloadKind::scalar_indicator:
            return Direction::uplink;
        case PayloadKind::global_client_weights:
            return Direction::downlink;
    }
    return leg;
}

/// Per-client noise configuration. A client with sigma_noise == 0 (or an
/// onset beyond the run length) is a clean client: its link is the
/// identity, bit-exact.
struct ChannelConfig {
    double sigma_noise = 0.0;
    int onset_global_epoch = std::numeric_limits<int>::max();
};

namespace detail {
inline constexpr std::uint64_t kUplinkTag = 0x75706C696E6BULL;    // "uplink"
inline constexpr std::uint64_t kDownlinkTag = 0x646F776E6CULL;    // "downl"
}  // namespace detail

/// Simulated AWGN link between one client and the server. Each direction
/// owns an independent Gaussian substream derived from (master seed,
/// client id, direction); draws are consumed in element order, so a given
/// (seed, client, direction, draw index) always yields the same value.
class ChannelState {
public:
    ChannelState(std::uint64_t master_seed, int client_id, ChannelConfig config)
        : client_id_(client_id),
          config_(config),
          up_(rng::derive_seed(master_seed, {static_cast<std::uint64_t>(client_id), detail::kUplinkTag})),
          down_(rng::derive_seed(master_seed,
                                 {static_cast<std::uint64_t>(client_id), detail::kDownlinkTag})) {}

    int client_id() const { return client_id_; }
    const ChannelConfig& config() const { return config_; }

    /// True iff this client's link is noisy at the given (1-based) global
    /// epoch: designated noisy and at or past its onset.
    bool noise_active(int global_epoch) const {
        return config_.sigma_noise > 0.0 && global_epoch >= config_.onset_global_epoch;
    }

    /// Adds one independent N(0, sigma^2) draw per element, in place, in
    /// element order. Identity (no draws consumed) while noise is inactive.
    void transmit(std::vector<double>& payload, Direction dir, int global_epoch) {
        if (!noise_active(global_epoch)) return;
        rng::GaussianStream& stream = dir == Direction::uplink ? up_ : down_;
        const double sigma = config_.sigma_noise;
        for (double& v : payload) v += sigma * stream.next();
    }

    double transmit_scalar(double value, Direction dir, int global_epoch) {
        if (!noise_active(global_epoch)) return value;
        rng::GaussianStream& stream = dir == Direction::uplink ? up_ : down_;
        return value + config_.sigma_noise * stream.next();
    }

    /// Copying transmit for tensors; the result is a fresh leaf.
    Tensor transmit(const Tensor& payload, Direction dir, int global_epoch) {
        Tensor received = payload.clone();
        transmit(received.data(), dir, global_epoch);
        return received;
    }

private:
    int client_id_;
    ChannelConfig config_;
    rng::GaussianStream up_;
    rng::GaussianStream down_;
};

}  // namespace splitfed
