#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitfed/protocol.hpp"

namespace splitfed {

inline constexpr int kConfigFormatVersion = 1;

struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error("config field '" + path + key + "' has the wrong type");
    }
}

inline const nlohmann::json& get_section(const nlohmann::json& j, const char* key,
                                         const nlohmann::json& empty) {
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) {
        throw config_error(std::string("config field '") + key + "' must be an object");
    }
    return j.at(key);
}

}  // namespace detail

/// Parses a run config document. Unknown types or malformed entries raise
/// config_error naming the offending field; absent fields keep defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    static const nlohmann::json empty = nlohmann::json::object();
    RunConfig cfg;
    if (j.contains("format_version") &&
        detail::get_field<int>(j, "", "format_version", kConfigFormatVersion) !=
            kConfigFormatVersion) {
        throw config_error("config field 'format_version' is unsupported");
    }

    const auto& arch = detail::get_section(j, "architecture", empty);
    cfg.arch.input_size = detail::get_field(arch, "architecture.", "input_size", cfg.arch.input_size);
    cfg.arch.num_classes =
        detail::get_field(arch, "architecture.", "num_classes", cfg.arch.num_classes);
    cfg.arch.down_filters =
        detail::get_field(arch, "architecture.", "down_filters", cfg.arch.down_filters);
    cfg.arch.bottleneck_filters = detail::get_field(arch, "architecture.", "bottleneck_filters",
                                                    cfg.arch.bottleneck_filters);
    cfg.arch.up_filters = detail::get_field(arch, "architecture.", "up_filters", cfg.arch.up_filters);
    cfg.arch.kernel_size =
        detail::get_field(arch, "architecture.", "kernel_size", cfg.arch.kernel_size);

    const auto& data = detail::get_section(j, "data", empty);
    cfg.client_samples = detail::get_field(data, "data.", "client_samples", cfg.client_samples);
    cfg.num_clients = static_cast<int>(cfg.client_samples.size());
    cfg.test_samples = detail::get_field(data, "data.", "test_samples", cfg.test_samples);

    const auto& proto = detail::get_section(j, "protocol", empty);
    cfg.local_epochs = detail::get_field(proto, "protocol.", "local_epochs", cfg.local_epochs);
    cfg.global_epochs = detail::get_field(proto, "protocol.", "global_epochs", cfg.global_epochs);
    cfg.batch_size = detail::get_field(proto, "protocol.", "batch_size", cfg.batch_size);
    cfg.learning_rate = detail::get_field(proto, "protocol.", "learning_rate", cfg.learning_rate);
    cfg.augment_training = detail::get_field(proto, "protocol.", "augment", cfg.augment_training);
    cfg.server_carryover =
        detail::get_field(proto, "protocol.", "server_carryover", cfg.server_carryover);

    const auto& channel = detail::get_section(j, "channel", empty);
    cfg.sigma_noise = detail::get_field(channel, "channel.", "sigma_noise", cfg.sigma_noise);
    if (channel.contains("clients")) {
        if (!channel.at("clients").is_array()) {
            throw config_error("config field 'channel.clients' must be an array");
        }
        cfg.noisy_clients.clear();
        for (const auto& e : channel.at("clients")) {
            NoiseEntry entry;
            if (!e.contains("client_id")) {
                throw config_error("config field 'channel.clients[].client_id' is required");
            }
            entry.client_id = detail::get_field(e, "channel.clients[].", "client_id", 0);
            entry.sigma_noise = detail::get_field(e, "channel.clients[].", "sigma_noise", -1.0);
            entry.onset_global_epoch =
                detail::get_field(e, "channel.clients[].", "onset_global_epoch", 1);
            cfg.noisy_clients.push_back(entry);
        }
    }

    const auto& strategy = detail::get_section(j, "strategy", empty);
    const std::string name =
        detail::get_field<std::string>(strategy, "strategy.", "name", strategy_name(cfg.strategy));
    try {
        cfg.strategy = parse_strategy(name);
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("config field 'strategy.name': ") + e.what());
    }
    cfg.alpha = detail::get_field(strategy, "strategy.", "alpha", cfg.alpha);

    const auto& seeds = detail::get_section(j, "seeds", empty);
    cfg.seeds.model = detail::get_field(seeds, "seeds.", "model", cfg.seeds.model);
    cfg.seeds.data = detail::get_field(seeds, "seeds.", "data", cfg.seeds.data);
    cfg.seeds.channel = detail::get_field(seeds, "seeds.", "channel", cfg.seeds.channel);

    cfg.output_dir = detail::get_field<std::string>(j, "", "output_dir", cfg.output_dir);

    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["format_version"] = kConfigFormatVersion;
    j["architecture"] = {{"input_size", cfg.arch.input_size},
                         {"num_classes", cfg.arch.num_classes},
                         {"down_filters", cfg.arch.down_filters},
                         {"bottleneck_filters", cfg.arch.bottleneck_filters},
                         {"up_filters", cfg.arch.up_filters},
                         {"kernel_size", cfg.arch.kernel_size}};
    j["data"] = {{"client_samples", cfg.client_samples}, {"test_samples", cfg.test_samples}};
    j["protocol"] = {{"local_epochs", cfg.local_epochs},
                     {"global_epochs", cfg.global_epochs},
                     {"batch_size", cfg.batch_size},
                     {"learning_rate", cfg.learning_rate},
                     {"augment", cfg.augment_training},
                     {"server_carryover", cfg.server_carryover}};
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& e : cfg.noisy_clients) {
        clients.push_back({{"client_id", e.client_id},
                           {"sigma_noise", e.sigma_noise},
                           {"onset_global_epoch", e.onset_global_epoch}});
    }
    j["channel"] = {{"sigma_noise", cfg.sigma_noise}, {"clients", clients}};
    j["strategy"] = {{"name", strategy_name(cfg.strategy)}, {"alpha", cfg.alpha}};
    j["seeds"] = {{"model", cfg.seeds.model}, {"data", cfg.seeds.data}, {"channel", cfg.seeds.channel}};
    j["output_dir"] = cfg.output_dir;
    return j;
}

/// A (sigma x strategy) sweep over a shared base run config.
struct GridSpec {
    std::vector<double> sigmas = {0.0, 2e-4, 6e-4, 1e-3, 1e-2, 1e-1, 5e-1};
    std::vector<Strategy> strategies = {Strategy::naive, Strategy::fedavg, Strategy::smart};
    RunConfig base;
};

inline GridSpec parse_grid_spec(const nlohmann::json& j) {
    GridSpec spec;
    if (j.contains("format_version") &&
        detail::get_field<int>(j, "", "format_version", kConfigFormatVersion) !=
            kConfigFormatVersion) {
        throw config_error("config field 'format_version' is unsupported");
    }
    spec.sigmas = detail::get_field(j, "", "sigmas", spec.sigmas);
    for (double s : spec.sigmas) {
        if (s < 0) throw config_error("config field 'sigmas' must be non-negative");
    }
    if (j.contains("strategies")) {
        std::vector<std::string> names =
            detail::get_field<std::vector<std::string>>(j, "", "strategies", {});
        spec.strategies.clear();
        for (const auto& n : names) {
            try {
                spec.strategies.push_back(parse_strategy(n));
            } catch (const std::invalid_argument& e) {
                throw config_error(std::string("config field 'strategies': ") + e.what());
            }
        }
    }
    if (spec.sigmas.empty() || spec.strategies.empty()) {
        throw config_error("grid config needs at least one sigma and one strategy");
    }
    spec.base = parse_run_config(j.contains("base") ? j.at("base") : nlohmann::json::object());
    return spec;
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(load_json_file(path));
}

inline GridSpec load_grid_spec(const std::string& path) {
    return parse_grid_spec(load_json_file(path));
}

}  // namespace splitfed
