#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "splitfed/ops.hpp"
#include "splitfed/rng.hpp"
#include "splitfed/tensor.hpp"
#include "splitfed/weights.hpp"

namespace splitfed {

/// Architecture of the tiny split U-Net. The split boundary is fixed by
/// construction: the first conv unit (conv+BN+ReLU) is the client
/// front-end, the last conv plus the argmax readout is the client
/// back-end, everything between lives on the server.
struct ArchConfig {
    int input_size = 32;
    int num_classes = 5;
    std::vector<int> down_filters = {8, 16};
    int bottleneck_filters = 32;
    std::vector<int> up_filters = {16, 8};
    int kernel_size = 3;

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("ArchConfig: num_classes must be >= 1");
        if (kernel_size < 1 || kernel_size % 2 == 0) {
            throw std::invalid_argument("ArchConfig: kernel_size must be odd and positive");
        }
        if (down_filters.empty() || down_filters.size() != up_filters.size()) {
            throw std::invalid_argument(
                "ArchConfig: down_filters and up_filters must be non-empty and the same length");
        }
        for (int f : down_filters) {
            if (f < 1) throw std::invalid_argument("ArchConfig: down_filters must be positive");
        }
        for (int f : up_filters) {
            if (f < 1) throw std::invalid_argument("ArchConfig: up_filters must be positive");
        }
        if (bottleneck_filters < 1) {
            throw std::invalid_argument("ArchConfig: bottleneck_filters must be positive");
        }
        int divisor = 1;
        for (std::size_t i = 0; i < down_filters.size(); ++i) divisor *= 2;
        if (input_size < 1 || input_size % divisor != 0) {
            throw std::invalid_argument("ArchConfig: input_size " + std::to_string(input_size) +
                                        " must be divisible by 2^" +
                                        std::to_string(down_filters.size()) + " = " +
                                        std::to_string(divisor));
        }
    }
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

namespace detail {

/// conv + optional batchnorm. ReLU is applied by the forward drivers.
struct ConvUnit {
    std::string prefix;
    Tensor weight, bias;
    bool has_bn = false;
    Tensor gamma, beta, running_mean, running_var;

    static ConvUnit make(std::string prefix, int in_ch, int out_ch, int k, bool bn) {
        ConvUnit u;
        u.prefix = std::move(prefix);
        u.weight = Tensor::zeros({out_ch, in_ch, k, k}, true);
        u.bias = Tensor::zeros({out_ch}, true);
        u.has_bn = bn;
        if (bn) {
            u.gamma = Tensor::full({out_ch}, 1.0, true);
            u.beta = Tensor::zeros({out_ch}, true);
            u.running_mean = Tensor::zeros({out_ch});
            u.running_var = Tensor::full({out_ch}, 1.0);
        }
        return u;
    }

    void init_he_uniform(rng::Xoshiro256pp& gen) {
        const auto& ks = weight.shape();
        const double fan_in = static_cast<double>(ks[1]) * ks[2] * ks[3];
        const double limit = std::sqrt(6.0 / fan_in);
        for (double& v : weight.data()) v = gen.uniform(-limit, limit);
    }

    Tensor apply(const Tensor& x, BNMode mode) {
        Tensor y = conv2d(x, weight, bias);
        if (!has_bn) return y;
        if (mode == BNMode::train) {
            std::vector<double> mean, var;
            y = batchnorm2d_train(y, gamma, beta, &mean, &var);
            auto& rm = running_mean.data();
            auto& rv = running_var.data();
            for (std::size_t c = 0; c < rm.size(); ++c) {
                rm[c] = 0.9 * rm[c] + 0.1 * mean[c];
                rv[c] = 0.9 * rv[c] + 0.1 * var[c];
            }
        } else {
            y = batchnorm2d_eval(y, gamma, beta, running_mean, running_var);
        }
        return relu(y);
    }

    void collect(ParamSet& out) const {
        out.push_back({prefix + ".conv.weight", weight.shape(), weight.data(), true});
        out.push_back({prefix + ".conv.bias", bias.shape(), bias.data(), true});
        if (has_bn) {
            out.push_back({prefix + ".bn.gamma", gamma.shape(), gamma.data(), true});
            out.push_back({prefix + ".bn.beta", beta.shape(), beta.data(), true});
            out.push_back({prefix + ".bn.running_mean", running_mean.shape(), running_mean.data(), false});
            out.push_back({prefix + ".bn.running_var", running_var.shape(), running_var.data(), false});
        }
    }

    std::size_t load(const ParamSet& src, std::size_t at) {
        auto take = [&](Tensor& dst, const char* suffix) {
            const NamedArray& arr = src.at(at);
            if (arr.name != prefix + suffix || arr.shape != dst.shape()) {
                throw shape_error("load: expected '" + prefix + suffix + "' " +
                                  shape_str(dst.shape()) + ", found '" + arr.name + "' " +
                                  shape_str(arr.shape));
            }
            dst.data() = arr.values;
            ++at;
        };
        take(weight, ".conv.weight");
        take(bias, ".conv.bias");
        if (has_bn) {
            take(gamma, ".bn.gamma");
            take(beta, ".bn.beta");
            take(running_mean, ".bn.running_mean");
            take(running_var, ".bn.running_var");
        }
        return at;
    }

    void collect_trainable(std::vector<NamedParam>& out) {
        out.push_back({prefix + ".conv.weight", weight});
        out.push_back({prefix + ".conv.bias", bias});
        if (has_bn) {
            out.push_back({prefix + ".bn.gamma", gamma});
            out.push_back({prefix + ".bn.beta", beta});
        }
    }
};

}  // namespace detail

/// The split U-Net. Holds live parameter tensors for all three sections;
/// snapshots deep-copy them into plain SplitModelWeights and loads copy
/// them back, so aggregation never aliases the live model.
class SplitUNet {
public:
    explicit SplitUNet(ArchConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int k = cfg_.kernel_size;
        const auto& down = cfg_.down_filters;
        const auto& up = cfg_.up_filters;
        const int depth = static_cast<int>(down.size());

        fe_ = detail::ConvUnit::make("fe", 1, down[0], k, true);
        server_.push_back(detail::ConvUnit::make("server.down0.conv2", down[0], down[0], k, true));
        for (int j = 1; j < depth; ++j) {
            const std::string p = "server.down" + std::to_string(j);
            server_.push_back(detail::ConvUnit::make(p + ".conv1", down[j - 1], down[j], k, true));
            server_.push_back(detail::ConvUnit::make(p + ".conv2", down[j], down[j], k, true));
        }
        server_.push_back(
            detail::ConvUnit::make("server.bottleneck.conv1", down[depth - 1], cfg_.bottleneck_filters, k, true));
        server_.push_back(detail::ConvUnit::make("server.bottleneck.conv2", cfg_.bottleneck_filters,
                                                 cfg_.bottleneck_filters, k, true));
        for (int j = 0; j < depth; ++j) {
            const int prev_ch = j == 0 ? cfg_.bottleneck_filters : up[j - 1];
            const int skip_ch = down[depth - 1 - j];
            const std::string p = "server.up" + std::to_string(j);
            server_.push_back(detail::ConvUnit::make(p + ".conv1", prev_ch + skip_ch, up[j], k, true));
            server_.push_back(detail::ConvUnit::make(p + ".conv2", up[j], up[j], k, true));
        }
        be_ = detail::ConvUnit::make("be", up[depth - 1], cfg_.num_classes, k, false);
    }

    const ArchConfig& config() const { return cfg_; }

    /// Deterministic He-uniform initialization: identical (cfg, seed)
    /// yields bit-identical weights.
    void init(std::uint64_t seed) {
        rng::Xoshiro256pp gen(rng::derive_seed(seed, {0x696E6974ULL}));  // "init"
        fe_.init_he_uniform(gen);
        for (auto& unit : server_) unit.init_he_uniform(gen);
        be_.init_he_uniform(gen);
    }

    /// Front-end: first conv unit. Input is an image batch (N,1,S,S).
    Tensor forward_front(const Tensor& x, BNMode mode) {
        const auto& xs = x.shape();
        if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg_.input_size || xs[3] != cfg_.input_size) {
            throw shape_error("forward_front: expected (N,1," + std::to_string(cfg_.input_size) +
                              "," + std::to_string(cfg_.input_size) + "), got " + shape_str(xs));
        }
        return fe_.apply(x, mode);
    }

    /// Server body: remaining down blocks, bottleneck, up blocks with skip
    /// connections. Output channels equal up_filters.back().
    Tensor forward_server(const Tensor& features, BNMode mode) {
        const auto& fs = features.shape();
        if (fs.size() != 4 || fs[1] != cfg_.down_filters[0] || fs[2] != cfg_.input_size ||
            fs[3] != cfg_.input_size) {
            throw shape_error("forward_server: expected (N," +
                              std::to_string(cfg_.down_filters[0]) + "," +
                              std::to_string(cfg_.input_size) + "," +
                              std::to_string(cfg_.input_size) + "), got " + shape_str(fs));
        }
        const int depth = static_cast<int>(cfg_.down_filters.size());
        std::vector<Tensor> skips;
        skips.reserve(depth);
        std::size_t u = 0;

        Tensor x = server_[u++].apply(features, mode);
        skips.push_back(x);
        x = maxpool2d(x);
        for (int j = 1; j < depth; ++j) {
            x = server_[u++].apply(x, mode);
            x = server_[u++].apply(x, mode);
            skips.push_back(x);
            x = maxpool2d(x);
        }
        x = server_[u++].apply(x, mode);
        x = server_[u++].apply(x, mode);
        for (int j = 0; j < depth; ++j) {
            x = upsample_nearest2x(x);
            x = concat_channels(x, skips[depth - 1 - j]);
            x = server_[u++].apply(x, mode);
            x = server_[u++].apply(x, mode);
        }
        return x;
    }

    /// Back-end logits: the final conv (no BN, no activation).
    Tensor forward_back_logits(const Tensor& features) {
        const auto& fs = features.shape();
        if (fs.size() != 4 || fs[1] != cfg_.up_filters.back() || fs[2] != cfg_.input_size ||
            fs[3] != cfg_.input_size) {
            throw shape_error("forward_back: expected (N," +
                              std::to_string(cfg_.up_filters.back()) + "," +
                              std::to_string(cfg_.input_size) + "," +
                              std::to_string(cfg_.input_size) + "), got " + shape_str(fs));
        }
        return conv2d(features, be_.weight, be_.bias);
    }

    /// Back-end readout: per-pixel class probabilities plus the argmax
    /// label map (ties and NaN logits resolve to the lowest class index).
    std::pair<Tensor, std::vector<std::uint8_t>> forward_back(const Tensor& features) {
        Tensor probs = softmax_channels(forward_back_logits(features));
        return {probs, argmax_labels(probs)};
    }

    std::vector<std::uint8_t> argmax_labels(const Tensor& probs) const {
        const auto& ps = probs.shape();
        const int batch = ps[0], channels = ps[1];
        const std::size_t plane = static_cast<std::size_t>(ps[2]) * ps[3];
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(batch) * plane);
        const double* pd = probs.data().data();
        for (int n = 0; n < batch; ++n) {
            const std::size_t nbase = static_cast<std::size_t>(n) * channels * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                int best = 0;
                double best_v = pd[nbase + i];
                for (int c = 1; c < channels; ++c) {
                    const double v = pd[nbase + static_cast<std::size_t>(c) * plane + i];
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                labels[static_cast<std::size_t>(n) * plane + i] = static_cast<std::uint8_t>(best);
            }
        }
        return labels;
    }

    SplitModelWeights snapshot() const {
        SplitModelWeights w;
        fe_.collect(w.front_end);
        for (const auto& unit : server_) unit.collect(w.server);
        be_.collect(w.back_end);
        return w;
    }

    void load(const SplitModelWeights& w) {
        load_front_end(w.front_end);
        load_server(w.server);
        load_back_end(w.back_end);
    }

    void load_front_end(const ParamSet& set) {
        if (fe_.load(set, 0) != set.size()) {
            throw shape_error("load: front-end parameter set has trailing entries");
        }
    }
    void load_server(const ParamSet& set) {
        std::size_t at = 0;
        for (auto& unit : server_) at = unit.load(set, at);
        if (at != set.size()) throw shape_error("load: server parameter set has trailing entries");
    }
    void load_back_end(const ParamSet& set) {
        if (be_.load(set, 0) != set.size()) {
            throw shape_error("load: back-end parameter set has trailing entries");
        }
    }

    /// Trainable client parameters (front-end + back-end), in a fixed order.
    std::vector<NamedParam> client_params() {
        std::vector<NamedParam> out;
        fe_.collect_trainable(out);
        be_.collect_trainable(out);
        return out;
    }

    std::vector<NamedParam> server_params() {
        std::vector<NamedParam> out;
        for (auto& unit : server_) unit.collect_trainable(out);
        return out;
    }

private:
    ArchConfig cfg_;
    detail::ConvUnit fe_;
    std::vector<detail::ConvUnit> server_;
    detail::ConvUnit be_;
};

/// Builds and deterministically initializes a split U-Net, returning its
/// weight snapshot (the global model at deployment time).
inline SplitModelWeights build_split_unet(const ArchConfig& cfg, std::uint64_t seed) {
    SplitUNet net(cfg);
    net.init(seed);
    return net.snapshot();
}

}  // namespace splitfed
