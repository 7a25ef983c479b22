#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splitfed/rng.hpp"
#include "splitfed/tensor.hpp"

namespace splitfed {

/// Segmentation classes of the synthetic embryo-like figures.
enum SegClass : std::uint8_t { kBackground = 0, kZonaPellucida = 1, kTrophectoderm = 2, kBlastocoel = 3, kInnerCellMass = 4 };
inline constexpr int kNumClasses = 5;
inline constexpr const char* kClassNames[kNumClasses] = {"bg", "zp", "te", "bl", "icm"};

/// One grayscale image ([0,1] intensities) with a per-pixel label map.
struct Sample {
    int size = 0;
    std::vector<double> image;        // size*size, row-major
    std::vector<std::uint8_t> mask;   // size*size, values 0..4
};

namespace detail {

inline constexpr double kBaseIntensity[kNumClasses] = {0.12, 0.85, 0.55, 0.30, 0.70};
inline constexpr double kTextureSigma = 0.05;
// Radial band edges of the nested-ellipse figure, as fractions of the
// outer radius: (te_edge, zp_edge] ring is ZP, etc.
inline constexpr double kZpInner = 0.82;
inline constexpr double kTeInner = 0.66;

}  // namespace detail

/// Deterministically renders `n_samples` nested-ellipse figures: outer
/// ring ZP, inner ring TE, interior BL with an off-center ICM blob, the
/// rest background. Identical (seed, n_samples, size) yields identical
/// bytes.
inline std::vector<Sample> generate_dataset(std::uint64_t seed, int n_samples, int size) {
    if (size < 16) {
        throw std::invalid_argument("generate_dataset: size " + std::to_string(size) +
                                    " is too small to fit five regions (minimum 16)");
    }
    rng::GaussianStream noise(rng::derive_seed(seed, {0xDA7AULL}));
    rng::Xoshiro256pp& gen = noise.raw();

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        const double cx = size * (0.5 + gen.uniform(-0.06, 0.06));
        const double cy = size * (0.5 + gen.uniform(-0.06, 0.06));
        const double rx = size * gen.uniform(0.33, 0.42);
        const double ry = rx * gen.uniform(0.8, 1.0);
        const double icm_angle = gen.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double icm_radius = gen.uniform(0.16, 0.26) * std::min(rx, ry);
        const double icm_reach = gen.uniform(0.15, 0.55);
        const double core = detail::kTeInner;
        const double icx = cx + std::cos(icm_angle) * icm_reach * (core * rx - icm_radius);
        const double icy = cy + std::sin(icm_angle) * icm_reach * (core * ry - icm_radius);

        Sample sample;
        sample.size = size;
        sample.image.resize(static_cast<std::size_t>(size) * size);
        sample.mask.resize(static_cast<std::size_t>(size) * size);
        for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
                const double dx = (j - cx) / rx;
                const double dy = (i - cy) / ry;
                const double rho = std::sqrt(dx * dx + dy * dy);
                std::uint8_t label = kBackground;
                if (rho <= 1.0) {
                    if (rho > detail::kZpInner) {
                        label = kZonaPellucida;
                    } else if (rho > detail::kTeInner) {
                        label = kTrophectoderm;
                    } else {
                        label = kBlastocoel;
                        const double ddx = j - icx, ddy = i - icy;
                        if (ddx * ddx + ddy * ddy <= icm_radius * icm_radius) label = kInnerCellMass;
                    }
                }
                const std::size_t idx = static_cast<std::size_t>(i) * size + j;
                sample.mask[idx] = label;
                double v = detail::kBaseIntensity[label] + detail::kTextureSigma * noise.next();
                sample.image[idx] = std::min(1.0, std::max(0.0, v));
            }
        }
        out.push_back(std::move(sample));
    }
    return out;
}

/// Disjoint per-client sample lists with the requested counts.
struct DataPartition {
    std::vector<std::vector<Sample>> clients;
    std::vector<int> counts;
};

/// Seeded-shuffle assignment of contiguous chunks to clients, in client
/// order. Requires sum(counts) <= samples.size().
inline DataPartition partition(const std::vector<Sample>& samples, const std::vector<int>& counts,
                               std::uint64_t seed) {
    std::size_t total = 0;
    for (int c : counts) {
        if (c < 1) throw std::invalid_argument("partition: counts must be positive");
        total += static_cast<std::size_t>(c);
    }
    if (total > samples.size()) {
        throw std::invalid_argument("partition: need " + std::to_string(total) +
                                    " samples but only " + std::to_string(samples.size()) +
                                    " are available");
    }
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Xoshiro256pp gen(rng::derive_seed(seed, {0xBA17ULL}));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = gen.below(i);
        std::swap(order[i - 1], order[j]);
    }

    DataPartition part;
    part.counts = counts;
    std::size_t at = 0;
    for (int c : counts) {
        std::vector<Sample> chunk;
        chunk.reserve(static_cast<std::size_t>(c));
        for (int k = 0; k < c; ++k) chunk.push_back(samples[order[at++]]);
        part.clients.push_back(std::move(chunk));
    }
    return part;
}

/// 85/15 split: train = round(0.85*m), validation gets the remainder but
/// never fewer than one sample.
inline std::pair<int, int> train_val_counts(int m) {
    if (m < 2) throw std::invalid_argument("train_val_counts: need at least 2 samples per client");
    int train = static_cast<int>(std::llround(0.85 * m));
    int val = m - train;
    if (val < 1) {
        val = 1;
        train = m - 1;
    }
    return {train, val};
}

/// Deterministic augmentation core: optional flips followed by a rotation
/// (radians), nearest-neighbor resampled about the image center. Pixels
/// rotated in from outside the frame get the background label and base
/// intensity.
inline Sample augment_with(const Sample& sample, bool hflip, bool vflip, double angle) {
    const int size = sample.size;
    Sample flipped = sample;
    if (hflip || vflip) {
        for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
                const int si = vflip ? size - 1 - i : i;
                const int sj = hflip ? size - 1 - j : j;
                flipped.image[static_cast<std::size_t>(i) * size + j] =
                    sample.image[static_cast<std::size_t>(si) * size + sj];
                flipped.mask[static_cast<std::size_t>(i) * size + j] =
                    sample.mask[static_cast<std::size_t>(si) * size + sj];
            }
        }
    }

    Sample rotated = flipped;
    const double c = std::cos(angle), s = std::sin(angle);
    const double center = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double dx = j - center, dy = i - center;
            const long sj = std::lround(c * dx + s * dy + center);
            const long si = std::lround(-s * dx + c * dy + center);
            const std::size_t idx = static_cast<std::size_t>(i) * size + j;
            if (si >= 0 && si < size && sj >= 0 && sj < size) {
                rotated.image[idx] = flipped.image[static_cast<std::size_t>(si) * size + sj];
                rotated.mask[idx] = flipped.mask[static_cast<std::size_t>(si) * size + sj];
            } else {
                rotated.image[idx] = detail::kBaseIntensity[kBackground];
                rotated.mask[idx] = kBackground;
            }
        }
    }
    return rotated;
}

/// Training augmentation: independent horizontal/vertical flips (p = 0.5
/// each) and a rotation angle drawn uniformly from [-35, +35] degrees.
inline Sample augment(const Sample& sample, rng::Xoshiro256pp& gen) {
    const bool hflip = gen.uniform01() < 0.5;
    const bool vflip = gen.uniform01() < 0.5;
    const double angle = gen.uniform(-35.0, 35.0) * 3.14159265358979323846 / 180.0;
    return augment_with(sample, hflip, vflip, angle);
}

/// Packs samples[indices[begin..end)] into an image batch (B,1,S,S) and a
/// one-hot target batch (B,C,S,S).
inline std::pair<Tensor, Tensor> make_batch(const std::vector<Sample>& samples,
                                            const std::vector<int>& indices, std::size_t begin,
                                            std::size_t end, int num_classes) {
    const int b = static_cast<int>(end - begin);
    const int size = samples.at(indices.at(begin)).size;
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    Tensor x = Tensor::zeros({b, 1, size, size});
    Tensor t = Tensor::zeros({b, num_classes, size, size});
    for (int n = 0; n < b; ++n) {
        const Sample& sample = samples[indices[begin + n]];
        std::copy(sample.image.begin(), sample.image.end(),
                  x.data().begin() + static_cast<std::size_t>(n) * plane);
        for (std::size_t i = 0; i < plane; ++i) {
            t.data()[(static_cast<std::size_t>(n) * num_classes + sample.mask[i]) * plane + i] = 1.0;
        }
    }
    return {x, t};
}

inline std::pair<Tensor, Tensor> make_batch(const std::vector<Sample>& samples, int num_classes) {
    std::vector<int> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return make_batch(samples, idx, 0, samples.size(), num_classes);
}

}  // namespace splitfed
