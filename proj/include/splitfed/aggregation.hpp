#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfed/weights.hpp"

namespace splitfed {

/// The weighting vectors behind smart averaging: relative data amounts d,
/// softmax quality scores q, and the combined weights r = (q . d)/(q'd).
struct AggregationWeights {
    std::vector<double> d;
    std::vector<double> q;
    std::vector<double> r;
};

/// Client unreliability indicator: mean plus two (population) standard
/// deviations of the per-sample losses - the upper bound of a 95%
/// confidence interval for the mean loss under a normality assumption.
inline double unreliability_indicator(const std::vector<double>& losses) {
    if (losses.empty()) {
        throw std::invalid_argument("unreliability_indicator: empty loss list");
    }
    const double n = static_cast<double>(losses.size());
    double mean = 0.0;
    for (double v : losses) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : losses) var += (v - mean) * (v - mean);
    var /= n;
    return mean + 2.0 * std::sqrt(var);
}

/// Quality scores q = softmax(alpha * (1 - b)), computed with max
/// subtraction. Strictly positive, sums to 1. Non-finite indicators abort:
/// they can only arrive through extreme channel corruption and masking
/// them would hide a diverged run.
inline std::vector<double> quality_scores(const std::vector<double>& b, double alpha) {
    if (b.empty()) throw std::invalid_argument("quality_scores: empty indicator vector");
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!std::isfinite(b[i])) {
            throw nonfinite_error("quality_scores",
                                  "quality_scores: non-finite indicator b[" + std::to_string(i) +
                                      "] = " + std::to_string(b[i]));
        }
    }
    std::vector<double> logits(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) logits[i] = alpha * (1.0 - b[i]);
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> q(b.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = std::exp(logits[i] - mx);
        denom += q[i];
    }
    for (double& v : q) v /= denom;
    return q;
}

/// Combines quality scores with relative data amounts d = m / sum(m) via
/// the Hadamard product: r = (q . d) / (q'd). Sums to 1.
inline AggregationWeights smart_weights(const std::vector<double>& b, const std::vector<int>& m,
                                        double alpha) {
    if (b.size() != m.size()) {
        throw std::invalid_argument("smart_weights: b has " + std::to_string(b.size()) +
                                    " entries but m has " + std::to_string(m.size()));
    }
    double total = 0.0;
    for (int c : m) {
        if (c < 1) throw std::invalid_argument("smart_weights: sample counts must be >= 1");
        total += static_cast<double>(c);
    }
    AggregationWeights w;
    w.d.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) w.d[i] = static_cast<double>(m[i]) / total;
    w.q = quality_scores(b, alpha);
    double dot = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) dot += w.q[i] * w.d[i];
    w.r.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) w.r[i] = w.q[i] * w.d[i] / dot;
    return w;
}

namespace detail {

inline void check_snapshots(const std::vector<const SplitModelWeights*>& snapshots) {
    if (snapshots.empty()) throw std::invalid_argument("averaging requires at least one snapshot");
    for (std::size_t i = 1; i < snapshots.size(); ++i) {
        check_same_structure(*snapshots[0], *snapshots[i], "averaging");
    }
}

}  // namespace detail

/// Uniform-weight mean of the snapshots. Computed as x0 + mean(xi - x0)
/// so that averaging identical snapshots reproduces them bit-exactly.
inline SplitModelWeights naive_average(const std::vector<const SplitModelWeights*>& snapshots) {
    detail::check_snapshots(snapshots);
    const double inv_n = 1.0 / static_cast<double>(snapshots.size());
    SplitModelWeights out;
    for_each_section(out, snapshots, [&](ParamSet& dst, const std::vector<const ParamSet*>& src) {
        dst = *src[0];
        for (auto& arr : dst) {
            const std::size_t ai = static_cast<std::size_t>(&arr - dst.data());
            for (std::size_t k = 0; k < arr.values.size(); ++k) {
                const double base = (*src[0])[ai].values[k];
                double delta = 0.0;
                for (std::size_t i = 1; i < src.size(); ++i) {
                    delta += (*src[i])[ai].values[k] - base;
                }
                arr.values[k] = base + delta * inv_n;
            }
        }
    });
    return out;
}

/// Sample-count weighted mean: sum(m_i * W_i) / sum(m_i), computed in the
/// centered form x0 + sum(m_i * (x_i - x0)) / sum(m_i) so a single client
/// (or identical snapshots) comes back bit-exactly.
inline SplitModelWeights federated_average(const std::vector<const SplitModelWeights*>& snapshots,
                                           const std::vector<int>& m) {
    detail::check_snapshots(snapshots);
    if (m.size() != snapshots.size()) {
        throw std::invalid_argument("federated_average: " + std::to_string(snapshots.size()) +
                                    " snapshots but " + std::to_string(m.size()) + " counts");
    }
    double total = 0.0;
    for (int c : m) {
        if (c < 1) throw std::invalid_argument("federated_average: sample counts must be >= 1");
        total += static_cast<double>(c);
    }
    const double inv_total = 1.0 / total;
    SplitModelWeights out;
    for_each_section(out, snapshots, [&](ParamSet& dst, const std::vector<const ParamSet*>& src) {
        dst = *src[0];
        for (auto& arr : dst) {
            const std::size_t ai = static_cast<std::size_t>(&arr - dst.data());
            for (std::size_t k = 0; k < arr.values.size(); ++k) {
                const double base = (*src[0])[ai].values[k];
                double delta = 0.0;
                for (std::size_t i = 1; i < src.size(); ++i) {
                    delta += static_cast<double>(m[i]) * ((*src[i])[ai].values[k] - base);
                }
                arr.values[k] = base + delta * inv_total;
            }
        }
    });
    return out;
}

/// General simplex-weighted mean: sum(r_i * W_i). Used by smart averaging
/// with r from smart_weights.
inline SplitModelWeights weighted_average(const std::vector<const SplitModelWeights*>& snapshots,
                                          const std::vector<double>& r) {
    detail::check_snapshots(snapshots);
    if (r.size() != snapshots.size()) {
        throw std::invalid_argument("weighted_average: " + std::to_string(snapshots.size()) +
                                    " snapshots but " + std::to_string(r.size()) + " weights");
    }
    double sum_r = 0.0;
    for (double v : r) {
        if (!(v >= 0.0)) throw std::invalid_argument("weighted_average: weights must be >= 0");
        sum_r += v;
    }
    if (std::abs(sum_r - 1.0) > 1e-9) {
        throw std::invalid_argument("weighted_average: weights sum to " + std::to_string(sum_r) +
                                    ", expected 1");
    }
    SplitModelWeights out;
    for_each_section(out, snapshots, [&](ParamSet& dst, const std::vector<const ParamSet*>& src) {
        dst = *src[0];
        for (auto& arr : dst) {
            const std::size_t ai = static_cast<std::size_t>(&arr - dst.data());
            for (std::size_t k = 0; k < arr.values.size(); ++k) {
                double acc = 0.0;
                for (std::size_t i = 0; i < src.size(); ++i) {
                    acc += r[i] * (*src[i])[ai].values[k];
                }
                arr.values[k] = acc;
            }
        }
    });
    return out;
}

}  // namespace splitfed
