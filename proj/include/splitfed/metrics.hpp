#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitfed {

/// Percentage of correctly classified pixels.
inline double pixel_accuracy(const std::vector<std::uint8_t>& pred,
                             const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw std::invalid_argument("pixel_accuracy: label maps of sizes " +
                                    std::to_string(pred.size()) + " and " +
                                    std::to_string(truth.size()) + " do not match");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Per-class intersection over union. A class absent from both prediction
/// and truth scores 0 (the reporting convention for collapsed classes).
inline std::vector<double> iou_per_class(const std::vector<std::uint8_t>& pred,
                                         const std::vector<std::uint8_t>& truth, int num_classes) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw std::invalid_argument("iou_per_class: label maps of sizes " +
                                    std::to_string(pred.size()) + " and " +
                                    std::to_string(truth.size()) + " do not match");
    }
    std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) {
            ++inter[pred[i]];
            ++uni[pred[i]];
        } else {
            ++uni[pred[i]];
            ++uni[truth[i]];
        }
    }
    std::vector<double> iou(num_classes, 0.0);
    for (int c = 0; c < num_classes; ++c) {
        if (uni[c] > 0) iou[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    }
    return iou;
}

/// Pooled accumulator for evaluating a whole test set: accuracy and IOU
/// over the union of all pixels.
class SegmentationTally {
public:
    explicit SegmentationTally(int num_classes)
        : inter_(num_classes, 0), uni_(num_classes, 0) {}

    void add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
        if (pred.size() != truth.size()) {
            throw std::invalid_argument("SegmentationTally: label map sizes do not match");
        }
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == truth[i]) {
                ++hits_;
                ++inter_[pred[i]];
                ++uni_[pred[i]];
            } else {
                ++uni_[pred[i]];
                ++uni_[truth[i]];
            }
        }
        total_ += pred.size();
    }

    double accuracy_percent() const {
        return total_ == 0 ? 0.0 : 100.0 * static_cast<double>(hits_) / static_cast<double>(total_);
    }

    std::vector<double> iou() const {
        std::vector<double> out(inter_.size(), 0.0);
        for (std::size_t c = 0; c < inter_.size(); ++c) {
            if (uni_[c] > 0) out[c] = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
        }
        return out;
    }

private:
    std::vector<std::size_t> inter_, uni_;
    std::size_t hits_ = 0, total_ = 0;
};

}  // namespace splitfed
