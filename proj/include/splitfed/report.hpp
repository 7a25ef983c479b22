#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitfed/protocol.hpp"

namespace splitfed {

/// Shortest decimal representation that parses back to the same double.
/// NaN renders as the literal "nan" (the divergence marker in every
/// emitted artifact).
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

/// One metrics record: a per-client row (client_id >= 1) or the global
/// test row (client_id == -1) of one global epoch.
struct MetricsRow {
    int global_epoch = 0;
    int client_id = -1;
    std::string strategy;
    double sigma_noise = 0.0;
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double r_weight = std::numeric_limits<double>::quiet_NaN();
    double test_loss = std::numeric_limits<double>::quiet_NaN();
    double test_accuracy_percent = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> iou;
    bool diverged = false;
};

inline std::vector<MetricsRow> rows_from_result(const SimulationResult& result,
                                                const RunConfig& cfg) {
    std::vector<MetricsRow> rows;
    const int n = cfg.num_clients;
    const std::size_t epochs = result.global_rows.size();
    rows.reserve(epochs * (n + 1));
    for (std::size_t e = 0; e < epochs; ++e) {
        for (int i = 0; i < n; ++i) {
            const ClientEpochMetrics& c = result.client_rows[e * n + i];
            MetricsRow row;
            row.global_epoch = c.global_epoch;
            row.client_id = c.client_id;
            row.strategy = strategy_name(cfg.strategy);
            row.sigma_noise = cfg.sigma_noise;
            row.train_loss = c.train_loss;
            row.val_loss = c.val_loss;
            row.r_weight = c.r_weight;
            row.iou.assign(cfg.arch.num_classes, std::numeric_limits<double>::quiet_NaN());
            row.diverged = c.diverged;
            rows.push_back(std::move(row));
        }
        const GlobalEpochMetrics& g = result.global_rows[e];
        MetricsRow row;
        row.global_epoch = g.global_epoch;
        row.client_id = -1;
        row.strategy = strategy_name(cfg.strategy);
        row.sigma_noise = cfg.sigma_noise;
        row.test_loss = g.test_loss;
        row.test_accuracy_percent = g.accuracy_percent;
        row.iou = g.iou;
        row.diverged = g.diverged;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string metrics_csv_header(int num_classes) {
    std::string header =
        "global_epoch,client_id,strategy,sigma_noise,train_loss,val_loss,r_weight,test_loss,"
        "test_accuracy_percent";
    if (num_classes == kNumClasses) {
        for (int c = 0; c < num_classes; ++c) header += std::string(",iou_") + kClassNames[c];
    } else {
        for (int c = 0; c < num_classes; ++c) header += ",iou_" + std::to_string(c);
    }
    header += ",diverged";
    return header;
}

inline std::string metrics_row_csv(const MetricsRow& row) {
    std::ostringstream os;
    os << row.global_epoch << ',';
    if (row.client_id < 0) {
        os << "global";
    } else {
        os << row.client_id;
    }
    os << ',' << row.strategy << ',' << format_double(row.sigma_noise) << ','
       << format_double(row.train_loss) << ',' << format_double(row.val_loss) << ','
       << format_double(row.r_weight) << ',' << format_double(row.test_loss) << ','
       << format_double(row.test_accuracy_percent);
    for (double v : row.iou) os << ',' << format_double(v);
    os << ',' << (row.diverged ? "true" : "false");
    return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              int num_classes) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "# format_version=1\n";
    out << metrics_csv_header(num_classes) << '\n';
    for (const auto& row : rows) out << metrics_row_csv(row) << '\n';
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

/// Final numbers of one grid cell (or single run).
struct CellSummary {
    double sigma_noise = 0.0;
    std::string strategy;
    double loss = std::numeric_limits<double>::quiet_NaN();
    double accuracy_percent = 0.0;
    std::vector<double> iou;
    bool diverged = false;
};

inline CellSummary summarize(const SimulationResult& result, const RunConfig& cfg) {
    CellSummary cell;
    cell.sigma_noise = cfg.sigma_noise;
    cell.strategy = strategy_name(cfg.strategy);
    const GlobalEpochMetrics& last = result.global_rows.back();
    cell.loss = last.test_loss;
    cell.accuracy_percent = last.accuracy_percent;
    cell.iou = last.iou;
    cell.diverged = result.diverged;
    return cell;
}

/// summary.json: one block per cell, sigma outer / strategy inner order as
/// produced by the grid runner. A diverged cell's loss is the literal
/// string "nan" (JSON has no NaN).
inline nlohmann::json summary_to_json(const std::vector<CellSummary>& cells) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["cells"] = nlohmann::json::array();
    for (const auto& cell : cells) {
        nlohmann::json c;
        c["sigma_noise"] = cell.sigma_noise;
        c["strategy"] = cell.strategy;
        if (std::isfinite(cell.loss)) {
            c["loss"] = cell.loss;
        } else {
            c["loss"] = "nan";
        }
        c["accuracy_percent"] = cell.accuracy_percent;
        c["iou"] = cell.iou;
        c["diverged"] = cell.diverged;
        j["cells"].push_back(std::move(c));
    }
    return j;
}

/// Plain-text comparison table, one row per cell.
inline std::string render_summary_table(const std::vector<CellSummary>& cells) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %-8s %-8s %-8s", "sigma", "method", "loss", "acc");
    os << line;
    const int num_classes = cells.empty() ? kNumClasses : static_cast<int>(cells[0].iou.size());
    for (int c = 0; c < num_classes; ++c) {
        std::snprintf(line, sizeof(line), " %-6s",
                      num_classes == kNumClasses ? kClassNames[c] : std::to_string(c).c_str());
        os << line;
    }
    os << '\n';
    for (const auto& cell : cells) {
        std::snprintf(line, sizeof(line), "%-10.4g %-8s ", cell.sigma_noise, cell.strategy.c_str());
        os << line;
        if (std::isfinite(cell.loss)) {
            std::snprintf(line, sizeof(line), "%-8.2f ", cell.loss);
        } else {
            std::snprintf(line, sizeof(line), "%-8s ", "nan");
        }
        os << line;
        std::snprintf(line, sizeof(line), "%-8.2f", cell.accuracy_percent);
        os << line;
        for (double v : cell.iou) {
            std::snprintf(line, sizeof(line), " %-6.2f", v);
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace splitfed
