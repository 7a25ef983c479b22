#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitfed/model.hpp"
#include "splitfed/weights.hpp"

namespace splitfed {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

inline void append_section(nlohmann::json& manifest, const char* key, const ParamSet& set,
                           std::vector<double>& blob) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& arr : set) {
        nlohmann::json e;
        e["name"] = arr.name;
        e["shape"] = arr.shape;
        e["byte_offset"] = blob.size() * sizeof(double);
        e["trainable"] = arr.trainable;
        blob.insert(blob.end(), arr.values.begin(), arr.values.end());
        entries.push_back(std::move(e));
    }
    manifest["sections"][key] = std::move(entries);
}

inline ParamSet read_section(const nlohmann::json& manifest, const char* key,
                             const std::vector<double>& blob) {
    ParamSet set;
    for (const auto& e : manifest.at("sections").at(key)) {
        NamedArray arr;
        arr.name = e.at("name").get<std::string>();
        arr.shape = e.at("shape").get<Shape>();
        arr.trainable = e.at("trainable").get<bool>();
        const std::size_t offset = e.at("byte_offset").get<std::size_t>();
        if (offset % sizeof(double) != 0) {
            throw std::runtime_error("checkpoint: misaligned byte_offset for '" + arr.name + "'");
        }
        const std::size_t begin = offset / sizeof(double);
        const std::size_t count = static_cast<std::size_t>(numel(arr.shape));
        if (begin + count > blob.size()) {
            throw std::runtime_error("checkpoint: blob too short for '" + arr.name + "'");
        }
        arr.values.assign(blob.begin() + begin, blob.begin() + begin + count);
        set.push_back(std::move(arr));
    }
    return set;
}

inline void write_le_blob(const std::string& path, const std::vector<double>& blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    static_assert(sizeof(double) == 8);
    for (double v : blob) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        out.write(reinterpret_cast<const char*>(&bits), 8);
    }
    if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

inline std::vector<double> read_le_blob(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 8 != 0) throw std::runtime_error("checkpoint: blob size is not a multiple of 8");
    std::vector<double> blob(bytes.size() / 8);
    for (std::size_t i = 0; i < blob.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, bytes.data() + i * 8, 8);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        std::memcpy(&blob[i], &bits, 8);
    }
    return blob;
}

}  // namespace detail

/// Writes `<prefix>.json` (manifest: name, shape, byte offset per
/// parameter) and `<prefix>.bin` (flat little-endian f64 blob).
inline void save_checkpoint(const SplitModelWeights& weights, const std::string& prefix) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    std::vector<double> blob;
    detail::append_section(manifest, "front_end", weights.front_end, blob);
    detail::append_section(manifest, "server", weights.server, blob);
    detail::append_section(manifest, "back_end", weights.back_end, blob);

    std::ofstream mout(prefix + ".json", std::ios::trunc);
    if (!mout) throw std::runtime_error("checkpoint: cannot open '" + prefix + ".json'");
    mout << manifest.dump(2) << '\n';
    detail::write_le_blob(prefix + ".bin", blob);
}

inline SplitModelWeights load_checkpoint(const std::string& prefix) {
    std::ifstream min(prefix + ".json");
    if (!min) throw std::runtime_error("checkpoint: cannot open '" + prefix + ".json'");
    nlohmann::json manifest = nlohmann::json::parse(min);
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
        throw std::runtime_error("checkpoint: unsupported format_version");
    }
    const std::vector<double> blob = detail::read_le_blob(prefix + ".bin");
    SplitModelWeights w;
    w.front_end = detail::read_section(manifest, "front_end", blob);
    w.server = detail::read_section(manifest, "server", blob);
    w.back_end = detail::read_section(manifest, "back_end", blob);
    return w;
}

/// Loads and validates the checkpoint against an architecture: every
/// parameter name and shape must match a freshly built model.
inline SplitModelWeights load_checkpoint(const std::string& prefix, const ArchConfig& cfg) {
    SplitModelWeights w = load_checkpoint(prefix);
    SplitUNet reference(cfg);
    check_same_structure(reference.snapshot(), w, "checkpoint");
    return w;
}

}  // namespace splitfed
