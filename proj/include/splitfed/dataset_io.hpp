#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitfed/checkpoint.hpp"
#include "splitfed/data.hpp"

namespace splitfed {

/// Dumps sample groups for cross-implementation comparison: one binary
/// file per sample (image as a flat little-endian f64 grid followed by
/// the mask as a byte grid) plus a manifest describing the layout.
inline void write_dataset_dump(const std::string& dir,
                               const std::vector<std::pair<std::string, const std::vector<Sample>*>>& groups) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["layout"] = "image: size*size f64 little-endian, then mask: size*size u8";
    manifest["groups"] = nlohmann::json::object();
    for (const auto& [name, samples] : groups) {
        fs::create_directories(fs::path(dir) / name);
        nlohmann::json entries = nlohmann::json::array();
        for (std::size_t i = 0; i < samples->size(); ++i) {
            const Sample& s = (*samples)[i];
            char file[64];
            std::snprintf(file, sizeof(file), "sample_%04zu.bin", i);
            const std::string rel = name + "/" + file;
            std::ofstream out(fs::path(dir) / rel, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("dataset dump: cannot open '" + rel + "'");
            for (double v : s.image) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
                out.write(reinterpret_cast<const char*>(&bits), 8);
            }
            out.write(reinterpret_cast<const char*>(s.mask.data()),
                      static_cast<std::streamsize>(s.mask.size()));
            entries.push_back({{"file", rel}, {"size", s.size}});
        }
        manifest["groups"][name] = std::move(entries);
    }
    std::ofstream mout(fs::path(dir) / "manifest.json", std::ios::trunc);
    mout << manifest.dump(2) << '\n';
}

}  // namespace splitfed
