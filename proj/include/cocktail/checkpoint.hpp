#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cocktail/extractor.hpp"

// Checkpoint format: a directory holding manifest.json (tensor names,
// shapes, dtype, byte offsets, config hash, step counter) plus params.bin
// with little-endian raw values in manifest order. Round trips are
// bit-exact.

namespace cocktail {

using Json = nlohmann::ordered_json;

inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string json_hash(const Json& j) { return fnv1a_hex(j.dump()); }

template <typename Real>
constexpr const char* dtype_name() {
    return sizeof(Real) == 4 ? "f32" : "f64";
}

struct CheckpointMeta {
    std::uint64_t step = 0;
    std::string config_hash;
    std::string variant;  // extractor variant: attention | ablation
    Json config = Json::object();
    Json extra = Json::object();  // optimizer info, stage tag, ...
};

template <typename Real>
void save_checkpoint(const std::string& dir, const ParamList<Real>& named, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    Json manifest;
    manifest["format"] = "cocktail-ckpt-v1";
    manifest["dtype"] = dtype_name<Real>();
    manifest["step"] = meta.step;
    manifest["config_hash"] = meta.config_hash;
    manifest["variant"] = meta.variant;
    manifest["config"] = meta.config;
    manifest["extra"] = meta.extra;

    Json tensors = Json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : named.items) {
        Json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        entry["bytes"] = t.numel() * sizeof(Real);
        tensors.push_back(entry);
        offset += t.numel() * sizeof(Real);
    }
    manifest["tensors"] = tensors;
    manifest["total_bytes"] = offset;

    {
        std::ofstream mf(std::filesystem::path(dir) / "manifest.json");
        if (!mf) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
        mf << manifest.dump(2) << "\n";
    }
    {
        std::ofstream bin(std::filesystem::path(dir) / "params.bin", std::ios::binary);
        if (!bin) throw std::runtime_error("checkpoint: cannot write params.bin in " + dir);
        for (const auto& [name, t] : named.items)
            bin.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(Real)));
        if (!bin) throw std::runtime_error("checkpoint: write failed in " + dir);
    }
}

template <typename Real>
struct LoadedCheckpoint {
    Json manifest;
    CheckpointMeta meta;
    std::map<std::string, std::pair<Shape, std::vector<Real>>> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    // Copies stored values into the live parameter; shapes must match.
    void apply(const std::string& name, Tensor<Real>& param) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
        if (it->second.first != param.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": stored " +
                                     shape_str(it->second.first) + " vs model " + shape_str(param.shape()));
        std::copy(it->second.second.begin(), it->second.second.end(), param.data());
    }

    void apply_all(ParamList<Real>& named) const {
        for (auto& [name, t] : named.items) apply(name, t);
    }
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& dir, const std::string& expect_hash = "") {
    LoadedCheckpoint<Real> out;
    {
        std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
        if (!mf) throw std::runtime_error("checkpoint: cannot open manifest in " + dir);
        mf >> out.manifest;
    }
    if (out.manifest.value("format", "") != "cocktail-ckpt-v1")
        throw std::runtime_error("checkpoint: unknown format in " + dir);
    if (out.manifest.value("dtype", "") != dtype_name<Real>())
        throw std::runtime_error("checkpoint: dtype mismatch in " + dir + " (stored " +
                                 out.manifest.value("dtype", "?") + ")");
    out.meta.step = out.manifest.value("step", std::uint64_t(0));
    out.meta.config_hash = out.manifest.value("config_hash", "");
    out.meta.variant = out.manifest.value("variant", "");
    out.meta.config = out.manifest.value("config", Json::object());
    out.meta.extra = out.manifest.value("extra", Json::object());
    if (!expect_hash.empty() && out.meta.config_hash != expect_hash)
        throw std::runtime_error("checkpoint: config hash mismatch, stored " + out.meta.config_hash +
                                 " expected " + expect_hash);

    const std::size_t total = out.manifest.value("total_bytes", std::size_t(0));
    std::ifstream bin(std::filesystem::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot open params.bin in " + dir);
    bin.seekg(0, std::ios::end);
    const std::size_t actual = static_cast<std::size_t>(bin.tellg());
    if (actual != total)
        throw std::runtime_error("checkpoint: params.bin truncated (" + std::to_string(actual) + " of " +
                                 std::to_string(total) + " bytes)");
    for (const auto& entry : out.manifest["tensors"]) {
        const std::string name = entry["name"];
        Shape shape = entry["shape"].get<Shape>();
        const std::size_t offset = entry["offset"];
        const std::size_t bytes = entry["bytes"];
        if (bytes != shape_numel(shape) * sizeof(Real))
            throw std::runtime_error("checkpoint: inconsistent byte count for " + name);
        std::vector<Real> values(shape_numel(shape));
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
        if (!bin) throw std::runtime_error("checkpoint: short read for " + name);
        out.tensors.emplace(name, std::make_pair(std::move(shape), std::move(values)));
    }
    return out;
}

}  // namespace cocktail
