#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fs2ffpe/errors.hpp"
#include "fs2ffpe/tensor.hpp"

namespace fs2ffpe {

inline constexpr int kCheckpointVersion = 1;

// Single-file, versioned container: all network parameters, optimizer
// moments, RNG states and the iteration counter. Writes are atomic
// (temp file + rename). Loading any other format version fails loudly.
struct Checkpoint {
    long long iteration = 0;
    std::uint64_t config_hash = 0;
    int precision = 32;  // bits of the training scalar
    nlohmann::json meta; // specs, rng states, anything structural

    struct Blob {
        std::vector<int> shape;
        int dtype_bytes = 4;  // 4 = float, 8 = double
        std::vector<unsigned char> bytes;
    };
    std::map<std::string, Blob> tensors;

    template <typename T>
    void put(const std::string& name, const Tensor<T>& t) {
        Blob b;
        b.shape = t.shape;
        b.dtype_bytes = static_cast<int>(sizeof(T));
        b.bytes.resize(t.numel() * sizeof(T));
        std::memcpy(b.bytes.data(), t.data(), b.bytes.size());
        tensors[name] = std::move(b);
    }

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    template <typename T>
    Tensor<T> get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ConfigError("checkpoint: missing tensor '" + name + "'");
        const Blob& b = it->second;
        if (b.dtype_bytes != static_cast<int>(sizeof(T)))
            throw ConfigError("checkpoint: tensor '" + name + "' stored with " +
                              std::to_string(b.dtype_bytes * 8) + "-bit scalars");
        Tensor<T> t(b.shape);
        std::memcpy(t.data(), b.bytes.data(), b.bytes.size());
        return t;
    }

    void drop_prefix(const std::string& prefix);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace fs2ffpe
