#include "fs2ffpe/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs2ffpe {

namespace {
constexpr char kMagic[8] = {'F', 'S', '2', 'F', 'F', 'P', 'E', '\0'};
}

void Checkpoint::drop_prefix(const std::string& prefix) {
    for (auto it = tensors.begin(); it != tensors.end();) {
        if (it->first.rfind(prefix, 0) == 0) it = tensors.erase(it);
        else ++it;
    }
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["iteration"] = iteration;
    header["config_hash"] = config_hash;
    header["precision"] = precision;
    header["meta"] = meta;
    nlohmann::json dir = nlohmann::json::array();
    for (const auto& [name, blob] : tensors) {
        dir.push_back({{"name", name},
                       {"shape", blob.shape},
                       {"dtype_bytes", blob.dtype_bytes},
                       {"nbytes", blob.bytes.size()}});
    }
    header["tensors"] = std::move(dir);
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint: " + tmp);
        f.write(kMagic, sizeof kMagic);
        const std::uint32_t version = kCheckpointVersion;
        f.write(reinterpret_cast<const char*>(&version), sizeof version);
        const std::uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, blob] : tensors)
            f.write(reinterpret_cast<const char*>(blob.bytes.data()),
                    static_cast<std::streamsize>(blob.bytes.size()));
        if (!f) throw IoError("short write on checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kCheckpointVersion)
        throw ConfigError("checkpoint format version " + std::to_string(version) +
                          " unsupported; this build reads version " +
                          std::to_string(kCheckpointVersion) + " (" + path + ")");
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(hs);
    Checkpoint ck;
    ck.iteration = header.at("iteration").get<long long>();
    ck.config_hash = header.at("config_hash").get<std::uint64_t>();
    ck.precision = header.at("precision").get<int>();
    ck.meta = header.at("meta");
    for (const auto& item : header.at("tensors")) {
        Blob b;
        b.shape = item.at("shape").get<std::vector<int>>();
        b.dtype_bytes = item.at("dtype_bytes").get<int>();
        b.bytes.resize(item.at("nbytes").get<std::size_t>());
        f.read(reinterpret_cast<char*>(b.bytes.data()),
               static_cast<std::streamsize>(b.bytes.size()));
        if (!f) throw IoError("truncated checkpoint payload: " + path);
        ck.tensors[item.at("name").get<std::string>()] = std::move(b);
    }
    return ck;
}

}  // namespace fs2ffpe
