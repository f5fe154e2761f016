#include "volseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

namespace volseg {

namespace {

constexpr char kMagic[] = "VSEGCKPT1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.spec.validate();

    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, p] : ckpt.params.entries()) {
        manifest.push_back({{"name", name},
                            {"shape", p.value.shape()},
                            {"frozen", p.frozen}});
    }
    const nlohmann::json header = {
        {"format", 1},
        {"spec", spec_to_json(ckpt.spec)},
        {"epoch", ckpt.epoch},
        {"val_dice", ckpt.val_dice},
        {"task", ckpt.task},
        {"stats",
         {{"p_lo", ckpt.stats.p_lo},
          {"p_hi", ckpt.stats.p_hi},
          {"mean", ckpt.stats.mean},
          {"std", ckpt.stats.std}}},
        {"seed", ckpt.params.seed},
        {"params", manifest},
    };
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
    f.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, p] : ckpt.params.entries()) {
        f.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.numel() *
                                             static_cast<int64_t>(sizeof(double))));
    }
    if (!f) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open '" + path + "'");

    char magic[kMagicLen];
    f.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!f || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw DataError("load_checkpoint: '" + path + "' is not a checkpoint file");

    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1u << 24))
        throw DataError("load_checkpoint: corrupt header length in '" + path + "'");
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    if (!f) throw DataError("load_checkpoint: truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_checkpoint: bad header JSON in '" + path + "': " +
                        e.what());
    }

    Checkpoint ckpt;
    try {
        if (header.at("format").get<int>() != 1)
            throw DataError("load_checkpoint: unsupported format in '" + path + "'");
        ckpt.spec = spec_from_json(header.at("spec"));
        ckpt.epoch = header.at("epoch").get<int64_t>();
        ckpt.val_dice = header.at("val_dice").get<double>();
        ckpt.task = header.at("task").get<std::string>();
        const auto& st = header.at("stats");
        ckpt.stats.p_lo = st.at("p_lo").get<double>();
        ckpt.stats.p_hi = st.at("p_hi").get<double>();
        ckpt.stats.mean = st.at("mean").get<double>();
        ckpt.stats.std = st.at("std").get<double>();
        ckpt.params.seed = header.at("seed").get<uint64_t>();

        for (const auto& entry : header.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<int64_t>>();
            for (int64_t d : shape)
                if (d <= 0)
                    throw DataError("load_checkpoint: non-positive dimension for '" +
                                    name + "' in '" + path + "'");
            Tensor t(shape);
            const int64_t n = t.numel();
            f.read(reinterpret_cast<char*>(t.storage().data()),
                   static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(double))));
            if (!f)
                throw DataError("load_checkpoint: truncated payload for '" + name +
                                "' in '" + path + "'");
            ckpt.params.add(name, std::move(t));
            ckpt.params.at(name).frozen = entry.at("frozen").get<bool>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_checkpoint: header field missing in '" + path +
                        "': " + e.what());
    }
    ckpt.spec.validate();
    return ckpt;
}

void check_spec_match(const Checkpoint& ckpt, const NetworkSpec& expected,
                      const std::string& context) {
    if (spec_to_json(ckpt.spec) != spec_to_json(expected))
        throw ConfigError(context +
                          ": checkpoint architecture does not match the "
                          "requested one; refusing a partial load");
}

}  // namespace volseg
