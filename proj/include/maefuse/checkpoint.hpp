#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maefuse/optim.hpp"
#include "maefuse/params.hpp"
#include "maefuse/version.hpp"

namespace maefuse {

// Checkpoint = <prefix>.json manifest + <prefix>.bin blob of little-endian
// float32 tensors, concatenated in manifest order (parameters sorted by
// name, optimizer moments after them). Round-trips are bitwise lossless.
struct CheckpointData {
    int format_version = kCheckpointFormatVersion;
    nlohmann::json config;
    uint64_t seed = 0;
    long step = 0;

    struct Entry {
        std::string name;
        Shape shape;
        bool frozen = false;
        size_t offset = 0; // float index into blob
    };
    std::vector<Entry> params;
    std::vector<Entry> optim_m, optim_v;
    long optim_step = 0;
    std::vector<float> blob;

    const Entry* find_param(const std::string& name) const {
        for (const auto& e : params) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }
};

inline void save_checkpoint(const std::filesystem::path& prefix, const ParamSet& params,
                            const AdamW* opt, const nlohmann::json& config_snapshot, uint64_t seed,
                            long step) {
    CheckpointData d;
    d.config = config_snapshot;
    d.seed = seed;
    d.step = step;
    auto push = [&](std::vector<CheckpointData::Entry>& list, const std::string& name,
                    const Shape& shape, bool frozen, const std::vector<float>& data) {
        CheckpointData::Entry e{name, shape, frozen, d.blob.size()};
        d.blob.insert(d.blob.end(), data.begin(), data.end());
        list.push_back(std::move(e));
    };
    for (const auto& p : params.items()) { // items() is name-sorted
        push(d.params, p.name, p.tensor.shape(), p.frozen, p.tensor.data());
    }
    if (opt) {
        d.optim_step = opt->step_count();
        for (const auto& p : params.items()) {
            auto it = opt->moments().find(p.name);
            if (it == opt->moments().end()) continue;
            push(d.optim_m, p.name, p.tensor.shape(), false, it->second.m);
            push(d.optim_v, p.name, p.tensor.shape(), false, it->second.v);
        }
    }

    nlohmann::json j;
    j["format_version"] = d.format_version;
    j["seed"] = d.seed;
    j["step"] = d.step;
    j["optim_step"] = d.optim_step;
    j["config"] = d.config;
    auto entries_json = [](const std::vector<CheckpointData::Entry>& list, bool with_frozen) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : list) {
            nlohmann::json je = {{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}};
            if (with_frozen) je["frozen"] = e.frozen;
            arr.push_back(std::move(je));
        }
        return arr;
    };
    j["params"] = entries_json(d.params, true);
    j["optim_m"] = entries_json(d.optim_m, false);
    j["optim_v"] = entries_json(d.optim_v, false);
    j["blob_floats"] = d.blob.size();

    std::filesystem::create_directories(prefix.parent_path());
    std::ofstream js(prefix.string() + ".json");
    if (!js) throw DataError("cannot write checkpoint manifest " + prefix.string() + ".json");
    js << j.dump(2) << "\n";
    std::ofstream bs(prefix.string() + ".bin", std::ios::binary);
    if (!bs) throw DataError("cannot write checkpoint blob " + prefix.string() + ".bin");
    bs.write(reinterpret_cast<const char*>(d.blob.data()),
             static_cast<std::streamsize>(d.blob.size() * 4));
}

inline CheckpointData load_checkpoint(const std::filesystem::path& prefix) {
    std::ifstream js(prefix.string() + ".json");
    if (!js) throw DataError("cannot read checkpoint manifest " + prefix.string() + ".json");
    nlohmann::json j;
    try {
        js >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint manifest: " + std::string(e.what()));
    }
    CheckpointData d;
    try {
        d.format_version = j.at("format_version").get<int>();
        if (d.format_version != kCheckpointFormatVersion) {
            throw DataError("checkpoint format version " + std::to_string(d.format_version) +
                            " does not match supported version " +
                            std::to_string(kCheckpointFormatVersion));
        }
        d.seed = j.at("seed").get<uint64_t>();
        d.step = j.at("step").get<long>();
        d.optim_step = j.value("optim_step", 0L);
        d.config = j.at("config");
        auto read_entries = [&](const char* key, std::vector<CheckpointData::Entry>& list) {
            for (const auto& je : j.at(key)) {
                CheckpointData::Entry e;
                e.name = je.at("name").get<std::string>();
                e.shape = je.at("shape").get<Shape>();
                e.offset = je.at("offset").get<size_t>();
                e.frozen = je.value("frozen", false);
                list.push_back(std::move(e));
            }
        };
        read_entries("params", d.params);
        read_entries("optim_m", d.optim_m);
        read_entries("optim_v", d.optim_v);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint manifest: " + std::string(e.what()));
    }

    size_t expected = 0;
    for (const auto* list : {&d.params, &d.optim_m, &d.optim_v}) {
        for (const auto& e : *list) {
            expected = std::max(expected, e.offset + static_cast<size_t>(shape_numel(e.shape)));
        }
    }
    std::ifstream bs(prefix.string() + ".bin", std::ios::binary);
    if (!bs) throw DataError("cannot read checkpoint blob " + prefix.string() + ".bin");
    d.blob.resize(expected);
    bs.read(reinterpret_cast<char*>(d.blob.data()), static_cast<std::streamsize>(expected * 4));
    if (bs.gcount() != static_cast<std::streamsize>(expected * 4)) {
        throw DataError("checkpoint blob corrupted: expected " + std::to_string(expected * 4) +
                        " bytes, got " + std::to_string(bs.gcount()));
    }
    return d;
}

// Copies checkpoint tensors into an existing (freshly constructed) model.
inline void apply_checkpoint(const CheckpointData& d, ParamSet& params) {
    for (auto& p : params.items()) {
        const auto* e = d.find_param(p.name);
        if (!e) throw DataError("checkpoint lacks parameter " + p.name);
        if (e->shape != p.tensor.shape()) {
            throw DataError("checkpoint parameter " + p.name + " has shape " + shape_str(e->shape) +
                            ", model expects " + shape_str(p.tensor.shape()));
        }
        std::copy(d.blob.begin() + static_cast<long>(e->offset),
                  d.blob.begin() + static_cast<long>(e->offset) + p.tensor.numel(),
                  p.tensor.data().begin());
    }
}

inline void apply_optimizer_state(const CheckpointData& d, AdamW& opt) {
    opt.set_step_count(d.optim_step);
    for (size_t i = 0; i < d.optim_m.size(); ++i) {
        const auto& em = d.optim_m[i];
        const auto& ev = d.optim_v[i];
        auto& slot = opt.moments()[em.name];
        const long n = shape_numel(em.shape);
        slot.m.assign(d.blob.begin() + static_cast<long>(em.offset),
                      d.blob.begin() + static_cast<long>(em.offset) + n);
        slot.v.assign(d.blob.begin() + static_cast<long>(ev.offset),
                      d.blob.begin() + static_cast<long>(ev.offset) + n);
    }
}

} // namespace maefuse
