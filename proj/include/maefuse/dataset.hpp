#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "maefuse/nifti.hpp"
#include "maefuse/slice.hpp"

namespace maefuse {

// One line of a JSONL dataset manifest:
//   {"path": "...", "axis": 0|1|2, "index": k, "label": id?,
//    "mask_path": "...?", "dataset_tag": "..."}
// Paths are resolved relative to the manifest file's directory. For volumes
// that get isotropically resampled, `index` refers to the resampled grid.
struct ManifestEntry {
    std::string path;
    int axis = 2;
    long index = 0;
    std::optional<int> label;
    std::string mask_path;   // empty = none
    std::string dataset_tag; // source cohort tag for stratified sampling
};

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read manifest " + file.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            e.axis = j.at("axis").get<int>();
            e.index = j.at("index").get<long>();
            if (j.contains("label") && !j["label"].is_null()) e.label = j["label"].get<int>();
            e.mask_path = j.value("mask_path", "");
            e.dataset_tag = j.value("dataset_tag", "");
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw DataError("manifest " + file.string() + " line " + std::to_string(line_no) + ": " +
                            ex.what());
        }
    }
    return entries;
}

inline void save_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write manifest " + file.string());
    for (const auto& e : entries) {
        nlohmann::json j;
        j["path"] = e.path;
        j["axis"] = e.axis;
        j["index"] = e.index;
        if (e.label) j["label"] = *e.label;
        if (!e.mask_path.empty()) j["mask_path"] = e.mask_path;
        j["dataset_tag"] = e.dataset_tag;
        out << j.dump() << "\n";
    }
}

struct DatasetIndex {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::filesystem::path base_dir; // manifest location; entry paths resolve against it

    void validate() const {
        std::set<std::tuple<std::string, int, long>> seen;
        for (const auto& e : entries) {
            if (e.axis < 0 || e.axis > 2) throw DataError("manifest entry: axis out of range");
            if (!seen.insert({e.path, e.axis, e.index}).second) {
                throw DataError("manifest entry duplicated: " + e.path + " axis " +
                                std::to_string(e.axis) + " index " + std::to_string(e.index));
            }
            if (e.label && (*e.label < 0 || *e.label >= static_cast<int>(class_names.size()))) {
                throw DataError("manifest entry label " + std::to_string(*e.label) +
                                " outside class set of " + std::to_string(class_names.size()));
            }
        }
    }

    std::filesystem::path resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline std::vector<std::string> load_class_names(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read class names " + file.string());
    nlohmann::json j;
    try {
        in >> j;
        return j.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("bad class-name file " + file.string() + ": " + ex.what());
    }
}

inline DatasetIndex load_dataset_index(const std::filesystem::path& manifest,
                                       std::vector<std::string> class_names = {}) {
    DatasetIndex idx;
    idx.entries = load_manifest(manifest);
    idx.base_dir = manifest.parent_path();
    if (class_names.empty()) {
        int max_label = -1;
        for (const auto& e : idx.entries) {
            if (e.label) max_label = std::max(max_label, *e.label);
        }
        for (int i = 0; i <= max_label; ++i) class_names.push_back("class_" + std::to_string(i));
    }
    idx.class_names = std::move(class_names);
    idx.validate();
    return idx;
}

// Uniform sample of n entries per (class, dataset_tag) group, without
// replacement, deterministic under the RNG state. Groups are visited in
// sorted (label, tag) order.
inline DatasetIndex few_shot_sample(const DatasetIndex& index, long n_per_class, Rng& rng) {
    if (n_per_class < 1) throw ConfigError("few_shot_sample: n_per_class must be >= 1");
    std::map<std::pair<int, std::string>, std::vector<size_t>> groups;
    for (size_t i = 0; i < index.entries.size(); ++i) {
        const auto& e = index.entries[i];
        if (!e.label) throw DataError("few_shot_sample: entry without label: " + e.path);
        groups[{*e.label, e.dataset_tag}].push_back(i);
    }
    DatasetIndex out;
    out.class_names = index.class_names;
    out.base_dir = index.base_dir;
    for (auto& [key, ids] : groups) {
        if (static_cast<long>(ids.size()) < n_per_class) {
            const std::string cls = key.first < static_cast<int>(index.class_names.size())
                                        ? index.class_names[static_cast<size_t>(key.first)]
                                        : std::to_string(key.first);
            throw DataError("few_shot_sample: class '" + cls + "' (tag '" + key.second + "') has " +
                            std::to_string(ids.size()) + " entries, need " +
                            std::to_string(n_per_class));
        }
        // partial Fisher-Yates: the first n positions become the sample
        for (long j = 0; j < n_per_class; ++j) {
            const size_t pick = static_cast<size_t>(j) +
                                static_cast<size_t>(rng.uniform_int(ids.size() - static_cast<size_t>(j)));
            std::swap(ids[static_cast<size_t>(j)], ids[pick]);
            out.entries.push_back(index.entries[ids[static_cast<size_t>(j)]]);
        }
    }
    return out;
}

enum class MaskKind { None, Brain, Seg };

enum class PercentileScope { PerSlice, PerVolume };

struct LoadOptions {
    long target = 224;
    bool resample = true; // isotropic resampling before slicing
    PercentileScope percentile_scope = PercentileScope::PerSlice;
    MaskKind mask_kind = MaskKind::None;
    double weight_tau = 0.2;
    double weight_min = 0.05;
};

// Loads manifest entries into SliceRecords, caching (resampled) volumes.
class SliceLoader {
public:
    SliceLoader(const DatasetIndex& index, LoadOptions opts) : index_(index), opts_(opts) {}

    SliceRecord load(const ManifestEntry& e) {
        const Volume& vol = volume(e.path);
        SliceRecord rec;
        rec.subject_id = vol.subject_id.empty() ? e.path : vol.subject_id;
        rec.axis = e.axis;
        rec.index = e.index;
        rec.label = e.label;
        rec.dataset_tag = e.dataset_tag;
        Image2D raw = slice_at(vol, e.axis, e.index);
        const ClampBounds bounds = opts_.percentile_scope == PercentileScope::PerVolume
                                       ? volume_bounds(e.path, vol)
                                       : percentile_bounds(raw.v);
        rec.image = preprocess_slice_with_bounds(raw, bounds, opts_.target);
        if (!e.mask_path.empty() && opts_.mask_kind != MaskKind::None) {
            const Volume& mvol = mask_volume(e.mask_path);
            if (mvol.dims != volume(e.path).dims) {
                throw DataError("mask volume " + e.mask_path + " dims do not match image volume " +
                                e.path);
            }
            MaskImage raw_mask = slice_as_mask(mvol, e.axis, e.index);
            MaskImage fitted = FitGeometry::compute(raw_mask.rows, raw_mask.cols, opts_.target)
                                   .apply(raw_mask);
            if (opts_.mask_kind == MaskKind::Brain) {
                if (!fitted.is_binary()) {
                    throw DataError("brain mask " + e.mask_path + " is not binary");
                }
                rec.brain_mask = std::move(fitted);
                rec.weight = static_cast<float>(
                    brain_coverage_weight(*rec.brain_mask, opts_.weight_tau, opts_.weight_min));
            } else {
                rec.seg_mask = std::move(fitted);
            }
        }
        return rec;
    }

    std::vector<SliceRecord> load_all(const std::vector<ManifestEntry>& entries) {
        std::vector<SliceRecord> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(load(e));
        return out;
    }

    // Fills every cache these entries can touch. After warming, load() takes
    // the read-only path, so parallel loads are safe.
    void warm(const std::vector<ManifestEntry>& entries) {
        for (const auto& e : entries) {
            const Volume& vol = volume(e.path);
            if (opts_.percentile_scope == PercentileScope::PerVolume) volume_bounds(e.path, vol);
            if (!e.mask_path.empty() && opts_.mask_kind != MaskKind::None) mask_volume(e.mask_path);
        }
    }

    const Volume& volume(const std::string& rel) {
        auto it = volumes_.find(rel);
        if (it != volumes_.end()) return it->second;
        Volume v = load_volume(index_.resolve(rel));
        if (opts_.resample) v = resample_isotropic(v);
        return volumes_.emplace(rel, std::move(v)).first->second;
    }

private:
    const Volume& mask_volume(const std::string& rel) {
        auto it = masks_.find(rel);
        if (it != masks_.end()) return it->second;
        Volume v = load_volume(index_.resolve(rel));
        if (opts_.resample) v = resample_isotropic_nearest(v);
        return masks_.emplace(rel, std::move(v)).first->second;
    }

    ClampBounds volume_bounds(const std::string& rel, const Volume& vol) {
        auto it = bounds_.find(rel);
        if (it != bounds_.end()) return it->second;
        return bounds_.emplace(rel, percentile_bounds(vol.data)).first->second;
    }

    const DatasetIndex& index_;
    LoadOptions opts_;
    std::unordered_map<std::string, Volume> volumes_;
    std::unordered_map<std::string, Volume> masks_;
    std::unordered_map<std::string, ClampBounds> bounds_;
};

} // namespace maefuse
