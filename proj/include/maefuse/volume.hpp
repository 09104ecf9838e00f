#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maefuse/errors.hpp"
#include "maefuse/image.hpp"

namespace maefuse {

// A 3-D scan. Data is row-major with x fastest: index = x + nx*(y + ny*z).
struct Volume {
    std::array<long, 3> dims{0, 0, 0};            // nx, ny, nz
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0}; // mm
    std::vector<float> data;
    std::string modality; // optional sequence tag (T1, T2, FLAIR, PD, T2STAR, SWI, DWI)
    std::string subject_id;

    long index(long x, long y, long z) const { return x + dims[0] * (y + dims[1] * z); }
    float at(long x, long y, long z) const { return data[static_cast<size_t>(index(x, y, z))]; }
    float& at(long x, long y, long z) { return data[static_cast<size_t>(index(x, y, z))]; }
    long voxels() const { return dims[0] * dims[1] * dims[2]; }

    void validate() const {
        for (int i = 0; i < 3; ++i) {
            if (dims[i] < 1) throw DataError("volume: dimension " + std::to_string(i) + " must be >= 1");
            if (!(voxel_size[i] > 0)) {
                throw DataError("volume: voxel size " + std::to_string(i) + " must be positive");
            }
        }
        if (static_cast<long>(data.size()) != voxels()) {
            throw DataError("volume: buffer holds " + std::to_string(data.size()) + " values, dims need " +
                            std::to_string(voxels()));
        }
        for (float v : data) {
            if (!std::isfinite(v)) throw DataError("volume: non-finite voxel value");
        }
    }
};

namespace detail {

// Trilinear or nearest resampling to isotropic voxels at the smallest input
// spacing. Output coordinates map through physical space with half-pixel
// centers per axis.
inline Volume resample_iso(const Volume& v, bool nearest) {
    const double target = std::min({v.voxel_size[0], v.voxel_size[1], v.voxel_size[2]});
    if (v.voxel_size[0] == v.voxel_size[1] && v.voxel_size[1] == v.voxel_size[2]) {
        return v; // already isotropic; keep data bit-identical
    }
    Volume out;
    out.modality = v.modality;
    out.subject_id = v.subject_id;
    out.voxel_size = {target, target, target};
    std::array<std::vector<double>, 3> coord;
    for (int a = 0; a < 3; ++a) {
        const double ratio = v.voxel_size[a] / target;
        out.dims[a] = std::max(1L, std::lround(static_cast<double>(v.dims[a]) * ratio));
        coord[a].resize(static_cast<size_t>(out.dims[a]));
        for (long o = 0; o < out.dims[a]; ++o) {
            double s = (static_cast<double>(o) + 0.5) * target / v.voxel_size[a] - 0.5;
            coord[a][static_cast<size_t>(o)] =
                std::clamp(s, 0.0, static_cast<double>(v.dims[a] - 1));
        }
    }
    out.data.resize(static_cast<size_t>(out.voxels()));
    for (long z = 0; z < out.dims[2]; ++z) {
        for (long y = 0; y < out.dims[1]; ++y) {
            for (long x = 0; x < out.dims[0]; ++x) {
                const double sx = coord[0][static_cast<size_t>(x)];
                const double sy = coord[1][static_cast<size_t>(y)];
                const double sz = coord[2][static_cast<size_t>(z)];
                if (nearest) {
                    out.at(x, y, z) = v.at(std::clamp(std::lround(sx), 0L, v.dims[0] - 1),
                                           std::clamp(std::lround(sy), 0L, v.dims[1] - 1),
                                           std::clamp(std::lround(sz), 0L, v.dims[2] - 1));
                    continue;
                }
                const long x0 = static_cast<long>(sx), y0 = static_cast<long>(sy),
                           z0 = static_cast<long>(sz);
                const long x1 = std::min(x0 + 1, v.dims[0] - 1), y1 = std::min(y0 + 1, v.dims[1] - 1),
                           z1 = std::min(z0 + 1, v.dims[2] - 1);
                const double fx = sx - x0, fy = sy - y0, fz = sz - z0;
                auto lerp = [](double a, double b, double f) { return a + (b - a) * f; };
                const double c00 = lerp(v.at(x0, y0, z0), v.at(x1, y0, z0), fx);
                const double c10 = lerp(v.at(x0, y1, z0), v.at(x1, y1, z0), fx);
                const double c01 = lerp(v.at(x0, y0, z1), v.at(x1, y0, z1), fx);
                const double c11 = lerp(v.at(x0, y1, z1), v.at(x1, y1, z1), fx);
                out.at(x, y, z) = static_cast<float>(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz));
            }
        }
    }
    return out;
}

} // namespace detail

inline Volume resample_isotropic(const Volume& v) { return detail::resample_iso(v, false); }

// Label volumes take the nearest voxel instead of interpolating.
inline Volume resample_isotropic_nearest(const Volume& v) { return detail::resample_iso(v, true); }

struct ExtractedSlice {
    Image2D image;
    int axis = 0;
    long index = 0;
};

// Every k-th slice (indices 0, k, 2k, ...) along each requested axis. The
// slice plane keeps the two remaining axes in ascending order: rows follow
// the lower axis, columns the higher one.
inline std::vector<ExtractedSlice> extract_slices(const Volume& v, const std::vector<int>& axes,
                                                  long stride) {
    if (axes.empty()) throw ContractError("extract_slices: empty axes set");
    if (stride < 1) throw ContractError("extract_slices: stride must be >= 1");
    std::vector<ExtractedSlice> out;
    for (int axis : axes) {
        if (axis < 0 || axis > 2) throw ContractError("extract_slices: axis must be 0, 1 or 2");
        const int a1 = (axis == 0) ? 1 : 0;
        const int a2 = (axis == 2) ? 1 : 2;
        for (long idx = 0; idx < v.dims[axis]; idx += stride) {
            ExtractedSlice s;
            s.axis = axis;
            s.index = idx;
            s.image = Image2D(v.dims[a1], v.dims[a2]);
            std::array<long, 3> c{};
            c[static_cast<size_t>(axis)] = idx;
            for (long r = 0; r < v.dims[a1]; ++r) {
                c[static_cast<size_t>(a1)] = r;
                for (long col = 0; col < v.dims[a2]; ++col) {
                    c[static_cast<size_t>(a2)] = col;
                    s.image.at(r, col) = v.at(c[0], c[1], c[2]);
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline MaskImage slice_as_mask(const Volume& v, int axis, long index) {
    if (axis < 0 || axis > 2) throw ContractError("slice_as_mask: axis must be 0, 1 or 2");
    if (index < 0 || index >= v.dims[axis]) {
        throw DataError("mask slice index " + std::to_string(index) + " out of range for axis " +
                        std::to_string(axis) + " with " + std::to_string(v.dims[axis]) + " slices");
    }
    const int a1 = (axis == 0) ? 1 : 0;
    const int a2 = (axis == 2) ? 1 : 2;
    MaskImage m(v.dims[a1], v.dims[a2]);
    std::array<long, 3> c{};
    c[static_cast<size_t>(axis)] = index;
    for (long r = 0; r < v.dims[a1]; ++r) {
        c[static_cast<size_t>(a1)] = r;
        for (long col = 0; col < v.dims[a2]; ++col) {
            c[static_cast<size_t>(a2)] = col;
            m.at(r, col) = static_cast<int32_t>(std::lround(v.at(c[0], c[1], c[2])));
        }
    }
    return m;
}

inline Image2D slice_at(const Volume& v, int axis, long index) {
    if (axis < 0 || axis > 2) throw ContractError("slice_at: axis must be 0, 1 or 2");
    if (index < 0 || index >= v.dims[axis]) {
        throw DataError("slice index " + std::to_string(index) + " out of range for axis " +
                        std::to_string(axis) + " with " + std::to_string(v.dims[axis]) + " slices");
    }
    const int a1 = (axis == 0) ? 1 : 0;
    const int a2 = (axis == 2) ? 1 : 2;
    Image2D img(v.dims[a1], v.dims[a2]);
    std::array<long, 3> c{};
    c[static_cast<size_t>(axis)] = index;
    for (long r = 0; r < v.dims[a1]; ++r) {
        c[static_cast<size_t>(a1)] = r;
        for (long col = 0; col < v.dims[a2]; ++col) {
            c[static_cast<size_t>(a2)] = col;
            img.at(r, col) = v.at(c[0], c[1], c[2]);
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Raw sidecar format: <stem>.json + <stem>.bin (little-endian float32).
// ---------------------------------------------------------------------------

inline void write_raw_volume(const std::filesystem::path& json_path, const Volume& v) {
    v.validate();
    std::filesystem::path bin_path = json_path;
    bin_path.replace_extension(".bin");
    nlohmann::json j;
    j["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
    j["voxel_size"] = {v.voxel_size[0], v.voxel_size[1], v.voxel_size[2]};
    j["dtype"] = "f32";
    if (!v.modality.empty()) j["modality"] = v.modality;
    if (!v.subject_id.empty()) j["subject_id"] = v.subject_id;
    std::ofstream js(json_path);
    if (!js) throw DataError("cannot write " + json_path.string());
    js << j.dump(2) << "\n";
    std::ofstream bs(bin_path, std::ios::binary);
    if (!bs) throw DataError("cannot write " + bin_path.string());
    static_assert(sizeof(float) == 4);
    bs.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * 4));
}

inline Volume load_raw_volume(const std::filesystem::path& json_path) {
    std::ifstream js(json_path);
    if (!js) throw DataError("cannot read " + json_path.string());
    nlohmann::json j;
    try {
        js >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad volume sidecar " + json_path.string() + ": " + e.what());
    }
    Volume v;
    try {
        for (int i = 0; i < 3; ++i) v.dims[i] = j.at("dims").at(i).get<long>();
        for (int i = 0; i < 3; ++i) v.voxel_size[i] = j.at("voxel_size").at(i).get<double>();
        if (j.value("dtype", "f32") != "f32") {
            throw DataError("volume sidecar " + json_path.string() + ": unsupported dtype " +
                            j["dtype"].get<std::string>());
        }
        v.modality = j.value("modality", "");
        v.subject_id = j.value("subject_id", "");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad volume sidecar " + json_path.string() + ": " + e.what());
    }
    std::filesystem::path bin_path = json_path;
    bin_path.replace_extension(".bin");
    std::ifstream bs(bin_path, std::ios::binary);
    if (!bs) throw DataError("cannot read " + bin_path.string());
    v.data.resize(static_cast<size_t>(v.voxels()));
    bs.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * 4));
    if (bs.gcount() != static_cast<std::streamsize>(v.data.size() * 4)) {
        throw DataError("volume blob " + bin_path.string() + " truncated: expected " +
                        std::to_string(v.data.size() * 4) + " bytes, got " +
                        std::to_string(bs.gcount()));
    }
    v.validate();
    return v;
}

} // namespace maefuse
