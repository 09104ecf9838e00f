#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "maefuse/volume.hpp"

namespace maefuse {

namespace detail {

// NIfTI-1 header field offsets (348-byte header, single-file layout).
inline constexpr long kNiftiSizeofHdr = 0;   // int32, must read 348
inline constexpr long kNiftiDim = 40;        // int16[8]
inline constexpr long kNiftiDatatype = 70;   // int16
inline constexpr long kNiftiBitpix = 72;     // int16
inline constexpr long kNiftiPixdim = 76;     // float[8]; pixdim[1..3] at 80/84/88
inline constexpr long kNiftiVoxOffset = 108; // float
inline constexpr long kNiftiSclSlope = 112;  // float
inline constexpr long kNiftiSclInter = 116;  // float
inline constexpr long kNiftiMagic = 344;     // char[4] "n+1\0"

template <typename T>
T load_scalar(const unsigned char* p, bool swap) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if (swap) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

template <typename T>
void store_le(std::vector<unsigned char>& out, long offset, T v) {
    // host is assumed little-endian for writing; the parser handles both
    std::memcpy(out.data() + offset, &v, sizeof(T));
}

} // namespace detail

// Parses an uncompressed single-file NIfTI-1 byte stream. Accepted datatype
// codes: 2 (uint8), 4 (int16), 16 (float32), 64 (float64). scl_slope and
// scl_inter are applied when slope is nonzero. Endianness is auto-detected
// from sizeof_hdr.
inline Volume parse_nifti1(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 352) {
        throw DataError("NIfTI-1: stream truncated: need at least 352 bytes, got " +
                        std::to_string(bytes.size()));
    }
    if (std::memcmp(bytes.data() + detail::kNiftiMagic, "n+1\0", 4) != 0) {
        throw DataError("not NIfTI-1: bad magic at offset 344");
    }
    bool swap = false;
    int32_t hdr = detail::load_scalar<int32_t>(bytes.data() + detail::kNiftiSizeofHdr, false);
    if (hdr != 348) {
        hdr = detail::load_scalar<int32_t>(bytes.data() + detail::kNiftiSizeofHdr, true);
        if (hdr != 348) throw DataError("not NIfTI-1: sizeof_hdr is not 348 in either byte order");
        swap = true;
    }
    const int16_t ndim = detail::load_scalar<int16_t>(bytes.data() + detail::kNiftiDim, swap);
    if (ndim < 3) {
        throw DataError("NIfTI-1: dim[0] = " + std::to_string(ndim) + ", need at least 3 dimensions");
    }
    if (ndim > 7) throw DataError("NIfTI-1: dim[0] = " + std::to_string(ndim) + " exceeds 7");
    Volume v;
    long extra = 1; // trailing dims beyond the first three must be singleton
    for (int i = 1; i <= ndim; ++i) {
        const int16_t d = detail::load_scalar<int16_t>(bytes.data() + detail::kNiftiDim + 2 * i, swap);
        if (i <= 3) {
            if (d < 1) throw DataError("NIfTI-1: dim[" + std::to_string(i) + "] = " + std::to_string(d));
            v.dims[i - 1] = d;
        } else if (d > 1) {
            extra *= d;
        }
    }
    if (extra != 1) throw DataError("NIfTI-1: 4-D+ volumes are not supported");
    const int16_t dtype = detail::load_scalar<int16_t>(bytes.data() + detail::kNiftiDatatype, swap);
    long bytes_per = 0;
    switch (dtype) {
        case 2: bytes_per = 1; break;   // uint8
        case 4: bytes_per = 2; break;   // int16
        case 16: bytes_per = 4; break;  // float32
        case 64: bytes_per = 8; break;  // float64
        default:
            throw DataError("NIfTI-1: unsupported datatype code " + std::to_string(dtype));
    }
    for (int i = 0; i < 3; ++i) {
        const float pd =
            detail::load_scalar<float>(bytes.data() + detail::kNiftiPixdim + 4 * (i + 1), swap);
        v.voxel_size[i] = pd > 0 ? static_cast<double>(pd) : 1.0;
    }
    const float slope = detail::load_scalar<float>(bytes.data() + detail::kNiftiSclSlope, swap);
    const float inter = detail::load_scalar<float>(bytes.data() + detail::kNiftiSclInter, swap);
    const float vox_off = detail::load_scalar<float>(bytes.data() + detail::kNiftiVoxOffset, swap);
    const long offset = std::max(352L, static_cast<long>(vox_off));

    const long n = v.voxels();
    const long need = n * bytes_per;
    const long have = static_cast<long>(bytes.size()) - offset;
    if (have < need) {
        throw DataError("NIfTI-1: truncated data section: expected " + std::to_string(need) +
                        " bytes after offset " + std::to_string(offset) + ", got " +
                        std::to_string(std::max(0L, have)));
    }
    v.data.resize(static_cast<size_t>(n));
    const unsigned char* p = bytes.data() + offset;
    for (long i = 0; i < n; ++i, p += bytes_per) {
        double raw;
        switch (dtype) {
            case 2: raw = static_cast<double>(*p); break;
            case 4: raw = static_cast<double>(detail::load_scalar<int16_t>(p, swap)); break;
            case 16: raw = static_cast<double>(detail::load_scalar<float>(p, swap)); break;
            default: raw = detail::load_scalar<double>(p, swap); break;
        }
        if (slope != 0.0f) raw = raw * static_cast<double>(slope) + static_cast<double>(inter);
        v.data[static_cast<size_t>(i)] = static_cast<float>(raw);
    }
    v.validate();
    return v;
}

// Serializes a Volume as a minimal little-endian float32 single-file NIfTI-1
// stream (vox_offset 352, scl_slope 0: values are stored as-is).
inline std::vector<unsigned char> write_nifti1(const Volume& v) {
    v.validate();
    std::vector<unsigned char> out(static_cast<size_t>(352 + v.voxels() * 4), 0);
    detail::store_le<int32_t>(out, detail::kNiftiSizeofHdr, 348);
    detail::store_le<int16_t>(out, detail::kNiftiDim, 3);
    for (int i = 0; i < 3; ++i) {
        detail::store_le<int16_t>(out, detail::kNiftiDim + 2 * (i + 1), static_cast<int16_t>(v.dims[i]));
    }
    for (int i = 4; i <= 7; ++i) detail::store_le<int16_t>(out, detail::kNiftiDim + 2 * i, 1);
    detail::store_le<int16_t>(out, detail::kNiftiDatatype, 16);
    detail::store_le<int16_t>(out, detail::kNiftiBitpix, 32);
    detail::store_le<float>(out, detail::kNiftiPixdim, 1.0f);
    for (int i = 0; i < 3; ++i) {
        detail::store_le<float>(out, detail::kNiftiPixdim + 4 * (i + 1),
                                static_cast<float>(v.voxel_size[i]));
    }
    detail::store_le<float>(out, detail::kNiftiVoxOffset, 352.0f);
    detail::store_le<float>(out, detail::kNiftiSclSlope, 0.0f);
    detail::store_le<float>(out, detail::kNiftiSclInter, 0.0f);
    std::memcpy(out.data() + detail::kNiftiMagic, "n+1\0", 4);
    std::memcpy(out.data() + 352, v.data.data(), v.data.size() * 4);
    return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& b) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline Volume load_nifti_file(const std::filesystem::path& path) {
    return parse_nifti1(read_file_bytes(path));
}

// Dispatches on extension: .nii for NIfTI-1, .json for the raw sidecar pair.
inline Volume load_volume(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".nii") return load_nifti_file(path);
    if (ext == ".json") return load_raw_volume(path);
    throw DataError("unsupported volume format: " + path.string());
}

} // namespace maefuse
