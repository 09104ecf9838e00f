#pragma once

#include <cstdint>
#include <vector>

#include "maefuse/errors.hpp"
#include "maefuse/interp.hpp"

namespace maefuse {

// Dense row-major 2-D float image.
struct Image2D {
    long rows = 0, cols = 0;
    std::vector<float> v;

    Image2D() = default;
    Image2D(long r, long c, float fill = 0.0f)
        : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}

    float& at(long r, long c) { return v[static_cast<size_t>(r * cols + c)]; }
    float at(long r, long c) const { return v[static_cast<size_t>(r * cols + c)]; }
    long numel() const { return rows * cols; }
};

// Integer label map (segmentation labels or a binary brain mask).
struct MaskImage {
    long rows = 0, cols = 0;
    std::vector<int32_t> v;

    MaskImage() = default;
    MaskImage(long r, long c, int32_t fill = 0)
        : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}

    int32_t& at(long r, long c) { return v[static_cast<size_t>(r * cols + c)]; }
    int32_t at(long r, long c) const { return v[static_cast<size_t>(r * cols + c)]; }
    long numel() const { return rows * cols; }

    bool is_binary() const {
        for (int32_t x : v) {
            if (x != 0 && x != 1) return false;
        }
        return true;
    }
};

inline Image2D resize_bilinear(const Image2D& in, long rows, long cols) {
    const auto ty = detail::resize_taps(in.rows, rows);
    const auto tx = detail::resize_taps(in.cols, cols);
    Image2D out(rows, cols);
    for (long r = 0; r < rows; ++r) {
        const auto& ry = ty[static_cast<size_t>(r)];
        for (long c = 0; c < cols; ++c) {
            const auto& rx = tx[static_cast<size_t>(c)];
            const double v00 = in.at(ry.lo, rx.lo), v01 = in.at(ry.lo, rx.hi);
            const double v10 = in.at(ry.hi, rx.lo), v11 = in.at(ry.hi, rx.hi);
            const double top = v00 + (v01 - v00) * rx.frac;
            const double bot = v10 + (v11 - v10) * rx.frac;
            out.at(r, c) = static_cast<float>(top + (bot - top) * ry.frac);
        }
    }
    return out;
}

inline MaskImage resize_nearest(const MaskImage& in, long rows, long cols) {
    const auto ty = detail::nearest_taps(in.rows, rows);
    const auto tx = detail::nearest_taps(in.cols, cols);
    MaskImage out(rows, cols);
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            out.at(r, c) = in.at(ty[static_cast<size_t>(r)], tx[static_cast<size_t>(c)]);
        }
    }
    return out;
}

} // namespace maefuse
