#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "maefuse/image.hpp"
#include "maefuse/rng.hpp"

namespace maefuse {

// p-th quantile (p in [0,1]) by linear interpolation between order statistics
// of the sorted values: position p*(n-1).
inline double percentile_linear(const std::vector<float>& sorted, double p) {
    if (sorted.empty()) throw ContractError("percentile: empty input");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return static_cast<double>(sorted[lo]) +
           frac * (static_cast<double>(sorted[lo + 1]) - static_cast<double>(sorted[lo]));
}

struct ClampBounds {
    double lo, hi;
};

inline ClampBounds percentile_bounds(const std::vector<float>& values, double p_lo = 0.001,
                                     double p_hi = 0.999) {
    std::vector<float> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    return {percentile_linear(sorted, p_lo), percentile_linear(sorted, p_hi)};
}

// How a raw slice maps onto the square target grid: aspect-preserving resize
// of the longer side to `target`, then symmetric zero padding.
struct FitGeometry {
    long new_rows, new_cols;
    long pad_top, pad_left;
    long target;

    static FitGeometry compute(long rows, long cols, long target) {
        FitGeometry g{};
        g.target = target;
        if (rows >= cols) {
            g.new_rows = target;
            g.new_cols = std::max(1L, std::lround(static_cast<double>(cols) *
                                                  static_cast<double>(target) /
                                                  static_cast<double>(rows)));
        } else {
            g.new_cols = target;
            g.new_rows = std::max(1L, std::lround(static_cast<double>(rows) *
                                                  static_cast<double>(target) /
                                                  static_cast<double>(cols)));
        }
        g.pad_top = (target - g.new_rows) / 2;
        g.pad_left = (target - g.new_cols) / 2;
        return g;
    }

    Image2D apply(const Image2D& in) const {
        Image2D resized = (in.rows == new_rows && in.cols == new_cols)
                              ? in
                              : maefuse::resize_bilinear(in, new_rows, new_cols);
        if (new_rows == target && new_cols == target) return resized;
        Image2D out(target, target, 0.0f);
        for (long r = 0; r < new_rows; ++r) {
            for (long c = 0; c < new_cols; ++c) out.at(pad_top + r, pad_left + c) = resized.at(r, c);
        }
        return out;
    }

    MaskImage apply(const MaskImage& in) const {
        MaskImage resized = (in.rows == new_rows && in.cols == new_cols)
                                ? in
                                : resize_nearest(in, new_rows, new_cols);
        if (new_rows == target && new_cols == target) return resized;
        MaskImage out(target, target, 0);
        for (long r = 0; r < new_rows; ++r) {
            for (long c = 0; c < new_cols; ++c) out.at(pad_top + r, pad_left + c) = resized.at(r, c);
        }
        return out;
    }
};

// Clamp to explicit bounds, min-max normalize to [0,1] (constant input maps
// to all zeros), then fit to the square target grid.
inline Image2D preprocess_slice_with_bounds(const Image2D& raw, ClampBounds bounds, long target = 224) {
    if (raw.numel() == 0) throw ContractError("preprocess_slice: empty input");
    Image2D clamped(raw.rows, raw.cols);
    float mn = std::numeric_limits<float>::max(), mx = std::numeric_limits<float>::lowest();
    for (long i = 0; i < raw.numel(); ++i) {
        float x = raw.v[static_cast<size_t>(i)];
        x = static_cast<float>(std::clamp(static_cast<double>(x), bounds.lo, bounds.hi));
        clamped.v[static_cast<size_t>(i)] = x;
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    const float range = mx - mn;
    if (range > 0) {
        for (float& x : clamped.v) x = (x - mn) / range;
    } else {
        std::fill(clamped.v.begin(), clamped.v.end(), 0.0f);
    }
    return FitGeometry::compute(raw.rows, raw.cols, target).apply(clamped);
}

// Standard path: 0.1%..99.9% clamp bounds computed from this slice.
inline Image2D preprocess_slice(const Image2D& raw, long target = 224) {
    return preprocess_slice_with_bounds(raw, percentile_bounds(raw.v), target);
}

// Brain-area coverage -> loss weight: a clamped linear ramp. Full weight at
// coverage tau and above, floored at w_min so no sample goes completely dark.
inline double brain_coverage_weight(const MaskImage& mask, double tau = 0.2, double w_min = 0.05) {
    if (!mask.is_binary()) throw ContractError("brain_coverage_weight: mask must be binary");
    long on = 0;
    for (int32_t x : mask.v) on += x;
    const double coverage = static_cast<double>(on) / static_cast<double>(mask.numel());
    return std::max(w_min, std::min(1.0, coverage / tau));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentPolicy {
    float rotation_max_deg = 15.0f;
    float flip_prob = 0.5f;
    float crop_scale_lo = 0.8f;
    float crop_scale_hi = 1.0f;

    void validate() const {
        if (flip_prob < 0 || flip_prob > 1) throw ConfigError("augment: flip_prob must be in [0,1]");
        if (!(crop_scale_lo > 0) || crop_scale_lo > crop_scale_hi || crop_scale_hi > 1) {
            throw ConfigError("augment: crop scale range must satisfy 0 < lo <= hi <= 1");
        }
    }
};

namespace detail {

// Rotation about the image center; bilinear for images, nearest for masks,
// zero fill outside. An exact no-op when the angle is zero.
inline Image2D rotate_image(const Image2D& in, double deg) {
    if (deg == 0.0) return in;
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (in.rows - 1) / 2.0, cx = (in.cols - 1) / 2.0;
    Image2D out(in.rows, in.cols, 0.0f);
    for (long r = 0; r < in.rows; ++r) {
        for (long c = 0; c < in.cols; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double sy = cy + (cs * dy + sn * dx);
            const double sx = cx + (-sn * dy + cs * dx);
            const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
            if (y0 < -1 || y0 >= in.rows || x0 < -1 || x0 >= in.cols) continue;
            const double fy = sy - y0, fx = sx - x0;
            auto sample = [&](long y, long x) -> double {
                return (y >= 0 && y < in.rows && x >= 0 && x < in.cols) ? in.at(y, x) : 0.0;
            };
            const double top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
            const double bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
            out.at(r, c) = static_cast<float>(top * (1 - fy) + bot * fy);
        }
    }
    return out;
}

inline MaskImage rotate_mask(const MaskImage& in, double deg) {
    if (deg == 0.0) return in;
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (in.rows - 1) / 2.0, cx = (in.cols - 1) / 2.0;
    MaskImage out(in.rows, in.cols, 0);
    for (long r = 0; r < in.rows; ++r) {
        for (long c = 0; c < in.cols; ++c) {
            const double dy = r - cy, dx = c - cx;
            const long sy = std::lround(cy + (cs * dy + sn * dx));
            const long sx = std::lround(cx + (-sn * dy + cs * dx));
            if (sy >= 0 && sy < in.rows && sx >= 0 && sx < in.cols) out.at(r, c) = in.at(sy, sx);
        }
    }
    return out;
}

template <typename Img>
Img flip_horizontal(const Img& in) {
    Img out = in;
    for (long r = 0; r < in.rows; ++r) {
        for (long c = 0; c < in.cols; ++c) out.at(r, c) = in.at(r, in.cols - 1 - c);
    }
    return out;
}

template <typename Img>
Img flip_vertical(const Img& in) {
    Img out = in;
    for (long r = 0; r < in.rows; ++r) {
        for (long c = 0; c < in.cols; ++c) out.at(r, c) = in.at(in.rows - 1 - r, c);
    }
    return out;
}

inline Image2D crop_resize(const Image2D& in, long top, long left, long side) {
    Image2D crop(side, side);
    for (long r = 0; r < side; ++r) {
        for (long c = 0; c < side; ++c) crop.at(r, c) = in.at(top + r, left + c);
    }
    return maefuse::resize_bilinear(crop, in.rows, in.cols);
}

inline MaskImage crop_resize(const MaskImage& in, long top, long left, long side) {
    MaskImage crop(side, side);
    for (long r = 0; r < side; ++r) {
        for (long c = 0; c < side; ++c) crop.at(r, c) = in.at(top + r, left + c);
    }
    return resize_nearest(crop, in.rows, in.cols);
}

} // namespace detail

} // namespace maefuse
