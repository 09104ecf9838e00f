#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace maefuse::detail {

struct ResizeTap {
    long lo, hi;
    double frac;
};

// Half-pixel-center sampling grid, clamped at the borders. Identity when
// sizes match (frac is exactly 0 and lo == hi == index).
inline std::vector<ResizeTap> resize_taps(long in, long out) {
    std::vector<ResizeTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (long o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
        const long lo = static_cast<long>(s);
        taps[static_cast<size_t>(o)] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return taps;
}

// Nearest-neighbor source index under the same half-pixel convention.
inline std::vector<long> nearest_taps(long in, long out) {
    std::vector<long> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (long o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        long ix = static_cast<long>(std::lround(s));
        taps[static_cast<size_t>(o)] = std::clamp(ix, 0L, in - 1);
    }
    return taps;
}

} // namespace maefuse::detail
