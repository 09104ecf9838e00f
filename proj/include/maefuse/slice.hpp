#pragma once

#include <optional>
#include <string>

#include "maefuse/preprocess.hpp"

namespace maefuse {

// One preprocessed training/evaluation slice.
struct SliceRecord {
    Image2D image; // target x target, values in [0,1]
    std::string subject_id;
    int axis = 0;
    long index = 0;
    std::optional<int> label;
    std::optional<MaskImage> seg_mask;   // integer labels in [0, C)
    std::optional<MaskImage> brain_mask; // binary
    float weight = 1.0f;
    std::string dataset_tag;
};

// Applies, in order: rotation, horizontal flip, vertical flip, random crop +
// resize back. Masks ride along with nearest-neighbor resampling and the
// weight is recomputed from the transformed brain mask. The number of RNG
// draws per call is fixed, so streams stay aligned across policies.
inline SliceRecord augment(const SliceRecord& in, const AugmentPolicy& policy, Rng& rng,
                           double weight_tau = 0.2, double weight_min = 0.05) {
    policy.validate();
    SliceRecord out = in;
    const double angle = rng.uniform(-static_cast<double>(policy.rotation_max_deg),
                                     static_cast<double>(policy.rotation_max_deg));
    const bool hflip = rng.uniform() < policy.flip_prob;
    const bool vflip = rng.uniform() < policy.flip_prob;
    const double scale = rng.uniform(policy.crop_scale_lo, policy.crop_scale_hi);
    const long rows = in.image.rows;
    const long side = std::max(1L, std::min(rows, std::lround(scale * static_cast<double>(rows))));
    const long top = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(rows - side + 1)));
    const long left = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(rows - side + 1)));

    auto apply_img = [&](Image2D img) {
        img = detail::rotate_image(img, angle);
        if (hflip) img = detail::flip_horizontal(img);
        if (vflip) img = detail::flip_vertical(img);
        if (side < rows) img = detail::crop_resize(img, top, left, side);
        return img;
    };
    auto apply_mask = [&](MaskImage m) {
        m = detail::rotate_mask(m, angle);
        if (hflip) m = detail::flip_horizontal(m);
        if (vflip) m = detail::flip_vertical(m);
        if (side < rows) m = detail::crop_resize(m, top, left, side);
        return m;
    };

    out.image = apply_img(in.image);
    if (in.seg_mask) out.seg_mask = apply_mask(*in.seg_mask);
    if (in.brain_mask) {
        out.brain_mask = apply_mask(*in.brain_mask);
        out.weight = static_cast<float>(brain_coverage_weight(*out.brain_mask, weight_tau, weight_min));
    }
    return out;
}

} // namespace maefuse
