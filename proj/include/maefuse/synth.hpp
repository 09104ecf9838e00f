#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "maefuse/dataset.hpp"
#include "maefuse/nifti.hpp"

namespace maefuse {

// Synthetic desk-scale datasets: textured slices for classification and
// disk/ellipse/ring label maps for segmentation. Images are written as
// NIfTI-1 volumes, masks as raw sidecar volumes, plus JSONL manifests and a
// class-name preset.
namespace synth {

struct Result {
    std::filesystem::path train_manifest, test_manifest, class_names;
};

namespace detail {

// Classes differ in frequency band, orientation AND intensity profile, so
// their aggregate patch statistics separate (orientation alone washes out of
// pooled features once patch phases average over the image).
inline float texture_value(int cls, long r, long c, long size, double f, double p1, double p2) {
    const double x = static_cast<double>(c), y = static_cast<double>(r);
    double v = 0;
    double shade = 1.0; // per-class intensity exponent
    switch (cls % 5) {
        case 0: // low-frequency horizontal stripes, bright
            v = std::sin(0.25 * f * y + p1);
            shade = 0.5;
            break;
        case 1: // high-frequency vertical stripes, dark
            v = std::sin(2.2 * f * x + p1);
            shade = 2.2;
            break;
        case 2: // mid-frequency checkerboard
            v = std::sin(0.9 * f * y + p1) * std::sin(0.9 * f * x + p2);
            shade = 1.0;
            break;
        case 3: // very low-frequency diagonal gradient bands
            v = std::sin(0.12 * f * (x + y) + p1);
            shade = 1.5;
            break;
        default: { // high-frequency rings
            const double cy = (size - 1) / 2.0, cx = (size - 1) / 2.0;
            v = std::sin(1.6 * f * std::hypot(y - cy, x - cx) + p1);
            shade = 0.7;
        }
    }
    return static_cast<float>(std::pow(0.5 + 0.5 * v, shade));
}

inline Volume texture_volume(int cls, long size, long slices, const std::string& subject, Rng& rng) {
    Volume v;
    v.dims = {size, size, slices};
    v.subject_id = subject;
    v.data.resize(static_cast<size_t>(v.voxels()));
    for (long z = 0; z < slices; ++z) {
        const double f = 0.85 + 0.3 * rng.uniform();
        const double p1 = rng.uniform(0, 6.283185307);
        const double p2 = rng.uniform(0, 6.283185307);
        for (long r = 0; r < size; ++r) {
            for (long c = 0; c < size; ++c) {
                float val = texture_value(cls, r, c, size, f, p1, p2);
                val += static_cast<float>(0.03 * rng.normal());
                v.at(r, c, z) = std::clamp(val, 0.0f, 1.0f);
            }
        }
    }
    return v;
}

struct EllipseSpec {
    double cy, cx, ry, rx;
};

inline EllipseSpec random_ellipse(long size, Rng& rng) {
    EllipseSpec e;
    e.cy = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
    e.cx = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
    e.ry = rng.uniform(size / 6.0, size / 3.5);
    e.rx = rng.uniform(size / 6.0, size / 3.5);
    return e;
}

// labels: 0 background, 1 core (scaled-down ellipse), 2 surrounding ring
// (only when num_classes >= 3)
inline void shape_slice(long size, int num_classes, Rng& rng, float* img, float* mask) {
    const EllipseSpec e = random_ellipse(size, rng);
    for (long r = 0; r < size; ++r) {
        for (long c = 0; c < size; ++c) {
            const double dy = (r - e.cy) / e.ry, dx = (c - e.cx) / e.rx;
            const double d2 = dy * dy + dx * dx;
            float value = 0.1f;
            float label = 0.0f;
            if (num_classes >= 3) {
                if (d2 <= 0.45) {
                    value = 0.9f;
                    label = 1.0f;
                } else if (d2 <= 1.0) {
                    value = 0.5f;
                    label = 2.0f;
                }
            } else if (d2 <= 1.0) {
                value = 0.9f;
                label = 1.0f;
            }
            value += static_cast<float>(0.04 * rng.normal());
            img[r * size + c] = std::clamp(value, 0.0f, 1.0f);
            mask[r * size + c] = label;
        }
    }
}

} // namespace detail

// One volume per (class, tag, replica); all slices along axis 2.
inline Result classification(const std::filesystem::path& dir, long image_size, int classes,
                             int tags, long train_volumes, long test_volumes, long slices,
                             uint64_t seed) {
    std::filesystem::create_directories(dir);
    Rng rng = Rng(seed).substream("synth.classify");
    std::vector<ManifestEntry> train, test;
    static const char* kPattern[5] = {"stripes_h", "stripes_v", "checker", "diagonal", "rings"};
    std::vector<std::string> class_names;
    for (int c = 0; c < classes; ++c) {
        class_names.push_back(std::string(kPattern[c % 5]) +
                              (c >= 5 ? "_" + std::to_string(c / 5) : ""));
    }
    for (int tag = 0; tag < tags; ++tag) {
        for (int cls = 0; cls < classes; ++cls) {
            for (long vol = 0; vol < train_volumes + test_volumes; ++vol) {
                const bool is_test = vol >= train_volumes;
                const std::string stem = "tex_c" + std::to_string(cls) + "_t" + std::to_string(tag) +
                                         "_v" + std::to_string(vol);
                auto v = detail::texture_volume(cls, image_size, slices, stem, rng);
                write_file_bytes(dir / (stem + ".nii"), write_nifti1(v));
                for (long z = 0; z < slices; ++z) {
                    ManifestEntry e;
                    e.path = stem + ".nii";
                    e.axis = 2;
                    e.index = z;
                    e.label = cls;
                    e.dataset_tag = "synth" + std::to_string(tag);
                    (is_test ? test : train).push_back(std::move(e));
                }
            }
        }
    }
    Result res;
    res.train_manifest = dir / "train.jsonl";
    res.test_manifest = dir / "test.jsonl";
    res.class_names = dir / "classes.json";
    save_manifest(res.train_manifest, train);
    save_manifest(res.test_manifest, test);
    std::ofstream cn(res.class_names);
    cn << nlohmann::json(class_names).dump() << "\n";
    return res;
}

// Ellipse/ring phantoms with matching label-map volumes. num_classes 2 gives
// a binary disk mask (usable as a brain mask for weighted pretraining).
inline Result segmentation(const std::filesystem::path& dir, long image_size, int num_classes,
                           long train_volumes, long test_volumes, long slices, uint64_t seed) {
    std::filesystem::create_directories(dir);
    Rng rng = Rng(seed).substream("synth.segment");
    std::vector<ManifestEntry> train, test;
    for (long vol = 0; vol < train_volumes + test_volumes; ++vol) {
        const bool is_test = vol >= train_volumes;
        const std::string stem = "shape_v" + std::to_string(vol);
        Volume img, mask;
        img.dims = mask.dims = {image_size, image_size, slices};
        img.subject_id = stem;
        img.data.resize(static_cast<size_t>(img.voxels()));
        mask.data.resize(static_cast<size_t>(mask.voxels()));
        std::vector<float> islice(static_cast<size_t>(image_size * image_size));
        std::vector<float> mslice(islice.size());
        for (long z = 0; z < slices; ++z) {
            detail::shape_slice(image_size, num_classes, rng, islice.data(), mslice.data());
            // axis-2 slices index (x, y) as (row, col); store accordingly
            for (long r = 0; r < image_size; ++r) {
                for (long c = 0; c < image_size; ++c) {
                    img.at(r, c, z) = islice[static_cast<size_t>(r * image_size + c)];
                    mask.at(r, c, z) = mslice[static_cast<size_t>(r * image_size + c)];
                }
            }
        }
        write_file_bytes(dir / (stem + ".nii"), write_nifti1(img));
        write_raw_volume(dir / (stem + "_mask.json"), mask);
        for (long z = 0; z < slices; ++z) {
            ManifestEntry e;
            e.path = stem + ".nii";
            e.mask_path = stem + "_mask.json";
            e.axis = 2;
            e.index = z;
            e.dataset_tag = "synthseg";
            (is_test ? test : train).push_back(std::move(e));
        }
    }
    Result res;
    res.train_manifest = dir / "train.jsonl";
    res.test_manifest = dir / "test.jsonl";
    res.class_names = dir / "classes.json";
    save_manifest(res.train_manifest, train);
    save_manifest(res.test_manifest, test);
    std::vector<std::string> names = {"background", "core"};
    if (num_classes >= 3) names.push_back("ring");
    std::ofstream cn(res.class_names);
    cn << nlohmann::json(names).dump() << "\n";
    return res;
}

} // namespace synth
} // namespace maefuse
