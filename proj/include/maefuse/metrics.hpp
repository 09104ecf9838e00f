#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "maefuse/image.hpp"

namespace maefuse {

// Overlap counters; accumulate across a volume's slices, then score.
struct OverlapCounts {
    long inter = 0, pred = 0, gt = 0;

    void add(const MaskImage& p, const MaskImage& g) {
        if (p.rows != g.rows || p.cols != g.cols) {
            throw ContractError("overlap: mask shapes differ");
        }
        for (size_t i = 0; i < p.v.size(); ++i) {
            const bool pp = p.v[i] != 0, gg = g.v[i] != 0;
            inter += (pp && gg);
            pred += pp;
            gt += gg;
        }
    }

    bool empty_pair() const { return pred == 0 && gt == 0; }

    // both empty -> 1.0 by convention (surfaced via empty_pair)
    double dice() const {
        if (empty_pair()) return 1.0;
        return 2.0 * static_cast<double>(inter) / static_cast<double>(pred + gt);
    }

    double iou() const {
        if (empty_pair()) return 1.0;
        return static_cast<double>(inter) / static_cast<double>(pred + gt - inter);
    }
};

namespace detail {

inline void require_binary(const char* op, const MaskImage& m) {
    if (!m.is_binary()) throw ContractError(std::string(op) + ": mask must be binary");
}

} // namespace detail

// 2|P∩G| / (|P| + |G|); both empty -> 1.0.
inline double dice_score(const MaskImage& pred, const MaskImage& gt) {
    detail::require_binary("dice_score", pred);
    detail::require_binary("dice_score", gt);
    OverlapCounts c;
    c.add(pred, gt);
    return c.dice();
}

// |P∩G| / |P∪G|; both empty -> 1.0.
inline double iou_score(const MaskImage& pred, const MaskImage& gt) {
    detail::require_binary("iou_score", pred);
    detail::require_binary("iou_score", gt);
    OverlapCounts c;
    c.add(pred, gt);
    return c.iou();
}

struct RegionReport {
    std::string region;
    double iou = 0, dice = 0;
    long support = 0; // ground-truth pixel count
    bool empty = false;
};

inline MaskImage binarize_class(const MaskImage& labels, int32_t cls) {
    MaskImage out(labels.rows, labels.cols, 0);
    for (size_t i = 0; i < labels.v.size(); ++i) out.v[i] = labels.v[i] == cls ? 1 : 0;
    return out;
}

// Per non-background class scores plus an unweighted mean row over the
// non-background classes (empty-in-both classes score 1.0, flagged).
inline std::vector<RegionReport> multiclass_report(const std::vector<MaskImage>& pred,
                                                   const std::vector<MaskImage>& gt,
                                                   const std::vector<std::string>& class_names) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw ContractError("multiclass_report: batch size mismatch");
    }
    std::vector<RegionReport> rows;
    double iou_sum = 0, dice_sum = 0;
    long regions = 0;
    for (size_t c = 1; c < class_names.size(); ++c) {
        OverlapCounts counts;
        for (size_t i = 0; i < pred.size(); ++i) {
            counts.add(binarize_class(pred[i], static_cast<int32_t>(c)),
                       binarize_class(gt[i], static_cast<int32_t>(c)));
        }
        RegionReport r;
        r.region = class_names[c];
        r.iou = counts.iou();
        r.dice = counts.dice();
        r.support = counts.gt;
        r.empty = counts.empty_pair();
        iou_sum += r.iou;
        dice_sum += r.dice;
        ++regions;
        rows.push_back(std::move(r));
    }
    RegionReport mean;
    mean.region = "mean";
    mean.iou = regions ? iou_sum / static_cast<double>(regions) : 0.0;
    mean.dice = regions ? dice_sum / static_cast<double>(regions) : 0.0;
    rows.push_back(std::move(mean));
    return rows;
}

struct StabilitySummary {
    std::string axis_label;
    std::vector<double> axis_values;
    std::vector<double> scores;
    double mean = 0;
    double stddev = 0; // population standard deviation
};

inline StabilitySummary stability_summary(const std::vector<std::pair<double, double>>& points,
                                          std::string axis_label = "") {
    if (points.size() < 2) throw ContractError("stability_summary: need at least 2 points");
    StabilitySummary s;
    s.axis_label = std::move(axis_label);
    for (const auto& [x, y] : points) {
        s.axis_values.push_back(x);
        s.scores.push_back(y);
    }
    double sum = 0;
    for (double y : s.scores) sum += y;
    s.mean = sum / static_cast<double>(s.scores.size());
    double var = 0;
    for (double y : s.scores) var += (y - s.mean) * (y - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(s.scores.size()));
    return s;
}

} // namespace maefuse
