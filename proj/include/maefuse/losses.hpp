#pragma once

#include <vector>

#include "maefuse/image.hpp"
#include "maefuse/ops.hpp"

namespace maefuse {

// One-hot [N,C,H,W] target built from integer label maps (constant tensor;
// gradients never flow into targets).
template <typename T>
TensorT<T> one_hot_targets(const std::vector<MaskImage>& labels, long num_classes) {
    if (labels.empty()) throw ContractError("one_hot_targets: empty batch");
    const long n = static_cast<long>(labels.size());
    const long h = labels[0].rows, w = labels[0].cols;
    std::vector<T> v(static_cast<size_t>(n * num_classes * h * w), T(0));
    for (long i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)].rows != h || labels[static_cast<size_t>(i)].cols != w) {
            throw ContractError("one_hot_targets: inconsistent label map shapes");
        }
        for (long p = 0; p < h * w; ++p) {
            const int32_t c = labels[static_cast<size_t>(i)].v[static_cast<size_t>(p)];
            if (c < 0 || c >= num_classes) {
                throw ContractError("one_hot_targets: label " + std::to_string(c) + " outside [0," +
                                    std::to_string(num_classes) + ")");
            }
            v[static_cast<size_t>(((i * num_classes + c) * h * w) + p)] = T(1);
        }
    }
    return TensorT<T>::from({n, num_classes, h, w}, std::move(v));
}

// Soft Dice over softmax probabilities, computed per sample and per class
// (background included), then averaged. epsilon keeps empty classes at ~0 loss.
template <typename T>
TensorT<T> dice_loss(const TensorT<T>& probs, const TensorT<T>& onehot, T eps = T(1e-5)) {
    if (probs.shape() != onehot.shape() || probs.ndim() != 4) {
        throw ContractError("dice_loss: probs/targets must both be [N,C,H,W]");
    }
    const long n = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
    auto p = reshape(probs, {n, c, hw});
    auto g = reshape(onehot, {n, c, hw});
    auto inter = sum_axis(mul(p, g), 2);   // [N, C]
    auto psq = sum_axis(mul(p, p), 2);
    auto gsq = sum_axis(mul(g, g), 2);
    auto numer = add_scalar(mul_scalar(inter, T(2)), eps);
    auto denom = add_scalar(add(psq, gsq), eps);
    return mean_all(add_scalar(neg(div(numer, denom)), T(1)));
}

namespace detail {

// p_t: predicted probability of the true class at each pixel, [N,H,W].
template <typename T>
TensorT<T> true_class_prob(const TensorT<T>& probs, const TensorT<T>& onehot) {
    return clamp_min(sum_axis(mul(probs, onehot), 1), T(1e-8));
}

} // namespace detail

// Mean over pixels of -alpha * (1 - p_t)^gamma * log(p_t).
template <typename T>
TensorT<T> focal_loss(const TensorT<T>& probs, const TensorT<T>& onehot, T gamma = T(2),
                      T alpha = T(0.25)) {
    auto pt = detail::true_class_prob(probs, onehot);
    auto mod = pow_scalar(add_scalar(neg(pt), T(1)), gamma);
    return mul_scalar(mean_all(mul(mod, neg(log_op(pt)))), alpha);
}

// Mean over pixels of -log(p_t).
template <typename T>
TensorT<T> pixel_ce(const TensorT<T>& probs, const TensorT<T>& onehot) {
    return mean_all(neg(log_op(detail::true_class_prob(probs, onehot))));
}

struct HybridLossWeights {
    double dice = 1.0;
    double focal = 1.0;
    double ce = 1.0;
};

template <typename T>
struct HybridLossResult {
    TensorT<T> total;
    double dice = 0, focal = 0, ce = 0;
};

// Weighted sum of the three terms from one shared softmax:
// total = (w_dice*L_dice + w_focal*L_focal) + w_ce*L_ce, in that order.
template <typename T>
HybridLossResult<T> hybrid_loss(const TensorT<T>& logits, const std::vector<MaskImage>& targets,
                                HybridLossWeights w = {}) {
    if (logits.ndim() != 4) throw ContractError("hybrid_loss: logits must be [N,C,H,W]");
    if (w.dice < 0 || w.focal < 0 || w.ce < 0) {
        throw ConfigError("hybrid_loss: loss weights must be non-negative");
    }
    auto probs = softmax(logits, 1);
    auto onehot = one_hot_targets<T>(targets, logits.dim(1));
    HybridLossResult<T> out;
    auto ld = dice_loss(probs, onehot);
    auto lf = focal_loss(probs, onehot);
    auto lc = pixel_ce(probs, onehot);
    out.dice = static_cast<double>(ld.item());
    out.focal = static_cast<double>(lf.item());
    out.ce = static_cast<double>(lc.item());
    out.total = add(add(mul_scalar(ld, static_cast<T>(w.dice)), mul_scalar(lf, static_cast<T>(w.focal))),
                    mul_scalar(lc, static_cast<T>(w.ce)));
    return out;
}

} // namespace maefuse
