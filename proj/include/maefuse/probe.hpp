#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "maefuse/mae.hpp"

namespace maefuse {

// Numerically stable -z_y + logsumexp(z). Gradient is softmax(z) - e_y.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, long label) {
    if (logits.ndim() != 1) throw ContractError("cross_entropy: logits must be a vector");
    const long c = logits.numel();
    if (label < 0 || label >= c) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0," +
                            std::to_string(c) + ")");
    }
    const auto& z = logits.data();
    T mx = z[0];
    for (T v : z) mx = std::max(mx, v);
    T sum = T(0);
    for (T v : z) sum += std::exp(v - mx);
    const T loss = -(z[static_cast<size_t>(label)] - mx) + std::log(sum);
    auto out = TensorT<T>::scalar(loss);
    auto zn = logits.node();
    detail::wire<T>(out, "cross_entropy", {logits}, [zn, label, mx, sum](TensorNode<T>& self) {
        zn->ensure_grad();
        const T g = self.grad[0];
        for (size_t j = 0; j < zn->value.size(); ++j) {
            const T p = std::exp(zn->value[j] - mx) / sum;
            zn->grad[j] += g * (p - (static_cast<long>(j) == label ? T(1) : T(0)));
        }
    });
    return out;
}

// CLS embedding of the final encoder layer with no masking. The encoder must
// be frozen; no gradient ever reaches it.
template <typename T>
TensorT<T> cls_features(const MaeModelT<T>& mae, const Image2D& img) {
    if (!mae.frozen()) throw ContractError("cls_features: encoder must be frozen");
    auto latents = mae.encode_image(img, full_visible(mae.cfg.num_patches()));
    auto fin = mae.encoder_final(latents.back()); // [1, 1+T, D]
    return reshape(index_select(fin, 1, {0L}), {mae.cfg.enc_dim});
}

template <typename T>
struct LinearHeadT {
    TensorT<T> weight; // [C, D]
    TensorT<T> bias;   // [C]
    std::vector<std::string> class_names;
    ParamSetT<T> params;

    long param_count() const { return weight.numel() + bias.numel(); }

    static LinearHeadT init(long num_classes, long feat_dim, std::vector<std::string> names,
                            Rng& rng) {
        LinearHeadT h;
        h.class_names = std::move(names);
        h.weight = h.params.add("head.w", trunc_normal<T>({num_classes, feat_dim}, 0.02, rng));
        h.bias = h.params.add("head.b", TensorT<T>::zeros({num_classes}));
        return h;
    }

    TensorT<T> logits(const TensorT<T>& feature) const {
        const long c = weight.dim(0), d = weight.dim(1);
        return add(reshape(matmul(weight, reshape(feature, {d, 1})), {c}), bias);
    }

    // Deterministic argmax: ties break toward the lowest class index.
    long predict(const TensorT<T>& feature) const {
        auto z = logits(feature);
        long best = 0;
        for (long j = 1; j < z.numel(); ++j) {
            if (z.data()[static_cast<size_t>(j)] > z.data()[static_cast<size_t>(best)]) best = j;
        }
        return best;
    }
};

using LinearHead = LinearHeadT<float>;

struct ProbeConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    long batch_size = 16;
    long steps = 200;
    uint64_t seed = 0;

    void validate() const {
        if (lr <= 0 || batch_size < 1 || steps < 0) throw ConfigError("probe: config values must be positive");
    }
};

// Head-only AdamW training on precomputed features. The feature-injection
// entry point; probe training over slices funnels into this.
template <typename T>
LinearHeadT<T> train_probe_on_features(const std::vector<TensorT<T>>& features,
                                       const std::vector<int>& labels,
                                       std::vector<std::string> class_names, const ProbeConfig& cfg,
                                       std::vector<double>* loss_log = nullptr) {
    cfg.validate();
    if (features.empty() || features.size() != labels.size()) {
        throw ContractError("probe: features/labels size mismatch");
    }
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw DataError("probe: training set covers a single class");
    const long d = features[0].numel();
    const long c = static_cast<long>(class_names.size());

    // Per-dimension standardization over the training features. The affine
    // transform is folded back into W and b afterwards, so the returned head
    // is still a plain linear map on raw features.
    std::vector<T> mu(static_cast<size_t>(d), T(0)), sd(static_cast<size_t>(d), T(0));
    for (const auto& f : features) {
        for (long j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += f.data()[static_cast<size_t>(j)];
    }
    for (auto& m : mu) m /= static_cast<T>(features.size());
    for (const auto& f : features) {
        for (long j = 0; j < d; ++j) {
            const T dv = f.data()[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)];
            sd[static_cast<size_t>(j)] += dv * dv;
        }
    }
    for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<T>(features.size())), T(1e-6));
    std::vector<TensorT<T>> standardized;
    standardized.reserve(features.size());
    for (const auto& f : features) {
        auto g = TensorT<T>::zeros({d});
        for (long j = 0; j < d; ++j) {
            g.data()[static_cast<size_t>(j)] =
                (f.data()[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)]) /
                sd[static_cast<size_t>(j)];
        }
        standardized.push_back(std::move(g));
    }

    Rng init_rng = Rng(cfg.seed).substream("probe.init");
    auto head = LinearHeadT<T>::init(c, d, std::move(class_names), init_rng);
    AdamWT<T> opt;
    opt.config().lr = static_cast<T>(cfg.lr);
    opt.config().weight_decay = static_cast<T>(cfg.weight_decay);
    for (long step = 0; step < cfg.steps; ++step) {
        Rng batch_rng = Rng(cfg.seed).substream("probe.batch", static_cast<uint64_t>(step));
        head.params.zero_grad();
        TensorT<T> loss;
        for (long b = 0; b < cfg.batch_size; ++b) {
            const size_t i = static_cast<size_t>(batch_rng.uniform_int(standardized.size()));
            auto ce = cross_entropy(head.logits(standardized[i]), labels[i]);
            loss = loss.defined() ? add(loss, ce) : ce;
        }
        loss = mul_scalar(loss, T(1) / static_cast<T>(cfg.batch_size));
        loss.backward();
        opt.step(head.params);
        if (loss_log) loss_log->push_back(static_cast<double>(loss.item()));
    }

    // fold standardization in: z = W (f - mu) / sd + b  =  W' f + b'
    for (long k = 0; k < c; ++k) {
        T shift = T(0);
        for (long j = 0; j < d; ++j) {
            T& w = head.weight.data()[static_cast<size_t>(k * d + j)];
            w /= sd[static_cast<size_t>(j)];
            shift += w * mu[static_cast<size_t>(j)];
        }
        head.bias.data()[static_cast<size_t>(k)] -= shift;
    }
    return head;
}

// Frozen-encoder linear probing over slice records. Features are extracted
// once (no augmentation inside; the runner augments upstream if enabled).
// Class names default to "class_<i>" across the labels seen.
template <typename T>
LinearHeadT<T> train_linear_probe(const std::vector<SliceRecord>& train, const MaeModelT<T>& mae,
                                  const ProbeConfig& cfg, std::vector<std::string> class_names = {},
                                  std::vector<double>* loss_log = nullptr) {
    if (!mae.frozen()) throw ContractError("train_linear_probe: encoder must be frozen");
    std::vector<TensorT<T>> features;
    std::vector<int> labels;
    features.reserve(train.size());
    for (const auto& rec : train) {
        if (!rec.label) throw DataError("probe: unlabeled slice in training set");
        features.push_back(cls_features(mae, rec.image));
        labels.push_back(*rec.label);
    }
    if (class_names.empty()) {
        const int c = 1 + *std::max_element(labels.begin(), labels.end());
        for (int i = 0; i < c; ++i) class_names.push_back("class_" + std::to_string(i));
    }
    return train_probe_on_features(features, labels, std::move(class_names), cfg, loss_log);
}

struct AccuracyReport {
    std::vector<std::string> class_names;
    std::vector<long> correct, total; // per class
    long overall_correct = 0, overall_total = 0;

    double overall() const {
        return overall_total ? static_cast<double>(overall_correct) / overall_total : 0.0;
    }

    // Absent classes report no value and stay out of macro summaries.
    std::optional<double> per_class(size_t i) const {
        if (total[i] == 0) return std::nullopt;
        return static_cast<double>(correct[i]) / static_cast<double>(total[i]);
    }

    double macro_mean() const {
        double sum = 0;
        long n = 0;
        for (size_t i = 0; i < total.size(); ++i) {
            if (auto a = per_class(i)) {
                sum += *a;
                ++n;
            }
        }
        return n ? sum / static_cast<double>(n) : 0.0;
    }
};

template <typename T>
AccuracyReport evaluate_accuracy(const std::vector<SliceRecord>& test, const MaeModelT<T>& mae,
                                 const LinearHeadT<T>& head) {
    if (test.empty()) throw DataError("evaluate_accuracy: empty test set");
    AccuracyReport rep;
    rep.class_names = head.class_names;
    rep.correct.assign(head.class_names.size(), 0);
    rep.total.assign(head.class_names.size(), 0);
    for (const auto& rec : test) {
        if (!rec.label) throw DataError("evaluate_accuracy: unlabeled slice");
        const long pred = head.predict(cls_features(mae, rec.image));
        ++rep.total[static_cast<size_t>(*rec.label)];
        ++rep.overall_total;
        if (pred == *rec.label) {
            ++rep.correct[static_cast<size_t>(*rec.label)];
            ++rep.overall_correct;
        }
    }
    return rep;
}

} // namespace maefuse
