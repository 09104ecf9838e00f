#pragma once

#include <string>
#include <vector>

#include "maefuse/losses.hpp"
#include "maefuse/mae.hpp"

namespace maefuse {

enum class FusionStrategy { Concat, Add, Attention };

inline FusionStrategy parse_fusion(const std::string& s) {
    if (s == "concat") return FusionStrategy::Concat;
    if (s == "add") return FusionStrategy::Add;
    if (s == "attention" || s == "attent") return FusionStrategy::Attention;
    throw ConfigError("unknown fusion strategy '" + s + "' (expected concat|add|attention)");
}

inline const char* fusion_name(FusionStrategy f) {
    switch (f) {
        case FusionStrategy::Concat: return "concat";
        case FusionStrategy::Add: return "add";
        default: return "attention";
    }
}

struct FunetConfig {
    long base_width = 64;
    int depth = 4; // down/up stages; bottleneck sits below them
    std::vector<int> fusion_layers = {1, 3, 6, 9, 12}; // 1-indexed encoder layers
    FusionStrategy fusion = FusionStrategy::Concat;
    int num_classes = 2;
    long image_size = 224;
    int norm_groups = 8;

    void validate(const MaeConfig& mae) const {
        if (num_classes < 2) throw ConfigError("funet: need at least 2 classes (background is class 0)");
        if (static_cast<int>(fusion_layers.size()) != depth + 1) {
            throw ConfigError("funet: " + std::to_string(fusion_layers.size()) +
                              " fusion layers for depth " + std::to_string(depth) + "; need depth+1");
        }
        for (int f : fusion_layers) {
            if (f < 1 || f > mae.enc_layers) {
                throw ConfigError("funet: fusion layer " + std::to_string(f) + " outside [1," +
                                  std::to_string(mae.enc_layers) + "]");
            }
        }
        if (image_size != mae.image_size) {
            throw ConfigError("funet: image size differs from the encoder's");
        }
        if (image_size % (1L << depth) != 0) {
            throw ConfigError("funet: image size must be divisible by 2^depth");
        }
    }

    long width_at(int stage) const { return base_width * (1L << stage); } // stage depth = bottleneck

    static FunetConfig desk() {
        FunetConfig c;
        c.base_width = 8;
        c.depth = 3;
        c.fusion_layers = {1, 2, 3, 4};
        c.image_size = 64;
        return c;
    }
};

namespace detail {

inline int norm_groups_for(long channels, int requested) {
    int g = static_cast<int>(std::min<long>(requested, channels));
    while (g > 1 && channels % g != 0) --g;
    return g;
}

} // namespace detail

// conv3x3 + group norm + relu, twice.
template <typename T>
struct ConvBlockT {
    TensorT<T> w1, b1, g1, be1;
    TensorT<T> w2, b2, g2, be2;
    int groups = 8;

    TensorT<T> forward(const TensorT<T>& x) const {
        auto h = relu(group_norm(conv2d(x, w1, b1, 1, 1), groups, g1, be1));
        return relu(group_norm(conv2d(h, w2, b2, 1, 1), groups, g2, be2));
    }
};

namespace detail {

template <typename T>
ConvBlockT<T> make_conv_block(ParamSetT<T>& ps, const std::string& prefix, long in_ch, long out_ch,
                              int groups, Rng& rng) {
    ConvBlockT<T> b;
    b.groups = norm_groups_for(out_ch, groups);
    b.w1 = ps.add(prefix + ".conv1.w", kaiming_uniform<T>({out_ch, in_ch, 3, 3}, rng));
    b.b1 = ps.add(prefix + ".conv1.b", TensorT<T>::zeros({out_ch}));
    b.g1 = ps.add(prefix + ".norm1.g", TensorT<T>::full({out_ch}, T(1)));
    b.be1 = ps.add(prefix + ".norm1.b", TensorT<T>::zeros({out_ch}));
    b.w2 = ps.add(prefix + ".conv2.w", kaiming_uniform<T>({out_ch, out_ch, 3, 3}, rng));
    b.b2 = ps.add(prefix + ".conv2.b", TensorT<T>::zeros({out_ch}));
    b.g2 = ps.add(prefix + ".norm2.g", TensorT<T>::full({out_ch}, T(1)));
    b.be2 = ps.add(prefix + ".norm2.b", TensorT<T>::zeros({out_ch}));
    return b;
}

} // namespace detail

// Merges a projected/resized MAE token grid into a CNN feature map. All
// three strategies keep the CNN map's shape.
template <typename T>
struct FusionBlockT {
    FusionStrategy kind = FusionStrategy::Concat;
    TensorT<T> proj_w, proj_b; // 1x1 conv D_e -> C_f (concat/add)
    TensorT<T> post_w, post_b; // 3x3 conv 2*C_f -> C_f (concat)
    AttentionParamsT<T> attn;  // cross-attention (attention)

    TensorT<T> forward(const TensorT<T>& cnn, const TensorT<T>& grid) const {
        const long n = cnn.dim(0), cf = cnn.dim(1), h = cnn.dim(2), w = cnn.dim(3);
        if (kind == FusionStrategy::Concat || kind == FusionStrategy::Add) {
            auto p = resize_bilinear(conv2d(grid, proj_w, proj_b, 1, 0), h, w);
            if (p.dim(1) != cf) throw ContractError("fusion: projected channels mismatch");
            if (kind == FusionStrategy::Add) return add(cnn, p);
            return conv2d(concat(1, {cnn, p}), post_w, post_b, 1, 1);
        }
        // attention: CNN pixels query the MAE tokens, single head, residual
        const long tg = grid.dim(2) * grid.dim(3);
        auto queries = reshape(permute(cnn, {0, 2, 3, 1}), {n, h * w, cf});
        auto tokens = reshape(permute(grid, {0, 2, 3, 1}), {n, tg, grid.dim(1)});
        auto fused = multi_head_attention(queries, tokens, attn, 1);
        auto spatial = permute(reshape(fused, {n, h, w, cf}), {0, 3, 1, 2});
        return add(cnn, spatial);
    }
};

namespace detail {

template <typename T>
FusionBlockT<T> make_fusion_block(ParamSetT<T>& ps, const std::string& prefix, FusionStrategy kind,
                                  long enc_dim, long cf, Rng& rng) {
    FusionBlockT<T> f;
    f.kind = kind;
    switch (kind) {
        case FusionStrategy::Concat:
            f.proj_w = ps.add(prefix + ".proj.w", kaiming_uniform<T>({cf, enc_dim, 1, 1}, rng));
            f.proj_b = ps.add(prefix + ".proj.b", TensorT<T>::zeros({cf}));
            f.post_w = ps.add(prefix + ".post.w", kaiming_uniform<T>({cf, 2 * cf, 3, 3}, rng));
            f.post_b = ps.add(prefix + ".post.b", TensorT<T>::zeros({cf}));
            break;
        case FusionStrategy::Add:
            f.proj_w = ps.add(prefix + ".proj.w", kaiming_uniform<T>({cf, enc_dim, 1, 1}, rng));
            f.proj_b = ps.add(prefix + ".proj.b", TensorT<T>::zeros({cf}));
            break;
        case FusionStrategy::Attention:
            f.attn.wq = ps.add(prefix + ".attn.wq", trunc_normal<T>({cf, cf}, 0.02, rng));
            f.attn.bq = ps.add(prefix + ".attn.bq", TensorT<T>::zeros({cf}));
            f.attn.wk = ps.add(prefix + ".attn.wk", trunc_normal<T>({enc_dim, cf}, 0.02, rng));
            f.attn.bk = ps.add(prefix + ".attn.bk", TensorT<T>::zeros({cf}));
            f.attn.wv = ps.add(prefix + ".attn.wv", trunc_normal<T>({enc_dim, cf}, 0.02, rng));
            f.attn.bv = ps.add(prefix + ".attn.bv", TensorT<T>::zeros({cf}));
            f.attn.wo = ps.add(prefix + ".attn.wo", trunc_normal<T>({cf, cf}, 0.02, rng));
            f.attn.bo = ps.add(prefix + ".attn.bo", TensorT<T>::zeros({cf}));
            break;
    }
    return f;
}

} // namespace detail

// Reshapes the 196 (or grid^2) patch tokens of a full-visibility encoder
// output into a [1, D_e, g, g] feature map, dropping CLS.
template <typename T>
TensorT<T> mae_token_grid(const TensorT<T>& latent, long grid_side) {
    if (latent.ndim() != 3 || latent.dim(0) != 1) {
        throw ContractError("mae_token_grid: latent must be [1, 1+T, D]");
    }
    const long tp = grid_side * grid_side;
    if (latent.dim(1) != 1 + tp) {
        throw ContractError("mae_token_grid: encoder output has " + std::to_string(latent.dim(1)) +
                            " tokens; need " + std::to_string(1 + tp) +
                            " (run the encoder with all patches visible)");
    }
    std::vector<long> rows(static_cast<size_t>(tp));
    std::iota(rows.begin(), rows.end(), 1L);
    const long d = latent.dim(2);
    return permute(reshape(index_select(latent, 1, rows), {1, grid_side, grid_side, d}),
                   {0, 3, 1, 2});
}

// U-Net backbone with a fusion block at the bottleneck and after every
// decoder stage. Fusion layers pair deepest encoder layer -> coarsest stage.
template <typename T>
struct FunetModelT {
    FunetConfig cfg;
    MaeConfig mae_cfg;
    ParamSetT<T> params;
    std::vector<ConvBlockT<T>> enc;
    ConvBlockT<T> bottleneck;
    std::vector<ConvBlockT<T>> dec;
    std::vector<FusionBlockT<T>> fusion; // [0] bottleneck, then decoder stages coarse->fine
    std::vector<int> fusion_order;       // encoder layer fused at each point
    TensorT<T> head_w, head_b;

    static FunetModelT init(const FunetConfig& cfg, const MaeConfig& mae_cfg, Rng& rng) {
        cfg.validate(mae_cfg);
        FunetModelT m;
        m.cfg = cfg;
        m.mae_cfg = mae_cfg;
        auto& ps = m.params;
        const int depth = cfg.depth;
        for (int i = 0; i < depth; ++i) {
            const long in_ch = (i == 0) ? 1 : cfg.width_at(i - 1);
            m.enc.push_back(detail::make_conv_block(ps, "enc" + std::to_string(i), in_ch,
                                                    cfg.width_at(i), cfg.norm_groups, rng));
        }
        m.bottleneck = detail::make_conv_block(ps, "bottleneck", cfg.width_at(depth - 1),
                                               cfg.width_at(depth), cfg.norm_groups, rng);
        std::vector<int> sorted_layers = cfg.fusion_layers;
        std::sort(sorted_layers.begin(), sorted_layers.end());
        m.fusion_order.push_back(sorted_layers[static_cast<size_t>(depth)]);
        m.fusion.push_back(detail::make_fusion_block(ps, "fuse.bottleneck", cfg.fusion,
                                                     mae_cfg.enc_dim, cfg.width_at(depth), rng));
        for (int d = 0; d < depth; ++d) {
            const long skip_ch = cfg.width_at(depth - 1 - d);
            const long up_ch = cfg.width_at(depth - d);
            m.dec.push_back(detail::make_conv_block(ps, "dec" + std::to_string(d), skip_ch + up_ch,
                                                    skip_ch, cfg.norm_groups, rng));
            m.fusion_order.push_back(sorted_layers[static_cast<size_t>(depth - 1 - d)]);
            m.fusion.push_back(detail::make_fusion_block(ps, "fuse.dec" + std::to_string(d),
                                                         cfg.fusion, mae_cfg.enc_dim, skip_ch, rng));
        }
        m.head_w = ps.add("head.w", kaiming_uniform<T>({cfg.num_classes, cfg.base_width, 1, 1}, rng));
        m.head_b = ps.add("head.b", TensorT<T>::zeros({cfg.num_classes}));
        return m;
    }

    // grids[i] pairs with fusion point i, [N, D_e, g, g].
    TensorT<T> forward_with_grids(const TensorT<T>& images,
                                  const std::vector<TensorT<T>>& grids) const {
        if (grids.size() != fusion.size()) throw ContractError("funet: grid count mismatch");
        auto x = images;
        std::vector<TensorT<T>> skips;
        for (const auto& stage : enc) {
            x = stage.forward(x);
            skips.push_back(x);
            x = maxpool2x2(x);
        }
        x = bottleneck.forward(x);
        x = fusion[0].forward(x, grids[0]);
        for (size_t d = 0; d < dec.size(); ++d) {
            x = upsample_bilinear2x(x);
            x = concat(1, {skips[skips.size() - 1 - d], x});
            x = dec[d].forward(x);
            x = fusion[d + 1].forward(x, grids[d + 1]);
        }
        return conv2d(x, head_w, head_b, 1, 0); // [N, C, S, S]
    }

    TensorT<T> forward(const std::vector<Image2D>& images, const MaeModelT<T>& mae) const;

    std::vector<TensorT<T>> encoder_grids(const std::vector<Image2D>& images,
                                          const MaeModelT<T>& mae) const {
        const long g = mae.cfg.grid_side();
        std::vector<std::vector<TensorT<T>>> per_point(fusion.size());
        for (const auto& img : images) {
            auto latents = mae.encode_image(img, full_visible(mae.cfg.num_patches()));
            for (size_t i = 0; i < fusion.size(); ++i) {
                per_point[i].push_back(
                    mae_token_grid(latents[static_cast<size_t>(fusion_order[i] - 1)], g));
            }
        }
        std::vector<TensorT<T>> grids;
        grids.reserve(fusion.size());
        for (auto& parts : per_point) grids.push_back(concat(0, parts));
        return grids;
    }
};

template <typename T>
TensorT<T> batch_images(const std::vector<Image2D>& images) {
    if (images.empty()) throw ContractError("batch_images: empty batch");
    const long s = images[0].rows;
    std::vector<T> v;
    v.reserve(images.size() * static_cast<size_t>(s * s));
    for (const auto& img : images) {
        if (img.rows != s || img.cols != s) throw ContractError("batch_images: inconsistent sizes");
        for (float x : img.v) v.push_back(static_cast<T>(x));
    }
    return TensorT<T>::from({static_cast<long>(images.size()), 1, s, s}, std::move(v));
}

template <typename T>
TensorT<T> FunetModelT<T>::forward(const std::vector<Image2D>& images,
                                   const MaeModelT<T>& mae) const {
    if (!mae.frozen()) throw ContractError("funet: MAE encoder must be frozen");
    return forward_with_grids(batch_images<T>(images), encoder_grids(images, mae));
}

// Ablation baseline: the final-layer token grid through a small conv head
// with 2x upsampling between convs, then a bilinear resize to full size.
template <typename T>
struct MaeDirectT {
    long width = 32;
    int num_classes = 2;
    long image_size = 224;
    int groups = 8;
    ParamSetT<T> params;
    TensorT<T> w1, b1, g1, be1;
    TensorT<T> w2, b2, g2, be2;
    TensorT<T> w3, b3;

    static MaeDirectT init(const FunetConfig& cfg, const MaeConfig& mae_cfg, Rng& rng) {
        MaeDirectT m;
        m.width = cfg.base_width * 4;
        m.num_classes = cfg.num_classes;
        m.image_size = cfg.image_size;
        m.groups = detail::norm_groups_for(m.width, cfg.norm_groups);
        auto& ps = m.params;
        m.w1 = ps.add("direct.conv1.w", kaiming_uniform<T>({m.width, mae_cfg.enc_dim, 3, 3}, rng));
        m.b1 = ps.add("direct.conv1.b", TensorT<T>::zeros({m.width}));
        m.g1 = ps.add("direct.norm1.g", TensorT<T>::full({m.width}, T(1)));
        m.be1 = ps.add("direct.norm1.b", TensorT<T>::zeros({m.width}));
        m.w2 = ps.add("direct.conv2.w", kaiming_uniform<T>({m.width, m.width, 3, 3}, rng));
        m.b2 = ps.add("direct.conv2.b", TensorT<T>::zeros({m.width}));
        m.g2 = ps.add("direct.norm2.g", TensorT<T>::full({m.width}, T(1)));
        m.be2 = ps.add("direct.norm2.b", TensorT<T>::zeros({m.width}));
        m.w3 = ps.add("direct.conv3.w", kaiming_uniform<T>({m.num_classes, m.width, 3, 3}, rng));
        m.b3 = ps.add("direct.conv3.b", TensorT<T>::zeros({m.num_classes}));
        return m;
    }

    TensorT<T> forward(const std::vector<Image2D>& images, const MaeModelT<T>& mae) const {
        if (!mae.frozen()) throw ContractError("mae_direct: MAE encoder must be frozen");
        const long g = mae.cfg.grid_side();
        std::vector<TensorT<T>> grids;
        for (const auto& img : images) {
            auto latents = mae.encode_image(img, full_visible(mae.cfg.num_patches()));
            grids.push_back(mae_token_grid(latents.back(), g));
        }
        auto x = concat(0, grids);
        x = upsample_bilinear2x(relu(group_norm(conv2d(x, w1, b1, 1, 1), groups, g1, be1)));
        x = upsample_bilinear2x(relu(group_norm(conv2d(x, w2, b2, 1, 1), groups, g2, be2)));
        x = conv2d(x, w3, b3, 1, 1);
        if (x.dim(2) != image_size || x.dim(3) != image_size) {
            x = resize_bilinear(x, image_size, image_size);
        }
        return x;
    }
};

struct SegLossValues {
    double total = 0, dice = 0, focal = 0, ce = 0;
};

// Forward, hybrid loss, backward, AdamW on the trainable parameters only.
template <typename T, typename SegModel>
SegLossValues seg_train_step(const std::vector<SliceRecord>& batch, const MaeModelT<T>& mae,
                             SegModel& model, AdamWT<T>& opt, const HybridLossWeights& w = {}) {
    if (batch.empty()) throw ContractError("seg_train_step: empty batch");
    std::vector<Image2D> images;
    std::vector<MaskImage> targets;
    for (const auto& rec : batch) {
        if (!rec.seg_mask) throw ContractError("seg_train_step: batch entry lacks a seg mask");
        images.push_back(rec.image);
        targets.push_back(*rec.seg_mask);
    }
    auto logits = model.forward(images, mae);
    auto loss = hybrid_loss(logits, targets, w);
    model.params.zero_grad();
    loss.total.backward();
    opt.step(model.params);
    return {static_cast<double>(loss.total.item()), loss.dice, loss.focal, loss.ce};
}

// Deterministic argmax labels (ties toward the lower class index).
template <typename T>
std::vector<MaskImage> predict_labels(const TensorT<T>& logits) {
    const long n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    std::vector<MaskImage> out;
    out.reserve(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        MaskImage m(h, w, 0);
        for (long p = 0; p < h * w; ++p) {
            long best = 0;
            for (long cc = 1; cc < c; ++cc) {
                const T cur = logits.data()[static_cast<size_t>(((i * c + cc) * h * w) + p)];
                const T bv = logits.data()[static_cast<size_t>(((i * c + best) * h * w) + p)];
                if (cur > bv) best = cc;
            }
            m.v[static_cast<size_t>(p)] = static_cast<int32_t>(best);
        }
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace maefuse
