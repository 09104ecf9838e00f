#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "maefuse/init.hpp"
#include "maefuse/layers.hpp"
#include "maefuse/optim.hpp"
#include "maefuse/slice.hpp"

namespace maefuse {

struct MaeConfig {
    long image_size = 224;
    long patch_size = 16;
    long enc_dim = 768;
    int enc_layers = 12;
    int enc_heads = 12;
    long dec_dim = 512;
    int dec_layers = 8;
    int dec_heads = 16;
    double mlp_ratio = 4.0;
    double mask_ratio = 0.75;
    bool norm_pix_target = false;

    long grid_side() const { return image_size / patch_size; }
    long num_patches() const { return grid_side() * grid_side(); }
    long patch_dim() const { return patch_size * patch_size; } // grayscale: 1 channel

    void validate() const {
        if (image_size % patch_size != 0) {
            throw ConfigError("mae: image size " + std::to_string(image_size) +
                              " not divisible by patch size " + std::to_string(patch_size));
        }
        if (enc_dim % enc_heads != 0) throw ConfigError("mae: enc_dim not divisible by enc_heads");
        if (dec_dim % dec_heads != 0) throw ConfigError("mae: dec_dim not divisible by dec_heads");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
            throw ConfigError("mae: mask_ratio must lie in (0, 1)");
        }
    }

    // ViT-Base encoder with the standard lightweight decoder.
    static MaeConfig paper() { return MaeConfig{}; }

    // Minutes-scale preset exercising the same code paths.
    static MaeConfig desk() {
        MaeConfig c;
        c.image_size = 64;
        c.patch_size = 8;
        c.enc_dim = 64;
        c.enc_layers = 4;
        c.enc_heads = 4;
        c.dec_dim = 32;
        c.dec_layers = 2;
        c.dec_heads = 4;
        return c;
    }
};

// Visible/masked partition of the patch tokens (CLS is never masked).
struct MaskPlan {
    std::vector<long> visible; // sorted
    std::vector<long> masked;  // sorted complement

    long total() const { return static_cast<long>(visible.size() + masked.size()); }

    void validate(long num_patches) const {
        if (total() != num_patches) {
            throw ContractError("mask plan covers " + std::to_string(total()) + " tokens, expected " +
                                std::to_string(num_patches));
        }
    }
};

inline MaskPlan full_visible(long num_patches) {
    MaskPlan p;
    p.visible.resize(static_cast<size_t>(num_patches));
    std::iota(p.visible.begin(), p.visible.end(), 0L);
    return p;
}

// Uniform random subset of round(T * (1 - ratio)) visible tokens.
inline MaskPlan random_mask(long num_patches, double mask_ratio, Rng& rng) {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
        throw ContractError("random_mask: ratio must lie in (0, 1)");
    }
    const long n_visible = std::lround(static_cast<double>(num_patches) * (1.0 - mask_ratio));
    std::vector<long> ids(static_cast<size_t>(num_patches));
    std::iota(ids.begin(), ids.end(), 0L);
    for (long j = 0; j < n_visible; ++j) {
        const size_t pick = static_cast<size_t>(j) +
                            static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(num_patches - j)));
        std::swap(ids[static_cast<size_t>(j)], ids[pick]);
    }
    MaskPlan p;
    p.visible.assign(ids.begin(), ids.begin() + n_visible);
    p.masked.assign(ids.begin() + n_visible, ids.end());
    std::sort(p.visible.begin(), p.visible.end());
    std::sort(p.masked.begin(), p.masked.end());
    return p;
}

// Non-overlapping patches in row-major patch order, each flattened row-major.
template <typename T>
TensorT<T> patchify(const Image2D& img, long patch_size) {
    if (img.rows != img.cols) throw ContractError("patchify: image must be square");
    if (img.rows % patch_size != 0) throw ContractError("patchify: image not divisible into patches");
    const long side = img.rows / patch_size;
    const long pd = patch_size * patch_size;
    std::vector<T> data(static_cast<size_t>(side * side * pd));
    for (long pr = 0; pr < side; ++pr) {
        for (long pc = 0; pc < side; ++pc) {
            T* tok = data.data() + (pr * side + pc) * pd;
            for (long r = 0; r < patch_size; ++r) {
                for (long c = 0; c < patch_size; ++c) {
                    tok[r * patch_size + c] =
                        static_cast<T>(img.at(pr * patch_size + r, pc * patch_size + c));
                }
            }
        }
    }
    return TensorT<T>::from({side * side, pd}, std::move(data));
}

template <typename T>
Image2D unpatchify(const TensorT<T>& tokens, long image_size, long patch_size) {
    const long side = image_size / patch_size;
    const long pd = patch_size * patch_size;
    if (tokens.ndim() != 2 || tokens.dim(0) != side * side || tokens.dim(1) != pd) {
        throw ContractError("unpatchify: tokens have shape " + shape_str(tokens.shape()));
    }
    Image2D img(image_size, image_size);
    for (long pr = 0; pr < side; ++pr) {
        for (long pc = 0; pc < side; ++pc) {
            const T* tok = tokens.data().data() + (pr * side + pc) * pd;
            for (long r = 0; r < patch_size; ++r) {
                for (long c = 0; c < patch_size; ++c) {
                    img.at(pr * patch_size + r, pc * patch_size + c) =
                        static_cast<float>(tok[r * patch_size + c]);
                }
            }
        }
    }
    return img;
}

// Pre-norm transformer block: x += MHA(LN(x)); x += MLP(LN(x)).
template <typename T>
struct TransformerBlockT {
    TensorT<T> ln1_g, ln1_b, ln2_g, ln2_b;
    AttentionParamsT<T> attn;
    TensorT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    int heads = 1;

    TensorT<T> forward(const TensorT<T>& x) const {
        auto h = layer_norm(x, ln1_g, ln1_b);
        auto y = add(x, multi_head_attention(h, h, attn, heads));
        auto h2 = layer_norm(y, ln2_g, ln2_b);
        auto m = linear(gelu(linear(h2, mlp_w1, mlp_b1)), mlp_w2, mlp_b2);
        return add(y, m);
    }
};

namespace detail {

template <typename T>
TransformerBlockT<T> make_block(ParamSetT<T>& ps, const std::string& prefix, long dim, int heads,
                                long mlp_hidden, Rng& rng) {
    TransformerBlockT<T> b;
    b.heads = heads;
    b.ln1_g = ps.add(prefix + ".ln1.g", TensorT<T>::full({dim}, T(1)));
    b.ln1_b = ps.add(prefix + ".ln1.b", TensorT<T>::zeros({dim}));
    b.attn.wq = ps.add(prefix + ".attn.wq", trunc_normal<T>({dim, dim}, 0.02, rng));
    b.attn.bq = ps.add(prefix + ".attn.bq", TensorT<T>::zeros({dim}));
    b.attn.wk = ps.add(prefix + ".attn.wk", trunc_normal<T>({dim, dim}, 0.02, rng));
    b.attn.bk = ps.add(prefix + ".attn.bk", TensorT<T>::zeros({dim}));
    b.attn.wv = ps.add(prefix + ".attn.wv", trunc_normal<T>({dim, dim}, 0.02, rng));
    b.attn.bv = ps.add(prefix + ".attn.bv", TensorT<T>::zeros({dim}));
    b.attn.wo = ps.add(prefix + ".attn.wo", trunc_normal<T>({dim, dim}, 0.02, rng));
    b.attn.bo = ps.add(prefix + ".attn.bo", TensorT<T>::zeros({dim}));
    b.ln2_g = ps.add(prefix + ".ln2.g", TensorT<T>::full({dim}, T(1)));
    b.ln2_b = ps.add(prefix + ".ln2.b", TensorT<T>::zeros({dim}));
    b.mlp_w1 = ps.add(prefix + ".mlp.w1", trunc_normal<T>({dim, mlp_hidden}, 0.02, rng));
    b.mlp_b1 = ps.add(prefix + ".mlp.b1", TensorT<T>::zeros({mlp_hidden}));
    b.mlp_w2 = ps.add(prefix + ".mlp.w2", trunc_normal<T>({mlp_hidden, dim}, 0.02, rng));
    b.mlp_b2 = ps.add(prefix + ".mlp.b2", TensorT<T>::zeros({dim}));
    return b;
}

} // namespace detail

template <typename T>
struct MaeModelT {
    MaeConfig cfg;
    ParamSetT<T> params;

    TensorT<T> patch_w, patch_b; // [p^2, D_e], [D_e]
    TensorT<T> cls_token;        // [1, D_e]
    TensorT<T> pos_emb;          // [1+T, D_e], learned
    std::vector<TransformerBlockT<T>> enc_blocks;
    TensorT<T> enc_norm_g, enc_norm_b;
    TensorT<T> dec_embed_w, dec_embed_b; // [D_e, D_d]
    TensorT<T> mask_token;               // [1, D_d]
    TensorT<T> dec_pos_emb;              // [1+T, D_d]
    std::vector<TransformerBlockT<T>> dec_blocks;
    TensorT<T> dec_norm_g, dec_norm_b;
    TensorT<T> head_w, head_b; // [D_d, p^2]

    static MaeModelT init(const MaeConfig& cfg, Rng& rng) {
        cfg.validate();
        MaeModelT m;
        m.cfg = cfg;
        auto& ps = m.params;
        const long pd = cfg.patch_dim(), tp = cfg.num_patches();
        m.patch_w = ps.add("patch_embed.w", trunc_normal<T>({pd, cfg.enc_dim}, 0.02, rng));
        m.patch_b = ps.add("patch_embed.b", TensorT<T>::zeros({cfg.enc_dim}));
        m.cls_token = ps.add("cls_token", trunc_normal<T>({1, cfg.enc_dim}, 0.02, rng));
        m.pos_emb = ps.add("pos_emb", trunc_normal<T>({1 + tp, cfg.enc_dim}, 0.02, rng));
        const long enc_hidden = static_cast<long>(cfg.mlp_ratio * static_cast<double>(cfg.enc_dim));
        for (int i = 0; i < cfg.enc_layers; ++i) {
            m.enc_blocks.push_back(detail::make_block(ps, "enc.block" + std::to_string(i),
                                                      cfg.enc_dim, cfg.enc_heads, enc_hidden, rng));
        }
        m.enc_norm_g = ps.add("enc.norm.g", TensorT<T>::full({cfg.enc_dim}, T(1)));
        m.enc_norm_b = ps.add("enc.norm.b", TensorT<T>::zeros({cfg.enc_dim}));
        m.dec_embed_w = ps.add("dec.embed.w", trunc_normal<T>({cfg.enc_dim, cfg.dec_dim}, 0.02, rng));
        m.dec_embed_b = ps.add("dec.embed.b", TensorT<T>::zeros({cfg.dec_dim}));
        m.mask_token = ps.add("dec.mask_token", trunc_normal<T>({1, cfg.dec_dim}, 0.02, rng));
        m.dec_pos_emb = ps.add("dec.pos_emb", trunc_normal<T>({1 + tp, cfg.dec_dim}, 0.02, rng));
        const long dec_hidden = static_cast<long>(cfg.mlp_ratio * static_cast<double>(cfg.dec_dim));
        for (int i = 0; i < cfg.dec_layers; ++i) {
            m.dec_blocks.push_back(detail::make_block(ps, "dec.block" + std::to_string(i),
                                                      cfg.dec_dim, cfg.dec_heads, dec_hidden, rng));
        }
        m.dec_norm_g = ps.add("dec.norm.g", TensorT<T>::full({cfg.dec_dim}, T(1)));
        m.dec_norm_b = ps.add("dec.norm.b", TensorT<T>::zeros({cfg.dec_dim}));
        m.head_w = ps.add("dec.head.w", trunc_normal<T>({cfg.dec_dim, pd}, 0.02, rng));
        m.head_b = ps.add("dec.head.b", TensorT<T>::zeros({pd}));
        return m;
    }

    void freeze() { params.freeze_all(); }

    bool frozen() const {
        for (const auto& p : params.items()) {
            if (!p.frozen) return false;
        }
        return true;
    }

    // Runs the encoder over the visible tokens and returns every block's
    // output, each [1, 1+V, D_e] with the CLS token first. Downstream users
    // tap intermediate layers (segmentation) or the final one (probe/dec... ).
    std::vector<TensorT<T>> encode(const TensorT<T>& tokens, const MaskPlan& plan) const {
        plan.validate(cfg.num_patches());
        auto vis = index_select(tokens, 0, plan.visible);
        auto x = linear(vis, patch_w, patch_b);
        std::vector<long> pos_ids;
        pos_ids.reserve(plan.visible.size());
        for (long v : plan.visible) pos_ids.push_back(v + 1);
        x = add(x, index_select(pos_emb, 0, pos_ids));
        auto cls = add(cls_token, index_select(pos_emb, 0, {0L}));
        auto seq = reshape(concat(0, {cls, x}), {1, 1 + static_cast<long>(plan.visible.size()),
                                                 cfg.enc_dim});
        std::vector<TensorT<T>> latents;
        latents.reserve(static_cast<size_t>(cfg.enc_layers));
        for (const auto& blk : enc_blocks) {
            seq = blk.forward(seq);
            latents.push_back(seq);
        }
        return latents;
    }

    std::vector<TensorT<T>> encode_image(const Image2D& img, const MaskPlan& plan) const {
        return encode(patchify<T>(img, cfg.patch_size), plan);
    }

    // Final-layer output through the encoder norm.
    TensorT<T> encoder_final(const TensorT<T>& last_latent) const {
        return layer_norm(last_latent, enc_norm_g, enc_norm_b);
    }

    // Projects the encoded visible tokens, inserts mask tokens at the masked
    // positions (position-keyed, insertion order is irrelevant), runs the
    // decoder and predicts all T patches. Only masked ones get scored.
    TensorT<T> decode(const TensorT<T>& last_latent, const MaskPlan& plan) const {
        plan.validate(cfg.num_patches());
        const long v = static_cast<long>(plan.visible.size());
        const long mcount = static_cast<long>(plan.masked.size());
        const long tp = cfg.num_patches();
        auto y = linear(encoder_final(last_latent), dec_embed_w, dec_embed_b); // [1, 1+V, D_d]
        auto cls = index_select(y, 1, {0L});
        std::vector<long> vis_rows(static_cast<size_t>(v));
        std::iota(vis_rows.begin(), vis_rows.end(), 1L);
        auto vis = index_select(y, 1, vis_rows); // [1, V, D_d]
        auto masks = reshape(broadcast0(mask_token, mcount), {1, mcount, cfg.dec_dim});
        auto unordered = concat(1, {vis, masks}); // visible first, then mask tokens
        // row index of each patch position inside `unordered`
        std::vector<long> row_of_pos(static_cast<size_t>(tp));
        for (long j = 0; j < v; ++j) row_of_pos[static_cast<size_t>(plan.visible[j])] = j;
        for (long j = 0; j < mcount; ++j) row_of_pos[static_cast<size_t>(plan.masked[j])] = v + j;
        auto ordered = index_select(unordered, 1, row_of_pos); // [1, T, D_d]
        std::vector<long> pos_ids(static_cast<size_t>(tp));
        std::iota(pos_ids.begin(), pos_ids.end(), 1L);
        ordered = add(ordered, reshape(index_select(dec_pos_emb, 0, pos_ids), {1, tp, cfg.dec_dim}));
        cls = add(cls, reshape(index_select(dec_pos_emb, 0, {0L}), {1, 1, cfg.dec_dim}));
        auto seq = concat(1, {cls, ordered});
        for (const auto& blk : dec_blocks) seq = blk.forward(seq);
        seq = layer_norm(seq, dec_norm_g, dec_norm_b);
        auto pix = linear(seq, head_w, head_b); // [1, 1+T, p^2]
        std::vector<long> patch_rows(static_cast<size_t>(tp));
        std::iota(patch_rows.begin(), patch_rows.end(), 1L);
        return reshape(index_select(pix, 1, patch_rows), {tp, cfg.patch_dim()});
    }
};

using MaeModel = MaeModelT<float>;

// Reconstruction target; optional per-patch normalization sits behind the
// config flag (off: raw normalized pixels, the default).
template <typename T>
TensorT<T> mae_target(const TensorT<T>& tokens, const MaeConfig& cfg) {
    if (!cfg.norm_pix_target) return tokens;
    const long tp = tokens.dim(0), pd = tokens.dim(1);
    std::vector<T> out(tokens.data().size());
    for (long t = 0; t < tp; ++t) {
        const T* src = tokens.data().data() + t * pd;
        T mu = T(0);
        for (long i = 0; i < pd; ++i) mu += src[i];
        mu /= static_cast<T>(pd);
        T var = T(0);
        for (long i = 0; i < pd; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<T>(pd);
        const T is = T(1) / std::sqrt(var + T(1e-6));
        for (long i = 0; i < pd; ++i) out[static_cast<size_t>(t * pd + i)] = (src[i] - mu) * is;
    }
    return TensorT<T>::from(tokens.shape(), std::move(out));
}

// L = (1/N) * sum_i w_i * mean-over-masked-patches(per-pixel squared error).
template <typename T>
TensorT<T> weighted_recon_loss(const std::vector<TensorT<T>>& preds,
                               const std::vector<TensorT<T>>& targets,
                               const std::vector<MaskPlan>& plans, const std::vector<double>& weights) {
    const size_t n = preds.size();
    if (n == 0 || targets.size() != n || plans.size() != n || weights.size() != n) {
        throw ContractError("weighted_recon_loss: batch size mismatch");
    }
    TensorT<T> total;
    for (size_t i = 0; i < n; ++i) {
        if (plans[i].masked.empty()) {
            throw ContractError("weighted_recon_loss: sample " + std::to_string(i) +
                                " has no masked patches; per-sample loss undefined");
        }
        auto dp = index_select(preds[i], 0, plans[i].masked);
        auto dt = index_select(targets[i], 0, plans[i].masked);
        auto diff = sub(dp, dt);
        auto li = mean_all(mul(diff, diff));
        auto term = mul_scalar(li, static_cast<T>(weights[i]));
        total = total.defined() ? add(total, term) : term;
    }
    return mul_scalar(total, T(1) / static_cast<T>(n));
}

// One forward/backward/optimizer cycle over a batch of slices. Per-sample
// masks come from `rng`; weights default to 1 when no brain mask is present.
template <typename T>
double pretrain_step(const std::vector<SliceRecord>& batch, MaeModelT<T>& model, AdamWT<T>& opt,
                     Rng& rng) {
    if (batch.empty()) throw ContractError("pretrain_step: empty batch");
    std::vector<TensorT<T>> preds, targets;
    std::vector<MaskPlan> plans;
    std::vector<double> weights;
    for (const auto& rec : batch) {
        auto tokens = patchify<T>(rec.image, model.cfg.patch_size);
        auto plan = random_mask(model.cfg.num_patches(), model.cfg.mask_ratio, rng);
        auto latents = model.encode(tokens, plan);
        preds.push_back(model.decode(latents.back(), plan));
        targets.push_back(mae_target(tokens, model.cfg));
        plans.push_back(std::move(plan));
        weights.push_back(rec.brain_mask ? static_cast<double>(rec.weight) : 1.0);
    }
    auto loss = weighted_recon_loss(preds, targets, plans, weights);
    model.params.zero_grad();
    loss.backward();
    opt.step(model.params);
    return static_cast<double>(loss.item());
}

} // namespace maefuse
