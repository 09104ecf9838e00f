#include <gtest/gtest.h>

#include <cstring>

#include "maefuse/funet.hpp"
#include "maefuse/gradcheck.hpp"
#include "maefuse/probe.hpp"

using namespace maefuse;
using DT = TensorT<double>;

namespace {

DT rand_t(Shape s, Rng& r, double lo = -1.0, double hi = 1.0) {
    auto t = DT::zeros(std::move(s));
    for (auto& x : t.data()) x = r.uniform(lo, hi);
    return t;
}

// random softmax-valid probabilities over C classes on an HxW grid
DT random_probs(long n, long c, long h, long w, Rng& r) {
    auto logits = rand_t({n, c, h, w}, r, -2, 2);
    return softmax(logits, 1);
}

std::vector<MaskImage> random_targets(long n, long c, long h, long w, Rng& r) {
    std::vector<MaskImage> out;
    for (long i = 0; i < n; ++i) {
        MaskImage m(h, w, 0);
        for (auto& x : m.v) x = static_cast<int32_t>(r.uniform_int(static_cast<uint64_t>(c)));
        out.push_back(std::move(m));
    }
    return out;
}

MaeModelT<float> frozen_desk_mae(uint64_t seed) {
    Rng ir = Rng(seed).substream("init");
    auto m = MaeModelT<float>::init(MaeConfig::desk(), ir);
    m.freeze();
    return m;
}

std::vector<float> snapshot(const ParamSetT<float>& ps) {
    std::vector<float> out;
    for (const auto& p : ps.items()) {
        out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    }
    return out;
}

Image2D random_image(long size, Rng& r) {
    Image2D img(size, size);
    for (auto& x : img.v) x = static_cast<float>(r.uniform());
    return img;
}

// disk/background slice pair for overfit smoke tests
SliceRecord disk_record(long size, long cx, long cy, long rad) {
    SliceRecord rec;
    rec.image = Image2D(size, size, 0.05f);
    MaskImage m(size, size, 0);
    for (long r = 0; r < size; ++r) {
        for (long c = 0; c < size; ++c) {
            const long dy = r - cy, dx = c - cx;
            if (dy * dy + dx * dx <= rad * rad) {
                rec.image.at(r, c) = 0.9f;
                m.at(r, c) = 1;
            }
        }
    }
    rec.seg_mask = m;
    return rec;
}

} // namespace

// ---------------------------------------------------------------------------
// Config + token grid
// ---------------------------------------------------------------------------

TEST(FunetConfig, FusionLayerCountMustMatchDepth) {
    auto cfg = FunetConfig::desk();
    cfg.fusion_layers = {1, 2, 3};
    EXPECT_THROW(cfg.validate(MaeConfig::desk()), ConfigError);
    cfg = FunetConfig::desk();
    cfg.fusion_layers = {1, 2, 3, 9}; // desk encoder has 4 layers
    EXPECT_THROW(cfg.validate(MaeConfig::desk()), ConfigError);
    EXPECT_NO_THROW(FunetConfig::desk().validate(MaeConfig::desk()));
    EXPECT_NO_THROW(FunetConfig().validate(MaeConfig::paper()));
}

TEST(TokenGrid, RowMajorLayout) {
    // token t carries value t; grid position (r, c) must hold token 8r + c
    const long g = 8, d = 4;
    std::vector<float> v((1 + g * g) * d, 0.0f);
    for (long t = 0; t < 1 + g * g; ++t) {
        for (long j = 0; j < d; ++j) v[static_cast<size_t>(t * d + j)] = static_cast<float>(t - 1);
    }
    auto latent = TensorT<float>::from({1, 1 + g * g, d}, std::move(v));
    auto grid = mae_token_grid(latent, g);
    EXPECT_EQ(grid.shape(), (Shape{1, d, g, g}));
    for (long r = 0; r < g; ++r) {
        for (long c = 0; c < g; ++c) {
            EXPECT_EQ(grid.at({0, 2, r, c}), static_cast<float>(g * r + c));
        }
    }
}

TEST(TokenGrid, ConstantTokensConstantGrid) {
    auto latent = TensorT<float>::full({1, 65, 16}, 1.25f);
    auto grid = mae_token_grid(latent, 8);
    for (float x : grid.data()) EXPECT_EQ(x, 1.25f);
}

TEST(TokenGrid, MaskedEncodingRejected) {
    auto latent = TensorT<float>::full({1, 17, 16}, 0.0f); // 16 visible of 64
    EXPECT_THROW(mae_token_grid(latent, 8), ContractError);
}

// ---------------------------------------------------------------------------
// Fusion contracts
// ---------------------------------------------------------------------------

TEST(Fusion, AddWithZeroProjectionIsIdentity) {
    Rng r(1);
    FusionBlockT<float> f;
    f.kind = FusionStrategy::Add;
    f.proj_w = TensorT<float>::zeros({6, 16, 1, 1});
    f.proj_b = TensorT<float>::zeros({6});
    auto cnn = TensorT<float>::zeros({2, 6, 10, 10});
    for (auto& x : cnn.data()) x = static_cast<float>(r.uniform(0.1, 1.0));
    auto grid = TensorT<float>::randn({2, 16, 8, 8}, r);
    auto out = f.forward(cnn, grid);
    ASSERT_EQ(out.shape(), cnn.shape());
    EXPECT_EQ(0, std::memcmp(out.data().data(), cnn.data().data(), cnn.data().size() * 4));
}

TEST(Fusion, ConcatWithZeroedGridHalfMatchesPlainConv) {
    Rng r(2);
    const long cf = 5, de = 12;
    FusionBlockT<float> f;
    f.kind = FusionStrategy::Concat;
    f.proj_w = TensorT<float>::randn({cf, de, 1, 1}, r, 0.5);
    f.proj_b = TensorT<float>::randn({cf}, r, 0.1);
    auto kernel = TensorT<float>::randn({cf, cf, 3, 3}, r, 0.3);
    auto bias = TensorT<float>::randn({cf}, r, 0.1);
    // post conv: first cf input channels copy `kernel`, grid half zeroed
    f.post_w = TensorT<float>::zeros({cf, 2 * cf, 3, 3});
    for (long k = 0; k < cf; ++k) {
        for (long c = 0; c < cf; ++c) {
            for (long i = 0; i < 9; ++i) {
                f.post_w.data()[static_cast<size_t>(((k * 2 * cf + c) * 9) + i)] =
                    kernel.data()[static_cast<size_t>(((k * cf + c) * 9) + i)];
            }
        }
    }
    f.post_b = bias;
    auto cnn = TensorT<float>::randn({1, cf, 9, 9}, r);
    auto grid = TensorT<float>::randn({1, de, 8, 8}, r);
    auto fused = f.forward(cnn, grid);
    auto oracle = conv2d(cnn, kernel, bias, 1, 1);
    ASSERT_EQ(fused.shape(), oracle.shape());
    for (size_t i = 0; i < fused.data().size(); ++i) {
        EXPECT_NEAR(fused.data()[i], oracle.data()[i], 1e-6f);
    }
}

TEST(Fusion, AttentionInvariantToTokenPermutation) {
    Rng r(3);
    const long cf = 6, de = 12, g = 4;
    Rng ir(4);
    ParamSetT<float> ps;
    auto f = detail::make_fusion_block(ps, "t", FusionStrategy::Attention, de, cf, ir);
    auto cnn = TensorT<float>::randn({1, cf, 5, 5}, r);
    auto grid = TensorT<float>::randn({1, de, g, g}, r);
    // permute the 16 grid cells
    std::vector<long> perm = {7, 3, 12, 0, 9, 15, 1, 4, 11, 2, 14, 6, 10, 5, 13, 8};
    auto flat = reshape(permute(grid, {0, 2, 3, 1}), {1, g * g, de});
    auto permuted = permute(reshape(index_select(flat, 1, perm), {1, g, g, de}), {0, 3, 1, 2});
    auto a = f.forward(cnn, grid);
    auto b = f.forward(cnn, permuted);
    for (size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6f);
}

TEST(Fusion, AllStrategiesShareOutputShape) {
    Rng r(5);
    const long cf = 8, de = 16;
    auto cnn = TensorT<float>::randn({2, cf, 12, 12}, r);
    auto grid = TensorT<float>::randn({2, de, 8, 8}, r);
    Shape expected;
    for (auto kind : {FusionStrategy::Concat, FusionStrategy::Add, FusionStrategy::Attention}) {
        ParamSetT<float> ps;
        Rng ir(6);
        auto f = detail::make_fusion_block(ps, "t", kind, de, cf, ir);
        auto out = f.forward(cnn, grid);
        if (expected.empty()) {
            expected = out.shape();
        } else {
            EXPECT_EQ(out.shape(), expected) << fusion_name(kind);
        }
        EXPECT_EQ(out.shape(), cnn.shape());
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

TEST(FunetForward, OutputShapeAndFrozenEncoder) {
    auto mae = frozen_desk_mae(10);
    Rng ir(11);
    auto cfg = FunetConfig::desk();
    cfg.num_classes = 3;
    auto model = FunetModelT<float>::init(cfg, mae.cfg, ir);
    Rng r(12);
    std::vector<Image2D> images = {random_image(64, r), random_image(64, r)};
    auto logits = model.forward(images, mae);
    EXPECT_EQ(logits.shape(), (Shape{2, 3, 64, 64}));

    // backward: no gradient may reach any MAE parameter
    auto loss = mean_all(mul(logits, logits));
    model.params.zero_grad();
    loss.backward();
    for (const auto& p : mae.params.items()) {
        EXPECT_FALSE(p.tensor.has_grad()) << p.name;
    }
    bool some_grad = false;
    for (const auto& p : model.params.items()) some_grad = some_grad || p.tensor.has_grad();
    EXPECT_TRUE(some_grad);
}

TEST(FunetForward, UnfrozenEncoderRejected) {
    Rng ir(13);
    auto mae = MaeModelT<float>::init(MaeConfig::desk(), ir);
    Rng ir2(14);
    auto model = FunetModelT<float>::init(FunetConfig::desk(), mae.cfg, ir2);
    Rng r(15);
    std::vector<Image2D> images = {random_image(64, r)};
    EXPECT_THROW(model.forward(images, mae), ContractError);
}

TEST(MaeDirect, ShapeAndSmallerThanFunet) {
    auto mae = frozen_desk_mae(16);
    Rng ir(17);
    auto cfg = FunetConfig::desk();
    cfg.num_classes = 2;
    auto direct = MaeDirectT<float>::init(cfg, mae.cfg, ir);
    Rng ir2(18);
    auto funet = FunetModelT<float>::init(cfg, mae.cfg, ir2);
    Rng r(19);
    std::vector<Image2D> images = {random_image(64, r)};
    auto logits = direct.forward(images, mae);
    EXPECT_EQ(logits.shape(), (Shape{1, 2, 64, 64}));
    EXPECT_LT(direct.params.trainable_count(), funet.params.trainable_count());
}

// ---------------------------------------------------------------------------
// Segmentation losses (Eqs. 3-6)
// ---------------------------------------------------------------------------

TEST(DiceLoss, PerfectPredictionNearZero) {
    Rng r(20);
    auto targets = random_targets(2, 3, 4, 4, r);
    auto onehot = one_hot_targets<double>(targets, 3);
    EXPECT_NEAR(dice_loss(onehot, onehot).item(), 0.0, 1e-6);
}

TEST(DiceLoss, TwoPixelHandCase) {
    // p = (0.5, 0.5), g = (1, 0) in a single-class view:
    // 1 - (2*0.5 + eps) / (0.5 + 1 + eps) with eps = 1e-5  ->  0.333331
    auto p = DT::from({1, 1, 1, 2}, {0.5, 0.5});
    auto g = DT::from({1, 1, 1, 2}, {1.0, 0.0});
    EXPECT_NEAR(dice_loss(p, g).item(), 0.333331, 1e-4);
}

TEST(DiceLoss, AbsentClassCostsAlmostNothing) {
    // class 2 appears in neither probs nor targets: eps keeps its term ~ 0
    auto probs = DT::zeros({1, 3, 2, 2});
    auto onehot = DT::zeros({1, 3, 2, 2});
    for (long p = 0; p < 4; ++p) {
        probs.data()[static_cast<size_t>(p)] = 1.0;  // class 0 everywhere
        onehot.data()[static_cast<size_t>(p)] = 1.0;
    }
    const double loss = dice_loss(probs, onehot).item();
    // classes 0 matches perfectly; classes 1 and 2 are empty-empty
    EXPECT_LT(loss, 1e-3);
}

TEST(FocalLoss, PerfectConfidenceIsZero) {
    auto onehot = one_hot_targets<double>({MaskImage(2, 2, 1)}, 2);
    EXPECT_NEAR(focal_loss(onehot, onehot).item(), 0.0, 1e-12);
}

TEST(FocalLoss, HalfProbabilityHandCase) {
    // -0.25 * (0.5)^2 * ln(0.5) = 0.25 * 0.25 * 0.693147 = 0.043322
    auto probs = DT::from({1, 2, 1, 1}, {0.5, 0.5});
    auto onehot = one_hot_targets<double>({MaskImage(1, 1, 0)}, 2);
    EXPECT_NEAR(focal_loss(probs, onehot).item(), 0.043322, 1e-6);
}

TEST(FocalLoss, GammaZeroAlphaOneReducesToCrossEntropy) {
    for (int i = 0; i < 100; ++i) {
        Rng r(30 + i);
        auto probs = random_probs(1, 3, 3, 3, r);
        auto targets = random_targets(1, 3, 3, 3, r);
        auto onehot = one_hot_targets<double>(targets, 3);
        const double f = focal_loss(probs, onehot, 0.0, 1.0).item();
        const double ce = pixel_ce(probs, onehot).item();
        EXPECT_NEAR(f, ce, 1e-9);
    }
}

TEST(PixelCe, UniformAndPerfect) {
    auto probs = DT::full({1, 4, 2, 2}, 0.25);
    auto onehot = one_hot_targets<double>({MaskImage(2, 2, 1)}, 4);
    EXPECT_NEAR(pixel_ce(probs, onehot).item(), std::log(4.0), 1e-9);
    EXPECT_NEAR(pixel_ce(onehot, onehot).item(), 0.0, 1e-7);
}

TEST(PixelCe, AgreesWithLogitCrossEntropy) {
    for (int i = 0; i < 20; ++i) {
        Rng r(50 + i);
        const long c = 4;
        auto logits = rand_t({1, c, 2, 2}, r, -2, 2);
        auto targets = random_targets(1, c, 2, 2, r);
        auto onehot = one_hot_targets<double>(targets, c);
        const double via_pixels = pixel_ce(softmax(logits, 1), onehot).item();
        // per-pixel logit cross-entropy, averaged
        double manual = 0;
        for (long p = 0; p < 4; ++p) {
            std::vector<double> z(static_cast<size_t>(c));
            for (long cc = 0; cc < c; ++cc) z[static_cast<size_t>(cc)] = logits.data()[static_cast<size_t>(cc * 4 + p)];
            manual += cross_entropy(DT::from({c}, z), targets[0].v[static_cast<size_t>(p)]).item();
        }
        manual /= 4.0;
        EXPECT_NEAR(via_pixels, manual, 1e-6);
    }
}

TEST(HybridLoss, UnitWeightsSumExactly) {
    Rng r(60);
    auto logits = rand_t({2, 3, 4, 4}, r, -2, 2);
    auto targets = random_targets(2, 3, 4, 4, r);
    auto res = hybrid_loss(logits, targets);
    EXPECT_NEAR(res.total.item(), (res.dice + res.focal) + res.ce, 1e-12);
}

TEST(HybridLoss, SingleTermSelection) {
    Rng r(61);
    auto logits = rand_t({1, 2, 4, 4}, r, -2, 2);
    auto targets = random_targets(1, 2, 4, 4, r);
    HybridLossWeights w;
    w.focal = 0;
    w.ce = 0;
    auto res = hybrid_loss(logits, targets, w);
    EXPECT_DOUBLE_EQ(res.total.item(), res.dice);
}

TEST(HybridLoss, PerfectPredictionNearZero) {
    // saturated logits toward the target class
    std::vector<MaskImage> targets = {MaskImage(3, 3, 0)};
    targets[0].at(1, 1) = 1;
    auto logits = DT::zeros({1, 2, 3, 3});
    for (long p = 0; p < 9; ++p) {
        const long cls = targets[0].v[static_cast<size_t>(p)];
        logits.data()[static_cast<size_t>(cls * 9 + p)] = 30.0;
    }
    auto res = hybrid_loss(logits, targets);
    EXPECT_LT(res.total.item(), 1e-3);
}

TEST(HybridLoss, LinearInLambda) {
    Rng r(62);
    auto logits = rand_t({1, 3, 4, 4}, r, -2, 2);
    auto targets = random_targets(1, 3, 4, 4, r);
    auto base = hybrid_loss(logits, targets, {1.0, 1.0, 1.0});
    auto scaled = hybrid_loss(logits, targets, {2.0, 0.5, 3.0});
    EXPECT_NEAR(scaled.total.item(), 2.0 * base.dice + 0.5 * base.focal + 3.0 * base.ce, 1e-12);
}

TEST(SegLosses, GradientsMatchFiniteDifferences) {
    for (int i = 0; i < 20; ++i) {
        Rng r(70 + i);
        auto targets = random_targets(1, 2, 4, 4, r);
        auto onehot = one_hot_targets<double>(targets, 2);
        auto logits = rand_t({1, 2, 4, 4}, r, -1.5, 1.5);
        auto dice_fn = [&](const std::vector<DT>& v) {
            return dice_loss(softmax(v[0], 1), onehot);
        };
        auto focal_fn = [&](const std::vector<DT>& v) {
            return focal_loss(softmax(v[0], 1), onehot);
        };
        auto ce_fn = [&](const std::vector<DT>& v) {
            return pixel_ce(softmax(v[0], 1), onehot);
        };
        auto hybrid_fn = [&](const std::vector<DT>& v) {
            return hybrid_loss(v[0], targets).total;
        };
        EXPECT_TRUE(grad_check(dice_fn, {logits}).pass);
        EXPECT_TRUE(grad_check(focal_fn, {logits}).pass);
        EXPECT_TRUE(grad_check(ce_fn, {logits}).pass);
        EXPECT_TRUE(grad_check(hybrid_fn, {logits}).pass);
    }
}

// ---------------------------------------------------------------------------
// Training steps
// ---------------------------------------------------------------------------

TEST(SegTrainStep, FrozenMaeBitIdenticalAndLossDrops) {
    auto mae = frozen_desk_mae(80);
    const auto before = snapshot(mae.params);
    Rng ir(81);
    auto cfg = FunetConfig::desk();
    auto model = FunetModelT<float>::init(cfg, mae.cfg, ir);
    std::vector<SliceRecord> batch = {disk_record(64, 32, 32, 14), disk_record(64, 22, 40, 10)};
    AdamWT<float> opt;
    opt.config().lr = 1e-3f;
    double first = 0, last = 0;
    for (int step = 0; step < 12; ++step) {
        auto vals = seg_train_step(batch, mae, model, opt);
        if (step == 0) first = vals.total;
        last = vals.total;
    }
    EXPECT_LT(last, first);
    const auto after = snapshot(mae.params);
    EXPECT_EQ(0, std::memcmp(before.data(), after.data(), before.size() * 4));
}

TEST(SegTrainStep, ZeroLambdaChangesParamsOnlyByDecay) {
    auto mae = frozen_desk_mae(82);
    Rng ir(83);
    auto model = FunetModelT<float>::init(FunetConfig::desk(), mae.cfg, ir);
    std::vector<SliceRecord> batch = {disk_record(64, 30, 30, 12)};
    AdamWT<float> opt;
    const float lr = opt.config().lr, wd = opt.config().weight_decay;
    auto w_before = model.head_w.data();
    auto vals = seg_train_step(batch, mae, model, opt, {0.0, 0.0, 0.0});
    EXPECT_EQ(vals.total, 0.0);
    for (size_t i = 0; i < w_before.size(); ++i) {
        EXPECT_NEAR(model.head_w.data()[i], w_before[i] * (1.0f - lr * wd), 1e-7f);
    }
}

TEST(SegTrainStep, MissingMaskRejected) {
    auto mae = frozen_desk_mae(84);
    Rng ir(85);
    auto model = FunetModelT<float>::init(FunetConfig::desk(), mae.cfg, ir);
    SliceRecord rec;
    Rng r(86);
    rec.image = random_image(64, r);
    AdamWT<float> opt;
    EXPECT_THROW(seg_train_step<float>({rec}, mae, model, opt), ContractError);
}

TEST(SegTrainStep, DeterministicLossCurves) {
    auto run = [](uint64_t seed) {
        auto mae = frozen_desk_mae(seed);
        Rng ir = Rng(seed).substream("funet");
        auto model = FunetModelT<float>::init(FunetConfig::desk(), mae.cfg, ir);
        std::vector<SliceRecord> batch = {disk_record(64, 32, 32, 12)};
        AdamWT<float> opt;
        std::vector<float> losses;
        for (int step = 0; step < 4; ++step) {
            losses.push_back(static_cast<float>(seg_train_step(batch, mae, model, opt).total));
        }
        return losses;
    };
    auto a = run(90), b = run(90);
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
}
