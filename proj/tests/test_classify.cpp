#include <gtest/gtest.h>

#include <cstring>

#include "maefuse/gradcheck.hpp"
#include "maefuse/probe.hpp"

using namespace maefuse;
using DT = TensorT<double>;

namespace {

Image2D random_image(long size, Rng& r) {
    Image2D img(size, size);
    for (auto& x : img.v) x = static_cast<float>(r.uniform());
    return img;
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

} // namespace

// ---------------------------------------------------------------------------
// cross_entropy (Eq. 2 behavior)
// ---------------------------------------------------------------------------

TEST(CrossEntropy, UniformLogitsGiveLogC) {
    auto z = DT::full({7}, 0.42);
    EXPECT_NEAR(cross_entropy(z, 3).item(), std::log(7.0), 1e-9);
}

TEST(CrossEntropy, ConfidentCorrectGoesToZero) {
    auto z = DT::zeros({5});
    z.data()[2] = 40.0;
    EXPECT_LT(cross_entropy(z, 2).item(), 1e-6);
}

TEST(CrossEntropy, ShiftInvariant) {
    Rng r(1);
    auto z = DT::randn({6}, r, 2.0);
    auto shifted = DT::from({6}, z.data());
    for (auto& v : shifted.data()) v += 123.456;
    EXPECT_NEAR(cross_entropy(z, 4).item(), cross_entropy(shifted, 4).item(), 1e-9);
}

TEST(CrossEntropy, LabelOutOfRangeRejected) {
    auto z = DT::zeros({3});
    EXPECT_THROW(cross_entropy(z, 3), ContractError);
    EXPECT_THROW(cross_entropy(z, -1), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    for (int i = 0; i < 20; ++i) {
        Rng r(100 + i);
        auto z = DT::randn({5}, r, 1.5);
        const long y = static_cast<long>(r.uniform_int(5));
        auto res = grad_check(
            [y](const std::vector<DT>& v) { return cross_entropy(v[0], y); }, {z});
        EXPECT_TRUE(res.pass) << res.max_rel_err;
    }
}

// ---------------------------------------------------------------------------
// cls_features
// ---------------------------------------------------------------------------

TEST(ClsFeatures, ShapeAndDeterminism) {
    auto mae = frozen_desk_mae(11);
    Rng r(12);
    auto img = random_image(64, r);
    auto f1 = cls_features(mae, img);
    auto f2 = cls_features(mae, img);
    EXPECT_EQ(f1.shape(), (Shape{64}));
    EXPECT_EQ(0, std::memcmp(f1.data().data(), f2.data().data(), f1.data().size() * 4));
    EXPECT_FALSE(f1.requires_grad());
}

TEST(ClsFeatures, RequiresFrozenEncoder) {
    Rng ir(13);
    auto mae = MaeModelT<float>::init(MaeConfig::desk(), ir);
    Rng r(14);
    EXPECT_THROW(cls_features(mae, random_image(64, r)), ContractError);
}

// ---------------------------------------------------------------------------
// Linear head
// ---------------------------------------------------------------------------

TEST(LinearHead, ParamCountFormula) {
    Rng r(20);
    for (auto [c, d] : std::vector<std::pair<long, long>>{{8, 768}, {7, 768}, {3, 64}, {13, 96}}) {
        std::vector<std::string> names(static_cast<size_t>(c), "x");
        auto head = LinearHeadT<float>::init(c, d, names, r);
        EXPECT_EQ(head.param_count(), c * d + c);
        EXPECT_EQ(head.params.trainable_count(), c * d + c);
    }
    // the headline configuration: 769 * 8
    std::vector<std::string> names(8, "x");
    auto head = LinearHeadT<float>::init(8, 768, names, r);
    EXPECT_EQ(head.param_count(), 6152);
}

TEST(LinearHead, ArgmaxTieBreaksLow) {
    Rng r(21);
    auto head = LinearHeadT<float>::init(4, 8, {"a", "b", "c", "d"}, r);
    std::fill(head.weight.data().begin(), head.weight.data().end(), 0.0f);
    std::fill(head.bias.data().begin(), head.bias.data().end(), 0.0f);
    auto f = TensorT<float>::full({8}, 0.5f);
    EXPECT_EQ(head.predict(f), 0); // all logits equal
}

TEST(LinearHead, ShiftedLogitsKeepArgmax) {
    Rng r(22);
    auto head = LinearHeadT<float>::init(5, 6, {"a", "b", "c", "d", "e"}, r);
    auto f = TensorT<float>::randn({6}, r);
    const long base = head.predict(f);
    for (auto& b : head.bias.data()) b += 7.5f; // constant shift
    EXPECT_EQ(head.predict(f), base);
}

// ---------------------------------------------------------------------------
// Probe training
// ---------------------------------------------------------------------------

TEST(Probe, SeparableClustersReachPerfectTrainAccuracy) {
    Rng r(30);
    const long d = 8;
    std::vector<TensorT<float>> feats;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        const int y = i % 2;
        auto f = TensorT<float>::zeros({d});
        for (long j = 0; j < d; ++j) {
            f.data()[static_cast<size_t>(j)] =
                static_cast<float>((y ? 2.0 : -2.0) + 0.3 * r.normal());
        }
        feats.push_back(f);
        labels.push_back(y);
    }
    ProbeConfig cfg;
    cfg.steps = 200;
    cfg.lr = 1e-2;
    cfg.seed = 31;
    auto head = train_probe_on_features(feats, labels, {"neg", "pos"}, cfg);
    long correct = 0;
    for (size_t i = 0; i < feats.size(); ++i) {
        correct += head.predict(feats[i]) == labels[i];
    }
    EXPECT_EQ(correct, static_cast<long>(feats.size()));
}

TEST(Probe, SingleClassRejected) {
    Rng r(32);
    std::vector<TensorT<float>> feats = {TensorT<float>::randn({4}, r), TensorT<float>::randn({4}, r)};
    std::vector<int> labels = {1, 1};
    ProbeConfig cfg;
    EXPECT_THROW(train_probe_on_features(feats, labels, {"a", "b"}, cfg), DataError);
}

TEST(Probe, EncoderBitIdenticalAfterTraining) {
    auto mae = frozen_desk_mae(33);
    const auto before = snapshot(mae.params);
    Rng r(34);
    std::vector<SliceRecord> train;
    for (int i = 0; i < 12; ++i) {
        SliceRecord rec;
        rec.image = random_image(64, r);
        rec.label = i % 3;
        train.push_back(std::move(rec));
    }
    ProbeConfig cfg;
    cfg.steps = 50;
    cfg.seed = 35;
    auto head = train_linear_probe(train, mae, cfg);
    const auto after = snapshot(mae.params);
    ASSERT_EQ(before.size(), after.size());
    EXPECT_EQ(0, std::memcmp(before.data(), after.data(), before.size() * 4));
    EXPECT_EQ(head.param_count(), 3 * 64 + 3);
}

TEST(Probe, DeterministicUnderSeed) {
    Rng r(36);
    std::vector<TensorT<float>> feats;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        feats.push_back(TensorT<float>::randn({6}, r));
        labels.push_back(i % 2);
    }
    ProbeConfig cfg;
    cfg.steps = 30;
    cfg.seed = 99;
    auto h1 = train_probe_on_features(feats, labels, {"a", "b"}, cfg);
    auto h2 = train_probe_on_features(feats, labels, {"a", "b"}, cfg);
    EXPECT_EQ(0, std::memcmp(h1.weight.data().data(), h2.weight.data().data(),
                             h1.weight.data().size() * 4));
}

// ---------------------------------------------------------------------------
// Accuracy evaluation
// ---------------------------------------------------------------------------

TEST(Accuracy, PerfectPredictionsEverywhere) {
    auto mae = frozen_desk_mae(40);
    Rng r(41);
    // one distinct constant image per class; nearest-feature head trained badly
    // is not needed: craft a head that keys on mean brightness via bias-free
    // weights is fragile, so instead train on the same records
    std::vector<SliceRecord> records;
    for (int i = 0; i < 9; ++i) {
        SliceRecord rec;
        rec.image = Image2D(64, 64, 0.1f + 0.4f * static_cast<float>(i % 3));
        rec.label = i % 3;
        records.push_back(std::move(rec));
    }
    ProbeConfig cfg;
    cfg.steps = 150;
    cfg.lr = 1e-2;
    cfg.seed = 42;
    auto head = train_linear_probe(records, mae, cfg);
    auto rep = evaluate_accuracy(records, mae, head);
    EXPECT_DOUBLE_EQ(rep.overall(), 1.0);
    for (size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(*rep.per_class(c), 1.0);
}

TEST(Accuracy, AbsentClassExcludedFromMacro) {
    auto mae = frozen_desk_mae(43);
    Rng r(44);
    std::vector<SliceRecord> train;
    for (int i = 0; i < 8; ++i) {
        SliceRecord rec;
        rec.image = random_image(64, r);
        rec.label = i % 2;
        train.push_back(std::move(rec));
    }
    ProbeConfig cfg;
    cfg.steps = 20;
    cfg.seed = 45;
    // three named classes, but class 2 never appears in train or test
    auto head = train_linear_probe(train, mae, cfg, {"a", "b", "ghost"});
    auto rep = evaluate_accuracy(train, mae, head);
    EXPECT_FALSE(rep.per_class(2).has_value());
    EXPECT_EQ(rep.overall_total, 8);
    const double macro = rep.macro_mean();
    double manual = (*rep.per_class(0) + *rep.per_class(1)) / 2.0;
    EXPECT_DOUBLE_EQ(macro, manual);
}

TEST(Accuracy, EmptyTestSetRejected) {
    auto mae = frozen_desk_mae(46);
    Rng r(47);
    auto head = LinearHeadT<float>::init(2, 64, {"a", "b"}, r);
    EXPECT_THROW(evaluate_accuracy({}, mae, head), DataError);
}
