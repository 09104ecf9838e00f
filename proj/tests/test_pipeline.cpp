#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "maefuse/maefuse.hpp"

using namespace maefuse;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("maefuse_pipe_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

} // namespace

// ---------------------------------------------------------------------------
// TOML subset
// ---------------------------------------------------------------------------

TEST(Toml, ParsesSectionsScalarsArrays) {
    auto t = toml::parse(R"(
# run description
task = "pretrain"
seed = 42
[model]
mask_ratio = 0.75
deep = true
[funet]
fusion_layers = [1, 3, 6, 9, 12]
name = "concat" # trailing comment
)");
    EXPECT_EQ(t.at("task").as_string(), "pretrain");
    EXPECT_EQ(t.at("seed").as_int(), 42);
    EXPECT_DOUBLE_EQ(t.at("model.mask_ratio").as_float(), 0.75);
    EXPECT_TRUE(t.at("model.deep").as_bool());
    EXPECT_EQ(t.at("funet.fusion_layers").as_array().size(), 5u);
    EXPECT_EQ(t.at("funet.fusion_layers").as_array()[2].as_int(), 6);
    EXPECT_EQ(t.at("funet.name").as_string(), "concat");
}

TEST(Toml, RejectsGarbage) {
    EXPECT_THROW(toml::parse("key value"), ConfigError);
    EXPECT_THROW(toml::parse("k = "), ConfigError);
    EXPECT_THROW(toml::parse("k = [1, 2"), ConfigError);
    EXPECT_THROW(toml::parse("[open\nk = 1"), ConfigError);
}

TEST(Toml, SetOverridesTypedAndBare) {
    toml::Table t;
    toml::apply_override(t, "optim.lr=0.01");
    toml::apply_override(t, "model.preset=desk");
    toml::apply_override(t, "sweep.stride=[4,5]");
    EXPECT_DOUBLE_EQ(t.at("optim.lr").as_float(), 0.01);
    EXPECT_EQ(t.at("model.preset").as_string(), "desk");
    EXPECT_EQ(t.at("sweep.stride").as_array().size(), 2u);
    EXPECT_THROW(toml::apply_override(t, "no_equals_sign"), ConfigError);
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

TEST(Config, SeedIsMandatory) {
    auto dir = fresh_dir("cfg_seed");
    write_text(dir / "c.toml", "task = \"pretrain\"\noutput_dir = \"out\"\n");
    auto cfg = ExperimentConfig::load(dir / "c.toml", {});
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, UnknownTaskRejected) {
    auto dir = fresh_dir("cfg_task");
    write_text(dir / "c.toml", "task = \"fly\"\nseed = 1\noutput_dir = \"out\"\n");
    auto cfg = ExperimentConfig::load(dir / "c.toml", {});
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, MissingManifestRejected) {
    auto dir = fresh_dir("cfg_manifest");
    write_text(dir / "c.toml",
               "task = \"pretrain\"\nseed = 1\noutput_dir = \"out\"\n[data]\ntrain_manifest = "
               "\"absent.jsonl\"\n");
    auto cfg = ExperimentConfig::load(dir / "c.toml", {});
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, OverridesAndHashStability) {
    auto dir = fresh_dir("cfg_hash");
    write_text(dir / "c.toml", "task = \"synth\"\nseed = 4\noutput_dir = \"out\"\n");
    auto a = ExperimentConfig::load(dir / "c.toml", {});
    auto b = ExperimentConfig::load(dir / "c.toml", {});
    EXPECT_EQ(a.config_hash(), b.config_hash());
    auto c = ExperimentConfig::load(dir / "c.toml", {"optim.lr=0.5"});
    EXPECT_NE(a.config_hash(), c.config_hash());
    EXPECT_DOUBLE_EQ(c.lr, 0.5);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

MaeModel small_model(uint64_t seed) {
    MaeConfig cfg = MaeConfig::desk();
    cfg.enc_layers = 2;
    cfg.dec_layers = 1;
    Rng r(seed);
    return MaeModel::init(cfg, r);
}

} // namespace

TEST(Checkpoint, RoundTripBitwise) {
    auto dir = fresh_dir("ckpt");
    auto model = small_model(1);
    AdamW opt;
    // one step so the optimizer has state
    std::vector<SliceRecord> batch(2);
    for (auto& rec : batch) rec.image = Image2D(64, 64, 0.3f);
    Rng sr(2);
    pretrain_step(batch, model, opt, sr);
    save_checkpoint(dir / "ck", model.params, &opt, {{"note", "t"}}, 9, 1);

    auto loaded = load_checkpoint(dir / "ck");
    EXPECT_EQ(loaded.seed, 9u);
    EXPECT_EQ(loaded.step, 1);
    auto fresh = small_model(7); // different init; all values overwritten
    apply_checkpoint(loaded, fresh.params);
    for (const auto& p : model.params.items()) {
        const auto& q = fresh.params.find(p.name);
        ASSERT_EQ(q.tensor.shape(), p.tensor.shape());
        EXPECT_EQ(0, std::memcmp(q.tensor.data().data(), p.tensor.data().data(),
                                 p.tensor.data().size() * 4))
            << p.name;
    }
    AdamW opt2;
    apply_optimizer_state(loaded, opt2);
    EXPECT_EQ(opt2.step_count(), opt.step_count());
    EXPECT_EQ(opt2.moments().at("patch_embed.w").m, opt.moments().at("patch_embed.w").m);
}

TEST(Checkpoint, SaveLoadSaveByteIdentical) {
    auto dir = fresh_dir("ckpt_idem");
    auto model = small_model(3);
    save_checkpoint(dir / "a", model.params, nullptr, {{"k", 1}}, 5, 0);
    auto loaded = load_checkpoint(dir / "a");
    auto fresh = small_model(8);
    apply_checkpoint(loaded, fresh.params);
    save_checkpoint(dir / "b", fresh.params, nullptr, loaded.config, loaded.seed, loaded.step);
    EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
    EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
}

TEST(Checkpoint, ManifestSortedUniqueNames) {
    auto dir = fresh_dir("ckpt_sorted");
    auto model = small_model(4);
    save_checkpoint(dir / "ck", model.params, nullptr, {}, 1, 0);
    auto loaded = load_checkpoint(dir / "ck");
    std::set<std::string> seen;
    std::string prev;
    for (const auto& e : loaded.params) {
        EXPECT_TRUE(seen.insert(e.name).second) << "duplicate " << e.name;
        EXPECT_LE(prev, e.name) << "not sorted";
        prev = e.name;
    }
}

TEST(Checkpoint, TruncatedBlobIsCorruption) {
    auto dir = fresh_dir("ckpt_trunc");
    auto model = small_model(5);
    save_checkpoint(dir / "ck", model.params, nullptr, {}, 1, 0);
    auto bytes = slurp(dir / "ck.bin");
    std::ofstream out(dir / "ck.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    try {
        load_checkpoint(dir / "ck");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
    }
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
    auto dir = fresh_dir("ckpt_ver");
    auto model = small_model(6);
    save_checkpoint(dir / "ck", model.params, nullptr, {}, 1, 0);
    auto j = nlohmann::json::parse(slurp(dir / "ck.json"));
    j["format_version"] = 999;
    write_text(dir / "ck.json", j.dump(2));
    try {
        load_checkpoint(dir / "ck");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("999"), std::string::npos);
        EXPECT_NE(msg.find(std::to_string(kCheckpointFormatVersion)), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

TEST(Report, PercentFormatting) {
    EXPECT_EQ(format_pct(0.9519), "95.19");
    EXPECT_EQ(format_pct(1.0), "100.00");
    EXPECT_EQ(format_std_pct(0.0454911), "0.045");
}

TEST(Report, CsvAndMarkdownMirror) {
    ReportTable t;
    t.columns = {"region", "iou", "dice"};
    t.add_row({"core", "96.41", "98.17"});
    const std::string csv = t.csv();
    EXPECT_EQ(csv, "region,iou,dice\ncore,96.41,98.17\n");
    const std::string md = t.markdown();
    // same number of columns in both renderings
    const size_t csv_cols = std::count(csv.begin(), csv.begin() + csv.find('\n'), ',') + 1;
    const size_t md_cols = std::count(md.begin(), md.begin() + md.find('\n'), '|') - 1;
    EXPECT_EQ(csv_cols, md_cols);
    EXPECT_THROW(t.add_row({"too", "few"}), ContractError);
}

TEST(Report, CsvRoundTrip) {
    auto dir = fresh_dir("report");
    ReportTable t;
    t.columns = {"a", "b"};
    t.add_row({"x,with comma", "1"});
    t.add_row({"quote\"inside", "2"});
    t.write(dir / "r.csv", dir / "r.md");
    auto back = read_csv_table(dir / "r.csv");
    EXPECT_EQ(back.columns, t.columns);
    EXPECT_EQ(back.rows, t.rows);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

TEST(Synth, ClassificationLayout) {
    auto dir = fresh_dir("synth_cls");
    auto res = synth::classification(dir, 64, 3, 2, 1, 1, 5, 99);
    auto names = load_class_names(res.class_names);
    EXPECT_EQ(names.size(), 3u);
    auto train = load_dataset_index(res.train_manifest, names);
    auto test = load_dataset_index(res.test_manifest, names);
    EXPECT_EQ(train.entries.size(), 3u * 2u * 1u * 5u);
    EXPECT_EQ(test.entries.size(), 3u * 2u * 1u * 5u);
    train.validate();
    // every class and tag combination appears
    std::set<std::pair<int, std::string>> combos;
    for (const auto& e : train.entries) combos.insert({*e.label, e.dataset_tag});
    EXPECT_EQ(combos.size(), 6u);
    // slices load to the unit range
    SliceLoader loader(train, LoadOptions{.target = 64});
    auto rec = loader.load(train.entries[0]);
    for (float v : rec.image.v) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Synth, SegmentationMasksBinaryWhenTwoClasses) {
    auto dir = fresh_dir("synth_seg");
    auto res = synth::segmentation(dir, 64, 2, 2, 1, 4, 123);
    auto idx = load_dataset_index(res.train_manifest);
    EXPECT_EQ(idx.entries.size(), 8u);
    LoadOptions opts;
    opts.target = 64;
    opts.mask_kind = MaskKind::Seg;
    SliceLoader loader(idx, opts);
    for (const auto& e : idx.entries) {
        auto rec = loader.load(e);
        ASSERT_TRUE(rec.seg_mask.has_value());
        EXPECT_TRUE(rec.seg_mask->is_binary());
        long fg = 0;
        for (auto v : rec.seg_mask->v) fg += v;
        EXPECT_GT(fg, 0); // every slice carries a shape
    }
}

TEST(Synth, ThreeClassRingLabels) {
    auto dir = fresh_dir("synth_ring");
    auto res = synth::segmentation(dir, 64, 3, 1, 0, 3, 5);
    auto idx = load_dataset_index(res.train_manifest);
    LoadOptions opts;
    opts.target = 64;
    opts.mask_kind = MaskKind::Seg;
    SliceLoader loader(idx, opts);
    std::set<int32_t> seen;
    for (const auto& e : idx.entries) {
        auto rec = loader.load(e);
        for (auto v : rec.seg_mask->v) seen.insert(v);
    }
    EXPECT_EQ(seen, (std::set<int32_t>{0, 1, 2}));
}

// ---------------------------------------------------------------------------
// Runner plumbing
// ---------------------------------------------------------------------------

TEST(Runner, StrideFilterAndFirstVolumes) {
    std::vector<ManifestEntry> entries;
    for (int v = 0; v < 3; ++v) {
        for (long i = 0; i < 10; ++i) {
            ManifestEntry e;
            e.path = "vol" + std::to_string(v);
            e.axis = 2;
            e.index = i;
            entries.push_back(e);
        }
    }
    auto strided = detail::stride_filter(entries, 4);
    EXPECT_EQ(strided.size(), 9u); // ceil(10/4) = 3 per volume
    for (const auto& e : strided) EXPECT_EQ(e.index % 4, 0);

    auto first2 = detail::first_volumes(entries, 2);
    EXPECT_EQ(first2.size(), 20u);
    for (const auto& e : first2) EXPECT_NE(e.path, "vol2");
}

TEST(Runner, ParallelLoadMatchesSerial) {
    auto dir = fresh_dir("parload");
    auto res = synth::classification(dir, 64, 2, 1, 1, 0, 6, 7);
    auto idx = load_dataset_index(res.train_manifest);
    LoadOptions opts;
    opts.target = 64;
    SliceLoader serial(idx, opts), parallel(idx, opts);
    auto a = load_slices(serial, idx.entries, 1);
    auto b = load_slices(parallel, idx.entries, 4);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(0, std::memcmp(a[i].image.v.data(), b[i].image.v.data(), a[i].image.v.size() * 4));
    }
}

TEST(Runner, EndToEndDeterministicOutputs) {
    auto dir = fresh_dir("e2e");
    auto data = synth::classification(dir / "data", 64, 2, 1, 1, 1, 6, 11);

    ExperimentConfig cfg;
    cfg.task = "pretrain";
    cfg.seed = 21;
    cfg.config_dir = dir;
    cfg.train_manifest = data.train_manifest;
    cfg.mae = MaeConfig::desk();
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.steps = 6;

    cfg.output_dir = dir / "run_a";
    run_pretrain(cfg);
    cfg.output_dir = dir / "run_b";
    run_pretrain(cfg);
    EXPECT_EQ(slurp(dir / "run_a" / "loss.csv"), slurp(dir / "run_b" / "loss.csv"));
    EXPECT_EQ(slurp(dir / "run_a" / "checkpoint.bin"), slurp(dir / "run_b" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir / "run_a" / "run_manifest.json"));

    // classify against the pretrained checkpoint; reports byte-identical
    ExperimentConfig ccfg;
    ccfg.task = "classify";
    ccfg.seed = 22;
    ccfg.config_dir = dir;
    ccfg.train_manifest = data.train_manifest;
    ccfg.test_manifest = data.test_manifest;
    ccfg.class_names_path = data.class_names;
    ccfg.checkpoint = dir / "run_a" / "checkpoint";
    ccfg.n_per_class = 4;
    ccfg.lr = 1e-2;
    ccfg.batch_size = 8;
    ccfg.steps = 30;
    ccfg.output_dir = dir / "cls_a";
    run_classify(ccfg);
    ccfg.output_dir = dir / "cls_b";
    run_classify(ccfg);
    EXPECT_EQ(slurp(dir / "cls_a" / "report.csv"), slurp(dir / "cls_b" / "report.csv"));
    auto table = read_csv_table(dir / "cls_a" / "report.csv");
    EXPECT_EQ(table.columns.back(), "trainable_params");
    EXPECT_EQ(table.rows.size(), 1u);
}

TEST(Runner, ClassifySweepEmitsAccuracyCurve) {
    auto dir = fresh_dir("sweepcls");
    auto data = synth::classification(dir / "data", 64, 2, 1, 1, 1, 8, 13);
    ExperimentConfig pre;
    pre.task = "pretrain";
    pre.seed = 31;
    pre.config_dir = dir;
    pre.train_manifest = data.train_manifest;
    pre.mae = MaeConfig::desk();
    pre.lr = 1e-3;
    pre.batch_size = 8;
    pre.steps = 5;
    pre.output_dir = dir / "pre";
    run_pretrain(pre);

    ExperimentConfig cfg;
    cfg.task = "classify";
    cfg.seed = 32;
    cfg.config_dir = dir;
    cfg.train_manifest = data.train_manifest;
    cfg.test_manifest = data.test_manifest;
    cfg.class_names_path = data.class_names;
    cfg.checkpoint = dir / "pre" / "checkpoint";
    cfg.sweep_n = {2, 4, 6};
    cfg.lr = 1e-2;
    cfg.batch_size = 8;
    cfg.steps = 10;
    cfg.output_dir = dir / "cls";
    run_classify(cfg);
    auto sweep = read_csv_table(dir / "cls" / "accuracy_vs_n.csv");
    EXPECT_EQ(sweep.rows.size(), 3u);
    EXPECT_EQ(sweep.columns[0], "n_per_class");
}

TEST(Runner, SegmentStrideSweepShape) {
    auto dir = fresh_dir("sweepseg");
    auto data = synth::segmentation(dir / "data", 64, 2, 2, 1, 6, 17);
    ExperimentConfig pre;
    pre.task = "pretrain";
    pre.seed = 41;
    pre.config_dir = dir;
    pre.train_manifest = data.train_manifest;
    pre.mae = MaeConfig::desk();
    pre.batch_size = 4;
    pre.steps = 3;
    pre.lr = 1e-3;
    pre.output_dir = dir / "pre";
    run_pretrain(pre);

    ExperimentConfig cfg;
    cfg.task = "segment";
    cfg.seed = 42;
    cfg.config_dir = dir;
    cfg.train_manifest = data.train_manifest;
    cfg.test_manifest = data.test_manifest;
    cfg.class_names_path = data.class_names;
    cfg.checkpoint = dir / "pre" / "checkpoint";
    cfg.funet = FunetConfig::desk();
    cfg.batch_size = 2;
    cfg.steps = 2;
    cfg.lr = 1e-3;
    cfg.sweep_stride = {2, 3, 6};
    cfg.output_dir = dir / "seg";
    run_segment(cfg);
    auto table = read_csv_table(dir / "seg" / "report.csv");
    ASSERT_EQ(table.rows.size(), 5u); // 3 strides + mean + std
    EXPECT_EQ(table.rows[3][0], "mean");
    EXPECT_EQ(table.rows[4][0], "std");
    EXPECT_TRUE(fs::exists(dir / "seg" / "loss_stride2.csv"));
}

TEST(Runner, FusionSweepReportsParams) {
    auto dir = fresh_dir("sweepfus");
    auto data = synth::segmentation(dir / "data", 64, 2, 1, 1, 4, 19);
    ExperimentConfig pre;
    pre.task = "pretrain";
    pre.seed = 51;
    pre.config_dir = dir;
    pre.train_manifest = data.train_manifest;
    pre.mae = MaeConfig::desk();
    pre.batch_size = 4;
    pre.steps = 3;
    pre.lr = 1e-3;
    pre.output_dir = dir / "pre";
    run_pretrain(pre);

    ExperimentConfig cfg;
    cfg.task = "segment";
    cfg.seed = 52;
    cfg.config_dir = dir;
    cfg.train_manifest = data.train_manifest;
    cfg.test_manifest = data.test_manifest;
    cfg.class_names_path = data.class_names;
    cfg.checkpoint = dir / "pre" / "checkpoint";
    cfg.funet = FunetConfig::desk();
    cfg.batch_size = 2;
    cfg.steps = 2;
    cfg.lr = 1e-3;
    cfg.sweep_fusion = {"add", "concat", "attention"};
    cfg.output_dir = dir / "seg";
    run_segment(cfg);
    auto table = read_csv_table(dir / "seg" / "report.csv");
    ASSERT_EQ(table.rows.size(), 3u);
    EXPECT_EQ(table.columns.back(), "trainable_params");
    // three strategies, three distinct parameter counts
    std::set<std::string> params;
    for (const auto& row : table.rows) params.insert(row.back());
    EXPECT_EQ(params.size(), 3u);
}
