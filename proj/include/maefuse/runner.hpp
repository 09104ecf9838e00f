#pragma once

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "maefuse/checkpoint.hpp"
#include "maefuse/config.hpp"
#include "maefuse/metrics.hpp"
#include "maefuse/probe.hpp"
#include "maefuse/report.hpp"
#include "maefuse/synth.hpp"

namespace maefuse {

namespace detail {

inline std::string double_str(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline int effective_workers(int requested) {
    if (const char* env = std::getenv("MAEFUSE_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) requested = std::min(requested, cap);
    }
    return std::max(1, requested);
}

} // namespace detail

// Deterministic preprocessing fan-out: caches are pre-warmed single-threaded,
// then slices load in parallel into their manifest positions.
inline std::vector<SliceRecord> load_slices(SliceLoader& loader,
                                            const std::vector<ManifestEntry>& entries, int workers) {
    workers = detail::effective_workers(workers);
    if (workers <= 1 || entries.size() < 2) return loader.load_all(entries);
    loader.warm(entries);
    std::vector<SliceRecord> out(entries.size());
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    const int n = std::min<int>(workers, static_cast<int>(entries.size()));
    for (int w = 0; w < n; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= entries.size()) break;
                out[i] = loader.load(entries[i]);
            }
        });
    }
    for (auto& t : pool) t.join();
    return out;
}

inline void write_loss_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<long, double>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,loss\n";
    for (const auto& [step, loss] : rows) {
        out << step << "," << detail::double_str(loss) << "\n";
    }
}

inline void write_run_manifest(const ExperimentConfig& cfg, long trainable_params,
                               nlohmann::json extra = {}) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["task"] = cfg.task;
    j["seed"] = cfg.seed;
    j["config"] = cfg.to_json();
    j["config_hash"] = cfg.config_hash();
    j["trainable_params"] = trainable_params;
    if (!extra.is_null()) j["extra"] = std::move(extra);
    std::ofstream out(cfg.output_dir / "run_manifest.json");
    if (!out) throw DataError("cannot write run manifest in " + cfg.output_dir.string());
    out << j.dump(2) << "\n";
}

namespace detail {

inline LoadOptions load_options(const ExperimentConfig& cfg, MaskKind kind) {
    LoadOptions o;
    o.target = cfg.mae.image_size;
    o.resample = cfg.resample;
    o.percentile_scope = cfg.percentile_scope == "volume" ? PercentileScope::PerVolume
                                                          : PercentileScope::PerSlice;
    o.mask_kind = kind;
    o.weight_tau = cfg.weight_tau;
    o.weight_min = cfg.weight_min;
    return o;
}

inline std::vector<std::string> class_names_for(const ExperimentConfig& cfg) {
    if (cfg.class_names_path.empty()) return {};
    return load_class_names(cfg.resolve(cfg.class_names_path));
}

template <typename F>
std::vector<SliceRecord> sample_batch(const std::vector<SliceRecord>& pool, long batch_size,
                                      Rng& rng, bool do_augment, const AugmentPolicy& policy,
                                      Rng& aug_rng, F&& weight_opts) {
    std::vector<SliceRecord> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    for (long b = 0; b < batch_size; ++b) {
        const auto& rec = pool[static_cast<size_t>(rng.uniform_int(pool.size()))];
        batch.push_back(do_augment ? weight_opts(rec, aug_rng) : rec);
    }
    return batch;
}

} // namespace detail

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

inline int run_pretrain(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    bool any_mask = false;
    auto idx = load_dataset_index(cfg.resolve(cfg.train_manifest), detail::class_names_for(cfg));
    for (const auto& e : idx.entries) any_mask = any_mask || !e.mask_path.empty();
    SliceLoader loader(idx, detail::load_options(cfg, any_mask ? MaskKind::Brain : MaskKind::None));
    auto slices = load_slices(loader, idx.entries, cfg.workers);
    if (slices.empty()) throw DataError("pretrain: no training slices");

    Rng init_rng = Rng(cfg.seed).substream("init");
    auto model = MaeModel::init(cfg.mae, init_rng);
    AdamW opt;
    opt.config().lr = static_cast<float>(cfg.lr);
    opt.config().weight_decay = static_cast<float>(cfg.weight_decay);

    long step0 = 0;
    if (!cfg.checkpoint.empty()) { // resume
        auto ckpt = load_checkpoint(cfg.resolve(cfg.checkpoint));
        apply_checkpoint(ckpt, model.params);
        apply_optimizer_state(ckpt, opt);
        step0 = ckpt.step;
    }

    std::vector<std::pair<long, double>> losses;
    for (long step = step0; step < step0 + cfg.steps; ++step) {
        Rng data_rng = Rng(cfg.seed).substream("data", static_cast<uint64_t>(step));
        Rng aug_rng = Rng(cfg.seed).substream("augment", static_cast<uint64_t>(step));
        auto batch = detail::sample_batch(
            slices, cfg.batch_size, data_rng, cfg.augment, cfg.policy, aug_rng,
            [&](const SliceRecord& rec, Rng& ar) {
                return augment(rec, cfg.policy, ar, cfg.weight_tau, cfg.weight_min);
            });
        Rng mask_rng = Rng(cfg.seed).substream("mask", static_cast<uint64_t>(step));
        try {
            losses.emplace_back(step, pretrain_step(batch, model, opt, mask_rng));
        } catch (const NumericError& e) {
            throw NumericError("pretrain aborted at step " + std::to_string(step) + ": " + e.what());
        }
    }
    write_loss_csv(cfg.output_dir / "loss.csv", losses);
    save_checkpoint(cfg.output_dir / "checkpoint", model.params, &opt, cfg.to_json(), cfg.seed,
                    step0 + cfg.steps);
    write_run_manifest(cfg, model.params.trainable_count(),
                       {{"steps_completed", step0 + cfg.steps}});
    return 0;
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

namespace detail {

inline MaeModel frozen_mae_from_checkpoint(ExperimentConfig& cfg) {
    auto ckpt = load_checkpoint(cfg.resolve(cfg.checkpoint));
    cfg.adopt_model_config(ckpt.config);
    Rng init_rng = Rng(cfg.seed).substream("init");
    auto mae = MaeModel::init(cfg.mae, init_rng);
    apply_checkpoint(ckpt, mae.params);
    mae.freeze();
    return mae;
}

} // namespace detail

inline int run_classify(ExperimentConfig cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    auto mae = detail::frozen_mae_from_checkpoint(cfg);
    auto names = detail::class_names_for(cfg);
    auto train_idx = load_dataset_index(cfg.resolve(cfg.train_manifest), names);
    auto test_idx = load_dataset_index(cfg.resolve(cfg.test_manifest), train_idx.class_names);
    SliceLoader test_loader(test_idx, detail::load_options(cfg, MaskKind::None));
    auto test_slices = load_slices(test_loader, test_idx.entries, cfg.workers);

    std::vector<long> ns = cfg.sweep_n;
    if (ns.empty()) {
        if (cfg.n_per_class < 1) throw ConfigError("classify: set data.n_per_class or sweep.n_per_class");
        ns = {cfg.n_per_class};
    }

    ReportTable sweep_table;
    sweep_table.columns = {"n_per_class", "overall_accuracy"};
    AccuracyReport last_report;
    long head_params = 0;
    for (size_t pi = 0; pi < ns.size(); ++pi) {
        const long n = ns[pi];
        Rng sample_rng = Rng(cfg.seed).substream("fewshot", static_cast<uint64_t>(n));
        auto sampled = few_shot_sample(train_idx, n, sample_rng);
        SliceLoader train_loader(sampled, detail::load_options(cfg, MaskKind::None));
        auto train_slices = load_slices(train_loader, sampled.entries, cfg.workers);
        if (cfg.augment && cfg.augment_copies > 0) {
            // probe features are extracted once, so augmented copies are
            // materialized up front
            const size_t base = train_slices.size();
            for (int copy = 0; copy < cfg.augment_copies; ++copy) {
                Rng aug_rng = Rng(cfg.seed).substream("augment", static_cast<uint64_t>(copy));
                for (size_t i = 0; i < base; ++i) {
                    train_slices.push_back(augment(train_slices[i], cfg.policy, aug_rng));
                }
            }
        }
        ProbeConfig pc;
        pc.lr = cfg.lr;
        pc.weight_decay = cfg.weight_decay;
        pc.batch_size = std::min<long>(cfg.batch_size, static_cast<long>(train_slices.size()));
        pc.steps = cfg.steps;
        pc.seed = Rng::splitmix64(cfg.seed ^ static_cast<uint64_t>(n));
        auto head = train_linear_probe(train_slices, mae, pc, train_idx.class_names);
        head_params = head.param_count();
        last_report = evaluate_accuracy(test_slices, mae, head);
        sweep_table.add_row({std::to_string(n), format_pct(last_report.overall())});
    }

    // Table-1 shape: one column per modality, then overall and the trainable
    // parameter count; rendered from the last run point.
    ReportTable table;
    table.columns = last_report.class_names;
    table.columns.push_back("overall");
    table.columns.push_back("trainable_params");
    std::vector<std::string> row;
    for (size_t c = 0; c < last_report.class_names.size(); ++c) {
        auto acc = last_report.per_class(c);
        row.push_back(acc ? format_pct(*acc) : "n/a");
    }
    row.push_back(format_pct(last_report.overall()));
    row.push_back(std::to_string(head_params));
    table.add_row(std::move(row));
    table.write(cfg.output_dir / "report.csv", cfg.output_dir / "report.md");
    if (ns.size() > 1) {
        std::ofstream sc(cfg.output_dir / "accuracy_vs_n.csv");
        sc << sweep_table.csv();
    }
    write_run_manifest(cfg, head_params, {{"n_per_class", ns}});
    return 0;
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

namespace detail {

// stride-k selection per (path, axis): positions 0, k, 2k, ... of the sorted
// slice list (skull-strip style data budgeting)
inline std::vector<ManifestEntry> stride_filter(const std::vector<ManifestEntry>& entries, long k) {
    std::map<std::pair<std::string, int>, std::vector<ManifestEntry>> groups;
    for (const auto& e : entries) groups[{e.path, e.axis}].push_back(e);
    std::vector<ManifestEntry> out;
    for (auto& [key, list] : groups) {
        std::sort(list.begin(), list.end(),
                  [](const ManifestEntry& a, const ManifestEntry& b) { return a.index < b.index; });
        for (size_t i = 0; i < list.size(); i += static_cast<size_t>(k)) out.push_back(list[i]);
    }
    return out;
}

// first-n distinct volumes in manifest order (sample-size style)
inline std::vector<ManifestEntry> first_volumes(const std::vector<ManifestEntry>& entries, long n) {
    std::vector<std::string> order;
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        auto it = std::find(order.begin(), order.end(), e.path);
        if (it == order.end()) {
            if (static_cast<long>(order.size()) == n) continue;
            order.push_back(e.path);
        }
        if (std::find(order.begin(), order.end(), e.path) != order.end()) out.push_back(e);
    }
    return out;
}

struct SegScores {
    std::vector<RegionReport> regions; // per region + trailing mean row
    double overall_iou = 0, overall_dice = 0;
};

// per-volume accumulation: score each test volume, then average regions
// across volumes; eval_per_slice treats every slice as its own group
template <typename SegModel>
SegScores evaluate_segmentation(const std::vector<SliceRecord>& test, const MaeModel& mae,
                                const SegModel& model, const std::vector<std::string>& class_names,
                                bool per_slice) {
    std::map<std::string, std::vector<OverlapCounts>> groups; // per group, per class
    const size_t num_classes = class_names.size();
    const long eval_batch = 8;
    for (size_t start = 0; start < test.size(); start += static_cast<size_t>(eval_batch)) {
        std::vector<Image2D> images;
        const size_t end = std::min(test.size(), start + static_cast<size_t>(eval_batch));
        for (size_t i = start; i < end; ++i) images.push_back(test[i].image);
        auto preds = predict_labels(model.forward(images, mae));
        for (size_t i = start; i < end; ++i) {
            if (!test[i].seg_mask) throw DataError("segment: test slice lacks a mask");
            const std::string key = per_slice ? test[i].subject_id + "#" + std::to_string(i)
                                              : test[i].subject_id;
            auto& counts = groups[key];
            if (counts.empty()) counts.resize(num_classes);
            for (size_t c = 1; c < num_classes; ++c) {
                counts[c].add(binarize_class(preds[i - start], static_cast<int32_t>(c)),
                              binarize_class(*test[i].seg_mask, static_cast<int32_t>(c)));
            }
        }
    }
    SegScores out;
    double iou_sum = 0, dice_sum = 0;
    for (size_t c = 1; c < num_classes; ++c) {
        double iou = 0, dice = 0;
        long support = 0;
        bool all_empty = true;
        for (const auto& [key, counts] : groups) {
            iou += counts[c].iou();
            dice += counts[c].dice();
            support += counts[c].gt;
            all_empty = all_empty && counts[c].empty_pair();
        }
        RegionReport r;
        r.region = class_names[c];
        r.iou = iou / static_cast<double>(groups.size());
        r.dice = dice / static_cast<double>(groups.size());
        r.support = support;
        r.empty = all_empty;
        iou_sum += r.iou;
        dice_sum += r.dice;
        out.regions.push_back(std::move(r));
    }
    out.overall_iou = iou_sum / static_cast<double>(num_classes - 1);
    out.overall_dice = dice_sum / static_cast<double>(num_classes - 1);
    RegionReport mean;
    mean.region = "mean";
    mean.iou = out.overall_iou;
    mean.dice = out.overall_dice;
    out.regions.push_back(std::move(mean));
    return out;
}

struct SegPointResult {
    std::string label;
    SegScores scores;
    long trainable = 0;
};

inline std::vector<std::string> seg_class_names(const ExperimentConfig& cfg) {
    if (!cfg.class_names_path.empty()) {
        return load_class_names(cfg.resolve(cfg.class_names_path));
    }
    std::vector<std::string> names;
    for (int c = 0; c < cfg.funet.num_classes; ++c) names.push_back("class_" + std::to_string(c));
    return names;
}

template <typename SegModel>
SegPointResult train_and_eval_point(const ExperimentConfig& cfg, const MaeModel& mae,
                                    SegModel& model, const std::vector<SliceRecord>& train,
                                    const std::vector<SliceRecord>& test,
                                    const std::vector<std::string>& class_names,
                                    const std::string& label, uint64_t point_key,
                                    std::vector<std::pair<long, double>>* losses) {
    AdamW opt;
    opt.config().lr = static_cast<float>(cfg.lr);
    opt.config().weight_decay = static_cast<float>(cfg.weight_decay);
    for (long step = 0; step < cfg.steps; ++step) {
        const uint64_t key = (point_key << 32) | static_cast<uint64_t>(step);
        Rng data_rng = Rng(cfg.seed).substream("data", key);
        Rng aug_rng = Rng(cfg.seed).substream("augment", key);
        auto batch = sample_batch(train, cfg.batch_size, data_rng, cfg.augment, cfg.policy, aug_rng,
                                  [&](const SliceRecord& rec, Rng& ar) {
                                      return augment(rec, cfg.policy, ar, cfg.weight_tau,
                                                     cfg.weight_min);
                                  });
        try {
            auto vals = seg_train_step(batch, mae, model, opt, cfg.loss_weights);
            if (losses) losses->emplace_back(step, vals.total);
        } catch (const NumericError& e) {
            throw NumericError("segment '" + label + "' aborted at step " + std::to_string(step) +
                               ": " + e.what());
        }
    }
    SegPointResult res;
    res.label = label;
    res.trainable = model.params.trainable_count();
    res.scores = evaluate_segmentation(test, mae, model, class_names, cfg.eval_per_slice);
    return res;
}

} // namespace detail

inline int run_segment(ExperimentConfig cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    auto mae = detail::frozen_mae_from_checkpoint(cfg);
    cfg.funet.image_size = cfg.mae.image_size;
    auto class_names = detail::seg_class_names(cfg);
    if (static_cast<int>(class_names.size()) != cfg.funet.num_classes) {
        throw ConfigError("segment: class-name list has " + std::to_string(class_names.size()) +
                          " entries, funet.num_classes is " + std::to_string(cfg.funet.num_classes));
    }
    auto train_idx = load_dataset_index(cfg.resolve(cfg.train_manifest));
    auto test_idx = load_dataset_index(cfg.resolve(cfg.test_manifest));
    SliceLoader train_loader(train_idx, detail::load_options(cfg, MaskKind::Seg));
    SliceLoader test_loader(test_idx, detail::load_options(cfg, MaskKind::Seg));
    auto test_slices = load_slices(test_loader, test_idx.entries, cfg.workers);

    auto select_entries = [&](long stride, long n_volumes) {
        if (stride > 0) return detail::stride_filter(train_idx.entries, stride);
        if (n_volumes > 0) return detail::first_volumes(train_idx.entries, n_volumes);
        return train_idx.entries;
    };

    struct Point {
        std::string label;
        std::string axis_value;
        std::vector<ManifestEntry> entries;
        FusionStrategy fusion;
    };
    std::vector<Point> points;
    if (!cfg.sweep_stride.empty()) {
        for (long k : cfg.sweep_stride) {
            points.push_back({"stride" + std::to_string(k), std::to_string(k), select_entries(k, 0),
                              cfg.funet.fusion});
        }
    } else if (!cfg.sweep_n.empty()) {
        for (long n : cfg.sweep_n) {
            points.push_back({"n" + std::to_string(n), std::to_string(n), select_entries(0, n),
                              cfg.funet.fusion});
        }
    } else if (!cfg.sweep_fusion.empty()) {
        for (const auto& f : cfg.sweep_fusion) {
            points.push_back({f, f, select_entries(cfg.stride, cfg.n_volumes), parse_fusion(f)});
        }
    } else {
        points.push_back({"", "", select_entries(cfg.stride, cfg.n_volumes), cfg.funet.fusion});
    }

    std::vector<detail::SegPointResult> results;
    for (size_t pi = 0; pi < points.size(); ++pi) {
        auto& point = points[pi];
        if (point.entries.empty()) throw DataError("segment: no training slices selected");
        auto train_slices = train_loader.load_all(point.entries);
        FunetConfig fcfg = cfg.funet;
        fcfg.fusion = point.fusion;
        Rng init_rng = Rng(cfg.seed).substream("init", static_cast<uint64_t>(pi));
        std::vector<std::pair<long, double>> losses;
        ExperimentConfig pcfg = cfg;
        pcfg.funet = fcfg;
        detail::SegPointResult res;
        if (cfg.seg_model == "mae-direct") {
            auto model = MaeDirectT<float>::init(fcfg, mae.cfg, init_rng);
            res = detail::train_and_eval_point(pcfg, mae, model, train_slices, test_slices,
                                               class_names, point.label, pi, &losses);
        } else {
            auto model = FunetModelT<float>::init(fcfg, mae.cfg, init_rng);
            res = detail::train_and_eval_point(pcfg, mae, model, train_slices, test_slices,
                                               class_names, point.label, pi, &losses);
        }
        const std::string loss_name = point.label.empty() ? "loss.csv" : "loss_" + point.label + ".csv";
        write_loss_csv(cfg.output_dir / loss_name, losses);
        results.push_back(std::move(res));
    }

    ReportTable table;
    if (!cfg.sweep_stride.empty() || !cfg.sweep_n.empty()) {
        const bool by_stride = !cfg.sweep_stride.empty();
        table.columns = {by_stride ? "stride" : "sample_size", "iou", "dice"};
        std::vector<std::pair<double, double>> iou_pts, dice_pts;
        for (size_t i = 0; i < results.size(); ++i) {
            const double axis = static_cast<double>(by_stride ? cfg.sweep_stride[i] : cfg.sweep_n[i]);
            table.add_row({points[i].axis_value, format_pct(results[i].scores.overall_iou),
                           format_pct(results[i].scores.overall_dice)});
            iou_pts.push_back({axis, results[i].scores.overall_iou * 100.0});
            dice_pts.push_back({axis, results[i].scores.overall_dice * 100.0});
        }
        auto iou_sum = stability_summary(iou_pts);
        auto dice_sum = stability_summary(dice_pts);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", iou_sum.mean);
        std::string iou_mean = buf;
        std::snprintf(buf, sizeof(buf), "%.2f", dice_sum.mean);
        table.add_row({"mean", iou_mean, buf});
        table.add_row({"std", format_std_pct(iou_sum.stddev), format_std_pct(dice_sum.stddev)});
    } else if (!cfg.sweep_fusion.empty()) {
        table.columns = {"fusion", "iou", "dice", "trainable_params"};
        for (const auto& r : results) {
            table.add_row({r.label, format_pct(r.scores.overall_iou),
                           format_pct(r.scores.overall_dice), std::to_string(r.trainable)});
        }
    } else {
        table.columns = {"region", "iou", "dice", "support"};
        for (const auto& r : results[0].scores.regions) {
            table.add_row({r.region, format_pct(r.iou), format_pct(r.dice),
                           r.region == "mean" ? "" : std::to_string(r.support)});
        }
    }
    table.write(cfg.output_dir / "report.csv", cfg.output_dir / "report.md");
    write_run_manifest(cfg, results.back().trainable,
                       {{"points", static_cast<long>(results.size())}});
    return 0;
}

// ---------------------------------------------------------------------------
// synth + report
// ---------------------------------------------------------------------------

inline int run_synth(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    synth::Result res;
    if (cfg.synth_kind == "classify") {
        res = synth::classification(cfg.output_dir, cfg.synth_image, cfg.synth_classes,
                                    cfg.synth_tags, cfg.synth_volumes, cfg.synth_test_volumes,
                                    cfg.synth_slices, cfg.seed);
    } else {
        res = synth::segmentation(cfg.output_dir, cfg.synth_image, cfg.synth_classes,
                                  cfg.synth_volumes, cfg.synth_test_volumes, cfg.synth_slices,
                                  cfg.seed);
    }
    write_run_manifest(cfg, 0,
                       {{"train_manifest", res.train_manifest.string()},
                        {"test_manifest", res.test_manifest.string()},
                        {"class_names", res.class_names.string()}});
    return 0;
}

inline int run_report(const ExperimentConfig& cfg) {
    if (cfg.report_in.empty()) throw ConfigError("report: report.in is required");
    auto table = read_csv_table(cfg.resolve(cfg.report_in));
    std::filesystem::path out = cfg.report_out;
    if (out.empty()) {
        out = cfg.resolve(cfg.report_in);
        out.replace_extension(".md");
    } else {
        out = cfg.resolve(out);
    }
    std::ofstream ms(out);
    if (!ms) throw DataError("cannot write " + out.string());
    ms << table.markdown();
    return 0;
}

inline int run_task(ExperimentConfig cfg) {
    cfg.validate();
    if (cfg.task == "pretrain") return run_pretrain(cfg);
    if (cfg.task == "classify") return run_classify(std::move(cfg));
    if (cfg.task == "segment") return run_segment(std::move(cfg));
    if (cfg.task == "synth") return run_synth(cfg);
    return run_report(cfg);
}

} // namespace maefuse
