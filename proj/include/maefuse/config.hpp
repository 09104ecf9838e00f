#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maefuse/dataset.hpp"
#include "maefuse/funet.hpp"
#include "maefuse/losses.hpp"
#include "maefuse/mae.hpp"
#include "maefuse/tomlmini.hpp"

namespace maefuse {

// Declarative description of one run. Loaded from a TOML file plus --set
// overrides; snapshot into every run manifest and checkpoint.
struct ExperimentConfig {
    std::string task; // pretrain | classify | segment | synth | report
    uint64_t seed = 0;
    bool seed_set = false;
    std::filesystem::path output_dir;
    std::filesystem::path config_dir; // directory of the config file; paths resolve against it
    int workers = 1;

    // model
    std::string preset = "desk"; // desk | paper
    MaeConfig mae = MaeConfig::desk();
    FunetConfig funet = FunetConfig::desk();
    std::string seg_model = "funet"; // funet | mae-direct

    // data
    std::filesystem::path train_manifest, test_manifest, class_names_path, checkpoint;
    bool resample = true;
    std::string percentile_scope = "slice"; // slice | volume
    long stride = 0;    // segment: stride-k slice selection when > 0
    long n_volumes = 0; // segment: first-n volume selection when > 0
    long n_per_class = 0; // classify: few-shot sample size

    // optimizer
    double lr = 1e-4;
    long batch_size = 48;
    long steps = 0;
    double weight_decay = 0.01;

    // augmentation
    bool augment = true;
    AugmentPolicy policy;
    int augment_copies = 2; // probe training: materialized augmented copies per slice

    // losses and coverage weights
    HybridLossWeights loss_weights;
    double weight_tau = 0.2;
    double weight_min = 0.05;

    // evaluation
    bool eval_per_slice = false; // default accumulates per volume

    // sweeps (at most one active)
    std::vector<long> sweep_n;
    std::vector<long> sweep_stride;
    std::vector<std::string> sweep_fusion;

    // synth
    std::string synth_kind = "classify"; // classify | segment
    long synth_image = 64;
    int synth_classes = 3;
    int synth_tags = 1;
    long synth_volumes = 2; // per class/tag (classify) or train volumes (segment)
    long synth_test_volumes = 1;
    long synth_slices = 10;

    // report re-rendering
    std::filesystem::path report_in, report_out;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : config_dir / p;
    }

    static ExperimentConfig load(const std::filesystem::path& file,
                                 const std::vector<std::string>& overrides) {
        toml::Table t = toml::parse_file(file.string());
        for (const auto& o : overrides) toml::apply_override(t, o);
        ExperimentConfig cfg;
        cfg.config_dir = std::filesystem::absolute(file).parent_path();
        cfg.apply(t);
        return cfg;
    }

    void apply(const toml::Table& t) {
        auto get = [&](const char* key) -> const toml::Value* {
            auto it = t.find(key);
            return it == t.end() ? nullptr : &it->second;
        };
        auto set_long = [&](const char* key, long& dst) {
            if (auto* v = get(key)) dst = static_cast<long>(v->as_int());
        };
        auto set_int = [&](const char* key, int& dst) {
            if (auto* v = get(key)) dst = static_cast<int>(v->as_int());
        };
        auto set_double = [&](const char* key, double& dst) {
            if (auto* v = get(key)) dst = v->as_float();
        };
        auto set_bool = [&](const char* key, bool& dst) {
            if (auto* v = get(key)) dst = v->as_bool();
        };
        auto set_string = [&](const char* key, std::string& dst) {
            if (auto* v = get(key)) dst = v->as_string();
        };
        auto set_path = [&](const char* key, std::filesystem::path& dst) {
            if (auto* v = get(key)) dst = v->as_string();
        };

        set_string("task", task);
        if (auto* v = get("seed")) {
            seed = static_cast<uint64_t>(v->as_int());
            seed_set = true;
        }
        set_path("output_dir", output_dir);
        set_int("workers", workers);

        set_string("model.preset", preset);
        if (preset == "paper") {
            mae = MaeConfig::paper();
            funet = FunetConfig();
        } else if (preset == "desk") {
            mae = MaeConfig::desk();
            funet = FunetConfig::desk();
        } else {
            throw ConfigError("unknown model.preset '" + preset + "' (desk|paper)");
        }
        set_long("model.image_size", mae.image_size);
        set_long("model.patch_size", mae.patch_size);
        set_long("model.enc_dim", mae.enc_dim);
        set_int("model.enc_layers", mae.enc_layers);
        set_int("model.enc_heads", mae.enc_heads);
        set_long("model.dec_dim", mae.dec_dim);
        set_int("model.dec_layers", mae.dec_layers);
        set_int("model.dec_heads", mae.dec_heads);
        set_double("model.mask_ratio", mae.mask_ratio);
        set_double("model.mlp_ratio", mae.mlp_ratio);
        set_bool("model.norm_pix_target", mae.norm_pix_target);

        funet.image_size = mae.image_size;
        set_long("funet.base_width", funet.base_width);
        set_int("funet.depth", funet.depth);
        set_int("funet.num_classes", funet.num_classes);
        set_int("funet.norm_groups", funet.norm_groups);
        if (auto* v = get("funet.fusion")) funet.fusion = parse_fusion(v->as_string());
        if (auto* v = get("funet.fusion_layers")) {
            funet.fusion_layers.clear();
            for (const auto& x : v->as_array()) {
                funet.fusion_layers.push_back(static_cast<int>(x.as_int()));
            }
        }
        set_string("funet.kind", seg_model);

        set_path("data.train_manifest", train_manifest);
        set_path("data.test_manifest", test_manifest);
        set_path("data.class_names", class_names_path);
        set_path("data.checkpoint", checkpoint);
        set_bool("data.resample", resample);
        set_string("data.percentile_scope", percentile_scope);
        set_long("data.stride", stride);
        set_long("data.n_volumes", n_volumes);
        set_long("data.n_per_class", n_per_class);

        set_double("optim.lr", lr);
        set_long("optim.batch_size", batch_size);
        set_long("optim.steps", steps);
        set_double("optim.weight_decay", weight_decay);

        set_bool("augment.enabled", augment);
        if (auto* v = get("augment.rotation_max_deg")) {
            policy.rotation_max_deg = static_cast<float>(v->as_float());
        }
        if (auto* v = get("augment.flip_prob")) policy.flip_prob = static_cast<float>(v->as_float());
        if (auto* v = get("augment.crop_scale")) {
            const auto& a = v->as_array();
            if (a.size() != 2) throw ConfigError("augment.crop_scale expects [lo, hi]");
            policy.crop_scale_lo = static_cast<float>(a[0].as_float());
            policy.crop_scale_hi = static_cast<float>(a[1].as_float());
        }
        set_int("augment.copies", augment_copies);

        set_double("loss.lambda_dice", loss_weights.dice);
        set_double("loss.lambda_focal", loss_weights.focal);
        set_double("loss.lambda_ce", loss_weights.ce);
        set_double("weights.tau", weight_tau);
        set_double("weights.w_min", weight_min);
        set_bool("eval.per_slice", eval_per_slice);

        auto set_long_list = [&](const char* key, std::vector<long>& dst) {
            if (auto* v = get(key)) {
                dst.clear();
                for (const auto& x : v->as_array()) dst.push_back(static_cast<long>(x.as_int()));
            }
        };
        set_long_list("sweep.n_per_class", sweep_n);
        set_long_list("sweep.stride", sweep_stride);
        if (auto* v = get("sweep.fusion")) {
            sweep_fusion.clear();
            for (const auto& x : v->as_array()) sweep_fusion.push_back(x.as_string());
        }

        set_string("synth.kind", synth_kind);
        set_long("synth.image_size", synth_image);
        set_int("synth.classes", synth_classes);
        set_int("synth.tags", synth_tags);
        set_long("synth.volumes", synth_volumes);
        set_long("synth.test_volumes", synth_test_volumes);
        set_long("synth.slices", synth_slices);

        set_path("report.in", report_in);
        set_path("report.out", report_out);
    }

    void validate() const {
        static const std::vector<std::string> tasks = {"pretrain", "classify", "segment", "synth",
                                                       "report"};
        if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
            throw ConfigError("task must be one of pretrain|classify|segment|synth|report, got '" +
                              task + "'");
        }
        if (!seed_set && task != "report") throw ConfigError("seed is mandatory");
        if (task != "report" && output_dir.empty()) throw ConfigError("output_dir is required");
        policy.validate();
        auto require_file = [&](const std::filesystem::path& p, const char* what) {
            if (p.empty()) throw ConfigError(std::string(what) + " is required for task " + task);
            if (!std::filesystem::exists(resolve(p))) {
                throw ConfigError(std::string(what) + " not found: " + resolve(p).string());
            }
        };
        if (task == "pretrain" || task == "classify" || task == "segment") {
            mae.validate();
            require_file(train_manifest, "data.train_manifest");
        }
        auto require_checkpoint = [&](const std::filesystem::path& p, const char* what) {
            if (p.empty()) throw ConfigError(std::string(what) + " is required for task " + task);
            if (!std::filesystem::exists(resolve(p).string() + ".json")) {
                throw ConfigError(std::string(what) + " not found: " + resolve(p).string() + ".json");
            }
        };
        if (task == "classify" || task == "segment") {
            require_file(test_manifest, "data.test_manifest");
            require_checkpoint(checkpoint, "data.checkpoint");
        }
        if (task == "pretrain" && !checkpoint.empty()) {
            require_checkpoint(checkpoint, "data.checkpoint (resume)");
        }
        if (task == "segment") {
            funet.validate(mae);
            if (seg_model != "funet" && seg_model != "mae-direct") {
                throw ConfigError("funet.kind must be funet|mae-direct");
            }
            int sweeps = (!sweep_stride.empty()) + (!sweep_fusion.empty()) +
                         (static_cast<int>(!sweep_n.empty()));
            if (sweeps > 1) throw ConfigError("at most one sweep may be active");
        }
        if (task == "synth" && synth_kind != "classify" && synth_kind != "segment") {
            throw ConfigError("synth.kind must be classify|segment");
        }
        if (lr <= 0 || batch_size < 1 || steps < 0) {
            throw ConfigError("optimizer settings must be positive");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["task"] = task;
        j["seed"] = seed;
        j["output_dir"] = output_dir.string();
        j["workers"] = workers;
        j["model"] = {{"preset", preset},
                      {"image_size", mae.image_size},
                      {"patch_size", mae.patch_size},
                      {"enc_dim", mae.enc_dim},
                      {"enc_layers", mae.enc_layers},
                      {"enc_heads", mae.enc_heads},
                      {"dec_dim", mae.dec_dim},
                      {"dec_layers", mae.dec_layers},
                      {"dec_heads", mae.dec_heads},
                      {"mask_ratio", mae.mask_ratio},
                      {"mlp_ratio", mae.mlp_ratio},
                      {"norm_pix_target", mae.norm_pix_target}};
        j["funet"] = {{"base_width", funet.base_width},
                      {"depth", funet.depth},
                      {"fusion", fusion_name(funet.fusion)},
                      {"fusion_layers", funet.fusion_layers},
                      {"num_classes", funet.num_classes},
                      {"norm_groups", funet.norm_groups},
                      {"kind", seg_model}};
        j["data"] = {{"train_manifest", train_manifest.string()},
                     {"test_manifest", test_manifest.string()},
                     {"class_names", class_names_path.string()},
                     {"checkpoint", checkpoint.string()},
                     {"resample", resample},
                     {"percentile_scope", percentile_scope},
                     {"stride", stride},
                     {"n_volumes", n_volumes},
                     {"n_per_class", n_per_class}};
        j["optim"] = {{"lr", lr},
                      {"batch_size", batch_size},
                      {"steps", steps},
                      {"weight_decay", weight_decay}};
        j["augment"] = {{"enabled", augment},
                        {"rotation_max_deg", policy.rotation_max_deg},
                        {"flip_prob", policy.flip_prob},
                        {"crop_scale", {policy.crop_scale_lo, policy.crop_scale_hi}},
                        {"copies", augment_copies}};
        j["loss"] = {{"lambda_dice", loss_weights.dice},
                     {"lambda_focal", loss_weights.focal},
                     {"lambda_ce", loss_weights.ce}};
        j["weights"] = {{"tau", weight_tau}, {"w_min", weight_min}};
        j["eval"] = {{"per_slice", eval_per_slice}};
        j["sweep"] = {{"n_per_class", sweep_n}, {"stride", sweep_stride}, {"fusion", sweep_fusion}};
        return j;
    }

    std::string config_hash() const {
        const std::string dump = to_json().dump();
        return hash_hex(Rng::fnv1a64(dump));
    }

    // Rebuilds the model-relevant parts from a checkpoint's config snapshot.
    void adopt_model_config(const nlohmann::json& snapshot) {
        const auto& m = snapshot.at("model");
        mae.image_size = m.at("image_size").get<long>();
        mae.patch_size = m.at("patch_size").get<long>();
        mae.enc_dim = m.at("enc_dim").get<long>();
        mae.enc_layers = m.at("enc_layers").get<int>();
        mae.enc_heads = m.at("enc_heads").get<int>();
        mae.dec_dim = m.at("dec_dim").get<long>();
        mae.dec_layers = m.at("dec_layers").get<int>();
        mae.dec_heads = m.at("dec_heads").get<int>();
        mae.mask_ratio = m.at("mask_ratio").get<double>();
        mae.mlp_ratio = m.at("mlp_ratio").get<double>();
        mae.norm_pix_target = m.at("norm_pix_target").get<bool>();
        funet.image_size = mae.image_size;
    }

    static std::string hash_hex(uint64_t h) {
        static const char* hex = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i) {
            s[static_cast<size_t>(i)] = hex[h & 0xF];
            h >>= 4;
        }
        return s;
    }
};

} // namespace maefuse
