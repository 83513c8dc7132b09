// SPDX-License-Identifier: Apache-2.0

#include "cadrads/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadrads/checkpoint.hpp"
#include "cadrads/error.hpp"
#include "cadrads/explain.hpp"
#include "cadrads/imaging.hpp"
#include "cadrads/manifest.hpp"
#include "cadrads/metrics.hpp"
#include "cadrads/model.hpp"
#include "cadrads/samples.hpp"
#include "cadrads/split.hpp"
#include "cadrads/synth.hpp"
#include "cadrads/training.hpp"

namespace cadrads::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string data_dir;
    std::string run_dir;
    data::Task task = data::Task::Binary;
    std::string model = "nano";  // nano | tiny | custom
    std::uint64_t seed = 42;
    int holdout_fold = -1;  // -1: train on the full training side

    std::string manifest_rel = "manifest.json";
    std::string preprocessed_rel = "preprocessed";
    std::string split_rel = "split.json";

    train::HyperParams hp;
    std::optional<nn::ModelConfig> custom_model;
    synth::SynthConfig synth_cfg;
    imaging::ClaheParams clahe;
    int bootstrap_resamples = 2000;

    explain::OcclusionOptions occlusion;
    int eg_steps = 64;
    int eg_background = 16;
    explain::TsneOptions tsne_opts;

    std::string manifest_path() const { return (fs::path(data_dir) / manifest_rel).string(); }
    std::string preprocessed_dir() const { return (fs::path(data_dir) / preprocessed_rel).string(); }
    std::string split_path() const { return (fs::path(data_dir) / split_rel).string(); }
};

void require_keys(const json& j, const std::string& where, const std::vector<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw usage_error("config", "unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

nn::ModelConfig parse_model_config(const json& j) {
    require_keys(j, "model_config",
                 {"arch", "in_channels", "num_classes", "input_size", "stem_channels", "stage_blocks",
                  "stage_channels", "window_size", "grid_size", "mbconv_expansion", "se_reduction",
                  "head_dim", "mlp_ratio", "dropout_rate"});
    nn::ModelConfig c;
    maybe(j, "arch", c.arch);
    maybe(j, "in_channels", c.in_channels);
    maybe(j, "num_classes", c.num_classes);
    maybe(j, "input_size", c.input_size);
    maybe(j, "stem_channels", c.stem_channels);
    maybe(j, "stage_blocks", c.stage_blocks);
    maybe(j, "stage_channels", c.stage_channels);
    maybe(j, "window_size", c.window_size);
    maybe(j, "grid_size", c.grid_size);
    maybe(j, "mbconv_expansion", c.mbconv_expansion);
    maybe(j, "se_reduction", c.se_reduction);
    maybe(j, "head_dim", c.head_dim);
    maybe(j, "mlp_ratio", c.mlp_ratio);
    maybe(j, "dropout_rate", c.dropout_rate);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("config", "cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw usage_error("config", std::string("malformed config JSON: ") + e.what());
    }

    require_keys(j, "config root",
                 {"data_dir", "run_dir", "task", "model", "seed", "holdout_fold", "manifest", "preprocessed",
                  "split", "hyperparams", "model_config", "synth", "preprocess", "eval", "explain", "tsne"});

    RunConfig c;
    try {
        maybe(j, "data_dir", c.data_dir);
        maybe(j, "run_dir", c.run_dir);
        if (j.contains("task")) c.task = data::task_from_name(j.at("task").get<std::string>());
        maybe(j, "model", c.model);
        maybe(j, "seed", c.seed);
        maybe(j, "holdout_fold", c.holdout_fold);
        maybe(j, "manifest", c.manifest_rel);
        maybe(j, "preprocessed", c.preprocessed_rel);
        maybe(j, "split", c.split_rel);

        if (j.contains("hyperparams")) {
            const json& h = j.at("hyperparams");
            require_keys(h, "hyperparams",
                         {"lr", "lr_decay_epoch", "lr_after_decay", "dropout", "weight_decay",
                          "label_smoothing", "epochs", "batch_size"});
            maybe(h, "lr", c.hp.lr);
            maybe(h, "lr_decay_epoch", c.hp.lr_decay_epoch);
            maybe(h, "lr_after_decay", c.hp.lr_after_decay);
            maybe(h, "dropout", c.hp.dropout);
            maybe(h, "weight_decay", c.hp.weight_decay);
            maybe(h, "label_smoothing", c.hp.label_smoothing);
            maybe(h, "epochs", c.hp.epochs);
            maybe(h, "batch_size", c.hp.batch_size);
        }
        if (j.contains("model_config")) c.custom_model = parse_model_config(j.at("model_config"));
        if (j.contains("synth")) {
            const json& s = j.at("synth");
            require_keys(s, "synth",
                         {"n_patients", "cadrads_distribution", "image_size", "vessel_width", "noise_level",
                          "views_per_vessel", "seed"});
            maybe(s, "n_patients", c.synth_cfg.n_patients);
            if (s.contains("cadrads_distribution")) {
                auto v = s.at("cadrads_distribution").get<std::vector<double>>();
                if (v.size() != 6) throw usage_error("config", "cadrads_distribution needs 6 entries");
                std::copy(v.begin(), v.end(), c.synth_cfg.cadrads_distribution.begin());
            }
            maybe(s, "image_size", c.synth_cfg.image_size);
            maybe(s, "vessel_width", c.synth_cfg.vessel_width);
            maybe(s, "noise_level", c.synth_cfg.noise_level);
            maybe(s, "views_per_vessel", c.synth_cfg.views_per_vessel);
            maybe(s, "seed", c.synth_cfg.seed);
        }
        if (j.contains("preprocess")) {
            const json& p = j.at("preprocess");
            require_keys(p, "preprocess", {"clip_limit", "tiles_x", "tiles_y"});
            maybe(p, "clip_limit", c.clahe.clip_limit);
            maybe(p, "tiles_x", c.clahe.tiles_x);
            maybe(p, "tiles_y", c.clahe.tiles_y);
        }
        if (j.contains("eval")) {
            const json& e = j.at("eval");
            require_keys(e, "eval", {"bootstrap_resamples"});
            maybe(e, "bootstrap_resamples", c.bootstrap_resamples);
        }
        if (j.contains("explain")) {
            const json& e = j.at("explain");
            require_keys(e, "explain", {"patch", "stride", "top_k", "mask_value", "m_steps", "background"});
            maybe(e, "patch", c.occlusion.patch);
            maybe(e, "stride", c.occlusion.stride);
            maybe(e, "top_k", c.occlusion.top_k);
            maybe(e, "mask_value", c.occlusion.mask_value);
            maybe(e, "m_steps", c.eg_steps);
            maybe(e, "background", c.eg_background);
        }
        if (j.contains("tsne")) {
            const json& t = j.at("tsne");
            require_keys(t, "tsne", {"perplexity", "iters"});
            maybe(t, "perplexity", c.tsne_opts.perplexity);
            maybe(t, "iters", c.tsne_opts.iters);
        }
    } catch (const json::exception& e) {
        throw usage_error("config", std::string("config value error: ") + e.what());
    }

    // Environment overrides exist for paths only.
    if (const char* env = std::getenv("CADRADS_DATA_DIR")) c.data_dir = env;
    if (const char* env = std::getenv("CADRADS_RUN_DIR")) c.run_dir = env;
    if (c.data_dir.empty()) throw usage_error("config", "data_dir is required");
    return c;
}

nn::ModelConfig resolve_model(const RunConfig& c) {
    nn::ModelConfig mc;
    if (c.model == "tiny") {
        mc = nn::tiny_config(data::num_classes(c.task));
    } else if (c.model == "nano") {
        mc = nn::nano_config(data::num_classes(c.task));
    } else if (c.model == "custom") {
        if (!c.custom_model) throw usage_error("config", "model=custom requires a model_config section");
        mc = *c.custom_model;
        mc.num_classes = data::num_classes(c.task);
    } else {
        throw usage_error("config", "unknown model preset: " + c.model + " (nano|tiny|custom)");
    }
    mc.validate();
    return mc;
}

struct LoadedData {
    data::Manifest manifest;
    data::SplitAssignment split;
    data::ImageProvider provider;
};

LoadedData load_data(const RunConfig& c) {
    LoadedData d;
    d.manifest = data::load_manifest(c.manifest_path());
    d.split = data::load_split(c.split_path());
    d.provider = data::directory_provider(c.preprocessed_dir());
    return d;
}

std::vector<data::StackedSample> assemble_side(const RunConfig& c, const LoadedData& d,
                                               const data::ImputationTemplates& templates,
                                               data::Side side, int sample_size) {
    return data::assemble_samples(d.manifest, templates, d.split, side, d.provider, sample_size);
}

eval::PredictionSet predict_set(nn::Network<float>& net, const std::vector<data::StackedSample>& samples,
                                data::Task task, int batch_size = 16) {
    eval::PredictionSet ps;
    ps.task = task;
    const int K = data::num_classes(task);
    for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(samples.size(), at + static_cast<std::size_t>(batch_size));
        const int S = samples[at].side;
        nn::Tensor<float> x({static_cast<int>(e - at), 3, S, S});
        for (std::size_t i = at; i < e; ++i) {
            std::copy(samples[i].data.begin(), samples[i].data.end(), x.data() + (i - at) * samples[i].data.size());
        }
        auto out = net.forward(x, nn::Phase::Eval, nullptr);
        for (std::size_t i = at; i < e; ++i) {
            eval::PredictionRow row;
            row.patient_id = samples[i].patient_id;
            row.view = samples[i].view;
            row.true_label = task == data::Task::Binary ? samples[i].label_binary : samples[i].label_multi;
            const int r = static_cast<int>(i - at);
            double maxv = -1e300;
            for (int k = 0; k < K; ++k) maxv = std::max(maxv, static_cast<double>(out.logits.at2(r, k)));
            double denom = 0.0;
            std::vector<double> p(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) {
                p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(out.logits.at2(r, k)) - maxv);
                denom += p[static_cast<std::size_t>(k)];
            }
            for (auto& v : p) v /= denom;
            row.probs = std::move(p);
            ps.rows.push_back(std::move(row));
        }
    }
    return ps;
}

void write_predictions_csv(const std::string& path, const eval::PredictionSet& ps) {
    std::ofstream out(path);
    if (!out) throw data_error("eval", "cannot write " + path);
    out << "patient_id,view,true_label";
    for (int k = 0; k < ps.num_classes(); ++k) out << ",prob_" << k;
    out << "\n";
    char buf[32];
    for (const auto& r : ps.rows) {
        out << r.patient_id << "," << r.view << "," << r.true_label;
        for (double p : r.probs) {
            std::snprintf(buf, sizeof(buf), ",%.10g", p);
            out << buf;
        }
        out << "\n";
    }
}

std::vector<double> class_scores(const eval::PredictionSet& ps, int k) {
    std::vector<double> s;
    for (const auto& r : ps.rows) s.push_back(r.probs[static_cast<std::size_t>(k)]);
    return s;
}

std::vector<int> class_labels(const eval::PredictionSet& ps, int k) {
    std::vector<int> l;
    for (const auto& r : ps.rows) l.push_back(r.true_label == k ? 1 : 0);
    return l;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path) {
    RunConfig c = load_run_config(config_path);
    synth::generate_dataset(c.synth_cfg, c.data_dir);
    std::cout << "synthetic dataset written to " << c.data_dir << "\n";
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir, double clip_limit,
                   int tiles) {
    data::Manifest m = data::load_manifest(manifest_path);
    fs::create_directories(out_dir);
    const fs::path base = fs::path(manifest_path).parent_path();
    imaging::ClaheParams params;
    params.clip_limit = clip_limit;
    params.tiles_x = tiles;
    params.tiles_y = tiles;

    for (const auto& im : m.images) {
        GrayImage raw = read_gray((base / im.path).string());
        imaging::PreprocessInfo info;
        GrayImage processed = imaging::preprocess(raw, params, &info);
        const std::string key = data::image_key(im);
        write_gray((fs::path(out_dir) / (key + ".png")).string(), processed);

        json sidecar;
        sidecar["image"] = key;
        sidecar["otsu_threshold"] = info.otsu_threshold;
        sidecar["bbox"] = {info.crop_bbox.row0, info.crop_bbox.col0, info.crop_bbox.row1, info.crop_bbox.col1};
        sidecar["stage_ms"] = {info.stage_ms[0], info.stage_ms[1], info.stage_ms[2]};
        sidecar["warnings"] = info.warnings;
        std::ofstream sc(fs::path(out_dir) / (key + ".json"));
        sc << sidecar.dump(2) << "\n";
    }
    std::cout << "preprocessed " << m.images.size() << " images into " << out_dir << "\n";
    return 0;
}

int cmd_split(const std::string& manifest_path, std::uint64_t seed, const std::string& out_path,
              double test_fraction, int folds) {
    data::Manifest m = data::load_manifest(manifest_path);
    auto split = data::stratified_patient_split(m, test_fraction, folds, seed);
    std::string out = out_path.empty()
                          ? (fs::path(manifest_path).parent_path() / "split.json").string()
                          : out_path;
    data::save_split(out, split);
    std::cout << "split written to " << out << " (" << split.test.size() << " test patients, "
              << split.fold_of.size() << " train patients)\n";
    return 0;
}

data::ImputationTemplates ensure_templates(const RunConfig& c, const LoadedData& d,
                                           const std::string& dir) {
    if (fs::exists(fs::path(dir) / "index.json")) return data::load_templates(dir);
    auto templates = data::compute_imputation_templates(d.manifest, d.split, d.provider);
    data::save_templates(dir, templates);
    return templates;
}

int cmd_train(const std::string& config_path, bool grid, bool verbose) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("train", "run_dir is required");
    nn::ModelConfig mc = resolve_model(c);
    LoadedData d = load_data(c);
    fs::create_directories(c.run_dir);

    // config snapshot
    {
        std::ifstream src(config_path);
        std::ofstream dst(fs::path(c.run_dir) / "config.json");
        dst << src.rdbuf();
    }

    auto templates = ensure_templates(c, d, (fs::path(c.run_dir) / "templates").string());
    auto train_samples = assemble_side(c, d, templates, data::Side::Train, mc.input_size);
    if (train_samples.empty()) throw data_error("train", "no training samples assembled");

    train::FitOptions opts;
    opts.task = c.task;
    opts.hp = c.hp;
    opts.seed = c.seed;
    opts.verbose = verbose;

    if (grid) {
        train::GridSpace space;
        auto result = train::grid_search(mc, space, opts, train_samples, d.split);
        train::write_grid_table_csv((fs::path(c.run_dir) / "grid_search.csv").string(), result);
        opts.hp = result.best;
        std::cout << "grid search done: best lr " << result.best.lr << ", dropout " << result.best.dropout
                  << ", weight_decay " << result.best.weight_decay << ", decay epoch "
                  << result.best.lr_decay_epoch << ", smoothing " << result.best.label_smoothing << "\n";
    }

    std::vector<data::StackedSample> tr, va;
    if (c.holdout_fold >= 0) {
        for (const auto& s : train_samples) {
            (d.split.fold_of.at(s.patient_id) == c.holdout_fold ? va : tr).push_back(s);
        }
    } else {
        tr = train_samples;
    }
    opts.run_dir = c.run_dir;
    auto result = train::fit(mc, opts, tr, va);
    std::cout << "training done: best epoch " << result.best_epoch << ", best val acc "
              << result.best_val_acc << ", checkpoint " << result.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path, const std::string& side_name,
             const std::string& task_flag, const std::string& templates_dir) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("eval", "run_dir is required");
    auto loaded = nn::load_checkpoint(checkpoint_path);
    if (!task_flag.empty() && data::task_from_name(task_flag) != loaded.task) {
        throw usage_error("eval", "head mismatch: checkpoint task is " + std::string(data::task_name(loaded.task)) +
                                      ", requested " + task_flag);
    }
    LoadedData d = load_data(c);
    const std::string tdir = templates_dir.empty()
                                 ? (fs::path(checkpoint_path).parent_path() / "templates").string()
                                 : templates_dir;
    auto templates = data::load_templates(tdir);

    const data::Side side = side_name == "train" ? data::Side::Train : data::Side::Test;
    if (side_name != "train" && side_name != "test") {
        throw usage_error("eval", "--split must be train or test");
    }
    auto samples = assemble_side(c, d, templates, side, loaded.config.input_size);
    if (samples.empty()) throw data_error("eval", "no samples for the requested split side");

    auto preds = predict_set(*loaded.network, samples, loaded.task);
    auto per_patient = eval::aggregate_per_patient(preds);

    eval::BootstrapOptions bo;
    bo.resamples = c.bootstrap_resamples;
    bo.seed = Rng::sub_seed(c.seed, "bootstrap-eval");
    auto rep_img = eval::multiclass_report(preds, "per_image", bo);
    auto rep_pat = eval::multiclass_report(per_patient, "per_patient", bo);

    const fs::path out = fs::path(c.run_dir) / "eval";
    fs::create_directories(out);
    {
        std::ofstream f(out / "metrics_per_image.json");
        f << eval::report_to_json(rep_img) << "\n";
        std::ofstream g(out / "metrics_per_patient.json");
        g << eval::report_to_json(rep_pat) << "\n";
        std::ofstream fc(out / "metrics_per_image.csv");
        fc << eval::report_to_csv(rep_img);
        std::ofstream gc(out / "metrics_per_patient.csv");
        gc << eval::report_to_csv(rep_pat);
    }
    write_predictions_csv((out / "predictions.csv").string(), preds);
    write_predictions_csv((out / "predictions_per_patient.csv").string(), per_patient);
    for (int k = 0; k < preds.num_classes(); ++k) {
        eval::write_roc_csv((out / ("roc_image_class" + std::to_string(k) + ".csv")).string(),
                            eval::roc_curve(class_scores(preds, k), class_labels(preds, k)));
        eval::write_roc_csv((out / ("roc_patient_class" + std::to_string(k) + ".csv")).string(),
                            eval::roc_curve(class_scores(per_patient, k), class_labels(per_patient, k)));
    }
    std::cout << eval::report_to_json(rep_pat) << "\n";
    return 0;
}

int cmd_compare(const std::string& config_path, const std::string& ckpt_a, const std::string& ckpt_b,
                const std::string& templates_dir) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("compare", "run_dir is required");
    auto a = nn::load_checkpoint(ckpt_a);
    auto b = nn::load_checkpoint(ckpt_b);
    if (a.task != b.task) throw usage_error("compare", "checkpoints trained for different tasks");

    LoadedData d = load_data(c);
    const std::string tdir = templates_dir.empty()
                                 ? (fs::path(ckpt_a).parent_path() / "templates").string()
                                 : templates_dir;
    auto templates = data::load_templates(tdir);

    json report;
    report["checkpoint_a"] = ckpt_a;
    report["checkpoint_b"] = ckpt_b;
    report["comparisons"] = json::array();
    const int K = data::num_classes(a.task);
    // each model predicts at its own input size; rows stay paired by (patient, view)
    auto sa = assemble_side(c, d, templates, data::Side::Test, a.config.input_size);
    auto sb = assemble_side(c, d, templates, data::Side::Test, b.config.input_size);
    if (sa.size() != sb.size()) throw data_error("compare", "sample sets differ between checkpoints");
    auto pa = predict_set(*a.network, sa, a.task);
    auto pb = predict_set(*b.network, sb, b.task);

    for (int k = K == 2 ? 1 : 0; k < K; ++k) {
        auto res = eval::delong_test(class_scores(pa, k), class_scores(pb, k), class_labels(pa, k));
        json row;
        row["class"] = k;
        row["auc_a"] = res.auc_a;
        row["auc_b"] = res.auc_b;
        row["z"] = res.z;
        row["p"] = res.p;
        report["comparisons"].push_back(row);
    }
    fs::create_directories(c.run_dir);
    std::ofstream f(fs::path(c.run_dir) / "compare.json");
    f << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_explain(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& patient, int view, const std::string& templates_dir) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("explain", "run_dir is required");
    auto loaded = nn::load_checkpoint(checkpoint_path);
    LoadedData d = load_data(c);
    const std::string tdir = templates_dir.empty()
                                 ? (fs::path(checkpoint_path).parent_path() / "templates").string()
                                 : templates_dir;
    auto templates = data::load_templates(tdir);

    const data::Side side = d.split.is_test(patient) ? data::Side::Test : data::Side::Train;
    auto samples = assemble_side(c, d, templates, side, loaded.config.input_size);

    auto train_samples = assemble_side(c, d, templates, data::Side::Train, loaded.config.input_size);
    std::vector<std::vector<float>> background;
    {
        Rng rng(Rng::sub_seed(c.seed, "eg-background"));
        std::vector<std::size_t> order(train_samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(c.eg_background), order.size());
        for (std::size_t i = 0; i < nb; ++i) {
            background.push_back(std::vector<float>(train_samples[order[i]].data.begin(),
                                                    train_samples[order[i]].data.end()));
        }
    }
    if (background.empty()) throw data_error("explain", "no training samples for the background set");

    const fs::path out = fs::path(c.run_dir) / "explain" / patient;
    fs::create_directories(out);
    bool found = false;
    for (const auto& s : samples) {
        if (s.patient_id != patient) continue;
        if (view >= 0 && s.view != view) continue;
        found = true;

        auto occ = explain::occlusion_patches(*loaded.network, s, c.occlusion);
        explain::NetworkScorer scorer(*loaded.network, occ.top_class);
        explain::ExpectedGradientsOptions eg;
        eg.m_steps = c.eg_steps;
        eg.seed = Rng::sub_seed(c.seed, "eg", static_cast<std::uint64_t>(s.view));
        std::vector<float> input(s.data.begin(), s.data.end());
        auto attr = explain::expected_gradients(scorer, input, s.side, background, occ.top_class, eg);

        const std::string prefix = "view" + std::to_string(s.view);
        explain::save_attribution((out / (prefix + "_attribution")).string(), attr);
        explain::render_overlays(s, occ, attr, out.string(), prefix);

        json meta;
        meta["patient"] = patient;
        meta["view"] = s.view;
        meta["top_class"] = occ.top_class;
        meta["top_prob"] = occ.top_prob;
        meta["convergence_gap"] = attr.convergence_gap;
        meta["patches"] = json::array();
        for (int ch = 0; ch < 3; ++ch) {
            for (const auto& p : occ.per_channel[static_cast<std::size_t>(ch)]) {
                meta["patches"].push_back({{"vessel", data::vessel_name(static_cast<data::Vessel>(ch))},
                                           {"row", p.row},
                                           {"col", p.col},
                                           {"score_drop", p.score_drop}});
            }
        }
        std::ofstream mf(out / (prefix + "_summary.json"));
        mf << meta.dump(2) << "\n";
    }
    if (!found) throw data_error("explain", "no samples for patient " + patient);
    std::cout << "explanations written to " << out.string() << "\n";
    return 0;
}

int cmd_embed(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& side_name, const std::string& templates_dir) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("embed", "run_dir is required");
    auto loaded = nn::load_checkpoint(checkpoint_path);
    LoadedData d = load_data(c);
    const std::string tdir = templates_dir.empty()
                                 ? (fs::path(checkpoint_path).parent_path() / "templates").string()
                                 : templates_dir;
    auto templates = data::load_templates(tdir);
    const data::Side side = side_name == "train" ? data::Side::Train : data::Side::Test;
    auto samples = assemble_side(c, d, templates, side, loaded.config.input_size);
    if (samples.empty()) throw data_error("embed", "no samples for the requested split side");
    auto emb = explain::export_embeddings(*loaded.network, samples, loaded.task);
    const std::string path = (fs::path(c.run_dir) / "embeddings.csv").string();
    explain::save_embeddings_csv(path, emb);
    std::cout << "embeddings (" << emb.patient_ids.size() << " x " << emb.dim << ") written to " << path << "\n";
    return 0;
}

int cmd_tsne(const std::string& config_path, const std::string& embeddings_path) {
    RunConfig c = load_run_config(config_path);
    if (c.run_dir.empty()) throw usage_error("tsne", "run_dir is required");
    const std::string in_path =
        embeddings_path.empty() ? (fs::path(c.run_dir) / "embeddings.csv").string() : embeddings_path;
    auto emb = explain::load_embeddings_csv(in_path);
    explain::TsneOptions topt = c.tsne_opts;
    topt.seed = Rng::sub_seed(c.seed, "tsne");
    auto coords = explain::tsne(emb.values, static_cast<int>(emb.patient_ids.size()), emb.dim, topt);
    const std::string path = (fs::path(c.run_dir) / "tsne.csv").string();
    explain::save_tsne_csv(path, emb, coords);
    std::cout << "t-SNE: initial KL " << coords.initial_kl << ", final KL " << coords.final_kl
              << ", coords in " << path << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"CAD-RADS vessel scoring pipeline"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_path, checkpoint, checkpoint_b, patient, side = "test";
    std::string task_flag, templates_dir, embeddings_path;
    std::uint64_t seed = 42;
    double clip_limit = 2.0, test_fraction = 0.2;
    int tiles = 8, folds = 10, view = -1;
    bool grid = false, verbose = false;

    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labeled vessel dataset");
    c_synth->add_option("--config", config_path, "Run config JSON")->required();

    auto* c_pre = app.add_subcommand("preprocess", "Preprocess raw vessel images (artifacts, CLAHE, crop)");
    c_pre->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    c_pre->add_option("--out", out_path, "Output directory for preprocessed images")->required();
    c_pre->add_option("--clip-limit", clip_limit, "CLAHE clip limit (default 2.0)");
    c_pre->add_option("--tiles", tiles, "CLAHE tile grid side (default 8)");

    auto* c_split = app.add_subcommand("split", "Stratified patient-wise 80/20 split with 10 folds");
    c_split->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    c_split->add_option("--seed", seed, "Split seed")->required();
    c_split->add_option("--out", out_path, "Output split JSON (default: next to manifest)");
    c_split->add_option("--test-fraction", test_fraction, "Test fraction (default 0.2)");
    c_split->add_option("--folds", folds, "Cross-validation folds (default 10)");

    auto* c_train = app.add_subcommand("train", "Train a model (optionally after a grid search)");
    c_train->add_option("--config", config_path, "Run config JSON")->required();
    c_train->add_flag("--grid", grid, "Run the full hyperparameter grid search first");
    c_train->add_flag("--verbose", verbose, "Log epochs to stderr");

    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint with per-image/per-patient metrics");
    c_eval->add_option("--config", config_path, "Run config JSON")->required();
    c_eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    c_eval->add_option("--split", side, "Split side: test (default) or train");
    c_eval->add_option("--task", task_flag, "Expected task (errors on head mismatch)");
    c_eval->add_option("--templates", templates_dir, "Imputation template store (default: beside checkpoint)");

    auto* c_cmp = app.add_subcommand("compare", "DeLong paired AUC comparison of two checkpoints");
    c_cmp->add_option("--config", config_path, "Run config JSON")->required();
    c_cmp->add_option("--checkpoint", checkpoint, "Checkpoint A")->required();
    c_cmp->add_option("--checkpoint-b", checkpoint_b, "Checkpoint B")->required();
    c_cmp->add_option("--templates", templates_dir, "Imputation template store");

    auto* c_exp = app.add_subcommand("explain", "Occlusion patches and attribution maps for one patient");
    c_exp->add_option("--config", config_path, "Run config JSON")->required();
    c_exp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    c_exp->add_option("--patient", patient, "Patient id")->required();
    c_exp->add_option("--view", view, "Restrict to one view index");
    c_exp->add_option("--templates", templates_dir, "Imputation template store");

    auto* c_emb = app.add_subcommand("embed", "Export per-patient mean embeddings");
    c_emb->add_option("--config", config_path, "Run config JSON")->required();
    c_emb->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    c_emb->add_option("--split", side, "Split side: test (default) or train");
    c_emb->add_option("--templates", templates_dir, "Imputation template store");

    auto* c_tsne = app.add_subcommand("tsne", "Project exported embeddings to 2D");
    c_tsne->add_option("--config", config_path, "Run config JSON")->required();
    c_tsne->add_option("--embeddings", embeddings_path, "Embeddings CSV (default: run_dir/embeddings.csv)");

    std::vector<std::string> argv_storage = args;
    std::vector<const char*> argv{"cadrads"};
    for (const auto& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        json err{{"code", 1}, {"stage", "cli"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }

    try {
        if (c_synth->parsed()) return cmd_synth(config_path);
        if (c_pre->parsed()) return cmd_preprocess(manifest_path, out_path, clip_limit, tiles);
        if (c_split->parsed()) return cmd_split(manifest_path, seed, out_path, test_fraction, folds);
        if (c_train->parsed()) return cmd_train(config_path, grid, verbose);
        if (c_eval->parsed()) return cmd_eval(config_path, checkpoint, side, task_flag, templates_dir);
        if (c_cmp->parsed()) return cmd_compare(config_path, checkpoint, checkpoint_b, templates_dir);
        if (c_exp->parsed()) return cmd_explain(config_path, checkpoint, patient, view, templates_dir);
        if (c_emb->parsed()) return cmd_embed(config_path, checkpoint, side, templates_dir);
        if (c_tsne->parsed()) return cmd_tsne(config_path, embeddings_path);
        throw usage_error("cli", "no subcommand given");
    } catch (const Error& e) {
        json err{{"code", static_cast<int>(e.code())}, {"stage", e.stage()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        json err{{"code", 2}, {"stage", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    }
}

}  // namespace cadrads::cli
