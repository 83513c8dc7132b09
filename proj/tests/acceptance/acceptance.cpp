// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each criterion prints exactly one PASS/FAIL line;
// the process exits non-zero if any requested criterion fails.
// Usage: acceptance [criterion numbers...]; no arguments runs all nine.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadrads/checkpoint.hpp"
#include "cadrads/cli.hpp"
#include "cadrads/explain.hpp"
#include "cadrads/imaging.hpp"
#include "cadrads/manifest.hpp"
#include "cadrads/metrics.hpp"
#include "cadrads/model.hpp"
#include "cadrads/rng.hpp"
#include "cadrads/samples.hpp"
#include "cadrads/split.hpp"
#include "cadrads/synth.hpp"
#include "cadrads/training.hpp"
#include "test_oracles.hpp"

namespace fs = std::filesystem;
using namespace cadrads;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing:" + p.string() + ">";
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int quiet_cli(const std::vector<std::string>& args) {
    std::stringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    const int rc = cli::run(args);
    std::cout.rdbuf(old);
    return rc;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

template <typename Fwd, typename Bwd>
double check_module(nn::ParamList<double>& params, nn::Tensor<double>& x, Fwd&& fwd, Bwd&& bwd,
                    std::size_t max_coords, std::uint64_t seed) {
    Rng rng(seed);
    oracle::fill_uniform(x, rng);
    nn::Tensor<double> r(fwd().shape);
    oracle::fill_uniform(r, rng);

    auto scalar = [&]() {
        auto y = fwd();
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += r.v[i] * y.v[i];
        return s;
    };
    for (auto& p : params) {
        if (p.grad) p.grad->zero();
    }
    fwd();
    nn::Tensor<double> gx = bwd(r);

    std::vector<double*> coords;
    std::vector<double> analytic;
    for (auto& p : params) {
        if (!p.trainable) continue;
        for (std::size_t i : oracle::sample_coords(p.value->numel(), max_coords, seed ^ 0xabc)) {
            coords.push_back(&p.value->v[i]);
            analytic.push_back(p.grad->v[i]);
        }
    }
    for (std::size_t i : oracle::sample_coords(x.numel(), max_coords, seed ^ 0xdef)) {
        coords.push_back(&x.v[i]);
        analytic.push_back(gx.v[i]);
    }
    return oracle::fd_check(coords, analytic, scalar, 1e-4);
}

void randomize(nn::ParamList<double>& params, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params) {
        if (!p.trainable) continue;
        for (auto& v : p.value->v) v = rng.uniform(-0.4, 0.4);
        if (p.name.find("gamma") != std::string::npos) {
            for (auto& v : p.value->v) v += 1.0;
        }
    }
}

Outcome criterion1() {
    Outcome out;
    const double tol = 1e-4;

    {  // dense conv
        nn::Conv2d<double> conv(3, 4, 3, 1, 1, 1, true);
        nn::ParamList<double> params;
        conv.collect("c", params);
        randomize(params, 1);
        nn::Tensor<double> x({2, 3, 6, 6});
        const double err = check_module(params, x,
                                        [&] { return conv.forward(x); },
                                        [&](const nn::Tensor<double>& r) { return conv.backward(r); }, 4000, 11);
        out.require(err < tol, "conv gradient error " + std::to_string(err));
    }
    {  // depthwise conv, strided
        nn::Conv2d<double> conv(4, 4, 3, 2, 1, 4, false);
        nn::ParamList<double> params;
        conv.collect("c", params);
        randomize(params, 2);
        nn::Tensor<double> x({2, 4, 6, 6});
        const double err = check_module(params, x,
                                        [&] { return conv.forward(x); },
                                        [&](const nn::Tensor<double>& r) { return conv.backward(r); }, 4000, 12);
        out.require(err < tol, "depthwise conv gradient error " + std::to_string(err));
    }
    {  // batch normalization (train statistics)
        nn::BatchNorm2d<double> bn(4);
        nn::ParamList<double> params;
        bn.collect("bn", params);
        randomize(params, 3);
        nn::Tensor<double> x({3, 4, 4, 4});
        const double err = check_module(params, x,
                                        [&] { return bn.forward(x, nn::Phase::Train); },
                                        [&](const nn::Tensor<double>& r) { return bn.backward(r); }, 4000, 13);
        out.require(err < tol, "batchnorm gradient error " + std::to_string(err));
    }
    {  // layer normalization
        nn::LayerNorm<double> ln(6);
        nn::ParamList<double> params;
        ln.collect("ln", params);
        randomize(params, 4);
        nn::Tensor<double> x({2, 4, 6});
        const double err = check_module(params, x,
                                        [&] { return ln.forward(x); },
                                        [&](const nn::Tensor<double>& r) { return ln.backward(r); }, 4000, 14);
        out.require(err < tol, "layernorm gradient error " + std::to_string(err));
    }
    {  // squeeze-excite
        nn::SqueezeExcite<double> se(5, 2);
        nn::ParamList<double> params;
        se.collect("se", params);
        randomize(params, 5);
        nn::Tensor<double> x({2, 5, 3, 3});
        const double err = check_module(params, x,
                                        [&] { return se.forward(x); },
                                        [&](const nn::Tensor<double>& r) { return se.backward(r); }, 4000, 15);
        out.require(err < tol, "squeeze-excite gradient error " + std::to_string(err));
    }
    {  // block attention over windows (isolated sub-layer with partition)
        nn::AttentionBlock<double> attn(4, 2, 2, 2);
        nn::ParamList<double> params;
        attn.collect("a", params);
        randomize(params, 6);
        nn::Tensor<double> x({1, 4, 4, 4});
        const double err = check_module(
            params, x,
            [&] { return nn::window_reverse(attn.forward(nn::window_partition(x, 2)), 2, 1, 4, 4, 4); },
            [&](const nn::Tensor<double>& r) {
                return nn::window_reverse(attn.backward(nn::window_partition(r, 2)), 2, 1, 4, 4, 4);
            },
            1200, 16);
        out.require(err < tol, "block attention gradient error " + std::to_string(err));
    }
    {  // grid attention over sub-lattices
        nn::AttentionBlock<double> attn(4, 2, 2, 2);
        nn::ParamList<double> params;
        attn.collect("a", params);
        randomize(params, 7);
        nn::Tensor<double> x({1, 4, 4, 4});
        const double err = check_module(
            params, x,
            [&] { return nn::grid_reverse(attn.forward(nn::grid_partition(x, 2)), 2, 1, 4, 4, 4); },
            [&](const nn::Tensor<double>& r) {
                return nn::grid_reverse(attn.backward(nn::grid_partition(r, 2)), 2, 1, 4, 4, 4);
            },
            1200, 17);
        out.require(err < tol, "grid attention gradient error " + std::to_string(err));
    }
    {  // MLP head (dropout disabled in eval; linear layer)
        nn::Linear<double> head(8, 3);
        nn::ParamList<double> params;
        head.collect("h", params);
        randomize(params, 8);
        nn::Tensor<double> x({4, 8});
        const double err = check_module(params, x,
                                        [&] { return head.forward(x); },
                                        [&](const nn::Tensor<double>& r) { return head.backward(r); }, 4000, 18);
        out.require(err < tol, "head gradient error " + std::to_string(err));
    }
    {  // composed nano model end to end (eval mode keeps dropout out)
        auto cfg = nn::nano_config(2);
        nn::MaxVit<double> model(cfg);
        randomize(model.params(), 9);
        // scale weights down: the random +-0.4 init is far rougher than a
        // real initialization and makes attention logits steep
        for (auto& p : model.params()) {
            if (!p.trainable || p.name.find("gamma") != std::string::npos) continue;
            for (auto& v : p.value->v) v *= 0.25;
        }
        nn::Tensor<double> x({1, 3, 56, 56});
        nn::ParamList<double>& params = model.params();
        const double err = check_module(
            params, x,
            [&] {
                auto fr = model.forward(x, nn::Phase::Eval, nullptr);
                return fr.logits;
            },
            [&](const nn::Tensor<double>& r) { return model.backward(r); }, 3, 19);
        out.require(err < tol, "composed nano gradient error " + std::to_string(err));
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2. Attention structure
// ---------------------------------------------------------------------------

Outcome criterion2() {
    Outcome out;
    Rng rng(77);
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int span = 2 + static_cast<int>(rng.index(3));       // 2..4
        const int head_dim = 2 * (1 + static_cast<int>(rng.index(2)));  // 2 or 4
        const int C = head_dim * (1 + static_cast<int>(rng.index(2)));
        const int tiles = 2 + static_cast<int>(rng.index(2));
        const int H = span * tiles, W = span * tiles;

        nn::AttentionBlock<float> wattn(C, head_dim, span, 2);
        nn::ParamList<float> wp;
        wattn.collect("w", wp);
        nn::init_params(wp, 10000 + static_cast<std::uint64_t>(trial));

        nn::Tensor<float> x({1, C, H, W});
        oracle::fill_uniform(x, rng);

        // block attention: perturb outside window (0,0)
        auto y1 = nn::window_reverse(wattn.forward(nn::window_partition(x, span)), span, 1, C, H, W);
        nn::Tensor<float> x2 = x;
        x2.at4(0, static_cast<int>(rng.index(static_cast<std::uint64_t>(C))), H - 1, W - 1) += 0.5f;
        auto y2 = nn::window_reverse(wattn.forward(nn::window_partition(x2, span)), span, 1, C, H, W);
        bool same = true;
        for (int c = 0; c < C && same; ++c) {
            for (int r = 0; r < span && same; ++r) {
                for (int col = 0; col < span && same; ++col) {
                    same = y1.at4(0, c, r, col) == y2.at4(0, c, r, col);
                }
            }
        }
        out.require(same, "block attention leaked across windows");
        ++checked;

        // grid attention: perturb off-lattice pixel (1,1); group (0,0)
        nn::AttentionBlock<float> gattn(C, head_dim, span, 2);
        nn::ParamList<float> gp;
        gattn.collect("g", gp);
        nn::init_params(gp, 20000 + static_cast<std::uint64_t>(trial));
        auto z1 = nn::grid_reverse(gattn.forward(nn::grid_partition(x, span)), span, 1, C, H, W);
        nn::Tensor<float> x3 = x;
        x3.at4(0, 0, 1, 1) += 0.5f;
        auto z2 = nn::grid_reverse(gattn.forward(nn::grid_partition(x3, span)), span, 1, C, H, W);
        const int ay = H / span, ax = W / span;
        bool same2 = true;
        for (int c = 0; c < C && same2; ++c) {
            for (int i = 0; i < span && same2; ++i) {
                for (int j = 0; j < span && same2; ++j) {
                    same2 = z1.at4(0, c, i * ay, j * ax) == z2.at4(0, c, i * ay, j * ax);
                }
            }
        }
        out.require(same2, "grid attention leaked across sub-lattices");
        ++checked;
    }
    out.require(checked == 100, "expected 100 configurations");
    return out;
}

// ---------------------------------------------------------------------------
// 3. Architecture fidelity
// ---------------------------------------------------------------------------

Outcome criterion3() {
    Outcome out;
    auto tiny = nn::tiny_config(2);
    nn::MaxVit<float> tiny_model(tiny);
    const double n = static_cast<double>(nn::param_count(tiny_model.params()));
    out.require(n >= 0.9 * 28.45e6 && n <= 1.1 * 28.45e6,
                "tiny parameter count " + std::to_string(n) + " outside 28.45M +-10%");

    auto nano = nn::nano_config(2);
    nn::MaxVit<float> nano_model(nano);
    const auto got = nn::param_count(nano_model.params());
    const auto want = oracle::maxvit_param_count_oracle(nano);
    out.require(got == want, "nano count " + std::to_string(got) + " != oracle " + std::to_string(want));

    auto nano3 = nn::nano_config(3);
    nn::MaxVit<float> nano3_model(nano3);
    out.require(nn::param_count(nano3_model.params()) == oracle::maxvit_param_count_oracle(nano3),
                "nano (3-class) count mismatch");
    return out;
}

// ---------------------------------------------------------------------------
// 4. Metric oracles
// ---------------------------------------------------------------------------

Outcome criterion4() {
    Outcome out;
    Rng rng(404);

    // AUC == trapezoid on 100 random instances
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        bool pos = false, neg = false;
        const int n = 10 + static_cast<int>(rng.index(80));
        for (int i = 0; i < n; ++i) {
            scores.push_back(rng.index(15) / 15.0);
            const int l = rng.bernoulli(0.5) ? 1 : 0;
            labels.push_back(l);
            (l ? pos : neg) = true;
        }
        if (!pos || !neg) {
            labels[0] = 1;
            labels[1] = 0;
        }
        const double a = eval::roc_auc(scores, labels);
        const double t = eval::trapezoid_area(eval::roc_curve(scores, labels));
        out.require(std::abs(a - t) < 1e-10, "AUC vs trapezoid diff " + std::to_string(std::abs(a - t)));
    }

    // DeLong null calibration: 1000 trials, n=200
    int rejections = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Rng trng(Rng::sub_seed(5050, "delong-null", static_cast<std::uint64_t>(trial)));
        std::vector<double> sa, sb;
        std::vector<int> labels;
        for (int i = 0; i < 200; ++i) {
            sa.push_back(trng.uniform());
            sb.push_back(trng.uniform());
            labels.push_back(i < 100 ? 1 : 0);
        }
        auto res = eval::delong_test(sa, sb, labels);
        if (res.p < 0.05) ++rejections;
    }
    const double rate = rejections / 1000.0;
    out.require(rate >= 0.03 && rate <= 0.07,
                "DeLong null rejection rate " + std::to_string(rate) + " outside [0.03, 0.07]");

    // bootstrap CI vs a one-million-resample oracle, accuracy on 20 preds
    {
        Rng brng(808);
        std::vector<int> correct(20);
        for (auto& c : correct) c = brng.bernoulli(0.8) ? 1 : 0;

        eval::PredictionSet ps;
        ps.task = data::Task::Binary;
        for (int i = 0; i < 20; ++i) {
            eval::PredictionRow row;
            row.patient_id = "p" + std::to_string(i);
            // predicted class 1 always; correct iff true label is 1
            row.probs = {0.1, 0.9};
            row.true_label = correct[static_cast<std::size_t>(i)];
            ps.rows.push_back(row);
        }
        auto acc_metric = [](const eval::PredictionSet& p, const std::vector<std::size_t>& idx) {
            double ok = 0.0;
            for (auto i : idx) ok += p.rows[i].true_label == 1 ? 1.0 : 0.0;
            return ok / static_cast<double>(idx.size());
        };
        eval::BootstrapOptions bo;
        bo.resamples = 2000;
        bo.seed = 99;
        auto ci = eval::bootstrap_ci(ps, acc_metric, bo);

        // oracle: one million resamples, direct percentile
        std::vector<double> vals;
        vals.reserve(1000000);
        Rng orng(31337);
        for (int r = 0; r < 1000000; ++r) {
            int ok = 0;
            for (int i = 0; i < 20; ++i) ok += correct[static_cast<std::size_t>(orng.index(20))];
            vals.push_back(ok / 20.0);
        }
        std::sort(vals.begin(), vals.end());
        auto q = [&](double p) { return vals[static_cast<std::size_t>(p * (vals.size() - 1))]; };
        out.require(std::abs(ci.lo - q(0.025)) <= 0.02,
                    "bootstrap lo " + std::to_string(ci.lo) + " vs oracle " + std::to_string(q(0.025)));
        out.require(std::abs(ci.hi - q(0.975)) <= 0.02,
                    "bootstrap hi " + std::to_string(ci.hi) + " vs oracle " + std::to_string(q(0.975)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// 5. Pipeline fidelity on paper-shaped data
// ---------------------------------------------------------------------------

Outcome criterion5() {
    Outcome out;
    // 253 patients; strata chosen so per-stratum 20% rounding sums to 51
    const std::vector<int> strata{48, 45, 40, 40, 40, 40};
    data::Manifest m;
    int id = 0;
    std::vector<std::pair<std::string, int>> diseased;  // (id, cadrads)
    for (int c = 0; c < 6; ++c) {
        for (int i = 0; i < strata[static_cast<std::size_t>(c)]; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%04d", id++);
            m.patients.push_back({buf, c});
            if (c > 0) diseased.emplace_back(buf, c);
        }
    }
    // healthy: full 3x8 grid -> 8 samples each (48 * 8 = 384)
    for (const auto& p : m.patients) {
        if (p.cadrads != 0) continue;
        for (int v = 0; v < 3; ++v) {
            for (int view = 0; view < 8; ++view) {
                data::VesselImage im;
                im.patient_id = p.patient_id;
                im.vessel = static_cast<data::Vessel>(v);
                im.view = view;
                im.path = data::image_key(im) + ".png";
                m.images.push_back(im);
            }
        }
    }
    // diseased: 151 patients with 7 views, 54 with 8 -> 1057 + 432 samples
    out.require(diseased.size() == 205, "expected 205 diseased patients");
    for (std::size_t i = 0; i < diseased.size(); ++i) {
        const int views = i < 151 ? 7 : 8;
        const int vessels = 1 + static_cast<int>(i % 2);  // 1 or 2 diseased vessels
        for (int v = 0; v < vessels; ++v) {
            for (int view = 0; view < views; ++view) {
                data::VesselImage im;
                im.patient_id = diseased[i].first;
                im.vessel = static_cast<data::Vessel>(v);
                im.view = view;
                im.path = data::image_key(im) + ".png";
                m.images.push_back(im);
            }
        }
    }
    m.validate();

    auto split = data::stratified_patient_split(m, 0.2, 10, 2024);
    out.require(split.test.size() == 51,
                "test split size " + std::to_string(split.test.size()) + " != 51");

    data::ImageProvider provider = [](const data::VesselImage&) { return GrayImage(12, 12, 120); };
    auto templates = data::compute_imputation_templates(m, split, provider);
    out.require(templates.complete(), "incomplete imputation templates");

    auto train_samples = data::assemble_samples(m, templates, split, data::Side::Train, provider, 16);
    auto test_samples = data::assemble_samples(m, templates, split, data::Side::Test, provider, 16);
    const std::size_t total = train_samples.size() + test_samples.size();
    out.require(total == 1873, "assembled " + std::to_string(total) + " samples, expected 1873");
    return out;
}

// ---------------------------------------------------------------------------
// 6. End-to-end synthetic benchmark
// ---------------------------------------------------------------------------

struct BenchmarkResult {
    double auc_image = 0.0;
    double auc_patient = 0.0;
    double minutes = 0.0;
};

BenchmarkResult run_benchmark(std::uint64_t seed, const fs::path& root) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string data = (root / "data").string();
    const std::string run = (root / "run").string();

    json cfg;
    cfg["data_dir"] = data;
    cfg["run_dir"] = run;
    cfg["task"] = "binary";
    cfg["model"] = "nano";
    cfg["seed"] = seed;
    cfg["hyperparams"] = {{"epochs", 25}, {"lr", 1e-3},   {"lr_decay_epoch", 20},
                          {"lr_after_decay", 1e-4},       {"dropout", 0.1},
                          {"weight_decay", 0.01},         {"label_smoothing", 0.1},
                          {"batch_size", 16}};
    cfg["eval"] = {{"bootstrap_resamples", 500}};
    cfg["synth"] = {{"n_patients", 120},
                    {"cadrads_distribution", {0.3, 0.05, 0.15, 0.2, 0.2, 0.1}},
                    {"image_size", 128},
                    {"vessel_width", 16},
                    {"noise_level", 30},
                    {"views_per_vessel", 8},
                    {"seed", seed}};
    const std::string cfg_path = (root / "config.json").string();
    {
        std::ofstream f(cfg_path);
        f << cfg.dump(2);
    }

    if (quiet_cli({"synth", "--config", cfg_path}) != 0) throw std::runtime_error("synth failed");
    if (quiet_cli({"preprocess", "--manifest", data + "/manifest.json", "--out", data + "/preprocessed"}) != 0) {
        throw std::runtime_error("preprocess failed");
    }
    if (quiet_cli({"split", "--manifest", data + "/manifest.json", "--seed", std::to_string(seed)}) != 0) {
        throw std::runtime_error("split failed");
    }
    if (quiet_cli({"train", "--config", cfg_path}) != 0) throw std::runtime_error("train failed");
    if (quiet_cli({"eval", "--config", cfg_path, "--checkpoint", run + "/best.ckpt", "--split", "test"}) != 0) {
        throw std::runtime_error("eval failed");
    }

    BenchmarkResult res;
    res.minutes = seconds_since(t0) / 60.0;
    const json img = json::parse(read_file(fs::path(run) / "eval" / "metrics_per_image.json"));
    const json pat = json::parse(read_file(fs::path(run) / "eval" / "metrics_per_patient.json"));
    // binary task: class 1 one-vs-rest AUC
    for (const auto& c : img.at("per_class")) {
        if (c.at("class") == 1) res.auc_image = c.at("auc").at("point").get<double>();
    }
    for (const auto& c : pat.at("per_class")) {
        if (c.at("class") == 1) res.auc_patient = c.at("auc").at("point").get<double>();
    }
    return res;
}

Outcome criterion6() {
    Outcome out;
    const fs::path base = fs::temp_directory_path() / "cadrads_accept6";

    auto first = run_benchmark(6001, base / "seed_a");
    std::printf("    seed 6001: per-image AUC %.4f, per-patient AUC %.4f, %.1f min\n", first.auc_image,
                first.auc_patient, first.minutes);
    out.require(first.auc_image >= 0.85,
                "per-image AUC " + std::to_string(first.auc_image) + " below 0.85");
    out.require(first.auc_patient >= first.auc_image - 0.05,
                "per-patient AUC " + std::to_string(first.auc_patient) + " more than 0.05 below per-image");
    out.require(first.minutes < 30.0, "benchmark took " + std::to_string(first.minutes) + " minutes");

    for (std::uint64_t seed : {6002ull, 6003ull}) {
        auto r = run_benchmark(seed, base / ("seed_" + std::to_string(seed)));
        std::printf("    seed %llu: per-image AUC %.4f, per-patient AUC %.4f, %.1f min\n",
                    static_cast<unsigned long long>(seed), r.auc_image, r.auc_patient, r.minutes);
        out.require(r.auc_image >= 0.80,
                    "seed " + std::to_string(seed) + " per-image AUC " + std::to_string(r.auc_image) +
                        " below 0.80");
    }
    fs::remove_all(base);
    return out;
}

// ---------------------------------------------------------------------------
// 7. Explainability axioms
// ---------------------------------------------------------------------------

Outcome criterion7() {
    Outcome out;
    const fs::path root = fs::temp_directory_path() / "cadrads_accept7";
    fs::remove_all(root);
    fs::create_directories(root);

    // linear-model attribution is exact
    {
        const int n = 3 * 8 * 8;
        Rng rng(71);
        std::vector<float> w(static_cast<std::size_t>(n)), x(static_cast<std::size_t>(n));
        for (auto& v : w) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (auto& v : x) v = static_cast<float>(rng.uniform());
        std::vector<float> bg(static_cast<std::size_t>(n));
        for (auto& v : bg) v = static_cast<float>(rng.uniform());

        class LinearScorer : public explain::Scorer {
        public:
            explicit LinearScorer(std::vector<float> w) : w_(std::move(w)) {}
            int input_numel() const override { return static_cast<int>(w_.size()); }
            double value(const std::vector<float>& x) override {
                double s = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(w_[i]) * x[i];
                return s;
            }
            double value_and_grad(const std::vector<float>& x, std::vector<float>& g) override {
                g = w_;
                return value(x);
            }

        private:
            std::vector<float> w_;
        } scorer(w);

        explain::ExpectedGradientsOptions opts;
        opts.m_steps = 64;
        opts.seed = 3;
        auto map = explain::expected_gradients(scorer, x, 8, {bg}, 0, opts);
        double worst = 0.0;
        for (int i = 0; i < n; ++i) {
            const double want = (static_cast<double>(x[static_cast<std::size_t>(i)]) -
                                 bg[static_cast<std::size_t>(i)]) *
                                w[static_cast<std::size_t>(i)];
            worst = std::max(worst, std::abs(map.values[static_cast<std::size_t>(i)] - want));
        }
        out.require(worst < 1e-10, "linear attribution error " + std::to_string(worst));
        out.require(map.convergence_gap < 1e-10, "linear convergence gap " + std::to_string(map.convergence_gap));
    }

    // train a small nano run to get a non-degenerate model
    synth::SynthConfig scfg;
    scfg.n_patients = 40;
    scfg.cadrads_distribution = {0.4, 0.0, 0.1, 0.3, 0.1, 0.1};
    scfg.image_size = 96;
    scfg.vessel_width = 14;
    scfg.seed = 7007;
    auto ds = synth::generate_dataset(scfg, (root / "data").string());

    imaging::ClaheParams clahe_params;
    const fs::path pre = root / "pre";
    fs::create_directories(pre);
    const fs::path raw_base = root / "data";
    for (const auto& im : ds.manifest.images) {
        GrayImage raw = read_gray((raw_base / im.path).string());
        write_gray((pre / (data::image_key(im) + ".png")).string(), imaging::preprocess(raw, clahe_params));
    }
    auto split = data::stratified_patient_split(ds.manifest, 0.2, 5, 7007);
    auto provider = data::directory_provider(pre.string());
    auto templates = data::compute_imputation_templates(ds.manifest, split, provider);
    auto train_samples = data::assemble_samples(ds.manifest, templates, split, data::Side::Train, provider, 56);
    auto test_samples = data::assemble_samples(ds.manifest, templates, split, data::Side::Test, provider, 56);

    train::FitOptions fo;
    fo.task = data::Task::Binary;
    fo.hp.epochs = 6;
    fo.hp.lr = 1e-3;
    fo.hp.dropout = 0.1;
    fo.hp.weight_decay = 0.01;
    fo.hp.batch_size = 16;
    fo.seed = 7007;
    auto fit_res = train::fit(nn::nano_config(2), fo, train_samples, {});
    nn::Network<float>& net = *fit_res.best_network;

    // expected-gradients completeness on the trained model, m=256
    {
        const auto& s = test_samples.front();
        std::vector<float> x(s.data.begin(), s.data.end());
        std::vector<float> bg(train_samples.front().data.begin(), train_samples.front().data.end());

        nn::Tensor<float> xt({1, 3, 56, 56});
        std::copy(x.begin(), x.end(), xt.data());
        auto fr = net.forward(xt, nn::Phase::Eval, nullptr);
        int top = 0;
        for (int k = 1; k < 2; ++k) {
            if (fr.logits.at2(0, k) > fr.logits.at2(0, top)) top = k;
        }
        explain::NetworkScorer scorer(net, top);
        explain::ExpectedGradientsOptions opts;
        opts.m_steps = 256;
        opts.seed = 11;
        auto map = explain::expected_gradients(scorer, x, 56, {bg}, top, opts);
        const double span = std::abs(scorer.value(x) - scorer.value(bg));
        out.require(span > 1e-6, "degenerate model: f(x) == f(b)");
        const double rel = map.convergence_gap / span;
        std::printf("    completeness gap %.4f of |f(x)-f(b)| (threshold 0.05)\n", rel);
        out.require(rel < 0.05, "completeness gap " + std::to_string(rel) + " >= 5%");
    }

    // occlusion drops vanish exactly for a channel the model ignores
    {
        auto cfg = nn::nano_config(2);
        auto blind = nn::build_network<float>(cfg);
        nn::init_params(blind->params(), 31);
        for (auto& p : blind->params()) {
            if (p.name == "stem.conv1.w") {
                for (int o = 0; o < p.value->dim(0); ++o) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) p.value->at4(o, 2, ky, kx) = 0.0f;
                    }
                }
            }
        }
        explain::OcclusionOptions opts;
        opts.patch = 16;
        opts.stride = 16;
        auto res = explain::occlusion_patches(*blind, test_samples.front(), opts);
        for (const auto& p : res.per_channel[2]) {
            out.require(p.score_drop == 0.0, "dead-channel occlusion drop is nonzero");
        }
    }

    // t-SNE on exported test embeddings
    {
        auto emb = explain::export_embeddings(net, test_samples, data::Task::Binary);
        explain::TsneOptions topts;
        topts.perplexity = 30.0;  // auto-reduces for small n
        topts.iters = 500;
        topts.seed = 5;
        auto coords = explain::tsne(emb.values, static_cast<int>(emb.patient_ids.size()), emb.dim, topts);
        std::printf("    t-SNE: initial KL %.4f -> final KL %.4f on %zu patients\n", coords.initial_kl,
                    coords.final_kl, emb.patient_ids.size());
        out.require(coords.final_kl < coords.initial_kl, "t-SNE failed to reduce the KL divergence");
    }
    fs::remove_all(root);
    return out;
}

// ---------------------------------------------------------------------------
// 8. Determinism of the full smoke sequence
// ---------------------------------------------------------------------------

Outcome criterion8() {
    Outcome out;
    const fs::path base = fs::temp_directory_path() / "cadrads_accept8";

    auto run_sequence = [&](const fs::path& root) {
        fs::remove_all(root);
        fs::create_directories(root);
        const std::string data = (root / "data").string();
        const std::string run = (root / "run").string();
        json cfg;
        cfg["data_dir"] = data;
        cfg["run_dir"] = run;
        cfg["task"] = "binary";
        cfg["model"] = "nano";
        cfg["seed"] = 88;
        cfg["hyperparams"] = {{"epochs", 5}, {"lr", 1e-3}, {"batch_size", 16}, {"dropout", 0.1}};
        cfg["eval"] = {{"bootstrap_resamples", 300}};
        cfg["explain"] = {{"patch", 16}, {"stride", 8}, {"m_steps", 32}};
        cfg["synth"] = {{"n_patients", 24},
                        {"cadrads_distribution", {0.5, 0.0, 0.0, 0.5, 0.0, 0.0}},
                        {"image_size", 96},
                        {"vessel_width", 14},
                        {"seed", 88}};
        const std::string cfg_path = (root / "config.json").string();
        {
            std::ofstream f(cfg_path);
            f << cfg.dump(2);
        }
        if (quiet_cli({"synth", "--config", cfg_path}) != 0) throw std::runtime_error("synth failed");
        if (quiet_cli({"preprocess", "--manifest", data + "/manifest.json", "--out", data + "/preprocessed"}) != 0) {
            throw std::runtime_error("preprocess failed");
        }
        if (quiet_cli({"split", "--manifest", data + "/manifest.json", "--seed", "88", "--folds", "5"}) != 0) {
            throw std::runtime_error("split failed");
        }
        if (quiet_cli({"train", "--config", cfg_path}) != 0) throw std::runtime_error("train failed");
        if (quiet_cli({"eval", "--config", cfg_path, "--checkpoint", run + "/best.ckpt"}) != 0) {
            throw std::runtime_error("eval failed");
        }
        // pick a deterministic test patient for the explanation artifacts
        auto split = data::load_split(data + "/split.json");
        const std::string patient = *split.test.begin();
        if (quiet_cli({"explain", "--config", cfg_path, "--checkpoint", run + "/best.ckpt", "--patient",
                       patient, "--view", "0"}) != 0) {
            throw std::runtime_error("explain failed");
        }
        if (quiet_cli({"embed", "--config", cfg_path, "--checkpoint", run + "/best.ckpt"}) != 0) {
            throw std::runtime_error("embed failed");
        }
        if (quiet_cli({"tsne", "--config", cfg_path}) != 0) throw std::runtime_error("tsne failed");
        return patient;
    };

    const std::string patient_a = run_sequence(base / "a");
    const std::string patient_b = run_sequence(base / "b");
    out.require(patient_a == patient_b, "split produced different test patients");

    auto compare = [&](const std::string& rel) {
        const std::string a = read_file(base / "a" / "run" / rel);
        const std::string b = read_file(base / "b" / "run" / rel);
        out.require(!a.empty() && a.front() != '<', "missing artifact " + rel);
        out.require(a == b, "artifact differs between runs: " + rel);
    };
    compare("eval/metrics_per_image.json");
    compare("eval/metrics_per_patient.json");
    compare("best.ckpt");
    compare("explain/" + patient_a + "/view0_attribution.bin");
    compare("explain/" + patient_a + "/view0_attribution.json");
    compare("embeddings.csv");
    compare("tsne.csv");
    fs::remove_all(base);
    return out;
}

// ---------------------------------------------------------------------------
// 9. Preprocessing oracles
// ---------------------------------------------------------------------------

Outcome criterion9() {
    Outcome out;
    Rng rng(909);

    // largest component vs exhaustive labeling, 500 random masks
    for (int trial = 0; trial < 500; ++trial) {
        const int h = 2 + static_cast<int>(rng.index(31));
        const int w = 2 + static_cast<int>(rng.index(31));
        BinaryMask m(h, w, false);
        const double density = 0.2 + 0.6 * rng.uniform();
        for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
        const int conn = rng.bernoulli(0.5) ? 8 : 4;
        auto got = imaging::largest_component(m, conn);
        auto want = oracle::largest_component_oracle(m, conn);
        out.require(got.mask == want, "largest component mismatch at trial " + std::to_string(trial));
        if (!out.pass) break;
    }

    // CLAHE equals the direct per-tile oracle at tile centers
    for (int trial = 0; trial < 50; ++trial) {
        GrayImage img(18, 18);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
        imaging::ClaheParams params{1.5 + 2.0 * rng.uniform(), 2, 2};
        auto got = imaging::clahe(img, params);
        auto want = oracle::clahe_tile_oracle(img, params);
        for (int ti : {4, 13}) {
            for (int tj : {4, 13}) {
                out.require(got.at(ti, tj) == want.at(ti, tj),
                            "CLAHE tile-center mismatch at trial " + std::to_string(trial));
            }
        }
        if (!out.pass) break;
    }

    // idempotence on 100 random images each
    int removed = 0, cropped = 0;
    for (int trial = 0; trial < 150 && (removed < 100 || cropped < 100); ++trial) {
        GrayImage img(24, 24, 0);
        const int blobs = 1 + static_cast<int>(rng.index(4));
        for (int b = 0; b < blobs; ++b) {
            const int r0 = static_cast<int>(rng.index(20));
            const int c0 = static_cast<int>(rng.index(20));
            const int rh = 2 + static_cast<int>(rng.index(8));
            const int cw = 2 + static_cast<int>(rng.index(8));
            const auto val = static_cast<std::uint8_t>(120 + rng.index(136));
            for (int r = r0; r < std::min(24, r0 + rh); ++r) {
                for (int c = c0; c < std::min(24, c0 + cw); ++c) img.at(r, c) = val;
            }
        }
        if (removed < 100) {
            try {
                auto once = imaging::remove_artifacts(img);
                auto twice = imaging::remove_artifacts(once);
                out.require(once == twice, "remove_artifacts not idempotent at trial " + std::to_string(trial));
                ++removed;
            } catch (const Error&) {
            }
        }
        if (cropped < 100) {
            try {
                auto once = imaging::autocrop(img, 0);
                auto twice = imaging::autocrop(once.image, 0);
                out.require(once.image == twice.image,
                            "autocrop not idempotent at trial " + std::to_string(trial));
                ++cropped;
            } catch (const Error&) {
            }
        }
        if (!out.pass) break;
    }
    out.require(removed >= 100 && cropped >= 100, "not enough valid random images");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int number;
        const char* label;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> all{
        {1, "gradient correctness vs central finite differences", criterion1},
        {2, "attention locality and grid sparsity over 100 configurations", criterion2},
        {3, "architecture fidelity (tiny 28.45M +-10%, nano == closed form)", criterion3},
        {4, "metric oracles (AUC duality, DeLong calibration, bootstrap)", criterion4},
        {5, "paper-shaped pipeline (253 patients -> 1873 samples, 51 test)", criterion5},
        {6, "end-to-end synthetic benchmark (nano, 120 patients, 3 seeds)", criterion6},
        {7, "explainability axioms (completeness, exactness, occlusion, t-SNE)", criterion7},
        {8, "determinism of the full smoke sequence", criterion8},
        {9, "preprocessing oracles (components, CLAHE, idempotence)", criterion9},
    };

    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

    bool all_pass = true;
    for (const auto& c : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.number) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        std::printf("%s criterion %d: %s (%.1fs)%s%s\n", out.pass ? "PASS" : "FAIL", c.number, c.label,
                    seconds_since(t0), out.pass ? "" : " -- ", out.pass ? "" : out.detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && out.pass;
    }
    return all_pass ? 0 : 1;
}
