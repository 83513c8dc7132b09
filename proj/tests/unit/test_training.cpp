// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cadrads/error.hpp"
#include "cadrads/checkpoint.hpp"
#include "cadrads/training.hpp"
#include "test_oracles.hpp"

using namespace cadrads;
using namespace cadrads::train;

namespace {

// tiny architecture for fast fits in unit tests
nn::ModelConfig micro_config(int num_classes) {
    nn::ModelConfig c;
    c.arch = "maxvit";
    c.num_classes = num_classes;
    c.input_size = 28;
    c.stem_channels = 8;
    c.stage_blocks = {1};
    c.stage_channels = {8};
    c.window_size = 7;
    c.grid_size = 7;
    c.head_dim = 4;
    return c;
}

// brightness-separable samples: class 1 is brighter
std::vector<data::StackedSample> separable_samples(int n, int side, std::uint64_t seed) {
    std::vector<data::StackedSample> out;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        data::StackedSample s;
        s.patient_id = "p" + std::to_string(i);
        s.view = 0;
        s.side = side;
        s.data.assign(static_cast<std::size_t>(3) * side * side, 0.0f);
        const int label = i % 2;
        const float base = label ? 0.75f : 0.25f;
        for (auto& v : s.data) v = base + static_cast<float>(rng.uniform(-0.15, 0.15));
        s.label_binary = label;
        s.label_multi = label;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("smooth_labels formula") {
    auto t = smooth_labels(0, 0.1, 2);
    CHECK(t[0] == doctest::Approx(0.95));
    CHECK(t[1] == doctest::Approx(0.05));

    auto u = smooth_labels(1, 0.0, 4);
    CHECK(u[0] == 0.0);
    CHECK(u[1] == 1.0);

    auto v = smooth_labels(2, 0.2, 3);
    CHECK(v[0] == doctest::Approx(0.0667).epsilon(1e-2));
    CHECK(v[1] == doctest::Approx(0.0667).epsilon(1e-2));
    CHECK(v[2] == doctest::Approx(0.8667).epsilon(1e-3));
}

TEST_CASE("class_weights: balanced, imbalanced, empty") {
    auto w = class_weights({0, 1, 0, 1}, 2);
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(1.0));

    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(0);
    for (int i = 0; i < 30; ++i) labels.push_back(1);
    auto w2 = class_weights(labels, 2);
    CHECK(w2[0] == doctest::Approx(1.5));
    CHECK(w2[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(class_weights({0, 0, 0}, 2), Error);
}

TEST_CASE("loss equals the smoothed-target entropy at the optimum") {
    // softmax(log t) = t, so the cross-entropy reaches the entropy of t
    const double eps = 0.1;
    auto t = smooth_labels(1, eps, 3);
    nn::Tensor<double> logits({1, 3});
    for (int k = 0; k < 3; ++k) logits.at2(0, k) = std::log(t[static_cast<std::size_t>(k)]);
    auto res = ce_loss(logits, {1}, {}, eps);
    double entropy = 0.0;
    for (double p : t) entropy -= p * std::log(p);
    CHECK(res.loss == doctest::Approx(entropy).epsilon(1e-10));
}

TEST_CASE("loss: uniform logits with two classes give ln 2") {
    nn::Tensor<double> logits({3, 2});
    auto res = ce_loss(logits, {0, 1, 0}, {}, 0.0);
    CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(3);
    nn::Tensor<double> logits({5, 3});
    oracle::fill_uniform(logits, rng);
    const std::vector<int> targets{0, 2, 1, 1, 0};
    const std::vector<double> weights{1.3, 0.6, 1.1};
    const double eps = 0.15;

    auto res = ce_loss(logits, targets, weights, eps);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        coords.push_back(&logits.v[i]);
        analytic.push_back(res.grad_logits.v[i]);
    }
    const double worst = oracle::fd_check(coords, analytic, [&] {
        return ce_loss(logits, targets, weights, eps).loss;
    });
    CHECK(worst < 1e-6);
}

TEST_CASE("adamw: zero gradient with zero decay is a fixed point") {
    nn::Tensor<float> w({4});
    nn::Tensor<float> g({4});
    for (int i = 0; i < 4; ++i) w.v[static_cast<std::size_t>(i)] = static_cast<float>(i) - 1.5f;
    nn::ParamList<float> params;
    params.push_back({"w", &w, &g, true, true});
    AdamW<float> opt(params);
    auto before = w.v;
    opt.step(1e-3, 0.0);
    opt.step(1e-3, 0.0);
    CHECK(w.v == before);
}

TEST_CASE("adamw: scalar two-step recurrence matches a hand evaluation") {
    nn::Tensor<double> w({1});
    nn::Tensor<double> g({1});
    w.v[0] = 0.5;
    nn::ParamList<double> params;
    params.push_back({"w", &w, &g, true, true});
    AdamW<double> opt(params);

    const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0, p = 0.5;
    const double grads[2] = {0.3, -0.2};
    for (int t = 1; t <= 2; ++t) {
        g.v[0] = grads[t - 1];
        opt.step(lr, wd);
        m = b1 * m + (1 - b1) * grads[t - 1];
        v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        p = p - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p);
        CHECK(w.v[0] == doctest::Approx(p).epsilon(1e-14));
    }
}

TEST_CASE("adamw: decoupled decay shrinks parameters by (1 - lr*wd) per step") {
    nn::Tensor<double> w({1});
    nn::Tensor<double> g({1});
    w.v[0] = 2.0;
    nn::ParamList<double> params;
    params.push_back({"w", &w, &g, true, true});
    AdamW<double> opt(params);
    opt.step(0.1, 0.5);
    CHECK(w.v[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));

    // decay-excluded parameters stay put under zero gradient
    nn::Tensor<double> nw({1});
    nn::Tensor<double> ng({1});
    nw.v[0] = 2.0;
    nn::ParamList<double> params2;
    params2.push_back({"bn.gamma", &nw, &ng, true, false});
    AdamW<double> opt2(params2);
    opt2.step(0.1, 0.5);
    CHECK(nw.v[0] == 2.0);
}

TEST_CASE("lr_at: single step decay") {
    HyperParams hp;
    hp.lr = 1e-4;
    hp.lr_after_decay = 1e-5;
    hp.lr_decay_epoch = 30;
    CHECK(lr_at(29, hp) == doctest::Approx(1e-4));
    CHECK(lr_at(30, hp) == doctest::Approx(1e-5));
    CHECK(lr_at(50, hp) == doctest::Approx(1e-5));
    hp.lr_decay_epoch = 100;
    hp.epochs = 50;
    CHECK(lr_at(50, hp) == doctest::Approx(1e-4));
}

TEST_CASE("fit: identical seeds produce bit-identical epoch logs") {
    auto samples = separable_samples(24, 28, 5);
    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 3;
    opts.hp.lr = 1e-3;
    opts.hp.dropout = 0.1;
    opts.hp.batch_size = 8;
    opts.seed = 17;
    auto a = fit(micro_config(2), opts, samples, samples);
    auto b = fit(micro_config(2), opts, samples, samples);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
        CHECK(a.epochs[i].val_acc == b.epochs[i].val_acc);
    }
}

TEST_CASE("fit: zero epochs returns the initial checkpoint only") {
    auto samples = separable_samples(8, 28, 6);
    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 0;
    opts.seed = 3;
    auto r = fit(micro_config(2), opts, samples, samples);
    CHECK(r.epochs.empty());
    CHECK(r.best_epoch == 0);
    REQUIRE(r.best_network != nullptr);
}

TEST_CASE("fit: loss decreases when overfitting one tiny batch") {
    auto samples = separable_samples(8, 28, 9);
    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 50;
    opts.hp.batch_size = 8;
    opts.hp.lr = 1e-3;
    opts.hp.dropout = 0.0;
    opts.hp.weight_decay = 0.01;
    opts.hp.label_smoothing = 0.0;
    opts.seed = 13;
    auto r = fit(micro_config(2), opts, samples, {});
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
    CHECK(r.epochs.back().train_acc == doctest::Approx(1.0));
}

TEST_CASE("fit: nano reaches full training accuracy on separable data") {
    auto samples = separable_samples(50, 56, 11);
    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 20;
    opts.hp.batch_size = 16;
    opts.hp.lr = 1e-3;
    opts.hp.dropout = 0.0;
    opts.hp.weight_decay = 0.01;
    opts.hp.label_smoothing = 0.0;
    opts.seed = 23;
    auto r = fit(nn::nano_config(2), opts, samples, {});
    bool reached = false;
    for (const auto& e : r.epochs) {
        if (e.train_acc == 1.0) reached = true;
    }
    CHECK(reached);
}

TEST_CASE("cross_validate: one result per fold, relabeling permutes them") {
    auto samples = separable_samples(12, 28, 31);
    data::SplitAssignment split;
    split.folds = 3;
    for (int i = 0; i < 12; ++i) split.fold_of["p" + std::to_string(i)] = i % 3;

    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 1;
    opts.hp.batch_size = 8;
    opts.seed = 7;
    auto cv = cross_validate(micro_config(2), opts, samples, split);
    CHECK(cv.fold_val_acc.size() == 3);

    // permute fold labels: 0->2, 1->0, 2->1
    data::SplitAssignment relabeled = split;
    for (auto& [id, f] : relabeled.fold_of) f = (f + 2) % 3;
    auto cv2 = cross_validate(micro_config(2), opts, samples, relabeled);
    auto a = cv.fold_val_acc;
    auto b = cv2.fold_val_acc;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(cv.mean_val_acc == doctest::Approx(cv2.mean_val_acc));
}

TEST_CASE("grid space enumerates the full 72-point cartesian product") {
    GridSpace space;
    auto combos = space.enumerate(HyperParams{});
    CHECK(combos.size() == 72);
    // deterministic order: first combo is the first element of every set
    CHECK(combos[0].lr == doctest::Approx(1e-3));
    CHECK(combos[0].dropout == doctest::Approx(0.1));
    CHECK(combos[0].weight_decay == doctest::Approx(0.1));
    CHECK(combos[0].lr_decay_epoch == 20);
    CHECK(combos[0].label_smoothing == doctest::Approx(0.1));
}

TEST_CASE("grid search: singleton space returns its only combination") {
    auto samples = separable_samples(8, 28, 41);
    data::SplitAssignment split;
    split.folds = 2;
    for (int i = 0; i < 8; ++i) split.fold_of["p" + std::to_string(i)] = i % 2;

    GridSpace space;
    space.lr = {5e-4};
    space.dropout = {0.2};
    space.weight_decay = {0.01};
    space.lr_decay_epoch = {30};
    space.label_smoothing = {0.1};

    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 1;
    opts.hp.batch_size = 8;
    opts.seed = 3;
    auto res = grid_search(micro_config(2), space, opts, samples, split);
    CHECK(res.best.lr == doctest::Approx(5e-4));
    CHECK(res.table.size() == 1);
}

TEST_CASE("checkpoint from fit reproduces eval-mode forwards bit-exactly") {
    auto samples = separable_samples(12, 28, 51);
    FitOptions opts;
    opts.task = data::Task::Binary;
    opts.hp.epochs = 2;
    opts.hp.batch_size = 8;
    opts.seed = 29;
    const auto dir = std::filesystem::temp_directory_path() / "cadrads_fit_ckpt";
    std::filesystem::remove_all(dir);
    opts.run_dir = dir.string();
    auto r = fit(micro_config(2), opts, samples, samples);

    auto loaded = nn::load_checkpoint(r.checkpoint_path);
    nn::Tensor<float> x({1, 3, 28, 28});
    Rng rng(1);
    oracle::fill_uniform(x, rng, 0.0, 1.0);
    auto a = r.best_network->forward(x, nn::Phase::Eval, nullptr);
    auto b = loaded.network->forward(x, nn::Phase::Eval, nullptr);
    CHECK(a.logits.v == b.logits.v);

    // epoch log landed on disk with the documented header
    std::ifstream log(dir / "epoch_log.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "epoch,lr,train_loss,train_acc,val_loss,val_acc");
}
