// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "cadrads/explain.hpp"
#include "cadrads/imaging.hpp"
#include "cadrads/metrics.hpp"
#include "cadrads/model.hpp"
#include "cadrads/rng.hpp"
#include "cadrads/training.hpp"

using namespace cadrads;

namespace {

GrayImage random_image(int size, std::uint64_t seed) {
    GrayImage img(size, size);
    Rng rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
    return img;
}

void bm_clahe(benchmark::State& state) {
    auto img = random_image(static_cast<int>(state.range(0)), 1);
    imaging::ClaheParams params;
    for (auto _ : state) {
        benchmark::DoNotOptimize(imaging::clahe(img, params));
    }
}
BENCHMARK(bm_clahe)->Arg(160)->Arg(512);

void bm_preprocess(benchmark::State& state) {
    GrayImage img(160, 160, 0);
    Rng rng(2);
    for (int r = 30; r < 130; ++r) {
        for (int c = 60; c < 100; ++c) img.at(r, c) = static_cast<std::uint8_t>(150 + rng.index(80));
    }
    imaging::ClaheParams params;
    for (auto _ : state) {
        benchmark::DoNotOptimize(imaging::preprocess(img, params));
    }
}
BENCHMARK(bm_preprocess);

void bm_nano_forward(benchmark::State& state) {
    auto cfg = nn::nano_config(2);
    nn::MaxVit<float> model(cfg);
    nn::init_params(model.params(), 3);
    nn::Tensor<float> x({static_cast<int>(state.range(0)), 3, 56, 56});
    Rng rng(4);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(x, nn::Phase::Eval, nullptr));
    }
}
BENCHMARK(bm_nano_forward)->Arg(1)->Arg(16);

void bm_nano_train_step(benchmark::State& state) {
    auto cfg = nn::nano_config(2);
    nn::MaxVit<float> model(cfg);
    nn::init_params(model.params(), 5);
    train::AdamW<float> opt(model.params());
    nn::Tensor<float> x({16, 3, 56, 56});
    Rng rng(6);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    std::vector<int> targets(16);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i % 2);
    for (auto _ : state) {
        auto fr = model.forward(x, nn::Phase::Train, nullptr);
        auto loss = train::ce_loss(fr.logits, targets, {}, 0.1);
        nn::zero_grads(model.params());
        model.backward(loss.grad_logits);
        opt.step(1e-3, 0.01);
    }
}
BENCHMARK(bm_nano_train_step);

void bm_roc_auc(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(7);
    for (int i = 0; i < n; ++i) {
        scores.push_back(rng.uniform());
        labels.push_back(i % 2);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::roc_auc(scores, labels));
    }
}
BENCHMARK(bm_roc_auc)->Arg(374)->Arg(5000);

void bm_delong(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::vector<double> a, b;
    std::vector<int> labels;
    Rng rng(8);
    for (int i = 0; i < n; ++i) {
        a.push_back(rng.uniform());
        b.push_back(rng.uniform());
        labels.push_back(i % 2);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::delong_test(a, b, labels));
    }
}
BENCHMARK(bm_delong)->Arg(200)->Arg(2000);

void bm_tsne(benchmark::State& state) {
    const int n = 51, dim = 32;
    std::vector<double> data(static_cast<std::size_t>(n) * dim);
    Rng rng(9);
    for (auto& v : data) v = rng.uniform();
    explain::TsneOptions opts;
    opts.iters = 250;
    for (auto _ : state) {
        benchmark::DoNotOptimize(explain::tsne(data, n, dim, opts));
    }
}
BENCHMARK(bm_tsne);

}  // namespace

BENCHMARK_MAIN();
