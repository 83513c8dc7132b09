// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>
#include <fstream>

#include "cadrads/checkpoint.hpp"
#include "cadrads/error.hpp"
#include "cadrads/model.hpp"
#include "test_oracles.hpp"

using namespace cadrads;
using namespace cadrads::nn;

namespace {

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("tiny preset parameter count is within 10% of 28.45M") {
    auto cfg = tiny_config(2);
    MaxVit<float> model(cfg);
    const double count = static_cast<double>(param_count(model.params()));
    CHECK(count > 0.9 * 28.45e6);
    CHECK(count < 1.1 * 28.45e6);
    // and the closed-form oracle agrees exactly
    CHECK(param_count(model.params()) == oracle::maxvit_param_count_oracle(cfg));
}

TEST_CASE("nano preset parameter count equals the closed-form oracle") {
    auto cfg = nano_config(2);
    MaxVit<float> model(cfg);
    CHECK(param_count(model.params()) == oracle::maxvit_param_count_oracle(cfg));

    auto cfg3 = nano_config(3);
    MaxVit<float> model3(cfg3);
    CHECK(param_count(model3.params()) == oracle::maxvit_param_count_oracle(cfg3));
}

TEST_CASE("indivisible feature maps are rejected") {
    auto cfg = tiny_config(2);
    cfg.input_size = 50;  // 50 -> 25: stem output cannot halve cleanly
    CHECK_THROWS_AS(cfg.validate(), Error);

    auto cfg2 = nano_config(2);
    cfg2.window_size = 5;  // 14 % 5 != 0
    CHECK_THROWS_AS(cfg2.validate(), Error);

    auto cfg3 = nano_config(2);
    cfg3.head_dim = 32;  // does not divide 16
    CHECK_THROWS_AS(cfg3.validate(), Error);
}

TEST_CASE("baseline cnn stays under one million parameters") {
    auto cfg = baseline_cnn_config(3, 56);
    BaselineCnn<float> model(cfg);
    CHECK(param_count(model.params()) < 1000000);
}

TEST_CASE("forward: eval is deterministic, logits/embedding have contract shapes") {
    auto cfg = nano_config(2);
    MaxVit<float> model(cfg);
    init_params(model.params(), 7);
    Rng rng(3);
    Tensor<float> x({2, 3, 56, 56});
    oracle::fill_uniform(x, rng, 0.0, 1.0);
    auto a = model.forward(x, Phase::Eval, nullptr);
    auto b = model.forward(x, Phase::Eval, nullptr);
    CHECK(a.logits.v == b.logits.v);
    CHECK(a.logits.shape == std::vector<int>{2, 2});
    CHECK(a.embedding.shape == std::vector<int>{2, 32});

    auto cfg3 = nano_config(3);
    MaxVit<float> model3(cfg3);
    init_params(model3.params(), 7);
    auto c = model3.forward(x, Phase::Eval, nullptr);
    CHECK(c.logits.shape == std::vector<int>{2, 3});
}

TEST_CASE("non-finite activations abort with the layer name") {
    auto cfg = nano_config(2);
    MaxVit<float> model(cfg);
    init_params(model.params(), 7);
    Tensor<float> x({1, 3, 56, 56});
    x.v[100] = std::numeric_limits<float>::quiet_NaN();
    try {
        model.forward(x, Phase::Eval, nullptr);
        FAIL("expected NonFiniteActivation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Numeric);
        CHECK(std::string(e.what()).find("NonFiniteActivation") != std::string::npos);
    }
}

TEST_CASE("init is deterministic and parameter registry is stable") {
    auto cfg = nano_config(2);
    MaxVit<float> a(cfg), b(cfg);
    init_params(a.params(), 99);
    init_params(b.params(), 99);
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].name == b.params()[i].name);
        CHECK(a.params()[i].value->v == b.params()[i].value->v);
    }
    // no parameter is shared between head and backbone
    std::set<const void*> seen;
    for (const auto& p : a.params()) CHECK(seen.insert(p.value).second);
}

TEST_CASE("block attention is local: pixels outside a window cannot affect it") {
    // isolated sub-layer: partition -> attention -> reverse
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int P = 2 + static_cast<int>(rng.index(2));      // 2..3
        const int C = 4 * (1 + static_cast<int>(rng.index(2)));  // 4 or 8
        const int tiles = 2;
        const int H = P * tiles, W = P * tiles;
        AttentionBlock<float> attn(C, 2, P, 2);
        ParamList<float> params;
        attn.collect("a", params);
        init_params(params, 1000 + static_cast<std::uint64_t>(trial));

        Tensor<float> x({1, C, H, W});
        oracle::fill_uniform(x, rng);
        auto y1 = window_reverse(attn.forward(window_partition(x, P)), P, 1, C, H, W);

        // perturb a pixel in window (1,1); window (0,0) must be bit-identical
        Tensor<float> x2 = x;
        x2.at4(0, 0, H - 1, W - 1) += 1.25f;
        auto y2 = window_reverse(attn.forward(window_partition(x2, P)), P, 1, C, H, W);
        for (int c = 0; c < C; ++c) {
            for (int r = 0; r < P; ++r) {
                for (int col = 0; col < P; ++col) {
                    CHECK(y1.at4(0, c, r, col) == y2.at4(0, c, r, col));
                }
            }
        }
    }
}

TEST_CASE("grid attention is sparse: only the shared sub-lattice interacts") {
    Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        const int G = 2 + static_cast<int>(rng.index(2));
        const int C = 4;
        const int H = G * 2, W = G * 2;
        AttentionBlock<float> attn(C, 2, G, 2);
        ParamList<float> params;
        attn.collect("a", params);
        init_params(params, 2000 + static_cast<std::uint64_t>(trial));

        Tensor<float> x({1, C, H, W});
        oracle::fill_uniform(x, rng);
        auto y1 = grid_reverse(attn.forward(grid_partition(x, G)), G, 1, C, H, W);

        // pixel (1,1) belongs to group (a=1,b=1); group (0,0) = pixels with
        // even offsets must not change
        Tensor<float> x2 = x;
        x2.at4(0, 0, 1, 1) += 0.75f;
        auto y2 = grid_reverse(attn.forward(grid_partition(x2, G)), G, 1, C, H, W);
        const int ay = H / G, ax = W / G;
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < G; ++i) {
                for (int j = 0; j < G; ++j) {
                    CHECK(y1.at4(0, c, i * ay, j * ax) == y2.at4(0, c, i * ay, j * ax));
                }
            }
        }
    }
}

TEST_CASE("mbconv: zero conv path reduces to the identity at stride 1") {
    MbConv<float> block(4, 4, 1, 4, 0.25);
    ParamList<float> params;
    block.collect("mb", params);  // weights stay at zero by construction
    Rng rng(31);
    Tensor<float> x({2, 4, 6, 6});
    oracle::fill_uniform(x, rng);
    auto y = block.forward(x, Phase::Eval);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.v[i] == x.v[i]);
}

TEST_CASE("mbconv: stride 2 halves the spatial size") {
    MbConv<float> block(4, 8, 2, 4, 0.25);
    ParamList<float> params;
    block.collect("mb", params);
    init_params(params, 3);
    Tensor<float> x({1, 4, 8, 8});
    auto y = block.forward(x, Phase::Eval);
    CHECK(y.shape == std::vector<int>{1, 8, 4, 4});
}

TEST_CASE("mbconv gradients (composite block, train-mode batch norm)") {
    MbConv<double> block(3, 5, 2, 2, 0.25);
    ParamList<double> params;
    block.collect("mb", params);
    Rng rng(77);
    for (auto& p : params) {
        if (!p.trainable) continue;
        for (auto& v : p.value->v) v = rng.uniform(-0.4, 0.4);
        if (p.name.find("gamma") != std::string::npos) {
            for (auto& v : p.value->v) v += 1.0;
        }
    }
    Tensor<double> x({2, 3, 4, 4});
    oracle::fill_uniform(x, rng);
    Tensor<double> r;

    auto scalar = [&]() {
        auto y = block.forward(x, Phase::Train);
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += r.v[i] * y.v[i];
        return s;
    };
    r = Tensor<double>(block.forward(x, Phase::Train).shape);
    oracle::fill_uniform(r, rng);

    for (auto& p : params) {
        if (p.grad) p.grad->zero();
    }
    block.forward(x, Phase::Train);
    auto gx = block.backward(r);

    std::vector<double*> coords;
    std::vector<double> analytic;
    for (auto& p : params) {
        if (!p.trainable) continue;
        for (std::size_t i : oracle::sample_coords(p.value->numel(), 60, 5)) {
            coords.push_back(&p.value->v[i]);
            analytic.push_back(p.grad->v[i]);
        }
    }
    for (std::size_t i : oracle::sample_coords(x.numel(), 60, 6)) {
        coords.push_back(&x.v[i]);
        analytic.push_back(gx.v[i]);
    }
    // composite thresholds match the acceptance gate; the train-mode batch
    // statistics raise the finite-difference truncation floor
    CHECK(oracle::fd_check(coords, analytic, scalar) < 1e-4);
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    auto cfg = nano_config(2);
    MaxVit<float> model(cfg);
    init_params(model.params(), 4);
    Tensor<float> x({1, 3, 56, 56});
    Rng rng(8);
    oracle::fill_uniform(x, rng, 0.0, 1.0);
    model.forward(x, Phase::Train, nullptr);
    zero_grads(model.params());
    Tensor<float> glog({1, 2});
    auto gx = model.backward(glog);
    for (const auto& p : model.params()) {
        if (!p.grad) continue;
        for (float g : p.grad->v) CHECK(g == 0.0f);
    }
    for (float g : gx.v) CHECK(g == 0.0f);
}

TEST_CASE("backward: an input pixel far from the head still receives gradient") {
    auto cfg = nano_config(2);
    MaxVit<float> model(cfg);
    init_params(model.params(), 12);
    Tensor<float> x({1, 3, 56, 56});
    Rng rng(9);
    oracle::fill_uniform(x, rng, 0.0, 1.0);
    model.forward(x, Phase::Train, nullptr);
    zero_grads(model.params());
    Tensor<float> glog({1, 2});
    glog.at2(0, 0) = 1.0f;
    glog.at2(0, 1) = 1.0f;
    auto gx = model.backward(glog);
    float corner = std::abs(gx.at4(0, 0, 0, 0)) + std::abs(gx.at4(0, 2, 55, 55));
    CHECK(corner > 0.0f);
}

TEST_CASE("checkpoint: load-save round trip is byte stable and forward-identical") {
    auto cfg = nano_config(3);
    auto net = build_network<float>(cfg);
    init_params(net->params(), 21);
    const auto dir = std::filesystem::temp_directory_path() / "cadrads_ckpt";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    save_checkpoint(p1, *net, data::Task::Multi);

    auto loaded = load_checkpoint(p1);
    CHECK(loaded.task == data::Task::Multi);
    save_checkpoint(p2, *loaded.network, loaded.task);
    CHECK(slurp(p1) == slurp(p2));

    Rng rng(2);
    Tensor<float> x({1, 3, 56, 56});
    oracle::fill_uniform(x, rng, 0.0, 1.0);
    auto a = net->forward(x, Phase::Eval, nullptr);
    auto b = loaded.network->forward(x, Phase::Eval, nullptr);
    CHECK(a.logits.v == b.logits.v);
}

TEST_CASE("checkpoint rejects corrupt headers") {
    const auto dir = std::filesystem::temp_directory_path() / "cadrads_ckpt";
    std::filesystem::create_directories(dir);
    const std::string p = (dir / "bad.ckpt").string();
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(p), Error);
}
