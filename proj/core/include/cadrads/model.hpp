// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cadrads/layers.hpp"
#include "cadrads/manifest.hpp"

namespace cadrads::nn {

struct ModelConfig {
    std::string arch = "maxvit";  // "maxvit" | "cnn"
    int in_channels = 3;
    int num_classes = 2;
    int input_size = 224;
    int stem_channels = 64;
    std::vector<int> stage_blocks{2, 2, 5, 2};
    std::vector<int> stage_channels{64, 128, 256, 512};
    int window_size = 7;
    int grid_size = 7;
    int mbconv_expansion = 4;
    double se_reduction = 0.25;
    int head_dim = 32;
    int mlp_ratio = 4;
    double dropout_rate = 0.0;

    // Throws DivisibilityError (usage) when windows/grids/heads do not fit.
    void validate() const;
    int embedding_dim() const { return stage_channels.empty() ? stem_channels : stage_channels.back(); }
};

ModelConfig tiny_config(int num_classes);
ModelConfig nano_config(int num_classes);
ModelConfig baseline_cnn_config(int num_classes, int input_size);

template <typename T>
struct ForwardResult {
    Tensor<T> logits;     // (N, K)
    Tensor<T> embedding;  // (N, D) pooled pre-head features
};

template <typename T>
class Network {
public:
    virtual ~Network() = default;
    virtual ForwardResult<T> forward(const Tensor<T>& x, Phase phase, Rng* rng) = 0;
    // Reverse pass for the latest forward; returns the input gradient and
    // accumulates parameter gradients.
    virtual Tensor<T> backward(const Tensor<T>& grad_logits) = 0;
    virtual ParamList<T>& params() = 0;
    virtual const ModelConfig& config() const = 0;
};

// ---------------------------------------------------------------------------
// MBConv: pre-norm inverted residual with depthwise conv and SE gate
// ---------------------------------------------------------------------------

template <typename T>
class MbConv {
public:
    MbConv() = default;
    MbConv(int in_c, int out_c, int stride, int expansion, double se_reduction)
        : in_c_(in_c), out_c_(out_c), stride_(stride),
          pre_bn_(in_c),
          expand_(in_c, expansion * in_c, 1, 1, 0, 1, false),
          bn1_(expansion * in_c),
          dw_(expansion * in_c, expansion * in_c, 3, stride, 1, expansion * in_c, false),
          bn2_(expansion * in_c),
          se_(expansion * in_c, SqueezeExcite<T>::reduced_channels(in_c, se_reduction)),
          project_(expansion * in_c, out_c, 1, 1, 0, 1, true),
          needs_proj_(stride != 1 || in_c != out_c) {
        if (needs_proj_) sc_proj_ = Conv2d<T>(in_c, out_c, 1, 1, 0, 1, true);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        pre_bn_.collect(prefix + ".pre_bn", out);
        expand_.collect(prefix + ".expand", out);
        bn1_.collect(prefix + ".bn1", out);
        dw_.collect(prefix + ".dw", out);
        bn2_.collect(prefix + ".bn2", out);
        se_.collect(prefix + ".se", out);
        project_.collect(prefix + ".project", out);
        if (needs_proj_) sc_proj_.collect(prefix + ".shortcut", out);
    }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) {
        Tensor<T> h = pre_bn_.forward(x, phase);
        h = g1_.forward(bn1_.forward(expand_.forward(h), phase));
        h = g2_.forward(bn2_.forward(dw_.forward(h), phase));
        h = project_.forward(se_.forward(h));

        Tensor<T> sc;
        if (stride_ == 2) {
            sc = sc_proj_.forward(pool_.forward(x));
        } else if (needs_proj_) {
            sc = sc_proj_.forward(x);
        } else {
            sc = x;
        }
        for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += sc.v[i];
        return h;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gpath = se_.backward(project_.backward(gy));
        gpath = dw_.backward(bn2_.backward(g2_.backward(gpath)));
        gpath = expand_.backward(bn1_.backward(g1_.backward(gpath)));
        Tensor<T> gx = pre_bn_.backward(gpath);

        if (stride_ == 2) {
            Tensor<T> gsc = pool_.backward(sc_proj_.backward(gy));
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.v[i] += gsc.v[i];
        } else if (needs_proj_) {
            Tensor<T> gsc = sc_proj_.backward(gy);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.v[i] += gsc.v[i];
        } else {
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.v[i] += gy.v[i];
        }
        return gx;
    }

private:
    int in_c_ = 0, out_c_ = 0, stride_ = 1;
    BatchNorm2d<T> pre_bn_;
    Conv2d<T> expand_;
    BatchNorm2d<T> bn1_;
    Gelu<T> g1_;
    Conv2d<T> dw_;
    BatchNorm2d<T> bn2_;
    Gelu<T> g2_;
    SqueezeExcite<T> se_;
    Conv2d<T> project_;
    AvgPool2x2<T> pool_;
    Conv2d<T> sc_proj_;
    bool needs_proj_ = false;
};

// ---------------------------------------------------------------------------
// One MaxViT block: MBConv, windowed attention, grid attention
// ---------------------------------------------------------------------------

template <typename T>
class MaxVitBlock {
public:
    MaxVitBlock() = default;
    MaxVitBlock(int in_c, int out_c, int stride, const ModelConfig& cfg)
        : P_(cfg.window_size), G_(cfg.grid_size),
          mbconv_(in_c, out_c, stride, cfg.mbconv_expansion, cfg.se_reduction),
          window_attn_(out_c, cfg.head_dim, cfg.window_size, cfg.mlp_ratio),
          grid_attn_(out_c, cfg.head_dim, cfg.grid_size, cfg.mlp_ratio) {}

    void collect(const std::string& prefix, ParamList<T>& out) {
        mbconv_.collect(prefix + ".mbconv", out);
        window_attn_.collect(prefix + ".window_attn", out);
        grid_attn_.collect(prefix + ".grid_attn", out);
    }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) {
        Tensor<T> h = mbconv_.forward(x, phase);
        N_ = h.dim(0);
        C_ = h.dim(1);
        H_ = h.dim(2);
        W_ = h.dim(3);
        h = window_reverse(window_attn_.forward(window_partition(h, P_)), P_, N_, C_, H_, W_);
        h = grid_reverse(grid_attn_.forward(grid_partition(h, G_)), G_, N_, C_, H_, W_);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> g = grid_partition(gy, G_);
        g = grid_attn_.backward(g);
        Tensor<T> gx = grid_reverse(g, G_, N_, C_, H_, W_);
        g = window_partition(gx, P_);
        g = window_attn_.backward(g);
        gx = window_reverse(g, P_, N_, C_, H_, W_);
        return mbconv_.backward(gx);
    }

private:
    int P_ = 7, G_ = 7;
    int N_ = 0, C_ = 0, H_ = 0, W_ = 0;
    MbConv<T> mbconv_;
    AttentionBlock<T> window_attn_;
    AttentionBlock<T> grid_attn_;
};

// ---------------------------------------------------------------------------
// Full classifier
// ---------------------------------------------------------------------------

template <typename T>
class MaxVit : public Network<T> {
public:
    explicit MaxVit(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        stem1_ = Conv2d<T>(cfg.in_channels, cfg.stem_channels, 3, 2, 1, 1, false);
        stem_bn_ = BatchNorm2d<T>(cfg.stem_channels);
        stem2_ = Conv2d<T>(cfg.stem_channels, cfg.stem_channels, 3, 1, 1, 1, true);
        int prev = cfg.stem_channels;
        for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
            std::vector<MaxVitBlock<T>> blocks;
            for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
                const int in_c = b == 0 ? prev : cfg.stage_channels[s];
                const int stride = b == 0 ? 2 : 1;
                blocks.emplace_back(in_c, cfg.stage_channels[s], stride, cfg_);
            }
            stages_.push_back(std::move(blocks));
            prev = cfg.stage_channels[s];
        }
        drop_ = Dropout<T>(cfg.dropout_rate);
        head_ = Linear<T>(cfg.embedding_dim(), cfg.num_classes);

        stem1_.collect("stem.conv1", params_);
        stem_bn_.collect("stem.bn", params_);
        stem2_.collect("stem.conv2", params_);
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            for (std::size_t b = 0; b < stages_[s].size(); ++b) {
                stages_[s][b].collect("stage" + std::to_string(s) + ".block" + std::to_string(b), params_);
            }
        }
        head_.collect("head.fc", params_);
    }

    ForwardResult<T> forward(const Tensor<T>& x, Phase phase, Rng* rng) override {
        if (x.shape.size() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_size ||
            x.dim(3) != cfg_.input_size) {
            throw data_error("forward", "ShapeMismatch: batch must be NxCxSxS matching the config");
        }
        Tensor<T> h = stem2_.forward(stem_act_.forward(stem_bn_.forward(stem1_.forward(x), phase)));
        check_finite(h, "stem");
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            for (std::size_t b = 0; b < stages_[s].size(); ++b) {
                h = stages_[s][b].forward(h, phase);
                check_finite(h, "stage" + std::to_string(s) + ".block" + std::to_string(b));
            }
        }
        ForwardResult<T> out;
        out.embedding = pool_.forward(h);
        Tensor<T> e = drop_.forward(out.embedding, phase, rng);
        out.logits = head_.forward(e);
        check_finite(out.logits, "head");
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) override {
        Tensor<T> g = pool_.backward(drop_.backward(head_.backward(grad_logits)));
        for (std::size_t s = stages_.size(); s-- > 0;) {
            for (std::size_t b = stages_[s].size(); b-- > 0;) {
                g = stages_[s][b].backward(g);
            }
        }
        g = stem1_.backward(stem_bn_.backward(stem_act_.backward(stem2_.backward(g))));
        return g;
    }

    ParamList<T>& params() override { return params_; }
    const ModelConfig& config() const override { return cfg_; }

private:
    ModelConfig cfg_;
    Conv2d<T> stem1_;
    BatchNorm2d<T> stem_bn_;
    Gelu<T> stem_act_;
    Conv2d<T> stem2_;
    std::vector<std::vector<MaxVitBlock<T>>> stages_;
    GlobalAvgPool<T> pool_;
    Dropout<T> drop_;
    Linear<T> head_;
    ParamList<T> params_;
};

// Small convolutional comparator used by the paired-AUC tooling. Shares
// every layer contract with the main model.
template <typename T>
class BaselineCnn : public Network<T> {
public:
    explicit BaselineCnn(const ModelConfig& cfg) : cfg_(cfg) {
        const int c1 = 16, c2 = 32, c3 = 64, c4 = 64;
        conv_ = {Conv2d<T>(cfg.in_channels, c1, 3, 2, 1, 1, false), Conv2d<T>(c1, c2, 3, 2, 1, 1, false),
                 Conv2d<T>(c2, c3, 3, 2, 1, 1, false), Conv2d<T>(c3, c4, 3, 1, 1, 1, false)};
        bn_ = {BatchNorm2d<T>(c1), BatchNorm2d<T>(c2), BatchNorm2d<T>(c3), BatchNorm2d<T>(c4)};
        act_.resize(4);
        drop_ = Dropout<T>(cfg.dropout_rate);
        head_ = Linear<T>(c4, cfg.num_classes);
        for (int i = 0; i < 4; ++i) {
            conv_[i].collect("conv" + std::to_string(i), params_);
            bn_[i].collect("bn" + std::to_string(i), params_);
        }
        head_.collect("head.fc", params_);
    }

    ForwardResult<T> forward(const Tensor<T>& x, Phase phase, Rng* rng) override {
        Tensor<T> h = x;
        for (int i = 0; i < 4; ++i) {
            h = act_[i].forward(bn_[i].forward(conv_[i].forward(h), phase));
        }
        check_finite(h, "cnn.body");
        ForwardResult<T> out;
        out.embedding = pool_.forward(h);
        out.logits = head_.forward(drop_.forward(out.embedding, phase, rng));
        check_finite(out.logits, "cnn.head");
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) override {
        Tensor<T> g = pool_.backward(drop_.backward(head_.backward(grad_logits)));
        for (int i = 3; i >= 0; --i) {
            g = conv_[i].backward(bn_[i].backward(act_[i].backward(g)));
        }
        return g;
    }

    ParamList<T>& params() override { return params_; }
    const ModelConfig& config() const override { return cfg_; }

private:
    ModelConfig cfg_;
    std::vector<Conv2d<T>> conv_;
    std::vector<BatchNorm2d<T>> bn_;
    std::vector<Gelu<T>> act_;
    GlobalAvgPool<T> pool_;
    Dropout<T> drop_;
    Linear<T> head_;
    ParamList<T> params_;
};

template <typename T>
std::unique_ptr<Network<T>> build_network(const ModelConfig& cfg) {
    if (cfg.arch == "maxvit") return std::make_unique<MaxVit<T>>(cfg);
    if (cfg.arch == "cnn") return std::make_unique<BaselineCnn<T>>(cfg);
    throw usage_error("model", "unknown arch: " + cfg.arch);
}

// Truncated-normal (std 0.02) weights; biases, norm offsets and relative
// bias tables stay at their constructed values.
template <typename T>
void init_params(ParamList<T>& params, std::uint64_t seed) {
    Rng rng(Rng::sub_seed(seed, "init"));
    for (auto& p : params) {
        if (!p.trainable) continue;
        const std::string& n = p.name;
        const bool is_weight = n.ends_with(".w") || n.ends_with(".w1") || n.ends_with(".w2");
        if (!is_weight) continue;
        for (auto& v : p.value->v) v = static_cast<T>(rng.truncated_normal(0.02));
    }
}

template <typename T>
std::size_t param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        if (p.trainable) n += p.value->numel();
    }
    return n;
}

template <typename T>
void zero_grads(ParamList<T>& params) {
    for (auto& p : params) {
        if (p.grad) p.grad->zero();
    }
}

}  // namespace cadrads::nn
