// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cadrads/parallel.hpp"
#include "cadrads/rng.hpp"
#include "cadrads/tensor.hpp"

namespace cadrads::nn {

enum class Phase { Train, Eval };

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;   // null for buffers
    bool trainable = true;
    bool weight_decay = true;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
inline void add_param(ParamList<T>& out, const std::string& name, Tensor<T>& value, Tensor<T>& grad,
                      bool decay = true) {
    grad = Tensor<T>(value.shape);
    out.push_back({name, &value, &grad, true, decay});
}

template <typename T>
inline void add_buffer(ParamList<T>& out, const std::string& name, Tensor<T>& value) {
    out.push_back({name, &value, nullptr, false, false});
}

// ---------------------------------------------------------------------------
// Convolution (supports groups: 1 for dense, in_c for depthwise)
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int stride, int pad, int groups, bool bias)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), groups_(groups),
          has_bias_(bias), w_({out_c, in_c / groups, k, k}), b_({bias ? out_c : 0}) {}

    void collect(const std::string& prefix, ParamList<T>& out) {
        add_param(out, prefix + ".w", w_, gw_);
        if (has_bias_) add_param(out, prefix + ".b", b_, gb_);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int OH = (H + 2 * pad_ - k_) / stride_ + 1;
        const int OW = (W + 2 * pad_ - k_) / stride_ + 1;
        if (x.dim(1) != in_c_) throw data_error("conv", "ShapeMismatch: channels");
        Tensor<T> y({N, out_c_, OH, OW});
        const int icpg = in_c_ / groups_;
        const int ocpg = out_c_ / groups_;
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const std::size_t oplane = static_cast<std::size_t>(OH) * OW;

        parallel_for(static_cast<std::int64_t>(N) * out_c_, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const int n = static_cast<int>(i / out_c_);
                const int oc = static_cast<int>(i % out_c_);
                const int g = oc / ocpg;
                T* yo = y.data() + (static_cast<std::size_t>(n) * out_c_ + oc) * oplane;
                const T bias = has_bias_ ? b_.v[oc] : T{0};
                std::fill(yo, yo + oplane, bias);
                for (int icg = 0; icg < icpg; ++icg) {
                    const int ic = g * icpg + icg;
                    const T* xi = x.data() + (static_cast<std::size_t>(n) * in_c_ + ic) * plane;
                    const T* wk = w_.data() + ((static_cast<std::size_t>(oc) * icpg + icg) * k_) * k_;
                    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
                        const T wv = wk[0];
                        for (std::size_t p = 0; p < oplane; ++p) yo[p] += wv * xi[p];
                        continue;
                    }
                    for (int ky = 0; ky < k_; ++ky) {
                        for (int kx = 0; kx < k_; ++kx) {
                            const T wv = wk[ky * k_ + kx];
                            if (wv == T{0}) continue;
                            for (int oy = 0; oy < OH; ++oy) {
                                const int iy = oy * stride_ - pad_ + ky;
                                if (iy < 0 || iy >= H) continue;
                                T* yrow = yo + static_cast<std::size_t>(oy) * OW;
                                const T* xrow = xi + static_cast<std::size_t>(iy) * W;
                                for (int ox = 0; ox < OW; ++ox) {
                                    const int ix = ox * stride_ - pad_ + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    yrow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const Tensor<T>& x = x_;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int OH = gy.dim(2), OW = gy.dim(3);
        const int icpg = in_c_ / groups_;
        const int ocpg = out_c_ / groups_;
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const std::size_t oplane = static_cast<std::size_t>(OH) * OW;

        // weight/bias grads: one thread owns one output channel
        parallel_for(out_c_, [&](std::int64_t lo, std::int64_t hi) {
            for (int oc = static_cast<int>(lo); oc < hi; ++oc) {
                const int g = oc / ocpg;
                if (has_bias_) {
                    T s{0};
                    for (int n = 0; n < N; ++n) {
                        const T* go = gy.data() + (static_cast<std::size_t>(n) * out_c_ + oc) * oplane;
                        for (std::size_t p = 0; p < oplane; ++p) s += go[p];
                    }
                    gb_.v[oc] += s;
                }
                for (int icg = 0; icg < icpg; ++icg) {
                    const int ic = g * icpg + icg;
                    T* wg = gw_.data() + ((static_cast<std::size_t>(oc) * icpg + icg) * k_) * k_;
                    for (int ky = 0; ky < k_; ++ky) {
                        for (int kx = 0; kx < k_; ++kx) {
                            T s{0};
                            for (int n = 0; n < N; ++n) {
                                const T* go = gy.data() + (static_cast<std::size_t>(n) * out_c_ + oc) * oplane;
                                const T* xi = x.data() + (static_cast<std::size_t>(n) * in_c_ + ic) * plane;
                                for (int oy = 0; oy < OH; ++oy) {
                                    const int iy = oy * stride_ - pad_ + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    const T* grow = go + static_cast<std::size_t>(oy) * OW;
                                    const T* xrow = xi + static_cast<std::size_t>(iy) * W;
                                    for (int ox = 0; ox < OW; ++ox) {
                                        const int ix = ox * stride_ - pad_ + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        s += grow[ox] * xrow[ix];
                                    }
                                }
                            }
                            wg[ky * k_ + kx] += s;
                        }
                    }
                }
            }
        });

        Tensor<T> gx({N, in_c_, H, W});
        parallel_for(static_cast<std::int64_t>(N) * in_c_, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const int n = static_cast<int>(i / in_c_);
                const int ic = static_cast<int>(i % in_c_);
                const int g = ic / icpg;
                const int icg = ic % icpg;
                T* gxo = gx.data() + (static_cast<std::size_t>(n) * in_c_ + ic) * plane;
                for (int oc = g * ocpg; oc < (g + 1) * ocpg; ++oc) {
                    const T* go = gy.data() + (static_cast<std::size_t>(n) * out_c_ + oc) * oplane;
                    const T* wk = w_.data() + ((static_cast<std::size_t>(oc) * icpg + icg) * k_) * k_;
                    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
                        const T wv = wk[0];
                        for (std::size_t p = 0; p < plane; ++p) gxo[p] += wv * go[p];
                        continue;
                    }
                    for (int ky = 0; ky < k_; ++ky) {
                        for (int kx = 0; kx < k_; ++kx) {
                            const T wv = wk[ky * k_ + kx];
                            if (wv == T{0}) continue;
                            for (int oy = 0; oy < OH; ++oy) {
                                const int iy = oy * stride_ - pad_ + ky;
                                if (iy < 0 || iy >= H) continue;
                                const T* grow = go + static_cast<std::size_t>(oy) * OW;
                                T* gxrow = gxo + static_cast<std::size_t>(iy) * W;
                                for (int ox = 0; ox < OW; ++ox) {
                                    const int ix = ox * stride_ - pad_ + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    gxrow[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        return gx;
    }

    int out_channels() const { return out_c_; }
    int in_channels() const { return in_c_; }

private:
    int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, pad_ = 0, groups_ = 1;
    bool has_bias_ = false;
    Tensor<T> w_, b_, gw_, gb_;
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// Batch normalization over (N,H,W) per channel
// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps), gamma_({channels}), beta_({channels}),
          running_mean_({channels}), running_var_({channels}) {
        std::fill(gamma_.v.begin(), gamma_.v.end(), T{1});
        std::fill(running_var_.v.begin(), running_var_.v.end(), T{1});
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        add_param(out, prefix + ".gamma", gamma_, ggamma_, /*decay=*/false);
        add_param(out, prefix + ".beta", beta_, gbeta_, /*decay=*/false);
        add_buffer(out, prefix + ".running_mean", running_mean_);
        add_buffer(out, prefix + ".running_var", running_var_);
    }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) {
        phase_ = phase;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const double m = static_cast<double>(N) * H * W;
        Tensor<T> y(x.shape);
        xhat_ = Tensor<T>(x.shape);
        invstd_ = Tensor<T>({c_});
        m_ = m;

        parallel_for(c_, [&](std::int64_t lo, std::int64_t hi) {
            for (int c = static_cast<int>(lo); c < hi; ++c) {
                double mean, var;
                if (phase == Phase::Train) {
                    double s = 0.0, s2 = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const T* xp = x.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            const double xv = static_cast<double>(xp[p]);
                            s += xv;
                            s2 += xv * xv;
                        }
                    }
                    mean = s / m;
                    var = std::max(0.0, s2 / m - mean * mean);
                    const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
                    running_mean_.v[c] = static_cast<T>((1.0 - momentum_) * running_mean_.v[c] + momentum_ * mean);
                    running_var_.v[c] = static_cast<T>((1.0 - momentum_) * running_var_.v[c] + momentum_ * unbiased);
                } else {
                    mean = static_cast<double>(running_mean_.v[c]);
                    var = static_cast<double>(running_var_.v[c]);
                }
                const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
                invstd_.v[c] = istd;
                const T mu = static_cast<T>(mean);
                const T g = gamma_.v[c], b = beta_.v[c];
                for (int n = 0; n < N; ++n) {
                    const T* xp = x.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                    T* xh = xhat_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                    T* yp = y.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        xh[p] = (xp[p] - mu) * istd;
                        yp[p] = g * xh[p] + b;
                    }
                }
            }
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const int N = gy.dim(0), H = gy.dim(2), W = gy.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        Tensor<T> gx(gy.shape);
        parallel_for(c_, [&](std::int64_t lo, std::int64_t hi) {
            for (int c = static_cast<int>(lo); c < hi; ++c) {
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int n = 0; n < N; ++n) {
                    const T* gp = gy.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                    const T* xh = xhat_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        sum_gy += static_cast<double>(gp[p]);
                        sum_gy_xhat += static_cast<double>(gp[p]) * xh[p];
                    }
                }
                ggamma_.v[c] += static_cast<T>(sum_gy_xhat);
                gbeta_.v[c] += static_cast<T>(sum_gy);
                const T g_istd = gamma_.v[c] * invstd_.v[c];
                if (phase_ == Phase::Train) {
                    const T mean_gy = static_cast<T>(sum_gy / m_);
                    const T mean_gy_xhat = static_cast<T>(sum_gy_xhat / m_);
                    for (int n = 0; n < N; ++n) {
                        const T* gp = gy.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        const T* xh = xhat_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        T* gxp = gx.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            gxp[p] = g_istd * (gp[p] - mean_gy - xh[p] * mean_gy_xhat);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const T* gp = gy.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        T* gxp = gx.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) gxp[p] = g_istd * gp[p];
                    }
                }
            }
        });
        return gx;
    }

private:
    int c_ = 0;
    double momentum_ = 0.1, eps_ = 1e-5, m_ = 0.0;
    Phase phase_ = Phase::Eval;
    Tensor<T> gamma_, beta_, running_mean_, running_var_;
    Tensor<T> ggamma_, gbeta_;
    Tensor<T> xhat_, invstd_;
};

// ---------------------------------------------------------------------------
// GELU (exact erf form)
// ---------------------------------------------------------------------------

template <typename T>
class Gelu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        Tensor<T> y(x.shape);
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        parallel_for(static_cast<std::int64_t>(x.numel()), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const double xv = static_cast<double>(x.v[i]);
                y.v[i] = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * inv_sqrt2)));
            }
        });
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape);
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        parallel_for(static_cast<std::int64_t>(gy.numel()), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const double xv = static_cast<double>(x_.v[i]);
                const double cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
                gx.v[i] = static_cast<T>(static_cast<double>(gy.v[i]) * (cdf + xv * pdf));
            }
        });
        return gx;
    }

private:
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// Squeeze-and-excitation channel gate
// ---------------------------------------------------------------------------

template <typename T>
class SqueezeExcite {
public:
    SqueezeExcite() = default;
    SqueezeExcite(int channels, int reduced)
        : c_(channels), r_(reduced), w1_({reduced, channels}), b1_({reduced}),
          w2_({channels, reduced}), b2_({channels}) {}

    static int reduced_channels(int channels, double se_reduction) {
        return std::max(1, static_cast<int>(std::ceil(channels * se_reduction)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        add_param(out, prefix + ".w1", w1_, gw1_);
        add_param(out, prefix + ".b1", b1_, gb1_);
        add_param(out, prefix + ".w2", w2_, gw2_);
        add_param(out, prefix + ".b2", b2_, gb2_);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        s_ = Tensor<T>({N, c_});
        z_ = Tensor<T>({N, r_});
        gate_ = Tensor<T>({N, c_});
        Tensor<T> y(x.shape);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < c_; ++c) {
                const T* xp = x.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                T s{0};
                for (std::size_t p = 0; p < plane; ++p) s += xp[p];
                s_.at2(n, c) = s / static_cast<T>(plane);
            }
            for (int j = 0; j < r_; ++j) {
                T a = b1_.v[j];
                for (int c = 0; c < c_; ++c) a += w1_.at2(j, c) * s_.at2(n, c);
                z_.at2(n, j) = a > T{0} ? a : T{0};
            }
            for (int c = 0; c < c_; ++c) {
                T a = b2_.v[c];
                for (int j = 0; j < r_; ++j) a += w2_.at2(c, j) * z_.at2(n, j);
                gate_.at2(n, c) = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(a))));
            }
            for (int c = 0; c < c_; ++c) {
                const T g = gate_.at2(n, c);
                const T* xp = x.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                T* yp = y.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) yp[p] = xp[p] * g;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const int N = gy.dim(0), H = gy.dim(2), W = gy.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        Tensor<T> gx(gy.shape);
        for (int n = 0; n < N; ++n) {
            // gradient into the gate
            std::vector<T> ggate(c_), gu(c_), gz(r_), gs(c_);
            for (int c = 0; c < c_; ++c) {
                const T* gp = gy.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                const T* xp = x_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                T s{0};
                for (std::size_t p = 0; p < plane; ++p) s += gp[p] * xp[p];
                ggate[c] = s;
                const T g = gate_.at2(n, c);
                gu[c] = ggate[c] * g * (T{1} - g);
            }
            for (int c = 0; c < c_; ++c) {
                gb2_.v[c] += gu[c];
                for (int j = 0; j < r_; ++j) gw2_.at2(c, j) += gu[c] * z_.at2(n, j);
            }
            for (int j = 0; j < r_; ++j) {
                T a{0};
                for (int c = 0; c < c_; ++c) a += gu[c] * w2_.at2(c, j);
                gz[j] = z_.at2(n, j) > T{0} ? a : T{0};
                gb1_.v[j] += gz[j];
                for (int c = 0; c < c_; ++c) gw1_.at2(j, c) += gz[j] * s_.at2(n, c);
            }
            for (int c = 0; c < c_; ++c) {
                T a{0};
                for (int j = 0; j < r_; ++j) a += gz[j] * w1_.at2(j, c);
                gs[c] = a / static_cast<T>(plane);
            }
            for (int c = 0; c < c_; ++c) {
                const T g = gate_.at2(n, c);
                const T* gp = gy.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                T* gxp = gx.data() + (static_cast<std::size_t>(n) * c_ + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) gxp[p] = gp[p] * g + gs[c];
            }
        }
        return gx;
    }

private:
    int c_ = 0, r_ = 0;
    Tensor<T> w1_, b1_, w2_, b2_;
    Tensor<T> gw1_, gb1_, gw2_, gb2_;
    Tensor<T> x_, s_, z_, gate_;
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
class AvgPool2x2 {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        if (H % 2 || W % 2) throw data_error("avgpool", "ShapeMismatch: odd spatial size");
        in_shape_ = x.shape;
        Tensor<T> y({N, C, H / 2, W / 2});
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                for (int oy = 0; oy < H / 2; ++oy) {
                    for (int ox = 0; ox < W / 2; ++ox) {
                        const T s = x.at4(n, c, 2 * oy, 2 * ox) + x.at4(n, c, 2 * oy, 2 * ox + 1) +
                                    x.at4(n, c, 2 * oy + 1, 2 * ox) + x.at4(n, c, 2 * oy + 1, 2 * ox + 1);
                        y.at4(n, c, oy, ox) = s * static_cast<T>(0.25);
                    }
                }
            }
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape_);
        const int N = gy.dim(0), C = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                for (int oy = 0; oy < OH; ++oy) {
                    for (int ox = 0; ox < OW; ++ox) {
                        const T g = gy.at4(n, c, oy, ox) * static_cast<T>(0.25);
                        gx.at4(n, c, 2 * oy, 2 * ox) = g;
                        gx.at4(n, c, 2 * oy, 2 * ox + 1) = g;
                        gx.at4(n, c, 2 * oy + 1, 2 * ox) = g;
                        gx.at4(n, c, 2 * oy + 1, 2 * ox + 1) = g;
                    }
                }
            }
        }
        return gx;
    }

private:
    std::vector<int> in_shape_;
};

template <typename T>
class GlobalAvgPool {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape;
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        Tensor<T> y({N, C});
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const T* xp = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                T s{0};
                for (std::size_t p = 0; p < plane; ++p) s += xp[p];
                y.at2(n, c) = s / static_cast<T>(plane);
            }
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape_);
        const int N = in_shape_[0], C = in_shape_[1];
        const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const T g = gy.at2(n, c) / static_cast<T>(plane);
                T* gxp = gx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) gxp[p] = g;
            }
        }
        return gx;
    }

private:
    std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------
// Layer normalization over the trailing (channel) dimension of (B,T,C)
// ---------------------------------------------------------------------------

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int channels, double eps = 1e-6)
        : c_(channels), eps_(eps), gamma_({channels}), beta_({channels}) {
        std::fill(gamma_.v.begin(), gamma_.v.end(), T{1});
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        add_param(out, prefix + ".gamma", gamma_, ggamma_, /*decay=*/false);
        add_param(out, prefix + ".beta", beta_, gbeta_, /*decay=*/false);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const std::size_t rows = x.numel() / c_;
        xhat_ = Tensor<T>(x.shape);
        invstd_.assign(rows, T{0});
        Tensor<T> y(x.shape);
        parallel_for(static_cast<std::int64_t>(rows), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t r = lo; r < hi; ++r) {
                const T* xp = x.data() + static_cast<std::size_t>(r) * c_;
                T* xh = xhat_.data() + static_cast<std::size_t>(r) * c_;
                T* yp = y.data() + static_cast<std::size_t>(r) * c_;
                double s = 0.0, s2 = 0.0;
                for (int c = 0; c < c_; ++c) {
                    s += static_cast<double>(xp[c]);
                    s2 += static_cast<double>(xp[c]) * xp[c];
                }
                const double mean = s / c_;
                const double var = std::max(0.0, s2 / c_ - mean * mean);
                const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
                invstd_[static_cast<std::size_t>(r)] = istd;
                for (int c = 0; c < c_; ++c) {
                    xh[c] = (xp[c] - static_cast<T>(mean)) * istd;
                    yp[c] = gamma_.v[c] * xh[c] + beta_.v[c];
                }
            }
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t rows = gy.numel() / c_;
        Tensor<T> gx(gy.shape);
        // per-channel parameter grads accumulated serially for determinism
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gp = gy.data() + r * c_;
            const T* xh = xhat_.data() + r * c_;
            for (int c = 0; c < c_; ++c) {
                ggamma_.v[c] += gp[c] * xh[c];
                gbeta_.v[c] += gp[c];
            }
        }
        parallel_for(static_cast<std::int64_t>(rows), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t r = lo; r < hi; ++r) {
                const T* gp = gy.data() + static_cast<std::size_t>(r) * c_;
                const T* xh = xhat_.data() + static_cast<std::size_t>(r) * c_;
                T* gxp = gx.data() + static_cast<std::size_t>(r) * c_;
                double sum_g = 0.0, sum_gx = 0.0;
                for (int c = 0; c < c_; ++c) {
                    const double gh = static_cast<double>(gp[c]) * gamma_.v[c];
                    sum_g += gh;
                    sum_gx += gh * xh[c];
                }
                const double mg = sum_g / c_, mgx = sum_gx / c_;
                const T istd = invstd_[static_cast<std::size_t>(r)];
                for (int c = 0; c < c_; ++c) {
                    const double gh = static_cast<double>(gp[c]) * gamma_.v[c];
                    gxp[c] = static_cast<T>((gh - mg - xh[c] * mgx) * istd);
                }
            }
        });
        return gx;
    }

private:
    int c_ = 0;
    double eps_ = 1e-6;
    Tensor<T> gamma_, beta_, ggamma_, gbeta_;
    Tensor<T> xhat_;
    std::vector<T> invstd_;
};

// ---------------------------------------------------------------------------
// Linear over the trailing dimension
// ---------------------------------------------------------------------------

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(int in_f, int out_f) : in_(in_f), out_(out_f), w_({out_f, in_f}), b_({out_f}) {}

    void collect(const std::string& prefix, ParamList<T>& out) {
        add_param(out, prefix + ".w", w_, gw_);
        add_param(out, prefix + ".b", b_, gb_);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        const std::size_t rows = x.numel() / in_;
        std::vector<int> yshape = x.shape;
        yshape.back() = out_;
        Tensor<T> y(yshape);
        parallel_for(static_cast<std::int64_t>(rows), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t r = lo; r < hi; ++r) {
                const T* xp = x.data() + static_cast<std::size_t>(r) * in_;
                T* yp = y.data() + static_cast<std::size_t>(r) * out_;
                for (int o = 0; o < out_; ++o) {
                    const T* wrow = w_.data() + static_cast<std::size_t>(o) * in_;
                    T s = b_.v[o];
                    for (int i = 0; i < in_; ++i) s += wrow[i] * xp[i];
                    yp[o] = s;
                }
            }
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t rows = gy.numel() / out_;
        Tensor<T> gx(x_.shape);
        parallel_for(out_, [&](std::int64_t lo, std::int64_t hi) {
            for (int o = static_cast<int>(lo); o < hi; ++o) {
                T* wg = gw_.data() + static_cast<std::size_t>(o) * in_;
                T bs{0};
                for (std::size_t r = 0; r < rows; ++r) {
                    const T g = gy.data()[r * out_ + o];
                    bs += g;
                    const T* xp = x_.data() + r * in_;
                    for (int i = 0; i < in_; ++i) wg[i] += g * xp[i];
                }
                gb_.v[o] += bs;
            }
        });
        parallel_for(static_cast<std::int64_t>(rows), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t r = lo; r < hi; ++r) {
                const T* gp = gy.data() + static_cast<std::size_t>(r) * out_;
                T* gxp = gx.data() + static_cast<std::size_t>(r) * in_;
                for (int i = 0; i < in_; ++i) gxp[i] = T{0};
                for (int o = 0; o < out_; ++o) {
                    const T g = gp[o];
                    const T* wrow = w_.data() + static_cast<std::size_t>(o) * in_;
                    for (int i = 0; i < in_; ++i) gxp[i] += g * wrow[i];
                }
            }
        });
        return gx;
    }

private:
    int in_ = 0, out_ = 0;
    Tensor<T> w_, b_, gw_, gb_;
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; identity in eval)
// ---------------------------------------------------------------------------

template <typename T>
class Dropout {
public:
    Dropout() = default;
    explicit Dropout(double rate) : rate_(rate) {}

    Tensor<T> forward(const Tensor<T>& x, Phase phase, Rng* rng) {
        if (phase == Phase::Eval || rate_ <= 0.0) {
            active_ = false;
            return x;
        }
        active_ = true;
        mask_ = Tensor<T>(x.shape);
        Tensor<T> y(x.shape);
        const T scale = static_cast<T>(1.0 / (1.0 - rate_));
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const bool keep = !rng->bernoulli(rate_);
            mask_.v[i] = keep ? scale : T{0};
            y.v[i] = x.v[i] * mask_.v[i];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (!active_) return gy;
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx.v[i] = gy.v[i] * mask_.v[i];
        return gx;
    }

private:
    double rate_ = 0.0;
    bool active_ = false;
    Tensor<T> mask_;
};

// ---------------------------------------------------------------------------
// Window / grid partitioning
// ---------------------------------------------------------------------------

// (N,C,H,W) -> (N*(H/P)*(W/P), P*P, C); token t = iy*P+ix of window (wy,wx)
// reads pixel (wy*P+iy, wx*P+ix).
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int P) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % P || W % P) throw data_error("window-partition", "DivisibilityError: feature map not tiled by window");
    const int wy_n = H / P, wx_n = W / P;
    Tensor<T> t({N * wy_n * wx_n, P * P, C});
    for (int n = 0; n < N; ++n) {
        for (int wy = 0; wy < wy_n; ++wy) {
            for (int wx = 0; wx < wx_n; ++wx) {
                const int b = (n * wy_n + wy) * wx_n + wx;
                for (int iy = 0; iy < P; ++iy) {
                    for (int ix = 0; ix < P; ++ix) {
                        const int tok = iy * P + ix;
                        for (int c = 0; c < C; ++c) {
                            t.at3(b, tok, c) = x.at4(n, c, wy * P + iy, wx * P + ix);
                        }
                    }
                }
            }
        }
    }
    return t;
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& t, int P, int N, int C, int H, int W) {
    const int wy_n = H / P, wx_n = W / P;
    Tensor<T> x({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        for (int wy = 0; wy < wy_n; ++wy) {
            for (int wx = 0; wx < wx_n; ++wx) {
                const int b = (n * wy_n + wy) * wx_n + wx;
                for (int iy = 0; iy < P; ++iy) {
                    for (int ix = 0; ix < P; ++ix) {
                        const int tok = iy * P + ix;
                        for (int c = 0; c < C; ++c) {
                            x.at4(n, c, wy * P + iy, wx * P + ix) = t.at3(b, tok, c);
                        }
                    }
                }
            }
        }
    }
    return x;
}

// (N,C,H,W) -> (N*(H/G)*(W/G), G*G, C); token (i,j) of group (a,b) reads
// pixel (i*(H/G)+a, j*(W/G)+b): a sparse lattice spanning the whole map.
template <typename T>
Tensor<T> grid_partition(const Tensor<T>& x, int G) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % G || W % G) throw data_error("grid-partition", "DivisibilityError: feature map not tiled by grid");
    const int ay_n = H / G, ax_n = W / G;
    Tensor<T> t({N * ay_n * ax_n, G * G, C});
    for (int n = 0; n < N; ++n) {
        for (int a = 0; a < ay_n; ++a) {
            for (int b = 0; b < ax_n; ++b) {
                const int bb = (n * ay_n + a) * ax_n + b;
                for (int i = 0; i < G; ++i) {
                    for (int j = 0; j < G; ++j) {
                        const int tok = i * G + j;
                        for (int c = 0; c < C; ++c) {
                            t.at3(bb, tok, c) = x.at4(n, c, i * ay_n + a, j * ax_n + b);
                        }
                    }
                }
            }
        }
    }
    return t;
}

template <typename T>
Tensor<T> grid_reverse(const Tensor<T>& t, int G, int N, int C, int H, int W) {
    const int ay_n = H / G, ax_n = W / G;
    Tensor<T> x({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        for (int a = 0; a < ay_n; ++a) {
            for (int b = 0; b < ax_n; ++b) {
                const int bb = (n * ay_n + a) * ax_n + b;
                for (int i = 0; i < G; ++i) {
                    for (int j = 0; j < G; ++j) {
                        const int tok = i * G + j;
                        for (int c = 0; c < C; ++c) {
                            x.at4(n, c, i * ay_n + a, j * ax_n + b) = t.at3(bb, tok, c);
                        }
                    }
                }
            }
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention with 2D relative position bias, pre-norm, and
// a pre-norm MLP; both sub-layers carry residual connections.
// ---------------------------------------------------------------------------

template <typename T>
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(int channels, int head_dim, int span, int mlp_ratio)
        : c_(channels), hd_(head_dim), heads_(channels / head_dim), span_(span),
          ln1_(channels), qkv_(channels, 3 * channels), proj_(channels, channels),
          ln2_(channels), fc1_(channels, mlp_ratio * channels), fc2_(mlp_ratio * channels, channels),
          bias_({heads_, (2 * span - 1) * (2 * span - 1)}) {
        if (channels % head_dim != 0) throw usage_error("attention", "head_dim must divide channels");
        const int t = span * span;
        bias_index_.resize(static_cast<std::size_t>(t) * t);
        for (int i = 0; i < t; ++i) {
            const int iy = i / span, ix = i % span;
            for (int j = 0; j < t; ++j) {
                const int jy = j / span, jx = j % span;
                bias_index_[static_cast<std::size_t>(i) * t + j] =
                    (iy - jy + span - 1) * (2 * span - 1) + (ix - jx + span - 1);
            }
        }
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        ln1_.collect(prefix + ".ln1", out);
        qkv_.collect(prefix + ".qkv", out);
        add_param(out, prefix + ".rel_bias", bias_, gbias_, /*decay=*/false);
        proj_.collect(prefix + ".proj", out);
        ln2_.collect(prefix + ".ln2", out);
        fc1_.collect(prefix + ".mlp.fc1", out);
        fc2_.collect(prefix + ".mlp.fc2", out);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int B = x.dim(0), Tn = x.dim(1);
        if (Tn != span_ * span_) throw data_error("attention", "ShapeMismatch: token count vs span");
        x_ = x;
        Tensor<T> h = ln1_.forward(x);
        qkv_out_ = qkv_.forward(h);  // (B,T,3C)

        attn_ = Tensor<T>({B, heads_, Tn, Tn});
        ctx_ = Tensor<T>({B, Tn, c_});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd_)));

        parallel_for(static_cast<std::int64_t>(B) * heads_, [&](std::int64_t lo, std::int64_t hi) {
            std::vector<double> row(static_cast<std::size_t>(Tn));
            for (std::int64_t bh = lo; bh < hi; ++bh) {
                const int b = static_cast<int>(bh / heads_);
                const int hh = static_cast<int>(bh % heads_);
                const int off = hh * hd_;
                const T* bias_row = bias_.data() + static_cast<std::size_t>(hh) * bias_.dim(1);
                for (int i = 0; i < Tn; ++i) {
                    const T* qi = &qkv_out_.at3(b, i, off);
                    double maxv = -1e300;
                    for (int j = 0; j < Tn; ++j) {
                        const T* kj = &qkv_out_.at3(b, j, c_ + off);
                        double dot = 0.0;
                        for (int d = 0; d < hd_; ++d) dot += static_cast<double>(qi[d]) * kj[d];
                        dot = dot * scale + bias_row[bias_index_[static_cast<std::size_t>(i) * Tn + j]];
                        row[static_cast<std::size_t>(j)] = dot;
                        maxv = std::max(maxv, dot);
                    }
                    double denom = 0.0;
                    for (int j = 0; j < Tn; ++j) {
                        row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - maxv);
                        denom += row[static_cast<std::size_t>(j)];
                    }
                    T* arow = &attn_.v[((static_cast<std::size_t>(b) * heads_ + hh) * Tn + i) * Tn];
                    for (int j = 0; j < Tn; ++j) arow[j] = static_cast<T>(row[static_cast<std::size_t>(j)] / denom);
                    // weighted sum of values
                    T* ci = &ctx_.at3(b, i, off);
                    for (int d = 0; d < hd_; ++d) ci[d] = T{0};
                    for (int j = 0; j < Tn; ++j) {
                        const T a = arow[j];
                        const T* vj = &qkv_out_.at3(b, j, 2 * c_ + off);
                        for (int d = 0; d < hd_; ++d) ci[d] += a * vj[d];
                    }
                }
            }
        });

        Tensor<T> attn_out = proj_.forward(ctx_);
        x1_ = Tensor<T>(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) x1_.v[i] = x.v[i] + attn_out.v[i];

        Tensor<T> h2 = ln2_.forward(x1_);
        Tensor<T> m = fc2_.forward(gelu_.forward(fc1_.forward(h2)));
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) y.v[i] = x1_.v[i] + m.v[i];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        // MLP sub-layer
        Tensor<T> gm = fc1_.backward(gelu_.backward(fc2_.backward(gy)));
        Tensor<T> gx1 = ln2_.backward(gm);
        for (std::size_t i = 0; i < gx1.numel(); ++i) gx1.v[i] += gy.v[i];

        // attention sub-layer
        Tensor<T> gctx = proj_.backward(gx1);
        const int B = x_.dim(0), Tn = x_.dim(1);
        Tensor<T> gqkv({B, Tn, 3 * c_});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd_)));

        // relative-bias grads accumulated per head (thread owns a head)
        parallel_for(heads_, [&](std::int64_t lo, std::int64_t hi) {
            for (int hh = static_cast<int>(lo); hh < hi; ++hh) {
                const int off = hh * hd_;
                T* gbias_row = gbias_.data() + static_cast<std::size_t>(hh) * gbias_.dim(1);
                std::vector<T> glog(static_cast<std::size_t>(Tn));
                for (int b = 0; b < B; ++b) {
                    for (int i = 0; i < Tn; ++i) {
                        const T* arow = &attn_.v[((static_cast<std::size_t>(b) * heads_ + hh) * Tn + i) * Tn];
                        const T* gci = &gctx.at3(b, i, off);
                        // g wrt attention probabilities, then softmax jacobian
                        T dot_sum{0};
                        for (int j = 0; j < Tn; ++j) {
                            const T* vj = &qkv_out_.at3(b, j, 2 * c_ + off);
                            T gp{0};
                            for (int d = 0; d < hd_; ++d) gp += gci[d] * vj[d];
                            glog[static_cast<std::size_t>(j)] = gp;
                            dot_sum += gp * arow[j];
                        }
                        const T* qi = &qkv_out_.at3(b, i, off);
                        T* gqi = &gqkv.at3(b, i, off);
                        for (int j = 0; j < Tn; ++j) {
                            const T gl = arow[j] * (glog[static_cast<std::size_t>(j)] - dot_sum);
                            gbias_row[bias_index_[static_cast<std::size_t>(i) * Tn + j]] += gl;
                            const T* kj = &qkv_out_.at3(b, j, c_ + off);
                            T* gkj = &gqkv.at3(b, j, c_ + off);
                            T* gvj = &gqkv.at3(b, j, 2 * c_ + off);
                            const T a = arow[j];
                            const T gls = gl * scale;
                            for (int d = 0; d < hd_; ++d) {
                                gqi[d] += gls * kj[d];
                                gkj[d] += gls * qi[d];
                                gvj[d] += a * gci[d];
                            }
                        }
                    }
                }
            }
        });

        Tensor<T> gh = qkv_.backward(gqkv);
        Tensor<T> gx = ln1_.backward(gh);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx.v[i] += gx1.v[i];
        return gx;
    }

private:
    int c_ = 0, hd_ = 0, heads_ = 0, span_ = 0;
    LayerNorm<T> ln1_;
    Linear<T> qkv_, proj_;
    LayerNorm<T> ln2_;
    Linear<T> fc1_, fc2_;
    Gelu<T> gelu_;
    Tensor<T> bias_, gbias_;
    std::vector<int> bias_index_;
    Tensor<T> x_, qkv_out_, attn_, ctx_, x1_;
};

}  // namespace cadrads::nn
