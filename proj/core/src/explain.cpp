// SPDX-License-Identifier: Apache-2.0

#include "cadrads/explain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cadrads/error.hpp"
#include "cadrads/image.hpp"

namespace cadrads::explain {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> softmax_row(const nn::Tensor<float>& logits, int row) {
    const int K = logits.dim(1);
    double maxv = -1e300;
    for (int k = 0; k < K; ++k) maxv = std::max(maxv, static_cast<double>(logits.at2(row, k)));
    std::vector<double> p(static_cast<std::size_t>(K));
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
        p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(logits.at2(row, k)) - maxv);
        denom += p[static_cast<std::size_t>(k)];
    }
    for (auto& x : p) x /= denom;
    return p;
}

nn::Tensor<float> sample_to_tensor(const data::StackedSample& s) {
    nn::Tensor<float> x({1, 3, s.side, s.side});
    std::copy(s.data.begin(), s.data.end(), x.data());
    return x;
}

}  // namespace

OcclusionResult occlusion_patches(nn::Network<float>& net, const data::StackedSample& sample,
                                  const OcclusionOptions& opts) {
    const int S = sample.side;
    if (opts.patch < 1 || opts.patch > S) {
        throw usage_error("occlusion", "PatchTooLarge: patch must be in [1, sample side]");
    }
    if (opts.stride < 1) throw usage_error("occlusion", "stride must be positive");

    nn::Tensor<float> x = sample_to_tensor(sample);
    auto base = net.forward(x, nn::Phase::Eval, nullptr);
    const auto base_probs = softmax_row(base.logits, 0);
    const int top = static_cast<int>(std::max_element(base_probs.begin(), base_probs.end()) - base_probs.begin());

    OcclusionResult out;
    out.patch_size = opts.patch;
    out.top_class = top;
    out.top_prob = base_probs[static_cast<std::size_t>(top)];
    out.per_channel.resize(3);

    std::vector<int> positions;
    for (int r = 0; r + opts.patch <= S; r += opts.stride) positions.push_back(r);

    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<OcclusionPatch> all;
        for (int r : positions) {
            for (int c : positions) {
                nn::Tensor<float> oc = x;
                float* chan = oc.data() + static_cast<std::size_t>(ch) * plane;
                for (int dr = 0; dr < opts.patch; ++dr) {
                    float* row = chan + static_cast<std::size_t>(r + dr) * S + c;
                    std::fill(row, row + opts.patch, opts.mask_value);
                }
                auto res = net.forward(oc, nn::Phase::Eval, nullptr);
                const auto probs = softmax_row(res.logits, 0);
                all.push_back({r, c, out.top_prob - probs[static_cast<std::size_t>(top)]});
            }
        }
        std::stable_sort(all.begin(), all.end(),
                         [](const OcclusionPatch& a, const OcclusionPatch& b) { return a.score_drop > b.score_drop; });
        // greedy selection with bounded overlap
        std::vector<OcclusionPatch> picked;
        const double patch_area = static_cast<double>(opts.patch) * opts.patch;
        for (const auto& cand : all) {
            if (static_cast<int>(picked.size()) >= opts.top_k) break;
            bool ok = true;
            for (const auto& sel : picked) {
                const int oy = std::max(0, std::min(cand.row + opts.patch, sel.row + opts.patch) -
                                               std::max(cand.row, sel.row));
                const int ox = std::max(0, std::min(cand.col + opts.patch, sel.col + opts.patch) -
                                               std::max(cand.col, sel.col));
                if (static_cast<double>(oy) * ox > opts.max_overlap * patch_area) {
                    ok = false;
                    break;
                }
            }
            if (ok) picked.push_back(cand);
        }
        out.per_channel[static_cast<std::size_t>(ch)] = std::move(picked);
    }
    return out;
}

int NetworkScorer::input_numel() const {
    const auto& c = net_->config();
    return c.in_channels * c.input_size * c.input_size;
}

double NetworkScorer::value(const std::vector<float>& x) {
    const auto& c = net_->config();
    nn::Tensor<float> t({1, c.in_channels, c.input_size, c.input_size});
    std::copy(x.begin(), x.end(), t.data());
    auto out = net_->forward(t, nn::Phase::Eval, nullptr);
    return static_cast<double>(out.logits.at2(0, target_));
}

double NetworkScorer::value_and_grad(const std::vector<float>& x, std::vector<float>& grad) {
    const auto& c = net_->config();
    nn::Tensor<float> t({1, c.in_channels, c.input_size, c.input_size});
    std::copy(x.begin(), x.end(), t.data());
    auto out = net_->forward(t, nn::Phase::Eval, nullptr);
    nn::Tensor<float> glog(out.logits.shape);
    glog.at2(0, target_) = 1.0f;
    nn::zero_grads(net_->params());
    nn::Tensor<float> gx = net_->backward(glog);
    grad.assign(gx.v.begin(), gx.v.end());
    return static_cast<double>(out.logits.at2(0, target_));
}

AttributionMap expected_gradients(Scorer& scorer, const std::vector<float>& input, int side,
                                  const std::vector<std::vector<float>>& background,
                                  int target_class, const ExpectedGradientsOptions& opts) {
    if (background.empty()) throw data_error("expected-gradients", "EmptyBackground");
    const std::size_t n = input.size();
    for (const auto& b : background) {
        if (b.size() != n) throw data_error("expected-gradients", "background shape mismatch");
    }

    AttributionMap map;
    map.side = side;
    map.target_class = target_class;
    map.values.assign(n, 0.0);
    std::vector<double> comp(n, 0.0);  // Kahan compensation

    const Rng base(opts.seed);
    std::vector<float> point(n), grad(n);
    for (int step = 0; step < opts.m_steps; ++step) {
        Rng rng = base.sub("eg", static_cast<std::uint64_t>(step));
        const auto& b = background[static_cast<std::size_t>(rng.index(background.size()))];
        const double alpha = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            point[i] = static_cast<float>(b[i] + alpha * (static_cast<double>(input[i]) - b[i]));
        }
        scorer.value_and_grad(point, grad);
        const double inv_m = 1.0 / opts.m_steps;
        for (std::size_t i = 0; i < n; ++i) {
            const double term =
                (static_cast<double>(input[i]) - b[i]) * static_cast<double>(grad[i]) * inv_m;
            const double y = term - comp[i];
            const double t = map.values[i] + y;
            comp[i] = (t - map.values[i]) - y;
            map.values[i] = t;
        }
    }

    double attr_sum = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = map.values[i] - c;
        const double t = attr_sum + y;
        c = (t - attr_sum) - y;
        attr_sum = t;
    }
    const double fx = scorer.value(input);
    double fb = 0.0;
    for (const auto& b : background) fb += scorer.value(b);
    fb /= static_cast<double>(background.size());
    map.convergence_gap = std::abs(attr_sum - (fx - fb));
    return map;
}

void save_attribution(const std::string& prefix, const AttributionMap& map) {
    json header;
    header["shape"] = {3, map.side, map.side};
    header["dtype"] = "float32_le";
    header["target_class"] = map.target_class;
    header["convergence_gap"] = map.convergence_gap;
    header["channels"] = {"LAD", "LCX", "RCA"};
    std::ofstream jh(prefix + ".json");
    if (!jh) throw data_error("attribution", "IOFailure: cannot write " + prefix + ".json");
    jh << header.dump(2) << "\n";

    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw data_error("attribution", "IOFailure: cannot write " + prefix + ".bin");
    for (double v : map.values) {
        const float f = static_cast<float>(v);
        bin.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

AttributionMap load_attribution(const std::string& prefix) {
    std::ifstream jh(prefix + ".json");
    if (!jh) throw data_error("attribution", "cannot open " + prefix + ".json");
    json header;
    jh >> header;
    AttributionMap map;
    map.side = header.at("shape")[1].get<int>();
    map.target_class = header.at("target_class").get<int>();
    map.convergence_gap = header.at("convergence_gap").get<double>();
    const std::size_t n = static_cast<std::size_t>(3) * map.side * map.side;
    map.values.resize(n);
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw data_error("attribution", "cannot open " + prefix + ".bin");
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        bin.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!bin) throw data_error("attribution", "truncated " + prefix + ".bin");
        map.values[i] = f;
    }
    return map;
}

PatientEmbeddings export_embeddings(nn::Network<float>& net,
                                    const std::vector<data::StackedSample>& samples, data::Task task,
                                    int batch_size) {
    std::map<std::string, std::pair<std::vector<double>, int>> acc;  // id -> (sum, count)
    std::map<std::string, int> label_of;
    int dim = 0;
    for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(samples.size(), at + static_cast<std::size_t>(batch_size));
        const int S = samples[at].side;
        nn::Tensor<float> x({static_cast<int>(e - at), 3, S, S});
        for (std::size_t i = at; i < e; ++i) {
            std::copy(samples[i].data.begin(), samples[i].data.end(),
                      x.data() + (i - at) * samples[i].data.size());
        }
        auto out = net.forward(x, nn::Phase::Eval, nullptr);
        dim = out.embedding.dim(1);
        for (std::size_t i = at; i < e; ++i) {
            auto& slot = acc[samples[i].patient_id];
            if (slot.first.empty()) slot.first.assign(static_cast<std::size_t>(dim), 0.0);
            for (int d = 0; d < dim; ++d) {
                slot.first[static_cast<std::size_t>(d)] += out.embedding.at2(static_cast<int>(i - at), d);
            }
            slot.second++;
            label_of[samples[i].patient_id] =
                task == data::Task::Binary ? samples[i].label_binary : samples[i].label_multi;
        }
    }

    PatientEmbeddings emb;
    emb.dim = dim;
    for (auto& [id, slot] : acc) {  // std::map iterates in sorted id order
        emb.patient_ids.push_back(id);
        emb.labels.push_back(label_of[id]);
        for (double v : slot.first) emb.values.push_back(v / slot.second);
    }
    return emb;
}

void save_embeddings_csv(const std::string& path, const PatientEmbeddings& emb) {
    std::ofstream out(path);
    if (!out) throw data_error("embeddings", "cannot write " + path);
    out << "patient_id,label";
    for (int d = 0; d < emb.dim; ++d) out << ",e" << d;
    out << "\n";
    for (std::size_t i = 0; i < emb.patient_ids.size(); ++i) {
        out << emb.patient_ids[i] << "," << emb.labels[i];
        char buf[32];
        for (int d = 0; d < emb.dim; ++d) {
            std::snprintf(buf, sizeof(buf), ",%.9g", emb.values[i * static_cast<std::size_t>(emb.dim) + d]);
            out << buf;
        }
        out << "\n";
    }
}

PatientEmbeddings load_embeddings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("embeddings", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("embeddings", "empty file " + path);
    PatientEmbeddings emb;
    emb.dim = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 1;
    if (emb.dim < 1) throw data_error("embeddings", "bad header in " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        emb.patient_ids.push_back(cell);
        std::getline(ss, cell, ',');
        emb.labels.push_back(std::stoi(cell));
        for (int d = 0; d < emb.dim; ++d) {
            if (!std::getline(ss, cell, ',')) throw data_error("embeddings", "short row in " + path);
            emb.values.push_back(std::stod(cell));
        }
    }
    return emb;
}

Embedding2D tsne(const std::vector<double>& data, int n, int dim, const TsneOptions& opts) {
    if (n < 4) throw data_error("tsne", "PerplexityTooHigh: need at least 4 points");
    if (static_cast<std::size_t>(n) * dim != data.size()) throw data_error("tsne", "data shape mismatch");

    Embedding2D out;
    double perplexity = opts.perplexity;
    const double max_perp = (n - 1) / 3.0;
    if (perplexity > max_perp) {
        perplexity = max_perp;
        out.perplexity_reduced = true;
    }
    out.used_perplexity = perplexity;

    // pairwise squared distances
    std::vector<double> d2(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < dim; ++k) {
                const double diff = data[static_cast<std::size_t>(i) * dim + k] -
                                    data[static_cast<std::size_t>(j) * dim + k];
                s += diff * diff;
            }
            d2[static_cast<std::size_t>(i) * n + j] = s;
            d2[static_cast<std::size_t>(j) * n + i] = s;
        }
    }

    // conditional P with per-point bandwidth matched to log(perplexity)
    const double log_perp = std::log(perplexity);
    std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = -1e300, beta_hi = 1e300;
        std::vector<double> row(static_cast<std::size_t>(n));
        for (int it = 0; it < 64; ++it) {
            double sum = 0.0, dsum = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) {
                    row[static_cast<std::size_t>(j)] = 0.0;
                    continue;
                }
                const double pj = std::exp(-beta * d2[static_cast<std::size_t>(i) * n + j]);
                row[static_cast<std::size_t>(j)] = pj;
                sum += pj;
                dsum += d2[static_cast<std::size_t>(i) * n + j] * pj;
            }
            if (sum <= 0.0) sum = 1e-300;
            const double H = std::log(sum) + beta * dsum / sum;
            const double diff = H - log_perp;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                beta_lo = beta;
                beta = beta_hi >= 1e300 ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = beta_lo <= -1e300 ? beta / 2.0 : 0.5 * (beta + beta_lo);
            }
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += row[static_cast<std::size_t>(j)];
        if (sum <= 0.0) sum = 1e-300;
        for (int j = 0; j < n; ++j) P[static_cast<std::size_t>(i) * n + j] = row[static_cast<std::size_t>(j)] / sum;
    }
    // symmetrize
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double p = (P[static_cast<std::size_t>(i) * n + j] + P[static_cast<std::size_t>(j) * n + i]) /
                             (2.0 * n);
            P[static_cast<std::size_t>(i) * n + j] = std::max(p, 1e-12);
            P[static_cast<std::size_t>(j) * n + i] = std::max(p, 1e-12);
        }
        P[static_cast<std::size_t>(i) * n + i] = 0.0;
    }

    Rng rng(Rng::sub_seed(opts.seed, "tsne-init"));
    std::vector<double> y(static_cast<std::size_t>(n) * 2);
    for (auto& v : y) v = rng.normal() * 1e-4;
    std::vector<double> inc(static_cast<std::size_t>(n) * 2, 0.0);
    std::vector<double> gain(static_cast<std::size_t>(n) * 2, 1.0);

    std::vector<double> num(static_cast<std::size_t>(n) * n, 0.0);
    auto compute_q = [&]() {
        double qsum = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double dy0 = y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2];
                const double dy1 = y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1];
                const double k = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[static_cast<std::size_t>(i) * n + j] = k;
                num[static_cast<std::size_t>(j) * n + i] = k;
                qsum += 2.0 * k;
            }
        }
        return std::max(qsum, 1e-300);
    };
    auto kl_now = [&](double qsum) {
        double kl = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const double p = P[static_cast<std::size_t>(i) * n + j];
                const double q = std::max(num[static_cast<std::size_t>(i) * n + j] / qsum, 1e-300);
                if (p > 0.0) kl += p * std::log(p / q);
            }
        }
        return kl;
    };

    out.initial_kl = kl_now(compute_q());

    for (int iter = 1; iter <= opts.iters; ++iter) {
        const double exaggeration = iter <= opts.exaggeration_iters ? opts.early_exaggeration : 1.0;
        const double momentum = iter <= opts.exaggeration_iters ? 0.5 : 0.8;
        const double qsum = compute_q();
        for (int i = 0; i < n; ++i) {
            double g0 = 0.0, g1 = 0.0;
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const double k = num[static_cast<std::size_t>(i) * n + j];
                const double q = k / qsum;
                const double mult = (exaggeration * P[static_cast<std::size_t>(i) * n + j] - q) * k;
                g0 += mult * (y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2]);
                g1 += mult * (y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1]);
            }
            // per-coordinate gains keep the fixed learning rate stable
            for (int d = 0; d < 2; ++d) {
                const std::size_t k2 = static_cast<std::size_t>(i) * 2 + static_cast<std::size_t>(d);
                const double g = d == 0 ? 4.0 * g0 : 4.0 * g1;
                gain[k2] = (g > 0.0) != (inc[k2] > 0.0) ? gain[k2] + 0.2 : gain[k2] * 0.8;
                gain[k2] = std::max(gain[k2], 0.01);
                inc[k2] = momentum * inc[k2] - opts.learning_rate * gain[k2] * g;
            }
        }
        double mean0 = 0.0, mean1 = 0.0;
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i) * 2] += inc[static_cast<std::size_t>(i) * 2];
            y[static_cast<std::size_t>(i) * 2 + 1] += inc[static_cast<std::size_t>(i) * 2 + 1];
            mean0 += y[static_cast<std::size_t>(i) * 2];
            mean1 += y[static_cast<std::size_t>(i) * 2 + 1];
        }
        mean0 /= n;
        mean1 /= n;
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i) * 2] -= mean0;
            y[static_cast<std::size_t>(i) * 2 + 1] -= mean1;
        }
    }

    out.final_kl = kl_now(compute_q());
    out.xy = std::move(y);
    return out;
}

void save_tsne_csv(const std::string& path, const PatientEmbeddings& emb, const Embedding2D& coords) {
    std::ofstream out(path);
    if (!out) throw data_error("tsne", "cannot write " + path);
    out << "patient_id,label,x,y\n";
    char buf[96];
    for (std::size_t i = 0; i < emb.patient_ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g\n", emb.patient_ids[i].c_str(), emb.labels[i],
                      coords.xy[i * 2], coords.xy[i * 2 + 1]);
        out << buf;
    }
}

namespace {

std::uint8_t mix(double a, double b, double t) {
    return static_cast<std::uint8_t>(std::clamp(a + (b - a) * t, 0.0, 255.0));
}

}  // namespace

RgbImage render_patch_overlay(const data::StackedSample& sample, const OcclusionResult& occlusion,
                              int channel) {
    const int S = sample.side;
    RgbImage patches(S, S);
    for (int r = 0; r < S; ++r) {
        for (int c = 0; c < S; ++c) {
            const auto g = static_cast<std::uint8_t>(std::clamp(sample.at(channel, r, c) * 255.0f, 0.0f, 255.0f));
            patches.set(r, c, g, g, g);
        }
    }
    for (const auto& p : occlusion.per_channel[static_cast<std::size_t>(channel)]) {
        const int pe = occlusion.patch_size;
        auto dash = [&](int rr, int cc, int step) {
            if ((step / 4) % 2 == 0 && rr >= 0 && rr < S && cc >= 0 && cc < S) {
                patches.set(rr, cc, 255, 220, 40);
            }
        };
        for (int i = 0; i < pe; ++i) {
            dash(p.row, p.col + i, i);
            dash(std::min(S - 1, p.row + pe - 1), p.col + i, i);
            dash(p.row + i, p.col, i);
            dash(p.row + i, std::min(S - 1, p.col + pe - 1), i);
        }
    }
    return patches;
}

double attribution_color_scale(const AttributionMap& attribution) {
    std::vector<double> mags;
    mags.reserve(attribution.values.size());
    for (double v : attribution.values) mags.push_back(std::abs(v));
    std::sort(mags.begin(), mags.end());
    double scale = mags.empty() ? 0.0 : mags[static_cast<std::size_t>(0.99 * (mags.size() - 1))];
    return scale > 0.0 ? scale : 1.0;
}

RgbImage render_attribution_overlay(const data::StackedSample& sample, const AttributionMap& attribution,
                                    int channel, double scale) {
    const int S = sample.side;
    RgbImage heat(S, S);
    for (int r = 0; r < S; ++r) {
        for (int c = 0; c < S; ++c) {
            const double gray = sample.at(channel, r, c) * 255.0;
            const double back = 0.30 * gray + 178.0;  // nearly transparent backing
            const double a = attribution.at(channel, r, c);
            const double t = std::min(1.0, std::abs(a) / scale) * 0.85;
            if (a >= 0.0) {
                heat.set(r, c, mix(back, 235, t), mix(back, 64, t), mix(back, 156, t));  // pink
            } else {
                heat.set(r, c, mix(back, 58, t), mix(back, 96, t), mix(back, 235, t));  // blue
            }
        }
    }
    return heat;
}

std::vector<std::string> render_overlays(const data::StackedSample& sample,
                                         const OcclusionResult& occlusion, const AttributionMap& attribution,
                                         const std::string& out_dir, const std::string& prefix) {
    fs::create_directories(out_dir);
    if (attribution.side != sample.side) throw data_error("render", "attribution size mismatch");
    const double scale = attribution_color_scale(attribution);

    std::vector<std::string> files;
    for (int ch = 0; ch < 3; ++ch) {
        const char* vessel = data::vessel_name(static_cast<data::Vessel>(ch));
        std::string f1 = (fs::path(out_dir) / (prefix + "_" + vessel + "_patches.png")).string();
        write_rgb_png(f1, render_patch_overlay(sample, occlusion, ch));
        files.push_back(f1);
        std::string f2 = (fs::path(out_dir) / (prefix + "_" + vessel + "_attribution.png")).string();
        write_rgb_png(f2, render_attribution_overlay(sample, attribution, ch, scale));
        files.push_back(f2);
    }
    return files;
}

}  // namespace cadrads::explain
