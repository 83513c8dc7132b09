// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cadrads/image.hpp"
#include "cadrads/model.hpp"
#include "cadrads/samples.hpp"

namespace cadrads::explain {

struct OcclusionPatch {
    int row = 0;
    int col = 0;
    double score_drop = 0.0;
};

struct OcclusionResult {
    int patch_size = 0;
    int top_class = 0;
    double top_prob = 0.0;
    std::vector<std::vector<OcclusionPatch>> per_channel;  // 3 ranked lists
};

struct OcclusionOptions {
    int patch = 80;
    int stride = 16;
    int top_k = 3;
    float mask_value = 0.0f;
    double max_overlap = 0.25;  // greedy suppression threshold
};

// Slides the mask over one channel at a time (other channels intact) and
// ranks positions by the drop of the original top-class probability.
OcclusionResult occlusion_patches(nn::Network<float>& net, const data::StackedSample& sample,
                                  const OcclusionOptions& opts);

// Differentiable scalar model output; lets tests plug closed-form scorers.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual int input_numel() const = 0;
    virtual double value(const std::vector<float>& x) = 0;
    // Returns f(x) and writes df/dx into grad (same length as x).
    virtual double value_and_grad(const std::vector<float>& x, std::vector<float>& grad) = 0;
};

// Target-class logit of a network, differentiated through to the input.
class NetworkScorer : public Scorer {
public:
    NetworkScorer(nn::Network<float>& net, int target_class)
        : net_(&net), target_(target_class) {}
    int input_numel() const override;
    double value(const std::vector<float>& x) override;
    double value_and_grad(const std::vector<float>& x, std::vector<float>& grad) override;

private:
    nn::Network<float>* net_;
    int target_;
};

struct AttributionMap {
    int side = 0;
    int target_class = 0;
    std::vector<double> values;  // 3 x side x side, signed
    double convergence_gap = 0.0;

    double at(int ch, int r, int c) const {
        return values[(static_cast<std::size_t>(ch) * side + r) * side + c];
    }
};

struct ExpectedGradientsOptions {
    int m_steps = 64;
    std::uint64_t seed = 0;
};

// Mean over draws of (x - b) * grad f(b + a (x - b)), b uniform over the
// background set, a uniform in (0,1). Kahan-compensated accumulation.
AttributionMap expected_gradients(Scorer& scorer, const std::vector<float>& input, int side,
                                  const std::vector<std::vector<float>>& background,
                                  int target_class, const ExpectedGradientsOptions& opts);

void save_attribution(const std::string& prefix, const AttributionMap& map);
AttributionMap load_attribution(const std::string& prefix);

struct PatientEmbeddings {
    std::vector<std::string> patient_ids;  // sorted
    std::vector<int> labels;
    int dim = 0;
    std::vector<double> values;  // n x dim row-major
};

// Per-patient arithmetic mean of per-image pooled embeddings.
PatientEmbeddings export_embeddings(nn::Network<float>& net,
                                    const std::vector<data::StackedSample>& samples, data::Task task,
                                    int batch_size = 16);

void save_embeddings_csv(const std::string& path, const PatientEmbeddings& emb);
PatientEmbeddings load_embeddings_csv(const std::string& path);

struct TsneOptions {
    double perplexity = 30.0;
    int iters = 1000;
    std::uint64_t seed = 0;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
};

struct Embedding2D {
    std::vector<double> xy;  // n x 2
    double initial_kl = 0.0;
    double final_kl = 0.0;
    double used_perplexity = 0.0;
    bool perplexity_reduced = false;
};

// Exact t-SNE: per-point Gaussian bandwidth by bisection, symmetrized P,
// Student-t Q, plain momentum gradient descent.
Embedding2D tsne(const std::vector<double>& data, int n, int dim, const TsneOptions& opts);

void save_tsne_csv(const std::string& path, const PatientEmbeddings& emb, const Embedding2D& coords);

// One channel as grayscale with dashed top-k patch rectangles.
RgbImage render_patch_overlay(const data::StackedSample& sample, const OcclusionResult& occlusion,
                              int channel);

// Diverging pink/blue attribution overlay on a faded grayscale backing;
// color scale symmetric at the given 99th-percentile magnitude.
RgbImage render_attribution_overlay(const data::StackedSample& sample, const AttributionMap& attribution,
                                    int channel, double scale);

double attribution_color_scale(const AttributionMap& attribution);  // 99th percentile of |values|

// Writes, per channel, a dashed-rectangle patch overlay and a diverging
// pink/blue attribution overlay on a faded grayscale backing.
std::vector<std::string> render_overlays(const data::StackedSample& sample,
                                         const OcclusionResult& occlusion, const AttributionMap& attribution,
                                         const std::string& out_dir, const std::string& prefix);

}  // namespace cadrads::explain
