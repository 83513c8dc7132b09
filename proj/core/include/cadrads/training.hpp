// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cadrads/manifest.hpp"
#include "cadrads/model.hpp"
#include "cadrads/samples.hpp"
#include "cadrads/split.hpp"

namespace cadrads::train {

struct HyperParams {
    double lr = 1e-4;
    int lr_decay_epoch = 30;
    double lr_after_decay = 1e-5;
    double dropout = 0.5;
    double weight_decay = 0.1;
    double label_smoothing = 0.1;
    int epochs = 50;
    int batch_size = 16;
};

struct GridSpace {
    std::vector<double> lr{1e-3, 1e-4, 1e-5};
    std::vector<double> dropout{0.1, 0.3, 0.5};
    std::vector<double> weight_decay{1e-1, 1e-2};
    std::vector<int> lr_decay_epoch{20, 30};
    std::vector<double> label_smoothing{0.1, 0.2};

    // Cartesian product in field order; deterministic enumeration.
    std::vector<HyperParams> enumerate(const HyperParams& base) const;
};

// (1-eps)*one_hot + eps/K
std::vector<double> smooth_labels(int klass, double eps, int K);

// w_k = N/(K*n_k), normalized to mean 1. Throws EmptyClass.
std::vector<double> class_weights(const std::vector<int>& labels, int K);

// Step decay: hp.lr before lr_decay_epoch, hp.lr_after_decay from it on.
// Epochs are 1-based.
double lr_at(int epoch, const HyperParams& hp);

template <typename T>
struct LossResult {
    double loss = 0.0;
    nn::Tensor<T> grad_logits;
};

// Cross-entropy over softmax with label smoothing; optional per-class
// weights (normalized to mean 1 upstream); batch-mean reduction.
template <typename T>
LossResult<T> ce_loss(const nn::Tensor<T>& logits, const std::vector<int>& targets,
                      const std::vector<double>& weights, double label_smoothing);

// Decoupled weight decay; beta1=0.9, beta2=0.999, eps=1e-8. Parameters
// flagged weight_decay=false (norm affines, relative bias tables) skip the
// decay term.
template <typename T>
class AdamW {
public:
    explicit AdamW(nn::ParamList<T>& params);
    void step(double lr, double weight_decay);
    int steps_taken() const { return t_; }

private:
    nn::ParamList<T>* params_;
    std::vector<nn::Tensor<T>> m_, v_;
    int t_ = 0;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainRunResult {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;  // 0 = initial parameters
    double best_val_acc = 0.0;
    std::uint64_t seed = 0;
    std::unique_ptr<nn::Network<float>> best_network;
    std::string checkpoint_path;  // set when run_dir was given
};

struct FitOptions {
    data::Task task = data::Task::Binary;
    HyperParams hp;
    std::uint64_t seed = 0;
    std::string run_dir;  // empty: keep artifacts in memory only
    bool verbose = false;
};

// Epoch loop: shuffle -> augment -> forward -> loss -> backward -> AdamW.
// Keeps the checkpoint with the best validation accuracy (ties: latest).
TrainRunResult fit(const nn::ModelConfig& config, const FitOptions& opts,
                   const std::vector<data::StackedSample>& train_samples,
                   const std::vector<data::StackedSample>& val_samples);

struct CvResult {
    std::vector<double> fold_val_acc;
    double mean_val_acc = 0.0;
    double std_val_acc = 0.0;
};

// One fit per fold: train on the other folds, validate on the held-out one.
CvResult cross_validate(const nn::ModelConfig& config, const FitOptions& opts,
                        const std::vector<data::StackedSample>& train_samples,
                        const data::SplitAssignment& split);

struct GridSearchResult {
    HyperParams best;
    std::vector<std::pair<HyperParams, CvResult>> table;
};

// Exhaustive search over the space; argmax of mean validation accuracy.
// Ties break toward lower lr, then higher weight decay, then order.
GridSearchResult grid_search(const nn::ModelConfig& config, const GridSpace& space,
                             const FitOptions& opts,
                             const std::vector<data::StackedSample>& train_samples,
                             const data::SplitAssignment& split);

void write_grid_table_csv(const std::string& path, const GridSearchResult& result);

}  // namespace cadrads::train
