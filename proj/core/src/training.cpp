// SPDX-License-Identifier: Apache-2.0

#include "cadrads/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cadrads/checkpoint.hpp"
#include "cadrads/error.hpp"

namespace cadrads::train {

namespace fs = std::filesystem;

std::vector<HyperParams> GridSpace::enumerate(const HyperParams& base) const {
    std::vector<HyperParams> out;
    for (double l : lr) {
        for (double d : dropout) {
            for (double wd : weight_decay) {
                for (int de : lr_decay_epoch) {
                    for (double ls : label_smoothing) {
                        HyperParams hp = base;
                        hp.lr = l;
                        hp.lr_after_decay = l / 10.0;
                        hp.dropout = d;
                        hp.weight_decay = wd;
                        hp.lr_decay_epoch = de;
                        hp.label_smoothing = ls;
                        out.push_back(hp);
                    }
                }
            }
        }
    }
    return out;
}

std::vector<double> smooth_labels(int klass, double eps, int K) {
    if (K < 2) throw usage_error("loss", "label smoothing needs K >= 2");
    if (klass < 0 || klass >= K) throw usage_error("loss", "class index out of range");
    std::vector<double> t(static_cast<std::size_t>(K), eps / K);
    t[static_cast<std::size_t>(klass)] += 1.0 - eps;
    return t;
}

std::vector<double> class_weights(const std::vector<int>& labels, int K) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(K), 0);
    for (int y : labels) {
        if (y < 0 || y >= K) throw data_error("loss", "label out of range");
        counts[static_cast<std::size_t>(y)]++;
    }
    for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0) {
            throw data_error("loss", "EmptyClass: class " + std::to_string(k) + " has no samples");
        }
    }
    const double n = static_cast<double>(labels.size());
    std::vector<double> w(static_cast<std::size_t>(K));
    double mean = 0.0;
    for (int k = 0; k < K; ++k) {
        w[static_cast<std::size_t>(k)] = n / (K * static_cast<double>(counts[static_cast<std::size_t>(k)]));
        mean += w[static_cast<std::size_t>(k)];
    }
    mean /= K;
    for (auto& x : w) x /= mean;
    return w;
}

double lr_at(int epoch, const HyperParams& hp) {
    if (epoch < 1) throw usage_error("train", "epochs are 1-based");
    return epoch >= hp.lr_decay_epoch ? hp.lr_after_decay : hp.lr;
}

template <typename T>
LossResult<T> ce_loss(const nn::Tensor<T>& logits, const std::vector<int>& targets,
                      const std::vector<double>& weights, double label_smoothing) {
    const int N = logits.dim(0);
    const int K = logits.dim(1);
    if (static_cast<std::size_t>(N) != targets.size()) {
        throw data_error("loss", "ShapeMismatch: logits rows vs targets");
    }
    if (!weights.empty() && static_cast<int>(weights.size()) != K) {
        throw data_error("loss", "ShapeMismatch: class weights vs classes");
    }

    LossResult<T> out;
    out.grad_logits = nn::Tensor<T>(logits.shape);
    double total = 0.0;
    std::vector<double> p(static_cast<std::size_t>(K));
    for (int i = 0; i < N; ++i) {
        double maxv = -1e300;
        for (int k = 0; k < K; ++k) maxv = std::max(maxv, static_cast<double>(logits.at2(i, k)));
        double denom = 0.0;
        for (int k = 0; k < K; ++k) {
            p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(logits.at2(i, k)) - maxv);
            denom += p[static_cast<std::size_t>(k)];
        }
        for (auto& x : p) x /= denom;

        const auto t = smooth_labels(targets[static_cast<std::size_t>(i)], label_smoothing, K);
        double wt_sum = 0.0;
        for (int k = 0; k < K; ++k) {
            const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(k)];
            const double wtk = w * t[static_cast<std::size_t>(k)];
            wt_sum += wtk;
            total -= wtk * std::log(std::max(p[static_cast<std::size_t>(k)], 1e-300));
        }
        for (int k = 0; k < K; ++k) {
            const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(k)];
            out.grad_logits.at2(i, k) =
                static_cast<T>((wt_sum * p[static_cast<std::size_t>(k)] - w * t[static_cast<std::size_t>(k)]) / N);
        }
    }
    out.loss = total / N;
    if (!std::isfinite(out.loss)) throw numeric_error("loss", "NonFiniteLoss");
    return out;
}

template LossResult<float> ce_loss(const nn::Tensor<float>&, const std::vector<int>&,
                                   const std::vector<double>&, double);
template LossResult<double> ce_loss(const nn::Tensor<double>&, const std::vector<int>&,
                                    const std::vector<double>&, double);

template <typename T>
AdamW<T>::AdamW(nn::ParamList<T>& params) : params_(&params) {
    for (auto& p : params) {
        if (!p.trainable) continue;
        m_.emplace_back(p.value->shape);
        v_.emplace_back(p.value->shape);
    }
}

template <typename T>
void AdamW<T>::step(double lr, double weight_decay) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    std::size_t idx = 0;
    for (auto& p : *params_) {
        if (!p.trainable) continue;
        auto& m = m_[idx];
        auto& v = v_[idx];
        ++idx;
        const double wd = p.weight_decay ? weight_decay : 0.0;
        T* pv = p.value->data();
        const T* g = p.grad->data();
        for (std::size_t i = 0; i < p.value->numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m.v[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v.v[i]) + (1.0 - b2) * gi * gi;
            m.v[i] = static_cast<T>(mi);
            v.v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            pv[i] = static_cast<T>(static_cast<double>(pv[i]) -
                                   lr * (mhat / (std::sqrt(vhat) + eps) + wd * static_cast<double>(pv[i])));
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

namespace {

struct Batch {
    nn::Tensor<float> x;
    std::vector<int> y;
};

Batch make_batch(const std::vector<data::StackedSample>& samples, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end, data::Task task) {
    const int S = samples[order[begin]].side;
    Batch b;
    b.x = nn::Tensor<float>({static_cast<int>(end - begin), 3, S, S});
    for (std::size_t i = begin; i < end; ++i) {
        const auto& s = samples[order[i]];
        std::copy(s.data.begin(), s.data.end(), b.x.data() + (i - begin) * s.data.size());
        b.y.push_back(task == data::Task::Binary ? s.label_binary : s.label_multi);
    }
    return b;
}

struct EvalOutcome {
    double loss = 0.0;
    double acc = 0.0;
};

EvalOutcome evaluate(nn::Network<float>& net, const std::vector<data::StackedSample>& samples,
                     data::Task task, const std::vector<double>& weights, double label_smoothing,
                     int batch_size) {
    if (samples.empty()) return {};
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(samples.size(), at + static_cast<std::size_t>(batch_size));
        Batch b = make_batch(samples, order, at, e, task);
        auto out = net.forward(b.x, nn::Phase::Eval, nullptr);
        auto lr = ce_loss(out.logits, b.y, weights, label_smoothing);
        loss_sum += lr.loss * static_cast<double>(e - at);
        for (std::size_t i = 0; i < b.y.size(); ++i) {
            int arg = 0;
            for (int k = 1; k < out.logits.dim(1); ++k) {
                if (out.logits.at2(static_cast<int>(i), k) > out.logits.at2(static_cast<int>(i), arg)) arg = k;
            }
            if (arg == b.y[i]) ++correct;
        }
    }
    EvalOutcome o;
    o.loss = loss_sum / static_cast<double>(samples.size());
    o.acc = static_cast<double>(correct) / static_cast<double>(samples.size());
    return o;
}

std::vector<float> snapshot_params(nn::ParamList<float>& params) {
    std::vector<float> flat;
    for (auto& p : params) flat.insert(flat.end(), p.value->v.begin(), p.value->v.end());
    return flat;
}

void restore_params(nn::ParamList<float>& params, const std::vector<float>& flat) {
    std::size_t at = 0;
    for (auto& p : params) {
        std::copy(flat.begin() + at, flat.begin() + at + p.value->numel(), p.value->v.begin());
        at += p.value->numel();
    }
}

}  // namespace

TrainRunResult fit(const nn::ModelConfig& config, const FitOptions& opts,
                   const std::vector<data::StackedSample>& train_samples,
                   const std::vector<data::StackedSample>& val_samples) {
    if (train_samples.empty()) throw data_error("train", "no training samples");

    nn::ModelConfig cfg = config;
    cfg.dropout_rate = opts.hp.dropout;
    auto net = nn::build_network<float>(cfg);
    nn::init_params(net->params(), Rng::sub_seed(opts.seed, "init"));

    std::vector<double> weights;
    if (opts.task == data::Task::Multi) {
        std::vector<int> labels;
        for (const auto& s : train_samples) labels.push_back(s.label_multi);
        weights = class_weights(labels, 3);
    }

    AdamW<float> optimizer(net->params());
    TrainRunResult result;
    result.seed = opts.seed;

    std::vector<float> best_params = snapshot_params(net->params());
    result.best_epoch = 0;
    result.best_val_acc = -1.0;

    std::ofstream log;
    if (!opts.run_dir.empty()) {
        fs::create_directories(opts.run_dir);
        log.open(fs::path(opts.run_dir) / "epoch_log.csv");
        log << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
    }

    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);

    const Rng run_rng(opts.seed);
    for (int epoch = 1; epoch <= opts.hp.epochs; ++epoch) {
        const double lr = lr_at(epoch, opts.hp);
        Rng shuffle_rng = run_rng.sub("shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opts.hp.batch_size)) {
            const std::size_t e = std::min(order.size(), at + static_cast<std::size_t>(opts.hp.batch_size));
            // augmentation streams are keyed by (epoch, position) so batch
            // partitioning cannot change them
            std::vector<data::StackedSample> augmented;
            augmented.reserve(e - at);
            for (std::size_t i = at; i < e; ++i) {
                Rng arng = run_rng.sub("augment", static_cast<std::uint64_t>(epoch), i);
                augmented.push_back(data::augment(train_samples[order[i]], arng));
            }
            std::vector<std::size_t> ident(augmented.size());
            std::iota(ident.begin(), ident.end(), 0);
            Batch b = make_batch(augmented, ident, 0, augmented.size(), opts.task);

            Rng drop_rng = run_rng.sub("dropout", static_cast<std::uint64_t>(epoch), batch_index);
            nn::ForwardResult<float> out;
            LossResult<float> lres;
            try {
                out = net->forward(b.x, nn::Phase::Train, &drop_rng);
                lres = ce_loss(out.logits, b.y, weights, opts.hp.label_smoothing);
            } catch (const Error& err) {
                if (err.code() == ErrorCode::Numeric) {
                    throw numeric_error("train", "NonFiniteLoss at epoch " + std::to_string(epoch) +
                                                     ", batch " + std::to_string(batch_index) + ": " + err.what());
                }
                throw;
            }
            loss_sum += lres.loss * static_cast<double>(e - at);
            for (std::size_t i = 0; i < b.y.size(); ++i) {
                int arg = 0;
                for (int k = 1; k < out.logits.dim(1); ++k) {
                    if (out.logits.at2(static_cast<int>(i), k) > out.logits.at2(static_cast<int>(i), arg)) arg = k;
                }
                if (arg == b.y[i]) ++correct;
            }
            nn::zero_grads(net->params());
            net->backward(lres.grad_logits);
            optimizer.step(lr, opts.hp.weight_decay);
            ++batch_index;
        }

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr;
        st.train_loss = loss_sum / static_cast<double>(order.size());
        st.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        EvalOutcome vo = evaluate(*net, val_samples, opts.task, weights, opts.hp.label_smoothing,
                                  opts.hp.batch_size);
        st.val_loss = vo.loss;
        st.val_acc = vo.acc;
        result.epochs.push_back(st);

        if (st.val_acc >= result.best_val_acc) {  // ties -> latest epoch
            result.best_val_acc = st.val_acc;
            result.best_epoch = epoch;
            best_params = snapshot_params(net->params());
        }
        if (log.is_open()) {
            char line[256];
            std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", st.epoch, st.lr,
                          st.train_loss, st.train_acc, st.val_loss, st.val_acc);
            log << line;
        }
        if (opts.verbose) {
            std::fprintf(stderr, "epoch %3d lr %.2g train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                         epoch, lr, st.train_loss, st.train_acc, st.val_loss, st.val_acc);
        }
    }

    restore_params(net->params(), best_params);
    if (result.best_val_acc < 0.0) result.best_val_acc = 0.0;
    if (!opts.run_dir.empty()) {
        result.checkpoint_path = (fs::path(opts.run_dir) / "best.ckpt").string();
        nn::save_checkpoint(result.checkpoint_path, *net, opts.task);
    }
    result.best_network = std::move(net);
    return result;
}

CvResult cross_validate(const nn::ModelConfig& config, const FitOptions& opts,
                        const std::vector<data::StackedSample>& train_samples,
                        const data::SplitAssignment& split) {
    CvResult cv;
    for (int f = 0; f < split.folds; ++f) {
        std::vector<data::StackedSample> tr, va;
        std::set<std::string> val_patients;
        for (const auto& s : train_samples) {
            auto it = split.fold_of.find(s.patient_id);
            if (it == split.fold_of.end()) {
                throw data_error("cv", "sample patient not in training split: " + s.patient_id);
            }
            if (it->second == f) {
                va.push_back(s);
                val_patients.insert(s.patient_id);
            } else {
                tr.push_back(s);
            }
        }
        if (va.empty() || tr.empty()) {
            throw data_error("cv", "fold " + std::to_string(f) + " has an empty side");
        }
        // The fold seed derives from the fold's membership, not its index,
        // so relabeling folds permutes results without changing them.
        std::string members;
        for (const auto& id : val_patients) {
            members += id;
            members += ';';
        }
        FitOptions fo = opts;
        fo.seed = Rng::sub_seed(opts.seed, "fold-" + members);
        if (!opts.run_dir.empty()) {
            fo.run_dir = (fs::path(opts.run_dir) / ("fold" + std::to_string(f))).string();
        }
        TrainRunResult r = fit(config, fo, tr, va);
        cv.fold_val_acc.push_back(r.best_val_acc);
    }
    const double n = static_cast<double>(cv.fold_val_acc.size());
    cv.mean_val_acc = std::accumulate(cv.fold_val_acc.begin(), cv.fold_val_acc.end(), 0.0) / n;
    double var = 0.0;
    for (double a : cv.fold_val_acc) var += (a - cv.mean_val_acc) * (a - cv.mean_val_acc);
    cv.std_val_acc = std::sqrt(var / n);
    return cv;
}

GridSearchResult grid_search(const nn::ModelConfig& config, const GridSpace& space,
                             const FitOptions& opts,
                             const std::vector<data::StackedSample>& train_samples,
                             const data::SplitAssignment& split) {
    auto combos = space.enumerate(opts.hp);
    if (combos.empty()) throw usage_error("grid", "empty grid space");

    GridSearchResult out;
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < combos.size(); ++i) {
        FitOptions fo = opts;
        fo.hp = combos[i];
        fo.run_dir.clear();  // grid cells keep no run directories
        CvResult cv = cross_validate(config, fo, train_samples, split);
        out.table.emplace_back(combos[i], cv);
        const bool better =
            cv.mean_val_acc > best ||
            (cv.mean_val_acc == best &&
             (combos[i].lr < combos[best_idx].lr ||
              (combos[i].lr == combos[best_idx].lr && combos[i].weight_decay > combos[best_idx].weight_decay)));
        if (better) {
            best = cv.mean_val_acc;
            best_idx = i;
        }
    }
    out.best = combos[best_idx];
    return out;
}

void write_grid_table_csv(const std::string& path, const GridSearchResult& result) {
    std::ofstream out(path);
    if (!out) throw data_error("grid", "cannot write " + path);
    out << "lr,dropout,weight_decay,lr_decay_epoch,label_smoothing,mean_val_acc,std_val_acc\n";
    for (const auto& [hp, cv] : result.table) {
        char line[256];
        std::snprintf(line, sizeof(line), "%.10g,%.10g,%.10g,%d,%.10g,%.10g,%.10g\n", hp.lr, hp.dropout,
                      hp.weight_decay, hp.lr_decay_epoch, hp.label_smoothing, cv.mean_val_acc, cv.std_val_acc);
        out << line;
    }
}

}  // namespace cadrads::train
