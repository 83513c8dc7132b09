// SPDX-License-Identifier: Apache-2.0

#include "cadrads/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cadrads/error.hpp"
#include "cadrads/rng.hpp"

namespace cadrads::eval {

using nlohmann::json;

void PredictionSet::validate() const {
    const int K = num_classes();
    for (const auto& r : rows) {
        if (static_cast<int>(r.probs.size()) != K) {
            throw data_error("predictions", "probability vector length mismatch for " + r.patient_id);
        }
        double s = 0.0;
        for (double p : r.probs) {
            if (p < 0.0) throw data_error("predictions", "negative probability for " + r.patient_id);
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-6) {
            throw data_error("predictions", "probabilities do not sum to 1 for " + r.patient_id);
        }
        if (r.true_label < 0 || r.true_label >= K) {
            throw data_error("predictions", "label out of range for " + r.patient_id);
        }
    }
}

PredictionSet aggregate_per_patient(const PredictionSet& preds) {
    const int K = preds.num_classes();
    std::map<std::string, PredictionRow> acc;
    std::map<std::string, int> counts;
    for (const auto& r : preds.rows) {
        auto [it, fresh] = acc.try_emplace(r.patient_id);
        if (fresh) {
            it->second.patient_id = r.patient_id;
            it->second.view = -1;
            it->second.probs.assign(static_cast<std::size_t>(K), 0.0);
            it->second.true_label = r.true_label;
        } else if (it->second.true_label != r.true_label) {
            throw data_error("aggregate", "inconsistent labels for patient " + r.patient_id);
        }
        for (int k = 0; k < K; ++k) it->second.probs[static_cast<std::size_t>(k)] += r.probs[static_cast<std::size_t>(k)];
        counts[r.patient_id]++;
    }
    PredictionSet out;
    out.task = preds.task;
    for (auto& [id, row] : acc) {
        const double c = counts[id];
        for (auto& p : row.probs) p /= c;
        out.rows.push_back(std::move(row));
    }
    return out;
}

namespace {

// Midranks (1-based, ties averaged).
std::vector<double> midranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    return rank;
}

void split_by_label(const std::vector<double>& scores, const std::vector<int>& labels,
                    std::vector<double>& pos, std::vector<double>& neg) {
    if (scores.size() != labels.size()) throw data_error("auc", "scores/labels length mismatch");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        (labels[i] ? pos : neg).push_back(scores[i]);
    }
    if (pos.empty() || neg.empty()) throw data_error("auc", "OneClassOnly: need both classes");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> pos, neg;
    split_by_label(scores, labels, pos, neg);
    std::vector<double> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    const auto rz = midranks(all);
    const double m = static_cast<double>(pos.size());
    double sum_pos = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) sum_pos += rz[i];
    return (sum_pos - m * (m + 1.0) / 2.0) / (m * static_cast<double>(neg.size()));
}

std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& scores,
                                                 const std::vector<int>& labels) {
    std::vector<double> pos, neg;
    split_by_label(scores, labels, pos, neg);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double P = static_cast<double>(pos.size());
    const double N = static_cast<double>(neg.size());
    std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[idx[k]]) tp += 1.0;
            else fp += 1.0;
        }
        curve.emplace_back(fp / N, tp / P);
        i = j + 1;
    }
    return curve;
}

double trapezoid_area(const std::vector<std::pair<double, double>>& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve[i].first - curve[i - 1].first) * (curve[i].second + curve[i - 1].second) * 0.5;
    }
    return area;
}

MetricValue bootstrap_ci(const PredictionSet& preds,
                         const std::function<double(const PredictionSet&, const std::vector<std::size_t>&)>& metric,
                         const BootstrapOptions& opts) {
    const std::size_t n = preds.rows.size();
    if (n < 2) throw data_error("bootstrap", "need at least 2 rows");

    std::vector<std::size_t> full(n);
    std::iota(full.begin(), full.end(), 0);
    MetricValue out;
    out.point = metric(preds, full);

    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(opts.resamples));
    int skipped = 0;
    std::vector<std::size_t> idx(n);
    for (int r = 0; r < opts.resamples; ++r) {
        Rng rng(Rng::sub_seed(opts.seed, "bootstrap", static_cast<std::uint64_t>(r)));
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::size_t>(rng.index(n));
        const double v = metric(preds, idx);
        if (std::isnan(v)) {
            ++skipped;
            continue;
        }
        values.push_back(v);
    }
    if (skipped > opts.resamples / 10) {
        throw data_error("bootstrap", "DegenerateResample: metric undefined on " + std::to_string(skipped) +
                                          " of " + std::to_string(opts.resamples) + " resamples");
    }
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        if (values.empty()) return out.point;
        const double pos = q * (static_cast<double>(values.size()) - 1.0);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(values.size() - 1, lo + 1);
        const double w = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - w) + values[hi] * w;
    };
    out.lo = quantile(opts.alpha / 2.0);
    out.hi = quantile(1.0 - opts.alpha / 2.0);
    return out;
}

namespace {

int argmax_class(const PredictionRow& r) {
    int arg = 0;
    for (std::size_t k = 1; k < r.probs.size(); ++k) {
        if (r.probs[k] > r.probs[static_cast<std::size_t>(arg)]) arg = static_cast<int>(k);
    }
    return arg;
}

struct ConfusionSlice {
    double tp = 0, fp = 0, fn = 0;
};

ConfusionSlice slice_for_class(const PredictionSet& preds, const std::vector<std::size_t>& idx, int k) {
    ConfusionSlice s;
    for (std::size_t i : idx) {
        const auto& r = preds.rows[i];
        const int pred = argmax_class(r);
        if (pred == k && r.true_label == k) s.tp += 1;
        else if (pred == k) s.fp += 1;
        else if (r.true_label == k) s.fn += 1;
    }
    return s;
}

// Zero-division convention: a class never predicted has precision 0; a
// class absent from the (re)sample leaves recall/AUC undefined (NaN, which
// the bootstrap counts as a skipped resample).
double precision_of(const ConfusionSlice& s) {
    return s.tp + s.fp > 0 ? s.tp / (s.tp + s.fp) : 0.0;
}
double recall_of(const ConfusionSlice& s) {
    return s.tp + s.fn > 0 ? s.tp / (s.tp + s.fn) : std::nan("");
}
double f1_of(const ConfusionSlice& s) {
    const double p = precision_of(s), r = recall_of(s);
    if (std::isnan(r)) return std::nan("");
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

double ovr_auc(const PredictionSet& preds, const std::vector<std::size_t>& idx, int k) {
    std::vector<double> scores;
    std::vector<int> labels;
    bool has_pos = false, has_neg = false;
    for (std::size_t i : idx) {
        const auto& r = preds.rows[i];
        scores.push_back(r.probs[static_cast<std::size_t>(k)]);
        const int l = r.true_label == k ? 1 : 0;
        labels.push_back(l);
        (l ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) return std::nan("");
    return roc_auc(scores, labels);
}

double accuracy_of(const PredictionSet& preds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::nan("");
    std::size_t correct = 0;
    for (std::size_t i : idx) {
        if (argmax_class(preds.rows[i]) == preds.rows[i].true_label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

MetricsReport multiclass_report(const PredictionSet& preds, const std::string& level,
                                const BootstrapOptions& opts) {
    preds.validate();
    const int K = preds.num_classes();
    MetricsReport rep;
    rep.n = static_cast<int>(preds.rows.size());
    rep.level = level;

    rep.accuracy = bootstrap_ci(preds, accuracy_of, opts);

    std::vector<int> supports(static_cast<std::size_t>(K), 0);
    for (const auto& r : preds.rows) supports[static_cast<std::size_t>(r.true_label)]++;

    std::vector<int> valid_classes;
    for (int k = 0; k < K; ++k) {
        if (supports[static_cast<std::size_t>(k)] == 0) {
            rep.warnings.push_back("class " + std::to_string(k) +
                                   " has zero support; excluded from per-class and weighted metrics");
            continue;
        }
        valid_classes.push_back(k);
        ClassMetrics cm;
        cm.klass = k;
        cm.support = supports[static_cast<std::size_t>(k)];
        cm.auc = bootstrap_ci(preds, [k](const PredictionSet& p, const std::vector<std::size_t>& idx) {
            return ovr_auc(p, idx, k);
        }, opts);
        cm.precision = bootstrap_ci(preds, [k](const PredictionSet& p, const std::vector<std::size_t>& idx) {
            return precision_of(slice_for_class(p, idx, k));
        }, opts);
        cm.recall = bootstrap_ci(preds, [k](const PredictionSet& p, const std::vector<std::size_t>& idx) {
            return recall_of(slice_for_class(p, idx, k));
        }, opts);
        cm.f1 = bootstrap_ci(preds, [k](const PredictionSet& p, const std::vector<std::size_t>& idx) {
            return f1_of(slice_for_class(p, idx, k));
        }, opts);
        rep.per_class.push_back(cm);
    }
    if (valid_classes.empty()) throw data_error("report", "no class has support");

    auto weighted_metric = [&valid_classes](const std::function<double(const PredictionSet&, const std::vector<std::size_t>&, int)>& f) {
        return [&valid_classes, f](const PredictionSet& p, const std::vector<std::size_t>& idx) -> double {
            double num = 0.0, den = 0.0;
            for (int k : valid_classes) {
                double support = 0.0;
                for (std::size_t i : idx) {
                    if (p.rows[i].true_label == k) support += 1.0;
                }
                if (support == 0.0) continue;
                const double v = f(p, idx, k);
                if (std::isnan(v)) return std::nan("");
                num += support * v;
                den += support;
            }
            return den > 0.0 ? num / den : std::nan("");
        };
    };

    rep.weighted_avg.klass = -1;
    rep.weighted_avg.support = rep.n;
    rep.weighted_avg.auc = bootstrap_ci(preds, weighted_metric(ovr_auc), opts);
    rep.weighted_avg.precision = bootstrap_ci(
        preds, weighted_metric([](const PredictionSet& p, const std::vector<std::size_t>& idx, int k) {
            return precision_of(slice_for_class(p, idx, k));
        }), opts);
    rep.weighted_avg.recall = bootstrap_ci(
        preds, weighted_metric([](const PredictionSet& p, const std::vector<std::size_t>& idx, int k) {
            return recall_of(slice_for_class(p, idx, k));
        }), opts);
    rep.weighted_avg.f1 = bootstrap_ci(
        preds, weighted_metric([](const PredictionSet& p, const std::vector<std::size_t>& idx, int k) {
            return f1_of(slice_for_class(p, idx, k));
        }), opts);
    return rep;
}

DelongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels) {
    if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size()) {
        throw data_error("delong", "input length mismatch");
    }
    std::vector<std::size_t> pos_idx, neg_idx;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos_idx : neg_idx).push_back(i);
    const std::size_t m = pos_idx.size(), n = neg_idx.size();
    if (m == 0 || n == 0) throw data_error("delong", "OneClassOnly: need both classes");

    DelongResult res;
    // Placement values per classifier (Sun & Xu fast DeLong).
    std::vector<std::vector<double>> v10(2, std::vector<double>(m));
    std::vector<std::vector<double>> v01(2, std::vector<double>(n));
    double aucs[2] = {0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
        const auto& s = c == 0 ? scores_a : scores_b;
        std::vector<double> x(m), y(n), z;
        for (std::size_t i = 0; i < m; ++i) x[i] = s[pos_idx[i]];
        for (std::size_t j = 0; j < n; ++j) y[j] = s[neg_idx[j]];
        z = x;
        z.insert(z.end(), y.begin(), y.end());
        const auto tx = midranks(x);
        const auto ty = midranks(y);
        const auto tz = midranks(z);
        double sum_pos = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            v10[c][i] = (tz[i] - tx[i]) / static_cast<double>(n);
            sum_pos += tz[i];
        }
        for (std::size_t j = 0; j < n; ++j) {
            v01[c][j] = 1.0 - (tz[m + j] - ty[j]) / static_cast<double>(m);
        }
        aucs[c] = (sum_pos - static_cast<double>(m) * (m + 1.0) / 2.0) /
                  (static_cast<double>(m) * static_cast<double>(n));
    }
    res.auc_a = aucs[0];
    res.auc_b = aucs[1];

    auto cov = [](const std::vector<double>& a, const std::vector<double>& b) {
        const std::size_t k = a.size();
        if (k < 2) return 0.0;
        double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(k);
        double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(k);
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += (a[i] - ma) * (b[i] - mb);
        return s / static_cast<double>(k - 1);
    };
    const double var_a = cov(v10[0], v10[0]) / static_cast<double>(m) + cov(v01[0], v01[0]) / static_cast<double>(n);
    const double var_b = cov(v10[1], v10[1]) / static_cast<double>(m) + cov(v01[1], v01[1]) / static_cast<double>(n);
    const double cov_ab = cov(v10[0], v10[1]) / static_cast<double>(m) + cov(v01[0], v01[1]) / static_cast<double>(n);

    const double var_diff = var_a + var_b - 2.0 * cov_ab;
    if (var_diff <= 0.0) {
        res.z = 0.0;
        res.p = 1.0;  // ZeroVariance: identical (or rank-identical) scores
        return res;
    }
    res.z = (res.auc_a - res.auc_b) / std::sqrt(var_diff);
    res.p = 2.0 * (1.0 - normal_cdf(std::abs(res.z)));
    return res;
}

namespace {

json metric_to_json(const MetricValue& m) {
    return json{{"point", m.point}, {"ci95", {m.lo, m.hi}}};
}

json class_to_json(const ClassMetrics& c) {
    json j;
    j["class"] = c.klass;
    j["support"] = c.support;
    j["auc"] = metric_to_json(c.auc);
    j["precision"] = metric_to_json(c.precision);
    j["recall"] = metric_to_json(c.recall);
    j["f1"] = metric_to_json(c.f1);
    return j;
}

}  // namespace

std::string report_to_json(const MetricsReport& rep) {
    json j;
    j["n"] = rep.n;
    j["level"] = rep.level;
    j["accuracy"] = metric_to_json(rep.accuracy);
    j["per_class"] = json::array();
    for (const auto& c : rep.per_class) j["per_class"].push_back(class_to_json(c));
    json w = class_to_json(rep.weighted_avg);
    w.erase("class");
    j["weighted_avg"] = w;
    j["warnings"] = rep.warnings;
    return j.dump(2);
}

std::string report_to_csv(const MetricsReport& rep) {
    std::string out = "class,support,metric,point,ci_lo,ci_hi\n";
    char line[256];
    auto add = [&](const std::string& klass, int support, const char* name, const MetricValue& m) {
        std::snprintf(line, sizeof(line), "%s,%d,%s,%.10g,%.10g,%.10g\n", klass.c_str(), support, name,
                      m.point, m.lo, m.hi);
        out += line;
    };
    add("all", rep.n, "accuracy", rep.accuracy);
    for (const auto& c : rep.per_class) {
        const std::string k = std::to_string(c.klass);
        add(k, c.support, "auc", c.auc);
        add(k, c.support, "precision", c.precision);
        add(k, c.support, "recall", c.recall);
        add(k, c.support, "f1", c.f1);
    }
    add("weighted_avg", rep.weighted_avg.support, "auc", rep.weighted_avg.auc);
    add("weighted_avg", rep.weighted_avg.support, "precision", rep.weighted_avg.precision);
    add("weighted_avg", rep.weighted_avg.support, "recall", rep.weighted_avg.recall);
    add("weighted_avg", rep.weighted_avg.support, "f1", rep.weighted_avg.f1);
    return out;
}

void write_roc_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve) {
    std::ofstream out(path);
    if (!out) throw data_error("roc", "cannot write " + path);
    out << "fpr,tpr\n";
    char line[80];
    for (const auto& [fpr, tpr] : curve) {
        std::snprintf(line, sizeof(line), "%.10g,%.10g\n", fpr, tpr);
        out << line;
    }
}

}  // namespace cadrads::eval
