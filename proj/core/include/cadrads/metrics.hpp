// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cadrads/manifest.hpp"

namespace cadrads::eval {

struct PredictionRow {
    std::string patient_id;
    int view = -1;  // -1 after per-patient aggregation
    std::vector<double> probs;
    int true_label = 0;
};

struct PredictionSet {
    data::Task task = data::Task::Binary;
    std::vector<PredictionRow> rows;

    int num_classes() const { return data::num_classes(task); }
    void validate() const;  // probs nonnegative, sum to 1 within 1e-6
};

// Mean of per-image probability vectors per patient; the predicted class
// is the argmax of the mean. Rows come back sorted by patient id.
PredictionSet aggregate_per_patient(const PredictionSet& preds);

// Mann-Whitney AUC with tied scores counted 1/2. Throws OneClassOnly.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// All distinct thresholds; starts at (0,0), ends at (1,1).
std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& scores,
                                                 const std::vector<int>& labels);

double trapezoid_area(const std::vector<std::pair<double, double>>& curve);

struct MetricValue {
    double point = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

struct ClassMetrics {
    int klass = 0;
    int support = 0;
    MetricValue auc, precision, recall, f1;
};

struct MetricsReport {
    int n = 0;
    std::string level;  // "per_image" | "per_patient"
    MetricValue accuracy;
    std::vector<ClassMetrics> per_class;
    ClassMetrics weighted_avg;  // support-weighted mean over classes
    std::vector<std::string> warnings;
};

// Percentile bootstrap over rows (which are patients after aggregation).
// metric returns NaN when undefined on a resample; >10% skips fail.
struct BootstrapOptions {
    int resamples = 2000;
    std::uint64_t seed = 0;
    double alpha = 0.05;
};

MetricValue bootstrap_ci(const PredictionSet& preds,
                         const std::function<double(const PredictionSet&, const std::vector<std::size_t>&)>& metric,
                         const BootstrapOptions& opts);

// Per-class one-vs-rest AUC/precision/recall/F1 with bootstrap CIs.
MetricsReport multiclass_report(const PredictionSet& preds, const std::string& level,
                                const BootstrapOptions& opts);

struct DelongResult {
    double auc_a = 0.0;
    double auc_b = 0.0;
    double z = 0.0;
    double p = 1.0;
};

// Fast paired DeLong via midrank placement values.
DelongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels);

std::string report_to_json(const MetricsReport& report);
std::string report_to_csv(const MetricsReport& report);
void write_roc_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve);

}  // namespace cadrads::eval
