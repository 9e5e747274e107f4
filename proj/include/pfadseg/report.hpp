#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfadseg/image.hpp"

namespace pfadseg {

/// Scores of one category. A metric is empty when it is undefined for the
/// data (for example pixel AP without anomalous pixels); the reason is kept
/// in `undefined`.
struct CategoryMetrics {
    std::string category;
    int n_images = 0;
    int n_anomalous = 0;
    std::optional<double> image_auc;
    std::optional<double> pixel_auc;
    std::optional<double> pixel_ap;
    std::optional<double> pixel_ap_per_image;
    std::optional<double> pro;
    std::optional<double> iap;
    std::optional<double> iap_at_90;
    std::map<std::string, std::string> undefined;
};

/// Per-image results of one category, everything at input resolution.
struct EvaluationInput {
    std::vector<ProbMap> maps;
    std::vector<AnomalyMask> masks;  // all-zero for normal images
    std::vector<double> scores;
    std::vector<int> labels;         // 1 = anomalous
};

CategoryMetrics compute_metrics(const std::string& category, const EvaluationInput& input,
                                double pro_fpr_limit = 0.3);

/// CSV columns, in order. The schema is fixed; new columns are only ever
/// appended.
extern const std::vector<std::string> kReportColumns;

struct MetricReport {
    std::vector<CategoryMetrics> categories;

    /// Per-metric mean over categories where it is defined.
    CategoryMetrics mean() const;
    /// One row per category followed by a "mean" row; undefined cells empty.
    std::string to_csv() const;
    /// {"columns": [...], "categories": [...], "mean": {...}}; undefined
    /// metrics are null with the reason under "undefined".
    std::string to_json() const;
};

}  // namespace pfadseg
