#pragma once

#include <span>
#include <utility>
#include <vector>

#include "pfadseg/image.hpp"

/// Image-, pixel- and instance-level detection metrics. Every metric is a
/// rank statistic of the scores, so any strictly increasing transform of
/// the maps leaves it unchanged.
namespace pfadseg::metrics {

/// One 8-connected region of a ground-truth mask.
struct Instance {
    std::vector<std::pair<int, int>> pixels;  // (y, x)
    std::size_t size() const { return pixels.size(); }
};

/// 8-connected components, largest first (ties by first pixel in raster
/// order).
std::vector<Instance> connected_components(const AnomalyMask& mask);

/// Mann-Whitney ROC AUC; ties count one half. Throws UndefinedMetric unless
/// both labels occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
double image_auc(std::span<const double> scores, std::span<const int> labels);
/// ROC AUC over every pixel of every map, pooled.
double pixel_auc(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks);

/// Step-wise average precision: sum over distinct descending thresholds of
/// (R_t - R_prev) * P_t. Throws UndefinedMetric without positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);
/// AP over all pixels pooled across images.
double pixel_ap(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks);
/// AP per image, averaged over images that contain positives.
double pixel_ap_per_image(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks);

struct CurvePoint {
    double threshold = 0.0;
    double pixel_precision = 0.0;
    double instance_recall = 0.0;
};

/// One point per distinct score (descending). A pixel is positive when its
/// score is >= the threshold; an instance is detected when strictly more
/// than half of its pixels are positive. Throws UndefinedMetric when the
/// masks contain no instance.
std::vector<CurvePoint> iap_curve(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks);

/// Step integration of precision over instance recall.
double iap(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks);
double iap_from_curve(std::span<const CurvePoint> curve);
/// Highest precision among curve points with instance recall >= k/100.
double iap_at_k(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks, double k = 90.0);
double iap_at_k_from_curve(std::span<const CurvePoint> curve, double k = 90.0);

/// Per-region overlap averaged over regions, integrated (trapezoid) against
/// the pooled false-positive rate from the first curve point up to
/// `fpr_limit` and divided by `fpr_limit`. Curve points are the distinct
/// scores in descending order with no synthetic (0, 0) origin, so an
/// uninformative constant map scores 0.
double pro_score(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks,
                 double fpr_limit = 0.3);

}  // namespace pfadseg::metrics
