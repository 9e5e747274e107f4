#include "pfadseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pfadseg/errors.hpp"

namespace pfadseg::metrics {

namespace {

int find_root(std::vector<int>& parent, int x) {
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

void unite(std::vector<int>& parent, int a, int b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a == b) return;
    if (a < b) parent[b] = a;
    else parent[a] = b;
}

void check_pairs(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    if (maps.size() != masks.size()) {
        throw InvalidArgument("metrics: " + std::to_string(maps.size()) + " maps but " +
                              std::to_string(masks.size()) + " masks");
    }
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].height != masks[i].height || maps[i].width != masks[i].width) {
            throw InvalidArgument("metrics: map/mask " + std::to_string(i) + " dimensions differ");
        }
    }
}

struct Pooled {
    std::vector<double> scores;
    std::vector<int> labels;
};

Pooled pool(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    check_pairs(maps, masks);
    Pooled p;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        p.scores.insert(p.scores.end(), maps[i].data.begin(), maps[i].data.end());
        for (std::uint8_t v : masks[i].data) p.labels.push_back(v ? 1 : 0);
    }
    return p;
}

/// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

}  // namespace

std::vector<Instance> connected_components(const AnomalyMask& mask) {
    const int h = mask.height;
    const int w = mask.width;
    std::vector<int> parent(static_cast<std::size_t>(h) * w);
    std::iota(parent.begin(), parent.end(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const int i = y * w + x;
            // Previously visited neighbours: W, NW, N, NE.
            if (x > 0 && mask.at(y, x - 1)) unite(parent, i, i - 1);
            if (y > 0) {
                if (x > 0 && mask.at(y - 1, x - 1)) unite(parent, i, i - w - 1);
                if (mask.at(y - 1, x)) unite(parent, i, i - w);
                if (x + 1 < w && mask.at(y - 1, x + 1)) unite(parent, i, i - w + 1);
            }
        }
    }
    std::vector<int> slot(parent.size(), -1);
    std::vector<Instance> out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const int root = find_root(parent, y * w + x);
            if (slot[root] < 0) {
                slot[root] = static_cast<int>(out.size());
                out.emplace_back();
            }
            out[slot[root]].pixels.emplace_back(y, x);
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Instance& a, const Instance& b) { return a.size() > b.size(); });
    return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: length mismatch");
    double n_pos = 0.0;
    for (int l : labels) n_pos += l ? 1.0 : 0.0;
    const double n_neg = static_cast<double>(labels.size()) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) {
        throw UndefinedMetric("AUC needs both positive and negative samples");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        // Ranks i+1 .. j share their average.
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) rank_sum += mid_rank;
        }
        i = j;
    }
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double image_auc(std::span<const double> scores, std::span<const int> labels) {
    return roc_auc(scores, labels);
}

double pixel_auc(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    const Pooled p = pool(maps, masks);
    return roc_auc(p.scores, p.labels);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InvalidArgument("average_precision: length mismatch");
    double n_pos = 0.0;
    for (int l : labels) n_pos += l ? 1.0 : 0.0;
    if (n_pos == 0.0) throw UndefinedMetric("AP needs at least one positive pixel");
    const auto idx = descending_order(scores);
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == t) {
            (labels[idx[i]] ? tp : fp) += 1.0;
            ++i;
        }
        const double recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    return ap;
}

double pixel_ap(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    const Pooled p = pool(maps, masks);
    return average_precision(p.scores, p.labels);
}

double pixel_ap_per_image(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    check_pairs(maps, masks);
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (masks[i].count() == 0) continue;
        sum += pixel_ap(maps.subspan(i, 1), masks.subspan(i, 1));
        ++count;
    }
    if (count == 0) throw UndefinedMetric("per-image AP needs an image with positive pixels");
    return sum / count;
}

std::vector<CurvePoint> iap_curve(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    const Pooled p = pool(maps, masks);
    // Score at which each instance becomes detected: its m-th largest pixel
    // score, m = floor(size / 2) + 1.
    std::vector<double> detect_at;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        for (const Instance& inst : connected_components(masks[i])) {
            std::vector<double> s;
            s.reserve(inst.size());
            for (auto [y, x] : inst.pixels) s.push_back(maps[i].at(y, x));
            const std::size_t m = inst.size() / 2 + 1;
            std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(m - 1), s.end(),
                             std::greater<>());
            detect_at.push_back(s[m - 1]);
        }
    }
    if (detect_at.empty()) throw UndefinedMetric("IAP needs at least one ground-truth instance");
    std::sort(detect_at.begin(), detect_at.end(), std::greater<>());
    const double n_inst = static_cast<double>(detect_at.size());

    const auto idx = descending_order(p.scores);
    std::vector<CurvePoint> curve;
    double tp = 0.0, fp = 0.0;
    std::size_t detected = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double t = p.scores[idx[i]];
        while (i < idx.size() && p.scores[idx[i]] == t) {
            (p.labels[idx[i]] ? tp : fp) += 1.0;
            ++i;
        }
        while (detected < detect_at.size() && detect_at[detected] >= t) ++detected;
        curve.push_back({t, tp / (tp + fp), static_cast<double>(detected) / n_inst});
    }
    return curve;
}

double iap_from_curve(std::span<const CurvePoint> curve) {
    double area = 0.0, prev = 0.0;
    for (const auto& pt : curve) {
        area += (pt.instance_recall - prev) * pt.pixel_precision;
        prev = pt.instance_recall;
    }
    return area;
}

double iap(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks) {
    return iap_from_curve(iap_curve(maps, masks));
}

double iap_at_k_from_curve(std::span<const CurvePoint> curve, double k) {
    // Recalls are ratios of small integers; the slack absorbs the rounding
    // of e.g. 29/100 against 0.29.
    const double target = k / 100.0 - 1e-12;
    double best = -1.0;
    double max_recall = 0.0;
    for (const auto& pt : curve) {
        max_recall = std::max(max_recall, pt.instance_recall);
        if (pt.instance_recall >= target) best = std::max(best, pt.pixel_precision);
    }
    if (best < 0.0) {
        throw UndefinedMetric("instance recall never reaches " + std::to_string(k) +
                              "%; maximum achieved " + std::to_string(100.0 * max_recall) + "%");
    }
    return best;
}

double iap_at_k(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks, double k) {
    return iap_at_k_from_curve(iap_curve(maps, masks), k);
}

double pro_score(std::span<const ProbMap> maps, std::span<const AnomalyMask> masks, double fpr_limit) {
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) {
        throw InvalidArgument("pro_score: fpr_limit must lie in (0, 1]");
    }
    const Pooled p = pool(maps, masks);
    // Region id per pooled pixel, -1 for background.
    std::vector<int> region(p.scores.size(), -1);
    std::vector<double> region_size;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        for (const Instance& inst : connected_components(masks[i])) {
            for (auto [y, x] : inst.pixels) {
                region[offset + static_cast<std::size_t>(y) * masks[i].width + x] =
                    static_cast<int>(region_size.size());
            }
            region_size.push_back(static_cast<double>(inst.size()));
        }
        offset += masks[i].data.size();
    }
    const double n_neg = static_cast<double>(std::count(region.begin(), region.end(), -1));
    if (region_size.empty() || n_neg == 0.0) {
        throw UndefinedMetric("PRO needs both anomalous regions and normal pixels");
    }
    const double n_regions = static_cast<double>(region_size.size());
    std::vector<double> overlap(region_size.size(), 0.0);

    const auto idx = descending_order(p.scores);
    std::vector<std::pair<double, double>> points;  // (fpr, pro)
    double fp = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double t = p.scores[idx[i]];
        while (i < idx.size() && p.scores[idx[i]] == t) {
            const int r = region[idx[i]];
            if (r < 0) fp += 1.0;
            else overlap[r] += 1.0;
            ++i;
        }
        double pro = 0.0;
        for (std::size_t r = 0; r < overlap.size(); ++r) pro += overlap[r] / region_size[r];
        points.emplace_back(fp / n_neg, pro / n_regions);
    }

    double area = 0.0;
    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
        const auto [x0, y0] = points[k];
        const auto [x1, y1] = points[k + 1];
        if (x0 >= fpr_limit) break;
        if (x1 <= fpr_limit) {
            area += 0.5 * (y0 + y1) * (x1 - x0);
        } else {
            const double y_lim = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            area += 0.5 * (y0 + y_lim) * (fpr_limit - x0);
            break;
        }
    }
    return area / fpr_limit;
}

}  // namespace pfadseg::metrics
