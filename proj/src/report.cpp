#include "pfadseg/report.hpp"

#include <charconv>
#include <functional>
#include <json.hpp>

#include "pfadseg/errors.hpp"
#include "pfadseg/metrics.hpp"

namespace pfadseg {

const std::vector<std::string> kReportColumns{
    "category", "n_images", "n_anomalous", "image_auc", "pixel_auc", "pixel_ap",
    "pixel_ap_per_image", "pro", "iap", "iap_at_90"};

namespace {

using Field = std::optional<double> CategoryMetrics::*;

const std::vector<std::pair<std::string, Field>>& metric_fields() {
    static const std::vector<std::pair<std::string, Field>> fields{
        {"image_auc", &CategoryMetrics::image_auc},
        {"pixel_auc", &CategoryMetrics::pixel_auc},
        {"pixel_ap", &CategoryMetrics::pixel_ap},
        {"pixel_ap_per_image", &CategoryMetrics::pixel_ap_per_image},
        {"pro", &CategoryMetrics::pro},
        {"iap", &CategoryMetrics::iap},
        {"iap_at_90", &CategoryMetrics::iap_at_90},
    };
    return fields;
}

void attempt(CategoryMetrics& m, const std::string& name, Field field, const std::function<double()>& fn) {
    try {
        m.*field = fn();
    } catch (const UndefinedMetric& e) {
        m.undefined[name] = e.what();
    }
}

std::string cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, *v);
    return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

nlohmann::json row_json(const CategoryMetrics& m) {
    nlohmann::json j;
    j["category"] = m.category;
    j["n_images"] = m.n_images;
    j["n_anomalous"] = m.n_anomalous;
    for (const auto& [name, field] : metric_fields()) {
        j[name] = (m.*field) ? nlohmann::json(*(m.*field)) : nlohmann::json(nullptr);
    }
    if (!m.undefined.empty()) j["undefined"] = m.undefined;
    return j;
}

}  // namespace

CategoryMetrics compute_metrics(const std::string& category, const EvaluationInput& in, double pro_fpr_limit) {
    const std::size_t n = in.maps.size();
    if (in.masks.size() != n || in.scores.size() != n || in.labels.size() != n) {
        throw InvalidArgument("compute_metrics: maps, masks, scores and labels differ in length");
    }
    CategoryMetrics m;
    m.category = category;
    m.n_images = static_cast<int>(n);
    for (int l : in.labels) m.n_anomalous += l ? 1 : 0;
    attempt(m, "image_auc", &CategoryMetrics::image_auc, [&] { return metrics::image_auc(in.scores, in.labels); });
    attempt(m, "pixel_auc", &CategoryMetrics::pixel_auc, [&] { return metrics::pixel_auc(in.maps, in.masks); });
    attempt(m, "pixel_ap", &CategoryMetrics::pixel_ap, [&] { return metrics::pixel_ap(in.maps, in.masks); });
    attempt(m, "pixel_ap_per_image", &CategoryMetrics::pixel_ap_per_image,
            [&] { return metrics::pixel_ap_per_image(in.maps, in.masks); });
    attempt(m, "pro", &CategoryMetrics::pro, [&] { return metrics::pro_score(in.maps, in.masks, pro_fpr_limit); });
    std::vector<metrics::CurvePoint> curve;
    attempt(m, "iap", &CategoryMetrics::iap, [&] {
        curve = metrics::iap_curve(in.maps, in.masks);
        return metrics::iap_from_curve(curve);
    });
    if (m.iap) {
        attempt(m, "iap_at_90", &CategoryMetrics::iap_at_90,
                [&] { return metrics::iap_at_k_from_curve(curve, 90.0); });
    } else {
        m.undefined["iap_at_90"] = m.undefined["iap"];
    }
    return m;
}

CategoryMetrics MetricReport::mean() const {
    CategoryMetrics out;
    out.category = "mean";
    for (const auto& c : categories) {
        out.n_images += c.n_images;
        out.n_anomalous += c.n_anomalous;
    }
    for (const auto& [name, field] : metric_fields()) {
        double sum = 0.0;
        int count = 0;
        for (const auto& c : categories) {
            if (c.*field) {
                sum += *(c.*field);
                ++count;
            }
        }
        if (count > 0) out.*field = sum / count;
        else out.undefined[name] = "undefined in every category";
    }
    return out;
}

std::string MetricReport::to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < kReportColumns.size(); ++i) out += (i ? "," : "") + kReportColumns[i];
    out += "\n";
    auto row = [&](const CategoryMetrics& m) {
        out += csv_escape(m.category) + "," + std::to_string(m.n_images) + "," + std::to_string(m.n_anomalous);
        for (const auto& [name, field] : metric_fields()) out += "," + cell(m.*field);
        out += "\n";
    };
    for (const auto& c : categories) row(c);
    row(mean());
    return out;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["columns"] = kReportColumns;
    j["categories"] = nlohmann::json::array();
    for (const auto& c : categories) j["categories"].push_back(row_json(c));
    j["mean"] = row_json(mean());
    return j.dump(2) + "\n";
}

}  // namespace pfadseg
