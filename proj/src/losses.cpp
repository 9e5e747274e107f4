#include "pfadseg/losses.hpp"

#include <cmath>

#include "pfadseg/errors.hpp"
#include "pfadseg/seghead.hpp"

namespace pfadseg::losses {

void LossConfig::validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw ConfigError("loss: gamma must be finite and nonnegative");
    }
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("loss: eps must be finite and >= 0");
}

ag::Var cosine_distance_loss(const FeaturePyramid& teacher, const FeaturePyramid& student) {
    teacher.require_matches(student);
    ag::Var total;
    for (int i = 0; i < 3; ++i) {
        ag::Var sim = ag::sum_channels(cosine_similarity_map(teacher[i], student[i]));
        ag::Var level = ag::affine(ag::mean_all(sim), -1.0, 1.0);
        total = total.defined() ? ag::add(total, level) : level;
    }
    return total;
}

ag::Var focal_loss(const ag::Var& prob, const Tensor& mask, const LossConfig& config) {
    config.validate();
    return ag::focal_loss(prob, mask, config.gamma, config.eps);
}

ag::Var l1_loss(const ag::Var& prob, const Tensor& mask) { return ag::l1_loss(prob, mask); }

SegLoss seg_loss(const ag::Var& prob, const Tensor& mask, const LossConfig& config) {
    SegLoss out;
    out.focal = losses::focal_loss(prob, mask, config);
    out.l1 = losses::l1_loss(prob, mask);
    out.total = ag::add(out.focal, out.l1);
    return out;
}

AnomalyMask downsample_mask(const AnomalyMask& mask, int factor) {
    if (factor <= 0) throw InvalidArgument("downsample_mask: factor must be positive");
    if (mask.height % factor != 0 || mask.width % factor != 0) {
        throw InvalidArgument("downsample_mask: " + std::to_string(mask.height) + "x" +
                              std::to_string(mask.width) + " is not divisible by " +
                              std::to_string(factor));
    }
    AnomalyMask out(mask.height / factor, mask.width / factor);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) out.at(y / factor, x / factor) = 1;
    return out;
}

}  // namespace pfadseg::losses
