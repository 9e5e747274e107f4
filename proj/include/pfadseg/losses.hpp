#pragma once

#include "pfadseg/image.hpp"
#include "pfadseg/teacher.hpp"

namespace pfadseg::losses {

struct LossConfig {
    double gamma = 4.0;  // focal focusing parameter
    double eps = 1e-7;   // log stabilizer

    void validate() const;
};

/// Sum over the three levels of the mean per-position cosine distance
/// 1 - sum_c X(j, k)_c, averaged over the batch. Lies in [0, 6].
ag::Var cosine_distance_loss(const FeaturePyramid& teacher, const FeaturePyramid& student);

/// Focal loss on probabilities; `mask` is N x 1 x h x w of 0/1.
ag::Var focal_loss(const ag::Var& prob, const Tensor& mask, const LossConfig& config = {});
ag::Var l1_loss(const ag::Var& prob, const Tensor& mask);

struct SegLoss {
    ag::Var total;
    ag::Var focal;
    ag::Var l1;
};

/// focal + L1.
SegLoss seg_loss(const ag::Var& prob, const Tensor& mask, const LossConfig& config = {});

/// Block reduction by `factor`: an output pixel is 1 when any pixel of its
/// factor x factor block is 1.
AnomalyMask downsample_mask(const AnomalyMask& mask, int factor = 4);

}  // namespace pfadseg::losses
