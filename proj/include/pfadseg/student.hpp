#pragma once

#include <array>
#include <memory>
#include <vector>

#include "pfadseg/teacher.hpp"

namespace pfadseg {

struct StudentConfig {
    static constexpr std::array<int, 4> kEncoderChannels{64, 128, 256, 512};
    static constexpr int kBlocksPerStage = 2;

    double channel_scale = 1.0;
    bool use_aff = true;
    bool use_pcar = true;
};

/// Denoising student: a PA residual encoder with four stages (strides 4, 8,
/// 16, 32; the 7x7 stem and max pool live in stage one) and a mirrored
/// decoder whose stages upsample bilinearly instead of striding.
///
/// Decoder stage one (32 -> 16) yields SD3, stage two (16 -> 8) yields SD2,
/// stage three (8 -> 4) is an intermediate, and stage four refines at
/// stride 4 to yield SD1. There are no encoder-decoder skips.
class Student : public nn::Module {
public:
    Student(const StudentConfig& config, Rng& rng);

    /// images: N x 3 x H x W in [0, 1], H and W divisible by 32.
    FeaturePyramid forward(const Tensor& images);

    const StudentConfig& config() const { return config_; }
    std::array<int, 3> pyramid_channels() const;

    InputNormalization normalization;

private:
    StudentConfig config_;
    std::array<int, 4> channels_{};
    nn::Conv2d stem_conv_;
    nn::BatchNorm2d stem_bn_;
    std::array<std::vector<std::unique_ptr<nn::PaResidualBlock>>, 4> encoder_;
    std::array<std::vector<std::unique_ptr<nn::PaResidualBlock>>, 4> decoder_;
};

}  // namespace pfadseg
