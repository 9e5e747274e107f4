#include "pfadseg/student.hpp"

#include "pfadseg/errors.hpp"

namespace pfadseg {

namespace {

nn::ConvOptions stem(int out) { return {3, out, 7, 7, {2, 2, 3, 3}, false, nn::Init::KaimingOut}; }

}  // namespace

Student::Student(const StudentConfig& config, Rng& rng)
    : nn::Module("student"),
      config_(config),
      channels_{scaled_channels(StudentConfig::kEncoderChannels[0], config.channel_scale),
                scaled_channels(StudentConfig::kEncoderChannels[1], config.channel_scale),
                scaled_channels(StudentConfig::kEncoderChannels[2], config.channel_scale),
                scaled_channels(StudentConfig::kEncoderChannels[3], config.channel_scale)},
      stem_conv_(stem(channels_[0]), rng),
      stem_bn_(channels_[0]) {
    register_module("encoder.block1.stem.conv", stem_conv_);
    register_module("encoder.block1.stem.bn", stem_bn_);

    auto add_stage = [&](std::vector<std::unique_ptr<nn::PaResidualBlock>>& stage,
                         const std::string& path, int in, int out, int first_stride) {
        for (int b = 0; b < StudentConfig::kBlocksPerStage; ++b) {
            nn::BlockConfig cfg{b == 0 ? in : out, out, b == 0 ? first_stride : 1, config.use_aff,
                                config.use_pcar};
            stage.push_back(std::make_unique<nn::PaResidualBlock>(cfg, rng));
            register_module(path + "." + std::to_string(b), *stage.back());
        }
    };
    add_stage(encoder_[0], "encoder.block1", channels_[0], channels_[0], 1);
    add_stage(encoder_[1], "encoder.block2", channels_[0], channels_[1], 2);
    add_stage(encoder_[2], "encoder.block3", channels_[1], channels_[2], 2);
    add_stage(encoder_[3], "encoder.block4", channels_[2], channels_[3], 2);
    add_stage(decoder_[0], "decoder.block1", channels_[3], channels_[2], 1);
    add_stage(decoder_[1], "decoder.block2", channels_[2], channels_[1], 1);
    add_stage(decoder_[2], "decoder.block3", channels_[1], channels_[0], 1);
    add_stage(decoder_[3], "decoder.block4", channels_[0], channels_[0], 1);
}

std::array<int, 3> Student::pyramid_channels() const {
    return {channels_[0], channels_[1], channels_[2]};
}

FeaturePyramid Student::forward(const Tensor& images) {
    const Shape& s = images.shape();
    if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
        throw InvalidArgument("student input must have dimensions divisible by 32, got " + s.str());
    }
    ag::Var x = ag::constant(normalization.apply(images));
    x = ag::relu(stem_bn_.forward(stem_conv_.forward(x)));
    x = ag::max_pool(x, 3, 2, 1);
    for (auto& stage : encoder_) {
        for (auto& block : stage) x = block->forward(x);
    }
    FeaturePyramid out;
    for (int d = 0; d < 4; ++d) {
        if (d < 3) x = ag::upsample_bilinear(x, x.shape().h * 2, x.shape().w * 2);
        for (auto& block : decoder_[d]) x = block->forward(x);
        if (d == 0) out.levels[2] = x;
        if (d == 1) out.levels[1] = x;
        if (d == 3) out.levels[0] = x;
    }
    return out;
}

}  // namespace pfadseg
