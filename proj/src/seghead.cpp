#include "pfadseg/seghead.hpp"

#include <algorithm>
#include <functional>

#include "pfadseg/errors.hpp"

namespace pfadseg {

ag::Var cosine_similarity_map(const ag::Var& ft, const ag::Var& fs, double eps) {
    return ag::cosine_similarity(ft, fs, eps);
}

ag::Var build_seg_input(const FeaturePyramid& teacher, const FeaturePyramid& student) {
    teacher.require_matches(student);
    const int h = teacher[0].shape().h;
    const int w = teacher[0].shape().w;
    std::array<ag::Var, 3> parts;
    for (int i = 0; i < 3; ++i) {
        ag::Var sim = cosine_similarity_map(teacher[i], student[i]);
        parts[i] = i == 0 ? sim : ag::upsample_bilinear(sim, h, w);
    }
    return ag::concat_channels(parts);
}

namespace {

nn::ConvOptions head_conv(int in) {
    nn::ConvOptions o = nn::conv1x1(in, 1, 1, true);
    o.init = nn::Init::Default;
    return o;
}

}  // namespace

SegHead::SegHead(const SegHeadConfig& config, Rng& rng)
    : nn::Module("seg_head"),
      config_(config),
      block1_({config.in_channels, scaled_channels(SegHeadConfig::kBlock1Channels, config.channel_scale),
               1, config.use_aff, config.use_pcar},
              rng),
      block2_({scaled_channels(SegHeadConfig::kBlock1Channels, config.channel_scale),
               scaled_channels(SegHeadConfig::kBlock2Channels, config.channel_scale), 1,
               config.use_aff, config.use_pcar},
              rng),
      head_(head_conv(scaled_channels(SegHeadConfig::kBlock2Channels, config.channel_scale)), rng) {
    register_module("block1", block1_);
    register_module("block2", block2_);
    if (config.use_rcm) {
        rcm_ = std::make_unique<nn::Rcm>(scaled_channels(SegHeadConfig::kBlock2Channels, config.channel_scale),
                                         rng);
        register_module("rcm", *rcm_);
    }
    register_module("head", head_);
}

ag::Var SegHead::forward(const ag::Var& x) {
    if (x.shape().c != config_.in_channels) {
        throw InvalidArgument("seg head expects " + std::to_string(config_.in_channels) +
                              " input channels, got " + std::to_string(x.shape().c));
    }
    ag::Var y = block2_.forward(block1_.forward(x));
    if (rcm_) y = rcm_->forward(y);
    return ag::sigmoid(head_.forward(y));
}

double image_score(const ProbMap& prob, int top_k) {
    if (top_k < 1) throw InvalidArgument("image_score: top_k must be at least 1");
    if (prob.data.empty()) throw InvalidArgument("image_score: empty map");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(top_k), prob.data.size());
    std::vector<double> v = prob.data;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end(),
                     std::greater<>());
    std::sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), std::greater<>());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += v[i];
    return sum / static_cast<double>(k);
}

}  // namespace pfadseg
