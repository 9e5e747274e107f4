#pragma once

#include <memory>

#include "pfadseg/image.hpp"
#include "pfadseg/nn.hpp"
#include "pfadseg/teacher.hpp"

namespace pfadseg {

constexpr double kCosineEps = 1e-8;

/// Per-position X = ft * fs / (|ft| |fs| + eps), channels retained; the
/// channel sum at each position is the cosine similarity.
ag::Var cosine_similarity_map(const ag::Var& ft, const ag::Var& fs, double eps = kCosineEps);

/// Similarity maps of the three pyramid levels, levels two and three
/// bilinearly resized to level one, concatenated along channels.
ag::Var build_seg_input(const FeaturePyramid& teacher, const FeaturePyramid& student);

struct SegHeadConfig {
    static constexpr int kBlock1Channels = 128;
    static constexpr int kBlock2Channels = 64;

    int in_channels = 448;
    double channel_scale = 1.0;
    bool use_aff = true;
    bool use_pcar = true;
    bool use_rcm = true;
};

/// Two stride-1 PA residual blocks, an optional RCM, and a 1x1 convolution
/// with sigmoid to a single-channel probability map.
class SegHead : public nn::Module {
public:
    SegHead(const SegHeadConfig& config, Rng& rng);
    /// x: N x in_channels x h x w -> N x 1 x h x w in [0, 1].
    ag::Var forward(const ag::Var& x);
    const SegHeadConfig& config() const { return config_; }

private:
    SegHeadConfig config_;
    nn::PaResidualBlock block1_;
    nn::PaResidualBlock block2_;
    std::unique_ptr<nn::Rcm> rcm_;
    nn::Conv2d head_;
};

constexpr int kDefaultTopK = 100;

/// Mean of the top_k largest probabilities; top_k is clamped to the pixel
/// count. Throws InvalidArgument for top_k < 1 or an empty map.
double image_score(const ProbMap& prob, int top_k = kDefaultTopK);

}  // namespace pfadseg
