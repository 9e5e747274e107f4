#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pfadseg/nn.hpp"

namespace pfadseg {

/// Three feature levels at strides 4, 8 and 16 of the input.
struct FeaturePyramid {
    static constexpr std::array<int, 3> kStrides{4, 8, 16};
    static constexpr std::array<int, 3> kBaseChannels{64, 128, 256};

    std::array<ag::Var, 3> levels;

    const ag::Var& operator[](std::size_t i) const { return levels[i]; }
    /// Throws InvalidArgument unless every level has the same shape.
    void require_matches(const FeaturePyramid& other) const;
};

/// max(1, round(base * scale)).
int scaled_channels(int base, double scale);

/// Per-channel normalization applied to network inputs in [0, 1].
struct InputNormalization {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stddev{0.229, 0.224, 0.225};

    Tensor apply(const Tensor& images) const;
};

/// Frozen residual-18 stem plus its first three stages. Parameter names
/// follow the common layout (conv1, bn1, layer1.0.conv1, ...) so converted
/// ImageNet weights load directly.
class Teacher : public nn::Module {
public:
    /// Random initialization. Only reachable explicitly; production runs
    /// use load_pretrained.
    Teacher(double channel_scale, Rng& rng);

    /// images: N x 3 x H x W in [0, 1], H and W divisible by 16.
    FeaturePyramid forward(const Tensor& images);

    double channel_scale() const { return channel_scale_; }
    /// (name, shape) of every stored tensor in canonical order.
    std::vector<std::pair<std::string, Shape>> manifest() const;
    /// SHA-256 over the canonical archive of the weights.
    std::string digest() const;
    void save(const std::filesystem::path& path) const;

    InputNormalization normalization;

private:
    double channel_scale_;
    nn::Conv2d conv1_;
    nn::BatchNorm2d bn1_;
    std::vector<std::unique_ptr<nn::PaResidualBlock>> layers_[3];
};

/// Loads teacher weights, validating names and shapes against the layer
/// manifest for `channel_scale`. Throws LoadError naming the first
/// mismatching layer, or when the file is missing.
std::unique_ptr<Teacher> load_pretrained(const std::filesystem::path& weights_path,
                                         double channel_scale = 1.0);

}  // namespace pfadseg
