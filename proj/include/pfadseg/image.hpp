#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pfadseg/tensor.hpp"

namespace pfadseg {

/// RGB image, values in [0, 1], stored as a 1 x 3 x H x W tensor.
struct Image {
    Tensor pixels;

    Image() = default;
    Image(int height, int width, double fill = 0.0) : pixels({1, 3, height, width}, fill) {}
    explicit Image(Tensor t);

    int height() const { return pixels.shape().h; }
    int width() const { return pixels.shape().w; }
    double& at(int c, int y, int x) { return pixels.at(0, c, y, x); }
    double at(int c, int y, int x) const { return pixels.at(0, c, y, x); }
};

/// Binary H x W mask; every element is 0 or 1.
struct AnomalyMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    AnomalyMask() = default;
    AnomalyMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    double coverage() const;
    bool empty_support() const { return count() == 0; }
    /// 1 x 1 x H x W tensor of 0.0 / 1.0.
    Tensor to_tensor() const;
};

/// H x W map of anomaly probabilities in [0, 1].
struct ProbMap {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ProbMap() = default;
    ProbMap(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    /// Takes channel 0 of batch element `n`.
    static ProbMap from_tensor(const Tensor& t, int n = 0);
};

Image resize_bilinear(const Image& image, int height, int width);
ProbMap resize_bilinear(const ProbMap& map, int height, int width);

struct ImageInfo {
    int width = 0;
    int height = 0;
    int channels = 0;
};

/// Reads only the header of a PNG or JPEG file. Throws LoadError when the
/// file is missing or not a decodable image.
ImageInfo probe_image(const std::filesystem::path& path);
/// Decodes PNG (8/16-bit, gray/RGB/alpha/palette) or JPEG into RGB [0, 1].
Image load_image(const std::filesystem::path& path);
/// Gray-level > 0.5 becomes 1.
AnomalyMask load_mask(const std::filesystem::path& path);

void save_png(const std::filesystem::path& path, const Image& image);
void save_png(const std::filesystem::path& path, const AnomalyMask& mask);
/// 16-bit grayscale, value = round(p * 65535).
void save_png16(const std::filesystem::path& path, const ProbMap& map);
ProbMap load_png16(const std::filesystem::path& path);

/// Lossless float64 container (NumPy .npy v1, shape (H, W), '<f8').
void save_npy(const std::filesystem::path& path, const ProbMap& map);
ProbMap load_npy(const std::filesystem::path& path);

/// Input blended with a blue-to-red ramp of the map at 50% opacity.
Image heatmap_overlay(const Image& image, const ProbMap& map);

}  // namespace pfadseg
