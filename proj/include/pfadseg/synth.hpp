#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "pfadseg/image.hpp"
#include "pfadseg/rng.hpp"

/// Synthetic anomaly generation: binarized Perlin-noise masks and
/// texture blending into normal images.
namespace pfadseg::synth {

struct SynthesisConfig {
    double beta_min = 0.15;
    double beta_max = 1.0;
    /// Lattice frequencies (cells across the image), drawn per axis.
    std::vector<int> perlin_scales{2, 4, 8, 16, 32};
    double binarize_threshold = 0.5;
    /// Draws allowed before an all-zero mask is reported as an error.
    int max_mask_attempts = 10;

    void validate() const;
};

/// Single-octave 2D gradient noise, rescaled to [0, 1] per image. Returned
/// row-major, height x width.
std::vector<double> perlin_noise(int height, int width, int res_y, int res_x, Rng& rng);

/// Binarized Perlin mask. May be all-zero; callers that need support
/// resample (see sample_training_pair). Requires height, width >= 8.
AnomalyMask generate_perlin_mask(int height, int width, const SynthesisConfig& config, Rng& rng);

/// beta (K * A) + (1 - beta)(K * Mn) + (1 - K) * Mn.
Image blend_anomaly(const Image& normal, const Image& texture, const AnomalyMask& mask, double beta);

/// Source of external textures. Files are visited in lexicographic order
/// so that seeds reproduce across machines.
class TextureStore {
public:
    TextureStore() = default;
    explicit TextureStore(std::vector<Image> images) : images_(std::move(images)) {}
    /// Lists PNG/JPEG files in `dir` (non-recursive); decoding is deferred.
    static TextureStore from_directory(const std::filesystem::path& dir);

    std::size_t size() const { return images_.empty() ? paths_.size() : images_.size(); }
    bool empty() const { return size() == 0; }
    /// Texture `index` resized (bilinear) to height x width.
    Image get(std::size_t index, int height, int width) const;
    const std::vector<std::filesystem::path>& paths() const { return paths_; }

private:
    std::vector<Image> images_;
    std::vector<std::filesystem::path> paths_;
};

struct TrainingPair {
    Image anomalous;
    AnomalyMask mask;
    double beta = 0.0;
    std::size_t texture_index = 0;
};

/// Draws texture, beta ~ U[beta_min, beta_max] and a non-empty mask, then
/// blends. Throws ConfigError for an empty store or when every mask draw
/// is empty.
TrainingPair sample_training_pair(const Image& normal, const TextureStore& textures,
                                  const SynthesisConfig& config, Rng& rng);

}  // namespace pfadseg::synth
