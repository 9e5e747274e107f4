#include "pfadseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pfadseg/errors.hpp"

namespace pfadseg::synth {

namespace fs = std::filesystem;

void SynthesisConfig::validate() const {
    if (!(beta_min >= 0.0 && beta_max <= 1.0 && beta_min <= beta_max)) {
        throw ConfigError("synthesis: beta range must lie within [0, 1]");
    }
    if (perlin_scales.empty()) throw ConfigError("synthesis: no Perlin scales");
    for (int s : perlin_scales) {
        if (s <= 0) throw ConfigError("synthesis: Perlin scales must be positive");
    }
    if (std::isnan(binarize_threshold)) throw ConfigError("synthesis: threshold is NaN");
    if (max_mask_attempts <= 0) throw ConfigError("synthesis: max_mask_attempts must be positive");
}

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

}  // namespace

std::vector<double> perlin_noise(int height, int width, int res_y, int res_x, Rng& rng) {
    if (res_y <= 0 || res_x <= 0) throw InvalidArgument("perlin_noise: non-positive lattice");
    const int gy = res_y + 1;
    const int gx = res_x + 1;
    std::vector<double> grad_y(static_cast<std::size_t>(gy) * gx);
    std::vector<double> grad_x(grad_y.size());
    for (std::size_t i = 0; i < grad_y.size(); ++i) {
        const double angle = 2.0 * std::numbers::pi * rng.uniform();
        grad_y[i] = std::sin(angle);
        grad_x[i] = std::cos(angle);
    }
    auto corner = [&](int cy, int cx, double dy, double dx) {
        const std::size_t k = static_cast<std::size_t>(cy) * gx + cx;
        return grad_y[k] * dy + grad_x[k] * dx;
    };
    std::vector<double> noise(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const double py = static_cast<double>(y) * res_y / height;
        const int cy = std::min(static_cast<int>(py), res_y - 1);
        const double ty = py - cy;
        const double fy = fade(ty);
        for (int x = 0; x < width; ++x) {
            const double px = static_cast<double>(x) * res_x / width;
            const int cx = std::min(static_cast<int>(px), res_x - 1);
            const double tx = px - cx;
            const double fx = fade(tx);
            const double n00 = corner(cy, cx, ty, tx);
            const double n01 = corner(cy, cx + 1, ty, tx - 1.0);
            const double n10 = corner(cy + 1, cx, ty - 1.0, tx);
            const double n11 = corner(cy + 1, cx + 1, ty - 1.0, tx - 1.0);
            const double top = n00 + fx * (n01 - n00);
            const double bot = n10 + fx * (n11 - n10);
            noise[static_cast<std::size_t>(y) * width + x] = top + fy * (bot - top);
        }
    }
    const auto [lo, hi] = std::minmax_element(noise.begin(), noise.end());
    const double min_v = *lo;
    const double range = *hi - *lo;
    for (double& v : noise) v = range > 0.0 ? (v - min_v) / range : 0.0;
    return noise;
}

AnomalyMask generate_perlin_mask(int height, int width, const SynthesisConfig& config, Rng& rng) {
    if (height < 8 || width < 8) {
        throw InvalidArgument("generate_perlin_mask: dimensions must be at least 8x8, got " +
                              std::to_string(height) + "x" + std::to_string(width));
    }
    config.validate();
    const auto& scales = config.perlin_scales;
    const int res_y = scales[rng.index(scales.size())];
    const int res_x = scales[rng.index(scales.size())];
    const std::vector<double> noise = perlin_noise(height, width, res_y, res_x, rng);
    AnomalyMask mask(height, width);
    for (std::size_t i = 0; i < noise.size(); ++i) {
        mask.data[i] = noise[i] > config.binarize_threshold ? 1 : 0;
    }
    return mask;
}

Image blend_anomaly(const Image& normal, const Image& texture, const AnomalyMask& mask, double beta) {
    if (normal.height() != texture.height() || normal.width() != texture.width() ||
        normal.height() != mask.height || normal.width() != mask.width) {
        throw InvalidArgument("blend_anomaly: spatial dimensions differ");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("blend_anomaly: beta outside [0, 1]");
    Image out(normal.height(), normal.width());
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < normal.height(); ++y) {
            for (int x = 0; x < normal.width(); ++x) {
                const double k = mask.at(y, x);
                const double mn = normal.at(c, y, x);
                const double a = texture.at(c, y, x);
                out.at(c, y, x) = beta * (k * a) + (1.0 - beta) * (k * mn) + (1.0 - k) * mn;
            }
        }
    }
    return out;
}

TextureStore TextureStore::from_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("texture directory not found: " + dir.string());
    TextureStore store;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") store.paths_.push_back(entry.path());
    }
    std::sort(store.paths_.begin(), store.paths_.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return store;
}

Image TextureStore::get(std::size_t index, int height, int width) const {
    if (index >= size()) throw InvalidArgument("texture index out of range");
    if (!images_.empty()) return resize_bilinear(images_[index], height, width);
    return resize_bilinear(load_image(paths_[index]), height, width);
}

TrainingPair sample_training_pair(const Image& normal, const TextureStore& textures,
                                  const SynthesisConfig& config, Rng& rng) {
    if (textures.empty()) throw ConfigError("texture store is empty");
    config.validate();
    TrainingPair pair;
    pair.texture_index = rng.index(textures.size());
    pair.beta = rng.uniform(config.beta_min, config.beta_max);
    for (int attempt = 0; attempt < config.max_mask_attempts; ++attempt) {
        pair.mask = generate_perlin_mask(normal.height(), normal.width(), config, rng);
        if (!pair.mask.empty_support()) break;
    }
    if (pair.mask.empty_support()) {
        throw ConfigError("anomaly mask was empty after " + std::to_string(config.max_mask_attempts) +
                          " attempts; check binarize_threshold");
    }
    const Image texture = textures.get(pair.texture_index, normal.height(), normal.width());
    pair.anomalous = blend_anomaly(normal, texture, pair.mask, pair.beta);
    return pair;
}

}  // namespace pfadseg::synth
