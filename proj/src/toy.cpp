#include "pfadseg/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace fs = std::filesystem;

namespace pfadseg::toy {

namespace {

std::string numbered(int i, const char* suffix) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03d%s", i, suffix);
    return buf;
}

}  // namespace

std::vector<Image> normal_images(int count, int size, std::uint64_t seed) {
    Rng rng(seed);
    const double base[3] = {0.62, 0.48, 0.34};
    std::vector<Image> out;
    for (int i = 0; i < count; ++i) {
        Image im(size, size);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double freq = rng.uniform(5.0, 6.0);
        const double tilt = rng.uniform(-0.2, 0.2);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = (x + tilt * y) / size;
                const double stripe = 0.12 * std::sin(2.0 * std::numbers::pi * freq * u + phase);
                for (int c = 0; c < 3; ++c) {
                    const double v = base[c] + stripe * (1.0 - 0.2 * c) + 0.01 * rng.normal();
                    im.at(c, y, x) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        out.push_back(std::move(im));
    }
    return out;
}

std::vector<Image> texture_images(int count, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Image> out;
    for (int i = 0; i < count; ++i) {
        Image im(size, size);
        const int cell = 2 + static_cast<int>(rng.index(5));
        double a[3], b[3];
        for (int c = 0; c < 3; ++c) {
            a[c] = rng.uniform();
            b[c] = rng.uniform();
        }
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const bool odd = ((y / cell) + (x / cell)) % 2 != 0;
                for (int c = 0; c < 3; ++c) {
                    im.at(c, y, x) = std::clamp((odd ? a[c] : b[c]) + 0.05 * rng.normal(), 0.0, 1.0);
                }
            }
        }
        out.push_back(std::move(im));
    }
    return out;
}

void write_dataset(const fs::path& root, const std::string& category, const DatasetSpec& spec) {
    const fs::path cat = root / category;
    for (const char* d : {"train/good", "test/good", "test/synthetic", "ground_truth/synthetic"}) {
        fs::create_directories(cat / d);
    }
    fs::create_directories(root / "textures");

    const auto textures = texture_images(spec.textures, spec.size, spec.seed ^ 0x1111);
    for (int i = 0; i < spec.textures; ++i) save_png(root / "textures" / numbered(i, ".png"), textures[i]);

    const int total = spec.train_images + spec.good_test_images + spec.anomalous_test_images;
    const auto normals = normal_images(total, spec.size, spec.seed);
    int k = 0;
    for (int i = 0; i < spec.train_images; ++i) save_png(cat / "train/good" / numbered(i, ".png"), normals[k++]);
    for (int i = 0; i < spec.good_test_images; ++i) save_png(cat / "test/good" / numbered(i, ".png"), normals[k++]);

    const synth::TextureStore store(textures);
    const synth::SynthesisConfig cfg;
    Rng rng(spec.seed ^ 0x2222);
    for (int i = 0; i < spec.anomalous_test_images; ++i) {
        const auto pair = synth::sample_training_pair(normals[k++], store, cfg, rng);
        save_png(cat / "test/synthetic" / numbered(i, ".png"), pair.anomalous);
        save_png(cat / "ground_truth/synthetic" / numbered(i, "_mask.png"), pair.mask);
    }
}

}  // namespace pfadseg::toy
