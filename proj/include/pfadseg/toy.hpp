#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pfadseg/image.hpp"
#include "pfadseg/synth.hpp"

/// Small procedurally generated datasets for smoke tests and demos: smooth
/// striped "normal" surfaces and blocky high-contrast textures.
namespace pfadseg::toy {

std::vector<Image> normal_images(int count, int size, std::uint64_t seed);
std::vector<Image> texture_images(int count, int size, std::uint64_t seed);

struct DatasetSpec {
    int train_images = 8;
    int good_test_images = 4;
    int anomalous_test_images = 4;
    int textures = 6;
    int size = 64;
    std::uint64_t seed = 0;
};

/// Writes `root/<category>/{train/good, test/good, test/synthetic,
/// ground_truth/synthetic}` plus `root/textures/`.
void write_dataset(const std::filesystem::path& root, const std::string& category, const DatasetSpec& spec);

}  // namespace pfadseg::toy
