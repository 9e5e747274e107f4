#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pfadseg/image.hpp"

namespace pfadseg {

struct TestSample {
    std::filesystem::path image;
    std::string defect;                          // "good" for normal test images
    std::optional<std::filesystem::path> mask;   // set iff defect != "good"
    bool anomalous() const { return mask.has_value(); }
};

struct CategoryLayout {
    std::string name;
    std::vector<std::filesystem::path> train;  // train/good
    std::vector<TestSample> test;
    std::size_t anomalous_count() const;
};

/// Category directories with train/good, test/<defect> and
/// ground_truth/<defect>/<stem>_mask.png, as in the MVTec AD release.
struct DatasetLayout {
    std::filesystem::path root;
    std::vector<CategoryLayout> categories;  // sorted by name

    /// Throws ValidationError for an unknown category.
    const CategoryLayout& category(const std::string& name) const;
    /// "name: T train, G good test, A anomalous test" per category.
    std::string summary() const;
};

/// Scans and validates a dataset root. Every file is header-probed; a
/// missing or undecodable image, a missing mask, or a mask whose size
/// differs from its image raises ValidationError naming the file.
DatasetLayout ingest_dataset(const std::filesystem::path& root);

/// $PFADSEG_DATA_ROOT, or UsageError when unset.
std::filesystem::path default_data_root();

/// Image files (png/jpg/jpeg) directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

std::vector<Image> load_images(const std::vector<std::filesystem::path>& paths);

}  // namespace pfadseg
