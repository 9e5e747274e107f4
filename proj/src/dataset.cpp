#include "pfadseg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>

#include "pfadseg/errors.hpp"

namespace fs = std::filesystem;

namespace pfadseg {

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

ImageInfo probe_or_reject(const fs::path& p) {
    try {
        return probe_image(p);
    } catch (const LoadError& e) {
        throw ValidationError("cannot decode " + p.string() + ": " + e.what());
    }
}

CategoryLayout scan_category(const fs::path& dir) {
    CategoryLayout cat;
    cat.name = dir.filename().string();
    const fs::path good = dir / "train" / "good";
    if (!fs::is_directory(good)) throw ValidationError("missing directory " + good.string());
    cat.train = list_images(good);
    if (cat.train.empty()) throw ValidationError("no training images in " + good.string());
    for (const auto& p : cat.train) probe_or_reject(p);

    const fs::path test = dir / "test";
    if (!fs::is_directory(test)) throw ValidationError("missing directory " + test.string());
    std::vector<fs::path> defects;
    for (const auto& e : fs::directory_iterator(test)) {
        if (e.is_directory()) defects.push_back(e.path());
    }
    std::sort(defects.begin(), defects.end());
    for (const auto& ddir : defects) {
        const std::string defect = ddir.filename().string();
        for (const auto& img : list_images(ddir)) {
            const ImageInfo info = probe_or_reject(img);
            TestSample s{img, defect, std::nullopt};
            if (defect != "good") {
                const fs::path mask = dir / "ground_truth" / defect / (img.stem().string() + "_mask.png");
                if (!fs::exists(mask)) {
                    throw ValidationError("missing ground-truth mask " + mask.string() + " for " + img.string());
                }
                const ImageInfo minfo = probe_or_reject(mask);
                if (minfo.width != info.width || minfo.height != info.height) {
                    throw ValidationError("mask " + mask.string() + " is " + std::to_string(minfo.width) + "x" +
                                          std::to_string(minfo.height) + " but its image is " +
                                          std::to_string(info.width) + "x" + std::to_string(info.height));
                }
                s.mask = mask;
            }
            cat.test.push_back(std::move(s));
        }
    }
    return cat;
}

}  // namespace

std::size_t CategoryLayout::anomalous_count() const {
    return static_cast<std::size_t>(
        std::count_if(test.begin(), test.end(), [](const TestSample& s) { return s.anomalous(); }));
}

const CategoryLayout& DatasetLayout::category(const std::string& name) const {
    for (const auto& c : categories) {
        if (c.name == name) return c;
    }
    throw ValidationError("category '" + name + "' not found under " + root.string());
}

std::string DatasetLayout::summary() const {
    std::ostringstream out;
    for (const auto& c : categories) {
        const std::size_t anomalous = c.anomalous_count();
        out << c.name << ": " << c.train.size() << " train, " << c.test.size() - anomalous << " good test, "
            << anomalous << " anomalous test\n";
    }
    return out.str();
}

DatasetLayout ingest_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw ValidationError("dataset root " + root.string() + " is not a directory");
    DatasetLayout layout;
    layout.root = root;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::is_directory(e.path() / "train")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ValidationError("no categories (directories with train/) under " + root.string());
    for (const auto& d : dirs) layout.categories.push_back(scan_category(d));
    return layout;
}

fs::path default_data_root() {
    const char* env = std::getenv("PFADSEG_DATA_ROOT");
    if (!env || !*env) throw UsageError("no dataset root given and PFADSEG_DATA_ROOT is not set");
    return env;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Image> load_images(const std::vector<fs::path>& paths) {
    std::vector<Image> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_image(p));
    return out;
}

}  // namespace pfadseg
