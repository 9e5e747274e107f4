#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "pfadseg/archive.hpp"
#include "pfadseg/errors.hpp"
#include "pfadseg/losses.hpp"
#include "pfadseg/seghead.hpp"
#include "pfadseg/student.hpp"
#include "pfadseg/teacher.hpp"

using namespace pfadseg;
namespace fs = std::filesystem;
using gradcheck::randn;

namespace {

Tensor random_images(int n, int size, Rng& rng) {
    Tensor t({n, 3, size, size});
    for (double& v : t.values()) v = rng.uniform();
    return t;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "pfadseg_unit_networks";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("teacher pyramid shapes, names and freezing") {
    Rng rng(1);
    Teacher t(0.25, rng);
    const auto pyr = t.forward(random_images(2, 64, rng));
    CHECK(pyr[0].shape() == Shape{2, 16, 16, 16});
    CHECK(pyr[1].shape() == Shape{2, 32, 8, 8});
    CHECK(pyr[2].shape() == Shape{2, 64, 4, 4});
    for (const auto& [name, p] : t.named_parameters()) CHECK_FALSE(p.requires_grad());
    bool found = false;
    for (const auto& [name, s] : t.manifest()) found = found || name == "layer2.0.downsample.0.weight";
    CHECK(found);
    CHECK_THROWS_AS(t.forward(random_images(1, 40, rng)), InvalidArgument);
}

TEST_CASE("full-width teacher manifest matches the residual-18 layout") {
    Rng rng(1);
    Teacher t(1.0, rng);
    std::map<std::string, Shape> m;
    for (const auto& [name, s] : t.manifest()) m[name] = s;
    CHECK(m.at("conv1.weight") == Shape{64, 3, 7, 7});
    CHECK(m.at("layer1.0.conv1.weight") == Shape{64, 64, 3, 3});
    CHECK(m.at("layer3.1.bn2.running_var") == Shape{256, 1, 1, 1});
    CHECK(m.count("layer4.0.conv1.weight") == 0);
}

TEST_CASE("teacher weights load and are validated") {
    Rng rng(2);
    Teacher t(0.25, rng);
    t.save(scratch("teacher.arch"));
    auto loaded = load_pretrained(scratch("teacher.arch"), 0.25);
    CHECK(loaded->digest() == t.digest());

    CHECK_THROWS_AS(load_pretrained(scratch("absent.arch"), 0.25), LoadError);

    TensorArchive ar = TensorArchive::load(scratch("teacher.arch"));
    for (auto& [name, tensor] : ar.tensors) {
        if (name == "layer2.1.conv1.weight") tensor = Tensor({1, 1, 1, 1});
    }
    ar.save(scratch("bad_shape.arch"));
    try {
        load_pretrained(scratch("bad_shape.arch"), 0.25);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("layer2.1.conv1.weight") != std::string::npos);
    }
    ar = TensorArchive::load(scratch("teacher.arch"));
    ar.tensors.erase(ar.tensors.begin());
    ar.save(scratch("missing.arch"));
    CHECK_THROWS_AS(load_pretrained(scratch("missing.arch"), 0.25), LoadError);
    CHECK_THROWS_AS(load_pretrained(scratch("teacher.arch"), 0.5), LoadError);
}

TEST_CASE("student pyramid matches the teacher's") {
    Rng rng(3);
    Teacher t(0.25, rng);
    Student s({0.25, true, true}, rng);
    const Tensor im = random_images(2, 64, rng);
    const auto ps = s.forward(im);
    const auto pt = t.forward(im);
    CHECK_NOTHROW(pt.require_matches(ps));
    CHECK(nn::count_kind(s, "pa_residual") == 16);
    CHECK(nn::count_kind(s, "pcar") == 16);
    CHECK_THROWS_AS(s.forward(random_images(1, 48, rng)), InvalidArgument);
}

TEST_CASE("student parameters live under the documented paths") {
    Rng rng(4);
    Student s({0.125, false, false}, rng);
    std::set<std::string> names;
    for (const auto& [n, v] : s.named_state()) names.insert(n);
    CHECK(names.count("encoder.block1.stem.conv.weight"));
    CHECK(names.count("encoder.block4.1.bn2.running_mean"));
    CHECK(names.count("decoder.block1.0.downsample.0.weight"));
    CHECK(names.count("decoder.block4.1.conv2.weight"));
}

TEST_CASE("similarity channels sum to cosine in [-1, 1]") {
    Rng rng(5);
    FeaturePyramid a, b;
    for (int i = 0; i < 3; ++i) {
        const int c = 4 << i, h = 8 >> i;
        a.levels[i] = ag::constant(randn({2, c, h, h}, rng));
        b.levels[i] = ag::constant(randn({2, c, h, h}, rng));
    }
    const ag::Var x = build_seg_input(a, b);
    CHECK(x.shape() == Shape{2, 28, 8, 8});
    for (int i = 0; i < 3; ++i) {
        const Tensor s = ag::sum_channels(cosine_similarity_map(a[i], b[i])).value();
        for (double v : s.values()) {
            CHECK(v <= 1.0 + 1e-6);
            CHECK(v >= -1.0 - 1e-6);
        }
    }
}

TEST_CASE("segmentation head outputs probabilities") {
    Rng rng(6);
    SegHead head({28, 0.125, true, true, true}, rng);
    const Tensor p = head.forward(ag::constant(randn({2, 28, 8, 8}, rng))).value();
    CHECK(p.shape() == Shape{2, 1, 8, 8});
    for (double v : p.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(nn::count_kind(head, "rcm") == 1);
    CHECK_THROWS_AS(head.forward(ag::constant(Tensor({1, 27, 8, 8}))), InvalidArgument);
    SegHead bare({28, 0.125, false, false, false}, rng);
    CHECK(nn::count_kind(bare, "rcm") == 0);
    CHECK(nn::count_kind(bare, "aff") == 0);
}

TEST_CASE("image score is the mean of the top-k") {
    ProbMap p(1, 5);
    p.data = {0.1, 0.9, 0.5, 0.7, 0.3};
    CHECK(image_score(p, 2) == doctest::Approx(0.8));
    CHECK(image_score(p, 100) == doctest::Approx(0.5));
    CHECK_THROWS_AS(image_score(p, 0), InvalidArgument);
}

TEST_CASE("cosine distance loss identities and oracle") {
    Rng rng(7);
    FeaturePyramid a, b, neg;
    for (int i = 0; i < 3; ++i) {
        a.levels[i] = ag::constant(randn({2, 3, 4, 4}, rng));
        b.levels[i] = ag::constant(randn({2, 3, 4, 4}, rng));
        neg.levels[i] = ag::constant(a.levels[i].value());
        for (double& v : neg.levels[i].mutable_value().values()) v = -v;
    }
    CHECK(losses::cosine_distance_loss(a, a).value().item() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(losses::cosine_distance_loss(a, neg).value().item() == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(losses::cosine_distance_loss(a, b).value().item() ==
          doctest::Approx(oracle::cosine_loss(a, b, kCosineEps)).epsilon(1e-12));
}

TEST_CASE("focal and L1 hand values") {
    const Tensor k({1, 1, 1, 1}, 1.0);
    ag::Var p = ag::constant(Tensor({1, 1, 1, 1}, 0.5));
    CHECK(losses::focal_loss(p, k, {2.0, 1e-7}).value().item() == doctest::Approx(0.17329).epsilon(1e-4));
    const Tensor k2({1, 1, 1, 2}, std::vector<double>{1, 0});
    ag::Var p2 = ag::constant(Tensor({1, 1, 1, 2}, std::vector<double>{0.75, 0.25}));
    CHECK(losses::l1_loss(p2, k2).value().item() == doctest::Approx(0.25));
    CHECK(losses::seg_loss(ag::constant(k2), k2).total.value().item() <= 1e-5);
    CHECK_THROWS_AS(losses::LossConfig({-1.0, 1e-7}).validate(), ConfigError);
}

TEST_CASE("focal loss matches a scalar loop") {
    Rng rng(8);
    Tensor p({1, 1, 5, 5}), k({1, 1, 5, 5});
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.uniform();
        k[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    for (double gamma : {0.0, 2.0, 4.0}) {
        CHECK(losses::focal_loss(ag::constant(p), k, {gamma, 1e-7}).value().item() ==
              doctest::Approx(oracle::focal_loss(p.storage(), k.storage(), gamma, 1e-7)).epsilon(1e-12));
    }
}

TEST_CASE("mask downsampling keeps any positive pixel") {
    AnomalyMask m(8, 8);
    m.at(5, 2) = 1;
    const AnomalyMask d = losses::downsample_mask(m, 4);
    CHECK(d.height == 2);
    CHECK(d.at(1, 0) == 1);
    CHECK(d.count() == 1);
    CHECK_THROWS_AS(losses::downsample_mask(AnomalyMask(6, 8), 4), InvalidArgument);
}
