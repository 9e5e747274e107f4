#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pfadseg/errors.hpp"
#include "pfadseg/toy.hpp"
#include "pfadseg/trainer.hpp"

using namespace pfadseg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.stage1_iters = 2;
    c.stage2_iters = 2;
    c.batch_size = 2;
    c.image_size = 32;
    c.channel_scale = 0.125;
    c.random_teacher = true;
    c.seed = 5;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "pfadseg_unit_trainer";
    fs::create_directories(dir);
    return dir / name;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("config text round-trips exactly") {
    TrainConfig c = tiny_config();
    c.lr_student = 0.1 + 0.2;  // not representable in short decimal
    c.synthesis.perlin_scales = {4, 8};
    c.use_rcm = false;
    const TrainConfig back = TrainConfig::parse(c.snapshot());
    CHECK(back.snapshot() == c.snapshot());
    CHECK(back.lr_student == c.lr_student);
}

TEST_CASE("config parsing and validation errors") {
    CHECK_THROWS_AS(TrainConfig::parse("mystery = 3\n"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::parse("batch_size = many\n"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::parse("no equals sign\n"), ConfigError);
    const TrainConfig c = TrainConfig::parse("# comment\n  seed = 9  # trailing\n\nuse_aff = false\n");
    CHECK(c.seed == 9);
    CHECK_FALSE(c.use_aff);
    TrainConfig bad = tiny_config();
    bad.image_size = 48;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.lr_rcm = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(make_teacher(TrainConfig{}), ConfigError);
}

TEST_CASE("SGD applies per-group learning rates") {
    TrainConfig c = tiny_config();
    c.lr_seg_blocks = 0.1;
    c.lr_rcm = 0.01;
    Rng rng(1);
    SegHead head({14, 0.125, true, true, true}, rng);
    Sgd opt(seg_param_groups(head, c), /*momentum=*/0.0, /*weight_decay=*/0.0);
    REQUIRE(opt.groups().size() == 2);
    CHECK(opt.groups()[1].name == "rcm");

    Tensor x({1, 14, 8, 8});
    for (double& v : x.values()) v = rng.uniform(-1, 1);
    std::vector<Tensor> before;
    for (const auto& g : opt.groups())
        for (const auto& [n, p] : g.params) before.push_back(p.value());
    opt.zero_grad();
    ag::mean_all(head.forward(ag::constant(x))).backward();
    opt.step();
    // Every update equals lr * grad for its group.
    std::size_t k = 0;
    for (const auto& g : opt.groups()) {
        for (const auto& [n, p] : g.params) {
            const Tensor& b = before[k++];
            if (p.grad().empty()) continue;
            for (std::size_t i = 0; i < p.value().size(); ++i) {
                CHECK(b[i] - p.value()[i] == doctest::Approx(g.lr * p.grad()[i]).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("two-stage training on a tiny set") {
    const TrainConfig c = tiny_config();
    const auto normals = toy::normal_images(3, 32, 1);
    const synth::TextureStore textures(toy::texture_images(2, 32, 2));
    auto teacher = make_teacher(c);
    const std::string digest = teacher->digest();

    std::vector<StepLog> logs;
    const StageResult s1 = train_student(normals, textures, c, *teacher, [&](const StepLog& l) { logs.push_back(l); });
    CHECK(s1.losses.size() == 2);
    CHECK(logs.size() == 2);
    CHECK(teacher->digest() == digest);
    for (const auto& [name, t] : s1.checkpoint.tensors) CHECK(name.rfind("student.", 0) == 0);

    s1.checkpoint.save(scratch("s1.ckpt"));
    const Checkpoint loaded = Checkpoint::load(scratch("s1.ckpt"));
    CHECK(loaded.digest() == s1.checkpoint.digest());
    loaded.save(scratch("s1_again.ckpt"));
    CHECK(read_file_bytes(scratch("s1.ckpt")) == read_file_bytes(scratch("s1_again.ckpt")));

    const StageResult s2 = train_segmentation(normals, textures, loaded, *teacher);
    CHECK(teacher->digest() == digest);
    std::size_t student_tensors = 0, seg_tensors = 0;
    for (const auto& [name, t] : s2.checkpoint.tensors) {
        if (name.rfind("student.", 0) == 0) {
            ++student_tensors;
            CHECK(max_abs_diff(t, *s1.checkpoint.to_archive().find(name)) == 0.0);
        } else {
            CHECK(name.rfind("seg.", 0) == 0);
            ++seg_tensors;
        }
    }
    CHECK(student_tensors == s1.checkpoint.tensors.size());
    CHECK(seg_tensors > 0);

    Detector det(s2.checkpoint, *teacher);
    const Image odd = toy::normal_images(1, 45, 3)[0];
    const Inference a = det.infer(odd);
    const Inference b = det.infer(odd);
    CHECK(a.map.height == 45);
    CHECK(a.map.width == 45);
    CHECK(a.map.data == b.map.data);
    CHECK(a.score == b.score);

    CHECK_THROWS_AS(Detector(s1.checkpoint, *teacher), LoadError);
    TrainConfig other = c;
    other.seed = 6;
    auto other_teacher = make_teacher(other);
    CHECK_THROWS_AS(Detector(s2.checkpoint, *other_teacher), LoadError);
    CHECK_THROWS_AS(train_segmentation(normals, textures, s2.checkpoint, *teacher), LoadError);
}

TEST_CASE("training errors: empty data and divergence") {
    TrainConfig c = tiny_config();
    const synth::TextureStore textures(toy::texture_images(2, 32, 2));
    auto teacher = make_teacher(c);
    CHECK_THROWS_AS(train_student({}, textures, c, *teacher), ConfigError);
    c.loss_guard = 1e-6;
    try {
        train_student(toy::normal_images(2, 32, 1), textures, c, *teacher);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
    }
}

TEST_CASE("anomaly pool is fixed by the seed") {
    TrainConfig c = tiny_config();
    c.anomaly_pool = 2;
    const auto normals = toy::normal_images(2, 32, 1);
    const synth::TextureStore textures(toy::texture_images(2, 32, 2));
    const auto a = build_anomaly_pool(normals, textures, c);
    const auto b = build_anomaly_pool(normals, textures, c);
    REQUIRE(a.size() == 2);
    REQUIRE(a[0].size() == 2);
    CHECK(a[1][1].mask.data == b[1][1].mask.data);
    c.anomaly_pool = 0;
    CHECK(build_anomaly_pool(normals, textures, c).empty());
}

TEST_CASE("repeated runs in one process are bitwise identical") {
    TrainConfig c = tiny_config();
    c.anomaly_pool = 1;
    const auto normals = toy::normal_images(3, 32, 1);
    const synth::TextureStore textures(toy::texture_images(2, 32, 2));
    std::vector<std::string> digests;
    for (int run = 0; run < 2; ++run) {
        // An unrelated allocation shifts where the next buffers land.
        std::vector<double> spacer(static_cast<std::size_t>(run) * 3 + 1);
        auto teacher = make_teacher(c);
        const StageResult s1 = train_student(normals, textures, c, *teacher);
        const StageResult s2 = train_segmentation(normals, textures, s1.checkpoint, *teacher);
        digests.push_back(s1.checkpoint.digest() + s2.checkpoint.digest());
    }
    CHECK(digests[0] == digests[1]);
}
