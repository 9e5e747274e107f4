#include "pfadseg/teacher.hpp"

#include <cmath>

#include "pfadseg/archive.hpp"
#include "pfadseg/errors.hpp"

namespace pfadseg {

void FeaturePyramid::require_matches(const FeaturePyramid& other) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!levels[i].defined() || !other.levels[i].defined() ||
            levels[i].shape() != other.levels[i].shape()) {
            throw InvalidArgument("feature pyramid level " + std::to_string(i + 1) +
                                  " mismatch: " +
                                  (levels[i].defined() ? levels[i].shape().str() : "undefined") +
                                  " vs " +
                                  (other.levels[i].defined() ? other.levels[i].shape().str()
                                                             : "undefined"));
        }
    }
}

int scaled_channels(int base, double scale) {
    if (!(scale > 0.0)) throw ConfigError("channel_scale must be positive");
    return std::max(1, static_cast<int>(std::lround(base * scale)));
}

Tensor InputNormalization::apply(const Tensor& images) const {
    const Shape& s = images.shape();
    if (s.c != 3) throw InvalidArgument("expected 3-channel images, got " + s.str());
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x)
                    out.at(n, c, y, x) = (images.at(n, c, y, x) - mean[c]) / stddev[c];
    return out;
}

namespace {

nn::ConvOptions stem_conv(int out_channels) {
    return {3, out_channels, 7, 7, {2, 2, 3, 3}, false, nn::Init::KaimingOut};
}

}  // namespace

Teacher::Teacher(double channel_scale, Rng& rng)
    : nn::Module("teacher"),
      channel_scale_(channel_scale),
      conv1_(stem_conv(scaled_channels(64, channel_scale)), rng),
      bn1_(scaled_channels(64, channel_scale)) {
    register_module("conv1", conv1_);
    register_module("bn1", bn1_);
    int in = scaled_channels(64, channel_scale);
    for (int stage = 0; stage < 3; ++stage) {
        const int out = scaled_channels(FeaturePyramid::kBaseChannels[stage], channel_scale);
        for (int b = 0; b < 2; ++b) {
            nn::BlockConfig cfg{b == 0 ? in : out, out, (stage > 0 && b == 0) ? 2 : 1, false, false};
            layers_[stage].push_back(std::make_unique<nn::PaResidualBlock>(cfg, rng));
            register_module("layer" + std::to_string(stage + 1) + "." + std::to_string(b),
                            *layers_[stage].back());
        }
        in = out;
    }
    set_training(false);
    set_requires_grad(false);
}

FeaturePyramid Teacher::forward(const Tensor& images) {
    const Shape& s = images.shape();
    if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0) {
        throw InvalidArgument("teacher input must have dimensions divisible by 16, got " + s.str());
    }
    ag::Var x = ag::constant(normalization.apply(images));
    x = ag::relu(bn1_.forward(conv1_.forward(x)));
    x = ag::max_pool(x, 3, 2, 1);
    FeaturePyramid out;
    for (int stage = 0; stage < 3; ++stage) {
        for (auto& block : layers_[stage]) x = block->forward(x);
        out.levels[stage] = x;
    }
    return out;
}

std::vector<std::pair<std::string, Shape>> Teacher::manifest() const {
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& [name, v] : named_state()) out.emplace_back(name, v.shape());
    return out;
}

namespace {

TensorArchive teacher_archive(const Teacher& t) {
    TensorArchive ar;
    ar.meta["kind"] = "teacher";
    for (const auto& [name, v] : t.named_state()) ar.tensors.emplace_back(name, v.value());
    return ar;
}

}  // namespace

std::string Teacher::digest() const { return teacher_archive(*this).digest(); }

void Teacher::save(const std::filesystem::path& path) const { teacher_archive(*this).save(path); }

std::unique_ptr<Teacher> load_pretrained(const std::filesystem::path& weights_path,
                                         double channel_scale) {
    if (!std::filesystem::exists(weights_path)) {
        throw LoadError("teacher weights not found: " + weights_path.string());
    }
    const TensorArchive ar = TensorArchive::load(weights_path);
    Rng unused(0);
    auto teacher = std::make_unique<Teacher>(channel_scale, unused);
    const auto state = teacher->named_state();
    for (const auto& [name, var] : state) {
        const Tensor* t = ar.find(name);
        if (!t) throw LoadError("teacher weights: missing layer '" + name + "'");
        if (t->shape() != var.shape()) {
            throw LoadError("teacher weights: layer '" + name + "' has shape " + t->shape().str() +
                            ", expected " + var.shape().str());
        }
    }
    if (ar.tensors.size() != state.size()) {
        for (const auto& [name, t] : ar.tensors) {
            bool known = false;
            for (const auto& [n, v] : state) known = known || n == name;
            if (!known) throw LoadError("teacher weights: unexpected layer '" + name + "'");
        }
    }
    for (const auto& [name, var] : state) {
        ag::Var v = var;
        v.mutable_value() = *ar.find(name);
    }
    return teacher;
}

}  // namespace pfadseg
