#include "pfadseg/nn.hpp"

#include <cmath>
#include <map>

#include "pfadseg/errors.hpp"

namespace pfadseg::nn {

std::string join_path(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

void Module::set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->set_training(on);
}

void Module::set_requires_grad(bool on) {
    for (auto& [name, p] : params_) {
        p.set_requires_grad(on);
        if (!on) p.zero_grad();
    }
    for (auto& [name, child] : children_) child->set_requires_grad(on);
}

std::vector<std::pair<std::string, Var>> Module::named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& [name, p] : params_) out.emplace_back(join_path(prefix, name), p);
    for (const auto& [name, child] : children_) {
        auto sub = child->named_parameters(join_path(prefix, name));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

std::vector<std::pair<std::string, Var>> Module::named_buffers(const std::string& prefix) const {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& [name, b] : buffers_) out.emplace_back(join_path(prefix, name), b);
    for (const auto& [name, child] : children_) {
        auto sub = child->named_buffers(join_path(prefix, name));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

std::vector<std::pair<std::string, Var>> Module::named_state(const std::string& prefix) const {
    auto out = named_parameters(prefix);
    auto bufs = named_buffers(prefix);
    out.insert(out.end(), bufs.begin(), bufs.end());
    return out;
}

void Module::visit(const std::function<void(const std::string&, const Module&)>& fn,
                   const std::string& prefix) const {
    fn(prefix, *this);
    for (const auto& [name, child] : children_) child->visit(fn, join_path(prefix, name));
}

Var& Module::register_parameter(std::string name, Tensor init) {
    params_.emplace_back(std::move(name), ag::parameter(std::move(init)));
    return params_.back().second;
}

Var& Module::register_buffer(std::string name, Tensor init) {
    buffers_.emplace_back(std::move(name), ag::constant(std::move(init)));
    return buffers_.back().second;
}

void Module::register_module(std::string name, Module& child) {
    children_.emplace_back(std::move(name), &child);
}

ConvOptions conv3x3(int in, int out, int stride, bool bias) {
    return {in, out, 3, 3, {stride, stride, 1, 1}, bias, Init::KaimingOut};
}

ConvOptions conv1x1(int in, int out, int stride, bool bias) {
    return {in, out, 1, 1, {stride, stride, 0, 0}, bias, Init::KaimingOut};
}

Conv2d::Conv2d(const ConvOptions& opts, Rng& rng) : Module("conv2d"), opts_(opts) {
    if (opts.in_channels <= 0 || opts.out_channels <= 0 || opts.kernel_h <= 0 ||
        opts.kernel_w <= 0 || opts.spec.stride_h <= 0 || opts.spec.stride_w <= 0) {
        throw ConfigError("conv2d: non-positive channel, kernel or stride");
    }
    Tensor w({opts.out_channels, opts.in_channels, opts.kernel_h, opts.kernel_w});
    const double fan_in = static_cast<double>(opts.in_channels) * opts.kernel_h * opts.kernel_w;
    const double fan_out = static_cast<double>(opts.out_channels) * opts.kernel_h * opts.kernel_w;
    if (opts.init == Init::KaimingOut) {
        const double std_dev = std::sqrt(2.0 / fan_out);
        for (double& v : w.values()) v = std_dev * rng.normal();
    } else {
        const double bound = 1.0 / std::sqrt(fan_in);
        for (double& v : w.values()) v = rng.uniform(-bound, bound);
    }
    weight_ = register_parameter("weight", std::move(w));
    if (opts.bias) {
        Tensor b({opts.out_channels, 1, 1, 1}, 0.0);
        if (opts.init == Init::Default) {
            const double bound = 1.0 / std::sqrt(fan_in);
            for (double& v : b.values()) v = rng.uniform(-bound, bound);
        }
        bias_ = register_parameter("bias", std::move(b));
    }
}

Var Conv2d::forward(const Var& x) const { return ag::conv2d(x, weight_, bias_, opts_.spec); }

BatchNorm2d::BatchNorm2d(int channels) : Module("batch_norm") {
    gamma_ = register_parameter("weight", Tensor({channels, 1, 1, 1}, 1.0));
    beta_ = register_parameter("bias", Tensor({channels, 1, 1, 1}, 0.0));
    running_mean_ = register_buffer("running_mean", Tensor({channels, 1, 1, 1}, 0.0));
    running_var_ = register_buffer("running_var", Tensor({channels, 1, 1, 1}, 1.0));
}

Var BatchNorm2d::forward(const Var& x) {
    ag::BatchNormState state{&running_mean_.mutable_value(), &running_var_.mutable_value()};
    return ag::batch_norm(x, gamma_, beta_, state, training());
}

Spr::Spr(int channels, Rng& rng) : Recalibrator("spr") {
    for (std::size_t i = 0; i < kPyramid.size(); ++i) {
        ConvOptions opts = conv1x1(channels, channels, 1, true);
        opts.init = Init::Default;
        level_convs_.push_back(std::make_unique<Conv2d>(opts, rng));
        register_module("level" + std::to_string(kPyramid[i]), *level_convs_.back());
    }
}

Var Spr::gate(const Var& x) {
    const Shape& s = x.shape();
    Var logits;
    for (std::size_t i = 0; i < kPyramid.size(); ++i) {
        Var pooled = ag::adaptive_avg_pool(x, kPyramid[i], kPyramid[i]);
        Var level = ag::upsample_bilinear(level_convs_[i]->forward(pooled), s.h, s.w);
        logits = logits.defined() ? ag::add(logits, level) : level;
    }
    return ag::sigmoid(logits);
}

Var Spr::forward(const Var& x) { return ag::mul(x, gate(x)); }

Pcar::Pcar(int channels, Rng& rng, bool with_spr) : Module("pcar"), channels_(channels) {
    for (int i = 0; i < 3; ++i) {
        branches_.push_back(std::make_unique<Conv2d>(conv3x3(channels, channels), rng));
        register_module("branch" + std::to_string(i + 1), *branches_.back());
    }
    for (int i = 0; i < 3; ++i) {
        if (with_spr) {
            recal_.push_back(std::make_unique<Spr>(channels, rng));
        } else {
            recal_.push_back(std::make_unique<IdentityRecalibration>());
        }
        register_module("spr" + std::to_string(i + 1), *recal_.back());
    }
}

Pcar::Output Pcar::forward_detailed(const Var& x) {
    if (x.shape().c != channels_) {
        throw InvalidArgument("pcar: expected " + std::to_string(channels_) + " channels, got " +
                              std::to_string(x.shape().c));
    }
    std::array<Var, 3> raw;
    std::array<Var, 3> recalibrated;
    for (int i = 0; i < 3; ++i) {
        raw[i] = branches_[i]->forward(x);
        recalibrated[i] = recal_[i]->forward(raw[i]);
    }
    Var weights = ag::softmax_channels(ag::mean_hw(ag::concat_channels(recalibrated), true, true));
    Var reweighted = ag::mul(weights, ag::concat_channels(raw));
    return {ag::group_sum(reweighted, 3), weights};
}

namespace {

// Every AFF convolution feeds a BatchNorm, which absorbs any bias.
ConvOptions attention_conv(int in, int out) {
    ConvOptions opts = conv1x1(in, out, 1, false);
    opts.init = Init::Default;
    return opts;
}

int bottleneck(int channels) { return std::max(1, channels / Aff::kReduction); }

}  // namespace

Aff::Aff(int channels, Rng& rng)
    : Module("aff"),
      local1_(attention_conv(channels, bottleneck(channels)), rng),
      local_bn1_(bottleneck(channels)),
      local2_(attention_conv(bottleneck(channels), channels), rng),
      local_bn2_(channels),
      global1_(attention_conv(channels, bottleneck(channels)), rng),
      global_bn1_(bottleneck(channels)),
      global2_(attention_conv(bottleneck(channels), channels), rng),
      global_bn2_(channels) {
    register_module("local1", local1_);
    register_module("local_bn1", local_bn1_);
    register_module("local2", local2_);
    register_module("local_bn2", local_bn2_);
    register_module("global1", global1_);
    register_module("global_bn1", global_bn1_);
    register_module("global2", global2_);
    register_module("global_bn2", global_bn2_);
}

Var Aff::attention(const Var& main, const Var& residual) {
    if (main.shape() != residual.shape()) {
        throw InvalidArgument("aff: shape mismatch " + main.shape().str() + " vs " +
                              residual.shape().str());
    }
    Var joint = ag::add(main, residual);
    Var local = local_bn2_.forward(local2_.forward(ag::relu(local_bn1_.forward(local1_.forward(joint)))));
    Var pooled = ag::mean_hw(joint, true, true);
    Var global = global_bn2_.forward(global2_.forward(ag::relu(global_bn1_.forward(global1_.forward(pooled)))));
    return ag::sigmoid(ag::add(local, global));
}

Var Aff::forward(const Var& main, const Var& residual) {
    // residual + alpha * (main - residual) equals the convex combination and
    // is exact when both inputs coincide.
    Var alpha = attention(main, residual);
    return ag::add(residual, ag::mul(alpha, ag::sub(main, residual)));
}

Rcm::Rcm(int channels, Rng& rng)
    : Module("rcm"),
      strip_h_({channels, channels, kStripKernel, 1, {}, true, Init::Default}, rng),
      strip_w_({channels, channels, 1, kStripKernel, {}, true, Init::Default}, rng),
      fuse_([&] {
          ConvOptions o = conv3x3(channels, channels, 1, true);
          o.init = Init::Default;
          return o;
      }(), rng) {
    register_module("strip_h", strip_h_);
    register_module("strip_w", strip_w_);
    register_module("fuse", fuse_);
}

Var Rcm::attention(const Var& x) {
    constexpr int pad = kStripKernel / 2;
    Var rows = ag::mean_hw(x, false, true);  // N x C x H x 1
    Var cols = ag::mean_hw(x, true, false);  // N x C x 1 x W
    Var row_ctx = strip_h_.forward(ag::pad_replicate(rows, pad, 0));
    Var col_ctx = strip_w_.forward(ag::pad_replicate(cols, 0, pad));
    return ag::sigmoid(ag::mul(row_ctx, col_ctx));
}

Var Rcm::forward(const Var& x) { return fuse_.forward(ag::mul(x, attention(x))); }

void BlockConfig::validate() const {
    if (in_channels <= 0 || out_channels <= 0) {
        throw ConfigError("block: channel counts must be positive");
    }
    if (stride != 1 && stride != 2) throw ConfigError("block: stride must be 1 or 2");
}

PaResidualBlock::PaResidualBlock(const BlockConfig& config, Rng& rng)
    : Module("pa_residual"),
      config_((config.validate(), config)),
      conv1_(conv3x3(config.in_channels, config.out_channels, config.stride), rng),
      bn1_(config.out_channels),
      bn2_(config.out_channels) {
    register_module("conv1", conv1_);
    register_module("bn1", bn1_);
    if (config.use_pcar) {
        pcar_ = std::make_unique<Pcar>(config.out_channels, rng);
        register_module("pcar", *pcar_);
    } else {
        conv2_ = std::make_unique<Conv2d>(conv3x3(config.out_channels, config.out_channels), rng);
        register_module("conv2", *conv2_);
    }
    register_module("bn2", bn2_);
    if (config.needs_projection()) {
        down_conv_ = std::make_unique<Conv2d>(
            conv1x1(config.in_channels, config.out_channels, config.stride), rng);
        down_bn_ = std::make_unique<BatchNorm2d>(config.out_channels);
        register_module("downsample.0", *down_conv_);
        register_module("downsample.1", *down_bn_);
    }
    if (config.use_aff) {
        aff_ = std::make_unique<Aff>(config.out_channels, rng);
        register_module("aff", *aff_);
    }
}

Var PaResidualBlock::forward(const Var& x) {
    if (x.shape().c != config_.in_channels) {
        throw InvalidArgument("pa_residual: expected " + std::to_string(config_.in_channels) +
                              " input channels, got " + std::to_string(x.shape().c));
    }
    Var out = ag::relu(bn1_.forward(conv1_.forward(x)));
    out = pcar_ ? pcar_->forward(out) : conv2_->forward(out);
    out = bn2_.forward(out);
    Var identity = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
    Var merged = aff_ ? aff_->forward(out, identity) : ag::add(out, identity);
    return ag::relu(merged);
}

std::vector<std::pair<std::string, int>> block_inventory(const Module& root) {
    std::map<std::string, int> counts;
    root.visit([&](const std::string&, const Module& m) { ++counts[std::string(m.kind())]; });
    return {counts.begin(), counts.end()};
}

int count_kind(const Module& root, std::string_view kind) {
    int n = 0;
    root.visit([&](const std::string&, const Module& m) {
        if (m.kind() == kind) ++n;
    });
    return n;
}

}  // namespace pfadseg::nn
