#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pfadseg/autograd.hpp"
#include "pfadseg/rng.hpp"

/// Neural building blocks: convolution and normalization layers, the
/// spatial-pyramid recalibration (SPR), parallel convolutional attention
/// recalibration (PCAR), attentional feature fusion (AFF), the rectangular
/// self-calibration module (RCM), and the PA residual block that combines
/// them.
namespace pfadseg::nn {

using ag::Var;

/// Base class giving every layer a stable parameter name path.
///
/// Children are registered by reference from the owning constructor, so
/// modules are neither copyable nor movable; hold whole networks by
/// unique_ptr.
class Module {
public:
    explicit Module(std::string kind) : kind_(std::move(kind)) {}
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    std::string_view kind() const { return kind_; }
    bool training() const { return training_; }
    void set_training(bool on);
    void set_requires_grad(bool on);

    /// Trainable tensors, depth-first, in registration order.
    std::vector<std::pair<std::string, Var>> named_parameters(const std::string& prefix = "") const;
    /// Non-trainable state (normalization statistics).
    std::vector<std::pair<std::string, Var>> named_buffers(const std::string& prefix = "") const;
    /// Parameters followed by buffers; the checkpoint/manifest order.
    std::vector<std::pair<std::string, Var>> named_state(const std::string& prefix = "") const;
    /// Pre-order walk over this module and every descendant.
    void visit(const std::function<void(const std::string& path, const Module&)>& fn,
               const std::string& prefix = "") const;

protected:
    Var& register_parameter(std::string name, Tensor init);
    Var& register_buffer(std::string name, Tensor init);
    void register_module(std::string name, Module& child);

private:
    std::string kind_;
    bool training_ = true;
    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, Var>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

std::string join_path(const std::string& prefix, const std::string& name);

enum class Init {
    KaimingOut,  // N(0, 2 / fan_out); residual-network convolutions
    Default,     // U(-1/sqrt(fan_in), 1/sqrt(fan_in)); attention sub-networks
};

struct ConvOptions {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    ag::Conv2dSpec spec{};
    bool bias = false;
    Init init = Init::KaimingOut;
};

class Conv2d : public Module {
public:
    Conv2d(const ConvOptions& opts, Rng& rng);
    Var forward(const Var& x) const;
    const ConvOptions& options() const { return opts_; }
    const Var& weight() const { return weight_; }

private:
    ConvOptions opts_;
    Var weight_;
    Var bias_;
};

/// 3x3 convolution with padding 1.
ConvOptions conv3x3(int in, int out, int stride = 1, bool bias = false);
ConvOptions conv1x1(int in, int out, int stride = 1, bool bias = false);

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int channels);
    Var forward(const Var& x);

private:
    Var gamma_;
    Var beta_;
    Var running_mean_;
    Var running_var_;
};

/// Multiplicative recalibration output = x * gate(x). Implementations are
/// interchangeable inside PCAR.
class Recalibrator : public Module {
public:
    using Module::Module;
    virtual Var forward(const Var& x) = 0;
};

class IdentityRecalibration : public Recalibrator {
public:
    IdentityRecalibration() : Recalibrator("identity") {}
    Var forward(const Var& x) override { return x; }
};

/// Spatial pyramid recalibration: adaptive average pools at 1x1, 2x2 and
/// 4x4, a 1x1 convolution per level, bilinear resize back, summed and
/// squashed by a sigmoid into a per-channel, per-position gate.
class Spr : public Recalibrator {
public:
    static constexpr std::array<int, 3> kPyramid{1, 2, 4};

    Spr(int channels, Rng& rng);
    Var forward(const Var& x) override;
    /// The gate in (0, 1), same shape as x.
    Var gate(const Var& x);

private:
    std::vector<std::unique_ptr<Conv2d>> level_convs_;
};

/// PCAR: three parallel 3x3 convolutions, per-branch recalibration,
/// a softmax over all 3C globally pooled channels, reweighting of the raw
/// branch outputs, and summation of the three C-channel groups.
class Pcar : public Module {
public:
    struct Output {
        Var out;      // N x C x H x W
        Var weights;  // N x 3C x 1 x 1, sums to 1 per sample
    };

    Pcar(int channels, Rng& rng, bool with_spr = true);
    Var forward(const Var& x) { return forward_detailed(x).out; }
    Output forward_detailed(const Var& x);

    int channels() const { return channels_; }
    Conv2d& branch(int i) { return *branches_.at(i); }

private:
    int channels_;
    std::vector<std::unique_ptr<Conv2d>> branches_;
    std::vector<std::unique_ptr<Recalibrator>> recal_;
};

/// Attentional feature fusion: alpha * main + (1 - alpha) * residual with
/// alpha from a global (pooled) and a local (pointwise) channel-context
/// branch applied to main + residual. Each branch is
/// conv1x1 -> BN -> ReLU -> conv1x1 -> BN; the global branch normalizes
/// pooled 1x1 maps over the batch.
class Aff : public Module {
public:
    static constexpr int kReduction = 4;

    Aff(int channels, Rng& rng);
    Var forward(const Var& main, const Var& residual);
    Var attention(const Var& main, const Var& residual);

private:
    Conv2d local1_;
    BatchNorm2d local_bn1_;
    Conv2d local2_;
    BatchNorm2d local_bn2_;
    Conv2d global1_;
    BatchNorm2d global_bn1_;
    Conv2d global2_;
    BatchNorm2d global_bn2_;
};

/// Rectangular self-calibration: horizontal and vertical strip pooling,
/// a large-kernel strip convolution on each, their broadcast product
/// through a sigmoid as the attention, then a 3x3 fusion convolution.
class Rcm : public Module {
public:
    static constexpr int kStripKernel = 11;

    Rcm(int channels, Rng& rng);
    Var forward(const Var& x);
    Var attention(const Var& x);

private:
    Conv2d strip_h_;  // kernel 11 x 1 over the row profile
    Conv2d strip_w_;  // kernel 1 x 11 over the column profile
    Conv2d fuse_;
};

struct BlockConfig {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    bool use_aff = true;
    bool use_pcar = true;

    bool needs_projection() const { return stride != 1 || in_channels != out_channels; }
    /// Throws ConfigError on impossible combinations.
    void validate() const;
};

/// Residual block: conv3x3(stride) -> BN -> ReLU -> PCAR (or conv3x3) -> BN,
/// merged with the (projected) identity by AFF or by addition, then ReLU.
/// With both flags off this is the standard basic residual block, and the
/// child names follow the usual conv1/bn1/conv2/bn2/downsample layout.
class PaResidualBlock : public Module {
public:
    PaResidualBlock(const BlockConfig& config, Rng& rng);
    Var forward(const Var& x);
    const BlockConfig& config() const { return config_; }

private:
    BlockConfig config_;
    Conv2d conv1_;
    BatchNorm2d bn1_;
    std::unique_ptr<Conv2d> conv2_;
    std::unique_ptr<Pcar> pcar_;
    BatchNorm2d bn2_;
    std::unique_ptr<Conv2d> down_conv_;
    std::unique_ptr<BatchNorm2d> down_bn_;
    std::unique_ptr<Aff> aff_;
};

/// Counts of module kinds reachable from `root`, e.g. {"pcar": 16, ...}.
std::vector<std::pair<std::string, int>> block_inventory(const Module& root);
int count_kind(const Module& root, std::string_view kind);

}  // namespace pfadseg::nn
