#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pfadseg/tensor.hpp"

/// Reverse-mode automatic differentiation over NCHW tensors.
///
/// A `Var` is a handle to a graph node holding a value and (once backward
/// has run) an accumulated gradient. Nodes created from inputs that do not
/// require gradients keep no parents and no backward closure, so inference
/// graphs cost nothing beyond the forward values.
namespace pfadseg::ag {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad = Tensor(); }
    const std::shared_ptr<Node>& node() const { return node_; }

    /// Backpropagates from this scalar; gradients accumulate into every
    /// reachable node that requires them.
    void backward() const;

private:
    std::shared_ptr<Node> node_;
};

/// Leaf without gradient tracking.
Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var parameter(Tensor value);

struct Conv2dSpec {
    int stride_h = 1;
    int stride_w = 1;
    int pad_h = 0;
    int pad_w = 0;
};

/// Cross-correlation. `weight` is (out, in, kh, kw); `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec);

struct BatchNormState {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization. Training mode uses batch statistics and
/// updates the running estimates; eval mode uses the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state,
               bool training);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// scale * x + shift
Var affine(const Var& x, double scale, double shift);

/// Elementwise ops with broadcasting over extents equal to 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

/// Mean over the spatial rows and/or columns, keeping extents as 1.
Var mean_hw(const Var& x, bool over_h, bool over_w);
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
/// Bilinear resampling with half-pixel centers (align_corners = false).
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var max_pool(const Var& x, int kernel, int stride, int pad);
/// Softmax across channels at each (n, h, w).
Var softmax_channels(const Var& x);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int start, int count);
/// Y[c] = sum_g X[g * C/groups + c].
Var group_sum(const Var& x, int groups);
/// Edge-replicating padding.
Var pad_replicate(const Var& x, int pad_h, int pad_w);
/// Sum across channels -> N x 1 x H x W.
Var sum_channels(const Var& x);
/// Mean of every element -> scalar.
Var mean_all(const Var& x);
/// sum_i x_i * weights_i -> scalar.
Var weighted_sum(const Var& x, const Tensor& weights);

/// Per-position normalized product ft * fs / (|ft| |fs| + eps); channel
/// count is retained, so summing channels gives the cosine similarity.
Var cosine_similarity(const Var& ft, const Var& fs, double eps);

/// Mean over pixels of -(1-q)^gamma log(q + eps), q = K p + (1-K)(1-p).
Var focal_loss(const Var& prob, const Tensor& mask, double gamma, double eps);
/// Mean absolute difference between prob and mask.
Var l1_loss(const Var& prob, const Tensor& mask);

}  // namespace pfadseg::ag
