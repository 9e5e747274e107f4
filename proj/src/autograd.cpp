#include "pfadseg/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "pfadseg/errors.hpp"

namespace pfadseg::ag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

using NodePtr = std::shared_ptr<Node>;

/// Creates the output node. Parents and the closure are only kept when at
/// least one input needs a gradient.
Var make_output(Tensor value, std::initializer_list<const Var*> inputs) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const Var* v : inputs) {
        if (v->defined() && v->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        for (const Var* v : inputs) {
            if (v->defined()) node->parents.push_back(v->node());
        }
    }
    return Var(std::move(node));
}

Tensor& grad_of(Node& n) {
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

bool needs(const NodePtr& n) { return n && n->requires_grad; }

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw InvalidArgument(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

int broadcast_dim(int a, int b, const char* op) {
    if (a == b) return a;
    if (a == 1) return b;
    if (b == 1) return a;
    throw InvalidArgument(std::string(op) + ": extents " + std::to_string(a) + " and " +
                          std::to_string(b) + " do not broadcast");
}

struct Strides {
    std::size_t n, c, h, w;
};

Strides broadcast_strides(const Shape& s) {
    const std::size_t w = 1;
    const std::size_t h = static_cast<std::size_t>(s.w);
    const std::size_t c = h * s.h;
    const std::size_t n = c * s.c;
    return {s.n == 1 ? 0 : n, s.c == 1 ? 0 : c, s.h == 1 ? 0 : h, s.w == 1 ? 0 : w};
}

/// Visits every output element with the matching flat indices of a and b.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    const Strides sa = broadcast_strides(a);
    const Strides sb = broadcast_strides(b);
    std::size_t o = 0;
    for (int n = 0; n < out.n; ++n) {
        for (int c = 0; c < out.c; ++c) {
            for (int h = 0; h < out.h; ++h) {
                std::size_t ia = n * sa.n + c * sa.c + h * sa.h;
                std::size_t ib = n * sb.n + c * sb.c + h * sb.h;
                for (int w = 0; w < out.w; ++w, ++o) {
                    f(o, ia, ib);
                    ia += sa.w;
                    ib += sb.w;
                }
            }
        }
    }
}

enum class BinaryOp { Add, Sub, Mul };

Var binary(const Var& a, const Var& b, BinaryOp op, const char* name) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const Shape so{broadcast_dim(sa.n, sb.n, name), broadcast_dim(sa.c, sb.c, name),
                   broadcast_dim(sa.h, sb.h, name), broadcast_dim(sa.w, sb.w, name)};
    Tensor out(so);
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    if (sa == sb) {
        const std::size_t n = out.size();
        switch (op) {
            case BinaryOp::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case BinaryOp::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case BinaryOp::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        }
    } else {
        for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            switch (op) {
                case BinaryOp::Add: po[o] = pa[ia] + pb[ib]; break;
                case BinaryOp::Sub: po[o] = pa[ia] - pb[ib]; break;
                case BinaryOp::Mul: po[o] = pa[ia] * pb[ib]; break;
            }
        });
    }
    Var result = make_output(std::move(out), {&a, &b});
    if (!result.requires_grad()) return result;
    result.node()->backward = [an = a.node(), bn = b.node(), op](const Node& self) {
        const double* g = self.grad.data();
        const Shape& so = self.value.shape();
        double* ga = needs(an) ? grad_of(*an).data() : nullptr;
        double* gb = needs(bn) ? grad_of(*bn).data() : nullptr;
        const double* va = an->value.data();
        const double* vb = bn->value.data();
        for_each_broadcast(so, an->value.shape(), bn->value.shape(),
                           [&](std::size_t o, std::size_t ia, std::size_t ib) {
                               switch (op) {
                                   case BinaryOp::Add:
                                       if (ga) ga[ia] += g[o];
                                       if (gb) gb[ib] += g[o];
                                       break;
                                   case BinaryOp::Sub:
                                       if (ga) ga[ia] += g[o];
                                       if (gb) gb[ib] -= g[o];
                                       break;
                                   case BinaryOp::Mul:
                                       if (ga) ga[ia] += g[o] * vb[ib];
                                       if (gb) gb[ib] += g[o] * va[ia];
                                       break;
                               }
                           });
    };
    return result;
}

struct ConvGeometry {
    int n, cin, h, w;
    int cout, kh, kw;
    int oh, ow;
    Conv2dSpec spec;

    int k() const { return cin * kh * kw; }
    int p() const { return oh * ow; }
    bool pointwise() const {
        return kh == 1 && kw == 1 && spec.stride_h == 1 && spec.stride_w == 1 && spec.pad_h == 0 &&
               spec.pad_w == 0;
    }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const int P = g.p();
    for (int ci = 0; ci < g.cin; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                double* row = cols + static_cast<std::size_t>((ci * g.kh + ki) * g.kw + kj) * P;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.spec.stride_h - g.spec.pad_h + ki;
                    double* dst = row + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.spec.stride_w - g.spec.pad_w + kj;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    const int P = g.p();
    for (int ci = 0; ci < g.cin; ++ci) {
        double* plane = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* row =
                    cols + static_cast<std::size_t>((ci * g.kh + ki) * g.kw + kj) * P;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.spec.stride_h - g.spec.pad_h + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * g.ow;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.spec.stride_w - g.spec.pad_w + kj;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void Var::backward() const {
    if (!defined()) throw InvalidArgument("backward on undefined Var");
    if (value().size() != 1) throw InvalidArgument("backward requires a scalar output");
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    grad_of(*node_).storage()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.c != ws.c) {
        throw InvalidArgument("conv2d: input has " + std::to_string(xs.c) +
                              " channels, kernel expects " + std::to_string(ws.c));
    }
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(ws.n)) {
        throw InvalidArgument("conv2d: bias size mismatch");
    }
    ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, 0, 0, spec};
    g.oh = (xs.h + 2 * spec.pad_h - ws.h) / spec.stride_h + 1;
    g.ow = (xs.w + 2 * spec.pad_w - ws.w) / spec.stride_w + 1;
    if (g.oh <= 0 || g.ow <= 0) throw InvalidArgument("conv2d: input smaller than kernel");

    const int K = g.k();
    const int P = g.p();
    Tensor out({g.n, g.cout, g.oh, g.ow});
    Buffer cols;
    if (!g.pointwise()) cols.resize(static_cast<std::size_t>(K) * P);
    ConstMatMap wm(weight.value().data(), g.cout, K);
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(g.cout) * P;
    for (int n = 0; n < g.n; ++n) {
        const double* xn = x.value().data() + n * in_stride;
        const double* colp = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            colp = cols.data();
        }
        MatMap om(out.data() + n * out_stride, g.cout, P);
        om.noalias() = wm * ConstMatMap(colp, K, P);
        if (bias.defined()) {
            for (int co = 0; co < g.cout; ++co) om.row(co).array() += bias.value()[co];
        }
    }

    Var result = make_output(std::move(out), {&x, &weight, &bias});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), wn = weight.node(), bn = bias.node(),
                               g](const Node& self) {
        const int K = g.k();
        const int P = g.p();
        const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
        const std::size_t out_stride = static_cast<std::size_t>(g.cout) * P;
        Buffer cols;
        if (!g.pointwise()) cols.resize(static_cast<std::size_t>(K) * P);
        ConstMatMap wm(wn->value.data(), g.cout, K);
        for (int n = 0; n < g.n; ++n) {
            ConstMatMap gy(self.grad.data() + n * out_stride, g.cout, P);
            const double* xv = xn->value.data() + n * in_stride;
            if (needs(wn)) {
                const double* colp = xv;
                if (!g.pointwise()) {
                    im2col(xv, g, cols.data());
                    colp = cols.data();
                }
                MatMap gw(grad_of(*wn).data(), g.cout, K);
                gw.noalias() += gy * ConstMatMap(colp, K, P).transpose();
            }
            if (needs(bn)) {
                double* gb = grad_of(*bn).data();
                for (int co = 0; co < g.cout; ++co) gb[co] += gy.row(co).sum();
            }
            if (needs(xn)) {
                double* gx = grad_of(*xn).data() + n * in_stride;
                if (g.pointwise()) {
                    MatMap(gx, K, P).noalias() += wm.transpose() * gy;
                } else {
                    MatMap(cols.data(), K, P).noalias() = wm.transpose() * gy;
                    col2im_add(cols.data(), g, gx);
                }
            }
        }
    };
    return result;
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state,
               bool training) {
    const Shape& s = x.shape();
    if (gamma.value().size() != static_cast<std::size_t>(s.c) ||
        beta.value().size() != static_cast<std::size_t>(s.c)) {
        throw InvalidArgument("batch_norm: affine parameters do not match " + s.str());
    }
    if (!state.running_mean || !state.running_var) {
        throw InvalidArgument("batch_norm: missing running statistics");
    }
    const std::size_t plane = s.plane();
    const std::size_t m = static_cast<std::size_t>(s.n) * plane;
    std::vector<double> mean(s.c), inv_std(s.c);
    const double* xv = x.value().data();
    if (training) {
        for (int c = 0; c < s.c; ++c) {
            double sum = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* p = xv + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mu = sum / static_cast<double>(m);
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* p = xv + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
            }
            const double var = sq / static_cast<double>(m);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
            (*state.running_mean)[c] =
                (1.0 - state.momentum) * (*state.running_mean)[c] + state.momentum * mu;
            (*state.running_var)[c] =
                (1.0 - state.momentum) * (*state.running_var)[c] + state.momentum * unbiased;
        }
    } else {
        for (int c = 0; c < s.c; ++c) {
            mean[c] = (*state.running_mean)[c];
            inv_std[c] = 1.0 / std::sqrt((*state.running_var)[c] + state.eps);
        }
    }
    Tensor out(s);
    Tensor xhat(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const double gm = gamma.value()[c];
            const double bt = beta.value()[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (xv[base + i] - mean[c]) * inv_std[c];
                xhat[base + i] = xh;
                out[base + i] = gm * xh + bt;
            }
        }
    }
    Var result = make_output(std::move(out), {&x, &gamma, &beta});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), gn = gamma.node(), bn = beta.node(),
                               xhat = std::move(xhat), inv_std = std::move(inv_std), training,
                               s](const Node& self) {
        const std::size_t plane = s.plane();
        const double m = static_cast<double>(s.n) * static_cast<double>(plane);
        const double* gy = self.grad.data();
        for (int c = 0; c < s.c; ++c) {
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_g += gy[base + i];
                    sum_gx += gy[base + i] * xhat[base + i];
                }
            }
            if (needs(gn)) grad_of(*gn)[c] += sum_gx;
            if (needs(bn)) grad_of(*bn)[c] += sum_g;
            if (!needs(xn)) continue;
            const double gm = gn->value[c];
            double* gx = grad_of(*xn).data();
            for (int n = 0; n < s.n; ++n) {
                const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    if (training) {
                        gx[base + i] += gm * inv_std[c] / m *
                                        (m * gy[base + i] - sum_g - xhat[base + i] * sum_gx);
                    } else {
                        gx[base + i] += gm * inv_std[c] * gy[base + i];
                    }
                }
            }
        }
    };
    return result;
}

Var relu(const Var& x) {
    Tensor out(x.shape());
    const double* xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node()](const Node& self) {
        double* gx = grad_of(*xn).data();
        const double* xv = xn->value.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += self.grad[i];
        }
    };
    return result;
}

Var sigmoid(const Var& x) {
    Tensor out(x.shape());
    const double* xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Split on sign so large magnitudes never overflow exp().
        const double v = xv[i];
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node()](const Node& self) {
        double* gx = grad_of(*xn).data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            gx[i] += self.grad[i] * y * (1.0 - y);
        }
    };
    return result;
}

Var affine(const Var& x, double scale, double shift) {
    Tensor out(x.shape());
    const double* xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), scale](const Node& self) {
        double* gx = grad_of(*xn).data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += scale * self.grad[i];
    };
    return result;
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryOp::Add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryOp::Sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryOp::Mul, "mul"); }

Var mean_hw(const Var& x, bool over_h, bool over_w) {
    const Shape s = x.shape();
    const Shape so{s.n, s.c, over_h ? 1 : s.h, over_w ? 1 : s.w};
    const double count = (over_h ? s.h : 1) * static_cast<double>(over_w ? s.w : 1);
    Tensor out(so, 0.0);
    const double* xv = x.value().data();
    std::size_t i = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w, ++i)
                    out.at(n, c, over_h ? 0 : h, over_w ? 0 : w) += xv[i] / count;
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), over_h, over_w, count](const Node& self) {
        const Shape s = xn->value.shape();
        double* gx = grad_of(*xn).data();
        std::size_t i = 0;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w, ++i)
                        gx[i] += self.grad.at(n, c, over_h ? 0 : h, over_w ? 0 : w) / count;
    };
    return result;
}

namespace {

struct Bin {
    int start;
    int end;
};

std::vector<Bin> adaptive_bins(int in, int out) {
    std::vector<Bin> bins(out);
    for (int i = 0; i < out; ++i) {
        bins[i].start = static_cast<int>(std::floor(static_cast<double>(i) * in / out));
        bins[i].end = static_cast<int>(std::ceil(static_cast<double>(i + 1) * in / out));
    }
    return bins;
}

struct LerpTap {
    int i0;
    int i1;
    double frac;
};

std::vector<LerpTap> bilinear_taps(int in, int out) {
    std::vector<LerpTap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw InvalidArgument("adaptive_avg_pool: bad output size");
    const Shape s = x.shape();
    const auto rows = adaptive_bins(s.h, out_h);
    const auto cols = adaptive_bins(s.w, out_w);
    Tensor out({s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < out_h; ++i)
                for (int j = 0; j < out_w; ++j) {
                    double sum = 0.0;
                    for (int y = rows[i].start; y < rows[i].end; ++y)
                        for (int xw = cols[j].start; xw < cols[j].end; ++xw)
                            sum += x.value().at(n, c, y, xw);
                    const int cnt = (rows[i].end - rows[i].start) * (cols[j].end - cols[j].start);
                    out.at(n, c, i, j) = sum / cnt;
                }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), rows, cols](const Node& self) {
        const Shape so = self.value.shape();
        Tensor& gx = grad_of(*xn);
        for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < so.c; ++c)
                for (int i = 0; i < so.h; ++i)
                    for (int j = 0; j < so.w; ++j) {
                        const int cnt =
                            (rows[i].end - rows[i].start) * (cols[j].end - cols[j].start);
                        const double g = self.grad.at(n, c, i, j) / cnt;
                        for (int y = rows[i].start; y < rows[i].end; ++y)
                            for (int xw = cols[j].start; xw < cols[j].end; ++xw)
                                gx.at(n, c, y, xw) += g;
                    }
    };
    return result;
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw InvalidArgument("upsample_bilinear: bad output size");
    const Shape s = x.shape();
    const auto ty = bilinear_taps(s.h, out_h);
    const auto tx = bilinear_taps(s.w, out_w);
    Tensor out({s.n, s.c, out_h, out_w});
    const double* xv = x.value().data();
    double* ov = out.data();
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* src = xv + static_cast<std::size_t>(nc) * s.plane();
        double* dst = ov + static_cast<std::size_t>(nc) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const double* r0 = src + static_cast<std::size_t>(ty[i].i0) * s.w;
            const double* r1 = src + static_cast<std::size_t>(ty[i].i1) * s.w;
            const double fy = ty[i].frac;
            for (int j = 0; j < out_w; ++j) {
                const double fx = tx[j].frac;
                const double top = r0[tx[j].i0] * (1.0 - fx) + r0[tx[j].i1] * fx;
                const double bot = r1[tx[j].i0] * (1.0 - fx) + r1[tx[j].i1] * fx;
                dst[static_cast<std::size_t>(i) * out_w + j] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), ty, tx, s](const Node& self) {
        const int out_h = static_cast<int>(ty.size());
        const int out_w = static_cast<int>(tx.size());
        double* gx = grad_of(*xn).data();
        const double* gy = self.grad.data();
        for (int nc = 0; nc < s.n * s.c; ++nc) {
            double* dst = gx + static_cast<std::size_t>(nc) * s.plane();
            const double* src = gy + static_cast<std::size_t>(nc) * out_h * out_w;
            for (int i = 0; i < out_h; ++i) {
                double* r0 = dst + static_cast<std::size_t>(ty[i].i0) * s.w;
                double* r1 = dst + static_cast<std::size_t>(ty[i].i1) * s.w;
                const double fy = ty[i].frac;
                for (int j = 0; j < out_w; ++j) {
                    const double g = src[static_cast<std::size_t>(i) * out_w + j];
                    const double fx = tx[j].frac;
                    r0[tx[j].i0] += g * (1.0 - fy) * (1.0 - fx);
                    r0[tx[j].i1] += g * (1.0 - fy) * fx;
                    r1[tx[j].i0] += g * fy * (1.0 - fx);
                    r1[tx[j].i1] += g * fy * fx;
                }
            }
        }
    };
    return result;
}

Var max_pool(const Var& x, int kernel, int stride, int pad) {
    const Shape s = x.shape();
    const int oh = (s.h + 2 * pad - kernel) / stride + 1;
    const int ow = (s.w + 2 * pad - kernel) / stride + 1;
    if (oh <= 0 || ow <= 0) throw InvalidArgument("max_pool: input smaller than window");
    Tensor out({s.n, s.c, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    std::size_t o = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int ki = 0; ki < kernel; ++ki) {
                        const int y = i * stride - pad + ki;
                        if (y < 0 || y >= s.h) continue;
                        for (int kj = 0; kj < kernel; ++kj) {
                            const int xw = j * stride - pad + kj;
                            if (xw < 0 || xw >= s.w) continue;
                            const std::size_t idx = x.value().index(n, c, y, xw);
                            if (x.value()[idx] > best) {
                                best = x.value()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), argmax = std::move(argmax)](const Node& self) {
        double* gx = grad_of(*xn).data();
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
    };
    return result;
}

Var softmax_channels(const Var& x) {
    const Shape s = x.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < s.c; ++c) mx = std::max(mx, x.value().at(n, c, h, w));
                double z = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const double e = std::exp(x.value().at(n, c, h, w) - mx);
                    out.at(n, c, h, w) = e;
                    z += e;
                }
                for (int c = 0; c < s.c; ++c) out.at(n, c, h, w) /= z;
            }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node()](const Node& self) {
        const Shape s = self.value.shape();
        Tensor& gx = grad_of(*xn);
        for (int n = 0; n < s.n; ++n)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    double dot = 0.0;
                    for (int c = 0; c < s.c; ++c)
                        dot += self.grad.at(n, c, h, w) * self.value.at(n, c, h, w);
                    for (int c = 0; c < s.c; ++c)
                        gx.at(n, c, h, w) +=
                            self.value.at(n, c, h, w) * (self.grad.at(n, c, h, w) - dot);
                }
    };
    return result;
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidArgument("concat_channels: nothing to concatenate");
    const Shape s0 = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw InvalidArgument("concat_channels: mismatched " + s.str() + " vs " + s0.str());
        }
        total += s.c;
    }
    Tensor out({s0.n, total, s0.h, s0.w});
    const std::size_t plane = s0.plane();
    for (int n = 0; n < s0.n; ++n) {
        double* dst = out.data() + static_cast<std::size_t>(n) * total * plane;
        for (const auto& p : parts) {
            const std::size_t chunk = static_cast<std::size_t>(p.shape().c) * plane;
            const double* src = p.value().data() + n * chunk;
            std::copy(src, src + chunk, dst);
            dst += chunk;
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    for (const auto& p : parts) node->requires_grad = node->requires_grad || p.requires_grad();
    if (!node->requires_grad) return Var(std::move(node));
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.node());
    node->parents = inputs;
    node->backward = [inputs, total, s0](const Node& self) {
        const std::size_t plane = s0.plane();
        for (int n = 0; n < s0.n; ++n) {
            const double* src = self.grad.data() + static_cast<std::size_t>(n) * total * plane;
            for (const auto& in : inputs) {
                const std::size_t chunk = static_cast<std::size_t>(in->value.shape().c) * plane;
                if (needs(in)) {
                    double* dst = grad_of(*in).data() + n * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
                src += chunk;
            }
        }
    };
    return Var(std::move(node));
}

Var slice_channels(const Var& x, int start, int count) {
    const Shape s = x.shape();
    if (start < 0 || count <= 0 || start + count > s.c) {
        throw InvalidArgument("slice_channels: range out of bounds for " + s.str());
    }
    const std::size_t plane = s.plane();
    Tensor out({s.n, count, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        const double* src = x.value().data() + (static_cast<std::size_t>(n) * s.c + start) * plane;
        std::copy(src, src + count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
    }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), start, count](const Node& self) {
        const Shape s = xn->value.shape();
        const std::size_t plane = s.plane();
        double* gx = grad_of(*xn).data();
        for (int n = 0; n < s.n; ++n) {
            double* dst = gx + (static_cast<std::size_t>(n) * s.c + start) * plane;
            const double* src = self.grad.data() + static_cast<std::size_t>(n) * count * plane;
            for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
    };
    return result;
}

Var group_sum(const Var& x, int groups) {
    const Shape s = x.shape();
    if (groups <= 0 || s.c % groups != 0) {
        throw InvalidArgument("group_sum: " + std::to_string(s.c) + " channels not divisible into " +
                              std::to_string(groups) + " groups");
    }
    const int c_out = s.c / groups;
    const std::size_t plane = s.plane();
    Tensor out({s.n, c_out, s.h, s.w}, 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int gi = 0; gi < groups; ++gi)
            for (int c = 0; c < c_out; ++c) {
                const double* src =
                    x.value().data() + (static_cast<std::size_t>(n) * s.c + gi * c_out + c) * plane;
                double* dst = out.data() + (static_cast<std::size_t>(n) * c_out + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), groups, c_out](const Node& self) {
        const Shape s = xn->value.shape();
        const std::size_t plane = s.plane();
        double* gx = grad_of(*xn).data();
        for (int n = 0; n < s.n; ++n)
            for (int gi = 0; gi < groups; ++gi)
                for (int c = 0; c < c_out; ++c) {
                    double* dst = gx + (static_cast<std::size_t>(n) * s.c + gi * c_out + c) * plane;
                    const double* src =
                        self.grad.data() + (static_cast<std::size_t>(n) * c_out + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
                }
    };
    return result;
}

Var pad_replicate(const Var& x, int pad_h, int pad_w) {
    const Shape s = x.shape();
    const int oh = s.h + 2 * pad_h;
    const int ow = s.w + 2 * pad_w;
    Tensor out({s.n, s.c, oh, ow});
    auto src_row = [&](int i) { return std::clamp(i - pad_h, 0, s.h - 1); };
    auto src_col = [&](int j) { return std::clamp(j - pad_w, 0, s.w - 1); };
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    out.at(n, c, i, j) = x.value().at(n, c, src_row(i), src_col(j));
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), pad_h, pad_w](const Node& self) {
        const Shape s = xn->value.shape();
        const Shape so = self.value.shape();
        Tensor& gx = grad_of(*xn);
        for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < so.c; ++c)
                for (int i = 0; i < so.h; ++i)
                    for (int j = 0; j < so.w; ++j)
                        gx.at(n, c, std::clamp(i - pad_h, 0, s.h - 1),
                              std::clamp(j - pad_w, 0, s.w - 1)) += self.grad.at(n, c, i, j);
    };
    return result;
}

Var sum_channels(const Var& x) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor out({s.n, 1, s.h, s.w}, 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const double* src = x.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            double* dst = out.data() + static_cast<std::size_t>(n) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    Var result = make_output(std::move(out), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node()](const Node& self) {
        const Shape s = xn->value.shape();
        const std::size_t plane = s.plane();
        double* gx = grad_of(*xn).data();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                double* dst = gx + (static_cast<std::size_t>(n) * s.c + c) * plane;
                const double* src = self.grad.data() + static_cast<std::size_t>(n) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
    };
    return result;
}

Var mean_all(const Var& x) {
    double sum = 0.0;
    for (double v : x.value().values()) sum += v;
    const double count = static_cast<double>(x.value().size());
    Var result = make_output(Tensor::scalar(sum / count), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), count](const Node& self) {
        const double g = self.grad[0] / count;
        for (double& v : grad_of(*xn).values()) v += g;
    };
    return result;
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    require_same(x.shape(), weights.shape(), "weighted_sum");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) sum += x.value()[i] * weights[i];
    Var result = make_output(Tensor::scalar(sum), {&x});
    if (!result.requires_grad()) return result;
    result.node()->backward = [xn = x.node(), weights](const Node& self) {
        double* gx = grad_of(*xn).data();
        for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += self.grad[0] * weights[i];
    };
    return result;
}

Var cosine_similarity(const Var& ft, const Var& fs, double eps) {
    require_same(ft.shape(), fs.shape(), "cosine_similarity");
    const Shape s = ft.shape();
    const std::size_t plane = s.plane();
    Tensor out(s);
    // Norms and denominators per (n, position), reused by the backward pass.
    std::vector<double> nt(s.n * plane), ns(s.n * plane);
    const double* tv = ft.value().data();
    const double* sv = fs.value().data();
    for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double tt = 0.0, ss = 0.0;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = base + c * plane + p;
                tt += tv[i] * tv[i];
                ss += sv[i] * sv[i];
            }
            nt[n * plane + p] = std::sqrt(tt);
            ns[n * plane + p] = std::sqrt(ss);
            const double d = nt[n * plane + p] * ns[n * plane + p] + eps;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = base + c * plane + p;
                out[i] = tv[i] * sv[i] / d;
            }
        }
    }
    Var result = make_output(std::move(out), {&ft, &fs});
    if (!result.requires_grad()) return result;
    result.node()->backward = [tn = ft.node(), sn = fs.node(), nt = std::move(nt),
                               ns = std::move(ns), eps](const Node& self) {
        const Shape s = self.value.shape();
        const std::size_t plane = s.plane();
        const double* tv = tn->value.data();
        const double* sv = sn->value.data();
        const double* g = self.grad.data();
        double* gt = needs(tn) ? grad_of(*tn).data() : nullptr;
        double* gs = needs(sn) ? grad_of(*sn).data() : nullptr;
        for (int n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const double a = nt[n * plane + p];
                const double b = ns[n * plane + p];
                const double d = a * b + eps;
                double dot = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    dot += g[i] * tv[i] * sv[i];
                }
                const double k = dot / (d * d);
                // d(|v|)/dv = v/|v|, taken as 0 at the origin.
                const double coef_t = a > 0.0 ? k * b / a : 0.0;
                const double coef_s = b > 0.0 ? k * a / b : 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    if (gt) gt[i] += g[i] * sv[i] / d - coef_t * tv[i];
                    if (gs) gs[i] += g[i] * tv[i] / d - coef_s * sv[i];
                }
            }
        }
    };
    return result;
}

Var focal_loss(const Var& prob, const Tensor& mask, double gamma, double eps) {
    require_same(prob.shape(), mask.shape(), "focal_loss");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw InvalidArgument("focal_loss: gamma must be finite and nonnegative");
    }
    const std::size_t count = mask.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double k = mask[i];
        const double p = prob.value()[i];
        const double q = k * p + (1.0 - k) * (1.0 - p);
        sum += -std::pow(1.0 - q, gamma) * std::log(q + eps);
    }
    Var result = make_output(Tensor::scalar(sum / static_cast<double>(count)), {&prob});
    if (!result.requires_grad()) return result;
    result.node()->backward = [pn = prob.node(), mask, gamma, eps](const Node& self) {
        const std::size_t count = mask.size();
        const double scale = self.grad[0] / static_cast<double>(count);
        double* gp = grad_of(*pn).data();
        for (std::size_t i = 0; i < count; ++i) {
            const double k = mask[i];
            const double p = pn->value[i];
            const double q = k * p + (1.0 - k) * (1.0 - p);
            const double one_minus = 1.0 - q;
            double dq = -std::pow(one_minus, gamma) / (q + eps);
            if (gamma > 0.0 && one_minus > 0.0) {
                dq += gamma * std::pow(one_minus, gamma - 1.0) * std::log(q + eps);
            }
            gp[i] += scale * dq * (2.0 * k - 1.0);
        }
    };
    return result;
}

Var l1_loss(const Var& prob, const Tensor& mask) {
    require_same(prob.shape(), mask.shape(), "l1_loss");
    const std::size_t count = mask.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) sum += std::abs(mask[i] - prob.value()[i]);
    Var result = make_output(Tensor::scalar(sum / static_cast<double>(count)), {&prob});
    if (!result.requires_grad()) return result;
    result.node()->backward = [pn = prob.node(), mask](const Node& self) {
        const std::size_t count = mask.size();
        const double scale = self.grad[0] / static_cast<double>(count);
        double* gp = grad_of(*pn).data();
        for (std::size_t i = 0; i < count; ++i) {
            const double diff = pn->value[i] - mask[i];
            if (diff > 0.0) gp[i] += scale;
            else if (diff < 0.0) gp[i] -= scale;
        }
    };
    return result;
}

}  // namespace pfadseg::ag
