#include "bgcrack/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace bgcrack {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using CMapMat = Eigen::Map<const Mat>;

thread_local MacCounter* g_mac_counter = nullptr;

using detail::TensorImpl;
using detail::make_result;
using detail::wants_grad;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

void require_rank4(const Tensor& x, const char* op) {
    require(x.defined() && x.rank() == 4,
            std::string(op) + ": expected NCHW tensor, got " + (x.defined() ? shape_str(x.shape()) : "undefined"));
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Rank-padded broadcast geometry for equal-rank binary ops.
struct Broadcast {
    std::array<int, 4> out{1, 1, 1, 1};
    std::array<std::size_t, 4> sa{0, 0, 0, 0};
    std::array<std::size_t, 4> sb{0, 0, 0, 0};
    Shape shape;
    bool same = false;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    require(a.size() == b.size() && a.size() <= 4,
            std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    Broadcast bc;
    bc.same = a == b;
    const std::size_t off = 4 - a.size();
    std::array<int, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[off + i] = a[i];
        db[off + i] = b[i];
        require(a[i] == b[i] || a[i] == 1 || b[i] == 1,
                std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    std::size_t stride_a = 1, stride_b = 1;
    for (int i = 3; i >= 0; --i) {
        bc.out[i] = std::max(da[i], db[i]);
        bc.sa[i] = da[i] == 1 ? 0 : stride_a;
        bc.sb[i] = db[i] == 1 ? 0 : stride_b;
        stride_a *= static_cast<std::size_t>(da[i]);
        stride_b *= static_cast<std::size_t>(db[i]);
    }
    for (std::size_t i = 0; i < a.size(); ++i) bc.shape.push_back(bc.out[off + i]);
    return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    std::size_t o = 0;
    for (int i0 = 0; i0 < bc.out[0]; ++i0)
        for (int i1 = 0; i1 < bc.out[1]; ++i1)
            for (int i2 = 0; i2 < bc.out[2]; ++i2) {
                std::size_t ia = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
                std::size_t ib = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
                for (int i3 = 0; i3 < bc.out[3]; ++i3, ++o, ia += bc.sa[3], ib += bc.sb[3]) f(o, ia, ib);
            }
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
    const Broadcast bc = broadcast_shapes(a.shape(), b.shape(), op);
    std::vector<double> out(shape_numel(bc.shape));
    const auto av = a.data();
    const auto bv = b.data();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        switch (kind) {
            case BinaryKind::Add: out[o] = av[ia] + bv[ib]; break;
            case BinaryKind::Sub: out[o] = av[ia] - bv[ib]; break;
            case BinaryKind::Mul: out[o] = av[ia] * bv[ib]; break;
        }
    });
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    return make_result(bc.shape, std::move(out), {a, b}, [pa, pb, bc, kind](TensorImpl& self) {
        const auto& g = self.grad;
        const bool ga = pa->requires_grad;
        const bool gb = pb->requires_grad;
        double* da = ga ? pa->grad_buffer().data() : nullptr;
        double* db = gb ? pb->grad_buffer().data() : nullptr;
        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::Add:
                    if (ga) da[ia] += g[o];
                    if (gb) db[ib] += g[o];
                    break;
                case BinaryKind::Sub:
                    if (ga) da[ia] += g[o];
                    if (gb) db[ib] -= g[o];
                    break;
                case BinaryKind::Mul:
                    if (ga) da[ia] += g[o] * pb->value[ib];
                    if (gb) db[ib] += g[o] * pa->value[ia];
                    break;
            }
        });
    });
}

// Source index along one axis for a padded convolution tap; -1 means zero.
inline int tap_index(int pos, int size, PadMode mode) {
    if (pos >= 0 && pos < size) return pos;
    if (mode == PadMode::Zeros) return -1;
    return pos < 0 ? 0 : size - 1;
}

struct ConvGeom {
    int n, ci, h, w, co, k, ho, wo, cig, cog;
    Conv2dSpec spec;
};

void im2col(const double* x, const ConvGeom& g, int c0, double* cols) {
    const int hw_out = g.ho * g.wo;
    for (int c = 0; c < g.cig; ++c) {
        const double* plane = x + static_cast<std::size_t>(c0 + c) * g.h * g.w;
        for (int kh = 0; kh < g.k; ++kh)
            for (int kw = 0; kw < g.k; ++kw) {
                double* row = cols + (static_cast<std::size_t>(c * g.k + kh) * g.k + kw) * hw_out;
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = tap_index(oh * g.spec.stride - g.spec.padding + kh, g.h, g.spec.pad_mode);
                    for (int ow = 0; ow < g.wo; ++ow) {
                        const int iw = tap_index(ow * g.spec.stride - g.spec.padding + kw, g.w, g.spec.pad_mode);
                        row[oh * g.wo + ow] = (ih < 0 || iw < 0) ? 0.0 : plane[ih * g.w + iw];
                    }
                }
            }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, int c0, double* dx) {
    const int hw_out = g.ho * g.wo;
    for (int c = 0; c < g.cig; ++c) {
        double* plane = dx + static_cast<std::size_t>(c0 + c) * g.h * g.w;
        for (int kh = 0; kh < g.k; ++kh)
            for (int kw = 0; kw < g.k; ++kw) {
                const double* row = cols + (static_cast<std::size_t>(c * g.k + kh) * g.k + kw) * hw_out;
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = tap_index(oh * g.spec.stride - g.spec.padding + kh, g.h, g.spec.pad_mode);
                    if (ih < 0) continue;
                    for (int ow = 0; ow < g.wo; ++ow) {
                        const int iw = tap_index(ow * g.spec.stride - g.spec.padding + kw, g.w, g.spec.pad_mode);
                        if (iw >= 0) plane[ih * g.w + iw] += row[oh * g.wo + ow];
                    }
                }
            }
    }
}

bool is_pointwise(const ConvGeom& g) {
    return g.k == 1 && g.spec.stride == 1 && g.spec.padding == 0 && g.spec.groups == 1;
}

bool is_depthwise(const ConvGeom& g) { return g.spec.groups == g.ci && g.co == g.ci && g.spec.groups > 1; }

void depthwise_forward(const double* x, const double* w, const ConvGeom& g, double* y) {
    for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.ci; ++c) {
            const double* plane = x + (static_cast<std::size_t>(n) * g.ci + c) * g.h * g.w;
            const double* kern = w + static_cast<std::size_t>(c) * g.k * g.k;
            double* out = y + (static_cast<std::size_t>(n) * g.co + c) * g.ho * g.wo;
            for (int oh = 0; oh < g.ho; ++oh)
                for (int ow = 0; ow < g.wo; ++ow) {
                    double acc = 0.0;
                    for (int kh = 0; kh < g.k; ++kh) {
                        const int ih = tap_index(oh * g.spec.stride - g.spec.padding + kh, g.h, g.spec.pad_mode);
                        if (ih < 0) continue;
                        for (int kw = 0; kw < g.k; ++kw) {
                            const int iw = tap_index(ow * g.spec.stride - g.spec.padding + kw, g.w, g.spec.pad_mode);
                            if (iw >= 0) acc += plane[ih * g.w + iw] * kern[kh * g.k + kw];
                        }
                    }
                    out[oh * g.wo + ow] += acc;
                }
        }
}

void depthwise_backward(const double* x, const double* w, const double* dy, const ConvGeom& g, double* dx,
                        double* dw) {
    for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.ci; ++c) {
            const double* plane = x + (static_cast<std::size_t>(n) * g.ci + c) * g.h * g.w;
            const double* kern = w + static_cast<std::size_t>(c) * g.k * g.k;
            const double* gout = dy + (static_cast<std::size_t>(n) * g.co + c) * g.ho * g.wo;
            double* gplane = dx ? dx + (static_cast<std::size_t>(n) * g.ci + c) * g.h * g.w : nullptr;
            double* gkern = dw ? dw + static_cast<std::size_t>(c) * g.k * g.k : nullptr;
            for (int oh = 0; oh < g.ho; ++oh)
                for (int ow = 0; ow < g.wo; ++ow) {
                    const double go = gout[oh * g.wo + ow];
                    if (go == 0.0) continue;
                    for (int kh = 0; kh < g.k; ++kh) {
                        const int ih = tap_index(oh * g.spec.stride - g.spec.padding + kh, g.h, g.spec.pad_mode);
                        if (ih < 0) continue;
                        for (int kw = 0; kw < g.k; ++kw) {
                            const int iw = tap_index(ow * g.spec.stride - g.spec.padding + kw, g.w, g.spec.pad_mode);
                            if (iw < 0) continue;
                            if (gplane) gplane[ih * g.w + iw] += go * kern[kh * g.k + kw];
                            if (gkern) gkern[kh * g.k + kw] += go * plane[ih * g.w + iw];
                        }
                    }
                }
        }
}

}  // namespace

// ---------------------------------------------------------------------------

MacCounter::MacCounter() : previous_(g_mac_counter) { g_mac_counter = this; }
MacCounter::~MacCounter() {
    g_mac_counter = previous_;
    if (previous_) previous_->total_ += total_;
}

void MacCounter::add(std::int64_t macs) {
    if (g_mac_counter) g_mac_counter->total_ += macs;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= factor;
    auto pa = a.impl_ptr();
    return make_result(a.shape(), std::move(out), {a}, [pa, factor](TensorImpl& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double value) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v += value;
    auto pa = a.impl_ptr();
    return make_result(a.shape(), std::move(out), {a}, [pa](TensorImpl& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights) {
    require(!xs.empty(), "weighted_sum: no inputs");
    require(weights.numel() == xs.size(), "weighted_sum: " + std::to_string(weights.numel()) +
                                              " weights for " + std::to_string(xs.size()) + " inputs");
    const Shape& shape = xs.front().shape();
    std::vector<double> out(xs.front().numel(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        require(xs[i].shape() == shape, "weighted_sum: shape mismatch " + shape_str(xs[i].shape()) +
                                            " vs " + shape_str(shape));
        const double wi = weights.data()[i];
        const auto xv = xs[i].data();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += wi * xv[j];
    }
    std::vector<Tensor> inputs = xs;
    inputs.push_back(weights);
    std::vector<std::shared_ptr<TensorImpl>> px;
    for (const auto& x : xs) px.push_back(x.impl_ptr());
    auto pw = weights.impl_ptr();
    return make_result(shape, std::move(out), inputs, [px, pw](TensorImpl& self) {
        const auto& g = self.grad;
        for (std::size_t i = 0; i < px.size(); ++i) {
            const double wi = pw->value[i];
            if (px[i]->requires_grad) {
                auto& dx = px[i]->grad_buffer();
                for (std::size_t j = 0; j < g.size(); ++j) dx[j] += wi * g[j];
            }
            if (pw->requires_grad) {
                double acc = 0.0;
                for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * px[i]->value[j];
                pw->grad_buffer()[i] += acc;
            }
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
    auto px = x.impl_ptr();
    return make_result(x.shape(), std::move(out), {x}, [px](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.value[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoid_scalar(xv[i]);
    auto px = x.impl_ptr();
    return make_result(x.shape(), std::move(out), {x}, [px](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = px->value[i];
            const double s = sigmoid_scalar(v);
            g[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
        }
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto px = x.impl_ptr();
    return make_result({1}, {acc}, {x}, [px](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    auto px = x.impl_ptr();
    return make_result(std::move(shape), std::move(out), {x}, [px](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dSpec& spec) {
    require_rank4(x, "conv2d");
    require(w.defined() && w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be [Co,Ci/g,k,k]");
    require(spec.groups >= 1 && spec.stride >= 1 && spec.padding >= 0, "conv2d: invalid spec");
    ConvGeom g{};
    g.n = x.dim(0);
    g.ci = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.co = w.dim(0);
    g.k = w.dim(2);
    g.spec = spec;
    require(g.ci % spec.groups == 0 && g.co % spec.groups == 0, "conv2d: channels not divisible by groups");
    g.cig = g.ci / spec.groups;
    g.cog = g.co / spec.groups;
    require(w.dim(1) == g.cig, "conv2d: input has " + std::to_string(g.ci) + " channels, weight expects " +
                                   std::to_string(w.dim(1) * spec.groups));
    require(!bias.defined() || static_cast<int>(bias.numel()) == g.co, "conv2d: bias size mismatch");
    g.ho = (g.h + 2 * spec.padding - g.k) / spec.stride + 1;
    g.wo = (g.w + 2 * spec.padding - g.k) / spec.stride + 1;
    require(g.ho > 0 && g.wo > 0, "conv2d: kernel larger than padded input");

    MacCounter::add(static_cast<std::int64_t>(g.n) * g.co * g.ho * g.wo * g.cig * g.k * g.k);

    const int hw_out = g.ho * g.wo;
    const int kdim = g.cig * g.k * g.k;
    std::vector<double> out(static_cast<std::size_t>(g.n) * g.co * hw_out, 0.0);
    const double* xd = x.data().data();
    const double* wd = w.data().data();

    if (is_depthwise(g)) {
        depthwise_forward(xd, wd, g, out.data());
    } else {
        Mat cols;
        if (!is_pointwise(g)) cols.resize(kdim, hw_out);
        for (int n = 0; n < g.n; ++n) {
            const double* xn = xd + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
            for (int grp = 0; grp < spec.groups; ++grp) {
                CMapMat wg(wd + static_cast<std::size_t>(grp) * g.cog * kdim, g.cog, kdim);
                MapMat yg(out.data() + (static_cast<std::size_t>(n) * g.co + grp * g.cog) * hw_out, g.cog, hw_out);
                if (is_pointwise(g)) {
                    yg.noalias() = wg * CMapMat(xn, g.ci, hw_out);
                } else {
                    im2col(xn, g, grp * g.cig, cols.data());
                    yg.noalias() = wg * cols;
                }
            }
        }
    }
    if (bias.defined()) {
        const auto bv = bias.data();
        for (int n = 0; n < g.n; ++n)
            for (int c = 0; c < g.co; ++c) {
                double* row = out.data() + (static_cast<std::size_t>(n) * g.co + c) * hw_out;
                for (int i = 0; i < hw_out; ++i) row[i] += bv[c];
            }
    }

    auto px = x.impl_ptr();
    auto pw = w.impl_ptr();
    auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
    return make_result({g.n, g.co, g.ho, g.wo}, std::move(out), {x, w, bias}, [px, pw, pb, g](TensorImpl& self) {
        const int hw_out = g.ho * g.wo;
        const int kdim = g.cig * g.k * g.k;
        const double* dy = self.grad.data();
        if (pb && pb->requires_grad) {
            auto& db = pb->grad_buffer();
            for (int n = 0; n < g.n; ++n)
                for (int c = 0; c < g.co; ++c) {
                    const double* row = dy + (static_cast<std::size_t>(n) * g.co + c) * hw_out;
                    double acc = 0.0;
                    for (int i = 0; i < hw_out; ++i) acc += row[i];
                    db[c] += acc;
                }
        }
        double* dx = px->requires_grad ? px->grad_buffer().data() : nullptr;
        double* dw = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
        if (!dx && !dw) return;
        if (is_depthwise(g)) {
            depthwise_backward(px->value.data(), pw->value.data(), dy, g, dx, dw);
            return;
        }
        Mat cols;
        Mat dcols;
        if (!is_pointwise(g)) cols.resize(kdim, hw_out);
        for (int n = 0; n < g.n; ++n) {
            const double* xn = px->value.data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
            for (int grp = 0; grp < g.spec.groups; ++grp) {
                CMapMat wg(pw->value.data() + static_cast<std::size_t>(grp) * g.cog * kdim, g.cog, kdim);
                CMapMat dyg(dy + (static_cast<std::size_t>(n) * g.co + grp * g.cog) * hw_out, g.cog, hw_out);
                if (is_pointwise(g)) {
                    CMapMat xin(xn, g.ci, hw_out);
                    if (dw) MapMat(dw, g.cog, kdim).noalias() += dyg * xin.transpose();
                    if (dx) {
                        MapMat(dx + static_cast<std::size_t>(n) * g.ci * hw_out, g.ci, hw_out).noalias() +=
                            wg.transpose() * dyg;
                    }
                    continue;
                }
                if (dw) {
                    im2col(xn, g, grp * g.cig, cols.data());
                    MapMat(dw + static_cast<std::size_t>(grp) * g.cog * kdim, g.cog, kdim).noalias() +=
                        dyg * cols.transpose();
                }
                if (dx) {
                    dcols.noalias() = wg.transpose() * dyg;
                    col2im_add(dcols.data(), g, grp * g.cig, dx + static_cast<std::size_t>(n) * g.ci * g.h * g.w);
                }
            }
        }
    });
}

Tensor conv_transpose2x2(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank4(x, "conv_transpose2x2");
    require(w.defined() && w.rank() == 4 && w.dim(2) == 2 && w.dim(3) == 2 && w.dim(0) == x.dim(1),
            "conv_transpose2x2: weight must be [Ci,Co,2,2] matching input channels");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(1);
    require(!bias.defined() || static_cast<int>(bias.numel()) == co, "conv_transpose2x2: bias size mismatch");
    const int hw = h * wd;
    MacCounter::add(static_cast<std::int64_t>(n) * ci * co * 4 * hw);

    std::vector<double> out(static_cast<std::size_t>(n) * co * 4 * hw);
    CMapMat wm(w.data().data(), ci, co * 4);
    Mat cols(co * 4, hw);
    for (int b = 0; b < n; ++b) {
        cols.noalias() = wm.transpose() * CMapMat(x.data().data() + static_cast<std::size_t>(b) * ci * hw, ci, hw);
        for (int c = 0; c < co; ++c) {
            const double bv = bias.defined() ? bias.data()[c] : 0.0;
            double* plane = out.data() + (static_cast<std::size_t>(b) * co + c) * 4 * hw;
            for (int u = 0; u < 2; ++u)
                for (int v = 0; v < 2; ++v) {
                    const double* row = cols.data() + static_cast<std::size_t>(c * 4 + u * 2 + v) * hw;
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < wd; ++j) plane[(2 * i + u) * 2 * wd + 2 * j + v] = row[i * wd + j] + bv;
                }
        }
    }
    auto px = x.impl_ptr();
    auto pw = w.impl_ptr();
    auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
    return make_result({n, co, 2 * h, 2 * wd}, std::move(out), {x, w, bias},
                       [px, pw, pb, n, ci, h, wd, co](TensorImpl& self) {
                           const int hw = h * wd;
                           Mat dcols(co * 4, hw);
                           CMapMat wm(pw->value.data(), ci, co * 4);
                           for (int b = 0; b < n; ++b) {
                               for (int c = 0; c < co; ++c) {
                                   const double* plane = self.grad.data() + (static_cast<std::size_t>(b) * co + c) * 4 * hw;
                                   double bsum = 0.0;
                                   for (int u = 0; u < 2; ++u)
                                       for (int v = 0; v < 2; ++v) {
                                           double* row = dcols.data() + static_cast<std::size_t>(c * 4 + u * 2 + v) * hw;
                                           for (int i = 0; i < h; ++i)
                                               for (int j = 0; j < wd; ++j) {
                                                   row[i * wd + j] = plane[(2 * i + u) * 2 * wd + 2 * j + v];
                                                   bsum += row[i * wd + j];
                                               }
                                       }
                                   if (pb && pb->requires_grad) pb->grad_buffer()[c] += bsum;
                               }
                               const double* xb = px->value.data() + static_cast<std::size_t>(b) * ci * hw;
                               if (pw->requires_grad)
                                   MapMat(pw->grad_buffer().data(), ci, co * 4).noalias() +=
                                       CMapMat(xb, ci, hw) * dcols.transpose();
                               if (px->requires_grad)
                                   MapMat(px->grad_buffer().data() + static_cast<std::size_t>(b) * ci * hw, ci, hw)
                                       .noalias() += wm * dcols;
                           }
                       });
}

Tensor max_pool2x2(const Tensor& x) {
    require_rank4(x, "max_pool2x2");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(h % 2 == 0 && w % 2 == 0, "max_pool2x2: spatial size must be even, got " + shape_str(x.shape()));
    const int ho = h / 2, wo = w / 2;
    std::vector<double> out(static_cast<std::size_t>(n) * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto xv = x.data();
    std::size_t o = 0;
    for (int p = 0; p < n * c; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j, ++o) {
                std::size_t best = base + static_cast<std::size_t>(2 * i) * w + 2 * j;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) {
                        const std::size_t idx = base + static_cast<std::size_t>(2 * i + u) * w + 2 * j + v;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                out[o] = xv[best];
                (*argmax)[o] = best;
            }
    }
    auto px = x.impl_ptr();
    return make_result({n, c, ho, wo}, std::move(out), {x}, [px, argmax](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
    require_rank4(x, "batch_norm");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(static_cast<int>(gamma.numel()) == c && static_cast<int>(beta.numel()) == c &&
                static_cast<int>(running_mean.numel()) == c && static_cast<int>(running_var.numel()) == c,
            "batch_norm: parameter size does not match " + std::to_string(c) + " channels");
    const std::size_t count = static_cast<std::size_t>(n) * hw;
    const auto xv = x.data();
    auto invstd = std::make_shared<std::vector<double>>(c);
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> out(x.numel());
    for (int ch = 0; ch < c; ++ch) {
        double mu, var;
        if (training) {
            double s = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
                for (int i = 0; i < hw; ++i) s += p[i];
            }
            mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
                for (int i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
            }
            var = ss / static_cast<double>(count);
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            running_mean.data()[ch] = (1.0 - momentum) * running_mean.data()[ch] + momentum * mu;
            running_var.data()[ch] = (1.0 - momentum) * running_var.data()[ch] + momentum * unbiased;
        } else {
            mu = running_mean.data()[ch];
            var = running_var.data()[ch];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[ch] = is;
        const double gm = gamma.data()[ch], bt = beta.data()[ch];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (int i = 0; i < hw; ++i) {
                const double xh = (xv[off + i] - mu) * is;
                (*xhat)[off + i] = xh;
                out[off + i] = gm * xh + bt;
            }
        }
    }
    auto px = x.impl_ptr();
    auto pg = gamma.impl_ptr();
    auto pbeta = beta.impl_ptr();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [px, pg, pbeta, invstd, xhat, n, c, hw, training](TensorImpl& self) {
                           const double count = static_cast<double>(n) * hw;
                           const auto& dy = self.grad;
                           for (int ch = 0; ch < c; ++ch) {
                               double sdy = 0.0, sdyx = 0.0;
                               for (int b = 0; b < n; ++b) {
                                   const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                                   for (int i = 0; i < hw; ++i) {
                                       sdy += dy[off + i];
                                       sdyx += dy[off + i] * (*xhat)[off + i];
                                   }
                               }
                               if (pg->requires_grad) pg->grad_buffer()[ch] += sdyx;
                               if (pbeta->requires_grad) pbeta->grad_buffer()[ch] += sdy;
                               if (!px->requires_grad) continue;
                               auto& dx = px->grad_buffer();
                               const double gm = pg->value[ch];
                               const double is = (*invstd)[ch];
                               for (int b = 0; b < n; ++b) {
                                   const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                                   for (int i = 0; i < hw; ++i) {
                                       if (training) {
                                           dx[off + i] += gm * is *
                                                          (dy[off + i] - sdy / count - (*xhat)[off + i] * sdyx / count);
                                       } else {
                                           dx[off + i] += gm * is * dy[off + i];
                                       }
                                   }
                               }
                           }
                       });
}

namespace {

// Normalizes `groups` vectors of length `len` laid out with element stride
// `stride` (group g starts at base(g)). Shared by the two layer norms.
template <typename Base>
Tensor layer_norm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, std::size_t groups,
                       int len, std::size_t stride, Base base) {
    require(static_cast<int>(gamma.numel()) == len && static_cast<int>(beta.numel()) == len,
            "layer_norm: affine parameters must have " + std::to_string(len) + " entries");
    const auto xv = x.data();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto invstd = std::make_shared<std::vector<double>>(groups);
    std::vector<double> out(x.numel());
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t b0 = base(g);
        double mu = 0.0;
        for (int i = 0; i < len; ++i) mu += xv[b0 + i * stride];
        mu /= len;
        double var = 0.0;
        for (int i = 0; i < len; ++i) {
            const double d = xv[b0 + i * stride] - mu;
            var += d * d;
        }
        var /= len;
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[g] = is;
        for (int i = 0; i < len; ++i) {
            const std::size_t idx = b0 + i * stride;
            const double xh = (xv[idx] - mu) * is;
            (*xhat)[idx] = xh;
            out[idx] = gamma.data()[i] * xh + beta.data()[i];
        }
    }
    auto px = x.impl_ptr();
    auto pg = gamma.impl_ptr();
    auto pb = beta.impl_ptr();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [px, pg, pb, xhat, invstd, groups, len, stride, base](TensorImpl& self) {
                           const auto& dy = self.grad;
                           for (std::size_t g = 0; g < groups; ++g) {
                               const std::size_t b0 = base(g);
                               double m1 = 0.0, m2 = 0.0;
                               for (int i = 0; i < len; ++i) {
                                   const std::size_t idx = b0 + i * stride;
                                   const double dxh = dy[idx] * pg->value[i];
                                   m1 += dxh;
                                   m2 += dxh * (*xhat)[idx];
                                   if (pg->requires_grad) pg->grad_buffer()[i] += dy[idx] * (*xhat)[idx];
                                   if (pb->requires_grad) pb->grad_buffer()[i] += dy[idx];
                               }
                               if (!px->requires_grad) continue;
                               m1 /= len;
                               m2 /= len;
                               auto& dx = px->grad_buffer();
                               for (int i = 0; i < len; ++i) {
                                   const std::size_t idx = b0 + i * stride;
                                   const double dxh = dy[idx] * pg->value[i];
                                   dx[idx] += (*invstd)[g] * (dxh - m1 - (*xhat)[idx] * m2);
                               }
                           }
                       });
}

}  // namespace

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank4(x, "layer_norm_channels");
    const int c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t groups = static_cast<std::size_t>(x.dim(0)) * hw;
    return layer_norm_impl(x, gamma, beta, eps, groups, c, hw,
                           [c, hw](std::size_t g) { return (g / hw) * c * hw + g % hw; });
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int d = x.shape().back();
    const std::size_t groups = x.numel() / static_cast<std::size_t>(d);
    return layer_norm_impl(x, gamma, beta, eps, groups, d, 1,
                           [d](std::size_t g) { return g * static_cast<std::size_t>(d); });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(w.defined() && w.rank() == 2, "linear: weight must be [out, in]");
    const int out_f = w.dim(0), in_f = w.dim(1);
    require(x.shape().back() == in_f, "linear: input features " + std::to_string(x.shape().back()) +
                                          " do not match weight " + shape_str(w.shape()));
    require(!bias.defined() || static_cast<int>(bias.numel()) == out_f, "linear: bias size mismatch");
    const int rows = static_cast<int>(x.numel() / in_f);
    MacCounter::add(static_cast<std::int64_t>(rows) * in_f * out_f);
    Shape shape = x.shape();
    shape.back() = out_f;
    std::vector<double> out(static_cast<std::size_t>(rows) * out_f);
    MapMat y(out.data(), rows, out_f);
    y.noalias() = CMapMat(x.data().data(), rows, in_f) * CMapMat(w.data().data(), out_f, in_f).transpose();
    if (bias.defined()) {
        for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out_f; ++o) y(r, o) += bias.data()[o];
    }
    auto px = x.impl_ptr();
    auto pw = w.impl_ptr();
    auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
    return make_result(std::move(shape), std::move(out), {x, w, bias}, [px, pw, pb, rows, in_f, out_f](TensorImpl& self) {
        CMapMat dy(self.grad.data(), rows, out_f);
        if (px->requires_grad)
            MapMat(px->grad_buffer().data(), rows, in_f).noalias() += dy * CMapMat(pw->value.data(), out_f, in_f);
        if (pw->requires_grad)
            MapMat(pw->grad_buffer().data(), out_f, in_f).noalias() +=
                dy.transpose() * CMapMat(px->value.data(), rows, in_f);
        if (pb && pb->requires_grad) {
            auto& db = pb->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < out_f; ++o) db[o] += dy(r, o);
        }
    });
}

Tensor self_attention(const Tensor& qkv, int heads) {
    require(qkv.defined() && qkv.rank() == 3 && qkv.dim(2) % 3 == 0, "self_attention: qkv must be [S,T,3d]");
    const int s_count = qkv.dim(0), t = qkv.dim(1), d = qkv.dim(2) / 3;
    require(heads >= 1 && d % heads == 0,
            "self_attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    const int dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    MacCounter::add(2LL * s_count * t * t * d);

    // Attention weights per (sequence, head), kept for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s_count) * heads * t * t);
    std::vector<double> out(static_cast<std::size_t>(s_count) * t * d, 0.0);
    const double* in = qkv.data().data();
    const std::size_t row = 3 * static_cast<std::size_t>(d);
    for (int s = 0; s < s_count; ++s)
        for (int h = 0; h < heads; ++h) {
            double* a = probs->data() + (static_cast<std::size_t>(s) * heads + h) * t * t;
            for (int i = 0; i < t; ++i) {
                const double* q = in + (static_cast<std::size_t>(s) * t + i) * row + h * dh;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < t; ++j) {
                    const double* k = in + (static_cast<std::size_t>(s) * t + j) * row + d + h * dh;
                    double dot = 0.0;
                    for (int e = 0; e < dh; ++e) dot += q[e] * k[e];
                    a[i * t + j] = dot * inv_scale;
                    mx = std::max(mx, a[i * t + j]);
                }
                double z = 0.0;
                for (int j = 0; j < t; ++j) {
                    a[i * t + j] = std::exp(a[i * t + j] - mx);
                    z += a[i * t + j];
                }
                double* o = out.data() + (static_cast<std::size_t>(s) * t + i) * d + h * dh;
                for (int j = 0; j < t; ++j) {
                    a[i * t + j] /= z;
                    const double* v = in + (static_cast<std::size_t>(s) * t + j) * row + 2 * d + h * dh;
                    for (int e = 0; e < dh; ++e) o[e] += a[i * t + j] * v[e];
                }
            }
        }
    auto pq = qkv.impl_ptr();
    return make_result({s_count, t, d}, std::move(out), {qkv}, [pq, probs, s_count, t, d, heads, dh, inv_scale](TensorImpl& self) {
        auto& g = pq->grad_buffer();
        const double* in = pq->value.data();
        const std::size_t row = 3 * static_cast<std::size_t>(d);
        std::vector<double> da(static_cast<std::size_t>(t) * t);
        for (int s = 0; s < s_count; ++s)
            for (int h = 0; h < heads; ++h) {
                const double* a = probs->data() + (static_cast<std::size_t>(s) * heads + h) * t * t;
                for (int i = 0; i < t; ++i) {
                    const double* go = self.grad.data() + (static_cast<std::size_t>(s) * t + i) * d + h * dh;
                    double dot_sum = 0.0;
                    for (int j = 0; j < t; ++j) {
                        const double* v = in + (static_cast<std::size_t>(s) * t + j) * row + 2 * d + h * dh;
                        double* gv = g.data() + (static_cast<std::size_t>(s) * t + j) * row + 2 * d + h * dh;
                        double acc = 0.0;
                        for (int e = 0; e < dh; ++e) {
                            acc += go[e] * v[e];
                            gv[e] += a[i * t + j] * go[e];
                        }
                        da[i * t + j] = acc;
                        dot_sum += acc * a[i * t + j];
                    }
                    const double* q = in + (static_cast<std::size_t>(s) * t + i) * row + h * dh;
                    double* gq = g.data() + (static_cast<std::size_t>(s) * t + i) * row + h * dh;
                    for (int j = 0; j < t; ++j) {
                        const double dscore = a[i * t + j] * (da[i * t + j] - dot_sum) * inv_scale;
                        const double* k = in + (static_cast<std::size_t>(s) * t + j) * row + d + h * dh;
                        double* gk = g.data() + (static_cast<std::size_t>(s) * t + j) * row + d + h * dh;
                        for (int e = 0; e < dh; ++e) {
                            gq[e] += dscore * k[e];
                            gk[e] += dscore * q[e];
                        }
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Channel plumbing and reductions
// ---------------------------------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_channels: no inputs");
    for (const auto& x : xs) require_rank4(x, "concat_channels");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int ctot = 0;
    std::vector<int> offsets;
    for (const auto& x : xs) {
        require(x.dim(0) == n && x.dim(2) == h && x.dim(3) == w,
                "concat_channels: geometry mismatch " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
        offsets.push_back(ctot);
        ctot += x.dim(1);
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * ctot * hw);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const int ck = xs[k].dim(1);
        for (int b = 0; b < n; ++b)
            std::copy_n(xs[k].data().data() + static_cast<std::size_t>(b) * ck * hw, ck * hw,
                        out.data() + (static_cast<std::size_t>(b) * ctot + offsets[k]) * hw);
    }
    std::vector<std::shared_ptr<TensorImpl>> ps;
    for (const auto& x : xs) ps.push_back(x.impl_ptr());
    return make_result({n, ctot, h, w}, std::move(out), xs, [ps, offsets, n, ctot, hw](TensorImpl& self) {
        for (std::size_t k = 0; k < ps.size(); ++k) {
            if (!ps[k]->requires_grad) continue;
            auto& g = ps[k]->grad_buffer();
            const int ck = ps[k]->shape[1];
            for (int b = 0; b < n; ++b) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(b) * ctot + offsets[k]) * hw;
                double* dst = g.data() + static_cast<std::size_t>(b) * ck * hw;
                for (std::size_t i = 0; i < ck * hw; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor slice_channels(const Tensor& x, int start, int count) {
    require_rank4(x, "slice_channels");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(start >= 0 && count >= 0 && start + count <= c, "slice_channels: range out of bounds");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * count * hw);
    for (int b = 0; b < n; ++b)
        std::copy_n(x.data().data() + (static_cast<std::size_t>(b) * c + start) * hw, count * hw,
                    out.data() + static_cast<std::size_t>(b) * count * hw);
    auto px = x.impl_ptr();
    return make_result({n, count, h, w}, std::move(out), {x}, [px, n, c, start, count, hw](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (int b = 0; b < n; ++b) {
            const double* src = self.grad.data() + static_cast<std::size_t>(b) * count * hw;
            double* dst = g.data() + (static_cast<std::size_t>(b) * c + start) * hw;
            for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
        }
    });
}

namespace {

// Reduces NCHW over channels (per_pixel = true) or over space.
Tensor reduce4(const Tensor& x, bool over_channels, bool take_max, const char* op) {
    require_rank4(x, op);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t outer = over_channels ? static_cast<std::size_t>(n) * hw : static_cast<std::size_t>(n) * c;
    const int len = over_channels ? c : static_cast<int>(hw);
    const std::size_t stride = over_channels ? hw : 1;
    auto base = [=](std::size_t o) { return over_channels ? (o / hw) * c * hw + o % hw : o * hw; };
    std::vector<double> out(outer);
    auto argmax = take_max ? std::make_shared<std::vector<std::size_t>>(outer) : nullptr;
    const auto xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t b0 = base(o);
        if (take_max) {
            std::size_t best = b0;
            for (int i = 1; i < len; ++i)
                if (xv[b0 + i * stride] > xv[best]) best = b0 + i * stride;
            out[o] = xv[best];
            (*argmax)[o] = best;
        } else {
            double acc = 0.0;
            for (int i = 0; i < len; ++i) acc += xv[b0 + i * stride];
            out[o] = acc;
        }
    }
    Shape shape = over_channels ? Shape{n, 1, h, w} : Shape{n, c, 1, 1};
    auto px = x.impl_ptr();
    return make_result(std::move(shape), std::move(out), {x}, [px, argmax, outer, len, stride, base](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            if (argmax) {
                g[(*argmax)[o]] += self.grad[o];
            } else {
                const std::size_t b0 = base(o);
                for (int i = 0; i < len; ++i) g[b0 + i * stride] += self.grad[o];
            }
        }
    });
}

}  // namespace

Tensor channel_max(const Tensor& x) { return reduce4(x, true, true, "channel_max"); }
Tensor channel_sum(const Tensor& x) { return reduce4(x, true, false, "channel_sum"); }
Tensor spatial_max(const Tensor& x) { return reduce4(x, false, true, "spatial_max"); }
Tensor spatial_sum(const Tensor& x) { return reduce4(x, false, false, "spatial_sum"); }

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> frac;
};

LerpAxis lerp_axis(int in, int out) {
    LerpAxis ax;
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        ax.i0.push_back(lo);
        ax.i1.push_back(std::min(lo + 1, in - 1));
        ax.frac.push_back(src - lo);
    }
    return ax;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require_rank4(x, "resize_bilinear");
    require(out_h > 0 && out_w > 0, "resize_bilinear: target size must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == out_h && w == out_w) return x;
    auto ay = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
    auto ax = std::make_shared<LerpAxis>(lerp_axis(w, out_w));
    std::vector<double> out(static_cast<std::size_t>(n) * c * out_h * out_w);
    const auto xv = x.data();
    for (int p = 0; p < n * c; ++p) {
        const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const double fy = ay->frac[i];
            for (int j = 0; j < out_w; ++j) {
                const double fx = ax->frac[j];
                const double top = src[ay->i0[i] * w + ax->i0[j]] * (1 - fx) + src[ay->i0[i] * w + ax->i1[j]] * fx;
                const double bot = src[ay->i1[i] * w + ax->i0[j]] * (1 - fx) + src[ay->i1[i] * w + ax->i1[j]] * fx;
                dst[i * out_w + j] = top * (1 - fy) + bot * fy;
            }
        }
    }
    auto px = x.impl_ptr();
    return make_result({n, c, out_h, out_w}, std::move(out), {x}, [px, ay, ax, n, c, h, w, out_h, out_w](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
            const double* go = self.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
            for (int i = 0; i < out_h; ++i) {
                const double fy = ay->frac[i];
                for (int j = 0; j < out_w; ++j) {
                    const double fx = ax->frac[j];
                    const double v = go[i * out_w + j];
                    dst[ay->i0[i] * w + ax->i0[j]] += v * (1 - fy) * (1 - fx);
                    dst[ay->i0[i] * w + ax->i1[j]] += v * (1 - fy) * fx;
                    dst[ay->i1[i] * w + ax->i0[j]] += v * fy * (1 - fx);
                    dst[ay->i1[i] * w + ax->i1[j]] += v * fy * fx;
                }
            }
        }
    });
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape) {
    require(index && index->size() == shape_numel(out_shape), "gather: index size does not match output shape");
    const auto xv = x.data();
    std::vector<double> out(index->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        require((*index)[i] < xv.size(), "gather: index out of range");
        out[i] = xv[(*index)[i]];
    }
    auto px = x.impl_ptr();
    return make_result(std::move(out_shape), std::move(out), {x}, [px, index](TensorImpl& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
    });
}

}  // namespace bgcrack
