#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "splitfed/tensor.hpp"

namespace splitfed {

namespace detail {

// One (input plane, output plane) accumulation of a 3x3 same-padding
// stencil: out[oh][ow] += sum_k w[k] * in[oh+kh-1][ow+kw-1]. Interior
// columns run in a single fused pass; border rows/columns drop the taps
// that fall outside. Instantiated per common row width so the inner loop
// fully vectorizes; KnownWidth == 0 is the runtime-width fallback.
template <int KnownWidth>
inline void stencil3x3_acc_impl(const double* __restrict in, double* __restrict out,
                                const double* __restrict w, int height, int rt_width) {
    const int width = KnownWidth > 0 ? KnownWidth : rt_width;
    for (int oh = 0; oh < height; ++oh) {
        const double* r0 = (oh > 0) ? in + static_cast<std::size_t>(oh - 1) * width : nullptr;
        const double* r1 = in + static_cast<std::size_t>(oh) * width;
        const double* r2 = (oh + 1 < height) ? in + static_cast<std::size_t>(oh + 1) * width : nullptr;
        double* o = out + static_cast<std::size_t>(oh) * width;
        if (r0 && r2) {
            for (int j = 1; j + 1 < width; ++j) {
                o[j] += w[0] * r0[j - 1] + w[1] * r0[j] + w[2] * r0[j + 1] + w[3] * r1[j - 1] +
                        w[4] * r1[j] + w[5] * r1[j + 1] + w[6] * r2[j - 1] + w[7] * r2[j] +
                        w[8] * r2[j + 1];
            }
        } else if (r0) {
            for (int j = 1; j + 1 < width; ++j) {
                o[j] += w[0] * r0[j - 1] + w[1] * r0[j] + w[2] * r0[j + 1] + w[3] * r1[j - 1] +
                        w[4] * r1[j] + w[5] * r1[j + 1];
            }
        } else if (r2) {
            for (int j = 1; j + 1 < width; ++j) {
                o[j] += w[3] * r1[j - 1] + w[4] * r1[j] + w[5] * r1[j + 1] + w[6] * r2[j - 1] +
                        w[7] * r2[j] + w[8] * r2[j + 1];
            }
        } else {
            for (int j = 1; j + 1 < width; ++j) {
                o[j] += w[3] * r1[j - 1] + w[4] * r1[j] + w[5] * r1[j + 1];
            }
        }
        const int edges[2] = {0, width - 1};
        const int n_edges = width > 1 ? 2 : 1;
        for (int e = 0; e < n_edges; ++e) {
            const int j = edges[e];
            double acc = 0.0;
            for (int kh = 0; kh < 3; ++kh) {
                const int ih = oh + kh - 1;
                if (ih < 0 || ih >= height) continue;
                const double* row = in + static_cast<std::size_t>(ih) * width;
                for (int kw = 0; kw < 3; ++kw) {
                    const int iw = j + kw - 1;
                    if (iw < 0 || iw >= width) continue;
                    acc += w[kh * 3 + kw] * row[iw];
                }
            }
            o[j] += acc;
        }
    }
}

inline void stencil3x3_acc(const double* in, double* out, const double* w, int height, int width) {
    switch (width) {
        case 8: return stencil3x3_acc_impl<8>(in, out, w, height, width);
        case 16: return stencil3x3_acc_impl<16>(in, out, w, height, width);
        case 32: return stencil3x3_acc_impl<32>(in, out, w, height, width);
        case 64: return stencil3x3_acc_impl<64>(in, out, w, height, width);
        default: return stencil3x3_acc_impl<0>(in, out, w, height, width);
    }
}

// Kernel-gradient counterpart: dk[k] += sum_{oh,ow} in[oh+kh-1][ow+kw-1] *
// g[oh][ow], for one plane pair.
template <int KnownWidth>
inline void stencil3x3_dk_impl(const double* __restrict in, const double* __restrict g,
                               double* __restrict dk, int height, int rt_width) {
    const int width = KnownWidth > 0 ? KnownWidth : rt_width;
    double acc[9] = {0.0};
    for (int oh = 0; oh < height; ++oh) {
        const double* gr = g + static_cast<std::size_t>(oh) * width;
        for (int kh = 0; kh < 3; ++kh) {
            const int ih = oh + kh - 1;
            if (ih < 0 || ih >= height) continue;
            const double* ir = in + static_cast<std::size_t>(ih) * width;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0;
            for (int j = 1; j < width; ++j) a0 += ir[j - 1] * gr[j];
            for (int j = 0; j < width; ++j) a1 += ir[j] * gr[j];
            for (int j = 0; j + 1 < width; ++j) a2 += ir[j + 1] * gr[j];
            acc[kh * 3 + 0] += a0;
            acc[kh * 3 + 1] += a1;
            acc[kh * 3 + 2] += a2;
        }
    }
    for (int k = 0; k < 9; ++k) dk[k] += acc[k];
}

inline void stencil3x3_dk(const double* in, const double* g, double* dk, int height, int width) {
    switch (width) {
        case 8: return stencil3x3_dk_impl<8>(in, g, dk, height, width);
        case 16: return stencil3x3_dk_impl<16>(in, g, dk, height, width);
        case 32: return stencil3x3_dk_impl<32>(in, g, dk, height, width);
        case 64: return stencil3x3_dk_impl<64>(in, g, dk, height, width);
        default: return stencil3x3_dk_impl<0>(in, g, dk, height, width);
    }
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline void attach(Tensor& out, std::initializer_list<const Tensor*> parents,
                   std::function<void(TensorNode&)> backward_fn) {
    auto& node = out.node();
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (const Tensor* p : parents) node.parents.push_back(p->node_ptr());
    node.backward_fn = std::move(backward_fn);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* role) {
    if (t.shape().size() != rank) {
        throw shape_error(std::string(op) + ": " + role + " must have rank " + std::to_string(rank) +
                          ", got shape " + shape_str(t.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride 1, zero "same" padding, odd square kernel.
// input (N,C,H,W), kernel (O,C,K,K), bias (O) -> (N,O,H,W)
// ---------------------------------------------------------------------------
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    detail::require_rank(input, 4, "conv2d", "input");
    detail::require_rank(kernel, 4, "conv2d", "kernel");
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (ks[2] != ks[3] || ks[2] % 2 == 0) {
        throw shape_error("conv2d: kernel must be square with odd size, got " + shape_str(ks));
    }
    if (ks[1] != is[1]) {
        throw shape_error("conv2d: input channels " + shape_str(is) + " do not match kernel " +
                          shape_str(ks));
    }
    if (bias.shape() != Shape{ks[0]}) {
        throw shape_error("conv2d: bias shape " + shape_str(bias.shape()) + " must be (" +
                          std::to_string(ks[0]) + ")");
    }
    const int batch = is[0], in_ch = is[1], height = is[2], width = is[3];
    const int out_ch = ks[0], ksize = ks[2], pad = ksize / 2;

    Tensor out = Tensor::zeros({batch, out_ch, height, width});
    const double* in = input.data().data();
    const double* kw_all = kernel.data().data();
    const double* bp = bias.data().data();
    double* op_all = out.data().data();
    const std::size_t plane = static_cast<std::size_t>(height) * width;

    for (int n = 0; n < batch; ++n) {
        for (int o = 0; o < out_ch; ++o) {
            double* outp = op_all + (static_cast<std::size_t>(n) * out_ch + o) * plane;
            const double b = bp[o];
            for (std::size_t idx = 0; idx < plane; ++idx) outp[idx] = b;
            for (int c = 0; c < in_ch; ++c) {
                const double* inp = in + (static_cast<std::size_t>(n) * in_ch + c) * plane;
                const double* kp = kw_all + (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
                if (ksize == 3) {
                    detail::stencil3x3_acc(inp, outp, kp, height, width);
                    continue;
                }
                for (int kh = 0; kh < ksize; ++kh) {
                    const int oh0 = std::max(0, pad - kh);
                    const int oh1 = std::min(height, height + pad - kh);
                    for (int kwi = 0; kwi < ksize; ++kwi) {
                        const double w = kp[kh * ksize + kwi];
                        const int ow0 = std::max(0, pad - kwi);
                        const int len = std::min(width, width + pad - kwi) - ow0;
                        if (len <= 0 || oh1 <= oh0) continue;
                        const double* src = inp + static_cast<std::size_t>(oh0 + kh - pad) * width +
                                            (ow0 + kwi - pad);
                        double* dst = outp + static_cast<std::size_t>(oh0) * width + ow0;
                        for (int oh = oh0; oh < oh1; ++oh) {
                            for (int j = 0; j < len; ++j) dst[j] += w * src[j];
                            src += width;
                            dst += width;
                        }
                    }
                }
            }
        }
    }
    guard_finite("conv2d", out.data());

    if (detail::any_requires_grad({&input, &kernel, &bias})) {
        auto in_node = input.node_ptr();
        auto k_node = kernel.node_ptr();
        auto b_node = bias.node_ptr();
        detail::attach(out, {&input, &kernel, &bias},
                       [in_node, k_node, b_node, batch, in_ch, out_ch, height, width, ksize,
                        pad](detail::TensorNode& self) {
            const double* gout_all = self.grad.data();
            const std::size_t plane = static_cast<std::size_t>(height) * width;
            if (b_node->requires_grad) {
                b_node->ensure_grad();
                for (int o = 0; o < out_ch; ++o) {
                    double acc = 0.0;
                    for (int n = 0; n < batch; ++n) {
                        const double* g = gout_all + (static_cast<std::size_t>(n) * out_ch + o) * plane;
                        for (std::size_t idx = 0; idx < plane; ++idx) acc += g[idx];
                    }
                    b_node->grad[o] += acc;
                }
            }
            if (k_node->requires_grad) {
                k_node->ensure_grad();
                const double* in = in_node->data.data();
                for (int n = 0; n < batch; ++n) {
                    for (int o = 0; o < out_ch; ++o) {
                        const double* g = gout_all + (static_cast<std::size_t>(n) * out_ch + o) * plane;
                        for (int c = 0; c < in_ch; ++c) {
                            const double* inp = in + (static_cast<std::size_t>(n) * in_ch + c) * plane;
                            double* dk = k_node->grad.data() +
                                         (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
                            if (ksize == 3) {
                                detail::stencil3x3_dk(inp, g, dk, height, width);
                                continue;
                            }
                            for (int kh = 0; kh < ksize; ++kh) {
                                const int oh0 = std::max(0, pad - kh);
                                const int oh1 = std::min(height, height + pad - kh);
                                for (int kwi = 0; kwi < ksize; ++kwi) {
                                    const int ow0 = std::max(0, pad - kwi);
                                    const int len = std::min(width, width + pad - kwi) - ow0;
                                    if (len <= 0 || oh1 <= oh0) continue;
                                    const double* src = inp +
                                                        static_cast<std::size_t>(oh0 + kh - pad) * width +
                                                        (ow0 + kwi - pad);
                                    const double* gp = g + static_cast<std::size_t>(oh0) * width + ow0;
                                    double acc = 0.0;
                                    for (int oh = oh0; oh < oh1; ++oh) {
                                        for (int j = 0; j < len; ++j) acc += src[j] * gp[j];
                                        src += width;
                                        gp += width;
                                    }
                                    dk[kh * ksize + kwi] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (in_node->requires_grad) {
                in_node->ensure_grad();
                const double* kw_all = k_node->data.data();
                for (int n = 0; n < batch; ++n) {
                    for (int c = 0; c < in_ch; ++c) {
                        double* din = in_node->grad.data() +
                                      (static_cast<std::size_t>(n) * in_ch + c) * plane;
                        for (int o = 0; o < out_ch; ++o) {
                            const double* g = gout_all +
                                              (static_cast<std::size_t>(n) * out_ch + o) * plane;
                            const double* kp = kw_all +
                                               (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
                            if (ksize == 3) {
                                // dX is the correlation of gout with the
                                // 180-degree flipped kernel.
                                const double flipped[9] = {kp[8], kp[7], kp[6], kp[5], kp[4],
                                                           kp[3], kp[2], kp[1], kp[0]};
                                detail::stencil3x3_acc(g, din, flipped, height, width);
                                continue;
                            }
                            for (int kh = 0; kh < ksize; ++kh) {
                                const int oh0 = std::max(0, pad - kh);
                                const int oh1 = std::min(height, height + pad - kh);
                                for (int kwi = 0; kwi < ksize; ++kwi) {
                                    const double w = kp[kh * ksize + kwi];
                                    const int ow0 = std::max(0, pad - kwi);
                                    const int len = std::min(width, width + pad - kwi) - ow0;
                                    if (len <= 0 || oh1 <= oh0) continue;
                                    double* dst = din + static_cast<std::size_t>(oh0 + kh - pad) * width +
                                                  (ow0 + kwi - pad);
                                    const double* src = g + static_cast<std::size_t>(oh0) * width + ow0;
                                    for (int oh = oh0; oh < oh1; ++oh) {
                                        for (int j = 0; j < len; ++j) dst[j] += w * src[j];
                                        src += width;
                                        dst += width;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------
inline Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    guard_finite("relu", od);

    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            const auto& xd = x_node->data;
            for (std::size_t i = 0; i < xd.size(); ++i) {
                if (xd[i] > 0.0) x_node->grad[i] += self.grad[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------
enum class BNMode { train, eval };

/// Per-channel running statistics plus the fixed normalization constants.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.9;
    double eps = 1e-5;
};

namespace detail {

inline void check_bn_args(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank(x, 4, "batchnorm2d", "input");
    const int channels = x.shape()[1];
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
        throw shape_error("batchnorm2d: gamma " + shape_str(gamma.shape()) + " and beta " +
                          shape_str(beta.shape()) + " must both be (" + std::to_string(channels) + ")");
    }
}

}  // namespace detail

/// Train-mode batchnorm normalizing with batch statistics (population
/// variance). Batch statistics are returned through `stats_out` so the
/// caller can fold them into running averages.
inline Tensor batchnorm2d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                std::vector<double>* mean_out = nullptr,
                                std::vector<double>* var_out = nullptr, double eps = 1e-5) {
    detail::check_bn_args(x, gamma, beta);
    const auto& xs = x.shape();
    const int batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    const std::size_t per_channel = static_cast<std::size_t>(batch) * plane;
    if (per_channel < 2) {
        throw shape_error("batchnorm2d: train mode needs at least 2 elements per channel, got " +
                          std::to_string(per_channel));
    }

    std::vector<double> mean(channels, 0.0), var(channels, 0.0), inv_std(channels, 0.0);
    const double* xd = x.data().data();
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int n = 0; n < batch; ++n) {
            const double* p = xd + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        const double m = acc / static_cast<double>(per_channel);
        double vacc = 0.0;
        for (int n = 0; n < batch; ++n) {
            const double* p = xd + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = p[i] - m;
                vacc += d * d;
            }
        }
        mean[c] = m;
        var[c] = vacc / static_cast<double>(per_channel);
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    guard_finite("batchnorm2d.stats", mean);
    guard_finite("batchnorm2d.stats", var);

    Tensor out = Tensor::zeros(xs);
    auto xhat = std::make_shared<std::vector<double>>(x.data().size());
    double* od = out.data().data();
    double* hd = xhat->data();
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            const double m = mean[c], is = inv_std[c], g = gd[c], b = bd[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double h = (xd[base + i] - m) * is;
                hd[base + i] = h;
                od[base + i] = g * h + b;
            }
        }
    }
    guard_finite("batchnorm2d", out.data());
    if (mean_out) *mean_out = mean;
    if (var_out) *var_out = var;

    if (detail::any_requires_grad({&x, &gamma, &beta})) {
        auto x_node = x.node_ptr();
        auto g_node = gamma.node_ptr();
        auto b_node = beta.node_ptr();
        detail::attach(out, {&x, &gamma, &beta},
                       [x_node, g_node, b_node, xhat, inv_std, batch, channels, plane,
                        per_channel](detail::TensorNode& self) {
            const double* go = self.grad.data();
            const double* hd = xhat->data();
            // Per-channel reductions shared by all three gradients.
            std::vector<double> sum_g(channels, 0.0), sum_gh(channels, 0.0);
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                    double sg = 0.0, sgh = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sg += go[base + i];
                        sgh += go[base + i] * hd[base + i];
                    }
                    sum_g[c] += sg;
                    sum_gh[c] += sgh;
                }
            }
            if (g_node->requires_grad) {
                g_node->ensure_grad();
                for (int c = 0; c < channels; ++c) g_node->grad[c] += sum_gh[c];
            }
            if (b_node->requires_grad) {
                b_node->ensure_grad();
                for (int c = 0; c < channels; ++c) b_node->grad[c] += sum_g[c];
            }
            if (x_node->requires_grad) {
                x_node->ensure_grad();
                const double* gd = g_node->data.data();
                const double inv_count = 1.0 / static_cast<double>(per_channel);
                for (int n = 0; n < batch; ++n) {
                    for (int c = 0; c < channels; ++c) {
                        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                        const double scale = gd[c] * inv_std[c];
                        const double mg = sum_g[c] * inv_count;
                        const double mgh = sum_gh[c] * inv_count;
                        for (std::size_t i = 0; i < plane; ++i) {
                            x_node->grad[base + i] +=
                                scale * (go[base + i] - mg - hd[base + i] * mgh);
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Eval-mode batchnorm using running statistics. A running variance that
/// arrived negative (possible after channel corruption of transmitted
/// state) is clamped to zero before the sqrt so evaluation degrades into
/// huge-but-finite outputs instead of NaN.
inline Tensor batchnorm2d_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               const Tensor& running_mean, const Tensor& running_var,
                               double eps = 1e-5) {
    detail::check_bn_args(x, gamma, beta);
    const auto& xs = x.shape();
    const int batch = xs[0], channels = xs[1];
    const std::size_t plane = static_cast<std::size_t>(xs[2]) * xs[3];
    if (running_mean.shape() != Shape{channels} || running_var.shape() != Shape{channels}) {
        throw shape_error("batchnorm2d: running stats must be (" + std::to_string(channels) + ")");
    }

    std::vector<double> scale(channels), shift(channels);
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    const double* rm = running_mean.data().data();
    const double* rv = running_var.data().data();
    for (int c = 0; c < channels; ++c) {
        const double v = rv[c] > 0.0 ? rv[c] : 0.0;
        scale[c] = gd[c] / std::sqrt(v + eps);
        shift[c] = bd[c] - rm[c] * scale[c];
    }

    Tensor out = Tensor::zeros(xs);
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) od[base + i] = xd[base + i] * scale[c] + shift[c];
        }
    }
    guard_finite("batchnorm2d", out.data());

    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node, scale, channels, plane, batch](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        x_node->grad[base + i] += self.grad[base + i] * scale[c];
                    }
                }
            }
        });
    }
    return out;
}

/// Spec-shaped entry point: dispatches on mode and maintains the running
/// statistics (momentum 0.9 toward the old value).
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, BNMode mode) {
    if (mode == BNMode::eval) {
        return batchnorm2d_eval(x, gamma, beta, state.running_mean, state.running_var, state.eps);
    }
    std::vector<double> mean, var;
    Tensor out = batchnorm2d_train(x, gamma, beta, &mean, &var, state.eps);
    auto& rm = state.running_mean.data();
    auto& rv = state.running_var.data();
    for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = state.momentum * rm[c] + (1.0 - state.momentum) * mean[c];
        rv[c] = state.momentum * rv[c] + (1.0 - state.momentum) * var[c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2 window, stride 2; ties go to the first position in
// row-major window order.
// ---------------------------------------------------------------------------
inline Tensor maxpool2d(const Tensor& x) {
    detail::require_rank(x, 4, "maxpool2d", "input");
    const auto& xs = x.shape();
    const int batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
    if (height % 2 != 0 || width % 2 != 0) {
        throw shape_error("maxpool2d: spatial size must be even, got " + shape_str(xs));
    }
    const int oh = height / 2, ow = width / 2;
    Tensor out = Tensor::zeros({batch, channels, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.data().size());
    const double* xd = x.data().data();
    double* od = out.data().data();
    std::uint32_t* am = argmax->data();
    const std::size_t in_plane = static_cast<std::size_t>(height) * width;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t ibase = (static_cast<std::size_t>(n) * channels + c) * in_plane;
            const std::size_t obase = (static_cast<std::size_t>(n) * channels + c) * out_plane;
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    const std::size_t w00 = ibase + static_cast<std::size_t>(2 * i) * width + 2 * j;
                    std::size_t best = w00;
                    double v = xd[w00];
                    const std::size_t cand[3] = {w00 + 1, w00 + width, w00 + width + 1};
                    for (std::size_t k = 0; k < 3; ++k) {
                        if (xd[cand[k]] > v) {
                            v = xd[cand[k]];
                            best = cand[k];
                        }
                    }
                    od[obase + static_cast<std::size_t>(i) * ow + j] = v;
                    am[obase + static_cast<std::size_t>(i) * ow + j] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    guard_finite("maxpool2d", out.data());

    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node, argmax](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            const auto& am = *argmax;
            for (std::size_t i = 0; i < self.grad.size(); ++i) x_node->grad[am[i]] += self.grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// upsample_nearest2x
// ---------------------------------------------------------------------------
inline Tensor upsample_nearest2x(const Tensor& x) {
    detail::require_rank(x, 4, "upsample_nearest2x", "input");
    const auto& xs = x.shape();
    const int batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
    const int oh = height * 2, ow = width * 2;
    Tensor out = Tensor::zeros({batch, channels, oh, ow});
    const double* xd = x.data().data();
    double* od = out.data().data();
    const std::size_t planes = static_cast<std::size_t>(batch) * channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xd + p * height * width;
        double* dst = od + p * static_cast<std::size_t>(oh) * ow;
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const double v = src[static_cast<std::size_t>(i) * width + j];
                const std::size_t o00 = static_cast<std::size_t>(2 * i) * ow + 2 * j;
                dst[o00] = v;
                dst[o00 + 1] = v;
                dst[o00 + ow] = v;
                dst[o00 + ow + 1] = v;
            }
        }
    }
    guard_finite("upsample_nearest2x", out.data());

    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node, planes, height, width, ow](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            const double* g = self.grad.data();
            for (std::size_t p = 0; p < planes; ++p) {
                double* dst = x_node->grad.data() + p * height * width;
                const double* src = g + p * static_cast<std::size_t>(2 * height) * ow;
                for (int i = 0; i < height; ++i) {
                    for (int j = 0; j < width; ++j) {
                        const std::size_t o00 = static_cast<std::size_t>(2 * i) * ow + 2 * j;
                        dst[static_cast<std::size_t>(i) * width + j] +=
                            src[o00] + src[o00 + 1] + src[o00 + ow] + src[o00 + ow + 1];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 4, "concat_channels", "lhs");
    detail::require_rank(b, 4, "concat_channels", "rhs");
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
        throw shape_error("concat_channels: " + shape_str(as) + " and " + shape_str(bs) +
                          " disagree outside the channel dimension");
    }
    const int batch = as[0], ca = as[1], cb = bs[1], height = as[2], width = as[3];
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    Tensor out = Tensor::zeros({batch, ca + cb, height, width});
    double* od = out.data().data();
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (int n = 0; n < batch; ++n) {
        std::copy_n(ad + static_cast<std::size_t>(n) * ca * plane, static_cast<std::size_t>(ca) * plane,
                    od + static_cast<std::size_t>(n) * (ca + cb) * plane);
        std::copy_n(bd + static_cast<std::size_t>(n) * cb * plane, static_cast<std::size_t>(cb) * plane,
                    od + (static_cast<std::size_t>(n) * (ca + cb) + ca) * plane);
    }

    if (detail::any_requires_grad({&a, &b})) {
        auto a_node = a.node_ptr();
        auto b_node = b.node_ptr();
        detail::attach(out, {&a, &b}, [a_node, b_node, batch, ca, cb, plane](detail::TensorNode& self) {
            const double* g = self.grad.data();
            if (a_node->requires_grad) {
                a_node->ensure_grad();
                for (int n = 0; n < batch; ++n) {
                    const double* src = g + static_cast<std::size_t>(n) * (ca + cb) * plane;
                    double* dst = a_node->grad.data() + static_cast<std::size_t>(n) * ca * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i) dst[i] += src[i];
                }
            }
            if (b_node->requires_grad) {
                b_node->ensure_grad();
                for (int n = 0; n < batch; ++n) {
                    const double* src = g + (static_cast<std::size_t>(n) * (ca + cb) + ca) * plane;
                    double* dst = b_node->grad.data() + static_cast<std::size_t>(n) * cb * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax_channels: per-pixel distribution over the channel dimension,
// computed with max subtraction.
// ---------------------------------------------------------------------------
inline Tensor softmax_channels(const Tensor& x) {
    detail::require_rank(x, 4, "softmax_channels", "input");
    const auto& xs = x.shape();
    const int batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    Tensor out = Tensor::zeros(xs);
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (int n = 0; n < batch; ++n) {
        const std::size_t nbase = static_cast<std::size_t>(n) * channels * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = xd[nbase + i];
            for (int c = 1; c < channels; ++c) {
                mx = std::max(mx, xd[nbase + static_cast<std::size_t>(c) * plane + i]);
            }
            double denom = 0.0;
            for (int c = 0; c < channels; ++c) {
                const double e = std::exp(xd[nbase + static_cast<std::size_t>(c) * plane + i] - mx);
                od[nbase + static_cast<std::size_t>(c) * plane + i] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int c = 0; c < channels; ++c) {
                od[nbase + static_cast<std::size_t>(c) * plane + i] *= inv;
            }
        }
    }
    guard_finite("softmax_channels", out.data());

    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        auto probs = std::make_shared<std::vector<double>>(out.data());
        detail::attach(out, {&x}, [x_node, probs, batch, channels, plane](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            const double* g = self.grad.data();
            const double* p = probs->data();
            for (int n = 0; n < batch; ++n) {
                const std::size_t nbase = static_cast<std::size_t>(n) * channels * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    double dot = 0.0;
                    for (int c = 0; c < channels; ++c) {
                        const std::size_t idx = nbase + static_cast<std::size_t>(c) * plane + i;
                        dot += g[idx] * p[idx];
                    }
                    for (int c = 0; c < channels; ++c) {
                        const std::size_t idx = nbase + static_cast<std::size_t>(c) * plane + i;
                        x_node->grad[idx] += p[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dice_loss: soft Dice, macro-averaged over channels, pooled over the
// batch; loss = 1 - mean_c (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
// ---------------------------------------------------------------------------
inline constexpr double kDiceEps = 1e-6;

inline Tensor dice_loss(const Tensor& probs, const Tensor& target) {
    detail::require_rank(probs, 4, "dice_loss", "probs");
    if (probs.shape() != target.shape()) {
        throw shape_error("dice_loss: probs " + shape_str(probs.shape()) + " and target " +
                          shape_str(target.shape()) + " must match");
    }
    const auto& ps = probs.shape();
    const int batch = ps[0], channels = ps[1];
    const std::size_t plane = static_cast<std::size_t>(ps[2]) * ps[3];
    const double* pd = probs.data().data();
    const double* td = target.data().data();

    std::vector<double> inter(channels, 0.0), denom(channels, 0.0);
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            double ic = 0.0, pc = 0.0, tc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                ic += pd[base + i] * td[base + i];
                pc += pd[base + i];
                tc += td[base + i];
            }
            inter[c] += ic;
            denom[c] += pc + tc;
        }
    }
    double dice = 0.0;
    for (int c = 0; c < channels; ++c) dice += (2.0 * inter[c] + kDiceEps) / (denom[c] + kDiceEps);
    Tensor out = Tensor::scalar(1.0 - dice / channels);
    guard_finite("dice_loss", out.data());

    if (detail::any_requires_grad({&probs, &target})) {
        auto p_node = probs.node_ptr();
        auto t_node = target.node_ptr();
        detail::attach(out, {&probs, &target},
                       [p_node, t_node, inter, denom, batch, channels, plane](detail::TensorNode& self) {
            if (!p_node->requires_grad) return;
            p_node->ensure_grad();
            const double g = self.grad[0];
            const double* td = t_node->data.data();
            for (int c = 0; c < channels; ++c) {
                const double d = denom[c] + kDiceEps;
                const double num = 2.0 * inter[c] + kDiceEps;
                const double a1 = 2.0 / d;
                const double a2 = num / (d * d);
                // d(loss)/dp = -(1/C) * (2*t*d - num) / d^2
                for (int n = 0; n < batch; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        p_node->grad[base + i] +=
                            g * (-(a1 * td[base + i] - a2) / channels);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small elementwise/reduction ops used for composing test graphs and
// utility math.
// ---------------------------------------------------------------------------
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                          " must match");
    }
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    guard_finite("add", out.data());
    if (detail::any_requires_grad({&a, &b})) {
        auto a_node = a.node_ptr();
        auto b_node = b.node_ptr();
        detail::attach(out, {&a, &b}, [a_node, b_node](detail::TensorNode& self) {
            for (auto* node : {a_node.get(), b_node.get()}) {
                if (!node->requires_grad) continue;
                node->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) node->grad[i] += self.grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                          " must match");
    }
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    guard_finite("mul", out.data());
    if (detail::any_requires_grad({&a, &b})) {
        auto a_node = a.node_ptr();
        auto b_node = b.node_ptr();
        detail::attach(out, {&a, &b}, [a_node, b_node](detail::TensorNode& self) {
            if (a_node->requires_grad) {
                a_node->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    a_node->grad[i] += self.grad[i] * b_node->data[i];
                }
            }
            if (b_node->requires_grad) {
                b_node->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    b_node->grad[i] += self.grad[i] * a_node->data[i];
                }
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    guard_finite("sum", out.data());
    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            for (double& g : x_node->grad) g += self.grad[0];
        });
    }
    return out;
}

inline Tensor scale(const Tensor& x, double factor) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = x.data()[i] * factor;
    guard_finite("scale", out.data());
    if (detail::any_requires_grad({&x})) {
        auto x_node = x.node_ptr();
        detail::attach(out, {&x}, [x_node, factor](detail::TensorNode& self) {
            if (!x_node->requires_grad) return;
            x_node->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) x_node->grad[i] += self.grad[i] * factor;
        });
    }
    return out;
}

}  // namespace splitfed
