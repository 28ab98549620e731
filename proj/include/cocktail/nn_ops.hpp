#pragma once

#include <Eigen/Core>

#include <memory>
#include <optional>

#include "cocktail/tensor.hpp"

// Convolution, pooling, upsampling and the dense layer. The inner products
// of conv2d and affine are delegated to Eigen GEMM; im2col buffers are
// rebuilt during backward instead of being saved on the tape.

namespace cocktail {

namespace detail {

template <typename Real>
using MatRM = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapRM = Eigen::Map<MatRM<Real>>;
template <typename Real>
using CMapRM = Eigen::Map<const MatRM<Real>>;

}  // namespace detail

struct Conv2dGeometry {
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t dilation_h = 1, dilation_w = 1;
    std::size_t pad_h = 0, pad_w = 0;
    bool same_padding = false;  // stride 1 only; pads so the output matches the input extent
};

namespace detail {

struct ConvPlan {
    std::size_t c_in, h, w, c_out, kh, kw;
    std::size_t sh, sw, dh, dw, ph, pw;
    std::size_t out_h, out_w;
};

template <typename Real>
inline ConvPlan conv_plan(const Tensor<Real>& x, const Tensor<Real>& k, const Conv2dGeometry& g) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (k.rank() != 4) throw std::invalid_argument("conv2d: kernel must be [C_out,C_in,kh,kw]");
    ConvPlan p;
    p.c_in = x.size(0);
    p.h = x.size(1);
    p.w = x.size(2);
    p.c_out = k.size(0);
    p.kh = k.size(2);
    p.kw = k.size(3);
    if (k.size(1) != p.c_in)
        throw std::invalid_argument("conv2d: channel mismatch, input C=" + std::to_string(p.c_in) +
                                    " kernel C_in=" + std::to_string(k.size(1)));
    p.sh = g.stride_h;
    p.sw = g.stride_w;
    p.dh = g.dilation_h;
    p.dw = g.dilation_w;
    const std::size_t ext_h = p.dh * (p.kh - 1) + 1;
    const std::size_t ext_w = p.dw * (p.kw - 1) + 1;
    if (g.same_padding) {
        if (p.sh != 1 || p.sw != 1)
            throw std::invalid_argument("conv2d: same padding requires stride 1");
        if (ext_h % 2 == 0 || ext_w % 2 == 0)
            throw std::invalid_argument("conv2d: same padding requires odd effective kernel extent");
        p.ph = (ext_h - 1) / 2;
        p.pw = (ext_w - 1) / 2;
    } else {
        p.ph = g.pad_h;
        p.pw = g.pad_w;
    }
    if (p.h + 2 * p.ph < ext_h || p.w + 2 * p.pw < ext_w)
        throw std::invalid_argument("conv2d: dilated kernel extent exceeds padded input");
    p.out_h = (p.h + 2 * p.ph - ext_h) / p.sh + 1;
    p.out_w = (p.w + 2 * p.pw - ext_w) / p.sw + 1;
    return p;
}

// cols is [C_in*kh*kw, out_h*out_w], row-major.
template <typename Real>
inline void im2col(const Real* x, const ConvPlan& p, Real* cols) {
    const std::size_t out_n = p.out_h * p.out_w;
    for (std::size_t ci = 0; ci < p.c_in; ++ci) {
        for (std::size_t i = 0; i < p.kh; ++i) {
            for (std::size_t j = 0; j < p.kw; ++j) {
                Real* row = cols + ((ci * p.kh + i) * p.kw + j) * out_n;
                for (std::size_t oy = 0; oy < p.out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * p.sh + i * p.dh) - static_cast<std::ptrdiff_t>(p.ph);
                    Real* dst = row + oy * p.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.h)) {
                        std::fill_n(dst, p.out_w, Real(0));
                        continue;
                    }
                    const Real* src = x + (ci * p.h + static_cast<std::size_t>(iy)) * p.w;
                    for (std::size_t ox = 0; ox < p.out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * p.sw + j * p.dw) - static_cast<std::ptrdiff_t>(p.pw);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(p.w))
                                      ? Real(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

// Scatter-add of the column gradient back onto the input gradient.
template <typename Real>
inline void col2im_add(const Real* cols, const ConvPlan& p, Real* gx) {
    const std::size_t out_n = p.out_h * p.out_w;
    for (std::size_t ci = 0; ci < p.c_in; ++ci) {
        for (std::size_t i = 0; i < p.kh; ++i) {
            for (std::size_t j = 0; j < p.kw; ++j) {
                const Real* row = cols + ((ci * p.kh + i) * p.kw + j) * out_n;
                for (std::size_t oy = 0; oy < p.out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * p.sh + i * p.dh) - static_cast<std::ptrdiff_t>(p.ph);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.h)) continue;
                    const Real* src = row + oy * p.out_w;
                    Real* dst = gx + (ci * p.h + static_cast<std::size_t>(iy)) * p.w;
                    for (std::size_t ox = 0; ox < p.out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * p.sw + j * p.dw) - static_cast<std::ptrdiff_t>(p.pw);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(p.w))
                            dst[static_cast<std::size_t>(ix)] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution over [C_in,H,W] with zero padding; differentiable in the
// input, the kernel and the bias. Bias may be an undefined tensor.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& k, const Tensor<Real>& bias,
                    const Conv2dGeometry& geom = {}) {
    const detail::ConvPlan p = detail::conv_plan(x, k, geom);
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.size(0) != p.c_out))
        throw std::invalid_argument("conv2d: bias must be [C_out]");

    const std::size_t out_n = p.out_h * p.out_w;
    const std::size_t kdim = p.c_in * p.kh * p.kw;
    std::vector<Real> cols(kdim * out_n);
    detail::im2col(x.data(), p, cols.data());

    Tensor<Real> out = Tensor<Real>::zeros({p.c_out, p.out_h, p.out_w});
    {
        detail::CMapRM<Real> kmat(k.data(), p.c_out, kdim);
        detail::CMapRM<Real> cmat(cols.data(), kdim, out_n);
        detail::MapRM<Real> omat(out.data(), p.c_out, out_n);
        omat.noalias() = kmat * cmat;
        if (has_bias)
            for (std::size_t co = 0; co < p.c_out; ++co) omat.row(co).array() += bias.data()[co];
    }

    auto bw = [x = x, k = k, bias = bias, out = out, p, has_bias]() mutable {
        if (!out.has_grad()) return;  // dead branch, nothing flowed here
        const std::size_t out_n = p.out_h * p.out_w;
        const std::size_t kdim = p.c_in * p.kh * p.kw;
        detail::CMapRM<Real> gy(out.grad_view().data(), p.c_out, out_n);
        if (has_bias) {
            auto& gb = bias.grad();
            for (std::size_t co = 0; co < p.c_out; ++co) gb[co] += gy.row(co).sum();
        }
        std::vector<Real> cols(kdim * out_n);
        detail::im2col(x.data(), p, cols.data());
        {
            detail::CMapRM<Real> cmat(cols.data(), kdim, out_n);
            detail::MapRM<Real> gk(k.grad().data(), p.c_out, kdim);
            gk.noalias() += gy * cmat.transpose();
        }
        {
            detail::CMapRM<Real> kmat(k.data(), p.c_out, kdim);
            std::vector<Real> gcols(kdim * out_n);
            detail::MapRM<Real> gc(gcols.data(), kdim, out_n);
            gc.noalias() = kmat.transpose() * gy;
            detail::col2im_add(gcols.data(), p, x.grad().data());
        }
    };
    if (has_bias) detail::maybe_record(out, std::move(bw), x, k, bias);
    else detail::maybe_record(out, std::move(bw), x, k);
    throw_if_nonfinite(out, "conv2d");
    return out;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& k, const Conv2dGeometry& geom = {}) {
    return conv2d(x, k, Tensor<Real>(), geom);
}

enum class PoolMode { Max, Avg };

// Pooling with floor semantics: trailing partial windows are dropped.
// Max routes its gradient to the first (row-major) argmax element.
template <typename Real>
Tensor<Real> pool2d(const Tensor<Real>& x, PoolMode mode, std::size_t window, std::size_t stride = 0) {
    if (x.rank() != 3) throw std::invalid_argument("pool2d: input must be [C,H,W]");
    if (stride == 0) stride = window;
    const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
    if (window > h || window > w)
        throw std::invalid_argument("pool2d: window " + std::to_string(window) + " larger than input " +
                                    shape_str(x.shape()));
    const std::size_t oh = (h - window) / stride + 1;
    const std::size_t ow = (w - window) / stride + 1;
    Tensor<Real> out = Tensor<Real>::zeros({c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (mode == PoolMode::Max) argmax->assign(c * oh * ow, 0);

    const Real inv_area = Real(1) / Real(window * window);
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t y0 = oy * stride, x0 = ox * stride;
                if (mode == PoolMode::Max) {
                    Real best = x.data()[(ci * h + y0) * w + x0];
                    std::size_t best_idx = (ci * h + y0) * w + x0;
                    for (std::size_t i = 0; i < window; ++i)
                        for (std::size_t j = 0; j < window; ++j) {
                            const std::size_t idx = (ci * h + y0 + i) * w + x0 + j;
                            if (x.data()[idx] > best) {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    out.data()[(ci * oh + oy) * ow + ox] = best;
                    (*argmax)[(ci * oh + oy) * ow + ox] = best_idx;
                } else {
                    Real acc = Real(0);
                    for (std::size_t i = 0; i < window; ++i)
                        for (std::size_t j = 0; j < window; ++j)
                            acc += x.data()[(ci * h + y0 + i) * w + x0 + j];
                    out.data()[(ci * oh + oy) * ow + ox] = acc * inv_area;
                }
            }
        }
    }
    detail::maybe_record(
        out,
        [x = x, out = out, mode, window, stride, argmax, inv_area]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            const std::size_t c = out.size(0), oh = out.size(1), ow = out.size(2);
            const std::size_t h = x.size(1), w = x.size(2);
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::size_t oidx = (ci * oh + oy) * ow + ox;
                        if (mode == PoolMode::Max) {
                            gx[(*argmax)[oidx]] += g[oidx];
                        } else {
                            const std::size_t y0 = oy * stride, x0 = ox * stride;
                            for (std::size_t i = 0; i < window; ++i)
                                for (std::size_t j = 0; j < window; ++j)
                                    gx[(ci * h + y0 + i) * w + x0 + j] += g[oidx] * inv_area;
                        }
                    }
        },
        x);
    throw_if_nonfinite(out, "pool2d");
    return out;
}

// Nearest-neighbor 2x upsampling per spatial axis; backward sums each 2x2
// child block into its parent cell.
template <typename Real>
Tensor<Real> upsample2x(const Tensor<Real>& x) {
    if (x.rank() != 3) throw std::invalid_argument("upsample2x: input must be [C,H,W]");
    const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
    Tensor<Real> out = Tensor<Real>::zeros({c, 2 * h, 2 * w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < 2 * h; ++y) {
            const Real* src = x.data() + (ci * h + y / 2) * w;
            Real* dst = out.data() + (ci * 2 * h + y) * 2 * w;
            for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
        }
    detail::maybe_record(
        out,
        [x = x, out = out, c, h, w]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t y = 0; y < 2 * h; ++y) {
                    const Real* gs = g.data() + (ci * 2 * h + y) * 2 * w;
                    Real* gd = gx.data() + (ci * h + y / 2) * w;
                    for (std::size_t xx = 0; xx < 2 * w; ++xx) gd[xx / 2] += gs[xx];
                }
        },
        x);
    throw_if_nonfinite(out, "upsample2x");
    return out;
}

// [C,H,W] -> [C]: mean or max over the spatial extent. Max routes gradient
// to the first argmax element per channel.
template <typename Real>
Tensor<Real> global_pool2d(const Tensor<Real>& x, PoolMode mode) {
    if (x.rank() != 3) throw std::invalid_argument("global_pool2d: input must be [C,H,W]");
    const std::size_t c = x.size(0), hw = x.size(1) * x.size(2);
    Tensor<Real> out = Tensor<Real>::zeros({c});
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (mode == PoolMode::Max) argmax->assign(c, 0);
    for (std::size_t ci = 0; ci < c; ++ci) {
        const Real* src = x.data() + ci * hw;
        if (mode == PoolMode::Max) {
            Real best = src[0];
            std::size_t bi = 0;
            for (std::size_t i = 1; i < hw; ++i)
                if (src[i] > best) {
                    best = src[i];
                    bi = i;
                }
            out.data()[ci] = best;
            (*argmax)[ci] = bi;
        } else {
            Real acc = Real(0);
            for (std::size_t i = 0; i < hw; ++i) acc += src[i];
            out.data()[ci] = acc / Real(hw);
        }
    }
    detail::maybe_record(
        out,
        [x = x, out = out, mode, argmax, c, hw]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (std::size_t ci = 0; ci < c; ++ci) {
                if (mode == PoolMode::Max) {
                    gx[ci * hw + (*argmax)[ci]] += g[ci];
                } else {
                    const Real share = g[ci] / Real(hw);
                    for (std::size_t i = 0; i < hw; ++i) gx[ci * hw + i] += share;
                }
            }
        },
        x);
    throw_if_nonfinite(out, "global_pool2d");
    return out;
}

// x[N,D_in] * W[D_in,D_out] + b. Bias may be undefined.
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    if (x.rank() != 2 || weight.rank() != 2)
        throw std::invalid_argument("affine: expected rank-2 input and weight");
    const std::size_t n = x.size(0), d_in = x.size(1), d_out = weight.size(1);
    if (weight.size(0) != d_in)
        throw std::invalid_argument("affine: dimension mismatch, x " + shape_str(x.shape()) + " W " +
                                    shape_str(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.size(0) != d_out))
        throw std::invalid_argument("affine: bias must be [D_out]");

    Tensor<Real> out = Tensor<Real>::zeros({n, d_out});
    {
        detail::CMapRM<Real> xm(x.data(), n, d_in);
        detail::CMapRM<Real> wm(weight.data(), d_in, d_out);
        detail::MapRM<Real> om(out.data(), n, d_out);
        om.noalias() = xm * wm;
        if (has_bias) {
            detail::CMapRM<Real> bm(bias.data(), 1, d_out);
            om.rowwise() += bm.row(0);
        }
    }
    auto bw = [x = x, weight = weight, bias = bias, out = out, n, d_in, d_out, has_bias]() mutable {
        if (!out.has_grad()) return;
        detail::CMapRM<Real> gy(out.grad_view().data(), n, d_out);
        detail::CMapRM<Real> xm(x.data(), n, d_in);
        detail::CMapRM<Real> wm(weight.data(), d_in, d_out);
        detail::MapRM<Real> gx(x.grad().data(), n, d_in);
        detail::MapRM<Real> gw(weight.grad().data(), d_in, d_out);
        gx.noalias() += gy * wm.transpose();
        gw.noalias() += xm.transpose() * gy;
        if (has_bias) {
            auto& gb = bias.grad();
            for (std::size_t j = 0; j < d_out; ++j) gb[j] += gy.col(j).sum();
        }
    };
    if (has_bias) detail::maybe_record(out, std::move(bw), x, weight, bias);
    else detail::maybe_record(out, std::move(bw), x, weight);
    throw_if_nonfinite(out, "affine");
    return out;
}

}  // namespace cocktail
