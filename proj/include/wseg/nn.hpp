#pragma once

#include <cmath>

#include "wseg/rng.hpp"
#include "wseg/tensor.hpp"

namespace wseg {

/// 2D convolution layer with explicit weights (Cout x Cin x kh x kw), bias,
/// stride and zero padding. Direct-loop implementation; the toy network is
/// small enough that this is the whole story.
struct Conv2d {
    Tensor w;  // Cout x Cin x kh x kw
    Tensor b;  // Cout
    int stride = 1;
    int pad = 0;

    static Conv2d init(std::size_t c_out, std::size_t c_in, std::size_t ksize, int stride,
                       int pad, Rng& rng) {
        Conv2d conv;
        conv.w = Tensor(std::vector<std::size_t>{c_out, c_in, ksize, ksize});
        conv.b = Tensor(std::vector<std::size_t>{c_out});
        conv.stride = stride;
        conv.pad = pad;
        const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * ksize * ksize));
        for (auto& v : conv.w) v = rng.uniform(-bound, bound);
        return conv;
    }

    Tensor forward(const Tensor& in) const {
        detail::check_rank3(in, "Conv2d");
        const std::size_t c_in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
        detail::check(in.dim(0) == c_in, "Conv2d: input channel mismatch");
        const long h = static_cast<long>(in.dim(1)), wd = static_cast<long>(in.dim(2));
        const long ho = (h + 2 * pad - static_cast<long>(kh)) / stride + 1;
        const long wo = (wd + 2 * pad - static_cast<long>(kw)) / stride + 1;
        detail::check(ho > 0 && wo > 0, "Conv2d: output would be empty");

        Tensor out(std::vector<std::size_t>{w.dim(0), static_cast<std::size_t>(ho),
                                            static_cast<std::size_t>(wo)});
        for (std::size_t co = 0; co < w.dim(0); ++co)
            for (long oi = 0; oi < ho; ++oi)
                for (long oj = 0; oj < wo; ++oj) {
                    double acc = b[co];
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long ii = oi * stride + static_cast<long>(ky) - pad;
                            if (ii < 0 || ii >= h) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long jj = oj * stride + static_cast<long>(kx) - pad;
                                if (jj < 0 || jj >= wd) continue;
                                acc += w.at(co, ci, ky, kx) *
                                       in.at(ci, static_cast<std::size_t>(ii),
                                             static_cast<std::size_t>(jj));
                            }
                        }
                    out.at(co, static_cast<std::size_t>(oi), static_cast<std::size_t>(oj)) = acc;
                }
        return out;
    }

    /// Accumulates weight/bias gradients into grad_w/grad_b and returns the
    /// gradient w.r.t. the layer input.
    Tensor backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_w,
                    Tensor& grad_b) const {
        const std::size_t c_in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
        const long h = static_cast<long>(in.dim(1)), wd = static_cast<long>(in.dim(2));
        const long ho = static_cast<long>(grad_out.dim(1)), wo = static_cast<long>(grad_out.dim(2));

        Tensor grad_in(in.dims());
        for (std::size_t co = 0; co < w.dim(0); ++co)
            for (long oi = 0; oi < ho; ++oi)
                for (long oj = 0; oj < wo; ++oj) {
                    const double g = grad_out.at(co, static_cast<std::size_t>(oi),
                                                 static_cast<std::size_t>(oj));
                    if (g == 0.0) continue;
                    grad_b[co] += g;
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long ii = oi * stride + static_cast<long>(ky) - pad;
                            if (ii < 0 || ii >= h) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long jj = oj * stride + static_cast<long>(kx) - pad;
                                if (jj < 0 || jj >= wd) continue;
                                grad_w.at(co, ci, ky, kx) +=
                                    g * in.at(ci, static_cast<std::size_t>(ii),
                                              static_cast<std::size_t>(jj));
                                grad_in.at(ci, static_cast<std::size_t>(ii),
                                           static_cast<std::size_t>(jj)) +=
                                    g * w.at(co, ci, ky, kx);
                            }
                        }
                }
        return grad_in;
    }
};

inline Tensor relu(const Tensor& t) {
    Tensor out(t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::max(0.0, t[i]);
    return out;
}

inline Tensor relu_backward(const Tensor& pre, const Tensor& grad_out) {
    Tensor g(grad_out.dims());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = pre[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

/// Integer-factor nearest-neighbor upsampling of a C x h x w tensor.
inline Tensor upsample_nearest(const Tensor& t, std::size_t factor) {
    detail::check_rank3(t, "upsample_nearest");
    detail::check(factor >= 1, "upsample_nearest: factor must be >= 1");
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(std::vector<std::size_t>{c, h * factor, w * factor});
    for (std::size_t cc = 0; cc < c; ++cc)
        for (std::size_t i = 0; i < h * factor; ++i)
            for (std::size_t j = 0; j < w * factor; ++j)
                out.at(cc, i, j) = t.at(cc, i / factor, j / factor);
    return out;
}

/// Gradients of upsample_nearest: each source cell sums its block.
inline Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
    const std::size_t c = grad_out.dim(0);
    const std::size_t h = grad_out.dim(1) / factor, w = grad_out.dim(2) / factor;
    Tensor g(std::vector<std::size_t>{c, h, w});
    for (std::size_t cc = 0; cc < c; ++cc)
        for (std::size_t i = 0; i < grad_out.dim(1); ++i)
            for (std::size_t j = 0; j < grad_out.dim(2); ++j)
                g.at(cc, i / factor, j / factor) += grad_out.at(cc, i, j);
    return g;
}

/// Nearest-neighbor resize to an arbitrary target size (no gradient).
inline Tensor resize_nearest(const Tensor& t, std::size_t out_h, std::size_t out_w) {
    detail::check_rank3(t, "resize_nearest");
    detail::check(out_h > 0 && out_w > 0, "resize_nearest: empty target");
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(std::vector<std::size_t>{c, out_h, out_w});
    for (std::size_t cc = 0; cc < c; ++cc)
        for (std::size_t i = 0; i < out_h; ++i) {
            const std::size_t si = std::min(h - 1, i * h / out_h);
            for (std::size_t j = 0; j < out_w; ++j)
                out.at(cc, i, j) = t.at(cc, si, std::min(w - 1, j * w / out_w));
        }
    return out;
}

}  // namespace wseg
