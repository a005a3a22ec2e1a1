#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "depfusion/errors.hpp"
#include "depfusion/prng.hpp"

namespace depfusion {

// Dense rank-4 array in (batch, channel, height, width) layout, row-major.
// The universal carrier for images, feature maps and priority matrices.
// Values are immutable by convention once an operation returns; all ops
// below are pure functions.
template <class T>
struct FeatureMap {
    std::size_t b = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(std::size_t b_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
        : b(b_), c(c_), h(h_), w(w_), data(b_ * c_ * h_ * w_, fill) {
        if (b_ == 0 || c_ == 0 || h_ == 0 || w_ == 0)
            throw ShapeError("FeatureMap dims must all be >= 1");
    }

    // Construction from external input validates finiteness; internal ops
    // construct directly and rely on their own contracts.
    static FeatureMap from_data(std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                                std::vector<T> values) {
        if (values.size() != b * c * h * w)
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_string(b, c, h, w));
        FeatureMap m;
        m.b = b; m.c = c; m.h = h; m.w = w;
        m.data = std::move(values);
        for (T v : m.data)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericalError("non-finite element in external input");
        return m;
    }

    std::size_t size() const { return data.size(); }
    std::size_t spatial() const { return h * w; }

    T& at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) {
        return data[((bi * c + ci) * h + y) * w + x];
    }
    T at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) const {
        return data[((bi * c + ci) * h + y) * w + x];
    }

    bool same_shape(const FeatureMap& o) const {
        return b == o.b && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_string() const { return shape_string(b, c, h, w); }
    static std::string shape_string(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

template <class T>
void require_same_shape(const FeatureMap<T>& a, const FeatureMap<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

// ---- elementwise / reduction ------------------------------------------------

template <class T>
FeatureMap<T> add(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    require_same_shape(a, b, "add");
    FeatureMap<T> out = a;
    for (std::size_t i = 0; i < b.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

template <class T>
FeatureMap<T> sub(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    require_same_shape(a, b, "sub");
    FeatureMap<T> out = a;
    for (std::size_t i = 0; i < b.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

template <class T>
FeatureMap<T> mul(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    require_same_shape(a, b, "mul");
    FeatureMap<T> out = a;
    for (std::size_t i = 0; i < b.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

template <class T>
FeatureMap<T> scale(const FeatureMap<T>& a, T s) {
    FeatureMap<T> out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

template <class T>
double sum(const FeatureMap<T>& a) {
    double acc = 0;
    for (T v : a.data) acc += static_cast<double>(v);
    return acc;
}

template <class T>
double max_abs(const FeatureMap<T>& a) {
    double m = 0;
    for (T v : a.data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

template <class T>
double max_abs_diff(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

// ---- depthwise convolution --------------------------------------------------

// Per-channel k x k weights. kernel.data laid out (C, k, k) row-major.
template <class T>
struct DepthwiseKernel {
    std::size_t channels = 0, k = 0;
    std::vector<T> data;

    DepthwiseKernel() = default;
    DepthwiseKernel(std::size_t channels_, std::size_t k_, T fill = T(0))
        : channels(channels_), k(k_), data(channels_ * k_ * k_, fill) {}

    T& at(std::size_t c, std::size_t ky, std::size_t kx) { return data[(c * k + ky) * k + kx]; }
    T at(std::size_t c, std::size_t ky, std::size_t kx) const { return data[(c * k + ky) * k + kx]; }

    // Center tap 1, everything else 0: the identity under same-padding
    // cross-correlation.
    static DepthwiseKernel identity(std::size_t channels, std::size_t k) {
        DepthwiseKernel ker(channels, k);
        for (std::size_t c = 0; c < channels; ++c) ker.at(c, k / 2, k / 2) = T(1);
        return ker;
    }
};

// Same-padded per-channel 2D cross-correlation (no kernel flip), zero
// boundary, padding (k-1)/2 so output dims equal input dims.
template <class T>
FeatureMap<T> depthwise_conv(const FeatureMap<T>& x, const DepthwiseKernel<T>& kernel) {
    if (kernel.k % 2 == 0)
        throw InvalidArgument("depthwise_conv: kernel size must be odd, got " +
                              std::to_string(kernel.k));
    if (kernel.channels != x.c)
        throw ShapeError("depthwise_conv: kernel has " + std::to_string(kernel.channels) +
                         " channels, input has " + std::to_string(x.c));
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(kernel.k);
    const std::ptrdiff_t pad = (k - 1) / 2;
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(x.h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(x.w);
    FeatureMap<T> out(x.b, x.c, x.h, x.w);
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t ci = 0; ci < x.c; ++ci)
            for (std::ptrdiff_t y = 0; y < H; ++y)
                for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
                    T acc = T(0);
                    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
                        const std::ptrdiff_t sy = y + ky - pad;
                        if (sy < 0 || sy >= H) continue;
                        for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t sx = xx + kx - pad;
                            if (sx < 0 || sx >= W) continue;
                            acc += kernel.at(ci, static_cast<std::size_t>(ky),
                                             static_cast<std::size_t>(kx)) *
                                   x.at(bi, ci, static_cast<std::size_t>(sy),
                                        static_cast<std::size_t>(sx));
                        }
                    }
                    out.at(bi, ci, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) = acc;
                }
    return out;
}

// ---- global average pooling -------------------------------------------------

// Elementwise mean of the inputs followed by the spatial mean, giving
// (B, C, 1, 1). Equivalent to the mean over all values when shapes match.
template <class T>
FeatureMap<T> global_avg_pool(const std::vector<FeatureMap<T>>& xs) {
    if (xs.empty()) throw ShapeError("global_avg_pool: empty input list");
    for (const auto& x : xs) require_same_shape(xs[0], x, "global_avg_pool");
    const auto& first = xs[0];
    FeatureMap<T> out(first.b, first.c, 1, 1);
    const double denom = static_cast<double>(xs.size()) * static_cast<double>(first.spatial());
    for (std::size_t bi = 0; bi < first.b; ++bi)
        for (std::size_t ci = 0; ci < first.c; ++ci) {
            double acc = 0;
            for (const auto& x : xs)
                for (std::size_t y = 0; y < first.h; ++y)
                    for (std::size_t xx = 0; xx < first.w; ++xx)
                        acc += static_cast<double>(x.at(bi, ci, y, xx));
            out.at(bi, ci, 0, 0) = static_cast<T>(acc / denom);
        }
    return out;
}

// ---- spatial flattening -----------------------------------------------------

// Token sequences: `len` tokens of `channels` values each, one sequence per
// batch item. Token t of batch bi lives at data[(bi*len + t)*channels ...].
// flatten_spatial uses row-major (Z-order) traversal: token t = y*W + x.
template <class T>
struct TokenSequence {
    std::size_t batch = 0, len = 0, channels = 0;
    std::vector<T> data;

    TokenSequence() = default;
    TokenSequence(std::size_t batch_, std::size_t len_, std::size_t channels_, T fill = T(0))
        : batch(batch_), len(len_), channels(channels_), data(batch_ * len_ * channels_, fill) {}

    T& at(std::size_t bi, std::size_t t, std::size_t ch) {
        return data[(bi * len + t) * channels + ch];
    }
    T at(std::size_t bi, std::size_t t, std::size_t ch) const {
        return data[(bi * len + t) * channels + ch];
    }
};

template <class T>
TokenSequence<T> flatten_spatial(const FeatureMap<T>& x) {
    TokenSequence<T> seq(x.b, x.spatial(), x.c);
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t ci = 0; ci < x.c; ++ci)
            for (std::size_t y = 0; y < x.h; ++y)
                for (std::size_t xx = 0; xx < x.w; ++xx)
                    seq.at(bi, y * x.w + xx, ci) = x.at(bi, ci, y, xx);
    return seq;
}

template <class T>
FeatureMap<T> unflatten_spatial(const TokenSequence<T>& seq, std::size_t h, std::size_t w) {
    if (seq.len != h * w)
        throw ShapeError("unflatten_spatial: " + std::to_string(seq.len) + " tokens cannot fill " +
                         std::to_string(h) + "x" + std::to_string(w));
    FeatureMap<T> out(seq.batch, seq.channels, h, w);
    for (std::size_t bi = 0; bi < seq.batch; ++bi)
        for (std::size_t ci = 0; ci < seq.channels; ++ci)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    out.at(bi, ci, y, xx) = seq.at(bi, y * w + xx, ci);
    return out;
}

// ---- seeded initialization --------------------------------------------------

// Uniform draws from [-scale, +scale]. Deterministic given the Prng state.
template <class T>
std::vector<T> init_params(Prng& prng, std::size_t count, double scale) {
    if (!(scale > 0)) throw InvalidArgument("init_params: scale must be > 0");
    std::vector<T> out(count);
    for (auto& v : out) v = static_cast<T>(prng.uniform(-scale, scale));
    return out;
}

// Fan-in scaling used everywhere weights are drawn: s = 1/sqrt(fan_in).
inline double init_scale(std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

template <class T>
FeatureMap<T> random_map(Prng& prng, std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                         double lo = -1.0, double hi = 1.0) {
    FeatureMap<T> out(b, c, h, w);
    for (auto& v : out.data) v = static_cast<T>(prng.uniform(lo, hi));
    return out;
}

}  // namespace depfusion
