#include "depfusion/nn.hpp"

#include <cmath>

namespace depfusion {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

double relu(double x) { return x > 0 ? x : 0.0; }

template <class T>
FeatureMap<double> to_f64(const FeatureMap<T>& x) {
    FeatureMap<double> out(x.b, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<double>(x.data[i]);
    return out;
}

template <class T>
FeatureMap<T> from_f64(const FeatureMap<double>& x) {
    FeatureMap<T> out(x.b, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<T>(x.data[i]);
    return out;
}

void PointwiseAffine::validate() const {
    if (weight.size() != channels * channels || bias.size() != channels)
        throw ShapeError("pointwise affine: weight must be CxC, bias C");
}

PointwiseAffine PointwiseAffine::identity(std::size_t channels) {
    PointwiseAffine p;
    p.channels = channels;
    p.weight.assign(channels * channels, 0.0);
    for (std::size_t i = 0; i < channels; ++i) p.weight[i * channels + i] = 1.0;
    p.bias.assign(channels, 0.0);
    p.use_silu = false;
    return p;
}

PointwiseAffine PointwiseAffine::random(Prng& prng, std::size_t channels, bool use_silu) {
    PointwiseAffine p;
    p.channels = channels;
    const double s = init_scale(channels);
    p.weight = init_params<double>(prng, channels * channels, s);
    p.bias = init_params<double>(prng, channels, s);
    p.use_silu = use_silu;
    return p;
}

template <class T>
FeatureMap<T> apply(const PointwiseAffine& p, const FeatureMap<T>& x) {
    p.validate();
    if (x.c != p.channels)
        throw ShapeError("pointwise affine: input has " + std::to_string(x.c) +
                         " channels, weights " + std::to_string(p.channels));
    FeatureMap<T> out(x.b, x.c, x.h, x.w);
    const std::size_t C = x.c;
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t y = 0; y < x.h; ++y)
            for (std::size_t xx = 0; xx < x.w; ++xx)
                for (std::size_t co = 0; co < C; ++co) {
                    double acc = p.bias[co];
                    for (std::size_t ci = 0; ci < C; ++ci)
                        acc += p.weight[co * C + ci] * static_cast<double>(x.at(bi, ci, y, xx));
                    if (p.use_silu) acc = silu(acc);
                    out.at(bi, co, y, xx) = static_cast<T>(acc);
                }
    return out;
}

void LayerNorm::validate() const {
    if (enabled && (gain.size() != channels || bias.size() != channels))
        throw ShapeError("layer norm: gain/bias must have C entries");
}

LayerNorm LayerNorm::identity(std::size_t channels) {
    LayerNorm n;
    n.channels = channels;
    n.enabled = false;
    return n;
}

LayerNorm LayerNorm::random(Prng& prng, std::size_t channels) {
    LayerNorm n;
    n.channels = channels;
    n.enabled = true;
    n.gain.resize(channels);
    n.bias.resize(channels);
    for (auto& g : n.gain) g = 1.0 + prng.uniform(-0.1, 0.1);
    for (auto& b : n.bias) b = prng.uniform(-0.1, 0.1);
    return n;
}

template <class T>
FeatureMap<T> apply(const LayerNorm& n, const FeatureMap<T>& x) {
    n.validate();
    if (!n.enabled) return x;
    if (x.c != n.channels) throw ShapeError("layer norm: channel mismatch");
    FeatureMap<T> out(x.b, x.c, x.h, x.w);
    const double invc = 1.0 / static_cast<double>(x.c);
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t y = 0; y < x.h; ++y)
            for (std::size_t xx = 0; xx < x.w; ++xx) {
                double mean = 0;
                for (std::size_t ci = 0; ci < x.c; ++ci)
                    mean += static_cast<double>(x.at(bi, ci, y, xx));
                mean *= invc;
                double var = 0;
                for (std::size_t ci = 0; ci < x.c; ++ci) {
                    const double d = static_cast<double>(x.at(bi, ci, y, xx)) - mean;
                    var += d * d;
                }
                var *= invc;
                const double inv_std = 1.0 / std::sqrt(var + n.eps);
                for (std::size_t ci = 0; ci < x.c; ++ci) {
                    const double xhat =
                        (static_cast<double>(x.at(bi, ci, y, xx)) - mean) * inv_std;
                    out.at(bi, ci, y, xx) = static_cast<T>(n.gain[ci] * xhat + n.bias[ci]);
                }
            }
    return out;
}

DepthwiseKernel<double> random_kernel(Prng& prng, std::size_t channels, std::size_t k) {
    DepthwiseKernel<double> ker(channels, k);
    const double s = init_scale(k * k);
    for (auto& v : ker.data) v = prng.uniform(-s, s);
    return ker;
}

template <class T>
FeatureMap<T> apply_depthwise(const DepthwiseKernel<double>& kernel, const FeatureMap<T>& x) {
    if constexpr (std::is_same_v<T, double>) {
        return depthwise_conv(x, kernel);
    } else {
        return from_f64<T>(depthwise_conv(to_f64(x), kernel));
    }
}

template FeatureMap<double> to_f64(const FeatureMap<float>&);
template FeatureMap<double> to_f64(const FeatureMap<double>&);
template FeatureMap<float> from_f64<float>(const FeatureMap<double>&);
template FeatureMap<double> from_f64<double>(const FeatureMap<double>&);
template FeatureMap<float> apply(const PointwiseAffine&, const FeatureMap<float>&);
template FeatureMap<double> apply(const PointwiseAffine&, const FeatureMap<double>&);
template FeatureMap<float> apply(const LayerNorm&, const FeatureMap<float>&);
template FeatureMap<double> apply(const LayerNorm&, const FeatureMap<double>&);
template FeatureMap<float> apply_depthwise(const DepthwiseKernel<double>&,
                                           const FeatureMap<float>&);
template FeatureMap<double> apply_depthwise(const DepthwiseKernel<double>&,
                                            const FeatureMap<double>&);

}  // namespace depfusion
