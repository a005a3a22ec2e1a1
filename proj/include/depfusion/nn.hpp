#pragma once

#include <vector>

#include "depfusion/prng.hpp"
#include "depfusion/tensor.hpp"

namespace depfusion {

double silu(double x);
double silu_grad(double x);
double relu(double x);

// Parameters are always stored in binary64; forward passes compute in
// binary64 and cast at the FeatureMap<T> boundary, so a pipeline run is the
// same arithmetic regardless of carrier dtype.
template <class T>
FeatureMap<double> to_f64(const FeatureMap<T>& x);
template <class T>
FeatureMap<T> from_f64(const FeatureMap<double>& x);

// Per-position linear map across channels, optionally followed by SiLU.
// weight is (out=C, in=C) row-major.
struct PointwiseAffine {
    std::size_t channels = 0;
    std::vector<double> weight;
    std::vector<double> bias;
    bool use_silu = false;

    void validate() const;
    static PointwiseAffine identity(std::size_t channels);
    static PointwiseAffine random(Prng& prng, std::size_t channels, bool use_silu);
};

template <class T>
FeatureMap<T> apply(const PointwiseAffine& p, const FeatureMap<T>& x);

// Normalizes across channels at each spatial position. Disabled instances
// pass the input through untouched (the identity parameterization).
struct LayerNorm {
    std::size_t channels = 0;
    bool enabled = true;
    double eps = 1e-5;
    std::vector<double> gain;
    std::vector<double> bias;

    void validate() const;
    static LayerNorm identity(std::size_t channels);
    static LayerNorm random(Prng& prng, std::size_t channels);
};

template <class T>
FeatureMap<T> apply(const LayerNorm& n, const FeatureMap<T>& x);

DepthwiseKernel<double> random_kernel(Prng& prng, std::size_t channels, std::size_t k);

template <class T>
FeatureMap<T> apply_depthwise(const DepthwiseKernel<double>& kernel, const FeatureMap<T>& x);

}  // namespace depfusion
