#pragma once

#include <array>
#include <filesystem>

#include "depfusion/nn.hpp"
#include "depfusion/ssm.hpp"
#include "depfusion/wavelet.hpp"

namespace depfusion {

// Spectrum recovery network: dwconv -> ReLU -> dwconv -> LayerNorm ->
// pointwise linear. One instance enhances amplitude, another phase. The
// identity parameterization bypasses ReLU and the norm so the whole stack
// is an exact pass-through.
struct SrnParams {
    DepthwiseKernel<double> conv1, conv2;
    bool relu_enabled = true;
    LayerNorm norm;
    PointwiseAffine linear;

    static SrnParams identity(std::size_t channels, std::size_t k = 3);
    static SrnParams random(Prng& prng, std::size_t channels, std::size_t k = 3);
};

template <class T>
FeatureMap<T> srn_apply(const SrnParams& p, const FeatureMap<T>& x);

// Cross-Scale Wavelet Mamba block: three depthwise scales of LL plus a
// global token, serialized with their reversals and scanned bidirectionally;
// the summed scan outputs gate LL multiplicatively.
struct CswmParams {
    std::array<std::size_t, 3> kernel_sizes{3, 5, 7};
    std::array<DepthwiseKernel<double>, 3> kernels;
    std::array<SelectiveProjection, 3> ssm_fwd;
    std::array<SelectiveProjection, 3> ssm_bwd;

    void validate() const;
    static CswmParams random(Prng& prng, std::size_t channels,
                             std::array<std::size_t, 3> kernel_sizes, std::size_t state_dim,
                             Discretization disc);
    // Every branch contributes a constant 1/3, so the gate is exactly 1.
    static CswmParams identity(std::size_t channels, std::array<std::size_t, 3> kernel_sizes,
                               std::size_t state_dim, Discretization disc);
};

// Per-channel pointwise affine for the high-frequency bands of one level,
// identity-initializable.
struct HfMlpParams {
    std::vector<double> gain;
    std::vector<double> bias;

    static HfMlpParams identity(std::size_t channels);
    static HfMlpParams random(Prng& prng, std::size_t channels);
};

struct DdeParams {
    std::size_t levels = 2;
    WaveletBasis basis = WaveletBasis::Haar;
    CswmParams cswm;
    std::vector<HfMlpParams> hf_mlp;  // one per level, deepest-first
    SrnParams srn_amplitude;
    SrnParams srn_phase;

    static DdeParams random(Prng& prng, std::size_t channels, std::size_t levels,
                            std::array<std::size_t, 3> kernel_sizes, WaveletBasis basis,
                            Discretization disc, std::size_t state_dim = 8);
    static DdeParams identity(std::size_t channels, std::size_t levels,
                              std::array<std::size_t, 3> kernel_sizes, WaveletBasis basis,
                              Discretization disc, std::size_t state_dim = 8);
};

struct DdeStats {
    double max_abs_gate = 0.0;   // largest |gate| seen across levels
    double max_imag = 0.0;       // largest imaginary residue from recomposition
    std::size_t gate_warnings = 0;  // levels where |gate| exceeded 1e3
};

// Per scale: flatten f_i, add the broadcast global token, then concatenate
// the sequence with its reversal (length 2*H*W).
template <class T>
std::array<TokenSequence<T>, 3> cross_scale_serialize(const FeatureMap<T>& f3,
                                                      const FeatureMap<T>& f5,
                                                      const FeatureMap<T>& f7,
                                                      const FeatureMap<T>& fg);

template <class T>
FeatureMap<T> cswm_enhance(const FeatureMap<T>& ll, const CswmParams& params,
                           DdeStats* stats = nullptr);

template <class T>
FeatureMap<T> fdr_recover(const FeatureMap<T>& x, const SrnParams& srn_as,
                          const SrnParams& srn_ps, DdeStats* stats = nullptr);

// Full enhancement: N-level decomposition, then per level (deepest first)
// CSWM gating of the low band, high-band MLP, one-level reconstruction and
// Fourier detail recovery; the recovered image becomes the next level's low
// band.
template <class T>
FeatureMap<T> dde_pipeline(const FeatureMap<T>& image, const DdeParams& params,
                           DdeStats* stats = nullptr);

// Parameter bundle serialization: tensor files plus manifest.json.
void save_dde_params(const std::filesystem::path& dir, const DdeParams& params,
                     std::uint64_t seed);
}  // namespace depfusion
