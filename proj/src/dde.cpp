#include "depfusion/dde.hpp"

#include <json.hpp>

#include <cmath>
#include <iostream>

#include "depfusion/spectral.hpp"
#include "depfusion/tensor_io.hpp"

namespace depfusion {

SrnParams SrnParams::identity(std::size_t channels, std::size_t k) {
    SrnParams p;
    p.conv1 = DepthwiseKernel<double>::identity(channels, k);
    p.conv2 = DepthwiseKernel<double>::identity(channels, k);
    p.relu_enabled = false;
    p.norm = LayerNorm::identity(channels);
    p.linear = PointwiseAffine::identity(channels);
    return p;
}

SrnParams SrnParams::random(Prng& prng, std::size_t channels, std::size_t k) {
    SrnParams p;
    auto c1 = prng.fork(1), c2 = prng.fork(2), n = prng.fork(3), l = prng.fork(4);
    p.conv1 = random_kernel(c1, channels, k);
    p.conv2 = random_kernel(c2, channels, k);
    p.relu_enabled = true;
    p.norm = LayerNorm::random(n, channels);
    p.linear = PointwiseAffine::random(l, channels, false);
    return p;
}

template <class T>
FeatureMap<T> srn_apply(const SrnParams& p, const FeatureMap<T>& x) {
    FeatureMap<double> v = apply_depthwise(p.conv1, to_f64(x));
    if (p.relu_enabled)
        for (auto& e : v.data) e = relu(e);
    v = apply_depthwise(p.conv2, v);
    v = apply(p.norm, v);
    v = apply(p.linear, v);
    return from_f64<T>(v);
}

void CswmParams::validate() const {
    for (std::size_t i = 0; i + 1 < kernel_sizes.size(); ++i)
        if (kernel_sizes[i] >= kernel_sizes[i + 1])
            throw InvalidArgument("cswm: kernel sizes must be strictly increasing");
    for (std::size_t k : kernel_sizes)
        if (k % 2 == 0) throw InvalidArgument("cswm: kernel sizes must be odd");
}

CswmParams CswmParams::random(Prng& prng, std::size_t channels,
                              std::array<std::size_t, 3> kernel_sizes, std::size_t state_dim,
                              Discretization disc) {
    CswmParams p;
    p.kernel_sizes = kernel_sizes;
    for (std::size_t i = 0; i < 3; ++i) {
        auto kp = prng.fork(10 + i);
        p.kernels[i] = random_kernel(kp, channels, kernel_sizes[i]);
        auto fp = prng.fork(20 + i);
        auto bp = prng.fork(30 + i);
        p.ssm_fwd[i] = SelectiveProjection::random(fp, state_dim, channels, disc);
        p.ssm_bwd[i] = SelectiveProjection::random(bp, state_dim, channels, disc);
    }
    p.validate();
    return p;
}

CswmParams CswmParams::identity(std::size_t channels, std::array<std::size_t, 3> kernel_sizes,
                                std::size_t state_dim, Discretization disc) {
    CswmParams p;
    p.kernel_sizes = kernel_sizes;
    for (std::size_t i = 0; i < 3; ++i) {
        p.kernels[i] = DepthwiseKernel<double>::identity(channels, kernel_sizes[i]);
        // Forward and backward halves each emit 1/6, so one branch sums to
        // 1/3 after folding and the three-branch gate is exactly 1.
        p.ssm_fwd[i] = SelectiveProjection::constant_output(state_dim, channels, 1.0 / 6.0, disc);
        p.ssm_bwd[i] = SelectiveProjection::constant_output(state_dim, channels, 1.0 / 6.0, disc);
    }
    return p;
}

HfMlpParams HfMlpParams::identity(std::size_t channels) {
    HfMlpParams p;
    p.gain.assign(channels, 1.0);
    p.bias.assign(channels, 0.0);
    return p;
}

HfMlpParams HfMlpParams::random(Prng& prng, std::size_t channels) {
    HfMlpParams p;
    p.gain.resize(channels);
    p.bias.resize(channels);
    for (auto& g : p.gain) g = 1.0 + prng.uniform(-0.1, 0.1);
    for (auto& b : p.bias) b = prng.uniform(-0.05, 0.05);
    return p;
}

DdeParams DdeParams::random(Prng& prng, std::size_t channels, std::size_t levels,
                            std::array<std::size_t, 3> kernel_sizes, WaveletBasis basis,
                            Discretization disc, std::size_t state_dim) {
    DdeParams p;
    p.levels = levels;
    p.basis = basis;
    auto cp = prng.fork(100);
    p.cswm = CswmParams::random(cp, channels, kernel_sizes, state_dim, disc);
    for (std::size_t lvl = 0; lvl < levels; ++lvl) {
        auto hp = prng.fork(200 + lvl);
        p.hf_mlp.push_back(HfMlpParams::random(hp, channels));
    }
    auto sa = prng.fork(300), sp = prng.fork(301);
    p.srn_amplitude = SrnParams::random(sa, channels);
    p.srn_phase = SrnParams::random(sp, channels);
    return p;
}

DdeParams DdeParams::identity(std::size_t channels, std::size_t levels,
                              std::array<std::size_t, 3> kernel_sizes, WaveletBasis basis,
                              Discretization disc, std::size_t state_dim) {
    DdeParams p;
    p.levels = levels;
    p.basis = basis;
    p.cswm = CswmParams::identity(channels, kernel_sizes, state_dim, disc);
    for (std::size_t lvl = 0; lvl < levels; ++lvl)
        p.hf_mlp.push_back(HfMlpParams::identity(channels));
    p.srn_amplitude = SrnParams::identity(channels);
    p.srn_phase = SrnParams::identity(channels);
    return p;
}

namespace {

// flatten + broadcast-add of the global token, concatenated with the
// reversal: [x_0+g, ..., x_{HW-1}+g, x_{HW-1}+g, ..., x_0+g].
template <class T>
TokenSequence<T> serialize_with_global(const FeatureMap<T>& f, const FeatureMap<T>& fg) {
    const std::size_t hw = f.spatial();
    TokenSequence<T> seq(f.b, 2 * hw, f.c);
    for (std::size_t bi = 0; bi < f.b; ++bi)
        for (std::size_t ci = 0; ci < f.c; ++ci) {
            const T g = fg.at(bi, ci, 0, 0);
            for (std::size_t y = 0; y < f.h; ++y)
                for (std::size_t xx = 0; xx < f.w; ++xx) {
                    const std::size_t t = y * f.w + xx;
                    const T v = static_cast<T>(f.at(bi, ci, y, xx) + g);
                    seq.at(bi, t, ci) = v;
                    seq.at(bi, 2 * hw - 1 - t, ci) = v;
                }
        }
    return seq;
}

// Fold a 2*H*W bidirectional output back to H*W: average each token with its
// mirrored twin. Averaging keeps the identity parameterization exact.
TokenSequence<double> fold_halves(const TokenSequence<double>& seq) {
    const std::size_t hw = seq.len / 2;
    TokenSequence<double> out(seq.batch, hw, seq.channels);
    for (std::size_t bi = 0; bi < seq.batch; ++bi)
        for (std::size_t t = 0; t < hw; ++t)
            for (std::size_t ch = 0; ch < seq.channels; ++ch)
                out.at(bi, t, ch) =
                    0.5 * (seq.at(bi, t, ch) + seq.at(bi, seq.len - 1 - t, ch));
    return out;
}

template <class T>
void apply_hf_mlp(const HfMlpParams& p, FeatureMap<T>& band) {
    for (std::size_t bi = 0; bi < band.b; ++bi)
        for (std::size_t ci = 0; ci < band.c; ++ci)
            for (std::size_t y = 0; y < band.h; ++y)
                for (std::size_t xx = 0; xx < band.w; ++xx)
                    band.at(bi, ci, y, xx) = static_cast<T>(
                        p.gain[ci] * static_cast<double>(band.at(bi, ci, y, xx)) + p.bias[ci]);
}

}  // namespace

template <class T>
std::array<TokenSequence<T>, 3> cross_scale_serialize(const FeatureMap<T>& f3,
                                                      const FeatureMap<T>& f5,
                                                      const FeatureMap<T>& f7,
                                                      const FeatureMap<T>& fg) {
    require_same_shape(f3, f5, "cross_scale_serialize");
    require_same_shape(f3, f7, "cross_scale_serialize");
    if (fg.b != f3.b || fg.c != f3.c || fg.h != 1 || fg.w != 1)
        throw ShapeError("cross_scale_serialize: global feature must be (B,C,1,1)");
    return {serialize_with_global(f3, fg), serialize_with_global(f5, fg),
            serialize_with_global(f7, fg)};
}

template <class T>
FeatureMap<T> cswm_enhance(const FeatureMap<T>& ll, const CswmParams& params, DdeStats* stats) {
    params.validate();
    std::array<FeatureMap<T>, 3> scales;
    for (std::size_t i = 0; i < 3; ++i) scales[i] = apply_depthwise(params.kernels[i], ll);
    const FeatureMap<T> fg =
        global_avg_pool(std::vector<FeatureMap<T>>{scales[0], scales[1], scales[2]});
    auto seqs = cross_scale_serialize(scales[0], scales[1], scales[2], fg);

    FeatureMap<double> gate(ll.b, ll.c, ll.h, ll.w, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        TokenSequence<double> seq64(seqs[i].batch, seqs[i].len, seqs[i].channels);
        for (std::size_t n = 0; n < seq64.data.size(); ++n)
            seq64.data[n] = static_cast<double>(seqs[i].data[n]);
        const auto scanned =
            bidirectional_scan_tokens(params.ssm_fwd[i], params.ssm_bwd[i], seq64);
        const auto folded = fold_halves(scanned);
        gate = add(gate, unflatten_spatial(folded, ll.h, ll.w));
    }
    const double peak = max_abs(gate);
    if (stats) stats->max_abs_gate = std::max(stats->max_abs_gate, peak);
    if (peak > 1e3) {
        if (stats) ++stats->gate_warnings;
        std::cerr << "cswm_enhance: |gate| reached " << peak << " (> 1e3)\n";
    }
    FeatureMap<T> out(ll.b, ll.c, ll.h, ll.w);
    for (std::size_t n = 0; n < out.data.size(); ++n)
        out.data[n] = static_cast<T>(static_cast<double>(ll.data[n]) * gate.data[n]);
    return out;
}

template <class T>
FeatureMap<T> fdr_recover(const FeatureMap<T>& x, const SrnParams& srn_as,
                          const SrnParams& srn_ps, DdeStats* stats) {
    SpectralPair<T> s = fft2_decompose(x);
    s.amplitude = srn_apply(srn_as, s.amplitude);
    s.phase = srn_apply(srn_ps, s.phase);
    double max_imag = 0.0;
    FeatureMap<T> out = ifft2_recompose(s, &max_imag);
    if (stats) stats->max_imag = std::max(stats->max_imag, max_imag);
    return out;
}

template <class T>
FeatureMap<T> dde_pipeline(const FeatureMap<T>& image, const DdeParams& params, DdeStats* stats) {
    if (params.hf_mlp.size() != params.levels)
        throw ShapeError("dde_pipeline: need one hf_mlp per level");
    WaveletPyramid<T> pyramid = dwt2(image, params.levels, params.basis);
    FeatureMap<T> current = pyramid.ll;
    for (std::size_t idx = 0; idx < params.levels; ++idx) {
        current = cswm_enhance(current, params.cswm, stats);
        DetailBands<T> bands = pyramid.details[idx];
        apply_hf_mlp(params.hf_mlp[idx], bands.hl);
        apply_hf_mlp(params.hf_mlp[idx], bands.lh);
        apply_hf_mlp(params.hf_mlp[idx], bands.hh);
        current = idwt2_single(current, bands, params.basis, pyramid.level_dims[idx].first,
                               pyramid.level_dims[idx].second);
        current = fdr_recover(current, params.srn_amplitude, params.srn_phase, stats);
    }
    return current;
}

void save_dde_params(const std::filesystem::path& dir, const DdeParams& params,
                     std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    auto save_vec = [&](const std::string& name, const std::vector<double>& v) {
        FeatureMap<double> m(1, 1, 1, v.size());
        m.data = v;
        save_tensor(dir / (name + ".dft"), TensorVariant(std::move(m)));
    };
    for (std::size_t i = 0; i < 3; ++i) {
        save_vec("cswm_kernel" + std::to_string(i), params.cswm.kernels[i].data);
        save_vec("cswm_fwd" + std::to_string(i) + "_a", params.cswm.ssm_fwd[i].a);
        save_vec("cswm_bwd" + std::to_string(i) + "_a", params.cswm.ssm_bwd[i].a);
    }
    for (std::size_t lvl = 0; lvl < params.hf_mlp.size(); ++lvl) {
        save_vec("hf" + std::to_string(lvl) + "_gain", params.hf_mlp[lvl].gain);
        save_vec("hf" + std::to_string(lvl) + "_bias", params.hf_mlp[lvl].bias);
    }
    save_vec("srn_as_linear_w", params.srn_amplitude.linear.weight);
    save_vec("srn_ps_linear_w", params.srn_phase.linear.weight);
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["levels"] = params.levels;
    manifest["basis"] = to_string(params.basis);
    manifest["kernel_sizes"] = params.cswm.kernel_sizes;
    manifest["discretization"] = to_string(params.cswm.ssm_fwd[0].disc);
    const std::string text = manifest.dump(2) + "\n";
    write_file_atomic(dir / "manifest.json", text.data(), text.size());
}

template FeatureMap<float> srn_apply(const SrnParams&, const FeatureMap<float>&);
template FeatureMap<double> srn_apply(const SrnParams&, const FeatureMap<double>&);
template std::array<TokenSequence<float>, 3> cross_scale_serialize(const FeatureMap<float>&,
                                                                   const FeatureMap<float>&,
                                                                   const FeatureMap<float>&,
                                                                   const FeatureMap<float>&);
template std::array<TokenSequence<double>, 3> cross_scale_serialize(const FeatureMap<double>&,
                                                                    const FeatureMap<double>&,
                                                                    const FeatureMap<double>&,
                                                                    const FeatureMap<double>&);
template FeatureMap<float> cswm_enhance(const FeatureMap<float>&, const CswmParams&, DdeStats*);
template FeatureMap<double> cswm_enhance(const FeatureMap<double>&, const CswmParams&, DdeStats*);
template FeatureMap<float> fdr_recover(const FeatureMap<float>&, const SrnParams&,
                                       const SrnParams&, DdeStats*);
template FeatureMap<double> fdr_recover(const FeatureMap<double>&, const SrnParams&,
                                        const SrnParams&, DdeStats*);
template FeatureMap<float> dde_pipeline(const FeatureMap<float>&, const DdeParams&, DdeStats*);
template FeatureMap<double> dde_pipeline(const FeatureMap<double>&, const DdeParams&, DdeStats*);

}  // namespace depfusion
