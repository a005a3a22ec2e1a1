#include "depfusion/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "depfusion/errors.hpp"
#include "depfusion/nn.hpp"

namespace depfusion {

// ---- losses -----------------------------------------------------------------

double focal_loss(double p, int t, const LossConfig& cfg) {
    if (!(p > 0.0 && p < 1.0))
        throw InvalidArgument("focal_loss: p must lie in (0, 1), got " + std::to_string(p));
    if (t != 0 && t != 1) throw InvalidArgument("focal_loss: t must be 0 or 1");
    if (!(cfg.alpha_t > 0)) throw InvalidArgument("focal_loss: alpha_t must be > 0");
    if (cfg.gamma_t < 0) throw InvalidArgument("focal_loss: gamma_t must be >= 0");
    const double modulating = p * (1 - t) + t * (1 - p);
    const double p_t = (t == 1) ? p : 1.0 - p;
    return -cfg.alpha_t * std::pow(modulating, cfg.gamma_t) * std::log(p_t);
}

double smooth_l1(double y_gt, double y_pred) {
    const double d = std::abs(y_gt - y_pred);
    return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

double total_loss(double det, double reg, const LossConfig& cfg) {
    return cfg.alpha * det + cfg.beta * reg;
}

// ---- reverse-pass building blocks --------------------------------------------

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Gradients of a same-padded depthwise cross-correlation.
void dwconv_backward(const FeatureMap<double>& g, const FeatureMap<double>& input,
                     const DepthwiseKernel<double>& kernel, FeatureMap<double>* g_input,
                     DepthwiseKernel<double>* g_kernel) {
    const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(kernel.k);
    const std::ptrdiff_t pad = (K - 1) / 2;
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t bi = 0; bi < g.b; ++bi)
        for (std::size_t ci = 0; ci < g.c; ++ci)
            for (std::ptrdiff_t y = 0; y < H; ++y)
                for (std::ptrdiff_t x = 0; x < W; ++x) {
                    const double gv = g.at(bi, ci, y, x);
                    if (gv == 0.0) continue;
                    for (std::ptrdiff_t ky = 0; ky < K; ++ky) {
                        const std::ptrdiff_t sy = y + ky - pad;
                        if (sy < 0 || sy >= H) continue;
                        for (std::ptrdiff_t kx = 0; kx < K; ++kx) {
                            const std::ptrdiff_t sx = x + kx - pad;
                            if (sx < 0 || sx >= W) continue;
                            if (g_input)
                                g_input->at(bi, ci, sy, sx) += gv * kernel.at(ci, ky, kx);
                            if (g_kernel)
                                g_kernel->at(ci, ky, kx) += gv * input.at(bi, ci, sy, sx);
                        }
                    }
                }
}

struct AffineTape {
    FeatureMap<double> input;
    FeatureMap<double> pre;  // pre-activation
};

FeatureMap<double> affine_forward_tape(const PointwiseAffine& p, const FeatureMap<double>& x,
                                       AffineTape& tape) {
    tape.input = x;
    const std::size_t C = p.channels;
    FeatureMap<double> pre(x.b, x.c, x.h, x.w);
    FeatureMap<double> out(x.b, x.c, x.h, x.w);
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t y = 0; y < x.h; ++y)
            for (std::size_t xx = 0; xx < x.w; ++xx)
                for (std::size_t co = 0; co < C; ++co) {
                    double acc = p.bias[co];
                    for (std::size_t ci = 0; ci < C; ++ci)
                        acc += p.weight[co * C + ci] * x.at(bi, ci, y, xx);
                    pre.at(bi, co, y, xx) = acc;
                    out.at(bi, co, y, xx) = p.use_silu ? silu(acc) : acc;
                }
    tape.pre = pre;
    return out;
}

struct AffineGrads {
    std::vector<double> weight, bias;
};

FeatureMap<double> affine_backward(const PointwiseAffine& p, const AffineTape& tape,
                                   const FeatureMap<double>& g, AffineGrads& grads) {
    const std::size_t C = p.channels;
    if (grads.weight.empty()) {
        grads.weight.assign(C * C, 0.0);
        grads.bias.assign(C, 0.0);
    }
    FeatureMap<double> gx(g.b, g.c, g.h, g.w, 0.0);
    for (std::size_t bi = 0; bi < g.b; ++bi)
        for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t xx = 0; xx < g.w; ++xx)
                for (std::size_t co = 0; co < C; ++co) {
                    double gpre = g.at(bi, co, y, xx);
                    if (p.use_silu) gpre *= silu_grad(tape.pre.at(bi, co, y, xx));
                    grads.bias[co] += gpre;
                    for (std::size_t ci = 0; ci < C; ++ci) {
                        grads.weight[co * C + ci] += gpre * tape.input.at(bi, ci, y, xx);
                        gx.at(bi, ci, y, xx) += gpre * p.weight[co * C + ci];
                    }
                }
    return gx;
}

struct LayerNormGrads {
    std::vector<double> gain, bias;
};

// Backward of channel-wise normalization at each position; recomputes the
// per-position statistics from the cached input.
FeatureMap<double> layernorm_backward(const LayerNorm& n, const FeatureMap<double>& input,
                                      const FeatureMap<double>& g, LayerNormGrads& grads) {
    if (!n.enabled) return g;
    const std::size_t C = n.channels;
    if (grads.gain.empty()) {
        grads.gain.assign(C, 0.0);
        grads.bias.assign(C, 0.0);
    }
    FeatureMap<double> gx(g.b, g.c, g.h, g.w, 0.0);
    const double invc = 1.0 / static_cast<double>(C);
    std::vector<double> xhat(C), ghat(C);
    for (std::size_t bi = 0; bi < g.b; ++bi)
        for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t xx = 0; xx < g.w; ++xx) {
                double mean = 0;
                for (std::size_t c = 0; c < C; ++c) mean += input.at(bi, c, y, xx);
                mean *= invc;
                double var = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = input.at(bi, c, y, xx) - mean;
                    var += d * d;
                }
                var *= invc;
                const double inv_std = 1.0 / std::sqrt(var + n.eps);
                double mean_ghat = 0, mean_ghat_xhat = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    xhat[c] = (input.at(bi, c, y, xx) - mean) * inv_std;
                    const double gc = g.at(bi, c, y, xx);
                    grads.gain[c] += gc * xhat[c];
                    grads.bias[c] += gc;
                    ghat[c] = gc * n.gain[c];
                    mean_ghat += ghat[c];
                    mean_ghat_xhat += ghat[c] * xhat[c];
                }
                mean_ghat *= invc;
                mean_ghat_xhat *= invc;
                for (std::size_t c = 0; c < C; ++c)
                    gx.at(bi, c, y, xx) =
                        inv_std * (ghat[c] - mean_ghat - xhat[c] * mean_ghat_xhat);
            }
    return gx;
}

struct PsnTape {
    std::array<FeatureMap<double>, 3> conv_inputs;
    std::array<FeatureMap<double>, 3> conv_pre;  // pre-SiLU conv outputs
    FeatureMap<double> ln_input;
    AffineTape linear;
};

FeatureMap<double> psn_forward_tape(const PsnParams& p, const FeatureMap<double>& x,
                                    PsnTape& tape) {
    FeatureMap<double> v = x;
    for (std::size_t s = 0; s < 3; ++s) {
        tape.conv_inputs[s] = v;
        v = depthwise_conv(v, p.convs[s]);
        tape.conv_pre[s] = v;
        if (p.silu_enabled)
            for (auto& e : v.data) e = silu(e);
    }
    tape.ln_input = v;
    v = apply(p.norm, v);
    return affine_forward_tape(p.linear, v, tape.linear);
}

struct PsnGrads {
    std::array<DepthwiseKernel<double>, 3> convs;
    LayerNormGrads norm;
    AffineGrads linear;

    void init(const PsnParams& p) {
        for (std::size_t s = 0; s < 3; ++s)
            convs[s] = DepthwiseKernel<double>(p.convs[s].channels, p.convs[s].k, 0.0);
    }
    void accumulate_scaled(const PsnGrads& other, double factor) {
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < convs[s].data.size(); ++i)
                convs[s].data[i] += factor * other.convs[s].data[i];
        auto axpy = [factor](std::vector<double>& dst, const std::vector<double>& src) {
            if (dst.empty()) dst.assign(src.size(), 0.0);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += factor * src[i];
        };
        axpy(norm.gain, other.norm.gain);
        axpy(norm.bias, other.norm.bias);
        axpy(linear.weight, other.linear.weight);
        axpy(linear.bias, other.linear.bias);
    }
};

FeatureMap<double> psn_backward(const PsnParams& p, const PsnTape& tape,
                                const FeatureMap<double>& g_out, PsnGrads& grads) {
    FeatureMap<double> g = affine_backward(p.linear, tape.linear, g_out, grads.linear);
    g = layernorm_backward(p.norm, tape.ln_input, g, grads.norm);
    for (std::size_t s = 3; s-- > 0;) {
        if (p.silu_enabled)
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] *= silu_grad(tape.conv_pre[s].data[i]);
        FeatureMap<double> gx(g.b, g.c, g.h, g.w, 0.0);
        dwconv_backward(g, tape.conv_inputs[s], p.convs[s], &gx, &grads.convs[s]);
        g = std::move(gx);
    }
    return g;
}

// ---- LTI kernel parameter gradients -------------------------------------------

struct KernelGrads {
    std::vector<double> a, b, c;
    double delta = 0.0;
};

// Chain rule through K_m = c_j a_bar^m b_bar summed over j, given dL/dK_m.
KernelGrads kernel_param_grads(const StateSpaceSystem& sys, std::span<const double> g_kernel) {
    const std::size_t n = sys.dim(), L = g_kernel.size();
    const DiscreteParams d = discretize(sys);
    KernelGrads g;
    g.a.assign(n, 0.0);
    g.b.assign(n, 0.0);
    g.c.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double aj = sys.a[j], bj = sys.b[j], cj = sys.c[j];
        const double ab = d.a_bar[j], bb = d.b_bar[j];
        double dbb_db, dbb_da, dbb_ddelta;
        if (sys.disc == Discretization::Zoh) {
            dbb_db = (ab - 1.0) / aj;
            dbb_da = bj * (sys.delta * ab * aj - ab + 1.0) / (aj * aj);
            dbb_ddelta = bj * ab;
        } else {
            dbb_db = sys.delta;
            dbb_da = 0.0;
            dbb_ddelta = bj;
        }
        double power = 1.0;  // a_bar^m
        for (std::size_t m = 0; m < L; ++m) {
            const double gm = g_kernel[m];
            const double md = static_cast<double>(m);
            g.c[j] += gm * power * bb;
            g.b[j] += gm * cj * power * dbb_db;
            g.a[j] += gm * cj * (md * sys.delta * power * bb + power * dbb_da);
            g.delta += gm * cj * (md * aj * power * bb + power * dbb_ddelta);
            power *= ab;
        }
    }
    return g;
}

// Causal convolution of C-channel tokens with a scalar kernel.
TokenSequence<double> conv_tokens(const TokenSequence<double>& s,
                                  std::span<const double> kernel) {
    TokenSequence<double> y(s.batch, s.len, s.channels);
    for (std::size_t bi = 0; bi < s.batch; ++bi)
        for (std::size_t ch = 0; ch < s.channels; ++ch)
            for (std::size_t t = 0; t < s.len; ++t) {
                double acc = 0;
                const std::size_t mmax = std::min(t + 1, kernel.size());
                for (std::size_t m = 0; m < mmax; ++m) acc += kernel[m] * s.at(bi, t - m, ch);
                y.at(bi, t, ch) = acc;
            }
    return y;
}

// With unit upstream gradients, dL/dK_m = sum over channels/positions of the
// lagged inputs and dL/dS_u = sum of kernel taps that touch position u.
void conv_tokens_backward_ones(const TokenSequence<double>& s, std::span<const double> kernel,
                               std::vector<double>* g_kernel, TokenSequence<double>* g_s) {
    if (g_kernel) {
        g_kernel->assign(kernel.size(), 0.0);
        for (std::size_t bi = 0; bi < s.batch; ++bi)
            for (std::size_t ch = 0; ch < s.channels; ++ch)
                for (std::size_t m = 0; m < kernel.size() && m < s.len; ++m)
                    for (std::size_t t = m; t < s.len; ++t)
                        (*g_kernel)[m] += s.at(bi, t - m, ch);
    }
    if (g_s) {
        *g_s = TokenSequence<double>(s.batch, s.len, s.channels);
        for (std::size_t u = 0; u < s.len; ++u) {
            double w = 0;
            const std::size_t mmax = std::min(s.len - u, kernel.size());
            for (std::size_t m = 0; m < mmax; ++m) w += kernel[m];
            for (std::size_t bi = 0; bi < s.batch; ++bi)
                for (std::size_t ch = 0; ch < s.channels; ++ch) g_s->at(bi, u, ch) = w;
        }
    }
}

// ---- selective scan BPTT ------------------------------------------------------

struct SelectiveTape {
    std::size_t T = 0, n = 0, C = 0;
    std::vector<double> z, delta;          // T
    std::vector<double> B, C_t, a_bar, b_bar;  // T x n
    std::vector<double> h;                 // T x C x n
    const TokenSequence<double>* seq = nullptr;
    std::size_t batch_index = 0;
};

double selective_forward_tape(const SelectiveProjection& p, const TokenSequence<double>& seq,
                              std::size_t bi, SelectiveTape& tape) {
    const std::size_t T = seq.len, n = p.state_dim, C = p.channels;
    tape.T = T;
    tape.n = n;
    tape.C = C;
    tape.seq = &seq;
    tape.batch_index = bi;
    tape.z.resize(T);
    tape.delta.resize(T);
    tape.B.resize(T * n);
    tape.C_t.resize(T * n);
    tape.a_bar.resize(T * n);
    tape.b_bar.resize(T * n);
    tape.h.assign(T * C * n, 0.0);
    double loss = 0.0;
    std::vector<double> h(C * n, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* x_t = seq.data.data() + (bi * T + t) * C;
        double z = p.b_delta;
        for (std::size_t ch = 0; ch < C; ++ch) z += p.w_delta[ch] * x_t[ch];
        tape.z[t] = z;
        const double dt = softplus(z);
        tape.delta[t] = dt;
        for (std::size_t j = 0; j < n; ++j) {
            double bj = p.b_b[j], cj = p.b_c[j];
            for (std::size_t ch = 0; ch < C; ++ch) {
                bj += p.w_b[j * C + ch] * x_t[ch];
                cj += p.w_c[j * C + ch] * x_t[ch];
            }
            tape.B[t * n + j] = bj;
            tape.C_t[t * n + j] = cj;
            const double ab = std::exp(dt * p.a[j]);
            tape.a_bar[t * n + j] = ab;
            tape.b_bar[t * n + j] =
                p.disc == Discretization::Zoh ? (ab - 1.0) / p.a[j] * bj : dt * bj;
        }
        for (std::size_t ch = 0; ch < C; ++ch) {
            double y = p.out_bias + p.skip_gain * x_t[ch];
            for (std::size_t j = 0; j < n; ++j) {
                double& hj = h[ch * n + j];
                hj = tape.a_bar[t * n + j] * hj + tape.b_bar[t * n + j] * x_t[ch];
                y += tape.C_t[t * n + j] * hj;
            }
            loss += y;
        }
        std::copy(h.begin(), h.end(), tape.h.begin() + t * C * n);
    }
    return loss;
}

struct SelectiveGrads {
    std::vector<double> a, w_delta, w_b, b_b, w_c, b_c;
    double b_delta = 0, skip_gain = 0, out_bias = 0;

    void init(const SelectiveProjection& p) {
        a.assign(p.state_dim, 0.0);
        w_delta.assign(p.channels, 0.0);
        w_b.assign(p.state_dim * p.channels, 0.0);
        b_b.assign(p.state_dim, 0.0);
        w_c.assign(p.state_dim * p.channels, 0.0);
        b_c.assign(p.state_dim, 0.0);
    }
};

// Reverse sweep of the recurrence with unit upstream gradients on every
// output. Diagonal A keeps every (channel, component) lane independent.
void selective_backward(const SelectiveProjection& p, const SelectiveTape& tape,
                        SelectiveGrads& g) {
    const std::size_t T = tape.T, n = tape.n, C = tape.C;
    const auto& seq = *tape.seq;
    std::vector<double> gh(C * n, 0.0);
    for (std::size_t t = T; t-- > 0;) {
        const double* x_t = seq.data.data() + (tape.batch_index * T + t) * C;
        const double* h_t = tape.h.data() + t * C * n;
        const double* h_prev = t > 0 ? tape.h.data() + (t - 1) * C * n : nullptr;
        double g_delta = 0.0;
        for (std::size_t ch = 0; ch < C; ++ch) {
            g.skip_gain += x_t[ch];
            g.out_bias += 1.0;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double ab = tape.a_bar[t * n + j];
            const double bj = tape.B[t * n + j];
            const double dt = tape.delta[t];
            double gC = 0.0, g_ab = 0.0, g_bb = 0.0;
            for (std::size_t ch = 0; ch < C; ++ch) {
                const double ghj = gh[ch * n + j] + tape.C_t[t * n + j];  // readout + future
                gC += h_t[ch * n + j];
                const double hp = h_prev ? h_prev[ch * n + j] : 0.0;
                g_ab += ghj * hp;
                g_bb += ghj * x_t[ch];
                gh[ch * n + j] = ghj * ab;  // becomes grad of h_{t-1}
            }
            double dbb_dB, dbb_ddelta, dbb_da;
            if (p.disc == Discretization::Zoh) {
                dbb_dB = (ab - 1.0) / p.a[j];
                dbb_ddelta = bj * ab;
                dbb_da = bj * (dt * ab * p.a[j] - ab + 1.0) / (p.a[j] * p.a[j]);
            } else {
                dbb_dB = dt;
                dbb_ddelta = bj;
                dbb_da = 0.0;
            }
            const double gB = g_bb * dbb_dB;
            g_delta += g_ab * p.a[j] * ab + g_bb * dbb_ddelta;
            g.a[j] += g_ab * dt * ab + g_bb * dbb_da;
            g.b_b[j] += gB;
            g.b_c[j] += gC;
            for (std::size_t ch = 0; ch < C; ++ch) {
                g.w_b[j * C + ch] += gB * x_t[ch];
                g.w_c[j * C + ch] += gC * x_t[ch];
            }
        }
        const double gz = g_delta * sigmoid(tape.z[t]);
        g.b_delta += gz;
        for (std::size_t ch = 0; ch < C; ++ch) g.w_delta[ch] += gz * x_t[ch];
    }
}

// ---- finite-difference harness -------------------------------------------------

struct GroupRef {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

GradientGroupResult fd_check_group(const GroupRef& group, std::span<const double> analytic,
                                   const std::function<double()>& loss, double h, Prng& rng) {
    GradientGroupResult result;
    result.group = group.name;
    std::vector<std::size_t> coords(group.size);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (group.size > 32) {
        for (std::size_t k = group.size; k-- > 1;)
            std::swap(coords[k], coords[rng.next_u64() % (k + 1)]);
        coords.resize(32);
    }
    for (std::size_t idx : coords) {
        const std::string path = group.name + "[" + std::to_string(idx) + "]";
        if (!std::isfinite(analytic[idx]))
            throw NumericalError("non-finite analytic gradient at " + path);
        const double saved = group.data[idx];
        group.data[idx] = saved + h;
        const double lp = loss();
        group.data[idx] = saved - h;
        const double lm = loss();
        group.data[idx] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        if (!std::isfinite(fd)) throw NumericalError("non-finite finite difference at " + path);
        const double denom = std::max({std::abs(analytic[idx]), std::abs(fd), 1e-8});
        const double rel = std::abs(analytic[idx] - fd) / denom;
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_coordinate = path;
        }
        ++result.coords_checked;
    }
    return result;
}

// ---- model: LTI kernel ---------------------------------------------------------

void check_lti_kernel(GradientReport& report, std::uint64_t seed, double h) {
    for (auto disc : {Discretization::Zoh, Discretization::EulerB}) {
        const std::string prefix = std::string(to_string(disc)) + ".";
        Prng prng(seed ^ (disc == Discretization::Zoh ? 0x11 : 0x22));
        StateSpaceSystem sys = StateSpaceSystem::random(prng, 4, disc);
        const std::size_t T = 16;
        std::vector<double> x(T);
        for (auto& v : x) v = prng.uniform(-1, 1);

        auto loss = [&]() {
            const auto kernel = conv_kernel(sys, T);
            const auto y = apply_kernel(x, kernel);
            return std::accumulate(y.begin(), y.end(), 0.0);
        };
        // dL/dK_m with unit output gradients is the lag-m input sum.
        std::vector<double> g_kernel(T, 0.0);
        for (std::size_t m = 0; m < T; ++m)
            for (std::size_t t = m; t < T; ++t) g_kernel[m] += x[t - m];
        const KernelGrads grads = kernel_param_grads(sys, g_kernel);

        Prng coord_rng(seed ^ 0xc0);
        std::vector<std::pair<GroupRef, std::span<const double>>> checks = {
            {{prefix + "a", sys.a.data(), sys.a.size()}, grads.a},
            {{prefix + "b", sys.b.data(), sys.b.size()}, grads.b},
            {{prefix + "c", sys.c.data(), sys.c.size()}, grads.c},
            {{prefix + "delta", &sys.delta, 1}, std::span<const double>(&grads.delta, 1)},
        };
        for (auto& [group, analytic] : checks)
            report.groups.push_back(fd_check_group(group, analytic, loss, h, coord_rng));
    }
}

// ---- model: standalone PSN -----------------------------------------------------

std::vector<std::pair<GroupRef, std::span<const double>>> psn_group_refs(
    PsnParams& params, const PsnGrads& grads, const std::string& prefix) {
    std::vector<std::pair<GroupRef, std::span<const double>>> checks;
    for (std::size_t s = 0; s < 3; ++s)
        checks.push_back({{prefix + "conv" + std::to_string(s), params.convs[s].data.data(),
                           params.convs[s].data.size()},
                          grads.convs[s].data});
    if (params.norm.enabled) {
        checks.push_back(
            {{prefix + "ln_gain", params.norm.gain.data(), params.norm.gain.size()},
             grads.norm.gain});
        checks.push_back(
            {{prefix + "ln_bias", params.norm.bias.data(), params.norm.bias.size()},
             grads.norm.bias});
    }
    checks.push_back(
        {{prefix + "linear_w", params.linear.weight.data(), params.linear.weight.size()},
         grads.linear.weight});
    checks.push_back(
        {{prefix + "linear_b", params.linear.bias.data(), params.linear.bias.size()},
         grads.linear.bias});
    return checks;
}

void check_psn(GradientReport& report, std::uint64_t seed, double h) {
    Prng prng(seed);
    auto pp = prng.fork(1);
    PsnParams params = PsnParams::random(pp, 3, 3);
    auto ip = prng.fork(2);
    const auto probe = random_map<double>(ip, 1, 3, 6, 6);

    auto loss = [&]() { return sum(psn_apply(params, probe)); };

    PsnTape tape;
    const auto out = psn_forward_tape(params, probe, tape);
    if (max_abs_diff(out, psn_apply(params, probe)) != 0.0)
        throw NumericalError("psn tape forward diverged from the production forward");
    PsnGrads grads;
    grads.init(params);
    psn_backward(params, tape, FeatureMap<double>(out.b, out.c, out.h, out.w, 1.0), grads);

    Prng coord_rng(seed ^ 0xc1);
    for (auto& [group, analytic] : psn_group_refs(params, grads, ""))
        report.groups.push_back(fd_check_group(group, analytic, loss, h, coord_rng));
}

// ---- model: PGMF path ----------------------------------------------------------

// The composition the back-propagation section models: both modalities'
// priority features (latent + shared-PSN output), serialized by priority,
// summed positionwise and pushed through an LTI kernel. Sort indices are
// constants of the backward pass.
struct PgmfPathModel {
    PointwiseAffine latent_v, latent_i;
    PsnParams psn;
    StateSpaceSystem kernel_sys;
    FeatureMap<double> f_v, f_i;
    std::size_t hw = 0;

    double forward() const {
        const auto f_vl = apply(latent_v, f_v);
        const auto f_il = apply(latent_i, f_i);
        const auto p_v = psn_apply(psn, f_vl);
        const auto p_i = psn_apply(psn, f_il);
        const auto f_vp = add(f_vl, p_v);
        const auto f_ip = add(f_il, p_i);
        const auto seq_v = priority_serialize(f_vp, priority_scores(f_vp));
        const auto seq_i = priority_serialize(f_ip, priority_scores(f_ip));
        TokenSequence<double> s(1, hw, f_v.c);
        for (std::size_t k = 0; k < hw; ++k)
            for (std::size_t ch = 0; ch < f_v.c; ++ch)
                s.at(0, k, ch) = seq_v.tokens.at(0, k, ch) + seq_i.tokens.at(0, k, ch);
        const auto kernel = conv_kernel(kernel_sys, hw);
        const auto y = conv_tokens(s, kernel);
        return std::accumulate(y.data.begin(), y.data.end(), 0.0);
    }

    struct Grads {
        AffineGrads latent_v, latent_i;
        PsnGrads psn;
        KernelGrads kernel;
    };

    // include_ir = false detaches the IR branch: its PSN and latent
    // contributions are treated as constants (the factor-2 probe).
    Grads backward(bool include_ir = true) const {
        AffineTape tape_v, tape_i;
        const auto f_vl = affine_forward_tape(latent_v, f_v, tape_v);
        const auto f_il = affine_forward_tape(latent_i, f_i, tape_i);
        PsnTape psn_tape_v, psn_tape_i;
        const auto p_v = psn_forward_tape(psn, f_vl, psn_tape_v);
        const auto p_i = psn_forward_tape(psn, f_il, psn_tape_i);
        const auto f_vp = add(f_vl, p_v);
        const auto f_ip = add(f_il, p_i);
        const auto scores_v = priority_scores(f_vp);
        const auto scores_i = priority_scores(f_ip);
        const auto seq_v = priority_serialize(f_vp, scores_v);
        const auto seq_i = priority_serialize(f_ip, scores_i);
        TokenSequence<double> s(1, hw, f_v.c);
        for (std::size_t k = 0; k < hw; ++k)
            for (std::size_t ch = 0; ch < f_v.c; ++ch)
                s.at(0, k, ch) = seq_v.tokens.at(0, k, ch) + seq_i.tokens.at(0, k, ch);
        const auto kernel = conv_kernel(kernel_sys, hw);

        Grads g;
        g.psn.init(psn);
        std::vector<double> g_kernel;
        TokenSequence<double> g_s;
        conv_tokens_backward_ones(s, kernel, &g_kernel, &g_s);
        g.kernel = kernel_param_grads(kernel_sys, g_kernel);

        // Scatter sequence gradients back to spatial maps through each
        // modality's permutation.
        auto scatter = [&](const std::vector<std::uint32_t>& perm) {
            FeatureMap<double> gm(1, f_v.c, f_v.h, f_v.w, 0.0);
            for (std::size_t k = 0; k < hw; ++k) {
                const std::size_t pos = perm[k];
                const std::size_t y = pos / f_v.w, x = pos % f_v.w;
                for (std::size_t ch = 0; ch < f_v.c; ++ch)
                    gm.at(0, ch, y, x) += g_s.at(0, k, ch);
            }
            return gm;
        };
        const auto g_fvp = scatter(seq_v.perm[0]);
        const auto g_fip = scatter(seq_i.perm[0]);

        // f_vp = f_vl + psn(f_vl): direct path plus the PSN chain.
        FeatureMap<double> g_fvl = g_fvp;
        g_fvl = add(g_fvl, psn_backward(psn, psn_tape_v, g_fvp, g.psn));
        affine_backward(latent_v, tape_v, g_fvl, g.latent_v);
        if (include_ir) {
            FeatureMap<double> g_fil = g_fip;
            g_fil = add(g_fil, psn_backward(psn, psn_tape_i, g_fip, g.psn));
            affine_backward(latent_i, tape_i, g_fil, g.latent_i);
        } else {
            g.latent_i.weight.assign(latent_i.weight.size(), 0.0);
            g.latent_i.bias.assign(latent_i.bias.size(), 0.0);
        }
        return g;
    }
};

// Probes are regenerated until every pairwise score gap clears the FD step
// by a wide margin, so no central difference can flip a permutation.
PgmfPathModel make_pgmf_path_model(std::uint64_t seed, bool symmetric) {
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        Prng prng(seed + attempt * 0x9e37ULL);
        PgmfPathModel m;
        auto lv = prng.fork(1);
        m.latent_v = PointwiseAffine::random(lv, 3, true);
        if (symmetric) {
            m.latent_i = m.latent_v;
        } else {
            auto li = prng.fork(2);
            m.latent_i = PointwiseAffine::random(li, 3, true);
        }
        auto pp = prng.fork(3);
        m.psn = PsnParams::random(pp, 3, 3);
        auto kp = prng.fork(4);
        m.kernel_sys = StateSpaceSystem::random(kp, 4, Discretization::Zoh);
        auto iv = prng.fork(5);
        m.f_v = random_map<double>(iv, 1, 3, 4, 4);
        if (symmetric) {
            m.f_i = m.f_v;
        } else {
            auto ii = prng.fork(6);
            m.f_i = random_map<double>(ii, 1, 3, 4, 4);
        }
        m.hw = m.f_v.spatial();

        const auto f_vl = apply(m.latent_v, m.f_v);
        const auto f_il = apply(m.latent_i, m.f_i);
        const auto f_vp = add(f_vl, psn_apply(m.psn, f_vl));
        const auto f_ip = add(f_il, psn_apply(m.psn, f_il));
        auto min_gap = [](const TokenSequence<double>& scores) {
            std::vector<double> v = scores.data;
            std::sort(v.begin(), v.end());
            double gap = std::numeric_limits<double>::infinity();
            for (std::size_t k = 1; k < v.size(); ++k) gap = std::min(gap, v[k] - v[k - 1]);
            return gap;
        };
        if (min_gap(priority_scores(f_vp)) > 1e-3 && min_gap(priority_scores(f_ip)) > 1e-3)
            return m;
    }
    throw NumericalError("pgmf gradient probe: could not find a tie-free score configuration");
}

void check_pgmf_path(GradientReport& report, std::uint64_t seed, double h) {
    PgmfPathModel m = make_pgmf_path_model(seed, false);
    const auto grads = m.backward(true);
    auto loss = [&]() { return m.forward(); };

    Prng coord_rng(seed ^ 0xc2);
    std::vector<std::pair<GroupRef, std::span<const double>>> checks = {
        {{"theta_v.weight", m.latent_v.weight.data(), m.latent_v.weight.size()},
         grads.latent_v.weight},
        {{"theta_v.bias", m.latent_v.bias.data(), m.latent_v.bias.size()}, grads.latent_v.bias},
        {{"theta_i.weight", m.latent_i.weight.data(), m.latent_i.weight.size()},
         grads.latent_i.weight},
        {{"theta_i.bias", m.latent_i.bias.data(), m.latent_i.bias.size()}, grads.latent_i.bias},
        {{"omega.a", m.kernel_sys.a.data(), m.kernel_sys.a.size()}, grads.kernel.a},
        {{"omega.b", m.kernel_sys.b.data(), m.kernel_sys.b.size()}, grads.kernel.b},
        {{"omega.c", m.kernel_sys.c.data(), m.kernel_sys.c.size()}, grads.kernel.c},
        {{"omega.delta", &m.kernel_sys.delta, 1}, std::span<const double>(&grads.kernel.delta, 1)},
    };
    for (auto& [group, analytic] : checks)
        report.groups.push_back(fd_check_group(group, analytic, loss, h, coord_rng));
    for (auto& [group, analytic] : psn_group_refs(m.psn, grads.psn, "theta_psn."))
        report.groups.push_back(fd_check_group(group, analytic, loss, h, coord_rng));
}

// ---- model: selective scan end to end -------------------------------------------

void check_selective(GradientReport& report, std::uint64_t seed, double h) {
    for (auto disc : {Discretization::Zoh, Discretization::EulerB}) {
        const std::string prefix = std::string(to_string(disc)) + ".";
        Prng prng(seed ^ (disc == Discretization::Zoh ? 0x31 : 0x32));
        auto pp = prng.fork(1);
        SelectiveProjection params = SelectiveProjection::random(pp, 4, 3, disc);
        TokenSequence<double> seq(1, 24, 3);
        auto ip = prng.fork(2);
        for (auto& v : seq.data) v = ip.uniform(-1, 1);

        auto loss = [&]() {
            const auto out = selective_scan_tokens(params, seq);
            return std::accumulate(out.data.begin(), out.data.end(), 0.0);
        };

        SelectiveTape tape;
        const double tape_loss = selective_forward_tape(params, seq, 0, tape);
        if (std::abs(tape_loss - loss()) > 1e-9 * std::max(1.0, std::abs(tape_loss)))
            throw NumericalError("selective tape forward diverged from the production scan");
        SelectiveGrads grads;
        grads.init(params);
        selective_backward(params, tape, grads);

        Prng coord_rng(seed ^ 0xc3);
        std::vector<std::pair<GroupRef, std::span<const double>>> checks = {
            {{prefix + "a", params.a.data(), params.a.size()}, grads.a},
            {{prefix + "w_delta", params.w_delta.data(), params.w_delta.size()}, grads.w_delta},
            {{prefix + "b_delta", &params.b_delta, 1}, std::span<const double>(&grads.b_delta, 1)},
            {{prefix + "w_b", params.w_b.data(), params.w_b.size()}, grads.w_b},
            {{prefix + "b_b", params.b_b.data(), params.b_b.size()}, grads.b_b},
            {{prefix + "w_c", params.w_c.data(), params.w_c.size()}, grads.w_c},
            {{prefix + "b_c", params.b_c.data(), params.b_c.size()}, grads.b_c},
            {{prefix + "skip_gain", &params.skip_gain, 1},
             std::span<const double>(&grads.skip_gain, 1)},
            {{prefix + "out_bias", &params.out_bias, 1},
             std::span<const double>(&grads.out_bias, 1)},
        };
        for (auto& [group, analytic] : checks)
            report.groups.push_back(fd_check_group(group, analytic, loss, h, coord_rng));
    }
}

}  // namespace

double psn_factor2_discrepancy(std::uint64_t seed) {
    PgmfPathModel m = make_pgmf_path_model(seed, true);
    const auto full = m.backward(true);
    const auto half = m.backward(false);
    PsnGrads doubled;
    doubled.init(m.psn);
    doubled.accumulate_scaled(half.psn, 2.0);
    double worst = 0.0;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < full.psn.convs[s].data.size(); ++i)
            worst = std::max(worst,
                             std::abs(full.psn.convs[s].data[i] - doubled.convs[s].data[i]));
    for (std::size_t i = 0; i < full.psn.norm.gain.size(); ++i)
        worst = std::max(worst, std::abs(full.psn.norm.gain[i] - doubled.norm.gain[i]));
    for (std::size_t i = 0; i < full.psn.norm.bias.size(); ++i)
        worst = std::max(worst, std::abs(full.psn.norm.bias[i] - doubled.norm.bias[i]));
    for (std::size_t i = 0; i < full.psn.linear.weight.size(); ++i)
        worst = std::max(worst, std::abs(full.psn.linear.weight[i] - doubled.linear.weight[i]));
    for (std::size_t i = 0; i < full.psn.linear.bias.size(); ++i)
        worst = std::max(worst, std::abs(full.psn.linear.bias[i] - doubled.linear.bias[i]));
    return worst;
}

const char* to_string(GradModel m) {
    switch (m) {
        case GradModel::LtiKernel: return "lti-ssm";
        case GradModel::Psn: return "psn";
        case GradModel::PgmfPath: return "pgmf-path";
        default: return "selective";
    }
}

double GradientReport::max_rel_err() const {
    double worst = 0.0;
    for (const auto& g : groups) worst = std::max(worst, g.max_rel_err);
    return worst;
}

std::string GradientReport::to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["h"] = h;
    j["dtype"] = dtype;
    j["max_rel_err"] = max_rel_err();
    auto arr = nlohmann::json::array();
    for (const auto& g : groups)
        arr.push_back({{"group", g.group},
                       {"coords_checked", g.coords_checked},
                       {"max_rel_err", g.max_rel_err},
                       {"worst_coordinate", g.worst_coordinate}});
    j["groups"] = arr;
    return j.dump(2);
}

GradientReport check_gradients(GradModel model, std::uint64_t seed, double h) {
    if (!(h >= 1e-7 && h <= 1e-4))
        throw InvalidArgument("check_gradients: h must lie in [1e-7, 1e-4]");
    GradientReport report;
    report.model = to_string(model);
    report.h = h;
    switch (model) {
        case GradModel::LtiKernel: check_lti_kernel(report, seed, h); break;
        case GradModel::Psn: check_psn(report, seed, h); break;
        case GradModel::PgmfPath: check_pgmf_path(report, seed, h); break;
        case GradModel::SelectiveScan: check_selective(report, seed, h); break;
    }
    return report;
}

// ---- aggregate suites -----------------------------------------------------------

std::string DecaySuiteResult::to_json() const {
    nlohmann::json j;
    j["trials"] = trials;
    j["steps"] = steps;
    j["bound_violations"] = bound_violations;
    j["constant_monotone"] = constant_monotone;
    j["max_contribution_gap100"] = max_contribution_gap100;
    auto gaps = nlohmann::json::array();
    for (const auto& [gap, m] : gap_max) gaps.push_back({{"gap", gap}, {"max_contribution", m}});
    j["gap_max"] = gaps;
    j["pass"] = pass();
    return j.dump(2);
}

DecaySuiteResult run_decay_suite(std::size_t trials, std::size_t steps, std::uint64_t seed) {
    if (trials < 1) throw InvalidArgument("run_decay_suite: trials must be >= 1");
    DecaySuiteResult result;
    result.trials = trials;
    result.steps = steps;
    std::map<std::size_t, double> gap_agg;
    Prng prng(seed);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        auto sp = prng.fork(trial * 2 + 1);
        const auto sys = SelectiveSystem::random(sp, 4, steps, Discretization::Zoh);
        std::vector<double> x(steps);
        auto xp = prng.fork(trial * 2 + 2);
        for (auto& v : x) v = xp.uniform(-1, 1);
        const auto report = verify_decay(sys, x, 1e-12);
        result.bound_violations += report.bound_violations;
        for (const auto& [gap, m] : report.gap_max)
            gap_agg[gap] = std::max(gap_agg[gap], m);
    }
    // Constant a_bar = 0.9 scalar systems with |b_bar x| <= 1: the exact-gap
    // curve must decay monotonically and the gap-100 maximum stays under
    // 0.9^100.
    for (std::size_t trial = 0; trial < 10; ++trial) {
        SelectiveSystem sys;
        sys.disc = Discretization::EulerB;
        sys.a = {-1.0};
        const double delta = -std::log(0.9);
        sys.delta.assign(steps, delta);
        sys.b.assign(steps, 1.0 / delta);  // b_bar = 1
        sys.c.assign(steps, 1.0);
        std::vector<double> x(steps);
        auto xp = prng.fork(0x9000 + trial);
        for (auto& v : x) v = xp.uniform(-1, 1);
        const auto report = verify_decay(sys, x, 1e-12);
        result.bound_violations += report.bound_violations;
        for (std::size_t g = 1; g < report.max_by_exact_gap.size(); ++g)
            if (report.max_by_exact_gap[g] > report.max_by_exact_gap[g - 1] + 1e-15)
                result.constant_monotone = false;
        for (const auto& [gap, m] : report.gap_max)
            if (gap == 100)
                result.max_contribution_gap100 = std::max(result.max_contribution_gap100, m);
    }
    result.gap_max.assign(gap_agg.begin(), gap_agg.end());
    return result;
}

ComplexityTable run_complexity_suite(const std::vector<std::size_t>& sizes,
                                     std::size_t repeats) {
    return complexity_probe(sizes, repeats);
}

}  // namespace depfusion
