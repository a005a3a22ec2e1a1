#include "depfusion/ssm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>

#include "depfusion/errors.hpp"

namespace depfusion {

const char* to_string(Discretization d) { return d == Discretization::Zoh ? "zoh" : "eulerb"; }

Discretization discretization_from_string(const std::string& name) {
    if (name == "zoh") return Discretization::Zoh;
    if (name == "eulerb") return Discretization::EulerB;
    throw InvalidArgument("unknown discretization: " + name);
}

double softplus(double z) {
    // log1p(exp(z)) with the large-z branch to avoid overflow.
    return z > 30.0 ? z : std::log1p(std::exp(z));
}

void StateSpaceSystem::validate() const {
    if (a.empty() || b.size() != a.size() || c.size() != a.size())
        throw InvalidArgument("state-space system: a, b, c must share dim n >= 1");
    if (!(delta > 0)) throw InvalidArgument("state-space system: delta must be > 0");
    for (double aj : a)
        if (!(aj < 0))
            throw InstabilityError("state-space system: a_j = " + std::to_string(aj) +
                                   " violates a_j < 0");
}

void SelectiveSystem::validate() const {
    const std::size_t n = a.size(), T = delta.size();
    if (n == 0) throw InvalidArgument("selective system: state dim must be >= 1");
    if (b.size() != T * n || c.size() != T * n)
        throw ShapeError("selective system: per-step b/c must be T x n");
    for (double d : delta)
        if (!(d > 0)) throw InvalidArgument("selective system: every delta_t must be > 0");
    for (double aj : a)
        if (!(aj < 0))
            throw InstabilityError("selective system: a_j = " + std::to_string(aj) +
                                   " violates a_j < 0");
}

StateSpaceSystem StateSpaceSystem::random(Prng& prng, std::size_t n, Discretization disc) {
    StateSpaceSystem sys;
    sys.disc = disc;
    sys.a.resize(n);
    sys.b.resize(n);
    sys.c.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        sys.a[j] = -prng.uniform(0.5, 1.5);
        sys.b[j] = prng.uniform(-1.0, 1.0);
        sys.c[j] = prng.uniform(-1.0, 1.0);
    }
    sys.delta = prng.uniform(0.05, 0.5);
    return sys;
}

SelectiveSystem SelectiveSystem::random(Prng& prng, std::size_t n, std::size_t steps,
                                        Discretization disc) {
    SelectiveSystem sys;
    sys.disc = disc;
    sys.a.resize(n);
    for (auto& aj : sys.a) aj = -prng.uniform(0.5, 1.5);
    sys.delta.resize(steps);
    for (auto& d : sys.delta) d = prng.uniform(0.02, 0.4);
    sys.b.resize(steps * n);
    sys.c.resize(steps * n);
    for (auto& v : sys.b) v = prng.uniform(-1.0, 1.0);
    for (auto& v : sys.c) v = prng.uniform(-1.0, 1.0);
    return sys;
}

void discretize_step(std::span<const double> a, double delta, std::span<const double> b,
                     Discretization disc, double* a_bar, double* b_bar) {
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double ab = std::exp(delta * a[j]);
        a_bar[j] = ab;
        b_bar[j] = disc == Discretization::Zoh ? (ab - 1.0) / a[j] * b[j] : delta * b[j];
    }
}

DiscreteParams discretize(const StateSpaceSystem& sys) {
    sys.validate();
    DiscreteParams d;
    d.a_bar.resize(sys.dim());
    d.b_bar.resize(sys.dim());
    discretize_step(sys.a, sys.delta, sys.b, sys.disc, d.a_bar.data(), d.b_bar.data());
    return d;
}

namespace {

ScanResult scan_impl(std::size_t n, std::span<const double> x,
                     const std::function<void(std::size_t, double*, double*)>& params_at,
                     std::span<const double> c_flat, bool per_step_c, bool keep_states) {
    const std::size_t T = x.size();
    ScanResult r;
    r.y.resize(T);
    r.h_final.assign(n, 0.0);
    if (keep_states) r.h_all.assign(T * n, 0.0);
    std::vector<double> a_bar(n), b_bar(n);
    std::vector<double>& h = r.h_final;
    for (std::size_t t = 0; t < T; ++t) {
        params_at(t, a_bar.data(), b_bar.data());
        const double* ct = per_step_c ? c_flat.data() + t * n : c_flat.data();
        double yt = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            h[j] = a_bar[j] * h[j] + b_bar[j] * x[t];
            yt += ct[j] * h[j];
        }
        r.y[t] = yt;
        if (keep_states) std::copy(h.begin(), h.end(), r.h_all.begin() + t * n);
    }
    return r;
}

}  // namespace

ScanResult scan(const StateSpaceSystem& sys, std::span<const double> x, bool keep_states) {
    const DiscreteParams d = discretize(sys);
    const std::size_t n = sys.dim();
    return scan_impl(
        n, x,
        [&](std::size_t, double* a_bar, double* b_bar) {
            std::copy(d.a_bar.begin(), d.a_bar.end(), a_bar);
            std::copy(d.b_bar.begin(), d.b_bar.end(), b_bar);
        },
        sys.c, false, keep_states);
}

ScanResult scan(const SelectiveSystem& sys, std::span<const double> x, bool keep_states) {
    sys.validate();
    if (x.size() != sys.steps())
        throw ShapeError("scan: sequence length " + std::to_string(x.size()) +
                         " does not match per-step parameters (" + std::to_string(sys.steps()) +
                         ")");
    const std::size_t n = sys.dim();
    return scan_impl(
        n, x,
        [&](std::size_t t, double* a_bar, double* b_bar) {
            discretize_step(sys.a, sys.delta[t],
                            std::span<const double>(sys.b.data() + t * n, n), sys.disc, a_bar,
                            b_bar);
        },
        sys.c, true, keep_states);
}

std::vector<double> conv_kernel(const StateSpaceSystem& sys, std::size_t len) {
    const DiscreteParams d = discretize(sys);
    std::vector<double> kernel(len, 0.0);
    std::vector<double> power(sys.dim(), 1.0);  // a_bar^m, starting at m = 0
    for (std::size_t m = 0; m < len; ++m) {
        double km = 0.0;
        for (std::size_t j = 0; j < sys.dim(); ++j) km += sys.c[j] * power[j] * d.b_bar[j];
        kernel[m] = km;
        for (std::size_t j = 0; j < sys.dim(); ++j) power[j] *= d.a_bar[j];
    }
    return kernel;
}

std::vector<double> conv_kernel(const SelectiveSystem&, std::size_t) {
    throw UnsupportedModeError(
        "conv_kernel: a time-varying (selective) recurrence has no convolution kernel");
}

std::vector<double> apply_kernel(std::span<const double> x, std::span<const double> kernel) {
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
        const std::size_t mmax = std::min(t + 1, kernel.size());
        double acc = 0.0;
        for (std::size_t m = 0; m < mmax; ++m) acc += kernel[m] * x[t - m];
        y[t] = acc;
    }
    return y;
}

std::vector<double> token_contribution_vector(const SelectiveSystem& sys,
                                              std::span<const double> x, std::size_t i,
                                              std::size_t t) {
    sys.validate();
    const std::size_t n = sys.dim();
    if (i > t || t >= x.size() || x.size() != sys.steps())
        throw InvalidArgument("token_contribution: need 0 <= i <= t < T");
    std::vector<double> a_bar(n), b_bar(n);
    discretize_step(sys.a, sys.delta[i], std::span<const double>(sys.b.data() + i * n, n),
                    sys.disc, a_bar.data(), b_bar.data());
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = b_bar[j] * x[i];
    std::vector<double> dummy_b(n);
    for (std::size_t k = i + 1; k <= t; ++k) {
        discretize_step(sys.a, sys.delta[k], std::span<const double>(sys.b.data() + k * n, n),
                        sys.disc, a_bar.data(), dummy_b.data());
        for (std::size_t j = 0; j < n; ++j) v[j] *= a_bar[j];
    }
    return v;
}

double token_contribution(const SelectiveSystem& sys, std::span<const double> x, std::size_t i,
                          std::size_t t) {
    const auto v = token_contribution_vector(sys, x, i, t);
    double norm2 = 0.0;
    for (double vj : v) norm2 += vj * vj;
    return std::sqrt(norm2);
}

DecayReport verify_decay(const SelectiveSystem& sys, std::span<const double> x, double tolerance) {
    sys.validate();
    if (x.size() != sys.steps()) throw ShapeError("verify_decay: sequence length mismatch");
    const std::size_t n = sys.dim(), T = x.size();

    // Per-step discrete parameters, checked for stability up front.
    std::vector<double> a_bar(T * n), b_bar(T * n);
    double rho_max = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        discretize_step(sys.a, sys.delta[t], std::span<const double>(sys.b.data() + t * n, n),
                        sys.disc, a_bar.data() + t * n, b_bar.data() + t * n);
        for (std::size_t j = 0; j < n; ++j) rho_max = std::max(rho_max, a_bar[t * n + j]);
    }
    if (rho_max >= 1.0)
        throw InstabilityError("verify_decay: spectral radius " + std::to_string(rho_max) +
                               " >= 1");

    DecayReport report;
    report.state_dim = n;
    report.steps = T;
    report.max_spectral_radius = rho_max;
    report.max_by_exact_gap.assign(T, 0.0);
    report.samples.reserve(T * (T + 1) / 2);

    // Sweep i upward in t: the contribution vector and the product norm can
    // both be extended one step at a time, giving all pairs in O(T^2 n).
    std::vector<double> v(n), prod(n);
    for (std::size_t i = 0; i < T; ++i) {
        double binorm2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            v[j] = b_bar[i * n + j] * x[i];
            binorm2 += v[j] * v[j];
            prod[j] = 1.0;  // empty product at t = i
        }
        const double binorm = std::sqrt(binorm2);
        for (std::size_t t = i; t < T; ++t) {
            if (t > i)
                for (std::size_t j = 0; j < n; ++j) {
                    v[j] *= a_bar[t * n + j];
                    prod[j] *= a_bar[t * n + j];
                }
            double norm2 = 0.0, prod_norm = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                norm2 += v[j] * v[j];
                prod_norm = std::max(prod_norm, std::abs(prod[j]));
            }
            DecaySample s;
            s.i = i;
            s.t = t;
            s.contribution = std::sqrt(norm2);
            s.bound = prod_norm * binorm;
            s.within = s.contribution <= s.bound + tolerance;
            if (!s.within) ++report.bound_violations;
            report.max_by_exact_gap[t - i] =
                std::max(report.max_by_exact_gap[t - i], s.contribution);
            report.samples.push_back(s);
        }
    }
    for (std::size_t gap : {std::size_t{10}, std::size_t{50}, std::size_t{100}}) {
        double m = 0.0;
        for (std::size_t g = gap; g < T; ++g) m = std::max(m, report.max_by_exact_gap[g]);
        report.gap_max.emplace_back(gap, m);
    }
    return report;
}

std::string DecayReport::to_json(bool include_samples) const {
    nlohmann::json j;
    j["system"] = {{"state_dim", state_dim},
                   {"steps", steps},
                   {"max_spectral_radius", max_spectral_radius}};
    j["bound_violations"] = bound_violations;
    j["all_within"] = all_within();
    auto gaps = nlohmann::json::array();
    for (const auto& [gap, m] : gap_max) gaps.push_back({{"gap", gap}, {"max_contribution", m}});
    j["gap_max"] = gaps;
    j["max_by_exact_gap"] = max_by_exact_gap;
    if (include_samples) {
        auto arr = nlohmann::json::array();
        for (const auto& s : samples)
            arr.push_back({{"i", s.i},
                           {"t", s.t},
                           {"contribution", s.contribution},
                           {"bound", s.bound},
                           {"within", s.within}});
        j["samples"] = arr;
    }
    return j.dump(2);
}

namespace {

template <class System>
std::vector<double> bidirectional_impl(const System& fwd, const System& bwd,
                                       std::span<const double> x) {
    std::vector<double> reversed(x.rbegin(), x.rend());
    const auto yf = scan(fwd, x);
    const auto yb = scan(bwd, reversed);
    std::vector<double> out(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) out[t] = yf.y[t] + yb.y[x.size() - 1 - t];
    return out;
}

}  // namespace

std::vector<double> bidirectional_scan(const StateSpaceSystem& fwd, const StateSpaceSystem& bwd,
                                       std::span<const double> x) {
    return bidirectional_impl(fwd, bwd, x);
}

std::vector<double> bidirectional_scan(const SelectiveSystem& fwd, const SelectiveSystem& bwd,
                                       std::span<const double> x) {
    return bidirectional_impl(fwd, bwd, x);
}

// ---- projection-parameterized form ------------------------------------------

void SelectiveProjection::validate() const {
    if (state_dim == 0 || channels == 0)
        throw InvalidArgument("selective projection: state_dim and channels must be >= 1");
    if (a.size() != state_dim || w_delta.size() != channels ||
        w_b.size() != state_dim * channels || b_b.size() != state_dim ||
        w_c.size() != state_dim * channels || b_c.size() != state_dim)
        throw ShapeError("selective projection: parameter sizes inconsistent");
    for (double aj : a)
        if (!(aj < 0)) throw InstabilityError("selective projection: a_j must be < 0");
}

SelectiveProjection SelectiveProjection::random(Prng& prng, std::size_t n, std::size_t channels,
                                                Discretization disc) {
    SelectiveProjection p;
    p.state_dim = n;
    p.channels = channels;
    p.disc = disc;
    p.a.resize(n);
    for (auto& aj : p.a) aj = -prng.uniform(0.5, 1.5);
    const double sc = init_scale(channels);
    auto draw = [&](std::size_t count) {
        std::vector<double> v(count);
        for (auto& e : v) e = prng.uniform(-sc, sc);
        return v;
    };
    p.w_delta = draw(channels);
    // softplus(-2.25) ~ 0.1: moderate default step size.
    p.b_delta = -2.25 + prng.uniform(-0.1, 0.1);
    p.w_b = draw(n * channels);
    p.b_b = draw(n);
    p.w_c = draw(n * channels);
    p.b_c = draw(n);
    p.skip_gain = prng.uniform(-sc, sc);
    p.out_bias = 0.0;
    return p;
}

SelectiveProjection SelectiveProjection::constant_output(std::size_t n, std::size_t channels,
                                                         double value, Discretization disc) {
    SelectiveProjection p;
    p.state_dim = n;
    p.channels = channels;
    p.disc = disc;
    p.a.assign(n, -1.0);
    p.w_delta.assign(channels, 0.0);
    p.b_delta = -2.25;
    p.w_b.assign(n * channels, 0.0);
    p.b_b.assign(n, 0.0);
    p.w_c.assign(n * channels, 0.0);
    p.b_c.assign(n, 0.0);
    p.skip_gain = 0.0;
    p.out_bias = value;
    return p;
}

SelectiveSystem project_sequence(const SelectiveProjection& p, const TokenSequence<double>& seq,
                                 std::size_t batch_index) {
    p.validate();
    if (seq.channels != p.channels)
        throw ShapeError("project_sequence: token channels " + std::to_string(seq.channels) +
                         " != projection channels " + std::to_string(p.channels));
    const std::size_t T = seq.len, n = p.state_dim, C = p.channels;
    SelectiveSystem sys;
    sys.a = p.a;
    sys.disc = p.disc;
    sys.delta.resize(T);
    sys.b.resize(T * n);
    sys.c.resize(T * n);
    for (std::size_t t = 0; t < T; ++t) {
        const double* x_t = seq.data.data() + (batch_index * T + t) * C;
        double z = p.b_delta;
        for (std::size_t ch = 0; ch < C; ++ch) z += p.w_delta[ch] * x_t[ch];
        sys.delta[t] = softplus(z);
        for (std::size_t j = 0; j < n; ++j) {
            double bj = p.b_b[j], cj = p.b_c[j];
            const double* wb = p.w_b.data() + j * C;
            const double* wc = p.w_c.data() + j * C;
            for (std::size_t ch = 0; ch < C; ++ch) {
                bj += wb[ch] * x_t[ch];
                cj += wc[ch] * x_t[ch];
            }
            sys.b[t * n + j] = bj;
            sys.c[t * n + j] = cj;
        }
    }
    return sys;
}

TokenSequence<double> selective_scan_tokens(const SelectiveProjection& p,
                                            const TokenSequence<double>& seq) {
    p.validate();
    if (seq.channels != p.channels)
        throw ShapeError("selective_scan_tokens: token channels " + std::to_string(seq.channels) +
                         " != projection channels " + std::to_string(p.channels));
    const std::size_t T = seq.len, n = p.state_dim, C = seq.channels;
    TokenSequence<double> out(seq.batch, T, C);
    // Per-step parameters are projected inside the loop: the working set is
    // just the token stream plus O(n) state, so long sequences stream.
    std::vector<double> h(C * n), a_bar(n), b_bar(n), b_t(n), c_t(n);
    for (std::size_t bi = 0; bi < seq.batch; ++bi) {
        std::fill(h.begin(), h.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* x_t = seq.data.data() + (bi * T + t) * C;
            double z = p.b_delta;
            for (std::size_t ch = 0; ch < C; ++ch) z += p.w_delta[ch] * x_t[ch];
            const double dt = softplus(z);
            for (std::size_t j = 0; j < n; ++j) {
                double bj = p.b_b[j], cj = p.b_c[j];
                const double* wb = p.w_b.data() + j * C;
                const double* wc = p.w_c.data() + j * C;
                for (std::size_t ch = 0; ch < C; ++ch) {
                    bj += wb[ch] * x_t[ch];
                    cj += wc[ch] * x_t[ch];
                }
                b_t[j] = bj;
                c_t[j] = cj;
            }
            discretize_step(p.a, dt, b_t, p.disc, a_bar.data(), b_bar.data());
            for (std::size_t ch = 0; ch < C; ++ch) {
                double* hc = h.data() + ch * n;
                double y = p.out_bias + p.skip_gain * x_t[ch];
                for (std::size_t j = 0; j < n; ++j) {
                    hc[j] = a_bar[j] * hc[j] + b_bar[j] * x_t[ch];
                    y += c_t[j] * hc[j];
                }
                out.at(bi, t, ch) = y;
            }
        }
    }
    return out;
}

TokenSequence<double> bidirectional_scan_tokens(const SelectiveProjection& fwd,
                                                const SelectiveProjection& bwd,
                                                const TokenSequence<double>& seq) {
    TokenSequence<double> reversed(seq.batch, seq.len, seq.channels);
    for (std::size_t bi = 0; bi < seq.batch; ++bi)
        for (std::size_t t = 0; t < seq.len; ++t)
            for (std::size_t ch = 0; ch < seq.channels; ++ch)
                reversed.at(bi, t, ch) = seq.at(bi, seq.len - 1 - t, ch);
    auto yf = selective_scan_tokens(fwd, seq);
    auto yb = selective_scan_tokens(bwd, reversed);
    for (std::size_t bi = 0; bi < seq.batch; ++bi)
        for (std::size_t t = 0; t < seq.len; ++t)
            for (std::size_t ch = 0; ch < seq.channels; ++ch)
                yf.at(bi, t, ch) += yb.at(bi, seq.len - 1 - t, ch);
    return yf;
}

}  // namespace depfusion
