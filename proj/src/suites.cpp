#include "depfusion/suites.hpp"

#include <json.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "depfusion/config.hpp"
#include "depfusion/dde.hpp"
#include "depfusion/pgmf.hpp"
#include "depfusion/spectral.hpp"
#include "depfusion/ssm.hpp"
#include "depfusion/verify.hpp"
#include "depfusion/wavelet.hpp"

namespace depfusion {

namespace {

void add(SuiteReport& report, const std::string& name, double tolerance, double observed,
         bool leq = true) {
    CheckResult r;
    r.name = name;
    r.tolerance = tolerance;
    r.observed = observed;
    r.pass = leq ? observed <= tolerance : observed >= tolerance;
    report.checks.push_back(r);
}

// Direct double-sum DFT used as the verification reference for one 8x8 map.
double dft_oracle_error(const FeatureMap<double>& x) {
    const double tau = 2.0 * std::numbers::pi;
    const auto s = fft2_decompose(x);
    double worst = 0.0;
    for (std::size_t u = 0; u < x.h; ++u)
        for (std::size_t v = 0; v < x.w; ++v) {
            std::complex<double> acc(0, 0);
            for (std::size_t y = 0; y < x.h; ++y)
                for (std::size_t xx = 0; xx < x.w; ++xx) {
                    const double ang = -tau * (static_cast<double>(u * y) / x.h +
                                               static_cast<double>(v * xx) / x.w);
                    acc += x.at(0, 0, y, xx) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            worst = std::max(worst, std::abs(std::abs(acc) - s.amplitude.at(0, 0, u, v)));
        }
    return worst;
}

void suite_reconstruction(SuiteReport& report, std::uint64_t seed) {
    Prng prng(seed);

    double worst32 = 0.0, worst64 = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 1 + prng.next_u64() % 3;
        const std::size_t h = 8 + prng.next_u64() % 57;  // up to 64
        const std::size_t w = 8 + prng.next_u64() % 57;
        const std::size_t levels = 1 + prng.next_u64() % 3;
        const auto basis = (trial % 2 == 0) ? WaveletBasis::Haar : WaveletBasis::Sym2;
        auto x64 = random_map<double>(prng, 1, c, h, w);
        FeatureMap<float> x32(1, c, h, w);
        for (std::size_t i = 0; i < x32.data.size(); ++i)
            x32.data[i] = static_cast<float>(x64.data[i]);
        worst64 = std::max(worst64, max_abs_diff(idwt2(dwt2(x64, levels, basis)), x64));
        worst32 = std::max(worst32, max_abs_diff(idwt2(dwt2(x32, levels, basis)), x32));
    }
    add(report, "wavelet.perfect_reconstruction.f32", 1e-5, worst32);
    add(report, "wavelet.perfect_reconstruction.f64", 1e-10, worst64);

    double parseval = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_map<double>(prng, 1, 2, 16, 16);
        auto p = dwt2(x, 2, WaveletBasis::Haar);
        double in = 0, out = 0;
        for (double v : x.data) in += v * v;
        for (double v : p.ll.data) out += v * v;
        for (const auto& d : p.details) {
            for (double v : d.hl.data) out += v * v;
            for (double v : d.lh.data) out += v * v;
            for (double v : d.hh.data) out += v * v;
        }
        parseval = std::max(parseval, std::abs(in - out) / in);
    }
    add(report, "wavelet.parseval.haar", 1e-5, parseval);

    {
        auto x = random_map<double>(prng, 1, 1, 8, 8);
        auto y = random_map<double>(prng, 1, 1, 8, 8);
        auto pl = dwt2(add(scale(x, 2.0), scale(y, -0.5)), 2, WaveletBasis::Haar);
        auto px = dwt2(x, 2, WaveletBasis::Haar);
        auto py = dwt2(y, 2, WaveletBasis::Haar);
        add(report, "wavelet.linearity", 1e-10,
            max_abs_diff(pl.ll, add(scale(px.ll, 2.0), scale(py.ll, -0.5))));
    }

    double fft32 = 0.0, fft64 = 0.0, fft_parseval = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 4 + prng.next_u64() % 29;
        const std::size_t w = 4 + prng.next_u64() % 29;
        auto x64 = random_map<double>(prng, 1, 2, h, w);
        FeatureMap<float> x32(1, 2, h, w);
        for (std::size_t i = 0; i < x32.data.size(); ++i)
            x32.data[i] = static_cast<float>(x64.data[i]);
        fft64 = std::max(fft64, max_abs_diff(ifft2_recompose(fft2_decompose(x64)), x64));
        fft32 = std::max(fft32, max_abs_diff(ifft2_recompose(fft2_decompose(x32)), x32));
        const auto s = fft2_decompose(x64);
        double amp2 = 0, x2 = 0;
        for (double v : s.amplitude.data) amp2 += v * v;
        for (double v : x64.data) x2 += v * v;
        const double hw = static_cast<double>(h * w);
        fft_parseval = std::max(fft_parseval, std::abs(amp2 - hw * x2) / (hw * x2));
    }
    add(report, "fft.round_trip.f32", 1e-5, fft32);
    add(report, "fft.round_trip.f64", 1e-10, fft64);
    add(report, "fft.parseval", 1e-4, fft_parseval);
    add(report, "fft.naive_dft_oracle_8x8", 1e-10,
        dft_oracle_error(random_map<double>(prng, 1, 1, 8, 8)));

    double identity_err = 0.0;
    auto id_params =
        DdeParams::identity(3, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
    for (int trial = 0; trial < 10; ++trial) {
        FeatureMap<float> img(1, 3, 16, 16);
        for (auto& v : img.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
        identity_err = std::max(identity_err, max_abs_diff(dde_pipeline(img, id_params), img));
    }
    add(report, "dde.identity_closure.f32", 1e-4, identity_err);
}

void suite_ssm(SuiteReport& report, std::uint64_t seed) {
    Prng prng(seed);

    double conv_equiv = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t T = 16 + prng.next_u64() % 113;  // up to 128
        auto sys = StateSpaceSystem::random(prng, 4 + prng.next_u64() % 5, Discretization::Zoh);
        std::vector<double> x(T);
        for (auto& v : x) v = prng.uniform(-1, 1);
        const auto yc = apply_kernel(x, conv_kernel(sys, T));
        const auto ys = scan(sys, x);
        for (std::size_t t = 0; t < T; ++t) {
            const double denom = std::max({std::abs(ys.y[t]), std::abs(yc[t]), 1e-8});
            conv_equiv = std::max(conv_equiv, std::abs(ys.y[t] - yc[t]) / denom);
        }
    }
    add(report, "ssm.conv_equivalence", 1e-9, conv_equiv);

    double decomp = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto sys = SelectiveSystem::random(prng, 4, 24, Discretization::Zoh);
        std::vector<double> x(24);
        for (auto& v : x) v = prng.uniform(-1, 1);
        const auto r = scan(sys, x, true);
        const std::size_t t = 23;
        std::vector<double> total(sys.dim(), 0.0);
        for (std::size_t i = 0; i <= t; ++i) {
            const auto v = token_contribution_vector(sys, x, i, t);
            for (std::size_t j = 0; j < v.size(); ++j) total[j] += v[j];
        }
        for (std::size_t j = 0; j < sys.dim(); ++j)
            decomp = std::max(decomp, std::abs(total[j] - r.h_all[t * sys.dim() + j]));
    }
    add(report, "ssm.contribution_decomposition", 1e-10, decomp);

    double bidir = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        auto fwd = StateSpaceSystem::random(prng, 3, Discretization::Zoh);
        auto bwd = StateSpaceSystem::random(prng, 3, Discretization::Zoh);
        std::vector<double> x(17);
        for (auto& v : x) v = prng.uniform(-1, 1);
        const auto out = bidirectional_scan(fwd, bwd, x);
        std::vector<double> xr(x.rbegin(), x.rend());
        const auto yf = scan(fwd, x);
        const auto yb = scan(bwd, xr);
        for (std::size_t t = 0; t < x.size(); ++t)
            bidir = std::max(bidir, std::abs(out[t] - (yf.y[t] + yb.y[x.size() - 1 - t])));
    }
    add(report, "ssm.bidirectional_composition", 1e-12, bidir);

    // PGMF structural invariants over 50 seeds.
    double bijection = 0.0, residual = 0.0, headtail = 0.0, symmetric = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Prng trial_rng(seed ^ (0xabc00 + s));
        auto params = PgmfParams::random(trial_rng, 3, 4);
        auto f_v = random_map<double>(trial_rng, 1, 3, 4, 5);
        auto f_i = random_map<double>(trial_rng, 1, 3, 4, 5);

        const auto scores = priority_scores(f_v);
        const auto ser = priority_serialize(f_v, scores);
        bijection = std::max(bijection, max_abs_diff(priority_deserialize(ser, 4, 5), f_v));

        auto silent = params;
        for (auto* p : {&silent.ssm_fwd, &silent.ssm_bwd}) {
            std::fill(p->w_c.begin(), p->w_c.end(), 0.0);
            std::fill(p->b_c.begin(), p->b_c.end(), 0.0);
            p->skip_gain = 0.0;
            p->out_bias = 0.0;
        }
        residual =
            std::max(residual, max_abs_diff(pgmf_fuse(f_v, f_i, silent, FusionVariant::D),
                                            add(f_v, f_i)));

        const auto f_vl = latent_project(params.latent_v, f_v);
        const auto f_il = latent_project(params.latent_i, f_i);
        const auto pmat = psn_apply(params.psn, sub(f_vl, f_il));
        const auto sv = priority_scores(add(f_vl, pmat));
        const auto si = priority_scores(add(f_il, pmat));
        const auto seq_v = priority_serialize(f_vl, sv);
        const auto seq_i = priority_serialize(f_il, si);
        const auto fused = build_fusion_sequence(seq_v.tokens, seq_i.tokens, FusionVariant::D);
        const auto flat_v = flatten_spatial(f_vl);
        const auto flat_i = flatten_spatial(f_il);
        const std::size_t amax_v = static_cast<std::size_t>(
            std::max_element(sv.data.begin(), sv.data.end()) - sv.data.begin());
        const std::size_t amax_i = static_cast<std::size_t>(
            std::max_element(si.data.begin(), si.data.end()) - si.data.begin());
        for (std::size_t ch = 0; ch < 3; ++ch) {
            headtail = std::max(headtail, std::abs(fused.at(0, 0, ch) - flat_v.at(0, amax_v, ch)));
            headtail = std::max(
                headtail, std::abs(fused.at(0, fused.len - 1, ch) - flat_i.at(0, amax_i, ch)));
        }

        PgmfStats stats;
        pgmf_fuse(f_v, f_v, params, FusionVariant::D, &stats);
        symmetric = std::max(symmetric, stats.perm_v == stats.perm_i ? 0.0 : 1.0);
    }
    add(report, "pgmf.serialization_bijection", 0.0, bijection);
    add(report, "pgmf.residual_isolation", 0.0, residual);
    add(report, "pgmf.variant_d_head_tail", 0.0, headtail);
    add(report, "pgmf.symmetric_input_permutations", 0.0, symmetric);
}

void suite_decay(SuiteReport& report, std::uint64_t seed) {
    const auto result = run_decay_suite(100, 256, seed);
    add(report, "decay.holder_bound_violations", 0.0,
        static_cast<double>(result.bound_violations));
    add(report, "decay.constant_monotone", 0.0, result.constant_monotone ? 0.0 : 1.0);
    add(report, "decay.gap100_geometric", 2.7e-5, result.max_contribution_gap100);
}

void suite_gradients(SuiteReport& report, std::uint64_t seed) {
    add(report, "grad.lti_kernel", 1e-6, check_gradients(GradModel::LtiKernel, seed).max_rel_err());
    add(report, "grad.psn", 1e-4, check_gradients(GradModel::Psn, seed).max_rel_err());
    add(report, "grad.pgmf_path", 1e-4, check_gradients(GradModel::PgmfPath, seed).max_rel_err());
    add(report, "grad.selective_scan", 1e-6,
        check_gradients(GradModel::SelectiveScan, seed).max_rel_err());
    add(report, "grad.psn_factor2", 1e-10, psn_factor2_discrepancy(seed));

    LossConfig cfg;
    cfg.gamma_t = 2.0;
    add(report, "loss.focal_reference", 1e-7,
        std::abs(focal_loss(0.9, 1, cfg) - 1.0536051565782628e-3));
    const double sl = std::abs(smooth_l1(0.0, 0.0)) + std::abs(smooth_l1(0.5, 0.0) - 0.125) +
                      std::abs(smooth_l1(1.0, 0.0) - 0.5) + std::abs(smooth_l1(2.0, 0.0) - 1.5);
    add(report, "loss.smooth_l1_values", 0.0, sl);
    LossConfig defaults;
    add(report, "loss.default_weights", 0.0,
        std::abs(defaults.alpha - 1.0) + std::abs(defaults.beta - 1.0) +
            std::abs(total_loss(0.3, 0.2, defaults) - 0.5));
}

void suite_config(SuiteReport& report) {
    RunConfig defaults;
    const bool ok = defaults.basis == WaveletBasis::Haar && defaults.levels == 2 &&
                    defaults.kernels == std::array<std::size_t, 3>{3, 5, 7} &&
                    defaults.variant == FusionVariant::D &&
                    defaults.discretization == Discretization::Zoh && defaults.dropout == 0.0;
    add(report, "config.paper_defaults", 0.0, ok ? 0.0 : 1.0);
}

}  // namespace

bool SuiteReport::pass() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string SuiteReport::to_json(const std::string& config_echo_json) const {
    nlohmann::json j;
    j["suite"] = suite;
    j["seed"] = seed;
    j["pass"] = pass();
    auto arr = nlohmann::json::array();
    for (const auto& c : checks)
        arr.push_back({{"name", c.name},
                       {"tolerance", c.tolerance},
                       {"observed", c.observed},
                       {"pass", c.pass}});
    j["checks"] = arr;
    if (!config_echo_json.empty()) j["config"] = nlohmann::json::parse(config_echo_json);
    return j.dump(2);
}

SuiteReport run_suite(const std::string& suite, std::uint64_t seed) {
    SuiteReport report;
    report.suite = suite;
    report.seed = seed;
    if (suite == "reconstruction") {
        suite_reconstruction(report, seed);
    } else if (suite == "ssm") {
        suite_ssm(report, seed);
    } else if (suite == "decay") {
        suite_decay(report, seed);
    } else if (suite == "gradients") {
        suite_gradients(report, seed);
    } else if (suite == "all") {
        suite_reconstruction(report, seed);
        suite_ssm(report, seed);
        suite_decay(report, seed);
        suite_gradients(report, seed);
        suite_config(report);
    } else {
        throw InvalidArgument("unknown suite: " + suite +
                              " (expected reconstruction|ssm|decay|gradients|all)");
    }
    return report;
}

}  // namespace depfusion
