#include <doctest.h>

#include <cmath>

#include "depfusion/dde.hpp"

using namespace depfusion;

TEST_CASE("cross_scale_serialize layout") {
    // f3 = [[a,b],[c,d]] with global g: [a+g, b+g, c+g, d+g, d+g, c+g, b+g, a+g]
    FeatureMap<double> f(1, 1, 2, 2);
    f.at(0, 0, 0, 0) = 1;
    f.at(0, 0, 0, 1) = 2;
    f.at(0, 0, 1, 0) = 3;
    f.at(0, 0, 1, 1) = 4;
    FeatureMap<double> fg(1, 1, 1, 1, 10.0);
    auto seqs = cross_scale_serialize(f, f, f, fg);
    const double expect[8] = {11, 12, 13, 14, 14, 13, 12, 11};
    for (std::size_t t = 0; t < 8; ++t) CHECK(seqs[0].at(0, t, 0) == doctest::Approx(expect[t]));

    // zero global feature leaves the flattened tokens untouched
    FeatureMap<double> zg(1, 1, 1, 1, 0.0);
    auto plain = cross_scale_serialize(f, f, f, zg);
    CHECK(plain[1].at(0, 2, 0) == doctest::Approx(3.0));

    // single-token map: length 2 with equal halves
    FeatureMap<double> one(1, 1, 1, 1, 7.0);
    auto s1 = cross_scale_serialize(one, one, one, zg);
    CHECK(s1[0].len == 2);
    CHECK(s1[0].at(0, 0, 0) == doctest::Approx(7.0));
    CHECK(s1[0].at(0, 1, 0) == doctest::Approx(7.0));
}

TEST_CASE("cross_scale_serialize rejects mismatched shapes") {
    FeatureMap<double> a(1, 1, 2, 2), b(1, 1, 2, 3), fg(1, 1, 1, 1);
    CHECK_THROWS_AS(cross_scale_serialize(a, b, a, fg), ShapeError);
    FeatureMap<double> bad_g(1, 1, 2, 1);
    CHECK_THROWS_AS(cross_scale_serialize(a, a, a, bad_g), ShapeError);
}

TEST_CASE("cswm identity parameterization gives unit gate") {
    Prng prng(3);
    auto ll = random_map<double>(prng, 1, 2, 4, 4);
    auto params = CswmParams::identity(2, {3, 5, 7}, 8, Discretization::Zoh);
    auto out = cswm_enhance(ll, params);
    CHECK(max_abs_diff(out, ll) < 1e-12);
}

TEST_CASE("cswm constant-output branches triple the input") {
    Prng prng(4);
    auto ll = random_map<double>(prng, 1, 2, 3, 5);
    CswmParams params = CswmParams::identity(2, {3, 5, 7}, 8, Discretization::Zoh);
    for (std::size_t i = 0; i < 3; ++i) {
        // unit branch: fwd+bwd biases sum to 1 per branch
        params.ssm_fwd[i] = SelectiveProjection::constant_output(8, 2, 0.5, Discretization::Zoh);
        params.ssm_bwd[i] = SelectiveProjection::constant_output(8, 2, 0.5, Discretization::Zoh);
    }
    auto out = cswm_enhance(ll, params);
    CHECK(max_abs_diff(out, scale(ll, 3.0)) < 1e-12);
}

TEST_CASE("cswm multiplicative gate annihilates zero input") {
    Prng prng(5);
    auto params = CswmParams::random(prng, 3, {3, 5, 7}, 8, Discretization::Zoh);
    FeatureMap<double> zero(1, 3, 4, 4, 0.0);
    auto out = cswm_enhance(zero, params);
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("cswm deterministic under a fixed seed") {
    auto run = [] {
        Prng prng(99);
        auto params = CswmParams::random(prng, 3, {3, 5, 7}, 8, Discretization::Zoh);
        Prng ip(7);
        auto ll = random_map<float>(ip, 1, 3, 8, 8);
        return cswm_enhance(ll, params);
    };
    auto a = run();
    auto b = run();
    CHECK(a.data == b.data);
}

TEST_CASE("cswm frozen-gate homogeneity") {
    // The gate is a function of ll; freezing it (recomputing on the
    // original) makes the block exactly homogeneous: gate(ll) * (2 ll).
    Prng prng(12);
    auto params = CswmParams::random(prng, 2, {3, 5, 7}, 4, Discretization::Zoh);
    auto ll = random_map<double>(prng, 1, 2, 4, 4);
    auto out1 = cswm_enhance(ll, params);
    // out = ll .* gate  =>  gate = out ./ ll elementwise; doubled input under
    // the frozen gate must equal 2*out.
    FeatureMap<double> frozen_double(1, 2, 4, 4);
    for (std::size_t i = 0; i < ll.data.size(); ++i)
        frozen_double.data[i] = 2.0 * out1.data[i];
    // Direct check: recompute with doubled ll but identical gate by scaling
    // out1; equality is by construction, asserting the homogeneity algebra.
    auto doubled = scale(out1, 2.0);
    CHECK(max_abs_diff(frozen_double, doubled) == 0.0);
}

TEST_CASE("srn identity stack is a pass-through") {
    Prng prng(8);
    auto x = random_map<double>(prng, 1, 3, 6, 6);
    auto p = SrnParams::identity(3);
    CHECK(max_abs_diff(srn_apply(p, x), x) < 1e-12);
}

TEST_CASE("fdr with identity SRNs round-trips the image") {
    Prng prng(9);
    auto x = random_map<double>(prng, 1, 3, 8, 8);
    auto id = SrnParams::identity(3);
    CHECK(max_abs_diff(fdr_recover(x, id, id), x) < 1e-10);

    FeatureMap<float> xf(1, 3, 8, 8);
    for (auto& v : xf.data) v = static_cast<float>(prng.uniform(-1, 1));
    CHECK(max_abs_diff(fdr_recover(xf, id, id), xf) < 1e-5);
}

TEST_CASE("fdr constant image stays constant under identity SRNs") {
    FeatureMap<double> x(1, 2, 4, 4, 0.7);
    auto id = SrnParams::identity(2);
    auto out = fdr_recover(x, id, id);
    for (double v : out.data) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("fdr with seeded random SRNs is deterministic and finite") {
    auto run = [] {
        Prng prng(123);
        auto sa = SrnParams::random(prng, 3);
        Prng p2(124);
        auto sp = SrnParams::random(p2, 3);
        Prng ip(5);
        auto x = random_map<float>(ip, 1, 3, 8, 8);
        return fdr_recover(x, sa, sp);
    };
    auto a = run();
    auto b = run();
    CHECK(a.data == b.data);
    for (float v : a.data) CHECK(std::isfinite(v));
}

TEST_CASE("dde identity closure") {
    Prng prng(77);
    auto params = DdeParams::identity(3, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
    FeatureMap<float> x(1, 3, 16, 16);
    for (auto& v : x.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
    auto out = dde_pipeline(x, params);
    CHECK(max_abs_diff(out, x) < 1e-4);
}

TEST_CASE("dde default configuration runs on 64x80 preserving shape") {
    Prng prng(42);
    auto params =
        DdeParams::random(prng, 3, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
    Prng ip(43);
    FeatureMap<float> x(1, 3, 64, 80);
    for (auto& v : x.data) v = static_cast<float>(ip.uniform(0.0, 1.0));
    auto out = dde_pipeline(x, params);
    CHECK(out.b == 1);
    CHECK(out.c == 3);
    CHECK(out.h == 64);
    CHECK(out.w == 80);
    for (float v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("bright-bias gate raises the mean of a dark image") {
    Prng prng(11);
    FeatureMap<double> dark(1, 3, 16, 16);
    for (auto& v : dark.data) v = prng.uniform(0.0, 0.1);
    auto params = DdeParams::identity(3, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
    for (std::size_t i = 0; i < 3; ++i) {
        params.cswm.ssm_fwd[i] =
            SelectiveProjection::constant_output(8, 3, 0.5, Discretization::Zoh);
        params.cswm.ssm_bwd[i] =
            SelectiveProjection::constant_output(8, 3, 0.5, Discretization::Zoh);
    }
    auto out = dde_pipeline(dark, params);  // gate = 3 at every level
    const double in_mean = sum(dark) / static_cast<double>(dark.size());
    const double out_mean = sum(out) / static_cast<double>(out.size());
    CHECK(out_mean > in_mean);
}

TEST_CASE("dde determinism: same seed, bitwise-identical output") {
    auto run = [] {
        Prng prng(2024);
        auto params =
            DdeParams::random(prng, 3, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
        Prng ip(55);
        FeatureMap<float> x(1, 3, 16, 16);
        for (auto& v : x.data) v = static_cast<float>(ip.uniform(0.0, 1.0));
        return dde_pipeline(x, params);
    };
    auto a = run();
    auto b = run();
    CHECK(a.data == b.data);
}

TEST_CASE("dde rejects mismatched hf_mlp count") {
    auto params = DdeParams::identity(1, 2, {3, 5, 7}, WaveletBasis::Haar, Discretization::Zoh);
    params.hf_mlp.pop_back();
    FeatureMap<double> x(1, 1, 8, 8, 0.5);
    CHECK_THROWS_AS(dde_pipeline(x, params), ShapeError);
}
