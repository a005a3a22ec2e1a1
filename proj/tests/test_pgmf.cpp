#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "depfusion/pgmf.hpp"

using namespace depfusion;

TEST_CASE("latent projection identity, zero and determinism") {
    Prng prng(1);
    auto x = random_map<double>(prng, 1, 3, 4, 4);
    CHECK(max_abs_diff(latent_project(LatentParams::identity(3), x), x) == 0.0);
    auto z = latent_project(LatentParams::zero(3), x);
    for (double v : z.data) CHECK(v == 0.0);
    Prng a(9), b(9);
    auto pa = LatentParams::random(a, 3), pb = LatentParams::random(b, 3);
    CHECK(latent_project(pa, x).data == latent_project(pb, x).data);
}

TEST_CASE("priority scores: degenerate and hand-computed cases") {
    // C = 1: scores equal the feature values
    FeatureMap<double> single(1, 1, 1, 3);
    single.at(0, 0, 0, 0) = 0.4;
    single.at(0, 0, 0, 1) = -0.3;
    single.at(0, 0, 0, 2) = 0.9;
    auto s1 = priority_scores(single);
    CHECK(s1.at(0, 0, 0) == doctest::Approx(0.4));
    CHECK(s1.at(0, 1, 0) == doctest::Approx(-0.3));
    CHECK(s1.at(0, 2, 0) == doctest::Approx(0.9));

    // constant feature: all scores equal, identity permutation by ties
    FeatureMap<double> flat(1, 2, 2, 2, 1.5);
    auto sf = priority_scores(flat);
    auto seq = priority_serialize(flat, sf);
    for (std::size_t k = 0; k < 4; ++k) CHECK(seq.perm[0][k] == k);

    // 1x2x1x3 with channel pairs (1,3), (5,1), (2,2) -> scores (2,3,2), perm [1,0,2]
    FeatureMap<double> two(1, 2, 1, 3);
    two.at(0, 0, 0, 0) = 1;
    two.at(0, 1, 0, 0) = 3;
    two.at(0, 0, 0, 1) = 5;
    two.at(0, 1, 0, 1) = 1;
    two.at(0, 0, 0, 2) = 2;
    two.at(0, 1, 0, 2) = 2;
    auto st = priority_scores(two);
    CHECK(st.at(0, 0, 0) == doctest::Approx(2.0));
    CHECK(st.at(0, 1, 0) == doctest::Approx(3.0));
    CHECK(st.at(0, 2, 0) == doctest::Approx(2.0));
    auto sq = priority_serialize(two, st);
    CHECK(sq.perm[0][0] == 1);
    CHECK(sq.perm[0][1] == 0);  // tie 2 vs 2: ascending original index
    CHECK(sq.perm[0][2] == 2);
}

TEST_CASE("argsort_descending basic and stability") {
    std::vector<double> v = {0.2, 0.9, 0.5};
    auto p = argsort_descending(v);
    CHECK(p[0] == 1);
    CHECK(p[1] == 2);
    CHECK(p[2] == 0);

    std::vector<double> ties = {1.0, -2.0, 1.0, 0.0, -2.0};
    auto q = argsort_descending(ties);
    CHECK(q[0] == 0);
    CHECK(q[1] == 2);
    CHECK(q[2] == 3);
    CHECK(q[3] == 1);
    CHECK(q[4] == 4);

    // negatives, zeros and a large spread, against std::stable_sort
    Prng prng(33);
    std::vector<double> big(1000);
    for (auto& e : big) e = prng.uniform(-100, 100);
    big[10] = big[20] = big[30];
    auto r = argsort_descending(big);
    std::vector<std::uint32_t> ref(big.size());
    std::iota(ref.begin(), ref.end(), 0u);
    std::stable_sort(ref.begin(), ref.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return big[a] > big[b]; });
    CHECK(r == ref);
}

TEST_CASE("score shift invariance") {
    Prng prng(44);
    std::vector<double> v(128);
    for (auto& e : v) e = prng.uniform(-1, 1);
    auto p = argsort_descending(v);
    for (auto& e : v) e += 17.25;
    CHECK(argsort_descending(v) == p);
}

TEST_CASE("serialize/deserialize is a bitwise bijection") {
    Prng prng(55);
    for (int trial = 0; trial < 10; ++trial) {
        auto f = random_map<float>(prng, 2, 3, 5, 4);
        auto scores = priority_scores(f);
        auto seq = priority_serialize(f, scores);
        auto back = priority_deserialize(seq, f.h, f.w);
        CHECK(back.data == f.data);
        // scores along the sorted order are non-increasing
        for (std::size_t bi = 0; bi < f.b; ++bi)
            for (std::size_t k = 1; k < seq.perm[bi].size(); ++k)
                CHECK(scores.at(bi, seq.perm[bi][k], 0) <=
                      scores.at(bi, seq.perm[bi][k - 1], 0));
    }
}

TEST_CASE("deserialize rejects corrupted permutations") {
    Prng prng(66);
    auto f = random_map<double>(prng, 1, 2, 2, 2);
    auto seq = priority_serialize(f, priority_scores(f));
    seq.perm[0][0] = seq.perm[0][1];
    CHECK_THROWS_AS(priority_deserialize(seq, 2, 2), Error);
}

TEST_CASE("fusion sequence variants") {
    TokenSequence<double> v(1, 3, 1), i(1, 3, 1);
    for (std::size_t k = 0; k < 3; ++k) {
        v.at(0, k, 0) = static_cast<double>(k + 1);  // a,b,c = 1,2,3
        i.at(0, k, 0) = static_cast<double>(k + 4);  // d,e,f = 4,5,6
    }
    auto d = build_fusion_sequence(v, i, FusionVariant::D);
    const double want_d[6] = {1, 2, 3, 6, 5, 4};
    for (std::size_t k = 0; k < 6; ++k) CHECK(d.at(0, k, 0) == want_d[k]);
    auto b = build_fusion_sequence(v, i, FusionVariant::B);
    const double want_b[6] = {1, 2, 3, 4, 5, 6};
    for (std::size_t k = 0; k < 6; ++k) CHECK(b.at(0, k, 0) == want_b[k]);
    auto a = build_fusion_sequence(v, i, FusionVariant::A);
    const double want_a[6] = {3, 2, 1, 4, 5, 6};
    for (std::size_t k = 0; k < 6; ++k) CHECK(a.at(0, k, 0) == want_a[k]);
    auto c = build_fusion_sequence(v, i, FusionVariant::C);
    const double want_c[6] = {3, 2, 1, 6, 5, 4};
    for (std::size_t k = 0; k < 6; ++k) CHECK(c.at(0, k, 0) == want_c[k]);

    TokenSequence<double> shorter(1, 2, 1);
    CHECK_THROWS_AS(build_fusion_sequence(v, shorter, FusionVariant::D), ShapeError);
}

TEST_CASE("residual isolation: zero readout leaves F_v + F_i") {
    Prng prng(77);
    auto params = PgmfParams::random(prng, 3, 4);
    std::fill(params.ssm_fwd.w_c.begin(), params.ssm_fwd.w_c.end(), 0.0);
    std::fill(params.ssm_fwd.b_c.begin(), params.ssm_fwd.b_c.end(), 0.0);
    params.ssm_fwd.skip_gain = 0.0;
    params.ssm_fwd.out_bias = 0.0;
    std::fill(params.ssm_bwd.w_c.begin(), params.ssm_bwd.w_c.end(), 0.0);
    std::fill(params.ssm_bwd.b_c.begin(), params.ssm_bwd.b_c.end(), 0.0);
    params.ssm_bwd.skip_gain = 0.0;
    params.ssm_bwd.out_bias = 0.0;
    params.dropout_rate = 0.0;
    auto f_v = random_map<double>(prng, 1, 3, 4, 5);
    auto f_i = random_map<double>(prng, 1, 3, 4, 5);
    auto fused = pgmf_fuse(f_v, f_i, params, FusionVariant::D);
    CHECK(max_abs_diff(fused, add(f_v, f_i)) == 0.0);
}

TEST_CASE("identical inputs give identical permutations") {
    Prng prng(88);
    auto params = PgmfParams::random(prng, 3, 4);
    auto f = random_map<double>(prng, 2, 3, 4, 4);
    PgmfStats stats;
    pgmf_fuse(f, f, params, FusionVariant::D, &stats);
    CHECK(stats.perm_v == stats.perm_i);
}

TEST_CASE("variant D places argmax tokens at head and tail") {
    Prng prng(99);
    auto params = PgmfParams::random(prng, 2, 4);
    auto f_v = random_map<double>(prng, 1, 2, 3, 3);
    auto f_i = random_map<double>(prng, 1, 2, 3, 3);

    const auto f_vl = latent_project(params.latent_v, f_v);
    const auto f_il = latent_project(params.latent_i, f_i);
    const auto pmat = psn_apply(params.psn, sub(f_vl, f_il));
    const auto scores_v = priority_scores(add(f_vl, pmat));
    const auto scores_i = priority_scores(add(f_il, pmat));
    const auto seq_v = priority_serialize(f_vl, scores_v);
    const auto seq_i = priority_serialize(f_il, scores_i);
    auto fused = build_fusion_sequence(seq_v.tokens, seq_i.tokens, FusionVariant::D);

    const auto flat_v = flatten_spatial(f_vl);
    const auto flat_i = flatten_spatial(f_il);
    const std::size_t argmax_v = static_cast<std::size_t>(
        std::max_element(scores_v.data.begin(), scores_v.data.end()) - scores_v.data.begin());
    const std::size_t argmax_i = static_cast<std::size_t>(
        std::max_element(scores_i.data.begin(), scores_i.data.end()) - scores_i.data.begin());
    for (std::size_t ch = 0; ch < 2; ++ch) {
        CHECK(fused.at(0, 0, ch) == flat_v.at(0, argmax_v, ch));
        CHECK(fused.at(0, fused.len - 1, ch) == flat_i.at(0, argmax_i, ch));
    }
}

TEST_CASE("pgmf permutation equivariance with a pointwise PSN") {
    Prng prng(111);
    PgmfParams params;
    auto lv = prng.fork(1), li = prng.fork(2), ps = prng.fork(3), sf = prng.fork(4),
         sb = prng.fork(5);
    params.latent_v = LatentParams::random(lv, 3);
    params.latent_i = LatentParams::random(li, 3);
    params.psn = PsnParams::random_pointwise(ps, 3);
    params.ssm_fwd = SelectiveProjection::random(sf, 4, 3, Discretization::Zoh);
    params.ssm_bwd = SelectiveProjection::random(sb, 4, 3, Discretization::Zoh);
    params.dropout_rate = 0.0;

    auto f_v = random_map<double>(prng, 1, 3, 4, 4);
    auto f_i = random_map<double>(prng, 1, 3, 4, 4);

    // All scores must be distinct for argsort to be equivariant.
    auto distinct = [](const TokenSequence<double>& s) {
        std::set<double> seen(s.data.begin(), s.data.end());
        return seen.size() == s.data.size();
    };
    {
        const auto f_vl = latent_project(params.latent_v, f_v);
        const auto f_il = latent_project(params.latent_i, f_i);
        const auto pmat = psn_apply(params.psn, sub(f_vl, f_il));
        REQUIRE(distinct(priority_scores(add(f_vl, pmat))));
        REQUIRE(distinct(priority_scores(add(f_il, pmat))));
    }

    const auto base = pgmf_fuse(f_v, f_i, params, FusionVariant::D);

    //

    // Random spatial permutation applied to both inputs.
    std::vector<std::uint32_t> pi(16);
    std::iota(pi.begin(), pi.end(), 0u);
    for (std::size_t k = 15; k > 0; --k)
        std::swap(pi[k], pi[prng.next_u64() % (k + 1)]);
    auto permute = [&](const FeatureMap<double>& f) {
        auto flat = flatten_spatial(f);
        TokenSequence<double> out(flat.batch, flat.len, flat.channels);
        for (std::size_t t = 0; t < flat.len; ++t)
            for (std::size_t ch = 0; ch < flat.channels; ++ch)
                out.at(0, t, ch) = flat.at(0, pi[t], ch);
        return unflatten_spatial(out, f.h, f.w);
    };
    const auto fused_pi = pgmf_fuse(permute(f_v), permute(f_i), params, FusionVariant::D);
    CHECK(max_abs_diff(fused_pi, permute(base)) < 1e-6);
}

TEST_CASE("pgmf deterministic and finite; dropout reproducible") {
    auto run = [](double rate) {
        Prng prng(4242);
        auto params = PgmfParams::random(prng, 4, 8);
        params.dropout_rate = rate;
        params.dropout_seed = 17;
        Prng ip(9);
        auto f_v = random_map<float>(ip, 1, 4, 8, 8);
        auto f_i = random_map<float>(ip, 1, 4, 8, 8);
        return pgmf_fuse(f_v, f_i, params, FusionVariant::D);
    };
    auto a = run(0.0), b = run(0.0);
    CHECK(a.data == b.data);
    for (float v : a.data) CHECK(std::isfinite(v));
    auto c = run(0.25), d = run(0.25);
    CHECK(c.data == d.data);
    CHECK(c.data != a.data);
}

TEST_CASE("pgmf rejects shape mismatch") {
    Prng prng(7);
    auto params = PgmfParams::random(prng, 2, 4);
    FeatureMap<double> a(1, 2, 4, 4), b(1, 2, 4, 5);
    CHECK_THROWS_AS(pgmf_fuse(a, b, params, FusionVariant::D), ShapeError);
}

TEST_CASE("complexity probe shape contract") {
    auto table = complexity_probe({256}, 3, 2, 4);
    CHECK(table.rows.size() == 1);
    CHECK(table.doubling_ratios.empty());
    CHECK(table.sort_algorithm == std::string("radix64"));
    auto two = complexity_probe({256, 512}, 3, 2, 4);
    CHECK(two.rows.size() == 2);
    CHECK(two.doubling_ratios.size() == 1);
    const std::string j = two.to_json();
    CHECK(j.find("doubling_ratios") != std::string::npos);
    CHECK_THROWS_AS(complexity_probe({512, 256}, 3, 2, 4), InvalidArgument);
}
