#include "depfusion/pgmf.hpp"

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>

namespace depfusion {

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point start) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - start).count();
}

}  // namespace

PsnParams PsnParams::random(Prng& prng, std::size_t channels, std::size_t k) {
    PsnParams p;
    for (std::size_t i = 0; i < 3; ++i) {
        auto kp = prng.fork(i + 1);
        p.convs[i] = random_kernel(kp, channels, k);
    }
    auto np = prng.fork(10), lp = prng.fork(11);
    p.silu_enabled = true;
    p.norm = LayerNorm::random(np, channels);
    p.linear = PointwiseAffine::random(lp, channels, false);
    return p;
}

PsnParams PsnParams::random_pointwise(Prng& prng, std::size_t channels) {
    return random(prng, channels, 1);
}

template <class T>
FeatureMap<T> psn_apply(const PsnParams& p, const FeatureMap<T>& x) {
    FeatureMap<double> v = to_f64(x);
    for (const auto& conv : p.convs) {
        v = apply_depthwise(conv, v);
        if (p.silu_enabled)
            for (auto& e : v.data) e = silu(e);
    }
    v = apply(p.norm, v);
    v = apply(p.linear, v);
    return from_f64<T>(v);
}

LatentParams LatentParams::identity(std::size_t channels) {
    return LatentParams{PointwiseAffine::identity(channels)};
}

LatentParams LatentParams::random(Prng& prng, std::size_t channels) {
    return LatentParams{PointwiseAffine::random(prng, channels, true)};
}

LatentParams LatentParams::zero(std::size_t channels) {
    PointwiseAffine a;
    a.channels = channels;
    a.weight.assign(channels * channels, 0.0);
    a.bias.assign(channels, 0.0);
    a.use_silu = false;
    return LatentParams{a};
}

template <class T>
FeatureMap<T> latent_project(const LatentParams& p, const FeatureMap<T>& x) {
    return apply(p.affine, x);
}

const char* const kSortAlgorithm = "radix64";

std::vector<std::uint32_t> argsort_descending(std::span<const double> values) {
    const std::size_t n = values.size();
    struct KeyIdx {
        std::uint64_t key;
        std::uint32_t idx;
    };
    // Order-preserving key: flip sign bit for positives, all bits for
    // negatives, then complement so ascending radix passes sort descending.
    // Key and index move together, so every pass is a streaming read plus a
    // bucket-sequential write.
    std::vector<KeyIdx> a(n), b(n);
    std::size_t counts[8][256] = {};
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = std::bit_cast<std::uint64_t>(values[i]);
        u = (u & 0x8000000000000000ULL) ? ~u : (u | 0x8000000000000000ULL);
        u = ~u;
        a[i] = {u, static_cast<std::uint32_t>(i)};
        for (int pass = 0; pass < 8; ++pass) ++counts[pass][(u >> (pass * 8)) & 0xff];
    }
    KeyIdx* src = a.data();
    KeyIdx* dst = b.data();
    for (int pass = 0; pass < 8; ++pass) {
        auto& cnt = counts[pass];
        // A digit all n keys share sorts nothing; skip its pass.
        bool uniform = false;
        for (std::size_t d = 0; d < 256; ++d)
            if (cnt[d] == n) {
                uniform = true;
                break;
            }
        if (uniform) continue;
        const int shift = pass * 8;
        std::size_t offsets[256];
        std::size_t total = 0;
        for (std::size_t d = 0; d < 256; ++d) {
            offsets[d] = total;
            total += cnt[d];
        }
        for (std::size_t i = 0; i < n; ++i) dst[offsets[(src[i].key >> shift) & 0xff]++] = src[i];
        std::swap(src, dst);
    }
    std::vector<std::uint32_t> index(n);
    for (std::size_t i = 0; i < n; ++i) index[i] = src[i].idx;
    return index;
}

template <class T>
TokenSequence<double> priority_scores(const FeatureMap<T>& f) {
    TokenSequence<double> scores(f.b, f.spatial(), 1);
    const double invc = 1.0 / static_cast<double>(f.c);
    for (std::size_t bi = 0; bi < f.b; ++bi)
        for (std::size_t y = 0; y < f.h; ++y)
            for (std::size_t xx = 0; xx < f.w; ++xx) {
                double acc = 0;
                for (std::size_t ci = 0; ci < f.c; ++ci)
                    acc += static_cast<double>(f.at(bi, ci, y, xx));
                scores.at(bi, y * f.w + xx, 0) = acc * invc;
            }
    return scores;
}

template <class T>
PrioritySequence<T> priority_serialize(const FeatureMap<T>& f,
                                       const TokenSequence<double>& scores) {
    if (scores.batch != f.b || scores.len != f.spatial() || scores.channels != 1)
        throw ShapeError("priority_serialize: scores must be (B, H*W)");
    PrioritySequence<T> out;
    out.scores = scores;
    out.tokens = TokenSequence<T>(f.b, f.spatial(), f.c);
    out.perm.resize(f.b);
    const auto flat = flatten_spatial(f);
    for (std::size_t bi = 0; bi < f.b; ++bi) {
        std::span<const double> s(scores.data.data() + bi * scores.len, scores.len);
        out.perm[bi] = argsort_descending(s);
        const auto& perm = out.perm[bi];
        for (std::size_t k = 0; k < flat.len; ++k) {
#if defined(__GNUC__)
            // The permuted read touches one cache line per token; prefetch
            // ahead so the misses overlap.
            if (k + 16 < flat.len)
                __builtin_prefetch(&flat.data[(bi * flat.len + perm[k + 16]) * f.c]);
#endif
            const std::uint32_t src = perm[k];
            for (std::size_t ch = 0; ch < f.c; ++ch)
                out.tokens.at(bi, k, ch) = flat.at(bi, src, ch);
        }
    }
    return out;
}

template <class T>
FeatureMap<T> priority_deserialize(const PrioritySequence<T>& seq, std::size_t h, std::size_t w) {
    const auto& tokens = seq.tokens;
    if (tokens.len != h * w)
        throw ShapeError("priority_deserialize: token count does not match target dims");
    TokenSequence<T> flat(tokens.batch, tokens.len, tokens.channels);
    for (std::size_t bi = 0; bi < tokens.batch; ++bi) {
        const auto& perm = seq.perm[bi];
        if (perm.size() != tokens.len)
            throw Error("priority sequence invariant violated: perm size mismatch");
        std::vector<bool> seen(tokens.len, false);
        for (std::uint32_t p : perm) {
            if (p >= tokens.len || seen[p])
                throw Error("priority sequence invariant violated: perm is not a permutation");
            seen[p] = true;
        }
        for (std::size_t k = 0; k < tokens.len; ++k)
            for (std::size_t ch = 0; ch < tokens.channels; ++ch)
                flat.at(bi, perm[k], ch) = tokens.at(bi, k, ch);
    }
    return unflatten_spatial(flat, h, w);
}

FusionVariant fusion_variant_from_string(const std::string& name) {
    if (name == "a") return FusionVariant::A;
    if (name == "b") return FusionVariant::B;
    if (name == "c") return FusionVariant::C;
    if (name == "d") return FusionVariant::D;
    throw InvalidArgument("unknown fusion variant: " + name + " (expected a|b|c|d)");
}

const char* to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::A: return "a";
        case FusionVariant::B: return "b";
        case FusionVariant::C: return "c";
        default: return "d";
    }
}

namespace {

bool first_half_reversed(FusionVariant v) {
    return v == FusionVariant::A || v == FusionVariant::C;
}
bool second_half_reversed(FusionVariant v) {
    return v == FusionVariant::C || v == FusionVariant::D;
}

}  // namespace

template <class T>
TokenSequence<T> build_fusion_sequence(const TokenSequence<T>& seq_v,
                                       const TokenSequence<T>& seq_i, FusionVariant variant) {
    if (seq_v.len != seq_i.len || seq_v.channels != seq_i.channels || seq_v.batch != seq_i.batch)
        throw ShapeError("build_fusion_sequence: sequences must match in batch/len/channels");
    const std::size_t n = seq_v.len;
    TokenSequence<T> out(seq_v.batch, 2 * n, seq_v.channels);
    const bool rv = first_half_reversed(variant), ri = second_half_reversed(variant);
    for (std::size_t bi = 0; bi < seq_v.batch; ++bi)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t ch = 0; ch < seq_v.channels; ++ch) {
                out.at(bi, k, ch) = seq_v.at(bi, rv ? n - 1 - k : k, ch);
                out.at(bi, n + k, ch) = seq_i.at(bi, ri ? n - 1 - k : k, ch);
            }
    return out;
}

PgmfParams PgmfParams::random(Prng& prng, std::size_t channels, std::size_t state_dim,
                              std::size_t psn_kernel, Discretization disc) {
    PgmfParams p;
    auto lv = prng.fork(1), li = prng.fork(1), ps = prng.fork(3), sf = prng.fork(4),
         sb = prng.fork(5);
    // Both latent reflections start from the same draw (siamese branches):
    // identical inputs then give a zero feature difference exactly.
    p.latent_v = LatentParams::random(lv, channels);
    p.latent_i = LatentParams::random(li, channels);
    p.psn = PsnParams::random(ps, channels, psn_kernel);
    p.ssm_fwd = SelectiveProjection::random(sf, state_dim, channels, disc);
    p.ssm_bwd = SelectiveProjection::random(sb, state_dim, channels, disc);
    p.dropout_rate = 0.0;
    p.dropout_seed = prng.next_u64();
    return p;
}

namespace {

struct ScoreStats {
    double min, max, mean;
};

ScoreStats summarize(const TokenSequence<double>& scores) {
    ScoreStats s{scores.data[0], scores.data[0], 0.0};
    for (double v : scores.data) {
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
        s.mean += v;
    }
    s.mean /= static_cast<double>(scores.data.size());
    return s;
}

}  // namespace

template <class T>
FeatureMap<T> pgmf_fuse(const FeatureMap<T>& f_v, const FeatureMap<T>& f_i,
                        const PgmfParams& params, FusionVariant variant, PgmfStats* stats) {
    require_same_shape(f_v, f_i, "pgmf_fuse");
    const std::size_t hw = f_v.spatial();

    auto t0 = clock_type::now();
    const FeatureMap<T> f_vl = latent_project(params.latent_v, f_v);
    const FeatureMap<T> f_il = latent_project(params.latent_i, f_i);
    const double ms_projection = ms_since(t0);

    t0 = clock_type::now();
    const FeatureMap<T> pmat = psn_apply(params.psn, sub(f_vl, f_il));
    const FeatureMap<T> f_vp = add(f_vl, pmat);
    const FeatureMap<T> f_ip = add(f_il, pmat);
    const double ms_psn = ms_since(t0);

    t0 = clock_type::now();
    const auto scores_v = priority_scores(f_vp);
    const auto scores_i = priority_scores(f_ip);
    // Tokens are gathered from the latent features; the priority features
    // only decide the order.
    const auto seq_v = priority_serialize(f_vl, scores_v);
    const auto seq_i = priority_serialize(f_il, scores_i);
    const auto fused = build_fusion_sequence(seq_v.tokens, seq_i.tokens, variant);
    const double ms_sort = ms_since(t0);

    t0 = clock_type::now();
    TokenSequence<double> fused64(fused.batch, fused.len, fused.channels);
    for (std::size_t n = 0; n < fused64.data.size(); ++n)
        fused64.data[n] = static_cast<double>(fused.data[n]);
    const auto scanned = bidirectional_scan_tokens(params.ssm_fwd, params.ssm_bwd, fused64);
    const double ms_ssm = ms_since(t0);

    // Undo each half's reversal, then de-serialize through its own
    // modality's permutation.
    PrioritySequence<T> half_v, half_i;
    half_v.perm = seq_v.perm;
    half_i.perm = seq_i.perm;
    half_v.scores = scores_v;
    half_i.scores = scores_i;
    half_v.tokens = TokenSequence<T>(fused.batch, hw, fused.channels);
    half_i.tokens = TokenSequence<T>(fused.batch, hw, fused.channels);
    const bool rv = first_half_reversed(variant), ri = second_half_reversed(variant);
    for (std::size_t bi = 0; bi < fused.batch; ++bi)
        for (std::size_t k = 0; k < hw; ++k)
            for (std::size_t ch = 0; ch < fused.channels; ++ch) {
                half_v.tokens.at(bi, k, ch) =
                    static_cast<T>(scanned.at(bi, rv ? hw - 1 - k : k, ch));
                half_i.tokens.at(bi, k, ch) =
                    static_cast<T>(scanned.at(bi, hw + (ri ? hw - 1 - k : k), ch));
            }
    FeatureMap<T> f_p = add(priority_deserialize(half_v, f_v.h, f_v.w),
                            priority_deserialize(half_i, f_v.h, f_v.w));

    if (params.dropout_rate > 0.0) {
        if (params.dropout_rate >= 1.0) throw InvalidArgument("pgmf: dropout rate must be < 1");
        Prng mask(params.dropout_seed);
        const double keep = 1.0 - params.dropout_rate;
        for (auto& v : f_p.data)
            v = mask.next_unit() < keep ? static_cast<T>(v / keep) : T(0);
    }

    if (stats) {
        stats->perm_v = seq_v.perm;
        stats->perm_i = seq_i.perm;
        const auto sv = summarize(scores_v), si = summarize(scores_i);
        stats->score_min_v = sv.min;
        stats->score_max_v = sv.max;
        stats->score_mean_v = sv.mean;
        stats->score_min_i = si.min;
        stats->score_max_i = si.max;
        stats->score_mean_i = si.mean;
        stats->ms_projection = ms_projection;
        stats->ms_psn = ms_psn;
        stats->ms_sort = ms_sort;
        stats->ms_ssm = ms_ssm;
        stats->sort_algorithm = kSortAlgorithm;
        stats->variant = to_string(variant);
    }
    return add(add(f_v, f_i), f_p);
}

std::string ComplexityTable::to_json() const {
    nlohmann::json j;
    j["sort_algorithm"] = sort_algorithm;
    auto arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back(
            {{"n", r.n}, {"psn_ms", r.psn_ms}, {"sort_ms", r.sort_ms}, {"ssm_ms", r.ssm_ms}});
    j["rows"] = arr;
    auto ratios = nlohmann::json::array();
    for (const auto& r : doubling_ratios)
        ratios.push_back({{"psn", r[0]}, {"sort", r[1]}, {"ssm", r[2]}});
    j["doubling_ratios"] = ratios;
    return j.dump(2);
}

namespace {

// One measurement cell: a stage body at one size, repeated enough times per
// sample for the clock to resolve it. Each pass yields the median over
// `repeats` back-to-back samples (cache-hot); the cell's final value is the
// best pass, which discards passes hit by scheduler interference.
struct ProbeCell {
    std::function<void()> body;
    std::size_t reps = 1;
    std::vector<double> pass_medians;

    void calibrate() {
        body();  // untimed warm pass
        for (;;) {
            const auto start = clock_type::now();
            for (std::size_t r = 0; r < reps; ++r) body();
            if (ms_since(start) >= 10.0 || reps >= (1u << 20)) break;
            reps *= 2;
        }
    }
    // pad_pages shifts every allocation the body makes, so successive passes
    // sample different heap placements; the best pass then reflects the
    // placement-independent cost (page-offset aliasing between the body's
    // buffers can otherwise double a cell's time for a whole process run).
    void run_pass(std::size_t samples, std::size_t pad_pages) {
        std::vector<char> pad(pad_pages * 4096 + 64, 1);
        std::vector<double> times(samples);
        body();
        for (auto& t : times) {
            const auto start = clock_type::now();
            for (std::size_t r = 0; r < reps; ++r) body();
            t = ms_since(start) / static_cast<double>(reps);
        }
        std::sort(times.begin(), times.end());
        pass_medians.push_back(times[times.size() / 2]);
    }
    double best() const { return *std::min_element(pass_medians.begin(), pass_medians.end()); }
};

// Spin for the given wall time so the clock governor settles before
// anything is measured.
void burn_cpu_ms(double ms) {
    volatile double sink = 0;
    const auto start = clock_type::now();
    while (ms_since(start) < ms)
        for (int i = 0; i < 4096; ++i) sink = sink + 1e-9;
    (void)sink;
}

}  // namespace

ComplexityTable complexity_probe(const std::vector<std::size_t>& sizes, std::size_t repeats,
                                 std::size_t channels, std::size_t state_dim,
                                 std::uint64_t seed) {
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        if (sizes[i] >= sizes[i + 1])
            throw InvalidArgument("complexity_probe: sizes must be strictly increasing");
#ifdef __GLIBC__
    // Serve the stages' large temporaries from the retained heap arena.
    // Left to its own devices glibc flips multi-hundred-KB blocks between
    // heap and fresh mmap depending on free() history; the mmap mode pays
    // page zeroing on every call and the flip doubles a stage's wall time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    ComplexityTable table;
    table.sort_algorithm = kSortAlgorithm;
    Prng prng(seed);
    auto pp = prng.fork(1);
    const PsnParams psn = PsnParams::random(pp, channels);
    auto sp = prng.fork(2);
    const SelectiveProjection ssm =
        SelectiveProjection::random(sp, state_dim, channels, Discretization::Zoh);
    // One size at a time so only that size's working set is live.
    burn_cpu_ms(300.0);
    const std::size_t samples = std::max<std::size_t>(repeats, 3);
    constexpr std::size_t kPasses = 6;
    for (std::size_t n : sizes) {
        // Factor n into the most square H x W its divisors allow.
        std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
        while (h > 1 && n % h != 0) --h;
        auto ip = prng.fork(1000 + n);
        const auto x = random_map<double>(ip, 1, channels, h, n / h);
        const auto seq = flatten_spatial(x);
        std::array<ProbeCell, 3> cells;
        cells[0].body = [&psn, &x] { psn_apply(psn, x); };
        cells[1].body = [&x] { priority_serialize(x, priority_scores(x)); };
        cells[2].body = [&ssm, &seq] { selective_scan_tokens(ssm, seq); };
        for (auto& cell : cells) cell.calibrate();
        for (std::size_t pass = 0; pass < kPasses; ++pass)
            for (auto& cell : cells) cell.run_pass(samples, pass * 3);
        ComplexityRow row;
        row.n = n;
        row.psn_ms = cells[0].best();
        row.sort_ms = cells[1].best();
        row.ssm_ms = cells[2].best();
        table.rows.push_back(row);
    }
    for (std::size_t i = 0; i + 1 < table.rows.size(); ++i)
        if (table.rows[i + 1].n == 2 * table.rows[i].n)
            table.doubling_ratios.push_back(
                {table.rows[i + 1].psn_ms / table.rows[i].psn_ms,
                 table.rows[i + 1].sort_ms / table.rows[i].sort_ms,
                 table.rows[i + 1].ssm_ms / table.rows[i].ssm_ms});
    return table;
}

template FeatureMap<float> psn_apply(const PsnParams&, const FeatureMap<float>&);
template FeatureMap<double> psn_apply(const PsnParams&, const FeatureMap<double>&);
template FeatureMap<float> latent_project(const LatentParams&, const FeatureMap<float>&);
template FeatureMap<double> latent_project(const LatentParams&, const FeatureMap<double>&);
template TokenSequence<double> priority_scores(const FeatureMap<float>&);
template TokenSequence<double> priority_scores(const FeatureMap<double>&);
template struct PrioritySequence<float>;
template struct PrioritySequence<double>;
template PrioritySequence<float> priority_serialize(const FeatureMap<float>&,
                                                    const TokenSequence<double>&);
template PrioritySequence<double> priority_serialize(const FeatureMap<double>&,
                                                     const TokenSequence<double>&);
template FeatureMap<float> priority_deserialize(const PrioritySequence<float>&, std::size_t,
                                                std::size_t);
template FeatureMap<double> priority_deserialize(const PrioritySequence<double>&, std::size_t,
                                                 std::size_t);
template TokenSequence<float> build_fusion_sequence(const TokenSequence<float>&,
                                                    const TokenSequence<float>&, FusionVariant);
template TokenSequence<double> build_fusion_sequence(const TokenSequence<double>&,
                                                     const TokenSequence<double>&, FusionVariant);
template FeatureMap<float> pgmf_fuse(const FeatureMap<float>&, const FeatureMap<float>&,
                                     const PgmfParams&, FusionVariant, PgmfStats*);
template FeatureMap<double> pgmf_fuse(const FeatureMap<double>&, const FeatureMap<double>&,
                                      const PgmfParams&, FusionVariant, PgmfStats*);

}  // namespace depfusion
