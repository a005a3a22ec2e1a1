#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "depfusion/nn.hpp"
#include "depfusion/ssm.hpp"

namespace depfusion {

// Priority Score Network: three depthwise-conv + SiLU stages, LayerNorm,
// final pointwise linear. Shape-preserving (B,C,H,W) -> (B,C,H,W).
struct PsnParams {
    std::array<DepthwiseKernel<double>, 3> convs;
    bool silu_enabled = true;
    LayerNorm norm;
    PointwiseAffine linear;

    static PsnParams random(Prng& prng, std::size_t channels, std::size_t k = 3);
    // 1x1 kernels only: every stage acts per position, making scores
    // equivariant to spatial permutations. Used by the equivariance oracle.
    static PsnParams random_pointwise(Prng& prng, std::size_t channels);
};

template <class T>
FeatureMap<T> psn_apply(const PsnParams& p, const FeatureMap<T>& x);

// Latent reflection: pointwise affine, optionally followed by SiLU. The
// identity configuration uses the plain affine (linear mode).
struct LatentParams {
    PointwiseAffine affine;

    static LatentParams identity(std::size_t channels);
    static LatentParams random(Prng& prng, std::size_t channels);
    static LatentParams zero(std::size_t channels);
};

template <class T>
FeatureMap<T> latent_project(const LatentParams& p, const FeatureMap<T>& x);

// Stable descending argsort; ties keep ascending original index. LSD radix
// sort over order-preserving 64-bit keys, O(N) in the token count.
std::vector<std::uint32_t> argsort_descending(std::span<const double> values);
extern const char* const kSortAlgorithm;

// Per-token scalar scores: channel mean at each spatial position, shape
// (B, H*W, 1).
template <class T>
TokenSequence<double> priority_scores(const FeatureMap<T>& f);

// Token sequence in descending-priority order plus the permutation that
// produced it (perm[k] = original spatial index of sorted position k) and
// the original per-token scores.
template <class T>
struct PrioritySequence {
    TokenSequence<T> tokens;
    std::vector<std::vector<std::uint32_t>> perm;  // one per batch item
    TokenSequence<double> scores;
};

template <class T>
PrioritySequence<T> priority_serialize(const FeatureMap<T>& f,
                                       const TokenSequence<double>& scores);
template <class T>
FeatureMap<T> priority_deserialize(const PrioritySequence<T>& seq, std::size_t h, std::size_t w);

// Sequence fusion layouts (Fig 9): head/tail placement of the two
// modalities' priority sequences. D is the paper's choice.
enum class FusionVariant { A, B, C, D };

FusionVariant fusion_variant_from_string(const std::string& name);
const char* to_string(FusionVariant v);

template <class T>
TokenSequence<T> build_fusion_sequence(const TokenSequence<T>& seq_v,
                                       const TokenSequence<T>& seq_i, FusionVariant variant);

struct PgmfParams {
    LatentParams latent_v, latent_i;
    PsnParams psn;  // shared between the two branches
    SelectiveProjection ssm_fwd, ssm_bwd;
    double dropout_rate = 0.0;
    std::uint64_t dropout_seed = 0;

    static PgmfParams random(Prng& prng, std::size_t channels, std::size_t state_dim = 8,
                             std::size_t psn_kernel = 3,
                             Discretization disc = Discretization::Zoh);
};

struct PgmfStats {
    std::vector<std::vector<std::uint32_t>> perm_v, perm_i;
    double score_min_v = 0, score_max_v = 0, score_mean_v = 0;
    double score_min_i = 0, score_max_i = 0, score_mean_i = 0;
    double ms_projection = 0, ms_psn = 0, ms_sort = 0, ms_ssm = 0;
    std::string sort_algorithm;
    std::string variant;
};

// Algorithm-1 fusion: latent projections, PSN of the feature difference,
// priority serialization of both modalities, variant concatenation,
// bidirectional selective scan, per-modality de-serialization and the
// residual sum F_v + F_i + F_p.
template <class T>
FeatureMap<T> pgmf_fuse(const FeatureMap<T>& f_v, const FeatureMap<T>& f_i,
                        const PgmfParams& params, FusionVariant variant,
                        PgmfStats* stats = nullptr);

// ---- complexity probe -------------------------------------------------------

struct ComplexityRow {
    std::size_t n = 0;
    double psn_ms = 0, sort_ms = 0, ssm_ms = 0;
};

struct ComplexityTable {
    std::vector<ComplexityRow> rows;
    std::string sort_algorithm;
    // One entry per consecutive row pair whose sizes double; order: psn,
    // sort, ssm.
    std::vector<std::array<double, 3>> doubling_ratios;

    std::string to_json() const;
};

// Wall-time per stage (PSN, sort+serialize, selective scan) at each token
// count. Sizes must be strictly increasing.
ComplexityTable complexity_probe(const std::vector<std::size_t>& sizes, std::size_t repeats = 5,
                                 std::size_t channels = 4, std::size_t state_dim = 8,
                                 std::uint64_t seed = 7);

}  // namespace depfusion
