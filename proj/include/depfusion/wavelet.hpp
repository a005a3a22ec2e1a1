#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "depfusion/tensor.hpp"

namespace depfusion {

enum class WaveletBasis { Haar, Sym2 };

const char* to_string(WaveletBasis basis);
WaveletBasis wavelet_basis_from_string(const std::string& name);

// One level's detail bands. HL carries horizontal detail (high-pass along x,
// low-pass along y), LH vertical detail, HH diagonal.
template <class T>
struct DetailBands {
    FeatureMap<T> hl, lh, hh;
};

// Coarsest low-frequency band plus per-level detail triples ordered
// deepest-first (details[0] belongs to the deepest level, matching ll's
// dims). level_dims records each level's pre-padding input dims so the
// inverse can crop back; odd dims are reflect-padded to even per level,
// which keeps level-n band dims at ceil(H/2^n) x ceil(W/2^n).
template <class T>
struct WaveletPyramid {
    FeatureMap<T> ll;
    std::vector<DetailBands<T>> details;
    WaveletBasis basis = WaveletBasis::Haar;
    std::vector<std::pair<std::size_t, std::size_t>> level_dims;

    std::size_t levels() const { return details.size(); }
};

// Orthonormal analysis, applied per channel; recursion descends into LL only.
template <class T>
WaveletPyramid<T> dwt2(const FeatureMap<T>& x, std::size_t levels, WaveletBasis basis);

// Exact synthesis inverse of dwt2.
template <class T>
FeatureMap<T> idwt2(const WaveletPyramid<T>& p);

// Single-level pair used by the DDE per-level recursion.
template <class T>
std::pair<FeatureMap<T>, DetailBands<T>> dwt2_single(const FeatureMap<T>& x, WaveletBasis basis);
template <class T>
FeatureMap<T> idwt2_single(const FeatureMap<T>& ll, const DetailBands<T>& bands,
                           WaveletBasis basis, std::size_t out_h, std::size_t out_w);

// Directory serialization: one tensor file per band plus manifest.json
// (basis, levels, band order, level dims).
template <class T>
void save_pyramid(const std::filesystem::path& dir, const WaveletPyramid<T>& p);
template <class T>
WaveletPyramid<T> load_pyramid(const std::filesystem::path& dir);

// Test hook: adds `amount` to each Haar low-pass tap, breaking perfect
// reconstruction. Used by the verification CLI's negative control.
void set_haar_corruption(double amount);

}  // namespace depfusion
