#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "depfusion/tensor.hpp"

namespace depfusion {

// Binary PPM (P6, RGB) and PGM (P5, single channel), maxval 255 only.
// Readers map pixel values to [0, 1] reals in a (1, C, H, W) map; writers
// clamp to [0, 1] and round half-to-even back to bytes. Parse failures
// throw FormatError with the offending byte offset.

template <class T>
FeatureMap<T> decode_ppm(const std::vector<std::uint8_t>& bytes);  // (1, 3, H, W)
template <class T>
FeatureMap<T> decode_pgm(const std::vector<std::uint8_t>& bytes);  // (1, 1, H, W)

template <class T>
std::vector<std::uint8_t> encode_ppm(const FeatureMap<T>& x);
template <class T>
std::vector<std::uint8_t> encode_pgm(const FeatureMap<T>& x);

template <class T>
FeatureMap<T> load_image(const std::filesystem::path& path);  // dispatches on magic
template <class T>
void save_ppm(const std::filesystem::path& path, const FeatureMap<T>& x);
template <class T>
void save_pgm(const std::filesystem::path& path, const FeatureMap<T>& x);

}  // namespace depfusion
