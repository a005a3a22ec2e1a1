#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "depfusion/tensor.hpp"

namespace depfusion {

// Binary tensor format, little-endian throughout:
//   magic "DEPF" (4 bytes)
//   version  u8 = 1
//   dtype    u8 (0 = binary32, 1 = binary64)
//   ndim     u8 = 4
//   dims     4 x u32 (B, C, H, W)
//   payload  B*C*H*W values, row-major
// Header is 23 bytes; payload follows immediately.

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

constexpr std::size_t kTensorHeaderBytes = 23;

using TensorVariant = std::variant<FeatureMap<float>, FeatureMap<double>>;

std::vector<std::uint8_t> write_tensor(const FeatureMap<float>& x);
std::vector<std::uint8_t> write_tensor(const FeatureMap<double>& x);

TensorVariant read_tensor(const std::uint8_t* bytes, std::size_t size);
TensorVariant read_tensor(const std::vector<std::uint8_t>& bytes);

// File helpers. Writes go through a temp file and an atomic rename.
void save_tensor(const std::filesystem::path& path, const TensorVariant& x);
TensorVariant load_tensor(const std::filesystem::path& path);

Dtype tensor_dtype(const TensorVariant& x);

// Lossy when narrowing f64 -> f32; exact when widening.
template <class T>
FeatureMap<T> tensor_cast(const TensorVariant& x) {
    return std::visit(
        [](const auto& m) {
            FeatureMap<T> out(m.b, m.c, m.h, m.w);
            for (std::size_t i = 0; i < m.data.size(); ++i)
                out.data[i] = static_cast<T>(m.data[i]);
            return out;
        },
        x);
}

// Atomic byte-blob write used by every file-producing code path.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace depfusion
