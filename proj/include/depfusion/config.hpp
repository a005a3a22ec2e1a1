#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "depfusion/pgmf.hpp"
#include "depfusion/ssm.hpp"
#include "depfusion/tensor_io.hpp"
#include "depfusion/wavelet.hpp"

namespace depfusion {

// Run configuration. The defaults reproduce the reference setup: Haar
// basis, two decomposition levels, kernel combination [3,5,7], fusion
// variant d, ZOH discretization, dropout 0.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t levels = 2;
    WaveletBasis basis = WaveletBasis::Haar;
    std::array<std::size_t, 3> kernels{3, 5, 7};
    FusionVariant variant = FusionVariant::D;
    Discretization discretization = Discretization::Zoh;
    double dropout = 0.0;
    Dtype dtype = Dtype::F32;
    std::string input;
    std::string output = ".";

    void validate() const;

    // JSON text with exactly these field names: seed, levels, basis,
    // kernels, variant, discretization, dropout, dtype, input, output.
    // Unknown keys are errors, not warnings.
    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_json_file(const std::filesystem::path& path);
    std::string to_json_text() const;
};

// The kernel-size combinations the CSWM ablation covers.
bool known_kernel_combination(const std::array<std::size_t, 3>& kernels);

}  // namespace depfusion
