#pragma once

#include <complex>
#include <vector>

#include "depfusion/tensor.hpp"

namespace depfusion {

// Amplitude spectrum |F(u,v)| and phase spectrum angle(F(u,v)) of a
// per-channel 2D DFT. Forward transform is unnormalized; the inverse
// carries the 1/(H*W) factor.
template <class T>
struct SpectralPair {
    FeatureMap<T> amplitude;  // >= 0 everywhere
    FeatureMap<T> phase;      // radians in (-pi, pi]
};

template <class T>
SpectralPair<T> fft2_decompose(const FeatureMap<T>& x);

// Rebuilds amplitude * e^{i*phase}, inverse-transforms and returns the real
// part. When the modified spectrum is no longer conjugate-symmetric the
// imaginary residue is discarded; pass max_imag to read it back as a
// diagnostic.
template <class T>
FeatureMap<T> ifft2_recompose(const SpectralPair<T>& s, double* max_imag = nullptr);

// 1D transforms used by the 2D driver, exposed for tests. Radix-2 when the
// length is a power of two, Bluestein otherwise, so any H and W work.
void fft_inplace(std::vector<std::complex<double>>& x, bool inverse);

}  // namespace depfusion
