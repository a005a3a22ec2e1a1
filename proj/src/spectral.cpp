#include "depfusion/spectral.hpp"

#include <cmath>
#include <numbers>

namespace depfusion {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, n a power of two. Twiddles computed per
// stage from cos/sin so results are deterministic across platforms.
void fft_radix2(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Bluestein's chirp-z algorithm: expresses a length-n DFT as a convolution,
// evaluated with a padded radix-2 FFT. Exact for arbitrary n.
void fft_bluestein(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    const std::size_t m = next_pow2(2 * n - 1);
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<cd> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large n.
        const std::size_t k2 = static_cast<std::size_t>(
            (static_cast<unsigned long long>(k) * k) % (2ULL * n));
        const double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = cd(std::cos(ang), std::sin(ang));
    }
    std::vector<cd> u(m, cd(0, 0)), v(m, cd(0, 0));
    for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
    fft_radix2(u, false);
    fft_radix2(v, false);
    for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
    fft_radix2(u, true);
    const double scale = 1.0 / static_cast<double>(m);  // radix-2 inverse is unnormalized
    for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * scale * chirp[k];
}

}  // namespace

void fft_inplace(std::vector<cd>& x, bool inverse) {
    if (x.size() <= 1) return;
    if (is_pow2(x.size()))
        fft_radix2(x, inverse);
    else
        fft_bluestein(x, inverse);
}

namespace {

// Unnormalized forward 2D DFT of one channel plane (rows then columns).
void fft2_plane(std::vector<cd>& plane, std::size_t h, std::size_t w, bool inverse) {
    std::vector<cd> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy(plane.begin() + static_cast<std::ptrdiff_t>(y * w),
                  plane.begin() + static_cast<std::ptrdiff_t>((y + 1) * w), row.begin());
        fft_inplace(row, inverse);
        std::copy(row.begin(), row.end(), plane.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    std::vector<cd> col(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) col[y] = plane[y * w + x];
        fft_inplace(col, inverse);
        for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = col[y];
    }
}

}  // namespace

template <class T>
SpectralPair<T> fft2_decompose(const FeatureMap<T>& x) {
    SpectralPair<T> out{FeatureMap<T>(x.b, x.c, x.h, x.w), FeatureMap<T>(x.b, x.c, x.h, x.w)};
    std::vector<cd> plane(x.spatial());
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t ci = 0; ci < x.c; ++ci) {
            for (std::size_t y = 0; y < x.h; ++y)
                for (std::size_t xx = 0; xx < x.w; ++xx)
                    plane[y * x.w + xx] = cd(static_cast<double>(x.at(bi, ci, y, xx)), 0.0);
            fft2_plane(plane, x.h, x.w, false);
            for (std::size_t y = 0; y < x.h; ++y)
                for (std::size_t xx = 0; xx < x.w; ++xx) {
                    const cd v = plane[y * x.w + xx];
                    out.amplitude.at(bi, ci, y, xx) = static_cast<T>(std::abs(v));
                    // Two-argument arctangent: quadrant-correct, unlike the
                    // raw imag/real quotient, and the only form that allows
                    // exact recomposition.
                    out.phase.at(bi, ci, y, xx) = static_cast<T>(std::atan2(v.imag(), v.real()));
                }
        }
    return out;
}

template <class T>
FeatureMap<T> ifft2_recompose(const SpectralPair<T>& s, double* max_imag) {
    require_same_shape(s.amplitude, s.phase, "ifft2_recompose");
    const auto& amp = s.amplitude;
    FeatureMap<T> out(amp.b, amp.c, amp.h, amp.w);
    std::vector<cd> plane(amp.spatial());
    const double norm = 1.0 / static_cast<double>(amp.spatial());
    double imag_peak = 0.0;
    for (std::size_t bi = 0; bi < amp.b; ++bi)
        for (std::size_t ci = 0; ci < amp.c; ++ci) {
            for (std::size_t y = 0; y < amp.h; ++y)
                for (std::size_t xx = 0; xx < amp.w; ++xx) {
                    const double a = static_cast<double>(amp.at(bi, ci, y, xx));
                    const double p = static_cast<double>(s.phase.at(bi, ci, y, xx));
                    plane[y * amp.w + xx] = cd(a * std::cos(p), a * std::sin(p));
                }
            fft2_plane(plane, amp.h, amp.w, true);
            for (std::size_t y = 0; y < amp.h; ++y)
                for (std::size_t xx = 0; xx < amp.w; ++xx) {
                    const cd v = plane[y * amp.w + xx] * norm;
                    imag_peak = std::max(imag_peak, std::abs(v.imag()));
                    out.at(bi, ci, y, xx) = static_cast<T>(v.real());
                }
        }
    if (max_imag) *max_imag = imag_peak;
    return out;
}

template SpectralPair<float> fft2_decompose(const FeatureMap<float>&);
template SpectralPair<double> fft2_decompose(const FeatureMap<double>&);
template FeatureMap<float> ifft2_recompose(const SpectralPair<float>&, double*);
template FeatureMap<double> ifft2_recompose(const SpectralPair<double>&, double*);

}  // namespace depfusion
