#include "depfusion/wavelet.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "depfusion/tensor_io.hpp"

namespace depfusion {

namespace {

double g_haar_corruption = 0.0;

// Orthonormal filter pairs. g[m] = (-1)^m h[L-1-m]. Band-level boundary
// handling is periodized, which keeps the basis orthonormal at critical
// sampling for any tap count; odd inputs are reflect-padded to even first.
std::vector<double> lowpass_taps(WaveletBasis basis) {
    const double s2 = std::sqrt(2.0);
    if (basis == WaveletBasis::Haar) {
        const double t = 1.0 / s2 + g_haar_corruption;
        return {t, t};
    }
    const double r3 = std::sqrt(3.0);
    return {(1.0 + r3) / (4.0 * s2), (3.0 + r3) / (4.0 * s2), (3.0 - r3) / (4.0 * s2),
            (1.0 - r3) / (4.0 * s2)};
}

std::vector<double> highpass_taps(const std::vector<double>& h) {
    std::vector<double> g(h.size());
    for (std::size_t m = 0; m < h.size(); ++m)
        g[m] = ((m % 2 == 0) ? 1.0 : -1.0) * h[h.size() - 1 - m];
    return g;
}

// a[k] = sum_m h[m] x[(2k+m) mod n], likewise d with g. n even.
void analyze_1d(const double* x, std::size_t n, const std::vector<double>& h,
                const std::vector<double>& g, double* approx, double* detail) {
    const std::size_t half = n / 2;
    for (std::size_t k = 0; k < half; ++k) {
        double a = 0, d = 0;
        for (std::size_t m = 0; m < h.size(); ++m) {
            const double v = x[(2 * k + m) % n];
            a += h[m] * v;
            d += g[m] * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

// Transpose of analyze_1d: x[(2k+m) mod n] += a[k] h[m] + d[k] g[m].
void synthesize_1d(const double* approx, const double* detail, std::size_t n,
                   const std::vector<double>& h, const std::vector<double>& g, double* x) {
    std::fill(x, x + n, 0.0);
    const std::size_t half = n / 2;
    for (std::size_t k = 0; k < half; ++k)
        for (std::size_t m = 0; m < h.size(); ++m)
            x[(2 * k + m) % n] += approx[k] * h[m] + detail[k] * g[m];
}

// Reflect-pad (edge repeated) a channel plane to even dims when needed.
template <class T>
std::vector<double> padded_plane(const FeatureMap<T>& x, std::size_t bi, std::size_t ci,
                                 std::size_t ph, std::size_t pw) {
    std::vector<double> out(ph * pw);
    for (std::size_t y = 0; y < ph; ++y) {
        const std::size_t sy = (y < x.h) ? y : 2 * x.h - 1 - y;
        for (std::size_t xx = 0; xx < pw; ++xx) {
            const std::size_t sx = (xx < x.w) ? xx : 2 * x.w - 1 - xx;
            out[y * pw + xx] = static_cast<double>(x.at(bi, ci, sy, sx));
        }
    }
    return out;
}

struct LevelBands {
    std::vector<double> ll, hl, lh, hh;  // each (ph/2) x (pw/2)
};

LevelBands analyze_plane(const std::vector<double>& plane, std::size_t ph, std::size_t pw,
                         const std::vector<double>& h, const std::vector<double>& g) {
    const std::size_t hw = pw / 2, hh2 = ph / 2;
    // Row pass along x: per row, low/high halves.
    std::vector<double> row_lo(ph * hw), row_hi(ph * hw);
    for (std::size_t y = 0; y < ph; ++y)
        analyze_1d(plane.data() + y * pw, pw, h, g, row_lo.data() + y * hw,
                   row_hi.data() + y * hw);
    // Column pass along y on each half.
    LevelBands out;
    out.ll.resize(hh2 * hw);
    out.lh.resize(hh2 * hw);
    out.hl.resize(hh2 * hw);
    out.hh.resize(hh2 * hw);
    std::vector<double> col(ph), lo(hh2), hi(hh2);
    for (std::size_t xx = 0; xx < hw; ++xx) {
        for (std::size_t y = 0; y < ph; ++y) col[y] = row_lo[y * hw + xx];
        analyze_1d(col.data(), ph, h, g, lo.data(), hi.data());
        for (std::size_t y = 0; y < hh2; ++y) {
            out.ll[y * hw + xx] = lo[y];
            out.lh[y * hw + xx] = hi[y];
        }
        for (std::size_t y = 0; y < ph; ++y) col[y] = row_hi[y * hw + xx];
        analyze_1d(col.data(), ph, h, g, lo.data(), hi.data());
        for (std::size_t y = 0; y < hh2; ++y) {
            out.hl[y * hw + xx] = lo[y];
            out.hh[y * hw + xx] = hi[y];
        }
    }
    return out;
}

std::vector<double> synthesize_plane(const LevelBands& bands, std::size_t ph, std::size_t pw,
                                     const std::vector<double>& h, const std::vector<double>& g) {
    const std::size_t hw = pw / 2, hh2 = ph / 2;
    std::vector<double> row_lo(ph * hw), row_hi(ph * hw);
    std::vector<double> lo(hh2), hi(hh2), col(ph);
    for (std::size_t xx = 0; xx < hw; ++xx) {
        for (std::size_t y = 0; y < hh2; ++y) {
            lo[y] = bands.ll[y * hw + xx];
            hi[y] = bands.lh[y * hw + xx];
        }
        synthesize_1d(lo.data(), hi.data(), ph, h, g, col.data());
        for (std::size_t y = 0; y < ph; ++y) row_lo[y * hw + xx] = col[y];
        for (std::size_t y = 0; y < hh2; ++y) {
            lo[y] = bands.hl[y * hw + xx];
            hi[y] = bands.hh[y * hw + xx];
        }
        synthesize_1d(lo.data(), hi.data(), ph, h, g, col.data());
        for (std::size_t y = 0; y < ph; ++y) row_hi[y * hw + xx] = col[y];
    }
    std::vector<double> plane(ph * pw);
    std::vector<double> row(pw);
    for (std::size_t y = 0; y < ph; ++y) {
        synthesize_1d(row_lo.data() + y * hw, row_hi.data() + y * hw, pw, h, g, row.data());
        std::copy(row.begin(), row.end(), plane.begin() + static_cast<std::ptrdiff_t>(y * pw));
    }
    return plane;
}

template <class T>
void store_band(FeatureMap<T>& dst, std::size_t bi, std::size_t ci, const std::vector<double>& src,
                std::size_t hw) {
    for (std::size_t y = 0; y < dst.h; ++y)
        for (std::size_t xx = 0; xx < dst.w; ++xx)
            dst.at(bi, ci, y, xx) = static_cast<T>(src[y * hw + xx]);
}

}  // namespace

void set_haar_corruption(double amount) { g_haar_corruption = amount; }

const char* to_string(WaveletBasis basis) {
    return basis == WaveletBasis::Haar ? "haar" : "sym2";
}

WaveletBasis wavelet_basis_from_string(const std::string& name) {
    if (name == "haar") return WaveletBasis::Haar;
    if (name == "sym2") return WaveletBasis::Sym2;
    throw InvalidArgument("unknown wavelet basis: " + name);
}

template <class T>
std::pair<FeatureMap<T>, DetailBands<T>> dwt2_single(const FeatureMap<T>& x, WaveletBasis basis) {
    const auto h = lowpass_taps(basis);
    const auto g = highpass_taps(h);
    const std::size_t ph = x.h + (x.h % 2), pw = x.w + (x.w % 2);
    const std::size_t bh = ph / 2, bw = pw / 2;
    FeatureMap<T> ll(x.b, x.c, bh, bw);
    DetailBands<T> bands{FeatureMap<T>(x.b, x.c, bh, bw), FeatureMap<T>(x.b, x.c, bh, bw),
                         FeatureMap<T>(x.b, x.c, bh, bw)};
    for (std::size_t bi = 0; bi < x.b; ++bi)
        for (std::size_t ci = 0; ci < x.c; ++ci) {
            const auto plane = padded_plane(x, bi, ci, ph, pw);
            const auto lv = analyze_plane(plane, ph, pw, h, g);
            store_band(ll, bi, ci, lv.ll, bw);
            store_band(bands.hl, bi, ci, lv.hl, bw);
            store_band(bands.lh, bi, ci, lv.lh, bw);
            store_band(bands.hh, bi, ci, lv.hh, bw);
        }
    return {std::move(ll), std::move(bands)};
}

template <class T>
FeatureMap<T> idwt2_single(const FeatureMap<T>& ll, const DetailBands<T>& bands,
                           WaveletBasis basis, std::size_t out_h, std::size_t out_w) {
    if (!ll.same_shape(bands.hl) || !ll.same_shape(bands.lh) || !ll.same_shape(bands.hh))
        throw ShapeError("idwt2: detail bands do not match LL " + ll.shape_string());
    const std::size_t ph = 2 * ll.h, pw = 2 * ll.w;
    if (out_h > ph || out_w > pw || out_h + 1 < ph || out_w + 1 < pw)
        throw ShapeError("idwt2: output dims inconsistent with band dims");
    const auto h = lowpass_taps(basis);
    const auto g = highpass_taps(h);
    FeatureMap<T> out(ll.b, ll.c, out_h, out_w);
    LevelBands lv;
    const std::size_t n = ll.h * ll.w;
    lv.ll.resize(n);
    lv.hl.resize(n);
    lv.lh.resize(n);
    lv.hh.resize(n);
    for (std::size_t bi = 0; bi < ll.b; ++bi)
        for (std::size_t ci = 0; ci < ll.c; ++ci) {
            for (std::size_t y = 0; y < ll.h; ++y)
                for (std::size_t xx = 0; xx < ll.w; ++xx) {
                    const std::size_t i = y * ll.w + xx;
                    lv.ll[i] = static_cast<double>(ll.at(bi, ci, y, xx));
                    lv.hl[i] = static_cast<double>(bands.hl.at(bi, ci, y, xx));
                    lv.lh[i] = static_cast<double>(bands.lh.at(bi, ci, y, xx));
                    lv.hh[i] = static_cast<double>(bands.hh.at(bi, ci, y, xx));
                }
            const auto plane = synthesize_plane(lv, ph, pw, h, g);
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t xx = 0; xx < out_w; ++xx)
                    out.at(bi, ci, y, xx) = static_cast<T>(plane[y * pw + xx]);
        }
    return out;
}

template <class T>
WaveletPyramid<T> dwt2(const FeatureMap<T>& x, std::size_t levels, WaveletBasis basis) {
    if (levels < 1) throw InvalidArgument("dwt2: levels must be >= 1");
    // Deeper than this leaves nothing to split at the last level.
    const std::size_t longest = std::max(x.h, x.w);
    if ((longest >> (levels - 1)) < 2)
        throw InvalidArgument("dwt2: " + std::to_string(levels) + " levels too deep for " +
                              std::to_string(x.h) + "x" + std::to_string(x.w));
    WaveletPyramid<T> p;
    p.basis = basis;
    FeatureMap<T> current = x;
    // Built finest-first, then reversed to the deepest-first order.
    std::vector<DetailBands<T>> details;
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (std::size_t lvl = 0; lvl < levels; ++lvl) {
        dims.emplace_back(current.h, current.w);
        auto [ll, bands] = dwt2_single(current, basis);
        details.push_back(std::move(bands));
        current = std::move(ll);
    }
    p.ll = std::move(current);
    p.details.assign(details.rbegin(), details.rend());
    p.level_dims.assign(dims.rbegin(), dims.rend());
    return p;
}

template <class T>
FeatureMap<T> idwt2(const WaveletPyramid<T>& p) {
    if (p.details.empty() || p.level_dims.size() != p.details.size())
        throw ShapeError("idwt2: empty or inconsistent pyramid");
    FeatureMap<T> current = p.ll;
    for (std::size_t i = 0; i < p.details.size(); ++i)
        current = idwt2_single(current, p.details[i], p.basis, p.level_dims[i].first,
                               p.level_dims[i].second);
    return current;
}

template <class T>
void save_pyramid(const std::filesystem::path& dir, const WaveletPyramid<T>& p) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["basis"] = to_string(p.basis);
    manifest["levels"] = p.levels();
    manifest["band_order"] = {"hl", "lh", "hh"};
    auto dims = nlohmann::json::array();
    for (const auto& [h, w] : p.level_dims) dims.push_back({h, w});
    manifest["level_dims"] = dims;
    save_tensor(dir / "ll.dft", TensorVariant(p.ll));
    for (std::size_t i = 0; i < p.details.size(); ++i) {
        const std::string stem = "level" + std::to_string(i);
        save_tensor(dir / (stem + "_hl.dft"), TensorVariant(p.details[i].hl));
        save_tensor(dir / (stem + "_lh.dft"), TensorVariant(p.details[i].lh));
        save_tensor(dir / (stem + "_hh.dft"), TensorVariant(p.details[i].hh));
    }
    const std::string text = manifest.dump(2) + "\n";
    write_file_atomic(dir / "manifest.json", text.data(), text.size());
}

template <class T>
WaveletPyramid<T> load_pyramid(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw Error("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest = nlohmann::json::parse(f);
    WaveletPyramid<T> p;
    p.basis = wavelet_basis_from_string(manifest.at("basis").get<std::string>());
    const auto levels = manifest.at("levels").get<std::size_t>();
    for (const auto& d : manifest.at("level_dims"))
        p.level_dims.emplace_back(d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>());
    p.ll = tensor_cast<T>(load_tensor(dir / "ll.dft"));
    for (std::size_t i = 0; i < levels; ++i) {
        const std::string stem = "level" + std::to_string(i);
        p.details.push_back(DetailBands<T>{
            tensor_cast<T>(load_tensor(dir / (stem + "_hl.dft"))),
            tensor_cast<T>(load_tensor(dir / (stem + "_lh.dft"))),
            tensor_cast<T>(load_tensor(dir / (stem + "_hh.dft")))});
    }
    return p;
}

template std::pair<FeatureMap<float>, DetailBands<float>> dwt2_single(const FeatureMap<float>&,
                                                                      WaveletBasis);
template std::pair<FeatureMap<double>, DetailBands<double>> dwt2_single(const FeatureMap<double>&,
                                                                        WaveletBasis);
template FeatureMap<float> idwt2_single(const FeatureMap<float>&, const DetailBands<float>&,
                                        WaveletBasis, std::size_t, std::size_t);
template FeatureMap<double> idwt2_single(const FeatureMap<double>&, const DetailBands<double>&,
                                         WaveletBasis, std::size_t, std::size_t);
template WaveletPyramid<float> dwt2(const FeatureMap<float>&, std::size_t, WaveletBasis);
template WaveletPyramid<double> dwt2(const FeatureMap<double>&, std::size_t, WaveletBasis);
template FeatureMap<float> idwt2(const WaveletPyramid<float>&);
template FeatureMap<double> idwt2(const WaveletPyramid<double>&);
template void save_pyramid(const std::filesystem::path&, const WaveletPyramid<float>&);
template void save_pyramid(const std::filesystem::path&, const WaveletPyramid<double>&);
template WaveletPyramid<float> load_pyramid(const std::filesystem::path&);
template WaveletPyramid<double> load_pyramid(const std::filesystem::path&);

}  // namespace depfusion
