#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "depfusion/wavelet.hpp"

using namespace depfusion;

namespace {

template <class T>
double band_energy(const WaveletPyramid<T>& p) {
    double e = 0;
    for (T v : p.ll.data) e += static_cast<double>(v) * v;
    for (const auto& d : p.details) {
        for (T v : d.hl.data) e += static_cast<double>(v) * v;
        for (T v : d.lh.data) e += static_cast<double>(v) * v;
        for (T v : d.hh.data) e += static_cast<double>(v) * v;
    }
    return e;
}

template <class T>
double energy(const FeatureMap<T>& x) {
    double e = 0;
    for (T v : x.data) e += static_cast<double>(v) * v;
    return e;
}

}  // namespace

TEST_CASE("haar of a constant image") {
    FeatureMap<double> x(1, 1, 4, 4, 3.0);
    auto p = dwt2(x, 1, WaveletBasis::Haar);
    for (double v : p.ll.data) CHECK(v == doctest::Approx(6.0));  // 2c
    for (double v : p.details[0].hl.data) CHECK(std::abs(v) < 1e-12);
    for (double v : p.details[0].lh.data) CHECK(std::abs(v) < 1e-12);
    for (double v : p.details[0].hh.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("haar band naming fixed by the 2x2 hand computation") {
    FeatureMap<double> x(1, 1, 2, 2);
    x.at(0, 0, 0, 0) = 1;
    x.at(0, 0, 0, 1) = 2;
    x.at(0, 0, 1, 0) = 3;
    x.at(0, 0, 1, 1) = 4;
    auto p = dwt2(x, 1, WaveletBasis::Haar);
    CHECK(p.ll.at(0, 0, 0, 0) == doctest::Approx(5.0));
    CHECK(p.details[0].lh.at(0, 0, 0, 0) == doctest::Approx(-2.0));  // vertical diff
    CHECK(p.details[0].hl.at(0, 0, 0, 0) == doctest::Approx(-1.0));  // horizontal diff
    CHECK(p.details[0].hh.at(0, 0, 0, 0) == doctest::Approx(0.0));
}

TEST_CASE("haar preserves energy (Parseval)") {
    Prng prng(21);
    auto x = random_map<double>(prng, 1, 3, 16, 16);
    for (std::size_t levels : {1, 2, 3}) {
        auto p = dwt2(x, levels, WaveletBasis::Haar);
        const double in = energy(x), out = band_energy(p);
        CHECK(std::abs(in - out) / in < 1e-5);
    }
}

TEST_CASE("perfect reconstruction, both bases, both dtypes") {
    Prng prng(5);
    for (auto basis : {WaveletBasis::Haar, WaveletBasis::Sym2}) {
        auto x64 = random_map<double>(prng, 1, 3, 32, 32);
        FeatureMap<float> x32(1, 3, 32, 32);
        for (std::size_t i = 0; i < x32.data.size(); ++i)
            x32.data[i] = static_cast<float>(x64.data[i]);
        for (std::size_t levels : {1, 2, 3}) {
            CHECK(max_abs_diff(idwt2(dwt2(x64, levels, basis)), x64) < 1e-10);
            CHECK(max_abs_diff(idwt2(dwt2(x32, levels, basis)), x32) < 1e-5);
        }
    }
}

TEST_CASE("perfect reconstruction on non-divisible dims") {
    Prng prng(6);
    for (auto basis : {WaveletBasis::Haar, WaveletBasis::Sym2}) {
        for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 7},
                            {9, 6},
                            {1, 13},
                            {64, 80}}) {
            auto x = random_map<double>(prng, 1, 2, h, w);
            for (std::size_t levels : {1, 2}) {
                auto p = dwt2(x, levels, basis);
                CHECK(p.details[0].hl.h == (p.level_dims[0].first + 1) / 2);
                auto back = idwt2(p);
                CHECK(back.h == h);
                CHECK(back.w == w);
                CHECK(max_abs_diff(back, x) < 1e-10);
            }
        }
    }
}

TEST_CASE("band dims follow ceil(H/2^n)") {
    FeatureMap<double> x(1, 1, 5, 7, 1.0);
    auto p = dwt2(x, 2, WaveletBasis::Haar);
    // level 1 (finest, stored last): ceil(5/2) x ceil(7/2)
    CHECK(p.details[1].hl.h == 3);
    CHECK(p.details[1].hl.w == 4);
    // level 2: ceil(3/2) x ceil(4/2)
    CHECK(p.details[0].hl.h == 2);
    CHECK(p.details[0].hl.w == 2);
    CHECK(p.ll.h == p.details[0].hl.h);
    CHECK(p.ll.w == p.details[0].hl.w);
}

TEST_CASE("zero details of a constant reconstruct it exactly") {
    FeatureMap<double> x(1, 1, 8, 8, 4.0);
    auto p = dwt2(x, 2, WaveletBasis::Haar);
    for (auto& d : p.details) {
        std::fill(d.hl.data.begin(), d.hl.data.end(), 0.0);
        std::fill(d.lh.data.begin(), d.lh.data.end(), 0.0);
        std::fill(d.hh.data.begin(), d.hh.data.end(), 0.0);
    }
    CHECK(max_abs_diff(idwt2(p), x) < 1e-12);
}

TEST_CASE("one-level pyramid of LL=2 with zero details gives ones") {
    WaveletPyramid<double> p;
    p.basis = WaveletBasis::Haar;
    p.ll = FeatureMap<double>(1, 1, 2, 2, 2.0);
    p.details.push_back(DetailBands<double>{FeatureMap<double>(1, 1, 2, 2, 0.0),
                                            FeatureMap<double>(1, 1, 2, 2, 0.0),
                                            FeatureMap<double>(1, 1, 2, 2, 0.0)});
    p.level_dims.emplace_back(4, 4);
    auto x = idwt2(p);
    for (double v : x.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("dwt2 is linear") {
    Prng prng(8);
    auto x = random_map<double>(prng, 1, 1, 8, 8);
    auto y = random_map<double>(prng, 1, 1, 8, 8);
    const double a = 2.5, b = -1.25;
    auto pl = dwt2(add(scale(x, a), scale(y, b)), 2, WaveletBasis::Sym2);
    auto px = dwt2(x, 2, WaveletBasis::Sym2);
    auto py = dwt2(y, 2, WaveletBasis::Sym2);
    auto combined = add(scale(px.ll, a), scale(py.ll, b));
    CHECK(max_abs_diff(pl.ll, combined) < 1e-10);
    for (std::size_t i = 0; i < pl.details.size(); ++i) {
        CHECK(max_abs_diff(pl.details[i].hh,
                           add(scale(px.details[i].hh, a), scale(py.details[i].hh, b))) < 1e-10);
    }
}

TEST_CASE("dwt2 argument validation") {
    FeatureMap<double> x(1, 1, 4, 4, 1.0);
    CHECK_THROWS_AS(dwt2(x, 0, WaveletBasis::Haar), InvalidArgument);
    CHECK_THROWS_AS(dwt2(x, 5, WaveletBasis::Haar), InvalidArgument);
}

TEST_CASE("idwt2 rejects inconsistent pyramids") {
    FeatureMap<double> x(1, 1, 8, 8, 1.0);
    auto p = dwt2(x, 1, WaveletBasis::Haar);
    p.details[0].hh = FeatureMap<double>(1, 1, 2, 2, 0.0);
    CHECK_THROWS_AS(idwt2(p), ShapeError);
}

TEST_CASE("pyramid directory round trip") {
    Prng prng(31);
    auto x = random_map<float>(prng, 1, 2, 16, 12);
    auto p = dwt2(x, 2, WaveletBasis::Sym2);
    const auto dir = std::filesystem::temp_directory_path() / "depf_pyramid_test";
    std::filesystem::remove_all(dir);
    save_pyramid(dir, p);
    auto q = load_pyramid<float>(dir);
    CHECK(q.basis == p.basis);
    CHECK(q.levels() == p.levels());
    CHECK(q.ll.data == p.ll.data);
    for (std::size_t i = 0; i < p.details.size(); ++i)
        CHECK(q.details[i].hh.data == p.details[i].hh.data);
    CHECK(max_abs_diff(idwt2(q), x) < 1e-5f);
    std::filesystem::remove_all(dir);
}

TEST_CASE("haar corruption hook breaks reconstruction") {
    Prng prng(14);
    auto x = random_map<double>(prng, 1, 1, 8, 8);
    set_haar_corruption(0.05);
    const double err = max_abs_diff(idwt2(dwt2(x, 1, WaveletBasis::Haar)), x);
    set_haar_corruption(0.0);
    CHECK(err > 1e-3);
    CHECK(max_abs_diff(idwt2(dwt2(x, 1, WaveletBasis::Haar)), x) < 1e-10);
}
