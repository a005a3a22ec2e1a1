#include "depfusion/image_io.hpp"

#include <cmath>

#include "depfusion/tensor_io.hpp"

namespace depfusion {

namespace {

struct Cursor {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    std::uint8_t peek() const {
        if (eof()) throw FormatError("unexpected end of file", pos);
        return bytes[pos];
    }

    // PNM token scanner: whitespace separates tokens, '#' starts a comment
    // that runs to end of line.
    void skip_space_and_comments() {
        while (!eof()) {
            const std::uint8_t c = bytes[pos];
            if (c == '#') {
                while (!eof() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::size_t read_number() {
        skip_space_and_comments();
        if (eof() || peek() < '0' || peek() > '9')
            throw FormatError("expected a decimal number", pos);
        std::size_t v = 0;
        while (!eof() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1u << 30) throw FormatError("numeric field out of range", pos);
            ++pos;
        }
        return v;
    }
};

// IEEE round half-to-even after clamping to [0, 1].
std::uint8_t quantize(double v) {
    v = std::min(1.0, std::max(0.0, v)) * 255.0;
    return static_cast<std::uint8_t>(std::nearbyint(v));
}

template <class T>
FeatureMap<T> decode_pnm(const std::vector<std::uint8_t>& bytes, char kind,
                         std::size_t channels) {
    Cursor cur{bytes};
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != kind)
        throw FormatError(std::string("bad magic, expected P") + kind, 0);
    cur.pos = 2;
    const std::size_t w = cur.read_number();
    const std::size_t h = cur.read_number();
    cur.skip_space_and_comments();
    const std::size_t maxval_pos = cur.pos;
    const std::size_t maxval = cur.read_number();
    if (maxval != 255)
        throw FormatError("unsupported maxval " + std::to_string(maxval) + " (only 255)",
                          maxval_pos);
    if (cur.eof()) throw FormatError("missing pixel data", cur.pos);
    ++cur.pos;  // single whitespace byte after maxval
    const std::size_t need = w * h * channels;
    if (bytes.size() - cur.pos < need)
        throw FormatError("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
                              std::to_string(bytes.size() - cur.pos),
                          bytes.size());
    if (w == 0 || h == 0) throw FormatError("zero image dimension", 2);
    FeatureMap<T> out(1, channels, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                out.at(0, c, y, x) =
                    static_cast<T>(bytes[cur.pos + (y * w + x) * channels + c] / 255.0);
    return out;
}

template <class T>
std::vector<std::uint8_t> encode_pnm(const FeatureMap<T>& x, char kind, std::size_t channels) {
    if (x.b != 1 || x.c != channels)
        throw ShapeError(std::string("encode P") + kind + ": need shape (1," +
                         std::to_string(channels) + ",H,W), got " + x.shape_string());
    const std::string header = std::string("P") + kind + "\n" + std::to_string(x.w) + " " +
                               std::to_string(x.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + x.spatial() * channels);
    for (std::size_t y = 0; y < x.h; ++y)
        for (std::size_t xx = 0; xx < x.w; ++xx)
            for (std::size_t c = 0; c < channels; ++c)
                out.push_back(quantize(static_cast<double>(x.at(0, c, y, xx))));
    return out;
}

}  // namespace

template <class T>
FeatureMap<T> decode_ppm(const std::vector<std::uint8_t>& bytes) {
    return decode_pnm<T>(bytes, '6', 3);
}

template <class T>
FeatureMap<T> decode_pgm(const std::vector<std::uint8_t>& bytes) {
    return decode_pnm<T>(bytes, '5', 1);
}

template <class T>
std::vector<std::uint8_t> encode_ppm(const FeatureMap<T>& x) {
    return encode_pnm(x, '6', 3);
}

template <class T>
std::vector<std::uint8_t> encode_pgm(const FeatureMap<T>& x) {
    return encode_pnm(x, '5', 1);
}

template <class T>
FeatureMap<T> load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm<T>(bytes);
    return decode_ppm<T>(bytes);
}

template <class T>
void save_ppm(const std::filesystem::path& path, const FeatureMap<T>& x) {
    const auto bytes = encode_ppm(x);
    write_file_atomic(path, bytes.data(), bytes.size());
}

template <class T>
void save_pgm(const std::filesystem::path& path, const FeatureMap<T>& x) {
    const auto bytes = encode_pgm(x);
    write_file_atomic(path, bytes.data(), bytes.size());
}

template FeatureMap<float> decode_ppm(const std::vector<std::uint8_t>&);
template FeatureMap<double> decode_ppm(const std::vector<std::uint8_t>&);
template FeatureMap<float> decode_pgm(const std::vector<std::uint8_t>&);
template FeatureMap<double> decode_pgm(const std::vector<std::uint8_t>&);
template std::vector<std::uint8_t> encode_ppm(const FeatureMap<float>&);
template std::vector<std::uint8_t> encode_ppm(const FeatureMap<double>&);
template std::vector<std::uint8_t> encode_pgm(const FeatureMap<float>&);
template std::vector<std::uint8_t> encode_pgm(const FeatureMap<double>&);
template FeatureMap<float> load_image(const std::filesystem::path&);
template FeatureMap<double> load_image(const std::filesystem::path&);
template void save_ppm(const std::filesystem::path&, const FeatureMap<float>&);
template void save_ppm(const std::filesystem::path&, const FeatureMap<double>&);
template void save_pgm(const std::filesystem::path&, const FeatureMap<float>&);
template void save_pgm(const std::filesystem::path&, const FeatureMap<double>&);

}  // namespace depfusion
