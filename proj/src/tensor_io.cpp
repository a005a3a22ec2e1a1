#include "depfusion/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace depfusion {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'P', 'F'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
std::vector<std::uint8_t> write_impl(const FeatureMap<T>& x, Dtype dtype) {
    std::vector<std::uint8_t> out;
    out.reserve(kTensorHeaderBytes + x.size() * sizeof(T));
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(4);
    put_u32(out, static_cast<std::uint32_t>(x.b));
    put_u32(out, static_cast<std::uint32_t>(x.c));
    put_u32(out, static_cast<std::uint32_t>(x.h));
    put_u32(out, static_cast<std::uint32_t>(x.w));
    // Values serialized little-endian; byte copy is exact on LE hosts.
    static_assert(sizeof(float) == 4 && sizeof(double) == 8);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(x.data.data());
    out.insert(out.end(), raw, raw + x.size() * sizeof(T));
    return out;
}

template <class T>
FeatureMap<T> read_payload(const std::uint8_t* bytes, std::size_t size, std::size_t b,
                           std::size_t c, std::size_t h, std::size_t w) {
    const std::size_t count = b * c * h * w;
    const std::size_t need = kTensorHeaderBytes + count * sizeof(T);
    if (size < need)
        throw FormatError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                              std::to_string(size),
                          size);
    std::vector<T> values(count);
    std::memcpy(values.data(), bytes + kTensorHeaderBytes, count * sizeof(T));
    return FeatureMap<T>::from_data(b, c, h, w, std::move(values));
}

}  // namespace

std::vector<std::uint8_t> write_tensor(const FeatureMap<float>& x) {
    return write_impl(x, Dtype::F32);
}
std::vector<std::uint8_t> write_tensor(const FeatureMap<double>& x) {
    return write_impl(x, Dtype::F64);
}

TensorVariant read_tensor(const std::uint8_t* bytes, std::size_t size) {
    if (size < kTensorHeaderBytes)
        throw FormatError("truncated header: " + std::to_string(size) + " bytes", size);
    if (std::memcmp(bytes, kMagic, 4) != 0) throw FormatError("bad magic, expected \"DEPF\"", 0);
    if (bytes[4] != kVersion)
        throw FormatError("unsupported version " + std::to_string(bytes[4]), 4);
    if (bytes[5] > 1) throw FormatError("unsupported dtype " + std::to_string(bytes[5]), 5);
    if (bytes[6] != 4) throw FormatError("ndim must be 4, got " + std::to_string(bytes[6]), 6);
    const std::size_t b = get_u32(bytes + 7);
    const std::size_t c = get_u32(bytes + 11);
    const std::size_t h = get_u32(bytes + 15);
    const std::size_t w = get_u32(bytes + 19);
    if (b == 0 || c == 0 || h == 0 || w == 0) throw FormatError("zero dimension in header", 7);
    if (static_cast<Dtype>(bytes[5]) == Dtype::F32)
        return read_payload<float>(bytes, size, b, c, h, w);
    return read_payload<double>(bytes, size, b, c, h, w);
}

TensorVariant read_tensor(const std::vector<std::uint8_t>& bytes) {
    return read_tensor(bytes.data(), bytes.size());
}

Dtype tensor_dtype(const TensorVariant& x) {
    return std::holds_alternative<FeatureMap<float>>(x) ? Dtype::F32 : Dtype::F64;
}

void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open " + tmp.string() + " for writing");
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!f) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw Error("cannot open " + path.string());
    const auto size = static_cast<std::size_t>(f.tellg());
    f.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f) throw Error("read failed: " + path.string());
    return bytes;
}

void save_tensor(const std::filesystem::path& path, const TensorVariant& x) {
    const std::vector<std::uint8_t> bytes =
        std::visit([](const auto& m) { return write_tensor(m); }, x);
    write_file_atomic(path, bytes.data(), bytes.size());
}

TensorVariant load_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return read_tensor(bytes);
}

}  // namespace depfusion
