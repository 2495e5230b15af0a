#include "msfcn/tns_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace msfcn {
namespace {

void put_u32le(std::string& buf, uint32_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
    buf.push_back(char((v >> 16) & 0xff));
    buf.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32le(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

uint16_t get_u16le(const unsigned char* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

std::string encode(const TnsAny& t) {
    validate_shape(t.shape);
    std::string buf;
    buf.reserve(8 + 4 * t.shape.size() +
                shape_numel(t.shape) * (t.dtype == kTnsF32 ? 4 : 2));
    buf += "TNS1";
    buf.push_back(char(t.dtype));
    buf.push_back(char(t.shape.size()));
    buf.push_back(0);
    buf.push_back(0);
    for (uint32_t e : t.shape) put_u32le(buf, e);
    const size_t n = shape_numel(t.shape);
    if (t.dtype == kTnsF32) {
        if (t.f32.size() != n) throw FormatError("payload size does not match extents");
        for (float v : t.f32) put_u32le(buf, std::bit_cast<uint32_t>(v));
    } else if (t.dtype == kTnsU16) {
        if (t.u16.size() != n) throw FormatError("payload size does not match extents");
        for (uint16_t v : t.u16) {
            buf.push_back(char(v & 0xff));
            buf.push_back(char((v >> 8) & 0xff));
        }
    } else {
        throw FormatError("dtype code " + std::to_string(t.dtype) + " is not writable");
    }
    return buf;
}

TnsAny decode(const std::string& buf, const std::string& name) {
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (buf.size() < 8 || std::memcmp(p, "TNS1", 4) != 0)
        throw FormatError(name + ": bad magic (want \"TNS1\")");
    TnsAny t;
    t.dtype = p[4];
    if (t.dtype != kTnsF32 && t.dtype != kTnsU16)
        throw FormatError(name + ": bad dtype code " + std::to_string(t.dtype));
    const uint8_t rank = p[5];
    if (rank < 1 || rank > 5)
        throw FormatError(name + ": bad rank " + std::to_string(rank) + " (want 1..5)");
    if (p[6] != 0 || p[7] != 0) throw FormatError(name + ": reserved bytes not zero");
    if (buf.size() < 8 + size_t(rank) * 4) throw FormatError(name + ": truncated extent list");
    size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        uint32_t e = get_u32le(p + 8 + 4 * i);
        if (e == 0) throw FormatError(name + ": zero extent at axis " + std::to_string(i));
        t.shape.push_back(e);
        n *= e;
    }
    const size_t off = 8 + size_t(rank) * 4;
    const size_t want = n * (t.dtype == kTnsF32 ? 4 : 2);
    if (buf.size() - off != want)
        throw FormatError(name + ": payload is " + std::to_string(buf.size() - off) +
                          " bytes, extents require " + std::to_string(want));
    if (t.dtype == kTnsF32) {
        t.f32.resize(n);
        for (size_t i = 0; i < n; ++i)
            t.f32[i] = std::bit_cast<float>(get_u32le(p + off + 4 * i));
    } else {
        t.u16.resize(n);
        for (size_t i = 0; i < n; ++i) t.u16[i] = get_u16le(p + off + 2 * i);
    }
    return t;
}

}  // namespace

void save_tns(const TnsAny& t, const std::filesystem::path& path) {
    write_file(path, encode(t));
}

TnsAny load_tns(const std::filesystem::path& path) {
    return decode(read_file(path), path.filename().string());
}

void save_tensor(const Tensor& x, const std::filesystem::path& path) {
    TnsAny t;
    t.dtype = kTnsF32;
    t.shape = x.shape;
    t.f32 = x.data;
    save_tns(t, path);
}

Tensor load_tensor(const std::filesystem::path& path) {
    TnsAny t = load_tns(path);
    if (t.dtype != kTnsF32)
        throw FormatError(path.filename().string() + ": expected float32 tensor, dtype is " +
                          std::to_string(t.dtype));
    Tensor x;
    x.shape = t.shape;
    x.data = std::move(t.f32);
    return x;
}

void save_labelmap(const LabelMap& lm, const std::filesystem::path& path) {
    TnsAny t;
    t.dtype = kTnsU16;
    t.shape = {lm.h, lm.w};
    t.u16 = lm.data;
    save_tns(t, path);
}

LabelMap load_labelmap(const std::filesystem::path& path) {
    TnsAny t = load_tns(path);
    if (t.dtype != kTnsU16)
        throw FormatError(path.filename().string() + ": expected uint16 labels, dtype is " +
                          std::to_string(t.dtype));
    if (t.shape.size() != 2)
        throw FormatError(path.filename().string() + ": labels must be rank 2, got rank " +
                          std::to_string(t.shape.size()));
    LabelMap lm;
    lm.h = t.shape[0];
    lm.w = t.shape[1];
    lm.data = std::move(t.u16);
    return lm;
}

}  // namespace msfcn
