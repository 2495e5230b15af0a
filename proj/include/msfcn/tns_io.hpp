#pragma once

#include <filesystem>
#include <string>

#include "msfcn/tensor.hpp"

namespace msfcn {

// TNS container: "TNS1" magic, u8 dtype (1 = float32, 2 = uint16), u8 rank
// (1..5), two reserved zero bytes, rank little-endian u32 extents, then the
// row-major payload in little-endian. A (2,2) float32 tensor is exactly a
// 32-byte file: 8 header + 8 extents + 16 payload.
constexpr uint8_t kTnsF32 = 1;
constexpr uint8_t kTnsU16 = 2;

void save_tensor(const Tensor& x, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

// LabelMaps ride the same container as rank-2 uint16 tensors.
void save_labelmap(const LabelMap& lm, const std::filesystem::path& path);
LabelMap load_labelmap(const std::filesystem::path& path);

// Untyped view for callers that accept either dtype.
struct TnsAny {
    uint8_t dtype = 0;
    std::vector<uint32_t> shape;
    std::vector<float> f32;
    std::vector<uint16_t> u16;
};
TnsAny load_tns(const std::filesystem::path& path);
void save_tns(const TnsAny& t, const std::filesystem::path& path);

}  // namespace msfcn
