#pragma once

// Tensor blob, little-endian:
//   offset 0   char[4]  magic "AAPT"
//   offset 4   u32      format version (1)
//   offset 8   u32      precision flag: 32 or 64 (bits per element)
//   offset 12  u64 x 4  dims N, H, W, C
//   offset 44  element data, N*H*W*C IEEE-754 values in NHWC order

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "aapt/tensor.hpp"

namespace aapt {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
void write_bytes(std::ostream& out, const std::string& s);
std::string read_bytes(std::istream& in, std::size_t n);

}  // namespace aapt
