#include "aapt/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace aapt {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'A', 'P', 'T'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw FormatError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename F, typename U>
void write_elements(std::ostream& out, const Tensor& t) {
  for (Scalar s : t.values()) put_le<U>(out, std::bit_cast<U>(static_cast<F>(s)));
}

template <typename F, typename U>
void read_elements(std::istream& in, Tensor& t) {
  for (Scalar& s : t.values()) s = static_cast<Scalar>(std::bit_cast<F>(get_le<U>(in)));
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }

void write_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("unexpected end of file");
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kTensorFormatVersion);
  write_u32(out, kDoublePrecision ? 64 : 32);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.h, s.w, s.c}) write_u64(out, d);
  if (kDoublePrecision) {
    write_elements<double, std::uint64_t>(out, t);
  } else {
    write_elements<float, std::uint32_t>(out, t);
  }
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in) throw FormatError("tensor: unexpected end of file");
  if (magic != kMagic) throw FormatError("tensor: bad magic");
  const std::uint32_t version = read_u32(in);
  if (version != kTensorFormatVersion) {
    throw FormatError("tensor: unsupported version " + std::to_string(version));
  }
  const std::uint32_t precision = read_u32(in);
  if (precision != 32 && precision != 64) {
    throw FormatError("tensor: bad precision flag " + std::to_string(precision));
  }
  std::array<std::uint64_t, 4> d{};
  for (auto& v : d) v = read_u64(in);
  for (auto v : d) {
    if (v == 0 || v > kMaxElements) throw FormatError("tensor: bad dimension");
  }
  if (d[0] * d[1] > kMaxElements || d[0] * d[1] * d[2] > kMaxElements ||
      d[0] * d[1] * d[2] * d[3] > kMaxElements) {
    throw FormatError("tensor: too many elements");
  }
  Tensor t(Shape{d[0], d[1], d[2], d[3]});
  if (precision == 64) {
    read_elements<double, std::uint64_t>(in, t);
  } else {
    read_elements<float, std::uint32_t>(in, t);
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace aapt
